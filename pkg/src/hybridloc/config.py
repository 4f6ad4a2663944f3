"""Scenario configuration: TOML ingestion and validation.

Lengths are in meters, angles in degrees in the file (radians in
memory), frequencies in Hz. See ``configs/desk.toml`` for a complete
example.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .locator import GridSpec
from .ris_opt import AdmmSettings
from .scene import RisPose, element_grid, rotation_from_euler, wavelength_from_carrier


@dataclass(frozen=True)
class ScenarioConfig:
    carrier_hz: float
    bs_position: np.ndarray
    bs_pose: RisPose                 # the BS array reuses the planar layout
    ris_pool: tuple                  # every configured surface, in sweep order
    users: np.ndarray                # (K, 3)
    box_lower: np.ndarray
    box_upper: np.ndarray
    grid: GridSpec = field(default_factory=GridSpec)
    solver: AdmmSettings = field(default_factory=AdmmSettings)
    num_scatterers: int = 1
    scatter_gain: float = 0.3
    nlos_power: float = 0.0
    l_sel: int = 2
    cycles: int = 10
    trials: int = 50
    snr_db: tuple = (10.0,)
    seed: int = 0
    inter_ris: bool = False
    ff_only: bool = False
    optimize_phases: bool = True
    warm_start: bool = False         # start ADMM from the previous phases instead of fresh ones
    active_ris: int | None = None    # None -> the whole pool

    def __post_init__(self):
        validate(self)

    @property
    def wavelength(self) -> float:
        return wavelength_from_carrier(self.carrier_hz)

    @property
    def ris_poses(self) -> tuple:
        n = len(self.ris_pool) if self.active_ris is None else self.active_ris
        return self.ris_pool[:n]

    @property
    def num_ris(self) -> int:
        return len(self.ris_poses)

    @property
    def num_users(self) -> int:
        return len(self.users)

    def bs_array(self) -> np.ndarray:
        """BS antenna offsets in global coordinates, shape (V, 3)."""
        return element_grid(self.bs_pose) @ self.bs_pose.orientation.T

    def with_num_ris(self, m: int) -> "ScenarioConfig":
        """First ``m`` surfaces, keeping half of them selected per user."""
        if not 1 <= m <= len(self.ris_pool):
            raise ConfigError(f"cannot take {m} of {len(self.ris_pool)} surfaces")
        return replace(self, active_ris=m, l_sel=math.ceil(0.5 * m))

    def with_users(self, index) -> "ScenarioConfig":
        return replace(self, users=np.atleast_2d(self.users[index]))


def validate(cfg: ScenarioConfig) -> None:
    if cfg.cycles < 1:
        raise ConfigError("cycles must be >= 1")
    if cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    if cfg.num_users < 1:
        raise ConfigError("at least one user is required")
    if cfg.active_ris is not None and not 1 <= cfg.active_ris <= len(cfg.ris_pool):
        raise ConfigError(f"num_ris must lie in [1, {len(cfg.ris_pool)}]")
    if cfg.num_ris < 1:
        raise ConfigError("at least one surface is required")
    if not 1 <= cfg.l_sel <= cfg.num_ris:
        raise ConfigError(f"selection size {cfg.l_sel} must lie in [1, {cfg.num_ris}]")
    if cfg.num_scatterers < 0:
        raise ConfigError("num_scatterers must be >= 0")
    if not 0 <= cfg.scatter_gain < 1:
        raise ConfigError("scatter_gain must lie in [0, 1)")
    if not len(cfg.snr_db):
        raise ConfigError("snr_db must list at least one value")
    if not np.all(cfg.box_lower < cfg.box_upper):
        raise ConfigError("box lower corner must be below the upper corner")
    for k, u in enumerate(cfg.users):
        if np.any(u < cfg.box_lower) or np.any(u > cfg.box_upper):
            raise ConfigError(f"user {k} lies outside the search box")
    if cfg.bs_pose.num_elements < cfg.num_ris:
        raise ConfigError("the BS needs at least as many antennas as surfaces")


def _pose(section: dict, wavelength: float, where: str) -> RisPose:
    try:
        origin = section["position"]
    except KeyError:
        raise ConfigError(f"{where}: missing 'position'") from None
    rot = rotation_from_euler(*(np.deg2rad(section.get(k, 0.0)) for k in ("yaw_deg", "pitch_deg", "roll_deg")))
    if "spacing_m" in section:
        spacing = float(section["spacing_m"])
    else:
        spacing = float(section.get("spacing_wavelengths", 0.5)) * wavelength
    n1 = section.get("n1", section.get("rows", 16))
    n2 = section.get("n2", section.get("cols", 16))
    return RisPose(origin, rot, n1, n2, spacing)


def _grid(section: dict) -> GridSpec:
    base = GridSpec()
    kw = {}
    if "n_r" in section:
        kw["n_r"] = int(section["n_r"])
    if "theta_step_deg" in section:
        kw["theta_step"] = np.deg2rad(section["theta_step_deg"])
    if "phi_step_deg" in section:
        kw["phi_step"] = np.deg2rad(section["phi_step_deg"])
    if "theta_range_deg" in section:
        kw["theta_range"] = tuple(np.deg2rad(section["theta_range_deg"]))
    if "phi_range_deg" in section:
        kw["phi_range"] = tuple(np.deg2rad(section["phi_range_deg"]))
    if "r_min_m" in section:
        kw["r_min"] = float(section["r_min_m"])
    if "r_max_m" in section:
        kw["r_max"] = float(section["r_max_m"])
    return replace(base, **kw)


def _solver(section: dict) -> AdmmSettings:
    names = {f.name for f in dataclasses.fields(AdmmSettings)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    return AdmmSettings(**section)


def config_from_dict(raw: dict) -> ScenarioConfig:
    try:
        carrier = float(raw.get("carrier", {}).get("frequency_hz", 28e9))
        wavelength = wavelength_from_carrier(carrier)
        bs = raw["bs"]
        ris = raw["ris"]
        users = np.array([u["position"] for u in raw["users"]], dtype=float)
        box = raw["box"]
    except KeyError as exc:
        raise ConfigError(f"missing section {exc}") from None
    bs_pose = _pose({**{"n1": 4, "n2": 4}, **bs}, wavelength, "bs")
    channel = raw.get("channel", {})
    proto = raw.get("protocol", {})
    snr = proto.get("snr_db", [10.0])
    snr = tuple(float(x) for x in (snr if isinstance(snr, list) else [snr]))
    return ScenarioConfig(
        carrier_hz=carrier,
        bs_position=np.asarray(bs["position"], dtype=float),
        bs_pose=bs_pose,
        ris_pool=tuple(_pose(r, wavelength, f"ris[{i}]") for i, r in enumerate(ris)),
        active_ris=proto.get("num_ris"),
        users=users,
        box_lower=np.asarray(box["lower"], dtype=float),
        box_upper=np.asarray(box["upper"], dtype=float),
        grid=_grid(raw.get("grid", {})),
        solver=_solver(raw.get("solver", {})),
        num_scatterers=int(channel.get("num_scatterers", 1)),
        scatter_gain=float(channel.get("scatter_gain", 0.3)),
        nlos_power=float(channel.get("nlos_power", 0.0)),
        inter_ris=bool(channel.get("inter_ris", False)),
        l_sel=int(proto.get("select", 2)),
        cycles=int(proto.get("cycles", 10)),
        trials=int(proto.get("trials", 50)),
        snr_db=snr,
        seed=int(raw.get("seed", 0)),
        ff_only=bool(proto.get("ff_only", False)),
        optimize_phases=bool(proto.get("optimize_phases", True)),
        warm_start=bool(proto.get("warm_start", False)),
    )


def load_config(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


def default_config_path() -> Path:
    return Path(__file__).parent / "configs" / "desk.toml"


def desk_config() -> ScenarioConfig:
    return load_config(default_config_path())
