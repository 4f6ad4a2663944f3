"""The transmit / localize / optimize cycle and Monte Carlo trials."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from .config import ScenarioConfig
from .errors import HalfSpaceViolation, HybridLocError
from .fusion import Box, fuse, fusion_input
from .locator import Dictionary, LocalEstimate, cached_dictionary, omp_localize
from .ris_opt import (
    RisContext,
    UserTarget,
    admm_optimize,
    crb_or_penalty,
    fim,
    select_ris,
    users_per_ris,
)
from .scene import RegionLabel, element_grid, in_front, region_classify, relative_spherical

log = logging.getLogger(__name__)

_DICTIONARIES: dict = {}


def dictionaries_for(cfg: ScenarioConfig, cache_dir=None) -> list[Dictionary]:
    """One dictionary per active surface, memoized for the process lifetime."""
    grid = replace(cfg.grid, include_near=not cfg.ff_only)
    out = []
    for pose in cfg.ris_poses:
        key = (pose.key(), grid, cfg.wavelength)
        if key not in _DICTIONARIES:
            _DICTIONARIES[key] = cached_dictionary(pose, grid, cfg.wavelength, cache_dir)
        out.append(_DICTIONARIES[key])
    return out


def clear_dictionary_memo() -> None:
    _DICTIONARIES.clear()


@dataclass
class World:
    """Per-trial static channel state."""

    grids: list
    scatterers: list
    user_channels: np.ndarray        # (K, M, N)
    ris_bs: list                     # M matrices (N, V)
    weights: np.ndarray              # (M, V)
    rows: np.ndarray                 # (M, M, N)
    inter_ris: list | None
    noise_variance: float
    other_angles: list               # per surface: [(theta, phi), ...]


def _draw_scatterers(cfg: ScenarioConfig, pose, rng, max_tries: int = 1000) -> np.ndarray:
    pts = []
    tries = 0
    while len(pts) < cfg.num_scatterers:
        tries += 1
        if tries > max_tries:
            raise HalfSpaceViolation("could not place scatterers in front of the surface")
        q = cfg.box_lower + rng.random(3) * (cfg.box_upper - cfg.box_lower)
        if in_front(q, pose) and not np.allclose(q, pose.origin):
            pts.append(q)
    return np.array(pts).reshape(-1, 3)


def build_world(cfg: ScenarioConfig, snr_db: float, rng) -> World:
    lam = cfg.wavelength
    poses = cfg.ris_poses
    grids = [element_grid(p) for p in poses]
    scat = [ch.ScattererSet(_draw_scatterers(cfg, p, rng), cfg.scatter_gain) for p in poses]
    user_channels = np.stack([
        np.stack([ch.user_ris_channel(u, p, s, lam, g) for p, s, g in zip(poses, scat, grids)])
        for u in cfg.users
    ])
    ris_bs = [ch.ris_bs_channel(p, cfg.bs_position, cfg.bs_array(), lam, cfg.nlos_power, rng, g)
              for p, g in zip(poses, grids)]
    weights = ch.bs_separation_weights(ris_bs)
    rows = ch.effective_rows(ris_bs, weights)
    inter = ch.inter_ris_channels(poses, lam) if cfg.inter_ris else None
    if np.isinf(snr_db):
        noise_variance = 0.0
    else:
        noise_variance = ch.noise_variance_for_snr(user_channels, rows, snr_db)
    angles = []
    for m, pm in enumerate(poses):
        seen = []
        for i, pi in enumerate(poses):
            if i == m:
                continue
            try:
                s = relative_spherical(pi.origin, pm)
            except HalfSpaceViolation:
                continue
            seen.append((s.theta, s.phi))
        angles.append(seen)
    return World(grids, scat, user_channels, ris_bs, weights, rows, inter, noise_variance, angles)


@dataclass
class CycleRecord:
    cycle: int
    samples: np.ndarray              # (K, M) received this cycle
    estimates: list                  # per user: list of LocalEstimate
    fused: np.ndarray                # (K, 3)
    selection: list | None           # used from the next cycle on
    next_phases: np.ndarray | None   # (M, N)
    crb: np.ndarray                  # (K,)
    phases: np.ndarray | None = None # (M, N) used this cycle


@dataclass
class TrialResult:
    seed: int
    fused: np.ndarray                # (C, K, 3)
    errors: np.ndarray               # (K,) final-cycle distances
    wall_clock: float
    records: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _fim_noise(world: World) -> float:
    if world.noise_variance > 0:
        return world.noise_variance
    # noiseless runs still need a finite Fisher scale; only ratios matter downstream
    return 1e-12 * ch.reference_power(world.user_channels, world.rows)


def _estimate_region(cfg: ScenarioConfig, location, pose) -> RegionLabel:
    if cfg.ff_only:
        return RegionLabel.FAR_FIELD
    return region_classify(relative_spherical(location, pose), pose, cfg.wavelength)


def _crb_for_user(cfg, world, location, chosen, histories) -> float:
    total = 0.0
    sigma2 = _fim_noise(world)
    for m in chosen:
        pose = cfg.ris_poses[m]
        try:
            region = _estimate_region(cfg, location, pose)
            J = fim(location, region, histories[m], world.rows[m, m], sigma2, cfg.wavelength, pose, world.grids[m])
        except HalfSpaceViolation:
            continue
        total += crb_or_penalty(J)
    return total


def run_protocol(cfg: ScenarioConfig, seed: int, snr_db: float | None = None,
                 cache_dir=None) -> list[CycleRecord]:
    """Run the full cycle protocol for one trial.

    Cycle 1 uses random phases and every surface for every user. Each
    later cycle localizes with the surfaces selected at the end of the
    previous one; the last cycle skips the optimization step.
    """
    snr_db = cfg.snr_db[0] if snr_db is None else snr_db
    rng = np.random.default_rng(seed)
    world = build_world(cfg, snr_db, rng)
    dicts = dictionaries_for(cfg, cache_dir)
    m_count, k_count = cfg.num_ris, cfg.num_users
    n_el = [p.num_elements for p in cfg.ris_poses]
    if len(set(n_el)) != 1:
        raise HybridLocError("all surfaces must have the same element count")
    box = Box(cfg.box_lower, cfg.box_upper)
    sparsity = cfg.num_scatterers + 1

    phases = ch.random_phases(rng, (m_count, n_el[0]))
    histories = [np.zeros((n_el[0], 0), dtype=complex) for _ in range(m_count)]
    sensing = [np.zeros((0, d.size), dtype=complex) for d in dicts]
    col_norm2 = [np.zeros(d.size) for d in dicts]
    received = np.zeros((k_count, m_count, 0), dtype=complex)
    selection = [tuple(range(m_count)) for _ in range(k_count)]
    records = []

    for c in range(1, cfg.cycles + 1):
        g = ch.synthesize_received(world.user_channels, world.rows, phases,
                                   world.noise_variance, rng, world.inter_ris)
        received = np.concatenate([received, g[:, :, None]], axis=2)
        for m in range(m_count):
            histories[m] = np.column_stack([histories[m], phases[m]])
            row = (phases[m] * world.rows[m, m]) @ dicts[m].atoms
            sensing[m] = np.vstack([sensing[m], row])
            col_norm2[m] += np.abs(row) ** 2

        estimates, fused = [], np.zeros((k_count, 3))
        for k in range(k_count):
            local: list[LocalEstimate] = []
            for m in selection[k]:
                local.append(omp_localize(received[k, m], sensing[m], sparsity, dicts[m],
                                          ris_id=m, col_norms=np.sqrt(col_norm2[m])))
            estimates.append(local)
            fused[k] = fuse([fusion_input(e, cfg.ris_poses[e.ris_id]) for e in local], box)
        crb = np.array([_crb_for_user(cfg, world, fused[k], selection[k], histories)
                        for k in range(k_count)])

        next_sel, next_phases = None, None
        if c < cfg.cycles:
            next_sel = select_ris(fused, [p.origin for p in cfg.ris_poses], cfg.l_sel)
            if cfg.optimize_phases:
                start = phases if cfg.warm_start else ch.random_phases(rng, phases.shape)
                next_phases = _optimize_all(cfg, world, fused, next_sel, histories, start)
            else:
                next_phases = ch.random_phases(rng, phases.shape)
        records.append(CycleRecord(c, g, estimates, fused, next_sel, next_phases, crb, phases.copy()))
        if c < cfg.cycles:
            selection, phases = next_sel, next_phases
    return records


def _optimize_all(cfg, world, fused, selection, histories, phases) -> np.ndarray:
    served = users_per_ris(selection, cfg.num_ris)
    sigma2 = _fim_noise(world)
    out = phases.copy()
    for m, pose in enumerate(cfg.ris_poses):
        targets = []
        for k in served[m]:
            if not in_front(fused[k], pose):
                continue
            targets.append(UserTarget(fused[k], _estimate_region(cfg, fused[k], pose)))
        if not targets and not world.other_angles[m]:
            continue
        ctx = RisContext(pose, cfg.wavelength, world.rows[m, m], sigma2, phases[m],
                         targets, world.other_angles[m], histories[m])
        out[m] = admm_optimize(ctx, cfg.solver).beta
    return out


def run_trial(cfg: ScenarioConfig, seed: int, snr_db: float | None = None,
              keep_records: bool = False, cache_dir=None) -> TrialResult:
    """One protocol run; failures are captured instead of raised."""
    start = time.perf_counter()
    try:
        records = run_protocol(cfg, seed, snr_db, cache_dir)
    except (HybridLocError, np.linalg.LinAlgError) as exc:
        log.warning("trial with seed %d aborted: %s", seed, exc)
        nan = np.full((0, cfg.num_users, 3), np.nan)
        return TrialResult(seed, nan, np.full(cfg.num_users, np.nan),
                           time.perf_counter() - start, [], f"{type(exc).__name__}: {exc}")
    fused = np.stack([r.fused for r in records])
    errors = np.linalg.norm(fused[-1] - cfg.users, axis=1)
    return TrialResult(seed, fused, errors, time.perf_counter() - start,
                       records if keep_records else [records[-1]])


def rmse(trials, true_locations) -> float:
    """Root mean square final-cycle error over all trials and users."""
    true_locations = np.atleast_2d(np.asarray(true_locations, dtype=float))
    sq = []
    for t in trials:
        if not t.ok:
            continue
        final = t.fused[-1]
        sq.extend(np.sum((final - true_locations) ** 2, axis=1))
    if not sq:
        raise ValueError("no successful trials to aggregate")
    return float(np.sqrt(np.mean(sq)))


SWEEP_AXES = ("snr", "cycles", "num_ris")


@dataclass
class SweepRow:
    value: float
    rmse: float
    mean_crb: float
    trials: int
    seed: int
    failures: int = 0


def config_for(cfg: ScenarioConfig, axis: str, value) -> tuple[ScenarioConfig, float]:
    """Scenario and SNR for one point of a sweep."""
    if axis == "snr":
        return cfg, float(value)
    if axis == "cycles":
        return replace(cfg, cycles=int(value)), cfg.snr_db[0]
    if axis == "num_ris":
        return cfg.with_num_ris(int(value)), cfg.snr_db[0]
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_batch(cfg: ScenarioConfig, snr_db: float | None = None, trials: int | None = None,
              seed: int | None = None, keep_records: bool = False, cache_dir=None) -> list[TrialResult]:
    """``trials`` independent runs; trial ``t`` is seeded with ``seed + t``."""
    trials = cfg.trials if trials is None else trials
    seed = cfg.seed if seed is None else seed
    return [run_trial(cfg, seed + t, snr_db, keep_records, cache_dir) for t in range(trials)]


def summarize(trials, true_locations) -> tuple[float, float, int]:
    """RMSE, mean final-cycle CRB and failure count of a batch."""
    ok = [t for t in trials if t.ok]
    crbs = [float(np.mean(t.records[-1].crb)) for t in ok if t.records]
    err = rmse(ok, true_locations) if ok else float("nan")
    return err, float(np.mean(crbs)) if crbs else float("nan"), len(trials) - len(ok)


def sweep(cfg: ScenarioConfig, axis: str, values, trials: int | None = None,
          seed: int | None = None, cache_dir=None, progress=None) -> list[SweepRow]:
    """RMSE and mean CRB at each value of one axis.

    Every value reuses the same trial seeds, so differences between
    points are not masked by independent Monte Carlo draws.
    """
    axis = axis.replace("-", "_")
    trials = cfg.trials if trials is None else trials
    seed = cfg.seed if seed is None else seed
    rows = []
    for value in values:
        point_cfg, snr = config_for(cfg, axis, value)
        batch = run_batch(point_cfg, snr, trials, seed, cache_dir=cache_dir)
        err, crb, failed = summarize(batch, point_cfg.users)
        rows.append(SweepRow(float(value), err, crb, trials, seed, failed))
        if progress is not None:
            progress(rows[-1])
    return rows
