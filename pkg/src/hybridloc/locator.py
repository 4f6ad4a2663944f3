"""Per-surface localization: hybrid near/far dictionary and OMP."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ff_steering, nf_steering
from .errors import EmptyDictionary, NoSignal, ShapeError
from .scene import RegionLabel, RisPose, SphericalCoord, element_grid, fraunhofer_distance

CACHE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Sampling of the search space seen from one surface.

    Ranges are uniform in ``1/r`` between ``r_min`` and ``r_max``; left as
    ``None`` they default to twice the aperture diagonal and the
    Fraunhofer distance. Angles are in radians.
    """

    n_r: int = 8
    theta_step: float = np.deg2rad(2.0)
    phi_step: float = np.deg2rad(2.0)
    theta_range: tuple = (np.deg2rad(-60.0), np.deg2rad(60.0))
    phi_range: tuple = (np.deg2rad(-30.0), np.deg2rad(30.0))
    r_min: float | None = None
    r_max: float | None = None
    include_near: bool = True

    def thetas(self) -> np.ndarray:
        return _angle_axis(self.theta_range, self.theta_step)

    def phis(self) -> np.ndarray:
        return _angle_axis(self.phi_range, self.phi_step)

    def ranges(self, pose: RisPose, wavelength: float) -> np.ndarray:
        if not self.include_near or self.n_r < 1:
            return np.zeros(0)
        r_max = fraunhofer_distance(pose, wavelength) if self.r_max is None else self.r_max
        r_min = 2 * pose.aperture_diagonal() if self.r_min is None else self.r_min
        if not (r_min > 0 and r_max > r_min):
            return np.zeros(0)
        # bin centers in inverse range, so no sample lands on the boundary
        inv = 1 / r_max + (np.arange(self.n_r) + 0.5) * (1 / r_min - 1 / r_max) / self.n_r
        return np.sort(1 / inv)

    def as_dict(self) -> dict:
        return {
            "n_r": int(self.n_r),
            "theta_step": float(self.theta_step),
            "phi_step": float(self.phi_step),
            "theta_range": [float(x) for x in self.theta_range],
            "phi_range": [float(x) for x in self.phi_range],
            "r_min": None if self.r_min is None else float(self.r_min),
            "r_max": None if self.r_max is None else float(self.r_max),
            "include_near": bool(self.include_near),
        }


def _angle_axis(bounds, step) -> np.ndarray:
    lo, hi = bounds
    if not step > 0 or hi < lo:
        return np.zeros(0)
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm atoms: ``s1`` near-field columns first, then ``s2`` far-field ones.

    ``nf_params`` rows are (r, theta, phi); ``ff_params`` rows are (theta, phi).
    """

    atoms: np.ndarray
    nf_params: np.ndarray
    ff_params: np.ndarray

    @property
    def s1(self) -> int:
        return len(self.nf_params)

    @property
    def s2(self) -> int:
        return len(self.ff_params)

    @property
    def size(self) -> int:
        return self.s1 + self.s2

    def label(self, index: int):
        """Region and parameters of atom ``index``."""
        if index < self.s1:
            r, th, ph = self.nf_params[index]
            return RegionLabel.NEAR_FIELD, SphericalCoord(float(r), float(th), float(ph))
        th, ph = self.ff_params[index - self.s1]
        return RegionLabel.FAR_FIELD, (float(th), float(ph))


def build_dictionary(pose: RisPose, grid: GridSpec, wavelength: float) -> Dictionary:
    elements = element_grid(pose)
    thetas, phis = grid.thetas(), grid.phis()
    th, ph = (a.ravel() for a in np.meshgrid(thetas, phis, indexing="ij"))
    ranges = grid.ranges(pose, wavelength)
    if len(th) == 0:
        raise EmptyDictionary("angular grid is empty")

    rr, th_n, ph_n = (a.ravel() for a in np.meshgrid(ranges, thetas, phis, indexing="ij"))
    nf_params = np.column_stack([rr, th_n, ph_n]) if len(rr) else np.zeros((0, 3))
    ff_params = np.column_stack([th, ph])

    n = len(elements)
    atoms = np.empty((n, len(nf_params) + len(ff_params)), dtype=complex)
    for j, (r, t, p) in enumerate(nf_params):
        atoms[:, j] = nf_steering(SphericalCoord(r, t, p), elements, wavelength)
    s1 = len(nf_params)
    for j, (t, p) in enumerate(ff_params):
        atoms[:, s1 + j] = ff_steering(t, p, elements, wavelength)
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    if atoms.shape[1] == 0:
        raise EmptyDictionary("grid produced no atoms")
    return Dictionary(atoms, nf_params, ff_params)


def dictionary_key(pose: RisPose, grid: GridSpec, wavelength: float) -> str:
    h = hashlib.sha256()
    h.update(pose.key().encode())
    h.update(json.dumps(grid.as_dict(), sort_keys=True).encode())
    h.update(np.float64(wavelength).tobytes())
    return h.hexdigest()


def save_dictionary(path, dictionary: Dictionary, key: str = "") -> None:
    """Write a dictionary to an ``.npz`` cache file with a versioned header."""
    header = json.dumps({"format": "hybridloc-dictionary", "version": CACHE_FORMAT_VERSION, "key": key})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(header), atoms=dictionary.atoms,
                 nf_params=dictionary.nf_params, ff_params=dictionary.ff_params)


def load_dictionary(path, key: str | None = None) -> Dictionary | None:
    """Read a cache file; ``None`` if the header or key does not match."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "hybridloc-dictionary" or header.get("version") != CACHE_FORMAT_VERSION:
            return None
        if key is not None and header.get("key") != key:
            return None
        return Dictionary(data["atoms"], data["nf_params"], data["ff_params"])


def cached_dictionary(pose: RisPose, grid: GridSpec, wavelength: float, cache_dir=None) -> Dictionary:
    key = dictionary_key(pose, grid, wavelength)
    if cache_dir is not None:
        path = Path(cache_dir) / f"dict-{key[:24]}.npz"
        if path.exists():
            found = load_dictionary(path, key)
            if found is not None:
                return found
        d = build_dictionary(pose, grid, wavelength)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dictionary(path, d, key)
        return d
    return build_dictionary(pose, grid, wavelength)


def effective_sensing_matrix(dictionary: Dictionary | np.ndarray, phase_history, weights_row, h_ris_bs) -> np.ndarray:
    """``A = B.T @ diag(w @ H.T) @ F`` with B of shape (N, c)."""
    atoms = dictionary.atoms if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    b = np.asarray(phase_history)
    if b.ndim == 1:
        b = b[:, None]
    h = np.asarray(h_ris_bs)
    w = np.asarray(weights_row)
    n = atoms.shape[0]
    if b.shape[0] != n or h.shape[0] != n or h.shape[1] != w.shape[-1]:
        raise ShapeError(
            f"inconsistent shapes: atoms {atoms.shape}, history {b.shape}, H {h.shape}, w {w.shape}"
        )
    row = w @ h.T
    return (b.T * row[None, :]) @ atoms


@dataclass
class LocalEstimate:
    ris_id: int
    region: RegionLabel
    params: tuple
    coefficient: complex
    support: tuple = field(default_factory=tuple)
    residual_norm: float = 0.0

    @property
    def is_near(self) -> bool:
        return self.region is RegionLabel.NEAR_FIELD


def omp(g, A, sparsity: int, col_norms=None):
    """Orthogonal matching pursuit.

    Returns
    -------
    support : list of int
        Selected column indices in selection order.
    coef : ndarray
        Least-squares coefficients on ``support``.
    residual_norms : list of float
        Residual norm before the first and after every iteration.
    """
    g = np.asarray(g, dtype=complex).ravel()
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != g.shape[0]:
        raise ShapeError(f"observation length {g.shape[0]} does not match A {A.shape}")
    if not np.any(g):
        raise NoSignal("observation vector is all zeros")
    if sparsity < 1:
        raise ValueError("sparsity must be >= 1")
    if col_norms is None:
        col_norms = np.linalg.norm(A, axis=0)
    inv_norms = np.zeros_like(col_norms)
    np.divide(1.0, col_norms, out=inv_norms, where=col_norms > 0)

    support: list[int] = []
    residual = g.copy()
    coef = np.zeros(0, dtype=complex)
    norms = [float(np.linalg.norm(residual))]
    for _ in range(min(sparsity, A.shape[1])):
        score = np.abs(A.conj().T @ residual) * inv_norms
        score[support] = -1.0
        j = int(np.argmax(score))
        support.append(j)
        sub = A[:, support]
        coef = np.linalg.lstsq(sub, g, rcond=None)[0]
        residual = g - sub @ coef
        norms.append(float(np.linalg.norm(residual)))
    return support, coef, norms


def omp_localize(g, A, sparsity: int, dictionary: Dictionary, ris_id: int = 0, col_norms=None) -> LocalEstimate:
    """Recover the sparse atom amplitudes and read off the strongest atom.

    The winning atom is the support element with the largest coefficient
    magnitude; ties go to the lower column index.
    """
    support, coef, norms = omp(g, A, sparsity, col_norms)
    mags = np.abs(coef)
    best = max(range(len(support)), key=lambda i: (mags[i], -support[i]))
    region, params = dictionary.label(support[best])
    return LocalEstimate(
        ris_id=ris_id,
        region=region,
        params=tuple(params),
        coefficient=complex(coef[best]),
        support=tuple(support),
        residual_norm=norms[-1],
    )
