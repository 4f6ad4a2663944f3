"""Steering vectors, path gains and the cascaded user-surface-BS channel.

Phase convention: a point source at distance ``d`` from an element
contributes ``exp(-1j * 2*pi/lambda * d)``. Expanding ``d`` for a distant
source at direction ``u`` gives ``d ~ r - p.u``, so the plane-wave
response is ``exp(+1j * 2*pi/lambda * p.u)`` up to the common phase
``exp(-1j * 2*pi/lambda * r)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, HalfSpaceViolation, SeparationInfeasible
from .scene import (
    RegionLabel,
    RisPose,
    SphericalCoord,
    direction,
    element_grid,
    region_classify,
    relative_spherical,
)


@dataclass(frozen=True)
class ScattererSet:
    locations: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    gain_scale: float = 0.3

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "locations", locs)

    def __len__(self):
        return len(self.locations)


def nf_steering(sph: SphericalCoord, grid, wavelength: float) -> np.ndarray:
    """Spherical-wave response of the elements in ``grid`` to a point source."""
    r, theta, phi = sph
    src = r * direction(theta, phi)
    dist = np.linalg.norm(src[None, :] - np.asarray(grid), axis=1)
    return np.exp(-2j * np.pi / wavelength * dist)


def ff_steering(theta, phi, grid, wavelength: float) -> np.ndarray:
    """Plane-wave response toward direction ``(theta, phi)``."""
    proj = np.asarray(grid) @ direction(theta, phi)
    return np.exp(2j * np.pi / wavelength * proj)


def path_gain(r: float, wavelength: float) -> complex:
    """Free-space amplitude ``lambda / (4 pi r)`` with the carrier phase."""
    if not r > 0:
        raise DomainError(f"path length must be positive, got {r}")
    return wavelength / (4 * np.pi * r) * np.exp(-2j * np.pi * r / wavelength)


def steering_for(sph: SphericalCoord, region: RegionLabel, grid, wavelength: float) -> np.ndarray:
    if region is RegionLabel.NEAR_FIELD:
        return nf_steering(sph, grid, wavelength)
    return ff_steering(sph.theta, sph.phi, grid, wavelength)


def user_ris_channel(user, pose: RisPose, scat: ScattererSet, wavelength: float, grid=None) -> np.ndarray:
    """Direct path plus single-bounce scatter paths arriving at a surface.

    Each path uses the steering model (near or far) that matches the
    emitting point's own distance to the surface.
    """
    if grid is None:
        grid = element_grid(pose)
    user = np.asarray(user, dtype=float)
    sph = relative_spherical(user, pose)
    h = path_gain(sph.r, wavelength) * steering_for(
        sph, region_classify(sph, pose, wavelength), grid, wavelength
    )
    for q in scat.locations:
        if scat.gain_scale == 0:
            break
        sq = relative_spherical(q, pose)
        amp = scat.gain_scale * path_gain(np.linalg.norm(user - q), wavelength) * path_gain(sq.r, wavelength)
        h = h + amp * steering_for(sq, region_classify(sq, pose, wavelength), grid, wavelength)
    return h


def array_response(offsets, toward, wavelength: float) -> np.ndarray:
    """Plane-wave response of an arbitrary array toward a global unit vector."""
    return np.exp(2j * np.pi / wavelength * (np.asarray(offsets) @ np.asarray(toward)))


def ris_bs_channel(pose: RisPose, bs_position, bs_array, wavelength: float,
                   nlos_power: float = 0.0, rng=None, grid=None) -> np.ndarray:
    """Surface-to-BS channel matrix of shape (N, V).

    Line-of-sight outer product of the two plane-wave responses, plus an
    optional i.i.d. complex Gaussian floor with total expected power
    ``nlos_power``.

    Parameters
    ----------
    bs_array : array_like, shape (V, 3)
        BS antenna offsets from ``bs_position`` in global coordinates.
    rng : numpy.random.Generator, optional
        Required when ``nlos_power > 0``.
    """
    if grid is None:
        grid = element_grid(pose)
    bs_position = np.asarray(bs_position, dtype=float)
    bs_array = np.asarray(bs_array, dtype=float).reshape(-1, 3)
    sph = relative_spherical(bs_position, pose)
    a_ris = ff_steering(sph.theta, sph.phi, grid, wavelength)
    toward_ris = (pose.origin - bs_position) / sph.r
    a_bs = array_response(bs_array, toward_ris, wavelength)
    h = path_gain(sph.r, wavelength) * np.outer(a_ris, a_bs)
    if nlos_power < 0:
        raise DomainError("nlos_power must be non-negative")
    if nlos_power > 0:
        n, v = h.shape
        g = (rng.standard_normal((n, v)) + 1j * rng.standard_normal((n, v))) / np.sqrt(2 * n * v)
        h = h + np.sqrt(nlos_power) * g
    return h


def dominant_bs_direction(h: np.ndarray) -> np.ndarray:
    """Dominant left singular vector of ``H.T`` (the BS-side signature)."""
    u, _, _ = np.linalg.svd(h.T, full_matrices=False)
    return u[:, 0]


def bs_separation_weights(channels, max_condition: float = 1e8) -> np.ndarray:
    """Zero-forcing combiners isolating each surface at the BS.

    Returns
    -------
    ndarray, shape (M, V)
        Row ``m`` satisfies ``w_m @ u_i == (m == i)`` for the dominant
        BS-side directions ``u_i``.
    """
    dirs = np.stack([dominant_bs_direction(np.asarray(h)) for h in channels], axis=1)
    v, m = dirs.shape
    if m > v:
        raise SeparationInfeasible(f"{m} surfaces cannot be separated with {v} antennas")
    cond = np.linalg.cond(dirs)
    if not np.isfinite(cond) or cond > max_condition:
        raise SeparationInfeasible(f"BS-side directions are nearly collinear (cond={cond:.3g})")
    return np.linalg.pinv(dirs)


def effective_rows(channels, weights) -> np.ndarray:
    """``E[m, i] = w_m @ H_i.T``, shape (M, M, N)."""
    return np.stack([np.stack([w @ np.asarray(h).T for h in channels]) for w in weights])


def inter_ris_channel(pose_to: RisPose, pose_from: RisPose, wavelength: float,
                      grid_to=None, grid_from=None):
    """Rank-one plane-wave channel from surface ``pose_from`` to ``pose_to``.

    Returns ``None`` when either surface lies behind the other, since no
    reflection path exists then.
    """
    grid_to = element_grid(pose_to) if grid_to is None else grid_to
    grid_from = element_grid(pose_from) if grid_from is None else grid_from
    try:
        s_to = relative_spherical(pose_from.origin, pose_to)
        s_from = relative_spherical(pose_to.origin, pose_from)
    except HalfSpaceViolation:
        return None
    a_to = ff_steering(s_to.theta, s_to.phi, grid_to, wavelength)
    a_from = ff_steering(s_from.theta, s_from.phi, grid_from, wavelength)
    return path_gain(s_to.r, wavelength) * np.outer(a_to, a_from)


def inter_ris_channels(poses, wavelength: float) -> list:
    """Nested list ``G[m][i]`` of surface-to-surface channels (``None`` on the diagonal)."""
    grids = [element_grid(p) for p in poses]
    return [
        [None if i == m else inter_ris_channel(poses[m], poses[i], wavelength, grids[m], grids[i])
         for i in range(len(poses))]
        for m in range(len(poses))
    ]


def noiseless_received(user_channels, rows, phase_shifts, inter_ris=None) -> np.ndarray:
    """Noise-free beamformed samples, shape (K, M).

    Parameters
    ----------
    user_channels : ndarray, shape (K, M, N)
        User-to-surface channels ``h_km``.
    rows : ndarray, shape (M, M, N)
        Effective rows from :func:`effective_rows`.
    phase_shifts : ndarray, shape (M, N)
    inter_ris : nested list, optional
        Output of :func:`inter_ris_channels`; enables double-bounce leakage.
    """
    user_channels = np.asarray(user_channels)
    phase_shifts = np.asarray(phase_shifts)
    reflected = user_channels * phase_shifts[None, :, :]          # beta_i * h_ki
    g = np.einsum("min,kin->km", rows, reflected)
    if inter_ris is not None:
        m_count = phase_shifts.shape[0]
        for m in range(m_count):
            lead = rows[m, m] * phase_shifts[m]
            for i in range(m_count):
                gmi = inter_ris[m][i]
                if gmi is None:
                    continue
                g[:, m] += (gmi @ reflected[:, i, :].T).T @ lead
    return g


def leakage_terms(user_channels, rows, phase_shifts, inter_ris) -> np.ndarray:
    """Double-bounce part of the samples alone, shape (K, M)."""
    return (noiseless_received(user_channels, rows, phase_shifts, inter_ris)
            - noiseless_received(user_channels, rows, phase_shifts))


def synthesize_received(user_channels, rows, phase_shifts, noise_variance: float, rng,
                        inter_ris=None) -> np.ndarray:
    """Beamformed samples with circular complex Gaussian noise, shape (K, M).

    The pilot symbol is fixed to 1, so each sample is the cascaded channel
    response plus noise of variance ``noise_variance``.
    """
    g = noiseless_received(user_channels, rows, phase_shifts, inter_ris)
    if noise_variance < 0:
        raise DomainError("noise variance must be non-negative")
    noise = np.sqrt(noise_variance / 2) * (
        rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    )
    return g + noise


def random_phases(rng, shape) -> np.ndarray:
    return np.exp(2j * np.pi * rng.random(shape))


def reference_power(user_channels, rows) -> float:
    """Mean sample power over all (user, surface) pairs under random phases.

    For independent uniform phases ``E|sum_n e_n beta_n h_n|^2`` equals
    ``sum_n |e_n h_n|^2``.
    """
    user_channels = np.asarray(user_channels)
    own = np.stack([rows[m, m] for m in range(rows.shape[0])])   # (M, N)
    return float(np.mean(np.sum(np.abs(own[None] * user_channels) ** 2, axis=-1)))


def noise_variance_for_snr(user_channels, rows, snr_db: float) -> float:
    return reference_power(user_channels, rows) / 10 ** (snr_db / 10)
