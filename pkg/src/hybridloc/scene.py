"""Geometry of the surfaces and users.

Every surface has a local frame in which its elements sit on the plane
x = 0 and its boresight is +x. A direction in that frame is written with
an azimuth ``theta`` and an elevation ``phi``::

    u(theta, phi) = (cos(phi) cos(theta), cos(phi) sin(theta), sin(phi))

so ``theta = phi = 0`` is the surface normal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DomainError, HalfSpaceViolation

SPEED_OF_LIGHT = 299_792_458.0


def wavelength_from_carrier(carrier_hz: float) -> float:
    if carrier_hz <= 0:
        raise DomainError(f"carrier frequency must be positive, got {carrier_hz}")
    return SPEED_OF_LIGHT / carrier_hz


class SphericalCoord(NamedTuple):
    """Range (m), azimuth and elevation (rad) of a point in a surface frame."""

    r: float
    theta: float
    phi: float


class RegionLabel(Enum):
    NEAR_FIELD = "NF"
    FAR_FIELD = "FF"


def rotation_from_euler(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Rotation matrix ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (angles in radians).

    The columns of the result are the local x (boresight), y and z axes
    expressed in global coordinates.
    """
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass(frozen=True, eq=False)
class RisPose:
    """Placement and layout of one planar surface.

    Parameters
    ----------
    origin : array_like, shape (3,)
        Global position of the surface center.
    orientation : array_like, shape (3, 3)
        Rotation taking local coordinates to global ones.
    n1, n2 : int
        Element rows (along local z) and columns (along local y).
    spacing : float
        Element pitch in meters.
    """

    origin: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    n1: int = 1
    n2: int = 1
    spacing: float = 0.5

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        rot = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(origin)):
            raise DomainError("surface origin must be finite")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or np.linalg.det(rot) <= 0:
            raise DomainError("orientation must be a proper rotation matrix")
        if int(self.n1) < 1 or int(self.n2) < 1:
            raise DomainError("element counts must be >= 1")
        if not self.spacing > 0:
            raise DomainError("element spacing must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "orientation", rot)
        object.__setattr__(self, "n1", int(self.n1))
        object.__setattr__(self, "n2", int(self.n2))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def num_elements(self) -> int:
        return self.n1 * self.n2

    @property
    def boresight(self) -> np.ndarray:
        return self.orientation[:, 0].copy()

    def aperture_diagonal(self) -> float:
        return float(np.hypot(self.n1 - 1, self.n2 - 1) * self.spacing)

    def to_local(self, point) -> np.ndarray:
        return self.orientation.T @ (np.asarray(point, dtype=float) - self.origin)

    def to_global(self, local) -> np.ndarray:
        return self.origin + self.orientation @ np.asarray(local, dtype=float)

    def key(self) -> str:
        """Stable digest of the pose, used to key dictionary caches."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.origin).tobytes())
        h.update(np.ascontiguousarray(self.orientation).tobytes())
        h.update(np.array([self.n1, self.n2], dtype=np.int64).tobytes())
        h.update(np.float64(self.spacing).tobytes())
        return h.hexdigest()


def direction(theta, phi) -> np.ndarray:
    """Unit vector(s) u(theta, phi); broadcasts, last axis has length 3."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cphi = np.cos(phi)
    return np.stack([cphi * np.cos(theta), cphi * np.sin(theta), np.sin(phi)], axis=-1)


def element_grid(pose: RisPose) -> np.ndarray:
    """Local element coordinates, shape (N, 3), column index varying fastest."""
    ys = (np.arange(pose.n2) - (pose.n2 - 1) / 2.0) * pose.spacing
    zs = (np.arange(pose.n1) - (pose.n1 - 1) / 2.0) * pose.spacing
    zz, yy = np.meshgrid(zs, ys, indexing="ij")
    grid = np.zeros((pose.num_elements, 3))
    grid[:, 1] = yy.ravel()
    grid[:, 2] = zz.ravel()
    return grid


def local_to_spherical(local) -> SphericalCoord:
    x, y, z = np.asarray(local, dtype=float)
    if not x > 0:
        raise HalfSpaceViolation(f"point at local x={x:.6g} is not in front of the surface")
    r = float(np.sqrt(x * x + y * y + z * z))
    return SphericalCoord(r, float(np.arctan2(y, x)), float(np.arcsin(z / r)))


def relative_spherical(user, pose: RisPose) -> SphericalCoord:
    """Range, azimuth and elevation of a global point seen from ``pose``.

    Raises
    ------
    HalfSpaceViolation
        If the point is behind or on the surface plane.
    """
    return local_to_spherical(pose.to_local(user))


def spherical_to_global(sph: SphericalCoord, pose: RisPose) -> np.ndarray:
    r, theta, phi = sph
    return pose.to_global(r * direction(theta, phi))


def fraunhofer_distance(pose: RisPose, wavelength: float) -> float:
    """Near/far boundary ``2 D**2 / wavelength`` with D the aperture diagonal."""
    if not wavelength > 0:
        raise DomainError("wavelength must be positive")
    d = pose.aperture_diagonal()
    return 2.0 * d * d / wavelength


def region_classify(sph: SphericalCoord, pose: RisPose, wavelength: float) -> RegionLabel:
    # the boundary itself counts as far field
    if sph.r < fraunhofer_distance(pose, wavelength):
        return RegionLabel.NEAR_FIELD
    return RegionLabel.FAR_FIELD


def in_front(point, pose: RisPose) -> bool:
    return bool(pose.to_local(point)[0] > 0)
