"""Fusion of per-surface estimates (points and rays) into one location."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .locator import LocalEstimate
from .scene import RisPose, direction, spherical_to_global

RIDGE = 1e-9


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(3)
        hi = np.asarray(self.upper, dtype=float).reshape(3)
        if not np.all(lo < hi):
            raise DomainError("box lower bounds must be strictly below upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def clip(self, p) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def corners(self) -> np.ndarray:
        return np.array([[(self.lower, self.upper)[b][i] for i, b in enumerate(bits)]
                         for bits in itertools.product((0, 1), repeat=3)])


@dataclass(frozen=True)
class NfPoint:
    point: np.ndarray


@dataclass(frozen=True)
class FfRay:
    anchor: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "direction", u / np.linalg.norm(u))


def nf_residual(p, c) -> float:
    return float(np.linalg.norm(np.asarray(p, dtype=float) - np.asarray(c, dtype=float)))


def ff_residual(p, anchor, u) -> float:
    """Distance from ``p`` to the line through ``anchor`` along unit ``u``."""
    return float(np.linalg.norm(np.cross(np.asarray(p, dtype=float) - anchor, u)))


def fusion_input(estimate: LocalEstimate, pose: RisPose):
    """Map a local estimate to a global point (near field) or ray (far field)."""
    if estimate.is_near:
        return NfPoint(spherical_to_global(estimate.params, pose))
    theta, phi = estimate.params
    return FfRay(pose.origin.copy(), pose.orientation @ direction(theta, phi))


def normal_equations(inputs, ridge: float = RIDGE):
    """Hessian half ``A`` and linear term ``b`` of the fusion objective.

    The objective is ``p.A.p - 2 b.p + const``; the ridge pulls toward the
    centroid of all points and anchors so parallel rays stay well posed.
    """
    if not inputs:
        raise DomainError("fusion needs at least one input")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    refs = []
    for item in inputs:
        if isinstance(item, NfPoint):
            A += np.eye(3)
            b += item.point
            refs.append(item.point)
        else:
            proj = np.eye(3) - np.outer(item.direction, item.direction)
            A += proj
            b += proj @ item.anchor
            refs.append(item.anchor)
    centroid = np.mean(refs, axis=0)
    A += ridge * np.eye(3)
    b += ridge * centroid
    return A, b


def objective(p, inputs) -> float:
    total = 0.0
    for item in inputs:
        if isinstance(item, NfPoint):
            total += nf_residual(p, item.point) ** 2
        else:
            total += ff_residual(p, item.anchor, item.direction) ** 2
    return total


def _quadratic(p, A, b) -> float:
    return float(p @ A @ p - 2 * b @ p)


def projected_gradient_residual(p, A, b, box: Box) -> float:
    grad = 2 * (A @ p - b)
    return float(np.linalg.norm(p - box.clip(p - grad)))


def fuse(inputs, box: Box, ridge: float = RIDGE) -> np.ndarray:
    """Minimize the summed squared point and ray distances over ``box``.

    The problem is a 3-variable convex QP, so every combination of free
    and bound-fixed coordinates is solved exactly and the best feasible
    candidate kept.
    """
    A, b = normal_equations(inputs, ridge)
    bounds = (box.lower, box.upper)
    best, best_val = None, np.inf
    for state in itertools.product((None, 0, 1), repeat=3):
        p = np.zeros(3)
        fixed = [i for i in range(3) if state[i] is not None]
        free = [i for i in range(3) if state[i] is None]
        for i in fixed:
            p[i] = bounds[state[i]][i]
        if free:
            rhs = b[free] - A[np.ix_(free, fixed)] @ p[fixed]
            p[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
            if not box.contains(p, tol=1e-12):
                continue
        val = _quadratic(p, A, b)
        if val < best_val:
            best, best_val = p, val
    return box.clip(best)
