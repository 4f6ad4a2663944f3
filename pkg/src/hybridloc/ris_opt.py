"""Surface selection, Fisher information, and ADMM phase-shift design.

The phase-shift problem for one surface trades the summed CRB of the
users it serves against the sidelobe level ``eta`` it radiates toward
the other surfaces::

    min  eps * log(eta) + sum_k tr(J_k^-1)
    s.t. |beta_n| = 1,  |x_i . beta|^2 <= eta  for every other surface i

with ``x_i = (w H^T) * a(theta_i, phi_i)``. An auxiliary ``f_i = x_i . beta``
splits the sidelobe constraint off, leaving a unit-modulus subproblem in
``beta`` (solved on the complex circle manifold), a disk projection with
a scalar search for ``(f, eta)``, and a scaled dual update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ff_steering, path_gain
from .errors import DomainError, HalfSpaceViolation, SingularFim
from .scene import RegionLabel, RisPose, SphericalCoord, element_grid, relative_spherical

log = logging.getLogger(__name__)

SINGULAR_PENALTY = 1e12
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def select_ris(estimates, ris_positions, l_sel: int) -> list[tuple[int, ...]]:
    """Pick, per user, the ``l_sel`` closest surfaces (ties to the lower id)."""
    if l_sel < 1:
        raise DomainError("selection size must be >= 1")
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    pos = np.atleast_2d(np.asarray(ris_positions, dtype=float))
    out = []
    for p in est:
        dist = np.linalg.norm(pos - p, axis=1)
        order = np.lexsort((np.arange(len(pos)), dist))
        out.append(tuple(int(i) for i in order[:l_sel]))
    return out


def users_per_ris(selection, num_ris: int) -> list[list[int]]:
    """Invert a selection: for each surface, the users that chose it."""
    served = [[] for _ in range(num_ris)]
    for k, chosen in enumerate(selection):
        for m in chosen:
            served[m].append(k)
    return served


# --- Fisher information -------------------------------------------------------

def _direction_partials(theta, phi):
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    u = np.array([cp * ct, cp * st, sp])
    du_dtheta = np.array([-cp * st, cp * ct, 0.0])
    du_dphi = np.array([-sp * ct, -sp * st, cp])
    return u, du_dtheta, du_dphi


def steering_jacobian(sph: SphericalCoord, region: RegionLabel, grid, wavelength: float):
    """Steering vector and its partials w.r.t. the location parameters.

    Returns
    -------
    s : ndarray, shape (N,)
    ds : ndarray, shape (N, d)
        Columns are d/dr, d/dtheta, d/dphi in the near field and
        d/dtheta, d/dphi in the far field.
    """
    k = 2 * np.pi / wavelength
    grid = np.asarray(grid)
    r, theta, phi = sph
    u, du_t, du_p = _direction_partials(theta, phi)
    if region is RegionLabel.NEAR_FIELD:
        diff = r * u - grid
        dist = np.linalg.norm(diff, axis=1)
        s = np.exp(-1j * k * dist)
        dsrc = np.stack([u, r * du_t, r * du_p])           # (3 params, xyz)
        ddist = (diff / dist[:, None]) @ dsrc.T            # (N, 3)
        return s, (-1j * k) * s[:, None] * ddist
    proj = grid @ u
    s = np.exp(1j * k * proj)
    dproj = grid @ np.stack([du_t, du_p]).T                # (N, 2)
    return s, (1j * k) * s[:, None] * dproj


def jacobian_basis(location, region: RegionLabel, effective_row, wavelength: float,
                   pose: RisPose, grid=None) -> np.ndarray:
    """Per-element sensitivity ``G`` so that one sample's Jacobian is ``beta @ G``.

    The path gain is evaluated at the estimated range and held fixed.
    """
    grid = element_grid(pose) if grid is None else grid
    sph = relative_spherical(location, pose)
    _, ds = steering_jacobian(sph, region, grid, wavelength)
    alpha = path_gain(sph.r, wavelength)
    return (alpha * np.asarray(effective_row))[:, None] * ds


def measurement_jacobian(location, region, phase_history, effective_row, wavelength, pose, grid=None):
    """Jacobian (c, d) of the stacked noiseless samples."""
    b = np.asarray(phase_history)
    if b.ndim == 1:
        b = b[:, None]
    return b.T @ jacobian_basis(location, region, effective_row, wavelength, pose, grid)


def fim_from_jacobian(D, noise_variance: float) -> np.ndarray:
    if not noise_variance > 0:
        raise DomainError("noise variance must be positive for a Fisher information")
    J = (2.0 / noise_variance) * np.real(D.conj().T @ D)
    return 0.5 * (J + J.T)


def fim(location, region: RegionLabel, phase_history, effective_row, noise_variance: float,
        wavelength: float, pose: RisPose, grid=None) -> np.ndarray:
    """Fisher information of the location parameters under Gaussian noise.

    ``J = (2 / sigma^2) Re(D^H D)``; ``D`` is the Jacobian of the stacked
    samples ``mu_c = beta_c^T diag(w H^T) alpha s(p)``.
    """
    D = measurement_jacobian(location, region, phase_history, effective_row, wavelength, pose, grid)
    return fim_from_jacobian(D, noise_variance)


def crb_trace(J, max_condition: float = 1e12) -> float:
    """Trace of the inverse Fisher information (the summed CRB)."""
    eig = np.linalg.eigvalsh(np.asarray(J, dtype=float))
    if not (eig[0] > 0 and eig[-1] / eig[0] <= max_condition):
        raise SingularFim(f"Fisher information is singular (eigenvalues {eig})")
    return float(np.sum(1.0 / eig))


def crb_or_penalty(J) -> float:
    try:
        return crb_trace(J)
    except SingularFim:
        return SINGULAR_PENALTY


class CrbTerm:
    """``weight * sum_k tr((J_k^prior + J_k(beta))^-1)`` and its gradient in beta.

    The gradient follows the convention ``dF = Re(g^H dbeta)``. Where a
    Fisher matrix is singular the value is the flat penalty, and the
    gradient is taken from a ridge-regularized inverse so descent can
    still leave the singular set.
    """

    def __init__(self, bases, priors, noise_variance: float, weight: float = 1.0):
        if not noise_variance > 0:
            raise DomainError("noise variance must be positive")
        self.bases = [np.asarray(g) for g in bases]
        self.priors = [np.asarray(j, dtype=float) for j in priors]
        self.scale = 2.0 / noise_variance
        self.weight = float(weight)

    def __len__(self):
        return len(self.bases)

    def fims(self, beta) -> list[np.ndarray]:
        out = []
        for G, J0 in zip(self.bases, self.priors):
            d = beta @ G
            out.append(J0 + self.scale * np.real(np.outer(d.conj(), d)))
        return out

    def raw_values(self, beta) -> list[float]:
        return [crb_or_penalty(J) for J in self.fims(beta)]

    def value(self, beta) -> float:
        return self.weight * sum(self.raw_values(beta))

    def gradient(self, beta) -> np.ndarray:
        # dF = -tr(J^-2 dJ)
        grad = np.zeros(len(beta), dtype=complex)
        for G, J0 in zip(self.bases, self.priors):
            d = beta @ G
            J = J0 + self.scale * np.real(np.outer(d.conj(), d))
            eig, vec = np.linalg.eigh(J)
            top = max(eig[-1], np.finfo(float).tiny)
            eig = np.maximum(eig, 1e-12 * top)
            inv2 = (vec / eig**2) @ vec.T
            q = G @ (inv2 @ d.conj())
            grad -= 2 * self.scale * q.conj()
        return self.weight * grad


# --- sidelobes ----------------------------------------------------------------

def sidelobe_rows(effective_row, angles, grid, wavelength: float) -> np.ndarray:
    """Rows ``x_i = (w H^T) * a(theta_i, phi_i)``, shape (I, N)."""
    e = np.asarray(effective_row)
    if len(angles) == 0:
        return np.zeros((0, len(e)), dtype=complex)
    return np.stack([e * ff_steering(th, ph, grid, wavelength) for th, ph in angles])


def sidelobe_response(beta, effective_row, theta, phi, grid, wavelength: float) -> complex:
    """Beamformed response of the surface toward ``(theta, phi)``."""
    a = ff_steering(theta, phi, grid, wavelength)
    return complex(np.asarray(effective_row) @ (np.asarray(beta) * a))


# --- manifold tools -------------------------------------------------------------

def riemannian_gradient(egrad, beta) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space of the circle manifold."""
    return egrad - np.real(egrad * beta.conj()) * beta


def retract(beta, step=0.0) -> np.ndarray:
    """Elementwise normalization; entries already of unit modulus are kept as is."""
    z = beta + step
    mag = np.abs(z)
    return np.where(np.abs(mag - 1.0) <= 4 * np.finfo(float).eps, z, z / mag)


@dataclass
class BetaObjective:
    """``crb(beta) + penalty * ||v - X beta||^2``."""

    X: np.ndarray
    v: np.ndarray
    crb: CrbTerm | None = None
    penalty: float = 1.0

    def value(self, beta) -> float:
        total = 0.0
        if self.crb is not None and len(self.crb):
            total += self.crb.value(beta)
        if len(self.v):
            total += self.penalty * float(np.sum(np.abs(self.v - self.X @ beta) ** 2))
        return total

    def gradient(self, beta) -> np.ndarray:
        grad = np.zeros(len(beta), dtype=complex)
        if self.crb is not None and len(self.crb):
            grad += self.crb.gradient(beta)
        if len(self.v):
            grad -= 2 * self.penalty * (self.X.conj().T @ (self.v - self.X @ beta))
        return grad


def ccm_descent(beta, objective: BetaObjective, max_iter: int = 200, tol: float = 1e-6,
                c1: float = 1e-4, shrink: float = 0.5, step0: float = 1.0, max_backtracks: int = 50):
    """Armijo gradient descent on the complex circle manifold.

    ``step0`` is the largest trial step, measured as the largest
    per-element move along the Riemannian gradient (roughly radians of
    phase), so the search does not depend on the objective's scale. After
    the first iteration the trial step starts at twice the last accepted
    one, capped by ``step0``. Returns the final point and the number of
    accepted steps; the objective never increases.
    """
    beta = retract(np.asarray(beta, dtype=complex))
    value = objective.value(beta)
    it = 0
    last = np.inf
    for it in range(1, max_iter + 1):
        rgrad = riemannian_gradient(objective.gradient(beta), beta)
        gnorm2 = float(np.real(np.vdot(rgrad, rgrad)))
        if np.sqrt(gnorm2) < tol:
            return beta, it - 1
        peak = float(np.max(np.abs(rgrad)))
        step = min(step0, 2.0 * last) / peak
        for _ in range(max_backtracks):
            trial = retract(beta, -step * rgrad)
            trial_value = objective.value(trial)
            if trial_value <= value - c1 * step * gnorm2:
                break
            step *= shrink
        else:
            return beta, it - 1
        last = step * peak
        beta, value = trial, trial_value
    return beta, it


def solve_beta_subproblem(beta, v, X, crb: CrbTerm | None = None, **ccm_kwargs) -> np.ndarray:
    """Unit-modulus minimizer (local) of ``crb(beta) + ||v - X beta||^2``."""
    objective = BetaObjective(np.asarray(X), np.asarray(v), crb)
    out, _ = ccm_descent(beta, objective, **ccm_kwargs)
    return out


# --- (f, eta) and dual steps ---------------------------------------------------------

def project_disk(f_hat, radius: float) -> np.ndarray:
    """Nearest points to ``f_hat`` with modulus at most ``radius``."""
    f_hat = np.asarray(f_hat, dtype=complex)
    mag = np.abs(f_hat)
    out = f_hat.copy()
    clip = mag > radius
    out[clip] = radius * f_hat[clip] / mag[clip]
    return out


def _eta_objective(eta, mags, rho, eps, gamma):
    # vectorized over eta
    eta = np.asarray(eta, dtype=float)
    gap = np.sqrt(eta)[..., None] - mags
    return eps * np.log(eta) + 0.5 * gamma * np.sum(rho * gap**2, axis=-1)


def _golden_log(fun, lo, hi, iters=60, scan=48):
    """Minimize ``fun`` over ``[lo, hi]`` in log coordinates.

    A coarse scan brackets the best basin, then golden-section refines it.
    """
    grid = np.exp(np.linspace(np.log(lo), np.log(hi), scan))
    vals = np.asarray(fun(grid), dtype=float)
    i = int(np.argmin(vals))
    a = np.log(grid[max(i - 1, 0)])
    b = np.log(grid[min(i + 1, scan - 1)])
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(np.exp(c)), fun(np.exp(d))
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(np.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(np.exp(d))
    x = np.exp(0.5 * (a + b))
    return x if fun(x) <= vals[i] else grid[i]


def solve_f_eta(f_hat, gamma: float, epsilon: float, eta_floor: float = 1e-12,
                max_alternations: int = 20):
    """Joint minimizer of ``eps log(eta) + gamma/2 sum |f_i - f_hat_i|^2`` s.t. ``|f_i|^2 <= eta``.

    ``eta`` is found by a scalar search with the active-set indicators
    held fixed, re-deriving the indicators until they settle; ``f`` is the
    disk projection at radius ``sqrt(eta)``.
    """
    if not (gamma > 0 and epsilon > 0):
        raise DomainError("gamma and epsilon must be positive")
    f_hat = np.asarray(f_hat, dtype=complex)
    mags = np.abs(f_hat)
    hi = (float(mags.max()) if len(mags) else 0.0) ** 2 + 1.0
    rho = (mags > 0).astype(float)
    eta = eta_floor
    for _ in range(max_alternations):
        eta = _golden_log(lambda x: _eta_objective(x, mags, rho, epsilon, gamma), eta_floor, hi)
        new_rho = (mags > np.sqrt(eta)).astype(float)
        if np.array_equal(new_rho, rho):
            break
        rho = new_rho
    return project_disk(f_hat, np.sqrt(eta)), float(eta)


def dual_update(lam, f, responses) -> np.ndarray:
    return np.asarray(lam) + np.asarray(f) - np.asarray(responses)


# --- ADMM driver -----------------------------------------------------------------

@dataclass(frozen=True)
class AdmmSettings:
    epsilon: float = 1e-2
    gamma: float = 10.0
    max_outer: int = 100
    tol: float = 1e-4
    ccm_max_iter: int = 200
    ccm_tol: float = 1e-6
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    armijo_step: float = 1.0
    crb_weight: float = 1.0
    normalize: bool = True

    def ccm_kwargs(self) -> dict:
        return dict(max_iter=self.ccm_max_iter, tol=self.ccm_tol, c1=self.armijo_c1,
                    shrink=self.armijo_shrink, step0=self.armijo_step)


@dataclass
class UserTarget:
    location: np.ndarray
    region: RegionLabel


@dataclass
class RisContext:
    """Everything the optimizer of one surface needs.

    ``phase_history`` holds the phases already used (N, c); the Fisher
    information they carry is the prior on which the next phase builds.
    ``other_angles`` are the directions of the remaining surfaces.
    """

    pose: RisPose
    wavelength: float
    effective_row: np.ndarray
    noise_variance: float
    beta0: np.ndarray
    users: list = field(default_factory=list)
    other_angles: list = field(default_factory=list)
    phase_history: np.ndarray | None = None


@dataclass
class AdmmResult:
    beta: np.ndarray
    iterations: int
    primal_residual: float
    converged: bool
    eta: float
    crb: float


def build_crb_term(ctx: RisContext, grid=None) -> CrbTerm | None:
    grid = element_grid(ctx.pose) if grid is None else grid
    bases, priors = [], []
    for user in ctx.users:
        try:
            G = jacobian_basis(user.location, user.region, ctx.effective_row, ctx.wavelength, ctx.pose, grid)
        except HalfSpaceViolation:
            continue
        bases.append(G)
        if ctx.phase_history is not None and np.size(ctx.phase_history):
            D = np.asarray(ctx.phase_history).T @ G
            priors.append(fim_from_jacobian(D, ctx.noise_variance))
        else:
            priors.append(np.zeros((G.shape[1], G.shape[1])))
    if not bases:
        return None
    return CrbTerm(bases, priors, ctx.noise_variance)


def admm_optimize(ctx: RisContext, settings: AdmmSettings = AdmmSettings()) -> AdmmResult:
    """Phase shifts for one surface for the next cycle.

    With ``settings.normalize`` the sidelobe rows are expressed relative
    to a fully coherent beam (so responses lie in [0, 1]) and the CRB term
    relative to its value at ``beta0``; the tolerance applies to the
    normalized responses.
    """
    grid = element_grid(ctx.pose)
    crb = build_crb_term(ctx, grid)
    e = np.asarray(ctx.effective_row)
    if settings.normalize:
        e = e / max(np.sum(np.abs(e)), np.finfo(float).tiny)
    X = sidelobe_rows(e, ctx.other_angles, grid, ctx.wavelength)
    beta = retract(np.asarray(ctx.beta0, dtype=complex))

    if crb is not None:
        crb.weight = settings.crb_weight
        if settings.normalize:
            ref = crb.value(beta)
            if ref >= SINGULAR_PENALTY:
                # one descent step leaves the singular set; scale from there
                beta, _ = ccm_descent(beta, BetaObjective(X[:0], np.zeros(0), crb),
                                      **{**settings.ccm_kwargs(), "max_iter": 1})
                ref = crb.value(beta)
            if 0 < ref < SINGULAR_PENALTY:
                crb.weight = settings.crb_weight / ref

    if len(X) == 0:
        if crb is not None:
            beta, _ = ccm_descent(beta, BetaObjective(X, np.zeros(0), crb), **settings.ccm_kwargs())
        return AdmmResult(beta, 0, 0.0, True, 0.0, _raw_crb(crb, beta))

    resp = X @ beta
    f = resp.copy()
    lam = np.zeros(len(X), dtype=complex)
    eta = float(np.max(np.abs(f)) ** 2)
    primal = np.inf
    converged = False
    t = 0
    for t in range(1, settings.max_outer + 1):
        objective = BetaObjective(X, f + lam, crb)
        beta, _ = ccm_descent(beta, objective, **settings.ccm_kwargs())
        resp = X @ beta
        f, eta = solve_f_eta(resp - lam, settings.gamma, settings.epsilon)
        lam = dual_update(lam, f, resp)
        primal = float(np.max(np.abs(f - resp)))
        if primal < settings.tol:
            converged = True
            break
    if not converged:
        log.debug("ADMM hit the iteration cap with primal residual %.3g", primal)
    return AdmmResult(beta, t, primal, converged, eta, _raw_crb(crb, beta))


def _raw_crb(crb: CrbTerm | None, beta) -> float:
    if crb is None:
        return 0.0
    return float(sum(crb.raw_values(beta)))
