"""
Finite-volume solver for

    d_t u - div(A(u) grad u) = f(u)  on (0, L),  zero-flux ends,

written in the entropy variable w = Dh(u):

    d_t u(w) - div(B(w) grad w) = f(u(w)),  B = A(u) (D^2h(u))^-1.

Cells store w. Densities are always reconstructed through (Dh)^-1, which
maps every finite w into the open triangle, so no clipping is needed
anywhere. Each time step is a backward-Euler system solved by damped
Newton iteration on the 2N cell unknowns.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from crossdiff_project import settings
from .coeff_conditions import check_remark_case, check_symmetry, check_theorem_conditions
from .entropy_geometry import (
    ENTROPY_OFFSET, Membership, as_state_point, classify, density_values,
    gradient_values, inverse_gradient_values, inverse_hessian_values,
)
from .exceptions import (
    AdmissibilityError, DomainError, InvalidInitialDataError,
    NewtonConvergenceError, PreconditionError, TimeStepUnderflowError,
)
from .reactions import CustomReaction, LotkaVolterra, NoReaction, lv_band, verify_band

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centred grid on (0, length)"""
    n_cells: int
    length: float = 1.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells!r}")
        if not (math.isfinite(self.length) and self.length > 0):
            raise ValueError(f"length must be positive, got {self.length!r}")
        object.__setattr__(self, 'n_cells', int(self.n_cells))
        object.__setattr__(self, 'length', float(self.length))

    @property
    def dx(self):
        return self.length / self.n_cells

    @property
    def centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx


def _frozen(array):
    array = np.array(array, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class GridState:
    """Cell values of the entropy variable at time t; densities are derived"""
    grid: Grid1D
    w: np.ndarray
    t: float = 0.0
    u1: np.ndarray = field(init=False, repr=False)
    u2: np.ndarray = field(init=False, repr=False)
    u3: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = _frozen(self.w).reshape(self.grid.n_cells, 2)
        if not np.all(np.isfinite(w)):
            raise DomainError("entropy variables must be finite")
        if self.t < 0:
            raise ValueError(f"time must be nonnegative, got {self.t!r}")
        object.__setattr__(self, 'w', w)
        u1, u2, u3 = inverse_gradient_values(w[:, 0], w[:, 1])
        object.__setattr__(self, 'u1', _frozen(u1))
        object.__setattr__(self, 'u2', _frozen(u2))
        object.__setattr__(self, 'u3', _frozen(u3))

    @classmethod
    def from_densities(cls, grid, u1, u2, t=0.0):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        u3 = 1.0 - u1 - u2
        if not np.all(np.minimum(np.minimum(u1, u2), u3) > 0):
            raise DomainError("cell densities must lie in the open triangle")
        w1, w2 = gradient_values(u1, u2, u3)
        return cls(grid=grid, w=np.stack([w1, w2], axis=-1), t=t)

    @property
    def u(self):
        return np.stack([self.u1, self.u2], axis=-1)


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    t: float
    entropy_total: float
    entropy_normalized: float
    mass1: float
    mass2: float
    min_u3: float
    dissipation: float
    newton_iters: int
    tau: float

    def as_row(self):
        return (self.step, self.t, self.entropy_total, self.entropy_normalized, self.mass1,
                self.mass2, self.min_u3, self.dissipation, self.newton_iters, self.tau)


# Mobility

def _matrices(c, u1, u2):
    u1 = np.asarray(u1, dtype=float)[..., None, None]
    u2 = np.asarray(u2, dtype=float)[..., None, None]
    return c.alpha + c.beta * u1 + c.gamma * u2


def _inverse_hessians(u1, u2, u3):
    m11, m12, m22 = inverse_hessian_values(u1, u2, u3)
    return np.stack([np.stack([m11, m12], axis=-1), np.stack([m12, m22], axis=-1)], axis=-2)


def mobility_values(c, u1, u2, u3):
    """B = A (D^2h)^-1 at arrays of points, shape (..., 2, 2)"""
    return _matrices(c, u1, u2) @ _inverse_hessians(u1, u2, u3)


def mobility_derivatives(c, u1, u2, u3):
    """dB/du1 and dB/du2 with u3 = 1 - u1 - u2"""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    u3 = np.asarray(u3, dtype=float)
    a = _matrices(c, u1, u2)
    m = _inverse_hessians(u1, u2, u3)
    zero = np.zeros_like(u1)
    dm1 = np.stack([np.stack([u2 + u3 - u1, -u2], axis=-1), np.stack([-u2, zero], axis=-1)], axis=-2)
    dm2 = np.stack([np.stack([zero, -u1], axis=-1), np.stack([-u1, u1 + u3 - u2], axis=-1)], axis=-2)
    return c.beta @ m + a @ dm1, c.gamma @ m + a @ dm2


def assemble_mobility(c, u, tol=settings.CONDITION_TOL):
    point = as_state_point(u)
    if classify(point) is not Membership.INTERIOR:
        raise DomainError(f"mobility needs an interior point, got ({point.u1!r}, {point.u2!r})")
    report = check_symmetry(c, tol)
    if not report.passed:
        raise PreconditionError("mobility is only defined for the symmetric family", report)
    return mobility_values(c, point.u1, point.u2, point.u3)


def _face_means(u1, u2, u3):
    return 0.5 * (u1[:-1] + u1[1:]), 0.5 * (u2[:-1] + u2[1:]), 0.5 * (u3[:-1] + u3[1:])


def _quadratic(dw, b):
    return np.einsum('fi,fij,fj->f', dw, b, dw)


def diagnostics(state, c, r=None, step=0, newton_iters=0, tau=0.0):
    grid = state.grid
    dx = grid.dx
    entropy = float(np.sum(density_values(state.u1, state.u2, state.u3)) * dx)
    faces = mobility_values(c, *_face_means(state.u1, state.u2, state.u3))
    dw = np.diff(state.w, axis=0)
    dissipation = float(np.sum(_quadratic(dw, faces)) / dx)
    return StepDiagnostics(
        step=step,
        t=state.t,
        entropy_total=entropy,
        entropy_normalized=entropy + ENTROPY_OFFSET * grid.length,
        mass1=float(np.sum(state.u1) * dx),
        mass2=float(np.sum(state.u2) * dx),
        min_u3=float(np.min(state.u3)),
        dissipation=dissipation,
        newton_iters=newton_iters,
        tau=tau,
    )


# Backward Euler

def _block_tridiagonal(diagonal, lower, upper):
    n = diagonal.shape[0]
    index = np.arange(n)
    blocks = [(index, index, diagonal), (index[1:], index[:-1], lower), (index[:-1], index[1:], upper)]
    rows, cols, data = [], [], []
    local = np.arange(2)
    for block_rows, block_cols, values in blocks:
        rows.append(np.broadcast_to(2 * block_rows[:, None, None] + local[None, :, None], values.shape).ravel())
        cols.append(np.broadcast_to(2 * block_cols[:, None, None] + local[None, None, :], values.shape).ravel())
        data.append(values.ravel())
    return sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n))


class ImplicitEulerStep:
    """Residual and Jacobian of one backward-Euler step in the cell entropy variables"""

    def __init__(self, state, c, r, tau):
        self.grid = state.grid
        self.c = c
        self.r = r if r is not None else NoReaction()
        self.tau = float(tau)
        self.u_old = state.u

    def _cells(self, w):
        u1, u2, u3 = inverse_gradient_values(w[:, 0], w[:, 1])
        return u1, u2, u3

    def residual(self, w):
        dx = self.grid.dx
        u1, u2, u3 = self._cells(w)
        faces = mobility_values(self.c, *_face_means(u1, u2, u3))
        flux = np.einsum('fij,fj->fi', faces, np.diff(w, axis=0)) / dx
        divergence = np.zeros_like(w)
        divergence[:-1] += flux
        divergence[1:] -= flux
        f1, f2 = self.r.rates(u1, u2)
        u = np.stack([u1, u2], axis=-1)
        return (u - self.u_old) / self.tau - divergence / dx - np.stack([f1, f2], axis=-1)

    def jacobian(self, w):
        dx = self.grid.dx
        u1, u2, u3 = self._cells(w)
        cell_m = _inverse_hessians(u1, u2, u3)
        mean1, mean2, mean3 = _face_means(u1, u2, u3)
        faces = mobility_values(self.c, mean1, mean2, mean3)
        dw = np.diff(w, axis=0)
        db1, db2 = mobility_derivatives(self.c, mean1, mean2, mean3)
        # columns k: (dB/du_k) dw
        jb = np.stack([np.einsum('fij,fj->fi', db1, dw), np.einsum('fij,fj->fi', db2, dw)], axis=-1)
        left = (-faces + 0.5 * jb @ cell_m[:-1]) / dx
        right = (faces + 0.5 * jb @ cell_m[1:]) / dx

        j11, j12, j21, j22 = self.r.jacobian(u1, u2)
        reaction = np.stack([np.stack([j11, j12], axis=-1), np.stack([j21, j22], axis=-1)], axis=-2)
        diagonal = cell_m / self.tau - reaction @ cell_m
        diagonal[:-1] -= left / dx
        diagonal[1:] += right / dx
        return _block_tridiagonal(diagonal, lower=left / dx, upper=-right / dx)

    def solve(self, w0, tol=settings.NEWTON_TOL, max_iter=settings.NEWTON_MAX_ITER,
              max_halvings=settings.NEWTON_MAX_HALVINGS):
        w = np.array(w0, dtype=float)
        res = self.residual(w)
        norm = float(np.max(np.abs(res)))
        for iteration in range(max_iter + 1):
            if norm <= tol:
                return w, iteration, norm
            if iteration == max_iter:
                break
            delta = spsolve(self.jacobian(w), -res.ravel()).reshape(w.shape)
            if not np.all(np.isfinite(delta)):
                break
            damping = 1.0
            for _ in range(max_halvings):
                trial = w + damping * delta
                with np.errstate(over='ignore', invalid='ignore'):
                    trial_res = self.residual(trial)
                trial_norm = float(np.max(np.abs(trial_res)))
                if math.isfinite(trial_norm) and (trial_norm < norm or trial_norm <= tol):
                    break
                damping *= 0.5
            else:
                break
            w, res, norm = trial, trial_res, trial_norm
        raise NewtonConvergenceError(
            f"Newton stopped at residual {norm:.3e} after {iteration} iterations (tau={self.tau:.3e})",
            iterate=w, residual=norm, iterations=iteration,
        )


def newton_jacobian(state, c, r, tau, w):
    """Jacobian of the backward-Euler residual at iterate w (exposed for finite-difference checks)"""
    return ImplicitEulerStep(state, c, r, tau).jacobian(np.asarray(w, dtype=float)).toarray()


def step_residual(state, c, r, tau, w):
    return ImplicitEulerStep(state, c, r, tau).residual(np.asarray(w, dtype=float))


def require_admissible(c, r, tol=settings.CONDITION_TOL):
    """Reject coefficients outside the strict or remark conditions and reactions that grow inside the band"""
    theorem = check_theorem_conditions(c, tol)
    if not theorem.passed:
        remark = check_remark_case(c, tol)
        if not remark.passed:
            raise AdmissibilityError("coefficients satisfy neither the strict nor the remark conditions", theorem)
    if isinstance(r, LotkaVolterra):
        _, report = lv_band(r, tol)
        if not report.passed:
            raise AdmissibilityError("Lotka-Volterra rates violate the growth bound", report)
    elif isinstance(r, CustomReaction):
        report = verify_band(r)
        if not report.passed:
            raise AdmissibilityError("custom growth rates are positive somewhere in the band", report)


def step_implicit(state, c, r, tau, step=1):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    require_admissible(c, r)
    w, iterations, _ = ImplicitEulerStep(state, c, r, tau).solve(state.w)
    new_state = GridState(grid=state.grid, w=w, t=state.t + tau)
    return new_state, diagnostics(new_state, c, r, step=step, newton_iters=iterations, tau=tau)


# Time loop

def prepare_initial_densities(u1, u2, rescale, nudge=settings.BOUNDARY_NUDGE):
    """Bring initial densities into the open triangle, scaling or nudging them when allowed"""
    u1 = np.array(u1, dtype=float)
    u2 = np.array(u2, dtype=float)
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise InvalidInitialDataError("initial densities must be finite")
    smallest = np.minimum(np.minimum(u1, u2), 1.0 - u1 - u2)
    if np.all(smallest > settings.MEMBERSHIP_TOL):
        return u1, u2
    if not rescale:
        raise InvalidInitialDataError(
            f"{int(np.sum(smallest <= settings.MEMBERSHIP_TOL))} initial cells are not inside the triangle "
            "and rescaling is disabled"
        )
    if np.any(np.minimum(u1, u2) < -settings.MEMBERSHIP_TOL):
        raise InvalidInitialDataError("negative initial densities cannot be rescaled")
    total = u1 + u2
    if np.max(total) > 1.0:
        scale = 1.0 / float(np.max(total))
        logger.warning(f"Scaling initial densities by {scale:.6g} so that u1 + u2 <= 1")
        u1, u2 = u1 * scale, u2 * scale
    touching = int(np.sum(np.minimum(np.minimum(u1, u2), 1.0 - u1 - u2) <= nudge))
    u1 = np.maximum(u1, nudge)
    u2 = np.maximum(u2, nudge)
    total = u1 + u2
    squeeze = np.where(total > 1.0 - nudge, (1.0 - nudge) / total, 1.0)
    u1, u2 = u1 * squeeze, u2 * squeeze
    logger.warning(f"Nudged {touching} initial cells on the boundary of the triangle inward by {nudge:g}")
    return u1, u2


@dataclass
class RunResult:
    initial: GridState
    final: GridState
    initial_diagnostics: StepDiagnostics
    trajectory: list


def run(config, observer=None):
    """
    Advance the configured problem to t_end.

    observer, when given, is called with (state, record) after every accepted step.

    Failed Newton solves halve the step; five consecutive easy steps double
    it again, never beyond the configured tau.
    """
    c, r, grid = config.coefficients, config.reaction, config.grid
    require_admissible(c, r)
    u1, u2 = config.initial.evaluate(grid, seed=config.seed)
    u1, u2 = prepare_initial_densities(u1, u2, config.rescale_initial)
    state = GridState.from_densities(grid, u1, u2)
    initial = state
    trajectory = []

    tau_cap = config.tau
    tau = tau_cap
    tau_min = config.tau_min if config.tau_min is not None else settings.TAU_MIN_FACTOR * config.t_end
    finish = 1e-8 * tau_cap
    easy = 0
    step = 0
    while config.t_end - state.t > finish:
        h = min(tau, config.t_end - state.t)
        try:
            state_new, record = step_implicit(state, c, r, h, step=step + 1)
        except NewtonConvergenceError as exc:
            tau = 0.5 * h
            easy = 0
            logger.warning(f"Newton failed at t={state.t:.6g} ({exc}); halving tau to {tau:.3e}")
            if tau < tau_min:
                raise TimeStepUnderflowError(
                    f"tau fell below tau_min={tau_min:.3e} at t={state.t:.6g}", trajectory, state, initial=initial,
                ) from exc
            continue
        step += 1
        state = state_new
        trajectory.append(record)
        if observer is not None:
            observer(state, record)
        easy = easy + 1 if record.newton_iters <= settings.EASY_STEP_ITERS else 0
        if easy >= settings.EASY_STEPS_TO_GROW and tau < tau_cap:
            tau = min(2.0 * tau, tau_cap)
            easy = 0
            logger.debug(f"Raising tau to {tau:.3e} at t={state.t:.6g}")

    return RunResult(initial=initial, final=state,
                     initial_diagnostics=diagnostics(initial, c, r), trajectory=trajectory)
