"""Predictive control laws on top of the horizon matrices.

The cost is ``J = (Y* - Y)^T Q (Y* - Y) + lam * dU^T dU`` with
``Y = Yfree + PhiT dU``.  The unconstrained minimiser is explicit; the
constrained one is found by accelerated projected gradient over the
absolute inputs ``U = u(k-1) + cumsum(dU)``, where the box and energy
constraints live.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasibleConstraints,
    NotConverged,
    SingularMatrix,
    SingularNormalMatrix,
)
from .numeric import TOL, Tolerances, solve_linear
from .prediction import HorizonMatrices, free_response, horizon

MODES = ("uiMPC", "ciMPC", "uiMPC+D", "ciMPC+D")
PJM_MODES = ("frozen", "fixed_point")


@dataclass
class ControllerConfig:
    """Horizon, weights and solver options.

    ``q`` is the diagonal of ``Q`` (length ``N * M_y``) or ``None`` for the
    identity.  ``ridge`` is added to ``lam`` on the diagonal of the normal
    matrix; it exists for ``lam = 0`` problems whose normal matrix is
    singular.
    """

    N: int
    lam: float = 0.0
    q: Optional[Sequence[float]] = None
    mode: str = "uiMPC"
    pjm_mode: str = "frozen"
    ridge: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"horizon N must be a positive integer, got {self.N}")
        self.N = int(self.N)
        if self.lam < 0 or self.ridge < 0:
            raise ValueError("lam and ridge must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pjm_mode not in PJM_MODES:
            raise ValueError(f"pjm_mode must be one of {PJM_MODES}, got {self.pjm_mode!r}")
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=float).ravel()
            if np.any(self.q < 0):
                raise ValueError("output weights must be non-negative")

    @property
    def constrained(self) -> bool:
        return self.mode.startswith("ci")

    @property
    def compensated(self) -> bool:
        return self.mode.endswith("+D")

    @property
    def lam_eff(self) -> float:
        return self.lam + self.ridge

    def Q(self, My: int) -> np.ndarray:
        if self.q is None:
            return np.eye(self.N * My)
        if self.q.size != self.N * My:
            raise DimensionMismatch(f"q has {self.q.size} weights, expected N*My = {self.N * My}")
        return np.diag(self.q)


@dataclass
class ConstraintSet:
    """Per-channel box on ``u(k+i)`` and an optional cap on ``sum u_j(k+i)^2``."""

    u_min: np.ndarray
    u_max: np.ndarray
    energy_cap: Optional[float] = None

    def __post_init__(self):
        self.u_min = np.atleast_1d(np.asarray(self.u_min, dtype=float))
        self.u_max = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        if self.u_min.shape != self.u_max.shape:
            raise DimensionMismatch("u_min and u_max differ in length")
        if np.any(self.u_min > self.u_max):
            raise InfeasibleConstraints("u_min exceeds u_max")
        if self.energy_cap is not None and self.energy_cap <= 0:
            raise ValueError("energy_cap must be positive")

    def violation(self, U: np.ndarray) -> float:
        """Largest constraint violation of the stacked inputs ``U`` (0 when feasible)."""
        U = np.asarray(U, dtype=float).reshape(-1, self.u_min.size)
        v = max(float(np.max(self.u_min - U, initial=0.0)), float(np.max(U - self.u_max, initial=0.0)), 0.0)
        if self.energy_cap is not None:
            v = max(v, float(np.sum(U**2) - self.energy_cap))
        return v


@dataclass
class ControlStep:
    dU: np.ndarray
    u_applied: np.ndarray
    predicted_Y: np.ndarray
    cost: float
    solver_iters: int = 0
    converged: bool = True
    unconstrained_dU: Optional[np.ndarray] = field(default=None, repr=False)


def cost(cfg: ControllerConfig, Ystar, Ypred, dU) -> float:
    Ystar = np.asarray(Ystar, dtype=float).ravel()
    Ypred = np.asarray(Ypred, dtype=float).ravel()
    dU = np.asarray(dU, dtype=float).ravel()
    if Ystar.size != Ypred.size or Ystar.size % cfg.N or dU.size % cfg.N:
        raise DimensionMismatch("stacked vectors do not match the horizon")
    e = Ystar - Ypred
    Q = cfg.Q(Ystar.size // cfg.N)
    return float(e @ Q @ e + cfg.lam * (dU @ dU))


def _normal_matrix(hm: HorizonMatrices, cfg: ControllerConfig):
    Q = cfg.Q(hm.My)
    PtQ = hm.PhiT.T @ Q
    return PtQ @ hm.PhiT + cfg.lam_eff * np.eye(hm.PhiT.shape[1]), PtQ


def gain(hm: HorizonMatrices, cfg: ControllerConfig) -> np.ndarray:
    """``P = (PhiT^T Q PhiT + lam I)^-1 PhiT^T Q``.

    Raises
    ------
    SingularNormalMatrix
        When the normal matrix is numerically singular (typically
        ``lam = 0`` with a horizon longer than the dead time).
    """
    normal, PtQ = _normal_matrix(hm, cfg)
    try:
        return solve_linear(normal, PtQ)
    except SingularMatrix as exc:
        raise SingularNormalMatrix(
            f"PhiT^T Q PhiT + lam*I is singular ({exc}); set lam > 0 or a small ridge (e.g. 1e-10)"
        ) from None


def _residual(hm, Ystar, y_now, dx, dW_hat):
    Ystar = np.asarray(Ystar, dtype=float).ravel()
    if Ystar.size != hm.N * hm.My:
        raise DimensionMismatch(f"reference has {Ystar.size} entries, expected {hm.N * hm.My}")
    free = free_response(hm, y_now, dx, dW_hat)
    return Ystar, free, Ystar - free


def _finish(hm, cfg, Ystar, free, dU, u_prev, iters=0, converged=True, unc=None) -> ControlStep:
    Ypred = free + hm.PhiT @ dU
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    return ControlStep(
        dU=dU,
        u_applied=u_prev + dU[: hm.Mu],
        predicted_Y=Ypred,
        cost=cost(cfg, Ystar, Ypred, dU),
        solver_iters=iters,
        converged=converged,
        unconstrained_dU=unc,
    )


def unconstrained_step(hm: HorizonMatrices, cfg: ControllerConfig, Ystar, y_now, dx, u_prev, dW_hat=None) -> ControlStep:
    """Explicit optimum ``dU = P (Y* - E y(k) - PsiT dx(k) - PhiWT dW_hat)``."""
    Ystar, free, r = _residual(hm, Ystar, y_now, dx, dW_hat)
    dU = gain(hm, cfg) @ r
    return _finish(hm, cfg, Ystar, free, dU, u_prev)


def receding_horizon_apply(step: ControlStep, u_prev=None) -> np.ndarray:
    """First input block of the plan: ``u(k) = u(k-1) + g^T dU``."""
    if u_prev is None:
        return step.u_applied
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    return u_prev + step.dU[: u_prev.size]


# ---------------------------------------------------------------------------
# projections


def project_box_ball(v, lo, hi, cap: Optional[float]) -> np.ndarray:
    """Euclidean projection onto ``{x : lo <= x <= hi, |x|^2 <= cap}``.

    The minimiser is ``clip(t v, lo, hi)`` for the largest ``t`` in
    ``(0, 1]`` meeting the cap; ``|clip(t v)|^2`` is piecewise quadratic in
    ``t`` so ``t`` is found exactly between sorted breakpoints.
    """
    v = np.asarray(v, dtype=float)
    x = np.clip(v, lo, hi)
    if cap is None or x @ x <= cap:
        return x
    lo = np.broadcast_to(lo, v.shape)
    hi = np.broadcast_to(hi, v.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        bps = np.concatenate([lo / v, hi / v])
    bps = bps[np.isfinite(bps) & (bps > 0) & (bps < 1)]
    ts = np.unique(np.concatenate([[0.0, 1.0], bps]))
    g = np.sum(np.clip(np.outer(ts, v), lo, hi) ** 2, axis=1)
    j = int(np.argmax(g > cap))
    if j == 0:
        raise InfeasibleConstraints("box and energy cap do not intersect")
    t_lo, t_hi = ts[j - 1], ts[j]
    tm = 0.5 * (t_lo + t_hi)
    xm = tm * v
    free = (xm > lo) & (xm < hi)
    fixed = np.clip(xm, lo, hi)
    F = float(np.sum(fixed[~free] ** 2))
    V = float(np.sum(v[free] ** 2))
    t = np.sqrt(max(cap - F, 0.0) / V) if V > 0 else t_lo
    t = min(max(t, t_lo), t_hi)
    return np.clip(t * v, lo, hi)


def dykstra_project(v, lo, hi, cap: Optional[float], tol: Tolerances = TOL) -> np.ndarray:
    """Projection onto box ∩ ball by Dykstra's alternating projections."""
    x = np.asarray(v, dtype=float).copy()
    if cap is None:
        return np.clip(x, lo, hi)
    r = np.sqrt(cap)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(tol.dykstra_max_iter):
        yv = np.clip(x + p, lo, hi)
        p = x + p - yv
        z = yv + q
        nz = np.linalg.norm(z)
        x_new = z if nz <= r else z * (r / nz)
        q = yv + q - x_new
        if np.max(np.abs(x_new - x)) < tol.dykstra_tol and np.max(np.abs(x_new - yv)) < tol.dykstra_tol:
            return x_new
        x = x_new
    return x


def _box_ball_feasible(lo, hi, cap, tol: Tolerances) -> bool:
    x0 = np.clip(0.0, lo, hi)
    return cap is None or float(x0 @ x0) <= cap * (1 + tol.box_ball_feasibility)


def constrained_step(
    hm: HorizonMatrices,
    cfg: ControllerConfig,
    cset: ConstraintSet,
    Ystar,
    y_now,
    dx,
    u_prev,
    dW_hat=None,
    tol: Tolerances = TOL,
) -> ControlStep:
    """Minimise the cost subject to box and energy bounds on ``u(k+i)``.

    Accelerated projected gradient (FISTA with restart) with step ``1/L``,
    ``L`` a Gershgorin bound on the Hessian, started from the projection
    of the unconstrained optimum.

    Raises
    ------
    InfeasibleConstraints
        If the box and the energy ball do not intersect.
    NotConverged
        After ``tol.pg_max_iter`` iterations; the last (feasible) step is
        attached as ``exc.iterate``.
    """
    Mu, N = hm.Mu, hm.N
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    if cset.u_min.size != Mu:
        raise DimensionMismatch(f"constraints cover {cset.u_min.size} inputs, plant has {Mu}")
    lo = np.tile(cset.u_min, N)
    hi = np.tile(cset.u_max, N)
    cap = cset.energy_cap
    if not _box_ball_feasible(lo, hi, cap, tol):
        raise InfeasibleConstraints("no input sequence satisfies both the box and the energy cap")

    Ystar, free, r = _residual(hm, Ystar, y_now, dx, dW_hat)
    normal, PtQ = _normal_matrix(hm, cfg)
    try:
        dU_unc = solve_linear(normal, PtQ @ r)
    except SingularMatrix as exc:
        raise SingularNormalMatrix(f"{exc}; set lam > 0 or a small ridge") from None

    S = np.kron(np.tril(np.ones((N, N))), np.eye(Mu))
    D = np.linalg.inv(S)  # block first-difference matrix, exact in floating point
    c = np.tile(u_prev, N)
    H = 2.0 * normal
    lin = 2.0 * (PtQ @ r)
    H_U = D.T @ H @ D
    L = float(np.max(np.sum(np.abs(H_U), axis=1)))
    L = L if L > 0 else 1.0

    def grad(U):
        return D.T @ (H @ (D @ (U - c)) - lin)

    def J(U):
        d = D @ (U - c)
        return 0.5 * d @ H @ d - lin @ d

    U = project_box_ball(c + S @ dU_unc, lo, hi, cap)
    Y = U.copy()
    t = 1.0
    f_prev = J(U)
    converged = False
    it = 0
    for it in range(1, tol.pg_max_iter + 1):
        U_new = project_box_ball(Y - grad(Y) / L, lo, hi, cap)
        change = float(np.max(np.abs(U_new - U)))
        f_new = J(U_new)
        if f_new > f_prev:
            # restart momentum from a plain projected-gradient step
            U_new = project_box_ball(U - grad(U) / L, lo, hi, cap)
            change = float(np.max(np.abs(U_new - U)))
            f_new = J(U_new)
            t = 1.0
            Y = U_new
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            Y = U_new + ((t - 1.0) / t_next) * (U_new - U)
            t = t_next
        U, f_prev = U_new, f_new
        if change < tol.pg_step_tol:
            converged = True
            break

    dU = D @ (U - c)
    step = _finish(hm, cfg, Ystar, free, dU, u_prev, iters=it, converged=converged, unc=dU_unc)
    if not converged:
        gm = float(np.max(np.abs(U - project_box_ball(U - grad(U) / L, lo, hi, cap))))
        raise NotConverged(
            f"projected gradient stopped after {it} iterations (gradient-mapping norm {gm:.3e})",
            iterate=step,
            grad_norm=gm,
        )
    return step


# ---------------------------------------------------------------------------
# future-PJM refinement


@dataclass
class FixedPointResult:
    step: ControlStep
    hm: HorizonMatrices
    iterations: int
    converged: bool


def solve_fixed_point(
    pjm_sequence: Callable[[Optional[np.ndarray]], list],
    solve: Callable[[HorizonMatrices], ControlStep],
    cfg: ControllerConfig,
    tol: Tolerances = TOL,
) -> FixedPointResult:
    """Solve with frozen PJMs, then (in ``fixed_point`` mode) re-linearise.

    ``pjm_sequence(dU)`` returns the PJMs along the trajectory predicted
    for the plan ``dU`` (``None`` asks for the frozen sequence).  Iteration
    stops when the plan changes by less than ``tol.fixed_point_tol`` or
    after ``tol.fixed_point_max_iter`` re-solves.
    """
    hm = horizon(pjm_sequence(None), cfg.N)
    step = solve(hm)
    if cfg.pjm_mode == "frozen":
        return FixedPointResult(step, hm, 0, True)
    for it in range(1, tol.fixed_point_max_iter + 1):
        hm = horizon(pjm_sequence(step.dU), cfg.N)
        new = solve(hm)
        change = float(np.max(np.abs(new.dU - step.dU)))
        step = new
        if change < tol.fixed_point_tol:
            return FixedPointResult(step, hm, it, True)
    return FixedPointResult(step, hm, tol.fixed_point_max_iter, False)
