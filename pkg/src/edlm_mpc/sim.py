"""Example plants, reference and disturbance generators, and the closed-loop runner.

Plant histories are newest-first and indexed relative to the output being
produced: for ``plant_example1(y_hist, u_hist)`` computing ``y(k)``,
``y_hist[l]`` is ``y(k-1-l)`` and ``u_hist[l]`` is ``u(k-1-l)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .control import (
    ConstraintSet,
    ControllerConfig,
    ControlStep,
    constrained_step,
    solve_fixed_point,
    unconstrained_step,
)
from .edlm import HistoryWindow, PlantModel, Term, pjm_exact, pjm_secant, predicted_pjm_sequence, separable_plant
from .errors import DimensionMismatch, NotConverged, OutOfRange, SimulationDiverged, WindowOutOfRange
from .numeric import TOL, Tolerances
from .prediction import lifted_state

# ---------------------------------------------------------------------------
# plants

_EX1_TERMS = (
    Term(0, "y", 0, 1, 0.8),
    Term(0, "u", 0, 3, 1.0),
    Term(0, "u", 0, 4, 0.5),
)


def _mimo_terms(u_lag: int) -> tuple:
    a, b = u_lag, u_lag + 1
    return (
        Term(0, "y", 0, 1, 1.0, 2),
        Term(0, "y", 1, 1, 0.7, 2),
        Term(0, "u", 0, a, 1.0),
        Term(0, "u", 1, a, 0.5),
        Term(0, "u", 0, b, 0.4, 3),
        Term(0, "u", 1, b, 0.5),
        Term(1, "y", 0, 1, 0.5, 2),
        Term(1, "y", 1, 1, 1.3, 2),
        Term(1, "u", 0, a, 0.4),
        Term(1, "u", 1, a, 1.2),
        Term(1, "u", 0, b, 0.2),
        Term(1, "u", 1, b, 0.4, 3),
    )


EXAMPLE1 = separable_plant(_EX1_TERMS, n_y=1, n_u=4, My=1, Mu=1, name="example1")
EXAMPLE2 = separable_plant(_mimo_terms(2), n_y=1, n_u=3, My=2, Mu=2, name="example2")
EXAMPLE4 = separable_plant(_mimo_terms(1), n_y=1, n_u=2, My=2, Mu=2, name="example4")

PLANTS = {"example1": EXAMPLE1, "example2": EXAMPLE2, "example3": EXAMPLE2, "example4": EXAMPLE4}


def plant_example1(y_hist, u_hist) -> float:
    """Linear SISO plant ``y(k) = 0.8 y(k-2) + u(k-4) + 0.5 u(k-5)``."""
    return float(EXAMPLE1.step(y_hist, u_hist, np.zeros(1))[0])


def plant_example2(y_hist, u_hist, w=(0.0, 0.0)) -> np.ndarray:
    """Two-by-two polynomial plant with input lags 3 and 4, plus ``w``."""
    return EXAMPLE2.step(y_hist, u_hist, w)


def plant_example4(y_hist, u_hist, w=(0.0, 0.0)) -> np.ndarray:
    """The same plant with input lags 2 and 3."""
    return EXAMPLE4.step(y_hist, u_hist, w)


# ---------------------------------------------------------------------------
# references and disturbances

EQ57_LAST = 700


def reference_eq57(k: int) -> np.ndarray:
    """Composite two-channel reference: sinusoids up to ``k = 350``, then a square wave.

    The square wave is ``0.5 (-1)^round((k+1)/50)`` with MATLAB rounding
    (halves away from zero).
    """
    if not 1 <= k <= EQ57_LAST:
        raise OutOfRange(f"reference defined for 1 <= k <= {EQ57_LAST}, got {k}")
    if k <= 350:
        r1 = 0.2 * np.sin(k / 20) - 0.2 * np.sin(k / 10) - 0.2 * np.cos(k / 5) + 0.2 * np.cos(k / 2)
        r2 = -0.2 * np.cos(k / 15) - 0.2 * np.sin(k / 25) + 0.2 * np.sin(k / 5) + 0.2 * np.cos(k / 3)
        return np.array([r1, r2])
    n = int(np.floor((k + 1) / 50 + 0.5))
    s = 0.5 * (-1.0) ** n
    return np.array([s, -s])


def disturbance_eq60(k: int) -> np.ndarray:
    """Known disturbance ``w(k+1)``."""
    return np.array(
        [
            0.2 * np.sin(k / 10) + 0.1 * np.cos(k / 30),
            0.1 * np.sin(k / 20) + 0.2 * np.cos(k / 15),
        ]
    )


EQ64_SCALE = np.array([0.3, 0.2])


def disturbance_eq64(rng: np.random.Generator) -> np.ndarray:
    """One white-noise sample, uniform on ``[0, 0.3) x [0, 0.2)``."""
    return rng.random(2) * EQ64_SCALE


# ---------------------------------------------------------------------------
# scenario and trace


@dataclass
class Scenario:
    """Everything needed for a reproducible closed-loop run.

    ``reference`` is ``"unit_ramp"``, ``"eq57"``, ``"zero"`` or a table of
    values (one row per ``k = 1, 2, ...``; the last row is held).
    ``disturbance`` is ``"none"``, ``"eq60"`` or ``"eq64"``.
    """

    plant_id: str
    controller: ControllerConfig
    constraints: Optional[ConstraintSet] = None
    reference: Union[str, Sequence] = "unit_ramp"
    disturbance: str = "none"
    steps: int = 700
    seed: int = 42
    init_y: float = 0.0
    init_u: float = 0.0
    plant: Optional[PlantModel] = None
    window: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.plant is None:
            if self.plant_id not in PLANTS:
                raise ValueError(f"unknown plant {self.plant_id!r}; custom plants need an explicit model")
            self.plant = PLANTS[self.plant_id]
        if self.disturbance not in ("none", "eq60", "eq64"):
            raise ValueError(f"unknown disturbance {self.disturbance!r}")
        if isinstance(self.reference, str) and self.reference not in ("unit_ramp", "eq57", "zero"):
            raise ValueError(f"unknown reference {self.reference!r}")
        if self.controller.constrained and self.constraints is None:
            raise ValueError(f"mode {self.controller.mode} needs constraints")
        if self.controller.compensated and self.disturbance == "eq64":
            raise ValueError("disturbance compensation needs a known disturbance (eq60 or none)")


@dataclass
class Trace:
    """Per-step log.  ``unc_gap`` is ``max|dU - dU_unconstrained|`` on
    constrained steps whose unconstrained plan is feasible, else NaN."""

    k: np.ndarray
    y: np.ndarray
    y_star: np.ndarray
    u: np.ndarray
    w: np.ndarray
    e: np.ndarray
    du: np.ndarray
    cost: np.ndarray
    iters: np.ndarray
    pjm: np.ndarray
    violation: np.ndarray
    converged: np.ndarray
    unc_gap: np.ndarray
    pjm_mode: str = "frozen"
    w_prev: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.k.size

    def truncated(self, n: int) -> "Trace":
        fields = ("k", "y", "y_star", "u", "w", "e", "du", "cost", "iters", "pjm", "violation", "converged", "unc_gap")
        kw = {f: getattr(self, f)[:n] for f in fields}
        return Trace(**kw, pjm_mode=self.pjm_mode, w_prev=self.w_prev)

    def header(self) -> list:
        My, Mu = self.y.shape[1], self.u.shape[1]
        h = ["k"]
        h += [f"y{i + 1}" for i in range(My)]
        h += [f"ystar{i + 1}" for i in range(My)]
        h += [f"u{i + 1}" for i in range(Mu)]
        h += [f"w{i + 1}" for i in range(My)]
        h += [f"e{i + 1}" for i in range(My)]
        return h + ["cost", "iters"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.header())
            for i in range(len(self)):
                row = [str(int(self.k[i]))]
                for arr in (self.y, self.y_star, self.u, self.w, self.e):
                    row += [_fmt(v) for v in arr[i]]
                row += [_fmt(self.cost[i]), str(int(self.iters[i]))]
                wr.writerow(row)

    def write_pjm_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k"] + [f"phi{j + 1}" for j in range(self.pjm.shape[1])])
            for i in range(len(self)):
                wr.writerow([str(int(self.k[i]))] + [_fmt(v) for v in self.pjm[i]])


def _fmt(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# runner


def _reference_fn(kind, My: int):
    if isinstance(kind, str):
        if kind == "unit_ramp":
            return lambda t: np.full(My, float(t))
        if kind == "zero":
            return lambda t: np.zeros(My)
        if My != 2:
            raise DimensionMismatch("the eq57 reference has two channels")
        return lambda t: reference_eq57(min(max(t, 1), EQ57_LAST))
    table = np.asarray(kind, dtype=float)
    table = table.reshape(table.shape[0], -1)
    if table.shape[1] != My:
        raise DimensionMismatch(f"reference table has {table.shape[1]} channels, plant has {My}")
    return lambda t: table[min(max(t, 1), table.shape[0]) - 1]


def _disturbance_table(kind: str, My: int, t_max: int, seed: int) -> dict:
    """``w(t)`` for ``t = -1 .. t_max``; noise is drawn in time order from ``t = 1``."""
    w = {t: np.zeros(My) for t in range(-1, t_max + 1)}
    if kind == "eq60":
        for t in w:
            w[t] = disturbance_eq60(t - 1)
    elif kind == "eq64":
        rng = np.random.default_rng(seed)
        for t in range(1, t_max + 1):
            w[t] = disturbance_eq64(rng)
    return w


def run_closed_loop(s: Scenario, tol: Tolerances = TOL) -> Trace:
    """Simulate ``s.steps`` control periods.

    Rows are ``k = 1 .. steps``.  ``y(t) = init_y`` for ``t <= 1`` and
    ``u(t) = init_u`` for ``t <= 0``.  At each ``k`` the controller picks
    ``u(k)`` and the plant then produces ``y(k+1)`` with the true ``w(k+1)``.

    Raises
    ------
    SimulationDiverged
        If any output exceeds ``tol.divergence_guard`` in magnitude; the
        partial trace is attached.
    """
    plant, cfg, N = s.plant, s.controller, s.controller.N
    My, Mu, Ly, Lu = plant.My, plant.Mu, plant.Ly, plant.Lu
    depth = max(Ly, Lu) + 3
    ref = _reference_fn(s.reference, My)
    wtab = _disturbance_table(s.disturbance, My, s.steps + N + 1, s.seed)

    ys = {t: np.full(My, float(s.init_y)) for t in range(1 - depth, 2)}
    us = {t: np.full(Mu, float(s.init_u)) for t in range(-depth, 1)}

    n, npjm = s.steps, (Ly * My * My + Lu * My * Mu)
    out = {
        "y": np.zeros((n, My)),
        "y_star": np.zeros((n, My)),
        "u": np.zeros((n, Mu)),
        "w": np.zeros((n, My)),
        "e": np.zeros((n, My)),
        "du": np.zeros((n, Mu)),
        "cost": np.zeros(n),
        "iters": np.zeros(n, dtype=int),
        "pjm": np.zeros((n, npjm)),
        "violation": np.zeros(n),
        "converged": np.ones(n, dtype=bool),
        "unc_gap": np.full(n, np.nan),
    }

    def pack(filled: int) -> Trace:
        t = Trace(k=np.arange(1, n + 1), **out, pjm_mode=cfg.pjm_mode)
        t.w_prev = np.array([wtab[0], wtab[-1]])
        return t.truncated(filled)

    for i, k in enumerate(range(1, n + 1)):
        y_past = np.array([ys[k - l] for l in range(Ly + 1)])
        u_past = np.array([us[k - 1 - l] for l in range(Lu + 1)])
        h = HistoryWindow(y_past, np.vstack([u_past[:1], u_past]))
        dx = lifted_state(h, Ly, Lu)
        Ystar = np.concatenate([ref(k + j) for j in range(1, N + 1)])
        dW_hat = None
        if cfg.compensated:
            dW_hat = np.concatenate([wtab[k + j] - wtab[k + j - 1] for j in range(1, N + 1)])

        def solve(hm) -> ControlStep:
            if not cfg.constrained:
                return unconstrained_step(hm, cfg, Ystar, y_past[0], dx, u_past[0], dW_hat)
            try:
                return constrained_step(hm, cfg, s.constraints, Ystar, y_past[0], dx, u_past[0], dW_hat, tol)
            except NotConverged as exc:
                # the last iterate is feasible; apply it and flag the step
                return exc.iterate

        def seq(dU):
            return predicted_pjm_sequence(plant, y_past, u_past, dU, N, dW_hat)

        res = solve_fixed_point(seq, solve, cfg, tol)
        step = res.step
        u_k = step.u_applied
        us[k] = u_k

        hk = HistoryWindow(y_past, np.vstack([u_k[None, :], u_past]))
        pjm_k = pjm_exact(plant, hk) if plant.exact_pjm is not None else pjm_secant(plant, hk)

        out["y"][i] = ys[k]
        out["y_star"][i] = ref(k)
        out["u"][i] = u_k
        out["w"][i] = wtab[k]
        out["e"][i] = ref(k) - ys[k]
        out["du"][i] = step.dU[:Mu]
        out["cost"][i] = step.cost
        out["iters"][i] = step.solver_iters + res.iterations
        out["pjm"][i] = np.concatenate([b.ravel() for b in pjm_k.blocks])
        out["converged"][i] = step.converged and res.converged
        if s.constraints is not None and cfg.constrained:
            U = u_past[0] + np.cumsum(step.dU.reshape(N, Mu), axis=0)
            out["violation"][i] = s.constraints.violation(U)
            if step.unconstrained_dU is not None:
                U_unc = u_past[0] + np.cumsum(step.unconstrained_dU.reshape(N, Mu), axis=0)
                if s.constraints.violation(U_unc) <= 0.0:
                    out["unc_gap"][i] = float(np.max(np.abs(step.dU - step.unconstrained_dU)))

        y_hist = np.array([ys[k - l] for l in range(plant.n_y + 1)])
        u_hist = np.array([us[k - l] for l in range(plant.n_u + 1)])
        ys[k + 1] = np.asarray(plant.step(y_hist, u_hist, wtab[k + 1]), dtype=float)
        if not np.all(np.isfinite(ys[k + 1])) or np.max(np.abs(ys[k + 1])) > tol.divergence_guard:
            raise SimulationDiverged(
                f"|y({k + 1})| exceeded {tol.divergence_guard:g}", k=k + 1, trace=pack(i + 1)
            )
    return pack(n)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    window: tuple
    steady_error: np.ndarray
    steady_spread: np.ndarray
    rms_error: np.ndarray
    max_constraint_violation: float
    ed_median: Optional[np.ndarray] = None
    ed_max: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = {
            "window": list(self.window),
            "steady_error": self.steady_error.tolist(),
            "steady_spread": self.steady_spread.tolist(),
            "rms_error": self.rms_error.tolist(),
            "max_constraint_violation": float(self.max_constraint_violation),
        }
        if self.ed_median is not None:
            d["ed_median_abs_diff"] = self.ed_median.tolist()
            d["ed_max_abs_diff"] = self.ed_max.tolist()
        return d


def ed_reference(t: Trace) -> np.ndarray:
    """``e_d(k) = -(w(k) - w(k-2))``; the first two rows use ``w(0)`` and ``w(-1)``."""
    w = np.vstack([t.w_prev[::-1], t.w]) if t.w_prev is not None else np.vstack([t.w[:1], t.w[:1], t.w])
    return -(w[2:] - w[:-2])


def metrics(t: Trace, window: tuple, ed_after: Optional[int] = None) -> Metrics:
    """Summaries over the inclusive step window ``(k_lo, k_hi)``.

    ``ed_after`` enables the comparison of ``e(k)`` with ``e_d(k)`` over
    ``k > ed_after``.
    """
    k_lo, k_hi = int(window[0]), int(window[1])
    if not (1 <= k_lo <= k_hi <= len(t)):
        raise WindowOutOfRange(f"window ({k_lo}, {k_hi}) outside trace of length {len(t)}")
    e = t.e[k_lo - 1 : k_hi]
    ed_med = ed_max = None
    if ed_after is not None:
        if not 0 <= ed_after < len(t):
            raise WindowOutOfRange(f"ed_after={ed_after} outside trace of length {len(t)}")
        diff = np.abs(t.e - ed_reference(t))[ed_after:]
        ed_med, ed_max = np.median(diff, axis=0), np.max(diff, axis=0)
    return Metrics(
        window=(k_lo, k_hi),
        steady_error=np.mean(e, axis=0),
        steady_spread=np.max(e, axis=0) - np.min(e, axis=0),
        rms_error=np.sqrt(np.mean(e**2, axis=0)),
        max_constraint_violation=float(np.max(t.violation)) if len(t) else 0.0,
        ed_median=ed_med,
        ed_max=ed_max,
    )
