"""Equivalent dynamic linearization of discrete-time nonlinear plants.

A plant ``y(k+1) = f(y(k), ..., y(k-n_y), u(k), ..., u(k-n_u)) + w(k+1)``
is rewritten along its trajectory as the exact incremental model

    dy(k+1) = Phi_1 dy(k) + ... + Phi_Ly dy(k-Ly+1)
              + Phi_{Ly+1} du(k) + ... + Phi_{Ly+Lu} du(k-Lu+1) + dw(k+1)

with pseudo orders ``Ly = n_y + 1`` and ``Lu = n_u + 1``.  The blocks are
the pseudo Jacobi matrix (PJM); for a SISO plant it collapses to the PG
vector.

Histories are newest-first arrays: ``y[l]`` is ``y(k - l)`` and ``u[l]`` is
``u(k - l)``, each row a channel vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InsufficientHistory, MissingExactForm


def as_history(a) -> np.ndarray:
    """Coerce a buffer to shape ``(depth, channels)``; 1-D input is SISO."""
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass
class HistoryWindow:
    """Newest-first output/input (and optional disturbance) buffers."""

    y: np.ndarray
    u: np.ndarray
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y = as_history(self.y)
        self.u = as_history(self.u)
        if self.w is not None:
            self.w = as_history(self.w)


@dataclass
class DeltaRegressor:
    """Stacked increments ``dY = [dy(k); ...; dy(k-Ly+1)]`` and ``dU = [du(k); ...]``."""

    dY: np.ndarray
    dU: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.dY, self.dU])


@dataclass
class PJM:
    """Pseudo Jacobi matrix as a list of ``Ly + Lu`` blocks.

    ``blocks[i]`` for ``i < Ly`` is ``M_y x M_y`` and multiplies
    ``dy(k - i)``; ``blocks[Ly + j]`` is ``M_y x M_u`` and multiplies
    ``du(k - j)``.
    """

    blocks: list
    Ly: int
    Lu: int

    def __post_init__(self):
        self.blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.blocks]
        if len(self.blocks) != self.Ly + self.Lu:
            raise DimensionMismatch(f"expected {self.Ly + self.Lu} blocks, got {len(self.blocks)}")
        My = self.blocks[0].shape[0]
        for i, b in enumerate(self.blocks):
            want_cols = My if i < self.Ly else self.blocks[-1].shape[1]
            if b.shape != (My, want_cols):
                raise DimensionMismatch(f"block {i + 1} has shape {b.shape}, expected {(My, want_cols)}")

    @property
    def My(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def Mu(self) -> int:
        return self.blocks[-1].shape[1]

    @property
    def phi_y(self) -> list:
        return self.blocks[: self.Ly]

    @property
    def phi_u(self) -> list:
        return self.blocks[self.Ly :]

    def matrix(self) -> np.ndarray:
        """The transposed PJM ``[Phi_1 ... Phi_{Ly+Lu}]`` of shape ``M_y x (Ly M_y + Lu M_u)``."""
        return np.hstack(self.blocks)

    def pg_vector(self) -> np.ndarray:
        """Flat PG vector; only meaningful for a SISO plant."""
        if self.My != 1 or self.Mu != 1:
            raise DimensionMismatch("PG vector is defined for SISO plants only")
        return self.matrix().ravel()

    @classmethod
    def from_pg_vector(cls, phi, Ly: int, Lu: int) -> "PJM":
        phi = np.asarray(phi, dtype=float).ravel()
        return cls([[[v]] for v in phi], Ly, Lu)

    @classmethod
    def zeros(cls, Ly: int, Lu: int, My: int, Mu: int) -> "PJM":
        return cls([np.zeros((My, My))] * Ly + [np.zeros((My, Mu))] * Lu, Ly, Lu)


@dataclass(frozen=True)
class Term:
    """One additive monomial ``coef * v**power`` of a separable plant.

    ``var`` is ``"y"`` or ``"u"``; ``lag`` is ``l`` in ``v_ch(k - l)`` of the
    one-step-ahead form ``y_out(k+1) = f(...)``.
    """

    out: int
    var: str
    ch: int
    lag: int
    coef: float
    power: int = 1


def _diff_quotient(new: float, old: float, power: int) -> float:
    # (new**p - old**p) / (new - old), expanded so it stays exact when new == old
    if power == 1:
        return 1.0
    return sum(new ** i * old ** (power - 1 - i) for i in range(power))


@dataclass
class PlantModel:
    """A discrete-time plant in one-step-ahead form.

    ``step(y_hist, u_hist, w_next)`` returns ``y(k+1)`` from newest-first
    histories holding ``n_y + 1`` outputs and ``n_u + 1`` inputs.
    ``exact_pjm(window)`` optionally returns the exact PJM.
    """

    n_y: int
    n_u: int
    My: int
    Mu: int
    step: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    exact_pjm: Optional[Callable[[HistoryWindow], PJM]] = None
    name: str = "custom"
    terms: Sequence[Term] = field(default_factory=tuple)

    @property
    def Ly(self) -> int:
        return self.n_y + 1

    @property
    def Lu(self) -> int:
        return self.n_u + 1

    def f(self, y_hist, u_hist) -> np.ndarray:
        """Undisturbed part ``f(varphi(k))``."""
        return np.asarray(self.step(y_hist, u_hist, np.zeros(self.My)), dtype=float)


def separable_plant(terms: Sequence[Term], n_y: int, n_u: int, My: int, Mu: int, name: str = "custom") -> PlantModel:
    """Build a plant that is a sum of single-variable monomials.

    Both the one-step map and the exact PJM are generated from ``terms``.
    The PJM uses the exact identity
    ``c (a**p - b**p) = c (a**(p-1) + a**(p-2) b + ... + b**(p-1)) (a - b)``
    per term, so the incremental model reproduces the plant to round-off.
    """
    terms = tuple(terms)
    for t in terms:
        if t.var not in ("y", "u"):
            raise ValueError(f"term variable must be 'y' or 'u', got {t.var!r}")
        max_lag = n_y if t.var == "y" else n_u
        width = My if t.var == "y" else Mu
        if not (0 <= t.lag <= max_lag) or not (0 <= t.ch < width) or not (0 <= t.out < My):
            raise ValueError(f"term {t} is outside the declared orders/dimensions")
        if t.power < 1:
            raise ValueError("term powers must be >= 1")

    def step(y_hist, u_hist, w_next):
        y_hist = as_history(y_hist)
        u_hist = as_history(u_hist)
        if y_hist.shape[0] < n_y + 1 or u_hist.shape[0] < n_u + 1:
            raise InsufficientHistory(
                f"{name}: need {n_y + 1} outputs and {n_u + 1} inputs, got {y_hist.shape[0]} and {u_hist.shape[0]}"
            )
        out = np.array(w_next, dtype=float).reshape(My).copy()
        for t in terms:
            src = y_hist if t.var == "y" else u_hist
            out[t.out] += t.coef * src[t.lag, t.ch] ** t.power
        return out

    Ly, Lu = n_y + 1, n_u + 1

    def exact(window: HistoryWindow) -> PJM:
        _check_depth(window, Ly, Lu)
        blocks = [np.zeros((My, My)) for _ in range(Ly)] + [np.zeros((My, Mu)) for _ in range(Lu)]
        for t in terms:
            if t.var == "y":
                new, old = window.y[t.lag, t.ch], window.y[t.lag + 1, t.ch]
                blocks[t.lag][t.out, t.ch] += t.coef * _diff_quotient(new, old, t.power)
            else:
                new, old = window.u[t.lag, t.ch], window.u[t.lag + 1, t.ch]
                blocks[Ly + t.lag][t.out, t.ch] += t.coef * _diff_quotient(new, old, t.power)
        return PJM(blocks, Ly, Lu)

    return PlantModel(n_y=n_y, n_u=n_u, My=My, Mu=Mu, step=step, exact_pjm=exact, name=name, terms=terms)


def _check_depth(h: HistoryWindow, Ly: int, Lu: int) -> None:
    if h.y.shape[0] < Ly + 1 or h.u.shape[0] < Lu + 1:
        raise InsufficientHistory(
            f"need {Ly + 1} outputs and {Lu + 1} inputs in the window, got {h.y.shape[0]} and {h.u.shape[0]}"
        )


def delta_regressor(h: HistoryWindow, Ly: int, Lu: int) -> DeltaRegressor:
    """Form ``dH(k)`` from a newest-first window."""
    _check_depth(h, Ly, Lu)
    dY = (h.y[:Ly] - h.y[1 : Ly + 1]).ravel()
    dU = (h.u[:Lu] - h.u[1 : Lu + 1]).ravel()
    return DeltaRegressor(dY=dY, dU=dU)


def pjm_exact(plant: PlantModel, h: HistoryWindow) -> PJM:
    """Exact PJM of ``plant`` at the window ``h``.

    Raises
    ------
    MissingExactForm
        If the plant has no analytic PJM.
    """
    if plant.exact_pjm is None:
        raise MissingExactForm(f"plant {plant.name!r} provides no analytic PJM; use pjm_secant")
    return plant.exact_pjm(h)


def pjm_secant(plant: PlantModel, h: HistoryWindow, probe: float = 1e-6) -> PJM:
    """Approximate PJM from forward difference quotients of ``f`` at ``varphi(k)``.

    Each regressor coordinate is perturbed by ``probe`` in turn.  This is a
    derivative estimate, so unlike :func:`pjm_exact` it carries no exactness
    guarantee for nonlinear plants.
    """
    if probe <= 0:
        raise ValueError("probe must be positive")
    Ly, Lu = plant.Ly, plant.Lu
    _check_depth(h, Ly, Lu)
    y_hist = h.y[: plant.n_y + 1].copy()
    u_hist = h.u[: plant.n_u + 1].copy()
    base = plant.f(y_hist, u_hist)
    blocks = [np.zeros((plant.My, plant.My)) for _ in range(Ly)] + [np.zeros((plant.My, plant.Mu)) for _ in range(Lu)]
    for lag in range(Ly):
        for ch in range(plant.My):
            yp = y_hist.copy()
            yp[lag, ch] += probe
            blocks[lag][:, ch] = (plant.f(yp, u_hist) - base) / probe
    for lag in range(Lu):
        for ch in range(plant.Mu):
            up = u_hist.copy()
            up[lag, ch] += probe
            blocks[Ly + lag][:, ch] = (plant.f(y_hist, up) - base) / probe
    return PJM(blocks, Ly, Lu)


def edlm_step(pjm: PJM, reg: DeltaRegressor, dw_next=None) -> np.ndarray:
    """Output increment ``dy(k+1) = PJM^T dH(k) + dw(k+1)``."""
    M = pjm.matrix()
    x = reg.stacked
    if M.shape[1] != x.size:
        raise DimensionMismatch(f"PJM has {M.shape[1]} columns, regressor has {x.size} entries")
    dy = M @ x
    if dw_next is not None:
        dw_next = np.asarray(dw_next, dtype=float).reshape(-1)
        if dw_next.size != dy.size:
            raise DimensionMismatch(f"disturbance increment has {dw_next.size} entries, expected {dy.size}")
        dy = dy + dw_next
    return dy


def predicted_pjm_sequence(plant: PlantModel, y_past, u_past, dU: Optional[np.ndarray], N: int, dW_hat=None) -> list:
    """PJMs at ``k, ..., k+N-1`` along the trajectory predicted for a plan.

    ``y_past`` is newest-first from ``y(k)``; ``u_past`` is newest-first from
    ``u(k-1)``.  ``dU`` stacks the planned increments ``du(k), ..., du(k+N-1)``;
    ``None`` returns the single PJM at ``k`` with ``u(k) = u(k-1)``.  Future
    outputs follow the exact incremental model, so each PJM matches the one
    the plant would produce if the plan and the preview ``dW_hat`` were
    realised.
    """
    ys = [row for row in as_history(y_past)[::-1]]
    us = [row for row in as_history(u_past)[::-1]]
    Ly, Lu, Mu, My = plant.Ly, plant.Lu, plant.Mu, plant.My

    def window():
        y = np.array(ys[-(Ly + 1) :][::-1])
        u = np.array(us[-(Lu + 1) :][::-1])
        return HistoryWindow(y, u)

    def pjm_of(h):
        return pjm_exact(plant, h) if plant.exact_pjm is not None else pjm_secant(plant, h)

    if dU is None:
        us.append(us[-1].copy())
        return [pjm_of(window())]
    dU = np.asarray(dU, dtype=float).reshape(N, Mu)
    dW = None if dW_hat is None else np.asarray(dW_hat, dtype=float).reshape(N, My)
    seq = []
    for i in range(N):
        us.append(us[-1] + dU[i])
        h = window()
        pjm = pjm_of(h)
        seq.append(pjm)
        if i < N - 1:
            dy = edlm_step(pjm, delta_regressor(h, Ly, Lu), None if dW is None else dW[i])
            ys.append(ys[-1] + dy)
    return seq
