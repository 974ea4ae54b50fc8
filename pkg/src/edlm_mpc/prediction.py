"""Lifted state-space form of the incremental model and N-step prediction.

The lifted state is ``dx(k) = [dy(k); ...; dy(k-Ly+1); du(k-1); ...; du(k-Lu)]``
and evolves as ``dx(k+1) = A dx(k) + B du(k) + T dw(k+1)`` with
``dy(k+1) = C dx(k+1)``.  The last input slot ``du(k-Lu)`` is carried with
a zero coefficient so that the state dimension is ``Ly My + Lu Mu``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .edlm import PJM, HistoryWindow, _check_depth
from .errors import DimensionMismatch


@dataclass(frozen=True)
class LiftedModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    T: np.ndarray
    Ly: int
    Lu: int
    My: int
    Mu: int

    @property
    def n(self) -> int:
        return self.A.shape[0]


def lift(pjm: PJM) -> LiftedModel:
    """Companion-form ``A, B, C, T`` for one PJM."""
    Ly, Lu, My, Mu = pjm.Ly, pjm.Lu, pjm.My, pjm.Mu
    n = Ly * My + Lu * Mu
    u0 = Ly * My
    A = np.zeros((n, n))
    for i in range(Ly):
        A[:My, i * My : (i + 1) * My] = pjm.blocks[i]
    # Phi_{Ly+1+j} multiplies du(k-j), stored in input slot j-1 of dx(k)
    for j in range(1, Lu):
        A[:My, u0 + (j - 1) * Mu : u0 + j * Mu] = pjm.blocks[Ly + j]
    for i in range(1, Ly):
        A[i * My : (i + 1) * My, (i - 1) * My : i * My] = np.eye(My)
    for s in range(1, Lu):
        A[u0 + s * Mu : u0 + (s + 1) * Mu, u0 + (s - 1) * Mu : u0 + s * Mu] = np.eye(Mu)
    B = np.zeros((n, Mu))
    B[:My] = pjm.blocks[Ly]
    B[u0 : u0 + Mu] = np.eye(Mu)
    C = np.zeros((My, n))
    C[:, :My] = np.eye(My)
    return LiftedModel(A=A, B=B, C=C, T=C.T.copy(), Ly=Ly, Lu=Lu, My=My, Mu=Mu)


def lifted_state(h: HistoryWindow, Ly: int, Lu: int) -> np.ndarray:
    """``dx(k)`` from a newest-first window whose ``u[0]`` is ``u(k)``.

    ``u[0]`` is ignored, so a placeholder is fine; the window must reach
    back to ``u(k - Lu - 1)``.
    """
    if h.u.shape[0] < Lu + 2:
        raise DimensionMismatch(f"lifted state needs {Lu + 2} inputs (u(k)..u(k-Lu-1)), got {h.u.shape[0]}")
    _check_depth(h, Ly, Lu)
    dY = (h.y[:Ly] - h.y[1 : Ly + 1]).ravel()
    dU = (h.u[1 : Lu + 1] - h.u[2 : Lu + 2]).ravel()
    return np.concatenate([dY, dU])


def propagate(model: LiftedModel, dx, du, dw=None) -> np.ndarray:
    """One step of ``dx(k+1) = A dx(k) + B du(k) + T dw(k+1)``."""
    dx = np.asarray(dx, dtype=float).ravel()
    du = np.asarray(du, dtype=float).ravel()
    if dx.size != model.n:
        raise DimensionMismatch(f"state has {dx.size} entries, model expects {model.n}")
    if du.size != model.Mu:
        raise DimensionMismatch(f"input increment has {du.size} entries, model expects {model.Mu}")
    out = model.A @ dx + model.B @ du
    if dw is not None:
        dw = np.asarray(dw, dtype=float).ravel()
        if dw.size != model.My:
            raise DimensionMismatch(f"disturbance increment has {dw.size} entries, model expects {model.My}")
        out = out + model.T @ dw
    return out


@dataclass(frozen=True)
class HorizonMatrices:
    """Stacked prediction matrices over ``N`` steps.

    ``Y_N(k+1) = E y(k) + PsiT dx(k) + PhiT dU_N(k) + PhiWT dW(k+1)`` where
    the ``*T`` matrices are the row-block prefix sums (``A_N`` times the
    incremental versions).
    """

    Psi: np.ndarray
    PsiT: np.ndarray
    Phi: np.ndarray
    PhiT: np.ndarray
    PhiW: np.ndarray
    PhiWT: np.ndarray
    E: np.ndarray
    A_N: np.ndarray
    N: int
    My: int
    Mu: int
    models: tuple


def _prefix_sum_blocks(M: np.ndarray, N: int, My: int) -> np.ndarray:
    return np.cumsum(M.reshape(N, My, -1), axis=0).reshape(M.shape)


def horizon(pjm_seq: Sequence[PJM] | PJM, N: Optional[int] = None) -> HorizonMatrices:
    """Build the N-step matrices from the PJMs at ``k, k+1, ..., k+N-1``.

    A single PJM (or a length-one sequence with ``N`` given) is frozen
    over the whole horizon.
    """
    if isinstance(pjm_seq, PJM):
        pjm_seq = [pjm_seq]
    pjm_seq = list(pjm_seq)
    if N is None:
        N = len(pjm_seq)
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    if len(pjm_seq) == 1 and N > 1:
        pjm_seq = pjm_seq * N
    if len(pjm_seq) != N:
        raise DimensionMismatch(f"need {N} PJMs, got {len(pjm_seq)}")
    models = tuple(lift(p) for p in pjm_seq)
    m0 = models[0]
    My, Mu, n = m0.My, m0.Mu, m0.n
    C, T = m0.C, m0.T

    Psi = np.zeros((N * My, n))
    prod = np.eye(n)
    for j in range(N):
        prod = models[j].A @ prod
        Psi[j * My : (j + 1) * My] = C @ prod

    Phi = np.zeros((N * My, N * Mu))
    PhiW = np.zeros((N * My, N * My))
    for i in range(N):
        vb = models[i].B
        vt = T
        for j in range(i, N):
            if j > i:
                vb = models[j].A @ vb
                vt = models[j].A @ vt
            Phi[j * My : (j + 1) * My, i * Mu : (i + 1) * Mu] = C @ vb
            PhiW[j * My : (j + 1) * My, i * My : (i + 1) * My] = C @ vt

    A_N = np.kron(np.tril(np.ones((N, N))), np.eye(My))
    E = np.kron(np.ones((N, 1)), np.eye(My))
    return HorizonMatrices(
        Psi=Psi,
        PsiT=_prefix_sum_blocks(Psi, N, My),
        Phi=Phi,
        PhiT=_prefix_sum_blocks(Phi, N, My),
        PhiW=PhiW,
        PhiWT=_prefix_sum_blocks(PhiW, N, My),
        E=E,
        A_N=A_N,
        N=N,
        My=My,
        Mu=Mu,
        models=models,
    )


def free_response(hm: HorizonMatrices, y_now, dx, dW_hat=None) -> np.ndarray:
    """Predicted ``Y_N(k+1)`` with every future input increment set to zero."""
    y_now = np.asarray(y_now, dtype=float).ravel()
    dx = np.asarray(dx, dtype=float).ravel()
    if y_now.size != hm.My:
        raise DimensionMismatch(f"y(k) has {y_now.size} entries, expected {hm.My}")
    if dx.size != hm.PsiT.shape[1]:
        raise DimensionMismatch(f"dx has {dx.size} entries, expected {hm.PsiT.shape[1]}")
    Y = hm.E @ y_now + hm.PsiT @ dx
    if dW_hat is not None:
        dW_hat = np.asarray(dW_hat, dtype=float).ravel()
        if dW_hat.size != hm.PhiWT.shape[1]:
            raise DimensionMismatch(f"disturbance preview has {dW_hat.size} entries, expected {hm.PhiWT.shape[1]}")
        Y = Y + hm.PhiWT @ dW_hat
    return Y
