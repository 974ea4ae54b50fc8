"""Closed-loop analysis of the explicit law under a frozen PJM.

Two forms are provided.

``analysis1`` eliminates the control law exactly.  With ``G = g^T P`` and
signals ``Y = y(k+1)``, ``V = du(k)`` the loop is the polynomial system

    [ A Delta                       -phi_Lu ] [Y]   [ dw(k+1)                      ]
    [ z^-1 (G E + G PsiT_y T_y Delta)   D   ] [V] = [ G H y*(k+1) - G PhiWT dW_hat ]

where ``A = I - z^-1 phi_Ly``, ``D = I + z^-1 G PsiT_u T_u`` and
``H = [1, z, ..., z^(N-1)]^T``.  The second block row is multiplied by
``z^-(N-1)`` so every entry is a polynomial in ``z^-1``; this only adds
roots at the origin.  The characteristic polynomial is the determinant.

``analysis2`` is the stationarity form
``T1 = lam Delta A + phi_Lu g^T PhiT^T Q H`` (again scaled by
``z^-(N-1)``).  It is exact only when ``PhiT`` has a single nonzero column
block, i.e. ``N`` equals the dead time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .control import ControllerConfig, gain
from .edlm import PJM
from .errors import DivergentLimit, UnstablePole, UnsupportedConfiguration
from .numeric import TOL, Tolerances, ZPolyMatrix, ZPolynomial, ZRational, final_value, poly_roots, polymat_det, polymat_from_coeffs
from .prediction import HorizonMatrices

Poly = Union[ZPolynomial, ZPolyMatrix]


class RationalMatrix:
    """Matrix of rational functions sharing one denominator."""

    def __init__(self, num: ZPolyMatrix, den: ZPolynomial):
        self.num = num
        self.den = den

    @property
    def shape(self):
        return self.num.shape

    def entry(self, i: int, j: int) -> ZRational:
        return ZRational(self.num[i, j], self.den)

    def __call__(self, x):
        return self.num.evaluate(x) / self.den(np.asarray(x))[..., None, None]

    def as_polynomial(self, tol: float = TOL.exact_division) -> ZPolyMatrix:
        """Entrywise exact division; raises ``ValueError`` if any entry is not a polynomial."""
        rows, cols = self.shape
        scale = max(float(np.max(np.abs(self.num.coefficient_array()))), 1e-300)
        out = []
        for i in range(rows):
            row = []
            for j in range(cols):
                n = self.num[i, j]
                if np.max(np.abs(n.coeffs)) <= tol * scale:
                    row.append(ZPolynomial())
                else:
                    row.append(ZRational(n, self.den).as_polynomial(tol))
            out.append(row)
        return ZPolyMatrix(out)


@dataclass
class ClosedLoopModel:
    """Polynomial description of a closed loop.

    ``char_poly`` is a :class:`ZPolynomial` for SISO loops and the loop's
    polynomial matrix otherwise (its determinant is the characteristic
    polynomial).  ``ref_numerator`` is the numerator of ``y / y*`` over
    ``det(char_poly)``.  ``advance`` records the ``z^-(N-1)`` scaling.
    """

    char_poly: Poly
    ref_numerator: Poly
    dist_numerator: Optional[Poly]
    form: str
    My: int
    Mu: int
    advance: int
    exact: bool = True
    system: Optional[ZPolyMatrix] = field(default=None, repr=False)
    dist_rhs: dict = field(default_factory=dict, repr=False)

    @property
    def siso(self) -> bool:
        return self.My == 1 and self.Mu == 1

    def determinant(self) -> ZPolynomial:
        if isinstance(self.char_poly, ZPolynomial):
            return self.char_poly
        return polymat_det(self.char_poly)

    def error_transfer(self) -> Union[ZRational, RationalMatrix]:
        """``e / y*`` with ``e = y* - y``."""
        det = self.determinant()
        if isinstance(self.ref_numerator, ZPolynomial):
            return ZRational(det - self.ref_numerator, det)
        eye = ZPolyMatrix.identity(self.My, det)
        return RationalMatrix(eye - self.ref_numerator, det)


@dataclass
class StabilityReport:
    roots: np.ndarray
    max_modulus: float
    stable: bool

    def to_dict(self) -> dict:
        return {
            "roots": [[float(r.real), float(r.imag)] for r in self.roots],
            "max_modulus": float(self.max_modulus),
            "stable": bool(self.stable),
        }


@dataclass
class SteadyStateReport:
    """``limit_error`` is a float (SISO), a matrix (MIMO, row = error channel,
    column = reference channel) or ``None`` when the limit does not exist."""

    input_kind: str
    limit_error: Optional[Union[float, np.ndarray]]
    divergent: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        le = self.limit_error
        if isinstance(le, np.ndarray):
            le = le.tolist()
        return {"input_kind": self.input_kind, "limit_error": le, "divergent": self.divergent, "reason": self.reason}


# ---------------------------------------------------------------------------
# construction helpers


def _phi_polys(pjm: PJM):
    """``A = I - z^-1 phi_Ly`` and ``phi_Lu`` as polynomial matrices."""
    My = pjm.My
    a_coeffs = [np.eye(My)] + [-b for b in pjm.phi_y]
    return polymat_from_coeffs(a_coeffs), polymat_from_coeffs(pjm.phi_u)


def _advanced(Gm: np.ndarray, N: int, My: int) -> ZPolyMatrix:
    """``G H z^-(N-1)``: block ``j`` of ``G`` gets the delay ``z^-(N-1-j)``."""
    blocks = [Gm[:, j * My : (j + 1) * My] for j in range(N)]
    return polymat_from_coeffs(blocks[::-1])


def _delta_mat(M: ZPolyMatrix) -> ZPolyMatrix:
    return M.scale(ZPolynomial.delta())


def _stack(blocks) -> ZPolyMatrix:
    rows = []
    for brow in blocks:
        for i in range(brow[0].shape[0]):
            rows.append([e for b in brow for e in b.entries[i]])
    return ZPolyMatrix(rows)


def _delayed(M: ZPolyMatrix, k: int) -> ZPolyMatrix:
    return ZPolyMatrix([[e.shift(k) for e in r] for r in M.entries])


def char_poly_analysis1(pjm: PJM, hm: HorizonMatrices, cfg: ControllerConfig) -> ClosedLoopModel:
    """Exact closed loop of the unconstrained law with frozen PJM.

    Works for SISO and MIMO plants.  For SISO the characteristic polynomial
    is returned as a :class:`ZPolynomial`; otherwise the loop matrix is
    kept and :func:`stability_check` takes its determinant.
    """
    N, My, Mu, Ly, Lu = hm.N, hm.My, hm.Mu, pjm.Ly, pjm.Lu
    P = gain(hm, cfg)
    G = P[:Mu]
    A, phi_u = _phi_polys(pjm)
    GPsi = G @ hm.PsiT
    Gy = GPsi[:, : Ly * My]
    Gu = GPsi[:, Ly * My :]
    GE = G @ hm.E
    # z^-1 (G E + G PsiT_y T_y Delta)
    gy_poly = polymat_from_coeffs([Gy[:, i * My : (i + 1) * My] for i in range(Ly)])
    out_fb = _delayed(polymat_from_coeffs([GE]) + _delta_mat(gy_poly), 1)
    D = ZPolyMatrix.identity(Mu) + _delayed(polymat_from_coeffs([Gu[:, j * Mu : (j + 1) * Mu] for j in range(Lu)]), 1)
    adv = N - 1
    row1 = [_delta_mat(A), ZPolyMatrix([[-e for e in r] for r in phi_u.entries])]
    row2 = [_delayed(out_fb, adv), _delayed(D, adv)]
    M = _stack([row1, row2])

    ref_rhs = _stack([[ZPolyMatrix.from_array(np.zeros((My, My)))], [_advanced(G, N, My)]])
    GW = G @ hm.PhiWT
    dist_comp = _stack([[ZPolyMatrix.identity(My)], [ZPolyMatrix([[-e for e in r] for r in _advanced(GW, N, My).entries])]])
    dist_plain = _stack([[ZPolyMatrix.identity(My)], [ZPolyMatrix.from_array(np.zeros((Mu, My)))]])

    adj = M.adjugate()
    ref_num = (adj @ ref_rhs).block(slice(0, My), slice(0, My))
    if My == 1 and Mu == 1:
        char = polymat_det(M)
        ref_num = ref_num[0, 0]
    else:
        char = M
    return ClosedLoopModel(
        char_poly=char,
        ref_numerator=ref_num,
        dist_numerator=(adj @ dist_plain).block(slice(0, My), slice(0, My)),
        form="analysis1",
        My=My,
        Mu=Mu,
        advance=adv,
        exact=True,
        system=M,
        dist_rhs={"compensated": dist_comp, "uncompensated": dist_plain, "adjugate": adj},
    )


def _single_column_block(hm: HorizonMatrices, rel: float = 1e-12) -> bool:
    Mu = hm.Mu
    rest = hm.PhiT[:, Mu:]
    scale = max(float(np.max(np.abs(hm.PhiT))), 1e-300)
    return rest.size == 0 or float(np.max(np.abs(rest))) <= rel * scale


def char_poly_analysis2(pjm: PJM, hm: HorizonMatrices, cfg: ControllerConfig) -> ClosedLoopModel:
    """``T1 = lam Delta (I - z^-1 phi_Ly) + phi_Lu g^T PhiT^T Q H``, scaled by ``z^-(N-1)``.

    ``exact`` is set when ``PhiT`` has one nonzero column block (``N``
    equal to the dead time); only then does ``T1`` describe the loop.
    """
    N, My, Mu = hm.N, hm.My, hm.Mu
    Q = cfg.Q(My)
    G2 = (hm.PhiT.T @ Q)[:Mu]
    A, phi_u = _phi_polys(pjm)
    adv = N - 1
    ref = phi_u @ _advanced(G2, N, My)
    lam_term = _delayed(_delta_mat(A), adv).scale(ZPolynomial.constant(cfg.lam_eff))
    T1 = lam_term + ref
    if My == 1:
        return ClosedLoopModel(
            char_poly=T1[0, 0],
            ref_numerator=ref[0, 0],
            dist_numerator=None,
            form="analysis2",
            My=My,
            Mu=Mu,
            advance=adv,
            exact=_single_column_block(hm),
        )
    # y = T1^-1 ref y*, so the numerator over det(T1) is adj(T1) ref
    return ClosedLoopModel(
        char_poly=T1,
        ref_numerator=T1.adjugate() @ ref,
        dist_numerator=None,
        form="analysis2",
        My=My,
        Mu=Mu,
        advance=adv,
        exact=_single_column_block(hm),
    )


# ---------------------------------------------------------------------------
# reports


def stability_check(m: ClosedLoopModel, tol: Tolerances = TOL) -> StabilityReport:
    """Roots (z-plane) of the characteristic polynomial; stable iff all ``|z| < 1 - margin``."""
    roots = poly_roots(m.determinant(), tol)
    mx = float(np.max(np.abs(roots))) if roots.size else 0.0
    return StabilityReport(roots=roots, max_modulus=mx, stable=mx < 1.0 - tol.stability_margin)


def steady_state_error(m: ClosedLoopModel, input_kind: str, tol: Tolerances = TOL) -> SteadyStateReport:
    """Final value of ``e = y* - y`` for a unit step or unit-slope ramp reference.

    Raises
    ------
    UnsupportedConfiguration
        For ``analysis2`` with ``lam > 0`` when ``N`` is not the dead time.
    """
    if input_kind not in ("step", "ramp"):
        raise ValueError(f"unknown input kind {input_kind!r}")
    if m.form == "analysis2" and not m.exact:
        raise UnsupportedConfiguration(
            "the stationarity form is exact only when N equals the dead time; use analysis1 for this configuration"
        )
    st = stability_check(m, tol)
    if not st.stable:
        return SteadyStateReport(input_kind, None, True, f"closed loop unstable (max |z| = {st.max_modulus:.6g})")
    G = m.error_transfer()
    try:
        if isinstance(G, ZRational):
            val: Union[float, np.ndarray] = final_value(G, input_kind, tol)
        else:
            r, c = G.shape
            val = np.array([[final_value(G.entry(i, j), input_kind, tol) for j in range(c)] for i in range(r)])
    except (DivergentLimit, UnstablePole) as exc:
        return SteadyStateReport(input_kind, None, True, str(exc))
    return SteadyStateReport(input_kind, val, False, "")


def disturbance_transfer(
    m: ClosedLoopModel,
    compensated: bool,
    rank_full: Optional[bool] = None,
    wrt: str = "dw",
    pjm: Optional[PJM] = None,
) -> Union[ZRational, RationalMatrix]:
    """Transfer from the disturbance to ``y(k+1)`` (reference held at zero).

    ``wrt="dw"`` gives ``y / dw(k+1)``; ``wrt="w"`` multiplies by ``Delta``
    to give ``y / w(k+1)``.  The result is computed for any loop; when
    ``rank_full`` is asserted, ``pjm`` is checked for
    ``rank Phi_{Ly+1} = M_y``.  Use ``.as_polynomial()`` to reduce the
    result when the loop cancels exactly.

    Raises
    ------
    UnsupportedConfiguration
        For models not built by :func:`char_poly_analysis1`, or when the
        claimed rank condition does not hold.
    """
    if m.form != "analysis1" or "adjugate" not in m.dist_rhs:
        raise UnsupportedConfiguration("disturbance transfers are derived from the analysis1 loop only")
    if wrt not in ("dw", "w"):
        raise ValueError("wrt must be 'dw' or 'w'")
    if rank_full and pjm is not None:
        B0 = pjm.blocks[pjm.Ly]
        if np.linalg.matrix_rank(B0) != pjm.My:
            raise UnsupportedConfiguration(f"rank Phi_Ly+1 = {np.linalg.matrix_rank(B0)} < M_y = {pjm.My}")
    adj = m.dist_rhs["adjugate"]
    rhs = m.dist_rhs["compensated" if compensated else "uncompensated"]
    num = (adj @ rhs).block(slice(0, m.My), slice(0, m.My))
    if wrt == "w":
        num = _delta_mat(num)
    det = m.determinant()
    if m.My == 1:
        return ZRational(num[0, 0], det)
    return RationalMatrix(num, det)
