"""Discrete dual operator: stencil assembly, residuals, and the minimax
perturbation.

Everything is discretized in log coordinates p = ln z, q = ln y where the
operator (with the perturbation component x frozen) is

    -beta*Phi + (beta - r - app)*Phi_p + (m1 - aqq)*Phi_q
    + app*Phi_pp + aqq*Phi_qq + apq*Phi_pq + payoff,

    app = (theta1^2 + x^2)/2,  aqq = m2^2/2,
    apq = -(rho*theta1 + sqrt(1-rho^2)*x)*m2.

Second derivatives use central differences, the cross term the sign-split
seven-point stencil, and first-order terms central differences wherever that
keeps every off-diagonal coefficient non-negative (upwind otherwise).  Cross
diffusion beyond what the grid aspect can carry monotonically is split off
into an explicit remainder stencil (deferred correction), so the implicit
part is always an M-matrix.  The wage edges substitute a reflecting ghost
column (zero first difference across the edge), folded algebraically into
the edge-row stencil.
"""

from __future__ import annotations

import numpy as np

from ..grid import DualGrid
from ..model import ModelParams

# stencil slot layout of the (9, nz, ny) coefficient array
C, E, W, N, S, NE, SW, SE, NW = range(9)


def assemble_system(
    grid: DualGrid, params: ModelParams, theta2: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None, dict]:
    """Nine-point stencil coefficients of the frozen-coefficient operator.

    The cross coefficient is capped at the largest magnitude the grid can
    carry monotonically, |apq| <= 2 min(app hq/hp, aqq hp/hq), which keeps
    every off-diagonal of the implicit stencil non-negative so the frozen
    complementarity problem has a unique solution varying continuously with
    the coefficients.  Whatever the cap removes is returned as a second
    stencil, discretized the same way, to be applied explicitly to the
    current iterate and folded into the right-hand side; the two stencils
    sum to a consistent discretization of the full operator.

    Parameters
    ----------
    theta2 : (nz, ny) array
        Frozen perturbation component x per node.

    Returns
    -------
    coef : (9, nz, ny) array
        Monotone implicit stencil: center strictly negative, off-diagonals
        non-negative; a node solve reads
        ``phi_ij = (rhs + sum of neighbor terms) / (-coef[C])``.
    excess : (9, nz, ny) array or None
        Cross-term remainder beyond the monotone cap, None when the cap
        nowhere binds.
    info : dict
        ``excess_nodes``: nodes where the cap bound, ``central_fraction``:
        share of interior nodes using central first-order differences.
    """
    nz, ny = grid.nz, grid.ny
    hp, hq = grid.hp, grid.hq
    mkt, wg, prefs = params.market, params.wage, params.prefs
    th1 = params.merton.theta1
    beta = prefs.discount
    x = np.broadcast_to(np.asarray(theta2, dtype=float), (nz, ny))

    app = 0.5 * (th1 * th1 + x * x)
    bp = (beta - mkt.r) - app
    excess = None
    excess_nodes = 0
    if ny == 1:
        aqq = 0.0
        bq = 0.0
        apq = np.zeros((nz, ny))
        dq = 0.0
        cx = np.zeros((nz, ny))
    else:
        aqq = 0.5 * wg.m2 * wg.m2
        bq = wg.m1 - aqq
        apq_full = -(wg.rho * th1 + wg.rho_orth * x) * wg.m2
        apq_cap = 2.0 * np.minimum(app * hq / hp, aqq * hp / hq)
        apq = np.clip(apq_full, -apq_cap, apq_cap)
        apq_exc = apq_full - apq
        excess_nodes = int(np.count_nonzero(apq_exc))
        dq = aqq / (hq * hq)
        cx = np.abs(apq) / (2.0 * hp * hq)
    dp = app / (hp * hp)

    ep = dp - cx
    eq = dq - cx

    coef = np.zeros((9, nz, ny))
    center = -beta - 2.0 * dp - 2.0 * dq + 2.0 * cx

    # first-order term in p: central where it keeps both neighbors >= 0
    central_p = ep - np.abs(bp) / (2.0 * hp) >= 0.0
    coef[E] = np.where(central_p, ep + bp / (2.0 * hp), ep + np.maximum(bp, 0.0) / hp)
    coef[W] = np.where(central_p, ep - bp / (2.0 * hp), ep + np.maximum(-bp, 0.0) / hp)
    center = center - np.where(central_p, 0.0, np.abs(bp) / hp)

    # first-order term in q
    if ny > 1:
        central_q = eq - abs(bq) / (2.0 * hq) >= 0.0
        coef[N] = np.where(central_q, eq + bq / (2.0 * hq), eq + max(bq, 0.0) / hq)
        coef[S] = np.where(central_q, eq - bq / (2.0 * hq), eq + max(-bq, 0.0) / hq)
        center = center - np.where(central_q, 0.0, abs(bq) / hq)
        central_fraction = float(np.mean(central_p & central_q))
    else:
        central_fraction = float(np.mean(central_p))

    # cross term: diagonal pair picked by the sign of apq
    pos = apq >= 0.0
    coef[NE] = np.where(pos, cx, 0.0)
    coef[SW] = np.where(pos, cx, 0.0)
    coef[SE] = np.where(pos, 0.0, cx)
    coef[NW] = np.where(pos, 0.0, cx)
    coef[C] = center

    if excess_nodes:
        excess = np.zeros((9, nz, ny))
        cxe = np.abs(apq_exc) / (2.0 * hp * hq)
        pos_e = apq_exc >= 0.0
        excess[C] = 2.0 * cxe
        excess[E] = -cxe
        excess[W] = -cxe
        excess[N] = -cxe
        excess[S] = -cxe
        excess[NE] = np.where(pos_e, cxe, 0.0)
        excess[SW] = np.where(pos_e, cxe, 0.0)
        excess[SE] = np.where(pos_e, 0.0, cxe)
        excess[NW] = np.where(pos_e, 0.0, cxe)

    if ny > 1:
        _fold_wage_edges(coef)
        if excess is not None:
            _fold_wage_edges(excess)
            excess = np.ascontiguousarray(excess)
    if not np.all(coef[C] < 0.0):
        raise RuntimeError("assembled center coefficient lost negativity")
    # the cross cap can leave off-diagonals negative by rounding only
    neg = float(coef[1:].min())
    if neg < -1e-9 * float(np.abs(coef[C]).max()):
        raise RuntimeError("assembled implicit stencil lost monotonicity")
    if neg < 0.0:
        np.maximum(coef[1:], 0.0, out=coef[1:])
    info = {"excess_nodes": excess_nodes, "central_fraction": central_fraction}
    return np.ascontiguousarray(coef), excess, info


def _fold_wage_edges(coef: np.ndarray) -> None:
    """Fold reflecting ghost columns at the wage edges into the j = 0 and
    j = ny-1 rows, in place.

    The ghost column copies the edge column (zero first difference across
    the edge), so each out-of-domain weight folds onto a same-sign in-domain
    slot and the edge rows stay monotone for every correlation, including
    |rho| = 1 where the diffusion is purely diagonal and an extrapolating
    ghost would flip an off-diagonal sign.
    """
    # j = 0: ghost value phi[i', -1] = phi[i', 0]
    coef[C, :, 0] += coef[S, :, 0]
    coef[S, :, 0] = 0.0
    coef[E, :, 0] += coef[SE, :, 0]
    coef[SE, :, 0] = 0.0
    coef[W, :, 0] += coef[SW, :, 0]
    coef[SW, :, 0] = 0.0
    # j = ny-1: ghost value phi[i', ny] = phi[i', ny-1]
    coef[C, :, -1] += coef[N, :, -1]
    coef[N, :, -1] = 0.0
    coef[E, :, -1] += coef[NE, :, -1]
    coef[NE, :, -1] = 0.0
    coef[W, :, -1] += coef[NW, :, -1]
    coef[NW, :, -1] = 0.0


def apply_stencil(phi: np.ndarray, coef: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Residual of the frozen linear operator, rhs + sum(coef * neighbors).

    Neighbor indices are clamped at the array edges; the folded edge rows
    carry zero coefficients there so clamping is inert.  Rows i = 0 and
    i = nz-1 are boundary rows and their output is not meaningful.
    """
    nz, ny = phi.shape
    ip = np.minimum(np.arange(nz) + 1, nz - 1)
    im = np.maximum(np.arange(nz) - 1, 0)
    jp = np.minimum(np.arange(ny) + 1, ny - 1)
    jm = np.maximum(np.arange(ny) - 1, 0)
    out = rhs + coef[C] * phi
    out = out + coef[E] * phi[ip, :] + coef[W] * phi[im, :]
    out = out + coef[N] * phi[:, jp] + coef[S] * phi[:, jm]
    out = out + coef[NE] * phi[ip][:, jp] + coef[SW] * phi[im][:, jm]
    out = out + coef[SE] * phi[ip][:, jm] + coef[NW] * phi[im][:, jp]
    return out


def complementarity_residual(
    phi: np.ndarray,
    coef: np.ndarray,
    rhs: np.ndarray,
    lower: np.ndarray,
    scale: np.ndarray,
    hp: float,
    beta: float,
    use_obstacle: bool,
    use_gradient: bool,
) -> np.ndarray:
    """Scaled double-obstacle complementarity defect, node by node.

    Zero where the discrete system max{lower - phi, min{operator, -phi_p}} = 0
    holds; the operator branch is divided by beta and the gradient branch is
    the backward difference -(phi[i] - phi[i-1]) / hp so all three branches
    carry the units of phi before scaling.
    """
    lin = apply_stencil(phi, coef, rhs) / beta
    if use_gradient:
        grad = np.empty_like(phi)
        grad[1:, :] = (phi[:-1, :] - phi[1:, :]) / hp
        grad[0, :] = np.abs(lin[0, :]) + 1.0  # inactive on the boundary row
        inner = np.minimum(lin, grad)
    else:
        inner = lin
    if use_obstacle:
        comp = np.maximum(lower[:, None] - phi, inner)
    else:
        comp = inner
    return comp / scale


def log_derivatives(phi: np.ndarray, hp: float, hq: float) -> dict[str, np.ndarray]:
    """Central-difference derivatives in log coordinates (one-sided at edges).

    Returns d1p = Phi_p, d2p = Phi_pp, d1q, d2q and dpq = Phi_pq.
    """
    nz, ny = phi.shape
    d1p = np.gradient(phi, hp, axis=0, edge_order=2)
    d2p = np.zeros_like(phi)
    d2p[1:-1, :] = (phi[2:, :] - 2.0 * phi[1:-1, :] + phi[:-2, :]) / (hp * hp)
    d2p[0, :] = d2p[1, :]
    d2p[-1, :] = d2p[-2, :]
    if ny > 1:
        d1q = np.gradient(phi, hq, axis=1, edge_order=2)
        d2q = np.zeros_like(phi)
        d2q[:, 1:-1] = (phi[:, 2:] - 2.0 * phi[:, 1:-1] + phi[:, :-2]) / (hq * hq)
        d2q[:, 0] = d2q[:, 1]
        d2q[:, -1] = d2q[:, -2]
        dpq = np.gradient(d1p, hq, axis=1, edge_order=2)
    else:
        d1q = np.zeros_like(phi)
        d2q = np.zeros_like(phi)
        dpq = np.zeros_like(phi)
    return {"d1p": d1p, "d2p": d2p, "d1q": d1q, "d2q": d2q, "dpq": dpq}


def minimax_theta2(
    params: ModelParams,
    z,
    y,
    d_zz,
    d_zy,
    phi=None,
    hess_floor: float = 1e-10,
    cap: float = 25.0,
    chi_floor=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Minimizing perturbation component x* and a degeneracy mask.

    x* = sqrt(1 - rho^2) m2 y Phi_zy / (z Phi_zz) minimizes the bracketed
    quadratic (theta1^2 + x^2)/2 z^2 Phi_zz - (rho theta1 + sqrt(1-rho^2) x)
    m2 z y Phi_zy over x when Phi_zz > 0.

    The curvature chi = z^2 Phi_zz vanishes together with the numerator at
    the edge of the exercise region, where the finite-difference ratio is
    pure noise, so the division is regularized as x = num / max(chi, floor)
    with floor = max(hess_floor * max(1, |Phi|), chi_floor).  Passing a
    chi_floor proportional to the local field scale tapers x continuously
    to zero as the curvature degenerates, which keeps x a smooth function
    of the field instead of a thresholded one.  Nodes where the floor binds
    are flagged degenerate; there the returned x is not the exact quadratic
    minimizer.  Values are clipped at +-cap.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    chi = z * z * np.asarray(d_zz, dtype=float)
    mag = np.maximum(1.0, np.abs(phi)) if phi is not None else 1.0
    floor = hess_floor * mag
    if chi_floor is not None:
        floor = np.maximum(floor, chi_floor)
    degenerate = chi < floor
    cross = z * y * np.asarray(d_zy, dtype=float)
    x = params.wage.rho_orth * params.wage.m2 * cross / np.maximum(chi, floor)
    x = np.clip(x, -cap, cap)
    return x, degenerate


def stationary_operator(
    params: ModelParams,
    z,
    y,
    phi,
    d_z,
    d_zz,
    d_y,
    d_yy,
    d_zy,
    payoff,
    hess_floor: float = 1e-10,
):
    """Nonlinear stationary dual operator evaluated on derivative fields.

    residual = -beta Phi + (beta - r) z Phi_z + m1 y Phi_y
               + m2^2/2 y^2 Phi_yy + theta1^2/2 z^2 Phi_zz
               - rho theta1 m2 z y Phi_zy
               - (1-rho^2) m2^2 / 2 * (z y Phi_zy)^2 / (z^2 Phi_zz) / z^2 ...
               + payoff,

    with the quadratic term written through the floored log-curvature
    chi = max(z^2 Phi_zz, hess_floor * max(1, |Phi|)) so a flat field yields
    a zero quadratic term rather than a division by zero.
    """
    mkt, wg = params.market, params.wage
    th1 = params.merton.theta1
    beta = params.prefs.discount
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    phi = np.asarray(phi, dtype=float)
    chi = np.maximum(z * z * np.asarray(d_zz, float), hess_floor * np.maximum(1.0, np.abs(phi)))
    cross = z * y * np.asarray(d_zy, float)
    quad = -0.5 * wg.rho_orth**2 * wg.m2**2 * cross * cross / chi
    out = (
        -beta * phi
        + (beta - mkt.r) * z * np.asarray(d_z, float)
        + wg.m1 * y * np.asarray(d_y, float)
        + 0.5 * wg.m2**2 * y * y * np.asarray(d_yy, float)
        + 0.5 * th1**2 * z * z * np.asarray(d_zz, float)
        - wg.rho * th1 * wg.m2 * cross
        + quad
        + np.asarray(payoff, float)
    )
    return out if out.ndim else float(out)
