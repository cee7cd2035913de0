"""Primal recovery from a converged dual field.

The dual field prices wealth through its slope: W = -Phi_z(z, y), so the
value of starting wealth w0 at wage y0 is the Legendre read-back

    V(w0, y0) = inf_{lam > 0} [ Phi(lam, y0) + lam * w0 ],

whose first-order condition -Phi_z(lam*, y0) = w0 pins the optimal
multiplier.  Consumption and leisure policies are the conjugate maximizers
evaluated at the nodal shadow price, and the retirement boundary converts to
wealth units through the retired inverse marginal.  The wealth identification
W = -Phi_z is the standard dual-to-primal mapping for this class of models.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .conjugate import dual_utility
from .errors import RangeError
from .fbsolver.classify import Region, retirement_boundary
from .fbsolver.solve import SolutionField
from .model import inverse_marginal


@dataclass
class PrimalSolution:
    """Primal value and policies recovered at one (w0, y0) pair.

    ``policy`` holds the sampled fields ``c_star``/``l_star`` on the solve
    grid; ``wealth_map`` the wealth surface W = -Phi_z; ``retire_boundary``
    the wealth-coordinate boundary polyline of
    :func:`retirement_boundary_wealth`.
    """

    value: float
    lambda_star: float
    w0: float
    y0: float
    policy: dict = dc_field(default_factory=dict)
    wealth_map: np.ndarray | None = None
    retire_boundary: dict = dc_field(default_factory=dict)


def _wage_slice(field: SolutionField, y0: float) -> tuple[np.ndarray, np.ndarray]:
    """Phi and wealth -Phi_z along y = y0, log-linear between wage nodes."""
    y = field.grid.y_nodes
    phi = field.phi
    wealth = -field.derivs["d_z"]
    if field.grid.ny == 1:
        return phi[:, 0], wealth[:, 0]
    if not (y[0] <= y0 <= y[-1]):
        raise RangeError(f"wage {y0:g} outside the solved range [{y[0]:g}, {y[-1]:g}]")
    q = np.log(y0)
    j = min(int(np.searchsorted(field.grid.logy, q) - 1), field.grid.ny - 2)
    j = max(j, 0)
    t = (q - field.grid.logy[j]) / (field.grid.logy[j + 1] - field.grid.logy[j])
    return (
        (1.0 - t) * phi[:, j] + t * phi[:, j + 1],
        (1.0 - t) * wealth[:, j] + t * wealth[:, j + 1],
    )


def primal_value(w0: float, y0: float, field: SolutionField) -> PrimalSolution:
    """Primal value, optimal multiplier, policies and boundary at (w0, y0).

    The multiplier solves -Phi_z(lam, y0) = w0 by bisection of the piecewise
    linear wealth slice; the value refines the nodal minimum of
    Phi + lam*w0 with the vertex of the parabola through the three lowest
    nodes, which can only move the estimate further below every nodal probe,
    so the infimum property of the reported value is preserved exactly.

    Raises :class:`RangeError` when w0 falls outside the wealth interval the
    slice resolves.
    """
    if w0 < 0.0:
        raise RangeError("initial wealth must be non-negative")
    phi_s, w_s = _wage_slice(field, y0)
    z = field.grid.z_nodes
    p = field.grid.logz
    w_hi, w_lo = float(w_s[0]), float(w_s[-1])
    if not (w_lo <= w0 <= w_hi):
        raise RangeError(
            f"wealth {w0:g} outside the resolved interval [{w_lo:g}, {w_hi:g}] at this wage"
        )

    objective = phi_s + z * w0
    k = int(np.argmin(objective))
    value = float(objective[k])
    lam = float(z[k])

    # vertex of the parabola through the argmin and its neighbors (in log z);
    # an upward vertex sits at or below the middle node, never above a probe
    if 0 < k < z.size - 1:
        q0, q1, q2 = objective[k - 1], objective[k], objective[k + 1]
        curv = q0 - 2.0 * q1 + q2
        if curv > 0.0:
            s = 0.5 * (q0 - q2) / curv
            if -1.0 < s < 1.0:
                value = float(q1 - 0.5 * curv * s * s)

    # multiplier from the first-order condition, rooted in the cell next to
    # the argmin so the two estimates describe the same minimum
    for i in range(max(k - 1, 0), min(k + 1, z.size - 1)):
        a, b = w_s[i] - w0, w_s[i + 1] - w0
        if a == 0.0:
            lam = float(z[i])
            break
        if b == 0.0:
            lam = float(z[i + 1])
            break
        if a * b < 0.0:
            t = a / (a - b)
            lam = float(np.exp(p[i] + t * (p[i + 1] - p[i])))
            break

    return PrimalSolution(
        value=value,
        lambda_star=lam,
        w0=float(w0),
        y0=float(y0),
        policy=recover_policy(field),
        wealth_map=field.wealth(),
        retire_boundary=retirement_boundary_wealth(field),
    )


def recover_policy(field: SolutionField) -> dict:
    """Sampled optimal consumption and leisure over the solve grid.

    Working nodes take the conjugate maximizers with the nodal z as the
    marginal utility of consumption; stopped nodes take full leisure and the
    retired consumption rate xi * I(z).
    """
    params = field.params
    mz, my = field.grid.meshes()
    stopped = field.region == Region.STOPPED
    c_ret = params.merton.xi * inverse_marginal(mz, params.merton)
    if field.grid.ny == 1 or not field.config.obstacle:
        # retired sub-problem fields have no working phase
        conj_c = c_ret
        conj_l = np.ones_like(mz)
        regime = np.full(mz.shape, -1, dtype=np.int8)
    else:
        conj = dual_utility(mz, my, params.prefs)
        conj_c, conj_l, regime = conj.c_hat, conj.l_hat, conj.regime
    return {
        "c_star": np.where(stopped, c_ret, conj_c),
        "l_star": np.where(stopped, 1.0, conj_l),
        "regime": regime,
        "stopped": stopped,
    }


def retirement_boundary_wealth(field: SolutionField) -> dict:
    """Retirement boundary in wealth units, with its smooth-pasting gap.

    Returns arrays ``y``, ``z_star``, ``w_star`` (through the retired inverse
    marginal), ``w_star_grad`` (through the field gradient at the first
    working node) and ``gap`` = |w_star - w_star_grad|; all empty when the
    field was solved without the stopping obstacle.
    """
    if not field.config.obstacle:
        empty = np.empty(0)
        return {"y": empty, "z_star": empty, "w_star": empty,
                "w_star_grad": empty, "gap": empty}
    bd = retirement_boundary(
        field.grid.z_nodes, field.grid.y_nodes, field.phi, field.ubar,
        field.region, field.params.merton,
    )
    gap = np.abs(bd["w_star"] - bd["w_star_grad"])
    return {"y": bd["y"], "z_star": bd["z_star"], "w_star": bd["w_star"],
            "w_star_grad": bd["w_star_grad"], "gap": gap}
