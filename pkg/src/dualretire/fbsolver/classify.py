"""Region decomposition of the converged dual field and the retirement
boundary it implies.

Each node is labeled by which branch of the variational inequality is active:
``STOPPED`` where the field sits on the retired-value obstacle, ``BOUND``
where the gradient constraint pins the field flat in z (zero wealth), and
``CONTINUATION`` elsewhere.  Activity wins ties in that order.
"""

from __future__ import annotations

import warnings
from enum import IntEnum

import numpy as np

from ..errors import TopologyWarning
from ..model import inverse_marginal

REGION_NAMES = {0: "stopped", 1: "continuation", 2: "liquidity_bound"}


class Region(IntEnum):
    STOPPED = 0
    CONTINUATION = 1
    LIQUIDITY_BOUND = 2


def classify_regions(
    phi: np.ndarray,
    ubar: np.ndarray,
    scale: np.ndarray,
    hp: float,
    region_tol: float = 1e-6,
    obstacle: bool = True,
    gradient_constraint: bool = True,
) -> np.ndarray:
    """Per-node region labels (int8) from constraint activity."""
    region = np.full(phi.shape, Region.CONTINUATION, dtype=np.int8)
    if gradient_constraint:
        flat = np.zeros(phi.shape, dtype=bool)
        flat[1:, :] = (phi[:-1, :] - phi[1:, :]) / hp <= region_tol * scale[1:, :]
        region[flat] = Region.LIQUIDITY_BOUND
    if obstacle:
        stopped = phi - ubar[:, None] <= region_tol * scale
        region[stopped] = Region.STOPPED
    return region


def retirement_boundary(
    z_nodes: np.ndarray,
    y_nodes: np.ndarray,
    phi: np.ndarray,
    ubar: np.ndarray,
    region: np.ndarray,
    merton,
) -> dict:
    """Retirement boundary z*(y): the top edge of the stopped region.

    For each wage the stopped nodes should form a prefix in z (stop when the
    shadow price of wealth is low enough, i.e. wealth high enough); a
    non-contiguous pattern raises :class:`TopologyWarning` and the largest
    stopped node is still reported.

    The node-level edge is sharpened by the tangency of the field with the
    obstacle: the gap g = phi - ubar grows like A*(p - p*)^2 off the
    boundary, so sqrt(g) at the two nearest continuation nodes extrapolates
    linearly back to p*.

    Returns arrays ``y``, ``z_star_node``, ``z_star``, ``w_star`` (wealth at
    the refined boundary through the retired inverse marginal) and
    ``w_star_grad`` (wealth from the field gradient at the first continuation
    node, for pasting checks); entries are NaN where a wage column never
    stops.
    """
    nz, ny = phi.shape
    logz = np.log(z_nodes)
    hp = float(logz[1] - logz[0])
    z_star_node = np.full(ny, np.nan)
    z_star = np.full(ny, np.nan)
    w_star_grad = np.full(ny, np.nan)
    bad_columns = []
    for j in range(ny):
        stopped = np.flatnonzero(region[:, j] == Region.STOPPED)
        if stopped.size == 0:
            bad_columns.append((j, "no stopped nodes"))
            continue
        i_star = int(stopped[-1])
        if stopped.size != i_star + 1:
            bad_columns.append((j, "stopped set not contiguous from the low-z edge"))
        if i_star == nz - 1:
            bad_columns.append((j, "stopped region reaches the high-z edge"))
            z_star_node[j] = z_nodes[i_star]
            z_star[j] = z_nodes[i_star]
            continue
        z_star_node[j] = z_nodes[i_star]
        p_star = logz[i_star]
        if i_star + 2 < nz:
            g1 = phi[i_star + 1, j] - ubar[i_star + 1]
            g2 = phi[i_star + 2, j] - ubar[i_star + 2]
            s1, s2 = np.sqrt(max(g1, 0.0)), np.sqrt(max(g2, 0.0))
            if s2 > s1 > 0.0:
                p_fit = logz[i_star + 1] - s1 * hp / (s2 - s1)
                p_star = float(np.clip(p_fit, logz[i_star], logz[i_star + 1]))
        z_star[j] = np.exp(p_star)
        ic = i_star + 1
        iu = min(ic + 1, nz - 1)
        w_star_grad[j] = -(phi[iu, j] - phi[ic - 1, j]) / ((logz[iu] - logz[ic - 1]) * z_nodes[ic])
    if bad_columns:
        warnings.warn(
            f"retirement boundary irregular in {len(bad_columns)} wage column(s), "
            f"first: {bad_columns[0]}",
            TopologyWarning,
            stacklevel=2,
        )
    w_star = np.where(np.isnan(z_star), np.nan, inverse_marginal(np.where(np.isnan(z_star), 1.0, z_star), merton))
    return {
        "y": np.asarray(y_nodes, dtype=float),
        "z_star_node": z_star_node,
        "z_star": z_star,
        "w_star": w_star,
        "w_star_grad": w_star_grad,
    }
