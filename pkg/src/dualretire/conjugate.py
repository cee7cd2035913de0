"""Legendre transform of the working-phase flow utility.

The agent pays for consumption c and for leisure l at the wage rate y, so the
working-phase conjugate at shadow price z is

    utilde(z, y) = max_{c >= 0, 0 <= l <= l_cap} u(c, l) - (c + y l) z,

with u(c, l) = (1/alpha) (l^(1-alpha) c^alpha)^(1-gamma) / (1-gamma).
Two regimes split at ztilde(y): interior leisure above it, the cap below.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .model import PreferenceParams, gamma_eff, leisure_threshold


class LeisureRegime(IntEnum):
    INTERIOR = 0
    CAPPED = 1


@dataclass
class ConjugateResult:
    """Conjugate value with its maximizers and the active leisure regime."""

    value: np.ndarray
    c_hat: np.ndarray
    l_hat: np.ndarray
    regime: np.ndarray


def utility(c, l, prefs: PreferenceParams):
    """Flow utility u(c, l) of consumption c > 0 and leisure l > 0."""
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    a, g = prefs.alpha, prefs.gamma
    out = (1.0 / a) * (l ** (1.0 - a) * c**a) ** (1.0 - g) / (1.0 - g)
    return out if out.ndim else float(out)


def utility_c(c, l, prefs: PreferenceParams):
    """Marginal utility of consumption."""
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    a, g = prefs.alpha, prefs.gamma
    comp = c**a * l ** (1.0 - a)
    out = c ** (a - 1.0) * l ** (1.0 - a) * comp ** (-g)
    return out if out.ndim else float(out)


def utility_l(c, l, prefs: PreferenceParams):
    """Marginal utility of leisure."""
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    a, g = prefs.alpha, prefs.gamma
    comp = c**a * l ** (1.0 - a)
    out = ((1.0 - a) / a) * c**a * l ** (-a) * comp ** (-g)
    return out if out.ndim else float(out)


def dual_utility(z, y, prefs: PreferenceParams) -> ConjugateResult:
    """Closed-form conjugate of the working-phase utility.

    Parameters
    ----------
    z, y : array_like
        Positive shadow price and wage; broadcast together.
    prefs : PreferenceParams

    Returns
    -------
    ConjugateResult
        ``value = u(c_hat, l_hat) - (c_hat + y*l_hat) z`` computed from the
        maximizers, so the defining identity holds exactly by construction.
    """
    z, y = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(y, dtype=float))
    if np.any(z <= 0.0) or np.any(y <= 0.0):
        raise ValueError("z and y must be positive")
    a, g, lc = prefs.alpha, prefs.gamma, prefs.l_cap
    ge = gamma_eff(prefs)
    big_a = a / (1.0 - a) * y
    ztil = leisure_threshold(y, prefs)
    interior = z >= ztil

    # interior leisure: both first-order conditions hold
    l_int = z ** (-1.0 / g) * big_a ** (-ge / g)
    c_int = big_a * l_int
    # capped leisure: l = l_cap, consumption from u_c(c, l_cap) = z
    c_cap = (z * lc ** ((a - 1.0) * (1.0 - g))) ** (-1.0 / ge)

    l_hat = np.where(interior, l_int, lc)
    c_hat = np.where(interior, c_int, c_cap)
    value = utility(c_hat, l_hat, prefs) - (c_hat + y * l_hat) * z
    regime = np.where(interior, LeisureRegime.INTERIOR, LeisureRegime.CAPPED).astype(
        np.int8
    )
    return ConjugateResult(value=value, c_hat=c_hat, l_hat=l_hat, regime=regime)


def dual_running_payoff(z, y, prefs: PreferenceParams):
    """Running payoff of the dual control problem, utilde(z, y) + z*y."""
    z, y = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(y, dtype=float))
    return dual_utility(z, y, prefs).value + z * y


def _golden_refine(fun, lo, hi, tol=1e-12):
    res = minimize_scalar(
        lambda t: -fun(t), bounds=(lo, hi), method="bounded", options={"xatol": tol}
    )
    return float(res.x)


def oracle_bruteforce(
    z: float,
    y: float,
    prefs: PreferenceParams,
    grid_n: int = 128,
    refine: bool = True,
) -> ConjugateResult:
    """Brute-force conjugate: grid search plus golden/simplex refinement.

    Independent of the closed form: scans log-spaced consumption and leisure
    grids, then (optionally) refines with coordinate golden-section passes
    followed by a simplex polish in log coordinates.  The consumption box is
    anchored at c_ref, the single-good inverse marginal at the leisure cap
    (the solution of u_c(c, l_cap) = z), and spans several decades around it;
    the leisure grid spans (l_cap * 1e-8, l_cap].
    """
    z, y = float(z), float(y)
    if z <= 0.0 or y <= 0.0:
        raise ValueError("z and y must be positive")
    a, g, lc = prefs.alpha, prefs.gamma, prefs.l_cap
    ge = gamma_eff(prefs)
    c_ref = (z * lc ** ((a - 1.0) * (1.0 - g))) ** (-1.0 / ge)
    c_grid = np.geomspace(c_ref * 1e-8, 10.0 * c_ref, grid_n)
    l_grid = np.geomspace(lc * 1e-8, lc, grid_n)

    def objective(c, l):
        return utility(c, l, prefs) - (c + y * l) * z

    vals = objective(c_grid[:, None], l_grid[None, :])
    ic, il = np.unravel_index(np.argmax(vals), vals.shape)
    c_best, l_best = float(c_grid[ic]), float(l_grid[il])

    if refine:
        for _ in range(2):
            c_lo = c_grid[max(ic - 1, 0)]
            c_hi = c_grid[min(ic + 1, grid_n - 1)]
            c_best = _golden_refine(lambda c: objective(c, l_best), c_lo, c_hi)
            l_lo = l_grid[max(il - 1, 0)]
            l_hi = l_grid[min(il + 1, grid_n - 1)]
            l_best = _golden_refine(lambda l: objective(c_best, l), l_lo, l_hi)
        res = minimize(
            lambda t: -objective(np.exp(t[0]), min(np.exp(t[1]), lc)),
            x0=[np.log(c_best), np.log(l_best)],
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400},
        )
        c_best = float(np.exp(res.x[0]))
        l_best = float(min(np.exp(res.x[1]), lc))

    value = objective(c_best, l_best)
    regime = (
        LeisureRegime.CAPPED
        if l_best >= lc * (1.0 - 1e-6)
        else LeisureRegime.INTERIOR
    )
    return ConjugateResult(
        value=np.float64(value),
        c_hat=np.float64(c_best),
        l_hat=np.float64(l_best),
        regime=np.int8(regime),
    )
