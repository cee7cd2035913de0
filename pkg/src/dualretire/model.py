"""Model primitives: parameter containers, their validation, and the
closed-form quantities of the retired (single-good) consumption problem.

Two Brownian drivers move the economy.  The traded asset loads only on the
first one; the wage loads on both, with total volatility ``m2`` and
correlation ``rho`` to the asset, so the orthogonal component
``sqrt(1 - rho^2) * m2`` cannot be hedged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import WellPosednessError


@dataclass(frozen=True)
class MarketParams:
    """Constant market coefficients.

    Parameters
    ----------
    r : float
        Risk-free rate.
    b : float
        Drift of the risky asset.
    sigma : float
        Volatility of the risky asset, must be positive.
    """

    r: float
    b: float
    sigma: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.r, self.b, self.sigma])):
            raise ValueError("market parameters must be finite")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class WageParams:
    """Geometric wage dynamics: drift ``m1``, volatility ``m2``, correlation
    ``rho`` with the traded asset."""

    m1: float
    m2: float
    rho: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.m1, self.m2, self.rho])):
            raise ValueError("wage parameters must be finite")
        if self.m2 < 0.0:
            raise ValueError(f"m2 must be non-negative, got {self.m2}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")

    @property
    def rho_orth(self) -> float:
        """Loading fraction on the unhedgeable driver, sqrt(1 - rho^2)."""
        return float(np.sqrt(max(0.0, 1.0 - self.rho * self.rho)))

    @property
    def mu2(self) -> np.ndarray:
        """Wage volatility vector [rho*m2, sqrt(1-rho^2)*m2]."""
        return np.array([self.rho * self.m2, self.rho_orth * self.m2])


@dataclass(frozen=True)
class PreferenceParams:
    """Cobb-Douglas consumption/leisure preferences with CRRA curvature.

    Parameters
    ----------
    beta : float
        Pure time discount rate.
    gamma : float
        Curvature of the composite good; positive and != 1.
    alpha : float
        Consumption share in (0, 1).
    l_cap : float
        Pre-retirement leisure cap in (0, 1); retirement grants leisure 1.
    hazard : float
        Optional mortality hazard, added to ``beta`` before any other
        computation.
    """

    beta: float
    gamma: float
    alpha: float
    l_cap: float
    hazard: float = 0.0

    def __post_init__(self):
        vals = [self.beta, self.gamma, self.alpha, self.l_cap, self.hazard]
        if not np.all(np.isfinite(vals)):
            raise ValueError("preference parameters must be finite")
        if self.gamma <= 0.0 or self.gamma == 1.0:
            raise ValueError(f"gamma must be positive and != 1, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.l_cap < 1.0:
            raise ValueError(f"l_cap must lie in (0, 1), got {self.l_cap}")
        if self.hazard < 0.0:
            raise ValueError(f"hazard must be non-negative, got {self.hazard}")

    @property
    def discount(self) -> float:
        """Effective discount rate beta + hazard used everywhere downstream."""
        return self.beta + self.hazard


def gamma_eff(prefs: PreferenceParams) -> float:
    """Effective relative risk aversion over wealth, 1 - alpha*(1 - gamma)."""
    return 1.0 - prefs.alpha * (1.0 - prefs.gamma)


@dataclass(frozen=True)
class MertonConstants:
    """Derived constants of the retired problem.

    ``gamma_eff`` is the effective CRRA over wealth, ``xi`` the optimal
    consumption-to-wealth rate once retired, ``theta1`` the market price of
    risk of the traded asset.
    """

    gamma_eff: float
    xi: float
    theta1: float


def validate_params(
    market: MarketParams, wage: WageParams, prefs: PreferenceParams
) -> MertonConstants:
    """Check well-posedness and return the derived Merton constants.

    Raises
    ------
    WellPosednessError
        If the effective risk aversion or the consumption rate ``xi`` is not
        positive (the retired value would be infinite or undefined).
    """
    g = gamma_eff(prefs)
    theta1 = (market.b - market.r) / market.sigma
    if g <= 0.0:
        raise WellPosednessError(f"effective risk aversion must be positive, got {g}")
    beta = prefs.discount
    xi = ((g - 1.0) / g) * (market.r + theta1 * theta1 / (2.0 * g)) + beta / g
    if xi <= 0.0:
        raise WellPosednessError(
            f"consumption rate xi must be positive, got {xi}; "
            "increase the discount rate or risk aversion"
        )
    return MertonConstants(gamma_eff=g, xi=xi, theta1=theta1)


@dataclass(frozen=True)
class ModelParams:
    """Bundle of all constants: market, wage, preferences and derived."""

    market: MarketParams
    wage: WageParams
    prefs: PreferenceParams
    merton: MertonConstants

    @classmethod
    def from_parts(
        cls, market: MarketParams, wage: WageParams, prefs: PreferenceParams
    ) -> "ModelParams":
        return cls(market, wage, prefs, validate_params(market, wage, prefs))


def merton_value(w, mc: MertonConstants):
    """Retired value of wealth, U(w) = (1/xi)^Gamma * w^(1-Gamma)/(1-Gamma).

    Returns -inf at w = 0 when 1 - Gamma < 0 (the value is genuinely -inf
    there) and raises on negative wealth.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0.0):
        raise ValueError("wealth must be non-negative")
    g = mc.gamma_eff
    with np.errstate(divide="ignore"):
        out = (1.0 / mc.xi) ** g * w ** (1.0 - g) / (1.0 - g)
    if g > 1.0:
        out = np.where(w == 0.0, -np.inf, out)
    return out if out.ndim else float(out)


def merton_dual(z, mc: MertonConstants):
    """Convex conjugate of the retired value,
    sup_w U(w) - w z = Gamma/(xi*(1-Gamma)) * z^((Gamma-1)/Gamma)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("dual variable must be positive")
    g = mc.gamma_eff
    out = g / (mc.xi * (1.0 - g)) * z ** ((g - 1.0) / g)
    return out if out.ndim else float(out)


def inverse_marginal(z, mc: MertonConstants):
    """Inverse marginal retired value, I(z) = (1/xi) z^(-1/Gamma) = -U~'(z)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("dual variable must be positive")
    out = (1.0 / mc.xi) * z ** (-1.0 / mc.gamma_eff)
    return out if out.ndim else float(out)


def merton_dual_curvature(z, mc: MertonConstants):
    """Second derivative of the conjugate, U~''(z) = I(z)/(Gamma z) > 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("dual variable must be positive")
    out = inverse_marginal(z, mc) / (mc.gamma_eff * z)
    return out if out.ndim else float(out)


def retired_flow_dual(z, mc: MertonConstants):
    """Conjugate of the retired flow utility, sup_c u(c, 1) - c z.

    Equals xi * merton_dual(z): the flow conjugate that the closed-form
    retired value zeroes in the stationary dual ODE.
    """
    return mc.xi * merton_dual(z, mc)


def leisure_threshold(y, prefs: PreferenceParams):
    """Dual-variable threshold below which the leisure cap binds.

    ztilde(y) = ((alpha/(1-alpha)) y)^(alpha(1-gamma)-1) * l_cap^(-gamma);
    for z >= ztilde the leisure optimum is interior, below it l = l_cap.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("wage must be positive")
    a, g, lc = prefs.alpha, prefs.gamma, prefs.l_cap
    out = (a / (1.0 - a) * y) ** (a * (1.0 - g) - 1.0) * lc ** (-g)
    return out if out.ndim else float(out)
