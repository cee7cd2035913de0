"""Monte Carlo engine for the primitive processes and duality diagnostics.

Simulates the wage, the pricing-kernel family indexed by its orthogonal
component x, and the shadow-price process, using exact lognormal steps so the
martingale identities carry no discretization bias.  On top of the paths it
estimates the static budget residual of a candidate strategy and the weak
duality bound: every admissible strategy's payoff is dominated by
Phi(lam, Y0) + lam * W0 for every multiplier lam > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .conjugate import utility
from .errors import RangeError
from .fbsolver.solve import SolutionField
from .model import ModelParams, merton_value

KERNEL_TOL = 1e-12


@dataclass
class PathBundle:
    """Simulated primitive paths, one row per path.

    ``b1``/``b2`` hold Brownian increments over ``times`` (so they have one
    column fewer than the state arrays); ``y`` the wage, ``h`` the pricing
    kernel for the orthogonal component ``x``, ``d`` the non-increasing
    multiplier (identically one here: any admissible choice bounds from
    above, and a constant multiplier gives the cleanest valid bound), and
    ``zpath = lam * d * e^{beta t} * h`` the shadow price.  ``w``, ``c``,
    ``l`` stay None until a strategy is rolled over the bundle.
    """

    times: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    y: np.ndarray
    h: np.ndarray
    d: np.ndarray
    zpath: np.ndarray
    x: float
    lam: float
    seed: int
    w: np.ndarray | None = None
    c: np.ndarray | None = None
    l: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.y.shape[0]

    def stock(self, params: ModelParams, s0: float = 1.0) -> np.ndarray:
        """Risky asset path from the first Brownian coordinate, exact steps."""
        mk = params.market
        t = self.times[None, :]
        cb1 = np.concatenate(
            [np.zeros((self.n_paths, 1)), np.cumsum(self.b1, axis=1)], axis=1
        )
        return s0 * np.exp((mk.b - 0.5 * mk.sigma**2) * t + mk.sigma * cb1)


@dataclass
class StrategySpec:
    """Admissible candidate strategy given by Markov feedback rules.

    Each rule maps (t, wealth, wage) arrays to the control; leisure must land
    in [0, l_cap] while working, consumption and wealth must stay
    non-negative.  ``tau`` is the deterministic retirement time; boundary
    hitting rules are out of scope for the bound checks, which hold for any
    admissible stopping time.
    """

    consumption: Callable
    leisure: Callable
    risky: Callable
    tau: float
    name: str = ""


def _rng_normals(seed: int, n_paths: int, n_steps: int, sequential: bool) -> np.ndarray:
    """Standard normal increments, (2, n_paths, n_steps).

    Sequential mode draws from one stream; otherwise each path gets its own
    spawned stream, so aggregation order cannot change the draws a path
    sees.  Both layouts are deterministic for a fixed seed.
    """
    if sequential:
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.standard_normal((2, n_paths, n_steps))
    streams = np.random.SeedSequence(seed).spawn(n_paths)
    out = np.empty((2, n_paths, n_steps))
    for i, ss in enumerate(streams):
        out[:, i, :] = np.random.Generator(np.random.PCG64(ss)).standard_normal((2, n_steps))
    return out


def simulate(
    params: ModelParams,
    v,
    n_paths: int,
    n_steps: int,
    dt: float,
    seed: int,
    y0: float = 1.0,
    lam: float = 1.0,
    sequential: bool = True,
) -> PathBundle:
    """Exact lognormal paths of wage, kernel and shadow price.

    ``v`` is the market-price-of-risk perturbation and must be invisible to
    the traded asset: its first component (against the asset's own Brownian)
    has to vanish within 1e-12.  All three processes are geometric with
    constant coefficients, so each step multiplies by an exactly lognormal
    factor and the simulation carries no time-discretization bias.
    """
    v = np.asarray(v, dtype=float).ravel()
    if v.size != 2:
        raise ValueError("perturbation v must have two components")
    mk, wg, prefs = params.market, params.wage, params.prefs
    if abs(mk.sigma * v[0]) > KERNEL_TOL:
        raise ValueError(
            f"v is not orthogonal to the asset volatility: sigma^T v = {mk.sigma * v[0]:.3e}"
        )
    if dt <= 0.0 or n_steps < 1 or n_paths < 1:
        raise ValueError("need dt > 0, n_steps >= 1, n_paths >= 1")
    x = float(v[1])
    th1 = params.merton.theta1
    dz1, dz2 = _rng_normals(seed, n_paths, n_steps, sequential) * np.sqrt(dt)

    times = dt * np.arange(n_steps + 1)
    y_fac = np.exp(
        (wg.m1 - 0.5 * wg.m2**2) * dt + wg.m2 * (wg.rho * dz1 + wg.rho_orth * dz2)
    )
    h_fac = np.exp(-(mk.r + 0.5 * (th1**2 + x**2)) * dt - th1 * dz1 - x * dz2)
    ones = np.ones((n_paths, 1))
    y = y0 * np.concatenate([ones, np.cumprod(y_fac, axis=1)], axis=1)
    h = np.concatenate([ones, np.cumprod(h_fac, axis=1)], axis=1)
    d = np.ones_like(h)
    zpath = lam * d * np.exp(prefs.discount * times)[None, :] * h
    return PathBundle(
        times=times, b1=dz1, b2=dz2, y=y, h=h, d=d, zpath=zpath,
        x=x, lam=lam, seed=seed,
    )


def kernel_check(
    params: ModelParams,
    x: float,
    t: float = 1.0,
    n_paths: int = 10_000,
    seed: int = 0,
    s0: float = 1.0,
    n_steps: int = 1,
    sequential: bool = True,
) -> dict:
    """Martingale identities of the kernel: E[H] = e^{-rt}, E[H S] = S0.

    Returns the sample means with standard errors and the deviations in
    standard-error units; exact stepping makes any bias purely statistical.
    """
    bundle = simulate(
        params, [0.0, x], n_paths, n_steps, t / n_steps, seed, sequential=sequential
    )
    ht = bundle.h[:, -1]
    hst = ht * bundle.stock(params, s0)[:, -1]
    eh, ehs = float(ht.mean()), float(hst.mean())
    eh_se = float(ht.std(ddof=1) / np.sqrt(n_paths))
    ehs_se = float(hst.std(ddof=1) / np.sqrt(n_paths))
    eh_tgt, ehs_tgt = float(np.exp(-params.market.r * t)), float(s0)
    return {
        "x": x, "t": t, "n_paths": n_paths,
        "eh": eh, "eh_se": eh_se, "eh_target": eh_tgt,
        "eh_sigmas": abs(eh - eh_tgt) / eh_se,
        "ehs": ehs, "ehs_se": ehs_se, "ehs_target": ehs_tgt,
        "ehs_sigmas": abs(ehs - ehs_tgt) / ehs_se,
    }


def z_consistency(
    params: ModelParams,
    x: float,
    t: float = 1.0,
    lam: float = 1.0,
    refinements: tuple = (16, 32, 64, 128, 256),
    n_paths: int = 256,
    seed: int = 1,
) -> dict:
    """Strong-error slope of the Milstein shadow-price SDE against exact z.

    The shadow price is lognormal, dz = z((beta - r) dt - theta1 dB1 - x dB2),
    so integrating its SDE by Milstein on coarsened versions of one Brownian
    path must converge to the exact path at strong order one: the log-log
    slope of E|z_T^dt - z_T| against dt should be about one.
    """
    n_max = max(refinements)
    for n in refinements:
        if n_max % n:
            raise ValueError("refinements must divide the finest level")
    rng = np.random.Generator(np.random.PCG64(seed))
    db = rng.standard_normal((2, n_paths, n_max)) * np.sqrt(t / n_max)
    th1, beta, r = params.merton.theta1, params.prefs.discount, params.market.r
    z_exact = lam * np.exp(
        (beta - r - 0.5 * (th1**2 + x**2)) * t
        - th1 * db[0].sum(axis=1) - x * db[1].sum(axis=1)
    )
    errs = []
    for n in refinements:
        k = n_max // n
        d1 = db[0].reshape(n_paths, n, k).sum(axis=2)
        d2 = db[1].reshape(n_paths, n, k).sum(axis=2)
        dt = t / n
        z = np.full(n_paths, lam)
        for i in range(n):
            g = th1 * d1[:, i] + x * d2[:, i]
            z = z * (1.0 + (beta - r) * dt - g + 0.5 * (g * g - (th1**2 + x**2) * dt))
        errs.append(float(np.abs(z - z_exact).mean()))
    dts = np.array([t / n for n in refinements])
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    return {"dts": dts, "errors": np.array(errs), "slope": slope}


def _validate_strategy(
    spec: StrategySpec,
    params: ModelParams,
    w0: float,
    y0: float,
    enforce_cap: bool = True,
):
    """Static admissibility gate on a probe grid of states.

    ``enforce_cap`` applies the working-phase leisure cap; budget identities
    also hold for forced non-working rules (l up to one, zero labor income),
    so kernel-pricing checks may relax the cap to the natural domain.
    """
    t = np.array([0.0, 0.5 * spec.tau, spec.tau])
    w = np.maximum(w0, 1e-8) * np.array([0.25, 1.0, 4.0])
    y = y0 * np.array([0.5, 1.0, 2.0])
    tt, ww, yy = np.meshgrid(t, w, y, indexing="ij")
    c = np.asarray(spec.consumption(tt, ww, yy), dtype=float)
    l = np.asarray(spec.leisure(tt, ww, yy), dtype=float)
    if np.any(c < 0.0):
        raise ValueError(f"strategy {spec.name!r} proposes negative consumption")
    l_max = params.prefs.l_cap if enforce_cap else 1.0
    if np.any(l < 0.0) or np.any(l > l_max + 1e-12):
        raise ValueError(f"strategy {spec.name!r} proposes leisure outside [0, {l_max}]")
    if spec.tau < 0.0:
        raise ValueError("retirement time must be non-negative")


def roll_strategy(
    bundle: PathBundle,
    spec: StrategySpec,
    params: ModelParams,
    w0: float,
    enforce_cap: bool = True,
) -> PathBundle:
    """Roll the strategy's wealth over the bundle's paths (in place).

    The proportional part of the wealth update is applied as a lognormal
    factor and the income/consumption flow as an additive Euler term, which
    keeps wealth of proportional rules positive without absorption; wealth is
    floored at zero (absorbing, with consumption cut) so every simulated path
    stays admissible even under aggressive rules.
    """
    _validate_strategy(spec, params, w0, float(bundle.y[:, 0].mean()), enforce_cap)
    mk = params.market
    k_tau = int(round(spec.tau / (bundle.times[1] - bundle.times[0])))
    if k_tau > bundle.b1.shape[1]:
        raise RangeError("strategy horizon exceeds the simulated one")
    n, dt = bundle.n_paths, float(bundle.times[1] - bundle.times[0])
    w = np.empty((n, k_tau + 1))
    c = np.zeros((n, k_tau + 1))
    l = np.ones((n, k_tau + 1))
    w[:, 0] = w0
    for i in range(k_tau + 1):
        t, wi, yi = bundle.times[i], w[:, i], bundle.y[:, i]
        ci = np.where(wi > 0.0, np.asarray(spec.consumption(t, wi, yi), dtype=float), 0.0)
        li = np.asarray(spec.leisure(t, wi, yi), dtype=float)
        c[:, i], l[:, i] = ci, li
        if i == k_tau:
            break
        th = np.asarray(spec.risky(t, wi, yi), dtype=float)
        # split the drift into the part proportional to wealth (compounded
        # exactly) and the residual flow (Euler), so pure-proportional rules
        # cannot cross zero in one step
        frac = np.divide(th, wi, out=np.zeros_like(wi), where=wi > 0.0)
        growth = np.exp(
            (mk.r + frac * (mk.b - mk.r) - 0.5 * (frac * mk.sigma) ** 2) * dt
            + frac * mk.sigma * bundle.b1[:, i]
        )
        flow = (yi * (1.0 - li) - ci) * dt
        w[:, i + 1] = np.maximum(wi * growth + flow, 0.0)
    bundle.w, bundle.c, bundle.l = w, c, l
    return bundle


def budget_check(
    bundle: PathBundle,
    spec: StrategySpec,
    params: ModelParams,
    w0: float,
    lc_probes: tuple = (),
    n_probe_paths: int = 32,
    n_sub: int = 256,
    sub_seed: int = 99,
) -> dict:
    """Static budget residual E[int H(c + Y(l-1)) dt + H_tau W_tau] - W0.

    A self-financed strategy prices back to its endowment, so the residual
    estimates the kernel value the strategy leaves on the table (zero within
    noise when every income and consumption flow passes through wealth).
    With ``lc_probes`` the same functional is re-estimated from the state at
    each probe time by sub-simulation, and the minimum slack
    W(t) - E[future cost | state] over probes is reported: a positive value
    means the remaining plan stays affordable mid-path.
    """
    if bundle.w is None:
        roll_strategy(bundle, spec, params, w0, enforce_cap=False)
    k_tau = bundle.w.shape[1] - 1
    t = bundle.times[: k_tau + 1]
    h = bundle.h[:, : k_tau + 1]
    y = bundle.y[:, : k_tau + 1]
    flows = h * (bundle.c + y * (bundle.l - 1.0))
    flow_val = np.trapezoid(flows, t, axis=1)
    term_val = h[:, k_tau] * bundle.w[:, k_tau]
    resid = flow_val + term_val - w0
    rt = np.sqrt(bundle.n_paths)
    out = {
        "residual": float(resid.mean()),
        "se": float(resid.std(ddof=1) / rt),
        "flow_value": float(flow_val.mean()),
        "flow_se": float(flow_val.std(ddof=1) / rt),
        "terminal_value": float(term_val.mean()),
        "terminal_se": float(term_val.std(ddof=1) / rt),
        "n_paths": bundle.n_paths,
    }
    if lc_probes:
        slacks, ses = [], []
        dt = float(t[1] - t[0])
        for tp in lc_probes:
            i = int(round(tp / dt))
            if not 0 <= i <= k_tau:
                raise RangeError(f"probe time {tp:g} outside the strategy horizon")
            rem = spec.tau - t[i]
            m = min(n_probe_paths, bundle.n_paths)
            for jp in range(m):
                wi, yi = float(bundle.w[jp, i]), float(bundle.y[jp, i])
                if rem <= 0.0 or i == k_tau:
                    slacks.append(0.0)
                    ses.append(0.0)
                    continue
                shifted = StrategySpec(
                    consumption=lambda s, w, yy, t0=t[i]: spec.consumption(s + t0, w, yy),
                    leisure=lambda s, w, yy, t0=t[i]: spec.leisure(s + t0, w, yy),
                    risky=lambda s, w, yy, t0=t[i]: spec.risky(s + t0, w, yy),
                    tau=rem, name=spec.name + "|shifted",
                )
                sub = simulate(
                    params, [0.0, bundle.x], n_sub, k_tau - i, dt,
                    seed=sub_seed + 7919 * jp, y0=yi,
                )
                roll_strategy(sub, shifted, params, wi, enforce_cap=False)
                fl = sub.h * (sub.c + sub.y * (sub.l - 1.0))
                sub_cost = np.trapezoid(fl, sub.times, axis=1) + sub.h[:, -1] * sub.w[:, -1]
                slacks.append(wi - float(sub_cost.mean()))
                ses.append(float(sub_cost.std(ddof=1) / np.sqrt(n_sub)))
        worst = int(np.argmin(slacks))
        out["lc_probe_times"] = tuple(lc_probes)
        out["lc_min_slack"] = float(slacks[worst])
        out["lc_slack_se"] = float(ses[worst])
    return out


def payoff_estimate(
    bundle: PathBundle, spec: StrategySpec, params: ModelParams, w0: float
) -> tuple[float, float]:
    """Discounted payoff estimate J for the strategy: flow utility to tau,
    then the closed-form retired continuation of terminal wealth."""
    if bundle.w is None:
        roll_strategy(bundle, spec, params, w0)
    beta = params.prefs.discount
    k_tau = bundle.w.shape[1] - 1
    t = bundle.times[: k_tau + 1]
    disc = np.exp(-beta * t)[None, :]
    if k_tau > 0:
        flow = disc * utility(np.maximum(bundle.c, 1e-300), bundle.l, params.prefs)
        j_path = np.trapezoid(flow, t, axis=1)
    else:
        j_path = np.zeros(bundle.n_paths)
    tail = np.exp(-beta * t[k_tau]) * merton_value(bundle.w[:, k_tau], params.merton)
    j_path = j_path + tail
    return (
        float(j_path.mean()),
        float(j_path.std(ddof=1) / np.sqrt(bundle.n_paths)),
    )


def duality_gap(
    bundle: PathBundle,
    spec: StrategySpec,
    field: SolutionField,
    w0: float,
    y0: float,
    n_lambda: int = 20,
) -> dict:
    """Weak-duality check of a strategy payoff against the dual bound.

    Estimates J for the strategy and compares it with
    Phi(lam, y0) + lam * w0 on ``n_lambda`` multiplier probes taken from the
    solved grid's own nodes (so the bound needs no interpolation in z).
    Reports the per-probe gaps, the tightest one, and how many probes the
    payoff exceeds by more than three standard errors (none, if weak duality
    holds).
    """
    j, j_se = payoff_estimate(bundle, spec, field.params, w0)
    z = field.grid.z_nodes
    idx = np.unique(np.linspace(0, z.size - 1, n_lambda).round().astype(int))
    if field.grid.ny == 1:
        phi_s = field.phi[:, 0]
    else:
        from .primal import _wage_slice

        phi_s, _ = _wage_slice(field, y0)
    bound = phi_s[idx] + z[idx] * w0
    gap = bound - j
    return {
        "j": j, "j_se": j_se,
        "lambda_grid": z[idx],
        "bound": bound,
        "gap": gap,
        "min_gap": float(gap.min()),
        "argmin_lambda": float(z[idx][int(np.argmin(gap))]),
        "violations": int((gap < -3.0 * j_se).sum()),
    }
