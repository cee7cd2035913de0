"""Projected SOR solver for the stationary dual variational inequality.

The working-phase dual value solves, node by node,

    max{ Ubar - Phi, min{ L[Phi] + payoff, -Phi_p } } = 0,

with L the frozen-coefficient operator of ``assemble_system``: the obstacle
branch is early retirement into the closed-form retired value, the gradient
branch the non-negative-wealth bound.  The perturbation component theta2 that
the operator freezes is re-minimized in an outer loop until it stops moving.

Red-black ordering with all neighbor reads taken from the pre-sweep copy
makes every half sweep independent of traversal order, so the compiled and
numpy kernels produce the same iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..conjugate import dual_running_payoff
from ..errors import NonConvergenceError
from ..grid import DualGrid
from ..model import ModelParams, merton_dual, retired_flow_dual
from . import kernels
from .classify import Region, classify_regions
from .operator import (
    apply_stencil,
    assemble_system,
    complementarity_residual,
    log_derivatives,
    minimax_theta2,
    stationary_operator,
)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    ``tol`` bounds the scaled complementarity residual; ``theta2_tol`` the
    sup-norm movement of the frozen perturbation between outer passes.
    Convergence requires both at once: the last pass must solve its frozen
    problem within ``tol`` and leave the perturbation within ``theta2_tol``.
    ``inner_per_outer`` caps the sweeps spent per freeze, so the perturbation
    is refreshed before the field can migrate to a different active set
    (letting one freeze run to convergence makes consecutive freezes jump
    between active sets and the outer loop chatter).  ``chi_floor_frac``
    regularizes the perturbation formula: the curvature divisor is floored
    at this fraction of the local field scale, which tapers the perturbation
    smoothly to zero where the curvature degenerates (flat regions and the
    free-boundary band).  ``pin_flips``/``pin_decay`` control marginal-node
    pinning: a node whose perturbation update flips sign that many times in
    a row without its amplitude decaying is frozen at the midpoint of its
    flip band (see ``_solve_level``).  ``nested`` warm-starts each grid from
    a solve on a coarsened one; coarse levels are best-effort.
    """

    tol: float = 1e-7
    max_outer: int = 300
    max_inner: int = 50000
    inner_per_outer: int = 200
    relaxation: float = 1.0
    check_every: int = 25
    hess_floor: float = 1e-10
    chi_floor_frac: float = 0.05
    theta2_cap: float = 25.0
    theta2_tol: float = 1e-6
    theta2_damping: float = 1.0
    pin_flips: int = 6
    pin_decay: float = 0.7
    region_tol: float = 1e-6
    obstacle: bool = True
    gradient_constraint: bool = True
    minimax: bool = True
    nested: bool = True


@dataclass
class SolutionField:
    """Converged dual field with its derivative and region decompositions.

    ``derivs`` holds z/y-unit derivatives (keys d_z, d_y, d_zz, d_yy, d_zy);
    ``region`` the per-node label from :class:`Region`; ``theta2`` the
    minimizing perturbation component with ``theta2_degenerate`` marking
    nodes where the curvature floor binds, so the stored value is a tapered
    stand-in rather than the exact quadratic minimizer.
    """

    params: ModelParams
    grid: DualGrid
    config: SolverConfig
    phi: np.ndarray
    payoff: np.ndarray
    ubar: np.ndarray
    scale: np.ndarray
    theta2: np.ndarray
    theta2_degenerate: np.ndarray
    region: np.ndarray
    derivs: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def wealth(self) -> np.ndarray:
        """Primal wealth surface W = -Phi_z, clipped at zero."""
        return np.maximum(-self.derivs["d_z"], 0.0)


def derivative_fields(phi: np.ndarray, grid: DualGrid) -> dict:
    """z/y-unit derivatives of a field given on the log grid."""
    d = log_derivatives(phi, grid.hp, grid.hq if grid.ny > 1 else 1.0)
    z = grid.z_nodes[:, None]
    y = grid.y_nodes[None, :]
    return {
        "d_z": d["d1p"] / z,
        "d_zz": (d["d2p"] - d["d1p"]) / (z * z),
        "d_y": d["d1q"] / y,
        "d_yy": (d["d2q"] - d["d1q"]) / (y * y),
        "d_zy": d["dpq"] / (z * y),
    }


def _interp_to(coarse: DualGrid, values: np.ndarray, fine: DualGrid) -> np.ndarray:
    if coarse.ny == 1:
        col = np.interp(fine.logz, coarse.logz, values[:, 0])
        return col[:, None]
    rgi = RegularGridInterpolator(
        (coarse.logz, coarse.logy), values, method="linear", bounds_error=False, fill_value=None
    )
    pp, qq = np.meshgrid(fine.logz, fine.logy, indexing="ij")
    return rgi(np.stack([pp.ravel(), qq.ravel()], axis=1)).reshape(fine.nz, fine.ny)


def _relax(
    phi: np.ndarray,
    coef: np.ndarray,
    rhs: np.ndarray,
    lower: np.ndarray,
    scale: np.ndarray,
    grid: DualGrid,
    config: SolverConfig,
    beta: float,
    budget: int,
    tol: float | None = None,
) -> tuple[int, float, bool]:
    """Run half sweeps until the complementarity residual drops below tol.

    Stops after ``budget`` sweeps, returning the last residual and whether
    the tolerance was met.  ``tol`` overrides ``config.tol`` when the caller
    needs a tighter frozen-system target.
    """
    tol = config.tol if tol is None else tol
    use_obs = int(config.obstacle)
    use_grad = int(config.gradient_constraint)
    prev = np.empty_like(phi)
    sweep = kernels.sweep_color
    omega = config.relaxation
    best = np.inf
    for it in range(1, budget + 1):
        np.copyto(prev, phi)
        d0 = sweep(phi, prev, coef, rhs, lower, scale, omega, 0, use_obs, use_grad)
        np.copyto(prev, phi)
        d1 = sweep(phi, prev, coef, rhs, lower, scale, omega, 1, use_obs, use_grad)
        phi[0, :] = lower[0]
        if config.gradient_constraint:
            phi[-1, :] = phi[-2, :]
            # nodewise clamping against the pre-sweep iterate can leave a
            # hair-thin constraint violation as a second rest state of the
            # two-color sweep; projecting onto the monotone cone removes it
            np.minimum.accumulate(phi, axis=0, out=phi)
        else:
            phi[-1, :] = lower[-1]
        dmax = max(d0, d1)
        if it % config.check_every == 0 or dmax <= 0.1 * tol:
            comp = complementarity_residual(
                phi, coef, rhs, lower, scale, grid.hp, beta,
                config.obstacle, config.gradient_constraint,
            )
            resid = float(np.abs(comp[1:-1, :]).max())
            if resid <= tol:
                return it, resid, True
            # over-relaxation can limit-cycle on this nonsymmetric stencil;
            # plain sweeps (omega = 1) are unconditionally convergent, so
            # fall back when the residual stops shrinking
            if omega > 1.0 and resid > 0.9 * best:
                omega = 1.0
            best = min(best, resid)
    comp = complementarity_residual(
        phi, coef, rhs, lower, scale, grid.hp, beta,
        config.obstacle, config.gradient_constraint,
    )
    resid = float(np.abs(comp[1:-1, :]).max())
    return budget, resid, resid <= tol


def _solve_level(
    params: ModelParams,
    grid: DualGrid,
    config: SolverConfig,
    payoff_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    phi0: np.ndarray | None,
    theta20: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    beta = params.prefs.discount
    mz, my = grid.meshes()
    payoff = np.ascontiguousarray(payoff_fn(mz, my))
    ubar = merton_dual(grid.z_nodes, params.merton)
    scale = np.ascontiguousarray(
        np.maximum(1.0, np.maximum(np.abs(ubar)[:, None], np.abs(payoff) / beta))
    )

    if phi0 is None:
        phi = np.maximum(ubar[:, None], payoff / beta)
    else:
        phi = phi0
    if config.obstacle:
        phi = np.maximum(phi, ubar[:, None])
    phi = np.ascontiguousarray(phi, dtype=float)
    phi[0, :] = ubar[0]
    if config.gradient_constraint:
        phi = np.minimum.accumulate(phi, axis=0)
    else:
        phi[-1, :] = ubar[-1]

    do_minimax = (
        config.minimax and grid.ny > 1 and params.wage.rho_orth > 0.0 and params.wage.m2 > 0.0
    )
    theta2 = np.zeros_like(phi) if theta20 is None else np.asarray(theta20, dtype=float)
    if not do_minimax:
        theta2 = np.zeros_like(phi)

    level_diag: dict = {"nz": grid.nz, "ny": grid.ny, "inner_iterations": 0}
    change = np.inf
    pinned = np.zeros(phi.shape, dtype=bool)
    flips = np.zeros(phi.shape, dtype=np.int64)
    prev_delta: np.ndarray | None = None
    x_prev_new: np.ndarray | None = None
    budget = config.inner_per_outer if do_minimax else config.max_inner
    relax_tol = config.tol
    stall_resid = np.inf
    stall_count = 0
    zero_rhs = np.zeros_like(payoff)

    def fail(msg: str):
        comp = complementarity_residual(
            phi, coef if excess is None else coef + excess, payoff, ubar,
            scale, grid.hp, beta, config.obstacle, config.gradient_constraint,
        )
        worst = np.unravel_index(np.argmax(np.abs(comp[1:-1, :])), comp[1:-1, :].shape)
        level_diag["worst_residual"] = float(np.abs(comp[1:-1, :]).max())
        level_diag["worst_node"] = (int(worst[0]) + 1, int(worst[1]))
        level_diag["phi"] = phi.copy()
        level_diag["theta2"] = theta2.copy()
        raise NonConvergenceError(msg, diagnostics=level_diag)
    for outer in range(1, config.max_outer + 1):
        coef, excess, info = assemble_system(grid, params, theta2)
        if excess is None:
            rhs = payoff
        else:
            rhs = np.ascontiguousarray(payoff + apply_stencil(phi, excess, zero_rhs))
        iters, resid, ok = _relax(
            phi, coef, rhs, ubar, scale, grid, config, beta, budget, relax_tol
        )
        level_diag["inner_iterations"] += iters
        level_diag["outer_iterations"] = outer
        level_diag.update(info)
        frozen_ok = ok
        if ok and excess is not None:
            # the explicit remainder lags the field by one pass; converge on
            # the residual of the recombined full operator
            comp = complementarity_residual(
                phi, coef + excess, payoff, ubar, scale, grid.hp, beta,
                config.obstacle, config.gradient_constraint,
            )
            resid = float(np.abs(comp[1:-1, :]).max())
            ok = resid <= config.tol
        level_diag["final_residual"] = resid
        if not do_minimax:
            if not ok:
                fail(
                    f"projected sweeps stalled at residual {resid:.3e} "
                    f"(tol {config.tol:.1e}) on a {grid.nz}x{grid.ny} grid"
                )
            break
        d = derivative_fields(phi, grid)
        # the scale-proportional curvature floor tapers x to zero in the
        # flat regions and the free-boundary band, keeping the outer map a
        # smooth function of the field (a thresholded cutoff limit-cycles)
        x_new, _ = minimax_theta2(
            params, mz, my, d["d_zz"], d["d_zy"], phi=phi,
            hess_floor=config.hess_floor, cap=config.theta2_cap,
            chi_floor=config.chi_floor_frac * scale,
        )
        delta = np.where(pinned, 0.0, x_new - theta2)
        change = float(np.abs(delta).max())
        level_diag["theta2_sup_change"] = change
        if change <= config.theta2_tol:
            if ok:
                # keep theta2 exactly as the converged solve used it, so the
                # stored pair reproduces the measured residual on reassembly
                break
            if budget >= config.max_inner:
                if not frozen_ok:
                    fail(
                        f"projected sweeps stalled at residual {resid:.3e} "
                        f"(tol {config.tol:.1e}) on a {grid.nz}x{grid.ny} grid"
                    )
                # the frozen problem is solved but the explicit remainder
                # source lags the field by one pass; keep refreshing it as
                # long as the recombined residual still improves
                if resid >= 0.99 * stall_resid:
                    stall_count += 1
                    if stall_count >= 8:
                        fail(
                            f"remainder source stalled at residual {resid:.3e} "
                            f"(tol {config.tol:.1e}) on a {grid.nz}x{grid.ny} grid"
                        )
                else:
                    stall_count = 0
                stall_resid = resid
            else:
                # perturbation has settled: spend the full sweep budget on
                # the remaining frozen problem, with a tighter sweep target
                # so the one-pass lag of the explicit remainder fits in tol
                budget = config.max_inner
                if excess is not None:
                    relax_tol = 0.25 * config.tol
        # a marginal interface node flips its perturbation between two values
        # with held amplitude: the discrete active set cannot express the
        # interface in between, so the substituted update is set-valued there
        # and no damping converges it.  Pin such nodes at the midpoint of
        # their flip band and solve the frozen problem exactly at that value;
        # the band width vanishes under mesh refinement.
        if x_prev_new is not None and prev_delta is not None:
            flip = (
                (delta * prev_delta < 0.0)
                & (np.abs(delta) > config.theta2_tol)
                & (np.abs(delta) > config.pin_decay * np.abs(prev_delta))
            )
            flips = np.where(flip, flips + 1, 0)
            new_pins = (flips >= config.pin_flips) & ~pinned
            if new_pins.any():
                pinned |= new_pins
                theta2 = np.where(new_pins, 0.5 * (x_new + x_prev_new), theta2)
                level_diag["pinned_nodes"] = int(pinned.sum())
                prev_delta = None
                x_prev_new = x_new
                continue
        prev_delta = delta
        x_prev_new = x_new
        theta2 = np.where(
            pinned, theta2, theta2 + config.theta2_damping * (x_new - theta2)
        )
    else:
        fail(
            f"perturbation field kept moving ({change:.3e} > {config.theta2_tol:.1e}) "
            f"after {config.max_outer} outer passes on a {grid.nz}x{grid.ny} grid"
        )
    return phi, theta2, level_diag


def _solve_nested(
    params: ModelParams,
    grid: DualGrid,
    config: SolverConfig,
    payoff_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    chain = [grid]
    if config.nested:
        while (coarse := chain[0].coarsened()) is not None:
            chain.insert(0, coarse)
    levels: list[dict] = []
    phi0 = theta20 = None
    phi = theta2 = None
    for level in chain:
        # coarse levels only supply a warm start, so a level that cannot
        # settle (its active-set cycle may have no fixed point at that
        # resolution) passes its best iterate up instead of aborting
        try:
            phi, theta2, diag = _solve_level(params, level, config, payoff_fn, phi0, theta20)
        except NonConvergenceError as e:
            if level is chain[-1]:
                raise
            diag = e.diagnostics or {}
            phi = diag.pop("phi", None)
            theta2 = diag.pop("theta2", None)
            diag["best_effort"] = str(e)
        levels.append(diag)
        if level is not chain[-1]:
            nxt = chain[len(levels)]
            if phi is None:
                phi0 = theta20 = None
            else:
                phi0 = _interp_to(level, phi, nxt)
                theta20 = np.clip(
                    _interp_to(level, theta2, nxt), -config.theta2_cap, config.theta2_cap
                )
    return phi, theta2, levels


def solve(
    params: ModelParams, grid: DualGrid, config: SolverConfig | None = None
) -> SolutionField:
    """Solve the working-phase dual variational inequality on ``grid``.

    Returns the converged :class:`SolutionField`; raises
    :class:`NonConvergenceError` (with partial diagnostics attached) if either
    the sweep loop or the perturbation fixed point fails to settle.
    """
    config = config or SolverConfig()

    def payoff_fn(mz, my):
        return dual_running_payoff(mz, my, params.prefs)

    phi, theta2, levels = _solve_nested(params, grid, config, payoff_fn)
    return _package(params, grid, config, phi, theta2, levels, payoff_fn)


def solve_post_retirement(
    params: ModelParams,
    z_min: float,
    z_max: float,
    nz: int,
    config: SolverConfig | None = None,
) -> SolutionField:
    """Solve the retired problem on a 1-d z grid with Dirichlet ends.

    No obstacle, gradient bound, or perturbation: the stationary equation
    with the retired flow conjugate, whose exact solution is the closed-form
    retired dual value.  Used to validate operator and solver accuracy.
    """
    base = config or SolverConfig()
    config = replace(base, obstacle=False, gradient_constraint=False, minimax=False)
    grid = DualGrid(np.geomspace(z_min, z_max, nz), np.array([1.0]))

    def payoff_fn(mz, my):
        return retired_flow_dual(mz, params.merton)

    phi, theta2, levels = _solve_nested(params, grid, config, payoff_fn)
    return _package(params, grid, config, phi, theta2, levels, payoff_fn)


def _package(params, grid, config, phi, theta2, levels, payoff_fn) -> SolutionField:
    beta = params.prefs.discount
    mz, my = grid.meshes()
    payoff = payoff_fn(mz, my)
    ubar = merton_dual(grid.z_nodes, params.merton)
    scale = np.maximum(1.0, np.maximum(np.abs(ubar)[:, None], np.abs(payoff) / beta))
    derivs = derivative_fields(phi, grid)
    region = classify_regions(
        phi, ubar, scale, grid.hp, config.region_tol,
        obstacle=config.obstacle, gradient_constraint=config.gradient_constraint,
    )
    if config.minimax and grid.ny > 1 and params.wage.rho_orth > 0.0:
        # the stored perturbation is the one the final frozen solve used
        # (pinned nodes keep their pinned value); the formula re-evaluation
        # only supplies the degeneracy mask and the self-consistency gap
        x_form, degen = minimax_theta2(
            params, mz, my, derivs["d_zz"], derivs["d_zy"], phi=phi,
            hess_floor=config.hess_floor, cap=config.theta2_cap,
            chi_floor=config.chi_floor_frac * scale,
        )
        theta2_fin = np.asarray(theta2, dtype=float)
        theta2_gap = float(np.abs(x_form - theta2_fin).max())
    else:
        theta2_fin = np.zeros_like(phi)
        degen = np.zeros_like(phi, dtype=bool)
        theta2_gap = 0.0
    top = levels[-1]
    diagnostics = {
        "converged": True,
        "backend": kernels.BACKEND,
        "outer_iterations": top.get("outer_iterations", 1),
        "inner_iterations": top.get("inner_iterations", 0),
        "final_residual": top.get("final_residual", np.nan),
        "theta2_sup_change": top.get("theta2_sup_change", 0.0),
        "excess_nodes": top.get("excess_nodes", 0),
        "central_fraction": top.get("central_fraction", 1.0),
        "degenerate_nodes": int(degen.sum()),
        "pinned_nodes": top.get("pinned_nodes", 0),
        "theta2_formula_gap": theta2_gap,
        "region_counts": {
            Region(k).name.lower(): int(v)
            for k, v in zip(*np.unique(region, return_counts=True))
        },
        "levels": levels,
    }
    return SolutionField(
        params=params, grid=grid, config=config, phi=phi, payoff=payoff,
        ubar=ubar, scale=scale, theta2=theta2_fin, theta2_degenerate=degen,
        region=region, derivs=derivs, diagnostics=diagnostics,
    )


def discrete_residual(sol: SolutionField) -> np.ndarray:
    """Scaled complementarity residual of the stored field, full stencil.

    Reassembles the discrete operator at the stored perturbation (implicit
    and explicit parts recombined) and evaluates the double-obstacle defect
    node by node; boundary rows are not meaningful.
    """
    coef, excess, _ = assemble_system(sol.grid, sol.params, sol.theta2)
    if excess is not None:
        coef = coef + excess
    return complementarity_residual(
        sol.phi, coef, sol.payoff, sol.ubar, sol.scale, sol.grid.hp,
        sol.params.prefs.discount, sol.config.obstacle, sol.config.gradient_constraint,
    )


def operator_residual(sol: SolutionField, node: tuple[int, int] | None = None):
    """Nonlinear stationary operator applied to the solved field.

    Uses the field's own finite-difference derivatives, so this is the
    analytic-form residual (not the discrete stencil one): small in the
    continuation region, positive where the wealth bound reflects, negative
    inside the stopped region.  ``node = (i, j)`` picks out one value.
    """
    mz, my = sol.grid.meshes()
    d = sol.derivs
    out = stationary_operator(
        sol.params, mz, my, sol.phi, d["d_z"], d["d_zz"], d["d_y"], d["d_yy"],
        d["d_zy"], sol.payoff, hess_floor=sol.config.hess_floor,
    )
    return out if node is None else float(out[node])


def minimax_v(sol: SolutionField, node: tuple[int, int] | None = None):
    """Minimizing kernel perturbation v* = [0; theta2] on the solved field.

    Returns the full (nz, ny, 2) array of v* vectors, or the 2-vector at
    ``node``; the first component is identically zero because admissible
    perturbations are orthogonal to the asset volatility.
    """
    v = np.zeros(sol.theta2.shape + (2,))
    v[..., 1] = sol.theta2
    return v if node is None else v[node]
