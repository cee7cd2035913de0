"""Batch front door: config in, solved artifacts out.

``dualretire run --config run.ini --out results`` validates the parameter
set, solves the dual variational inequality, recovers primal values and the
retirement boundary, optionally runs the Monte Carlo verification suite, and
writes flat CSV/JSON artifacts for external plotting.  ``dualretire slice``
cuts a previously written solution along one axis.

Exit codes: 0 success, 2 malformed config, 3 ill-posed parameters,
4 solver non-convergence, 5 out-of-range request.  Failures print one JSON
line on stderr with a ``category`` field matching the exit code.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .conjugate import dual_utility
from .errors import ConfigError, NonConvergenceError, RangeError, WellPosednessError
from .fbsolver import SolverConfig, discrete_residual, solve
from .fbsolver.solve import SolutionField
from .grid import DualGrid
from .model import MarketParams, ModelParams, PreferenceParams, WageParams
from .primal import primal_value, retirement_boundary_wealth
from . import simcheck

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_WELLPOSED = 3
EXIT_NONCONV = 4
EXIT_RANGE = 5

_DEFAULTS: dict[str, dict[str, str]] = {
    "market": {"r": "0.03", "b": "0.07", "sigma": "0.2"},
    "wage": {"m1": "0.01", "m2": "0.1", "rho": "0.5"},
    "prefs": {"beta": "0.04", "gamma": "3.0", "alpha": "0.5", "l_cap": "0.5"},
    "grid": {"nz": "128", "ny": "128", "y_min": "0.25", "y_max": "4.0"},
    "solver": {},
    "sim": {
        "paths": "10000", "steps": "50", "dt": "0.04", "seed": "1234",
        "w0": "1.0", "y0": "1.0", "n_lambda": "20", "t_kernel": "1.0",
        "x_probes": "-1,0,1",
    },
    "output": {"dir": "out"},
    "toggles": {"obstacle": "true", "sequential": "false", "rho_sweep": ""},
}

_OPTIONAL_KEYS = {"grid": {"z_min", "z_max", "z_center"}}

_SOLVER_FLOATS = {f.name for f in fields(SolverConfig) if f.type == "float"}
_SOLVER_INTS = {f.name for f in fields(SolverConfig) if f.type == "int"}
_SOLVER_BOOLS = {f.name for f in fields(SolverConfig) if f.type == "bool"}


@dataclass
class RunConfig:
    """Fully parsed run request: model, grid, solver, simulation, outputs."""

    params: ModelParams
    grid: DualGrid
    solver: SolverConfig
    sim: dict
    outdir: Path
    sequential: bool
    rho_sweep: list
    echo: dict


def _parse_bool(raw: str, key: str) -> bool:
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"boolean key {key} got {raw!r}")


def _parse_list(raw: str) -> list:
    items = [s for s in str(raw).replace(";", ",").split(",") if s.strip()]
    return [float(s) for s in items]


def load_config(path: str | Path) -> dict:
    """Raw config mapping {section: {key: str}} from INI or JSON echo.

    JSON inputs may be a previously written ``summary.json`` (its ``config``
    key is the echo) or a bare section mapping; values are normalized to
    strings so both formats reproduce identical runs.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw: dict[str, dict[str, str]] = {}
    if path.suffix.lower() == ".json":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        obj = obj.get("config", obj)
        if not isinstance(obj, dict):
            raise ConfigError("JSON config must be a section mapping")
        for sec, kv in obj.items():
            if not isinstance(kv, dict):
                raise ConfigError(f"config section {sec!r} must be a mapping")
            raw[str(sec)] = {str(k): str(v) for k, v in kv.items()}
    else:
        cp = configparser.ConfigParser()
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config: {e}") from e
        raw = {sec: dict(cp.items(sec)) for sec in cp.sections()}
    for sec in raw:
        if sec not in _DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
    return raw


def build_run(raw: dict, out_override: str | None = None,
              sequential_flag: bool = False, rho_flag: str | None = None) -> RunConfig:
    """Merge a raw mapping over the defaults and construct the run pieces."""
    merged = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    for sec, kv in raw.items():
        for k, v in kv.items():
            known = k in merged[sec] or k in _OPTIONAL_KEYS.get(sec, ())
            if not known and sec != "solver":
                raise ConfigError(f"unknown key {k!r} in section [{sec}]")
            merged[sec][k] = str(v)
    if out_override:
        merged["output"]["dir"] = str(out_override)
    if sequential_flag:
        merged["toggles"]["sequential"] = "true"
    if rho_flag is not None:
        merged["toggles"]["rho_sweep"] = rho_flag

    try:
        market = MarketParams(
            r=float(merged["market"]["r"]),
            b=float(merged["market"]["b"]),
            sigma=float(merged["market"]["sigma"]),
        )
        wage = WageParams(
            m1=float(merged["wage"]["m1"]),
            m2=float(merged["wage"]["m2"]),
            rho=float(merged["wage"]["rho"]),
        )
        prefs = PreferenceParams(
            beta=float(merged["prefs"]["beta"]),
            gamma=float(merged["prefs"]["gamma"]),
            alpha=float(merged["prefs"]["alpha"]),
            l_cap=float(merged["prefs"]["l_cap"]),
        )
    except (ValueError, KeyError) as e:
        raise ConfigError(f"bad model parameter: {e}") from e
    params = ModelParams.from_parts(market, wage, prefs)

    g = merged["grid"]
    try:
        nz, ny = int(g["nz"]), int(g["ny"])
        y_min, y_max = float(g["y_min"]), float(g["y_max"])
        if "z_min" in g or "z_max" in g:
            grid = DualGrid.from_bounds(
                float(g["z_min"]), float(g["z_max"]), nz, y_min, y_max, ny
            )
        else:
            grid = DualGrid.for_params(
                params, nz=nz, ny=ny, y_min=y_min, y_max=y_max,
                z_center=float(g["z_center"]) if "z_center" in g else None,
            )
    except (ValueError, KeyError) as e:
        raise ConfigError(f"bad grid spec: {e}") from e

    kwargs = {}
    for k, v in merged["solver"].items():
        if k in _SOLVER_FLOATS:
            kwargs[k] = float(v)
        elif k in _SOLVER_INTS:
            kwargs[k] = int(v)
        elif k in _SOLVER_BOOLS:
            kwargs[k] = _parse_bool(v, k)
        else:
            raise ConfigError(f"unknown solver key {k!r}")
    kwargs["obstacle"] = _parse_bool(merged["toggles"]["obstacle"], "obstacle")
    solver = SolverConfig(**kwargs)

    s = merged["sim"]
    try:
        sim = {
            "paths": int(s["paths"]), "steps": int(s["steps"]),
            "dt": float(s["dt"]), "seed": int(s["seed"]),
            "w0": _parse_list(s["w0"]), "y0": _parse_list(s["y0"]),
            "n_lambda": int(s["n_lambda"]), "t_kernel": float(s["t_kernel"]),
            "x_probes": _parse_list(s["x_probes"]),
        }
    except ValueError as e:
        raise ConfigError(f"bad simulation spec: {e}") from e

    return RunConfig(
        params=params,
        grid=grid,
        solver=solver,
        sim=sim,
        outdir=Path(merged["output"]["dir"]),
        sequential=_parse_bool(merged["toggles"]["sequential"], "sequential"),
        rho_sweep=_parse_list(merged["toggles"]["rho_sweep"]),
        echo=merged,
    )


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _sanitize(obj):
    """JSON-safe copy: numpy scalars to python, arrays to lists."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_sanitize(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_solution_csv(path: Path, sol: SolutionField) -> None:
    """Node table, z-major: z, y, phi, phi_z, wealth, region, theta2."""
    wealth = sol.wealth()
    d_z = sol.derivs["d_z"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("z,y,phi,phi_z,wealth,region,theta2\n")
        for i, z in enumerate(sol.grid.z_nodes):
            for j, y in enumerate(sol.grid.y_nodes):
                fh.write(
                    f"{_fmt(z)},{_fmt(y)},{_fmt(sol.phi[i, j])},{_fmt(d_z[i, j])},"
                    f"{_fmt(wealth[i, j])},{int(sol.region[i, j])},"
                    f"{_fmt(sol.theta2[i, j])}\n"
                )


def write_boundary_csv(path: Path, boundary: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("y,z_star,w_star_I,w_star_grad\n")
        for k in range(boundary["y"].size):
            fh.write(
                f"{_fmt(boundary['y'][k])},{_fmt(boundary['z_star'][k])},"
                f"{_fmt(boundary['w_star'][k])},{_fmt(boundary['w_star_grad'][k])}\n"
            )


def export_slice(sol: SolutionField, axis: str, value: float,
                 path: Path | None = None) -> list[dict]:
    """One-dimensional cut of a solved field at fixed y (axis="y") or z.

    Rows carry the field, its z-slope, wealth, region, perturbation and the
    leisure regime of the conjugate maximizer (0 interior, 1 capped), which
    flips exactly once at the closed-form threshold along a wage slice.
    """
    if axis not in ("y", "z"):
        raise RangeError(f"axis must be 'y' or 'z', got {axis!r}")
    grid = sol.grid
    nodes = grid.y_nodes if axis == "y" else grid.z_nodes
    if not (nodes[0] <= value <= nodes[-1]):
        raise RangeError(
            f"{axis} = {value:g} outside the solved range [{nodes[0]:g}, {nodes[-1]:g}]"
        )
    k = int(np.argmin(np.abs(np.log(nodes) - np.log(value))))
    wealth = sol.wealth()
    d_z = sol.derivs["d_z"]
    regime = dual_utility(*grid.meshes(), sol.params.prefs).regime
    rows = []
    if axis == "y":
        run_nodes, header = grid.z_nodes, "z"
        take = lambda arr: arr[:, k]
    else:
        run_nodes, header = grid.y_nodes, "y"
        take = lambda arr: arr[k, :]
    for t, phi, dz, w, reg, th2, rg in zip(
        run_nodes, take(sol.phi), take(d_z), take(wealth),
        take(sol.region), take(sol.theta2), take(regime),
    ):
        rows.append({
            header: float(t), "phi": float(phi), "phi_z": float(dz),
            "wealth": float(w), "region": int(reg), "theta2": float(th2),
            "regime": int(rg),
        })
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{header},phi,phi_z,wealth,region,theta2,regime\n")
            for r in rows:
                fh.write(
                    f"{_fmt(r[header])},{_fmt(r['phi'])},{_fmt(r['phi_z'])},"
                    f"{_fmt(r['wealth'])},{r['region']},{_fmt(r['theta2'])},"
                    f"{r['regime']}\n"
                )
    return rows


def _invariant_checks(sol: SolutionField, boundary: dict) -> list[dict]:
    res = discrete_residual(sol)
    wealth = sol.wealth()
    z = sol.grid.z_nodes
    phi_z_fd = np.diff(sol.phi, axis=0) / np.diff(z)[:, None]
    h0 = np.diff(z)[:-1, None]
    h1 = np.diff(z)[1:, None]
    phi_zz_fd = 2.0 * (
        h0 * sol.phi[2:, :] - (h0 + h1) * sol.phi[1:-1, :] + h1 * sol.phi[:-2, :]
    ) / (h0 * h1 * (h0 + h1))
    curv_scale = float(np.abs(phi_zz_fd).max())
    checks = [
        {"name": "complementarity_residual_interior", "tolerance": 1e-6,
         "value": float(np.abs(res[1:-1, :]).max())},
        {"name": "phi_decreasing_in_z", "tolerance": 1e-8,
         "value": float(phi_z_fd.max())},
        {"name": "phi_convex_in_z", "tolerance": 1e-8,
         "value": float(-phi_zz_fd.min()) / max(curv_scale, 1.0)},
        {"name": "wealth_nonnegative", "tolerance": 1e-8,
         "value": float(-(-sol.derivs["d_z"]).min())},
    ]
    # the refined boundary wealth and the nodal wealth at the interface can
    # disagree by a fraction of one z-cell; measure the gap in cell units
    cell = np.expm1(sol.grid.hp / sol.params.merton.gamma_eff)
    finite = np.isfinite(boundary["w_star"])
    if finite.any():
        gaps = [0.0]
        for j in np.flatnonzero(finite):
            stopped = sol.region[:, j] == 0
            if stopped.any():
                gaps.append(float(
                    (boundary["w_star"][j] - wealth[stopped, j].min())
                    / (cell * boundary["w_star"][j])
                ))
        checks.append({
            "name": "stopped_region_above_boundary_wealth",
            "tolerance": 1.5,
            "value": max(gaps),
        })
    for c in checks:
        c["passed"] = bool(c["value"] <= c["tolerance"])
    return checks


def _sim_checks(cfg: RunConfig, sol: SolutionField) -> tuple[list[dict], dict]:
    params, sim = cfg.params, cfg.sim
    checks: list[dict] = []
    for x in sim["x_probes"]:
        k = simcheck.kernel_check(
            params, float(x), t=sim["t_kernel"], n_paths=sim["paths"],
            seed=sim["seed"], sequential=cfg.sequential,
        )
        checks.append({
            "name": f"kernel_discount_x={x:g}", "tolerance": 3.0,
            "value": k["eh_sigmas"], "passed": bool(k["eh_sigmas"] <= 3.0),
        })
        checks.append({
            "name": f"kernel_prices_asset_x={x:g}", "tolerance": 3.0,
            "value": k["ehs_sigmas"], "passed": bool(k["ehs_sigmas"] <= 3.0),
        })
    zc = simcheck.z_consistency(params, x=0.7, seed=sim["seed"] + 1)
    checks.append({
        "name": "shadow_price_sde_strong_order", "tolerance": 0.35,
        "value": abs(zc["slope"] - 1.0), "passed": bool(abs(zc["slope"] - 1.0) <= 0.35),
    })

    l_cap = params.prefs.l_cap
    horizon = sim["steps"] * sim["dt"]

    def shaped(val):
        return lambda t, w, y: np.full(
            np.broadcast_shapes(np.shape(t), np.shape(w)), val, dtype=float
        )

    heur = simcheck.StrategySpec(
        consumption=lambda t, w, y: 0.05 * w + 0.2 * y,
        leisure=shaped(l_cap),
        risky=lambda t, w, y: 0.3 * w,
        tau=horizon, name="fraction-rule",
    )
    bond = simcheck.StrategySpec(
        shaped(0.0), shaped(1.0), shaped(0.0), tau=horizon, name="pure-bond"
    )
    w0, y0 = sim["w0"][0], sim["y0"][0]
    duality: dict = {}
    bundle = simcheck.simulate(
        params, [0.0, 0.0], sim["paths"], sim["steps"], sim["dt"],
        seed=sim["seed"] + 2, y0=y0, sequential=cfg.sequential,
    )
    budget = simcheck.budget_check(bundle, bond, params, w0)
    checks.append({
        "name": "bond_budget_residual", "tolerance": 3.0 * budget["se"],
        "value": abs(budget["residual"]),
        "passed": bool(abs(budget["residual"]) <= 3.0 * budget["se"] + 1e-12),
    })
    duality["budget_bond"] = budget
    for spec_ in (heur,):
        b2 = simcheck.simulate(
            params, [0.0, 0.0], sim["paths"], sim["steps"], sim["dt"],
            seed=sim["seed"] + 3, y0=y0, sequential=cfg.sequential,
        )
        rep = simcheck.duality_gap(b2, spec_, sol, w0, y0, n_lambda=sim["n_lambda"])
        duality[spec_.name] = {
            "j": rep["j"], "j_se": rep["j_se"], "min_gap": rep["min_gap"],
            "argmin_lambda": rep["argmin_lambda"], "violations": rep["violations"],
        }
        checks.append({
            "name": f"weak_duality_{spec_.name}", "tolerance": 0.0,
            "value": rep["violations"], "passed": bool(rep["violations"] == 0),
        })
    return checks, duality


def run(config_path: str, out_override: str | None = None,
        sequential: bool = False, skip_sim: bool = False,
        rho_sweep: str | None = None) -> int:
    """Execute a full run; returns the process exit code."""
    cfg = build_run(load_config(config_path), out_override, sequential, rho_sweep)
    cfg.outdir.mkdir(parents=True, exist_ok=True)

    sol = solve(cfg.params, cfg.grid, cfg.solver)
    boundary = retirement_boundary_wealth(sol)
    write_solution_csv(cfg.outdir / "solution.csv", sol)
    write_boundary_csv(cfg.outdir / "boundary.csv", boundary)

    evaluations = []
    for w0 in cfg.sim["w0"]:
        for y0 in cfg.sim["y0"]:
            pr = primal_value(w0, y0, sol)
            evaluations.append({
                "w0": w0, "y0": y0,
                "lambda_star": pr.lambda_star, "value": pr.value,
            })

    checks = _invariant_checks(sol, boundary)
    duality: dict = {}
    if not skip_sim:
        sim_checks, duality = _sim_checks(cfg, sol)
        checks.extend(sim_checks)

    if cfg.rho_sweep:
        _run_rho_sweep(cfg, checks)

    mc = cfg.params.merton
    summary = {
        "config": cfg.echo,
        "derived": {"gamma_eff": mc.gamma_eff, "xi": mc.xi, "theta1": mc.theta1},
        "evaluations": evaluations,
        "diagnostics": {
            k: v for k, v in sol.diagnostics.items() if k != "levels"
        },
        "duality": duality,
        "checks_passed": all(c["passed"] for c in checks),
    }
    _write_json(cfg.outdir / "summary.json", summary)
    _write_json(cfg.outdir / "checks.json", checks)
    return EXIT_OK


def _run_rho_sweep(cfg: RunConfig, checks: list[dict]) -> None:
    """Solve the sweep list on the shared grid and difference against rho=1."""
    rhos = list(cfg.rho_sweep)
    ref_params = ModelParams.from_parts(
        cfg.params.market, replace(cfg.params.wage, rho=1.0), cfg.params.prefs
    )
    ref = solve(ref_params, cfg.grid, cfg.solver)
    rows = []
    for i, rho in enumerate(rhos):
        p = ModelParams.from_parts(
            cfg.params.market, replace(cfg.params.wage, rho=float(rho)), cfg.params.prefs
        )
        s = solve(p, cfg.grid, cfg.solver) if rho != 1.0 else ref
        fname = f"solution_rho_{i}.csv"
        write_solution_csv(cfg.outdir / fname, s)
        sup = float(np.abs((s.phi - ref.phi) / ref.scale).max())
        rows.append((i, float(rho), sup,
                     float(s.diagnostics["final_residual"]), fname))
    with open(cfg.outdir / "rho_compare.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,rho,sup_diff_scaled,final_residual,file\n")
        for i, rho, sup, resid, fname in rows:
            fh.write(f"{i},{_fmt(rho)},{_fmt(sup)},{_fmt(resid)},{fname}\n")


def slice_cmd(out_dir: str, axis: str, value: float, name: str | None = None) -> int:
    """Cut a previously written run along one axis to a new CSV."""
    outdir = Path(out_dir)
    summary_path = outdir / "summary.json"
    solution_path = outdir / "solution.csv"
    if not summary_path.is_file() or not solution_path.is_file():
        raise ConfigError(f"no completed run found under {outdir}")
    cfg = build_run(load_config(summary_path))

    sol = solve(cfg.params, cfg.grid, cfg.solver)
    target = outdir / (name or f"slice_{axis}_{value:g}.csv")
    export_slice(sol, axis, value, target)
    return EXIT_OK


_CATEGORIES = [
    (ConfigError, "config", EXIT_CONFIG),
    (WellPosednessError, "well-posedness", EXIT_WELLPOSED),
    (NonConvergenceError, "non-convergence", EXIT_NONCONV),
    (RangeError, "range", EXIT_RANGE),
]


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="dualretire", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run", help="solve, recover, verify, write artifacts")
    rp.add_argument("--config", required=True, help="INI config or summary.json echo")
    rp.add_argument("--out", default=None, help="output directory override")
    rp.add_argument("--sequential", action="store_true",
                    help="single-stream simulation for bit-identical reruns")
    rp.add_argument("--skip-sim", action="store_true",
                    help="skip the Monte Carlo verification suite")
    rp.add_argument("--rho-sweep", default=None,
                    help="comma list of correlations to sweep against rho=1")

    sp = sub.add_parser("slice", help="cut a written solution along one axis")
    sp.add_argument("--out", required=True, help="directory of a completed run")
    sp.add_argument("--axis", required=True, choices=("y", "z"))
    sp.add_argument("--value", required=True, type=float)
    sp.add_argument("--name", default=None, help="output file name")

    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            return run(args.config, args.out, args.sequential,
                       args.skip_sim, args.rho_sweep)
        return slice_cmd(args.out, args.axis, args.value, args.name)
    except Exception as e:  # noqa: BLE001 - single translation point to exit codes
        for etype, category, code in _CATEGORIES:
            if isinstance(e, etype):
                print(json.dumps({"category": category, "message": str(e)}),
                      file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
