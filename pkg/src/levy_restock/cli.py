"""Command-line front end.

Subcommands: solve, gamma-scan, value, sweep-kc, compare, simulate, verify,
reproduce-paper.  Each reads a JSON run configuration, writes CSV/JSON, and
follows the exit-code contract 0 = pass, 1 = configuration error,
2 = numeric failure, so reproduction runs can be gated in CI.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .costs import CostSpec, HybridPolicy, gamma_big, value_total
from .model import LevyModel
from .scale import KernelSet
from .sim import HybridSim, PureDiscountedApprox, SimConfig, bias_budget, mc_value
from .solver import (
    SolverError,
    pure_discounted_barrier,
    pure_discounted_value,
    pure_regular_barrier,
    pure_regular_value,
    solve_barriers,
)
from .verify import full_report

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        try:
            ref = resources.files("levy_restock.configs") / path
            if ref.is_file():
                return json.loads(ref.read_text())
        except (ModuleNotFoundError, FileNotFoundError):
            pass
        raise ConfigError(f"config not found: {path}")
    return json.loads(p.read_text())


def build_problem(cfg: dict):
    try:
        model = LevyModel.from_dict(cfg["model"])
        spec = CostSpec.from_dict(cfg)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    ks = KernelSet(model, spec.q, spec.lam)
    return model, spec, ks


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as e:
        raise ConfigError(f"bad grid spec {text!r}, expected lo:hi:n") from e


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _emit(out_path, payload: dict):
    text = json.dumps(payload, indent=2, default=float)
    print(text)
    if out_path:
        Path(out_path).write_text(text + "\n")


# ---------------------------------------------------------------- commands

def cmd_solve(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    solver_cfg = cfg.get("solver", {})
    sol = solve_barriers(spec, ks,
                         tol_residual=solver_cfg.get("tol_residual", 1e-8),
                         bracket_cap=solver_cfg.get("bracket_cap"))
    _emit(args.out, sol.to_dict())
    return EXIT_OK


def cmd_gamma_scan(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    sol = solve_barriers(spec, ks)
    if sol.kind != "hybrid":
        raise SolverError("gamma-scan needs a hybrid solution")
    a_star, b_star = sol.a_star, sol.b_star
    if args.a_list:
        a_values = [float(t) for t in args.a_list.split(",")]
    else:
        a_values = [a_star + d for d in (-0.010, -0.005, 0.0, 0.005, 0.010)]
    if args.b_range:
        b_grid = _parse_grid(args.b_range)
    else:
        b_grid = np.linspace(a_star + 1e-3, b_star + 2.0, 121)
    rows = []
    for a in a_values:
        for b in b_grid:
            if b <= a + 1e-9:
                continue
            rows.append((a, float(b), gamma_big(spec, ks, a, float(b))))
    # anchor row at the solved pair
    rows.append((a_star, b_star, gamma_big(spec, ks, a_star, b_star)))
    _write_csv(args.out or "gamma_scan.csv", ["a", "b", "Gamma"], rows)
    return EXIT_OK


def _policy_label(a: float, b: float) -> str:
    return f"v[a={a:.6g},b={b:.6g}]"


def cmd_value(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    sol = solve_barriers(spec, ks)
    if sol.kind != "hybrid":
        raise SolverError("value grid needs a hybrid solution")
    a_star, b_star = sol.a_star, sol.b_star
    if args.policies:
        pairs = []
        for tok in args.policies.split(";"):
            a_s, b_s = tok.split(":")
            pairs.append((float(a_s), float(b_s)))
    else:
        pairs = [(a_star, b_star),
                 (a_star, b_star - 0.2), (a_star, b_star + 0.2),
                 (a_star, b_star + 0.4),
                 (a_star - 0.1, b_star), (a_star + 0.1, b_star)]
    if args.x_grid:
        xs = _parse_grid(args.x_grid)
    else:
        xs = np.arange(a_star - 3.0, b_star + 5.0 + 1e-9, 0.05)
    xs = np.unique(np.concatenate([xs, [a_star, b_star]]))
    header = ["x"] + [_policy_label(a, b) for a, b in pairs]
    rows = []
    for x in xs:
        row = [float(x)]
        for a, b in pairs:
            row.append(value_total(spec, ks, HybridPolicy(a, b), float(x)))
        rows.append(row)
    _write_csv(args.out or "value.csv", header, rows)
    return EXIT_OK


def cmd_sweep_kc(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    kc_list = ([float(t) for t in args.kc_list.split(",")]
               if args.kc_list else [10.0, 6.0, 4.0, 3.0, 2.5, 2.1])
    x_ref = args.x_ref if args.x_ref is not None else 0.0
    rows = []
    for kc in kc_list:
        spec_k = CostSpec(q=spec.q, lam=spec.lam, K_c=kc, K_p=spec.K_p,
                          f_pieces=[(p.get("from"), p["coeffs"])
                                    for p in cfg["f"]["pieces"]])
        sol = solve_barriers(spec_k, ks)
        rows.append((kc, sol.a_star, sol.b_star,
                     value_total(spec_k, ks,
                                 HybridPolicy(sol.a_star, sol.b_star), x_ref)))
    _write_csv(args.out or "sweep_kc.csv", ["K_c", "a_star", "b_star", "v_xref"],
               rows)
    return EXIT_OK


def cmd_compare(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    sol = solve_barriers(spec, ks)
    a_star, b_star = sol.a_star, sol.b_star
    a_reg_kc = pure_regular_barrier(spec, ks, spec.K_c)
    a_reg_kp = pure_regular_barrier(spec, ks, spec.K_p)
    b_dd = pure_discounted_barrier(spec, ks)
    if args.x_grid:
        xs = _parse_grid(args.x_grid)
    else:
        xs = np.arange(a_star - 3.0, b_star + 5.0 + 1e-9, 0.1)
    rows = []
    for x in xs:
        x = float(x)
        rows.append((
            x,
            value_total(spec, ks, HybridPolicy(a_star, b_star), x),
            pure_regular_value(spec, ks, a_reg_kc, x),
            pure_discounted_value(spec, ks, b_dd, x),
            pure_regular_value(spec, ks, a_reg_kp, x),
        ))
    _write_csv(args.out or "compare.csv",
               ["x", "v_hybrid", "v_pure_regular", "v_pure_discounted",
                "v_pure_regular_kp"], rows)
    return EXIT_OK


def cmd_simulate(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    sol = solve_barriers(spec, ks)
    sim_cfg = cfg.get("sim", {})
    try:
        base = dict(dt=float(sim_cfg["dt"]), horizon=float(sim_cfg["horizon"]),
                    n_paths=int(sim_cfg["n_paths"]),
                    seed=int(args.seed if args.seed is not None
                             else sim_cfg.get("seed", 0)),
                    x0=float(sim_cfg.get("x0", sol.b_star)))
    except KeyError as e:
        raise ConfigError(f"sim config missing {e}") from e
    if base["n_paths"] < 1 or base["dt"] <= 0 or base["horizon"] <= 0:
        raise ConfigError("sim config needs n_paths >= 1, dt > 0, horizon > 0")
    if sol.kind == "hybrid":
        policy = HybridSim(sol.a_star, sol.b_star)
        analytic = value_total(spec, ks,
                               HybridPolicy(sol.a_star, sol.b_star),
                               base["x0"])
    else:
        policy = PureDiscountedApprox(sol.b_star - 16.2 / ks.phi_q_lam,
                                      sol.b_star)
        analytic = pure_discounted_value(spec, ks, sol.b_star, base["x0"])
    run = SimConfig(policy=policy, **base)
    res = mc_value(model, spec, run)
    budget = bias_budget(model, spec, run, analytic)
    ok = abs(analytic - res.mean) <= 3 * res.stderr + budget
    _emit(args.out, {
        "analytic": analytic,
        "mc_mean": res.mean,
        "mc_stderr": res.stderr,
        "bias_budget": budget,
        "components": res.components,
        "backend": res.backend,
        "n_paths": res.n_paths,
        "pass": bool(ok),
    })
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_verify(cfg: dict, args) -> int:
    model, spec, ks = build_problem(cfg)
    sol = solve_barriers(spec, ks)
    rep = full_report(spec, ks, sol)
    _emit(args.out, rep.to_dict())
    return EXIT_OK if rep.all_passed else EXIT_NUMERIC


def cmd_reproduce_paper(cfg_unused: dict, args) -> int:
    """End-to-end reproduction of the numerical study: both arrival-rate
    cases, the tangency scan, value grids, the unit-cost sweep, and the
    policy comparison at high and low arrival rates."""
    outdir = Path(args.out or "paper_outputs")
    outdir.mkdir(parents=True, exist_ok=True)
    ns = argparse.Namespace(out=None, a_list=None, b_range=None, x_grid=None,
                            policies=None, kc_list=None, x_ref=None, seed=None)
    status = EXIT_OK
    for name in ("paper_lambda2.json", "paper_lambda12.json"):
        cfg = load_config(name)
        tag = name.replace("paper_", "").replace(".json", "")
        ns_solve = argparse.Namespace(**{**vars(ns),
                                         "out": str(outdir / f"solve_{tag}.json")})
        status |= cmd_solve(cfg, ns_solve)
        ns_val = argparse.Namespace(**{**vars(ns),
                                       "out": str(outdir / f"value_{tag}.csv")})
        status |= cmd_value(cfg, ns_val)
    cfg2 = load_config("paper_lambda2.json")
    status |= cmd_gamma_scan(cfg2, argparse.Namespace(
        **{**vars(ns), "out": str(outdir / "gamma_scan_lambda2.csv")}))
    status |= cmd_sweep_kc(cfg2, argparse.Namespace(
        **{**vars(ns), "out": str(outdir / "sweep_kc.csv")}))
    status |= cmd_compare(cfg2, argparse.Namespace(
        **{**vars(ns), "out": str(outdir / "compare_lambda2.csv")}))
    cfg02 = load_config("paper_lambda02.json")
    status |= cmd_compare(cfg02, argparse.Namespace(
        **{**vars(ns), "out": str(outdir / "compare_lambda02.csv")}))
    status |= cmd_verify(cfg2, argparse.Namespace(
        **{**vars(ns), "out": str(outdir / "verify_lambda2.json")}))
    print(f"wrote outputs to {outdir}")
    return status


COMMANDS = {
    "solve": cmd_solve,
    "gamma-scan": cmd_gamma_scan,
    "value": cmd_value,
    "sweep-kc": cmd_sweep_kc,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "reproduce-paper": cmd_reproduce_paper,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="levy-restock",
        description="hybrid-barrier inventory control: solve, verify, "
                    "simulate, reproduce")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", default="paper_lambda2.json",
                   help="path to a JSON run config, or the name of a bundled "
                        "one (paper_lambda2.json, paper_lambda12.json, "
                        "paper_lambda02.json)")
    p.add_argument("--out", default=None, help="output file (or directory "
                                               "for reproduce-paper)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--x-grid", dest="x_grid", default=None,
                   help="grid as lo:hi:n")
    p.add_argument("--a-list", dest="a_list", default=None,
                   help="comma-separated lower barriers for gamma-scan")
    p.add_argument("--b-range", dest="b_range", default=None,
                   help="upper-barrier grid for gamma-scan as lo:hi:n")
    p.add_argument("--policies", default=None,
                   help="semicolon-separated a:b pairs for the value grid")
    p.add_argument("--kc-list", dest="kc_list", default=None,
                   help="comma-separated K_c values for sweep-kc")
    p.add_argument("--x-ref", dest="x_ref", type=float, default=None)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = (load_config(args.config)
               if args.command != "reproduce-paper" else {})
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ValueError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
