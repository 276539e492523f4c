"""Command line entry point: groundstate, minimize, sweep, analyze, run."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, KminlabError
from .fieldio import ensure_dir, read_profile_csv, write_kfld, write_profile_csv
from .groundstate import moment_table, solve_ground_state


def _gs(args):
    prof = solve_ground_state(args.rmax, args.nodes, args.tol)
    moments = [float(m) for m in args.moments.split(",") if m.strip()] if args.moments else []
    write_profile_csv(args.out, prof, moments)
    print(f"Q(0)={prof.q_at_zero:.12g} beta_star={prof.mass:.12g} grad_norm={prof.grad_norm:.12g} "
          f"quartic={prof.quartic:.12g}")
    for p, m in moment_table(prof, moments).entries.items():
        print(f"m_{p:g}={m:.12g}")
    return 0


def _load(args):
    from .harness import RunConfig

    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "regime", None) not in (None, "auto"):
        cfg = replace(cfg, regime=args.regime)
    return cfg


def _profile(cfg, where):
    from .harness import cached_ground_state

    return cached_ground_state(cfg.groundstate_params(), where)


def _minimize(args):
    from .harness import beta_value, build_problem, run_sweep

    cfg = _load(args)
    out = Path(args.out)
    ensure_dir(out.parent if str(out.parent) else ".")
    prof = _profile(cfg, out.parent / ".cache")
    grid, spec = build_problem(cfg)
    cfg = replace(cfg, sweep={**cfg.sweep, "b_grid": [args.b], "aux_lattice": False})
    _, res = run_sweep(cfg, prof, grid, spec, b_values=[args.b])
    r = res[0][0]
    write_kfld(out, r.u)
    bd = r.breakdown
    print(f"b={r.b:g} beta={beta_value(cfg, prof.beta_star):.10g} energy={bd.total:.12g} mu={bd.mu:.10g} "
          f"eps_b={r.eps_b:.6g} max_point=({r.max_point[0]:.6g}, {r.max_point[1]:.6g}) "
          f"iterations={r.iterations} converged={r.converged}")
    return 0 if r.converged else 1


def _sweep(args):
    from .harness import SweepWriter, build_problem, parse_b_grid, run_sweep

    cfg = _load(args)
    b_values = parse_b_grid(args.b_grid) if args.b_grid else cfg.b_values()
    out = Path(args.out)
    ensure_dir(out.parent if str(out.parent) else ".")
    prof = _profile(cfg, out.parent / ".cache")
    grid, spec = build_problem(cfg)
    writer = SweepWriter(out)
    ok = []

    def on_result(r, ebar_h, start, captured):
        writer.add(r, ebar_h, start, captured)
        ok.append(r.converged)
        print(f"b={r.b:.4g} energy={r.energy:.10g} eps_b={r.eps_b:.4g} converged={r.converged}", flush=True)

    try:
        run_sweep(cfg, prof, grid, spec, b_values=b_values, on_result=on_result)
    finally:
        writer.close()
    return 0 if ok and all(ok) else 1


def _analyze(args):
    from .asymptotics import predict
    from .geometry import classify_wells
    from .harness import analyze_rows, beta_value, build_problem, read_sweep, write_report
    from .asymptotics import regime_of

    rows = read_sweep(args.sweep)
    if not rows:
        raise ConfigError("sweep file has no valid rows", field="sweep")
    prof = read_profile_csv(args.profile)
    grid = spec = None
    if args.config:
        cfg = _load(args)
        grid, spec = build_problem(cfg)
        cls = classify_wells(spec, grid, prof)
        beta = beta_value(cfg, prof.beta_star)
        regime = args.regime if args.regime != "auto" else (
            cfg.regime if cfg.regime != "auto" else regime_of(cls.regime_side, beta, prof.beta_star))
        pred = predict(regime, cls.p, cls.lam, cls.kappa, beta, prof.beta_star)
    else:
        if args.regime == "auto" or args.p is None or args.kappa is None:
            raise ConfigError("without --config, give --regime, --p and --kappa (and --lam for interior regimes)")
        beta = rows[0]["beta"]
        pred = predict(args.regime, args.p, args.lam, args.kappa, beta, prof.beta_star)
    report = analyze_rows(rows, pred, grid, spec, prof if grid is not None else None)
    write_report(args.out, report)
    for rec in report:
        print(f"b={rec['b']:.4g} e_normalized={rec['e_normalized']:.6g} predicted={rec['predicted_limit']:.6g} "
              f"eps_normalized={rec['eps_normalized']:.6g}")
    return 0


def _run(args):
    from .harness import run_experiment

    cfg = _load(args)
    out = args.out_dir or cfg.output.get("dir", "kminlab-out")
    return run_experiment(cfg, out, log=lambda m: print(m, flush=True))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kminlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("groundstate", help="solve for Q and write q_profile.csv")
    g.add_argument("--rmax", type=float, default=20.0)
    g.add_argument("--nodes", type=int, default=8000)
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--moments", default="1,2,3")
    g.add_argument("--out", default="q_profile.csv")
    g.set_defaults(func=_gs)

    m = sub.add_parser("minimize", help="one constrained minimization, field written as KFLD")
    m.add_argument("--config", required=True)
    m.add_argument("--b", type=float, required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--out", default="field.kfld")
    m.set_defaults(func=_minimize)

    s = sub.add_parser("sweep", help="continuation sweep in b, rows appended to sweep.csv")
    s.add_argument("--config", required=True)
    s.add_argument("--b-grid", dest="b_grid")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="sweep.csv")
    s.set_defaults(func=_sweep)

    a = sub.add_parser("analyze", help="normalized quantities and predicted limits for a sweep")
    a.add_argument("--sweep", required=True)
    a.add_argument("--profile", required=True)
    a.add_argument("--regime", default="auto")
    a.add_argument("--config")
    a.add_argument("--p", type=float)
    a.add_argument("--kappa", type=float)
    a.add_argument("--lam", type=float)
    a.add_argument("--out", default="report.csv")
    a.set_defaults(func=_analyze)

    r = sub.add_parser("run", help="full pipeline: ground state, sweep, report")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir", dest="out_dir")
    r.add_argument("--seed", type=int)
    r.add_argument("--regime")
    r.set_defaults(func=_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KminlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
