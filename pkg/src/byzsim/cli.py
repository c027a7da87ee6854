"""Command-line entry point: ``byzsim <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds, engine, report
from .config import SWEEP_AXES, ExperimentPlan, load_config, load_plan
from .data import heterogeneity_stats
from .errors import ByzSimError, ConfigInvalid, ContractionViolated

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load(path, seed=None):
    cfg = load_config(path)
    if seed is not None:
        cfg = cfg.replace(**{"run.master_seed": seed})
    return cfg


def _strict_checks(setup):
    """Raise when the run violates the step-size or contraction condition."""
    a0, L = setup.schedule.alpha(0), setup.profile.l_smooth
    if a0 > 1.0 / (2.0 * L):
        raise ConfigInvalid(f"step-size condition alpha0 <= 1/(2L) fails: {a0:.6g} > {1 / (2 * L):.6g}", "schedule")
    if not setup.topology.byzantine:
        return None
    cert = engine.certify(setup)
    bounds.contraction_margin(setup.virtual_w.lam, len(setup.agents), cert.rho_hat)
    return cert


def _write_run(setup, out, threads, strict):
    cert = _strict_checks(setup) if strict else None
    trace, wall = engine.timed(engine.run_config, setup.cfg, setup, threads)
    out = Path(out)
    report.write_text(out / "trace.csv", trace.to_csv())
    report.write_text(out / "config.json", setup.cfg.to_json())
    report.write_json(out / "summary.json", engine.run_summary(setup, trace, wall, cert))
    return trace


def cmd_run(args):
    cfg = _load(args.config, args.seed)
    setup = engine.prepare(cfg)
    _write_run(setup, args.out, args.threads, args.strict_theory)
    print(f"wrote {Path(args.out) / 'trace.csv'}")


def _stats(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.all(np.isnan(v)):
        return float("nan"), float("nan")
    std = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
    return float(np.mean(v)), std


def run_sweep(plan, threads=None, strict=False):
    """Run every cell of ``plan``; returns the aggregate CSV text."""
    out = Path(plan.out)
    axes = [a for a in plan.sweep if a != "seed" and plan.sweep[a]]
    header = ["cell", "config_hash", *axes, "n_seeds"]
    for m in ("gap", "opt_error", "H_k", "stability"):
        header += [f"{m}_mean", f"{m}_std"]
    rows = []
    for i, overrides in enumerate(plan.cells()):
        cell_cfg = plan.base.replace(**overrides)
        cell_dir = out / f"cell_{i:03d}"
        report.write_text(cell_dir / "config.json", cell_cfg.to_json())
        finals = {"gap": [], "opt_error": [], "H_k": [], "stability": []}
        for seed in plan.seeds():
            cfg = cell_cfg.replace(**{"run.master_seed": seed})
            setup = engine.prepare(cfg)
            trace = _write_run(setup, cell_dir / f"seed_{seed}", threads, strict)
            for m in ("gap", "opt_error", "H_k"):
                finals[m].append(trace.final(m))
            if plan.stability_pairs:
                est = engine.run_coupled_stability(cfg, plan.stability_pairs, setup=setup, threads=threads)
                report.write_text(cell_dir / f"seed_{seed}" / "stability.csv", est.to_csv())
                finals["stability"].append(est.final())
        values = [cell_cfg.to_dict()[k.split(".")[0]][k.split(".")[1]] for k in (SWEEP_AXES[a] for a in axes)]
        row = [i, cell_cfg.hash(), *values, len(plan.seeds())]
        for m in ("gap", "opt_error", "H_k", "stability"):
            row += list(_stats(finals[m]))
        rows.append(row)
    text = report.table_csv(header, rows)
    report.write_text(out / "sweep.csv", text)
    report.write_json(out / "plan.json", plan.to_dict())
    return text


def cmd_sweep(args):
    plan = load_plan(args.plan)
    if args.out:
        plan = ExperimentPlan(plan.base, plan.sweep, args.out, plan.max_cells, plan.stability_pairs)
    if args.seed is not None:
        plan = ExperimentPlan(plan.base.replace(**{"run.master_seed": args.seed}), plan.sweep, plan.out,
                              plan.max_cells, plan.stability_pairs)
    run_sweep(plan, args.threads, args.strict_theory)
    print(f"wrote {Path(plan.out) / 'sweep.csv'}")


def cmd_stability(args):
    cfg = _load(args.config, args.seed)
    setup = engine.prepare(cfg)
    if args.strict_theory:
        _strict_checks(setup)
    est = engine.run_coupled_stability(cfg, args.pairs, setup=setup, threads=args.threads)
    out = Path(args.out)
    report.write_text(out / "stability.csv", est.to_csv())
    report.write_text(out / "config.json", cfg.to_json())
    print(f"wrote {out / 'stability.csv'}")


def cmd_certify(args):
    cfg = _load(args.config, args.seed)
    setup = engine.prepare(cfg)
    cert = engine.certify(setup, trials=args.trials)
    sys.stdout.write(report.dumps(cert.to_dict()))
    if args.strict_theory:
        bounds.contraction_margin(setup.virtual_w.lam, len(setup.agents), cert.rho_hat)


def _parse_grid(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigInvalid(f"bad k-grid {text!r}", "--k-grid")


def cmd_bounds(args):
    cfg = _load(args.config, args.seed)
    setup = engine.prepare(cfg)
    x0 = np.full(setup.n_params, float(cfg.run.init_value))
    x_star = setup.minimizer
    probes = [x0, x_star]
    sigma, delta = heterogeneity_stats(setup.local_data, probes, cfg.loss.reg)
    rho, cert = 0.0, None
    if setup.topology.byzantine and setup.aggregator.kind != "mean":
        cert = engine.certify(setup, trials=args.trials)
        rho = cert.rho_hat
    offset = setup.schedule.offset if setup.schedule.kind != "experiment" else 1.0
    bi = bounds.BoundInputs(
        mu=setup.profile.mu, l_smooth=setup.profile.l_smooth, sigma_sq=sigma, delta_sq=delta,
        lam=setup.virtual_w.lam, chi_sq=setup.virtual_w.chi_sq, rho=rho, n_agents=len(setup.agents),
        z_per_agent=setup.dataset.z, k_offset=offset, init_dist_sq=float(np.sum((x0 - x_star) ** 2)),
    )
    agent = engine.choose_isolated_agent(setup)
    phi = engine.estimate_discrepancy_proxy(setup, probes, agent) if len(setup.dataset.test_set) else 0.0
    out = bounds.evaluate_all(bi, _parse_grid(args.k_grid), phi)
    out["rho_certificate"] = cert.to_dict() if cert else None
    out["phi_proxy_agent"] = agent
    if args.strict_theory:
        _strict_checks(setup)
    sys.stdout.write(report.dumps(out))


def cmd_plot(args):
    metrics = args.metrics.split(",") if args.metrics else None
    report.plot_csvs(args.csv, args.out, x=args.x, metrics=metrics, logx=args.logx, logy=args.logy, title=args.title)
    print(f"wrote {args.out}")


def cmd_partition_report(args):
    cfg = _load(args.config, args.seed)
    setup = engine.prepare(cfg)
    rep = setup.dataset.report()
    rep["byzantine"] = sorted(setup.topology.byzantine)
    rep["honest"] = setup.agents
    text = report.dumps(rep)
    if args.out:
        report.write_text(Path(args.out) / "partition.json", text)
    sys.stdout.write(text)


def build_parser():
    p = argparse.ArgumentParser(prog="byzsim", description="Decentralized SGD simulator with Byzantine agents.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--seed", type=int, default=None, help="override run.master_seed")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
        sp.add_argument("--strict-theory", action="store_true",
                        help="fail unless alpha0 <= 1/(2L) and the contraction condition holds")

    sp = sub.add_parser("run", help="run one configuration")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="run every cell of an experiment plan")
    sp.add_argument("plan")
    common(sp, out_default=None)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("stability", help="coupled-run stability estimate")
    sp.add_argument("config")
    sp.add_argument("--pairs", type=int, default=32)
    common(sp)
    sp.set_defaults(fn=cmd_stability)

    sp = sub.add_parser("certify", help="empirical contraction certificate for the aggregator")
    sp.add_argument("config")
    sp.add_argument("--trials", type=int, default=200)
    common(sp)
    sp.set_defaults(fn=cmd_certify)

    sp = sub.add_parser("bounds", help="evaluate the closed-form bounds")
    sp.add_argument("config")
    sp.add_argument("--k-grid", default="100,1000,10000")
    sp.add_argument("--trials", type=int, default=200)
    common(sp)
    sp.set_defaults(fn=cmd_bounds)

    sp = sub.add_parser("plot", help="render CSV columns to SVG")
    sp.add_argument("csv", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--x", default="step")
    sp.add_argument("--metrics", default=None, help="comma-separated columns")
    sp.add_argument("--logx", action="store_true")
    sp.add_argument("--logy", action="store_true")
    sp.add_argument("--title", default=None)
    sp.set_defaults(fn=cmd_plot)

    sp = sub.add_parser("partition-report", help="per-agent class histograms")
    sp.add_argument("config")
    common(sp, out_default=None)
    sp.set_defaults(fn=cmd_partition_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.fn(args)
    except (ConfigInvalid, ContractionViolated) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ByzSimError, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
