"""Command-line entry point: ``apptsched <command> [options]``."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from .config import POLICIES, ConfigError, RunConfig, config_from_dict, dump_config, load_config
from .domain import dumps_template, format_template, read_template
from .scenario import NO_SHOW_KINDS


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", type=Path, help="YAML run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("-o", "--out", type=Path, default=Path("runs"), help="parent of the run directory")
    p.add_argument("--policy", choices=POLICIES, help="policy under test (overrides run.policy_under_test)")
    p.add_argument("--beta", type=float, help="perishability exponent of the offer index")
    p.add_argument("--no-show", choices=NO_SHOW_KINDS, help="show-up model in the booking simulation")
    p.add_argument("--horizon", type=int, help="planning horizon in working days")
    p.add_argument("--warmup", type=int, help="warm-up working days excluded from metrics")
    p.add_argument("--workers", type=int, help="worker processes for the clinic simulation")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="apptsched", description="Robust weekly appointment templates for a single-provider clinic.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="optimize one month's template (no clinic-simulation cuts)")
    _common(p)
    p.add_argument("--month", type=int, default=0)
    p.add_argument("--gap", action="store_true", help="also estimate the statistical optimality gap")

    p = sub.add_parser("evaluate", help="clinic-simulation quantile KPIs of a template file")
    _common(p)
    p.add_argument("template", type=Path)

    p = sub.add_parser("simulate", help="booking simulation of one policy or template file")
    _common(p)
    p.add_argument("--template", type=Path, help="fixed template file instead of the policy's templates")

    p = sub.add_parser("pipeline", help="monthly optimize/simulate/cut loop plus the booking simulation")
    _common(p)
    p.add_argument("--gap", action="store_true", help="also estimate the statistical optimality gap")

    p = sub.add_parser("compare", help="policies side by side on one call stream")
    _common(p)
    p.add_argument("--policies", nargs="+", choices=POLICIES, default=["two_stage", "spt", "lcvb"])

    p = sub.add_parser("validate", help="check a configuration file")
    p.add_argument("config", type=Path)
    p.add_argument("--lenient", action="store_true", help="ignore unknown keys")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    run, policy, no_show = {}, {}, {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.policy:
        run["policy_under_test"] = args.policy
    if args.horizon is not None:
        run["planning_horizon"] = args.horizon
    if args.warmup is not None:
        run["warmup"] = args.warmup
    if args.workers is not None:
        run["workers"] = args.workers
    if args.beta is not None:
        policy["beta"] = args.beta
    if args.no_show:
        no_show["kind"] = args.no_show
    # route overrides back through validation
    data = cfg.to_dict()
    for block, changes in (("run", run), ("policy", policy), ("no_show", no_show)):
        data[block].update(changes)
    return config_from_dict(data)


def run_dir(parent: Path, command: str, cfg: RunConfig) -> Path:
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    d = parent / f"{stamp}-{command}-seed{cfg.run.seed}"
    n = 1
    while d.exists():
        n += 1
        d = parent / f"{stamp}-{command}-seed{cfg.run.seed}-{n}"
    d.mkdir(parents=True)
    return d


def _write(d: Path, files: dict[str, str]) -> None:
    for name, text in files.items():
        p = d / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)


def cmd_optimize(args, cfg: RunConfig, out: Path) -> None:
    from .optimizer import optimize_template
    from .pipeline import gap_csv, month_scenarios, saa_gap

    res = optimize_template(month_scenarios(cfg, args.month), cfg.model(), params=cfg.optimizer, month_index=args.month)
    cert = res.certificate
    files = {
        "template.csv": dumps_template(res.template, cfg.types, cfg.calendar),
        "search_log.jsonl": "".join(json.dumps(e, sort_keys=True, default=str) + "\n" for e in cert.search_log),
        "certificate.csv": "metric,value\n" + "".join(
            f"{k},{v}\n" for k, v in (("method", cert.method), ("objective", cert.objective),
                                      ("lower_bound", cert.lower_bound), ("relative_gap", cert.relative_gap),
                                      ("proven", int(cert.proven)), ("nodes", cert.nodes))
        ),
    }
    print(format_template(res.template, cfg.types, cfg.calendar))
    print(f"objective {res.objective:.4f}  bound {cert.lower_bound:.4f}  gap {cert.relative_gap:.2%}  ({cert.method})")
    if args.gap:
        g = saa_gap(cfg, args.month)
        files["saa_gap.csv"] = gap_csv(g)
        print(f"SAA gap {g.relative_gap:.2%}  lower {g.lower_bound_mean:.3f}  upper {g.upper_bound:.3f}")
    _write(out, files)


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    from .clinicflow import KPI_NAMES, evaluate_template
    from .pipeline import des_seed

    t = read_template(args.template, cfg.types, cfg.calendar)
    ev = evaluate_template(t, cfg.types, cfg.calendar, cfg.flow, des_seed(cfg), cfg.run.workers)
    lines = ["weekday," + ",".join(KPI_NAMES) + ",violates"]
    for w, row in enumerate(ev.kpis):
        lines.append(f"{w}," + ",".join(repr(round(float(v), 9)) for v in row) + f",{int(w in ev.violating_weekdays)}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(out, {"kpis.csv": text})


def cmd_simulate(args, cfg: RunConfig, out: Path) -> None:
    from .callcenter import dumps_log
    from .pipeline import report_for, simulate_policy

    source = read_template(args.template, cfg.types, cfg.calendar) if args.template else None
    res = simulate_policy(cfg, cfg.run.policy_under_test, source=source)
    rep = report_for(cfg, res)
    _print_headline(rep.headline())
    files = {"booking_log.csv": dumps_log(res.log), "report.csv": rep.to_csv(), "histograms.csv": rep.histograms_csv()}
    for m, t in res.templates.items():
        files[f"templates/month_{m:02d}.csv"] = dumps_template(t, cfg.types, cfg.calendar)
    _write(out, files)


def cmd_pipeline(args, cfg: RunConfig, out: Path) -> None:
    from .pipeline import run_pipeline

    art = run_pipeline(cfg, estimate_gap=args.gap)
    art.write(out)
    cuts = len(art.cuts)
    print(f"{len(art.months)} months optimized, {cuts} cut{'s' if cuts != 1 else ''}")
    _print_headline(art.report.headline())


def cmd_compare(args, cfg: RunConfig, out: Path) -> None:
    from .metrics import compare_policies
    from .pipeline import compare

    reports = compare(cfg, args.policies)
    cmp = compare_policies(reports)
    text = cmp.to_csv()
    print(text, end="")
    files = {"comparison.csv": text}
    for p, rep in reports.items():
        files[f"{p}/report.csv"] = rep.to_csv()
    _write(out, files)


def _print_headline(h: dict[str, float]) -> None:
    width = max(map(len, h))
    for k, v in h.items():
        print(f"{k:<{width}}  {v:.3f}")


COMMANDS = {
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            cfg = load_config(args.config, strict=not args.lenient)
        except ConfigError as exc:
            print("\n".join(exc.errors), file=sys.stderr)
            return 2
        print(dump_config(cfg), end="")
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print("\n".join(exc.errors), file=sys.stderr)
        return 2
    out = run_dir(args.out, args.command, cfg)
    (out / "config.yaml").write_text(dump_config(cfg))
    try:
        COMMANDS[args.command](args, cfg, out)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"outputs in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
