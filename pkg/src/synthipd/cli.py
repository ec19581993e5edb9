"""Command-line entry point: ``synthipd <verb> ...``.

Exit codes: 0 success, 1 failed step, 2 bad arguments or configuration,
3 infeasible covariate search start.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import simulate as sim
from .covgen import AnnealConfig, run_covgen, run_covgen_multistart
from .data import SCHEMA_VERSION, SubgroupSummaryTable, dataset_to_csv, read_csv
from .digitize import DigitizeJob
from .errors import ConfigError, InfeasibleStartError, SynthIpdError
from .metrics import evaluate
from .pipeline import PipelineJob, combine, km_plot_csv, run_pipeline, run_study, study_config
from .render import render_km_svg

log = logging.getLogger("synthipd")


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_assignment(path, n: int) -> np.ndarray:
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    if not rows or "covariate" not in rows[0]:
        raise ConfigError(f"{path}: expected a 'covariate' column")
    labels = np.array([int(r["covariate"]) for r in rows])
    if labels.size != n:
        raise ConfigError(f"{path}: {labels.size} labels for {n} records")
    return labels


# --------------------------------------------------------------------------
# verbs


def cmd_digitize(args) -> int:
    job = DigitizeJob.load(args.job)
    data, report = job.run(args.seed)
    Path(args.out).write_text(dataset_to_csv(data))
    if args.report:
        _dump(report.to_json(), args.report)
    log.info("wrote %d records to %s", len(data), args.out)
    return 0


def cmd_covgen(args) -> int:
    data = read_csv(args.ipd).without_covariate()
    target = SubgroupSummaryTable.load(args.targets)
    config = AnnealConfig.load(args.config) if args.config else AnnealConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.starts > 1:
        res = run_covgen_multistart(data, target, config, args.starts, args.extra_rate)
    else:
        res = run_covgen(data, target, config, extra_rates=args.extra_rate)
    Path(args.out).write_text(dataset_to_csv(data.with_covariate(res.assignment, target.k_max)))
    if args.trace:
        Path(args.trace).write_text(res.trace_csv())
    if args.report:
        report = res.report.to_json()
        report.update(iterations=res.iterations, gamma=res.gamma, stop_reason=res.stop_reason, seed=config.seed)
        _dump(report, args.report)
    log.info("L_m=%.4g L_HR=%.4g after %d iterations (%s)", res.loss_m, res.loss_hr, res.iterations, res.stop_reason)
    return 0


def cmd_combine(args) -> int:
    base = read_csv(args.ipd)
    labels = _read_assignment(args.assignment, len(base))
    target = SubgroupSummaryTable.load(args.targets) if args.targets else None
    data, table = combine(base.without_covariate(), labels, args.k_max, target)
    Path(args.out).write_text(dataset_to_csv(data))
    if args.summary:
        _dump(table.to_json(), args.summary)
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": SCHEMA_VERSION,
        "case": sim.normalize_case(args.case),
        "n": args.n,
        "reps": args.reps,
        "seed": args.seed,
        "seed_derivation": "numpy SeedSequence(seed).spawn(reps)",
        "margin": args.margin,
        "label_map": {str(k): v for k, v in sim.LABEL_MAP.items()} if args.margin == "joint" else None,
        "censoring": "exponential, one rate per dataset shared by both arms",
        "files": [],
    }
    for r, trial in enumerate(sim.simulate_many(args.case, args.n, args.reps, args.seed)):
        name = f"rep_{r:03d}.csv"
        (out / name).write_text(dataset_to_csv(trial.dataset(args.margin)))
        manifest["files"].append(
            {"file": name, "censor_rate": trial.censor_rate, "censored_fraction": trial.censored_fraction}
        )
    _dump(manifest, out / "manifest.json")
    return 0


def cmd_evaluate(args) -> int:
    true_data, synth = read_csv(args.true), read_csv(args.synth)
    k_max = max(int(true_data.covariate.max(initial=0)), int(synth.covariate.max(initial=0))) if (
        true_data.covariate is not None and synth.covariate is not None
    ) else None
    if k_max is not None:
        true_data = true_data.with_covariate(true_data.covariate, k_max)
        synth = synth.with_covariate(synth.covariate, k_max)
    report = evaluate(true_data, synth, tau=args.tau, paper_literal=args.paper_literal)
    _dump(report.to_json(), args.out)
    print(f"weighted NAUC {report.weighted_nauc:.4g}  averaged KS {report.averaged_ks:.4g}")
    return 0


def cmd_pipeline(args) -> int:
    job = PipelineJob.load(args.job)
    if args.out_dir:
        job.out_dir = Path(args.out_dir)
    res = run_pipeline(job, seed=args.seed)
    print(f"L_m {res.covgen.loss_m:.4g}  L_HR {res.covgen.loss_hr:.4g}  ({res.covgen.stop_reason})")
    for name, path in res.paths.items():
        log.info("%s: %s", name, path)
    return 0


def cmd_render(args) -> int:
    data = read_csv(args.ipd)
    style = json.loads(Path(args.style).read_text()) if args.style else None
    Path(args.out).write_bytes(render_km_svg(data, style))
    if args.plot_data:
        Path(args.plot_data).write_text(km_plot_csv(data))
    return 0


def cmd_study(args) -> int:
    config = study_config(args.max_iters, args.preset)
    rows = []
    for case in args.case:
        res = run_study(case, args.reps, args.n, args.seed, config, args.margin, args.threads)
        rows.append(res.to_json())
        m = res.means()
        print(
            f"{res.case:10s} {args.margin}: L_m {m['loss_m']:.2e}  L_HR {m['loss_hr']:.2e}  "
            f"NAUC {m['nauc']:.2e}  KS {m['ks']:.2e}"
        )
    if args.out:
        _dump({"schema": SCHEMA_VERSION, "studies": rows}, args.out)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(defaults: bool) -> argparse.ArgumentParser:
        # subcommands repeat the flags without defaults so they never mask a
        # value given before the verb
        g = argparse.ArgumentParser(add_help=False)
        keep = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        g.add_argument("--seed", type=int, default=keep(None), help="override the seed of the step or job")
        g.add_argument("--threads", type=int, default=keep(1), help="worker processes for independent runs")
        g.add_argument("--log-level", default=keep("WARNING"), choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return g

    common = global_flags(False)
    parser = argparse.ArgumentParser(
        prog="synthipd", description=__doc__.splitlines()[0], parents=[global_flags(True)]
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("digitize", parents=[common], help="SVG figure + at-risk table -> covariate-free IPD")
    p.add_argument("--job", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_digitize)

    p = sub.add_parser("covgen", parents=[common], help="assign covariates matching a subgroup table")
    p.add_argument("--ipd", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--report")
    p.add_argument("--extra-rate", type=float, action="append", default=[], help="survival-rate time to match")
    p.add_argument("--starts", type=int, default=1, help="independent chains; the best is kept")
    p.set_defaults(func=cmd_covgen)

    p = sub.add_parser("combine", parents=[common], help="attach covariate labels to IPD")
    p.add_argument("--ipd", required=True)
    p.add_argument("--assignment", required=True, help="CSV with a 'covariate' column")
    p.add_argument("--targets")
    p.add_argument("--k-max", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("simulate", parents=[common], help="generate ground-truth trials")
    p.add_argument("--case", required=True, choices=["1", "2", "3", *sim.CASES])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--margin", default="joint", choices=["x1", "x2", "joint"])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="NAUC and KS between two labelled IPD files")
    p.add_argument("--true", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--paper-literal", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", parents=[common], help="digitize, covgen and combine from a job file")
    p.add_argument("--job", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("render", parents=[common], help="draw Kaplan-Meier curves as SVG")
    p.add_argument("--ipd", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--style")
    p.add_argument("--plot-data", help="also write step-line vertices as CSV")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("study", parents=[common], help="simulation study: simulate, reassign, score")
    p.add_argument("--case", nargs="+", default=["1", "2", "3"])
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--margin", default="x1", choices=["x1", "x2", "joint"])
    p.add_argument("--max-iters", type=int, default=250_000)
    p.add_argument("--preset", default="desk", choices=["desk", "classic"], help="search settings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_study)
    return parser


def _step(exc) -> str:
    step = getattr(exc, "step", None)
    return f" in {step} step" if step else ""


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleStartError as exc:
        print(f"error{_step(exc)}: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=2, default=str), file=sys.stderr)
        return 3
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error{_step(exc)}: {exc}", file=sys.stderr)
        return 2
    except SynthIpdError as exc:
        print(f"error{_step(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
