"""Command-line entry point.

Subcommands: analyze (one exposure block on a CSV), scan (rotate every
predictor through the exposure slot), simulate (one synthetic draw and
estimate), coverage (replication study), oracle-check (solver vs
closed-form oracle audit). Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure; every failure prints one line prefixed
`error[kind]:`. Unexpected internal faults map to exit 3.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from .config import ProblemSpec
from .data import load_multisource_csv
from .errors import DataError, MimalError, UsageError
from .inference import estimate_importance, loco_scan, scan_csv_rows
from .learners import LearnerSpec
from .oracles import linear_l2_saddle_oracle, quadratic_moments_from_data
from .rng import derive_seed, make_rng, resolve_seed
from .simulate import SCENARIOS, emit_report, generate_scenario, run_replications

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    command: str
    data: str = None
    scenario: str = None
    schema: dict = None
    spec: dict = None
    out: str = None
    seed: int = 0
    jobs: int = 1
    reps: int = None
    n: int = None
    truth: float = None
    paired: bool = None
    no_sources: bool = None
    exposure_groups: dict = None
    instances: int = None
    verbose: int = 0

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_spec_flags(p):
    p.add_argument("--loss", "--loss-kind", dest="loss_kind",
                   choices=["squared_error", "logistic", "poisson"])
    p.add_argument("--learner-f", help="JSON learner spec for f")
    p.add_argument("--learner-g", help="JSON learner spec for g")
    p.add_argument("--learner-b", help="JSON learner spec for the baseline")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--alpha", type=float)
    p.add_argument("--inflation-tau", "--tau", dest="inflation_tau", type=float)
    p.add_argument("--ridge-delta", "--ridge-q", dest="ridge_delta", type=float)
    cf = p.add_mutually_exclusive_group()
    cf.add_argument("--cross-fit", dest="cross_fit", action="store_true",
                    default=None)
    cf.add_argument("--no-cross-fit", dest="cross_fit", action="store_false",
                    default=None)
    p.add_argument("--optimizer", help="JSON optimizer schedule overrides")


def _add_common(p):
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="worker pool width (default: available parallelism)")
    p.add_argument("--config", help="JSON config file; overrides flags")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_data_flags(p):
    p.add_argument("--data", help="input CSV path")
    p.add_argument("--source", help="source/site column")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--exposure", help="comma-separated exposure columns")
    p.add_argument("--adjust", help="comma-separated adjustment columns")
    p.add_argument("--time", help="time column (forces paired alignment)")
    p.add_argument("--paired", action="store_true",
                   help="treat equal-length sources as time-aligned")


def build_parser():
    top = _Parser(prog="mimal", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command")
    pa = sub.add_parser("analyze", help="estimate one exposure block")
    _add_data_flags(pa)
    _add_spec_flags(pa)
    _add_common(pa)
    ps = sub.add_parser("scan", help="per-predictor importance scan")
    _add_data_flags(ps)
    ps.add_argument("--exposure-group", action="append", default=[],
                    metavar="name:col1,col2", help="scan a column block as one")
    ps.add_argument("--no-sources", action="store_true",
                    help="skip per-source estimates")
    _add_spec_flags(ps)
    _add_common(ps)
    pm = sub.add_parser("simulate", help="one synthetic draw and estimate")
    pm.add_argument("--scenario", choices=sorted(SCENARIOS))
    pm.add_argument("--n", type=int, help="rows per source override")
    _add_spec_flags(pm)
    _add_common(pm)
    pc = sub.add_parser("coverage", help="replication coverage study")
    pc.add_argument("--scenario", choices=sorted(SCENARIOS))
    pc.add_argument("--reps", type=int)
    pc.add_argument("--truth", type=float, help="coverage target override")
    _add_spec_flags(pc)
    _add_common(pc)
    po = sub.add_parser("oracle-check", help="solver vs closed-form oracle")
    po.add_argument("--instances", type=int, default=20)
    po.add_argument("--n", type=int, default=5000)
    _add_common(po)
    return top


def _parse_learner(text):
    try:
        return LearnerSpec.from_dict(json.loads(text))
    except (json.JSONDecodeError, TypeError) as exc:
        raise UsageError("learner spec must be a JSON object", text=text) \
            from exc


def _spec_from_args(args, config):
    fields = {}
    for key in ("loss_kind", "K", "alpha", "inflation_tau", "ridge_delta",
                "cross_fit"):
        val = getattr(args, key, None)
        if val is not None:
            fields[key] = val
    for key in ("learner_f", "learner_g", "learner_b"):
        val = getattr(args, key, None)
        if val is not None:
            fields[key] = _parse_learner(val).to_dict()
    if getattr(args, "optimizer", None) is not None:
        try:
            fields["optimizer"] = json.loads(args.optimizer)
        except json.JSONDecodeError as exc:
            raise UsageError("optimizer overrides must be JSON") from exc
    fields.update(config.get("spec") or {})
    return fields


def _schema_from_args(args, config):
    schema = {
        "source": args.source, "outcome": args.outcome,
        "exposure": [c.strip() for c in (args.exposure or "").split(",") if c.strip()],
        "adjust": [c.strip() for c in (args.adjust or "").split(",") if c.strip()],
        "time": args.time,
    }
    schema.update(config.get("schema") or {})
    return schema


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError("cannot read config file", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise UsageError("config file is not valid JSON", path=str(path)) \
            from exc


def _default_jobs():
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def _resolve(args):
    config = _load_config_file(getattr(args, "config", None))
    seed = resolve_seed(config.get("seed", getattr(args, "seed", None)))
    jobs = config.get("jobs", getattr(args, "jobs", None))
    groups = {}
    for item in getattr(args, "exposure_group", []) or []:
        name, _, cols = item.partition(":")
        if not name or not cols:
            raise UsageError("expected --exposure-group name:col1,col2",
                             got=item)
        groups[name] = [c.strip() for c in cols.split(",") if c.strip()]
    groups.update(config.get("exposure_groups") or {})
    return RunConfig(
        command=args.command,
        data=config.get("data", getattr(args, "data", None)),
        scenario=config.get("scenario", getattr(args, "scenario", None)),
        schema=_schema_from_args(args, config) if hasattr(args, "source") else None,
        spec=_spec_from_args(args, config),
        out=config.get("out", getattr(args, "out", None)),
        seed=seed,
        jobs=int(jobs) if jobs is not None else _default_jobs(),
        reps=config.get("reps", getattr(args, "reps", None)),
        n=config.get("n", getattr(args, "n", None)),
        truth=config.get("truth", getattr(args, "truth", None)),
        paired=config.get("paired", getattr(args, "paired", None)),
        no_sources=config.get("no_sources", getattr(args, "no_sources", None)),
        exposure_groups=groups or None,
        instances=config.get("instances", getattr(args, "instances", None)),
        verbose=getattr(args, "verbose", 0),
    )


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config-echo.json")
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    return path


def _load_data(cfg, paired):
    if not cfg.data:
        raise UsageError("--data is required")
    data = load_multisource_csv(cfg.data, cfg.schema)
    if paired and not data.paired:
        data = data.as_paired()
    return data


def _problem_spec(cfg):
    return ProblemSpec.from_dict(cfg.spec or {})


def _cmd_analyze(cfg, args):
    data = _load_data(cfg, cfg.paired)
    spec = _problem_spec(cfg)
    cfg.spec = spec.to_dict()
    est = estimate_importance(data, spec, seed=cfg.seed)
    payload = est.to_dict()
    if cfg.out:
        _echo_config(cfg, cfg.out)
        with open(os.path.join(cfg.out, "estimate.json"), "w") as fh:
            json.dump(payload, fh, indent=2)
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_scan(cfg, args):
    data = _load_data(cfg, cfg.paired)
    spec = _problem_spec(cfg)
    cfg.spec = spec.to_dict()
    results = loco_scan(data, spec, seed=cfg.seed,
                        groups=cfg.exposure_groups,
                        include_sources=not cfg.no_sources)
    rows = scan_csv_rows(results)
    width = max((len(r[0]) for r in rows), default=6)
    print(f"{'target':<{width}}  {'i_hat':>12}  {'se_infl':>10}  "
          f"{'ci_lo':>12}  {'ci_hi':>12}")
    for target, i_hat, _se, se_i, lo, hi in rows:
        print(f"{target:<{width}}  {i_hat:>12.6f}  {se_i:>10.6f}  "
              f"{lo:>12.6f}  {hi:>12.6f}")
    for entry in results:
        if entry["error"] is not None:
            print(f"{entry['target']}: failed ({entry['error']})")
    if cfg.out:
        _echo_config(cfg, cfg.out)
        payload = [{
            "target": e["target"],
            "estimate": e["estimate"].to_dict() if e["estimate"] else None,
            "sources": [s.to_dict() for s in e["sources"]],
            "error": e["error"],
        } for e in results]
        with open(os.path.join(cfg.out, "scan.json"), "w") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def _cmd_simulate(cfg, args):
    if not cfg.scenario:
        raise UsageError("--scenario is required")
    data = generate_scenario(cfg.scenario, derive_seed(cfg.seed, 0), n=cfg.n)
    spec = SCENARIOS[cfg.scenario].spec(**(cfg.spec or {}))
    cfg.spec = spec.to_dict()
    est = estimate_importance(data, spec, seed=derive_seed(cfg.seed, 1))
    if cfg.out:
        _echo_config(cfg, cfg.out)
        with open(os.path.join(cfg.out, "estimate.json"), "w") as fh:
            json.dump(est.to_dict(), fh, indent=2)
    print(json.dumps(est.to_dict(), indent=2))
    return 0


def _cmd_coverage(cfg, args):
    if not cfg.scenario or not cfg.reps:
        raise UsageError("--scenario and --reps are required")
    report = run_replications(cfg.scenario, cfg.reps, overrides=cfg.spec,
                              master_seed=cfg.seed, jobs=cfg.jobs,
                              truth=cfg.truth)
    out = cfg.out or "."
    cfg.spec = report.spec
    _echo_config(cfg, out)
    emit_report(report, "json", os.path.join(out, "report.json"))
    emit_report(report, "csv", os.path.join(out, "replications.csv"))
    print(f"{report.scenario}: R={report.R} coverage={report.coverage:.3f} "
          f"mean={report.mean_i_hat:.6f} sd={report.sd_i_hat:.6f} "
          f"truth={report.truth:.6f} failures={report.failures}")
    return 0


def _cmd_oracle_check(cfg, args):
    from .data import MultiSourceDataset, SourceDataset
    from .learners import fit_all_baselines
    from .optimizer import default_schedule, solve_saddle
    fspec = LearnerSpec(family="linear_basis", basis="identity")
    gspec = LearnerSpec(family="linear_basis", basis="identity",
                        include_intercept=True)
    worst_val, worst_q, checked = 0.0, 0.0, 0
    lines = []
    for i in range(int(cfg.instances)):
        rng = make_rng(derive_seed(cfg.seed, i, stream=11))
        M = 2 + int(rng.integers(2))
        d = 2 + int(rng.integers(4))
        sources = []
        for m in range(M):
            X = rng.uniform(-2.0, 2.0, size=(args.n, d))
            y = X @ rng.normal(size=d) + rng.standard_normal(args.n)
            sources.append(SourceDataset(source_id=m, y=y, X=X,
                                         Z=np.empty((args.n, 0))))
        data = MultiSourceDataset(sources=sources)
        baselines = fit_all_baselines(gspec, "squared_error", data)
        saddle = solve_saddle("squared_error", data, (fspec, gspec),
                              default_schedule("linear_basis"), baselines,
                              seed=i)
        oracle = linear_l2_saddle_oracle(
            quadratic_moments_from_data(data, fspec, gspec, baselines))
        dv = abs(saddle.reward_at_solution - oracle.value) / max(1.0, abs(oracle.value))
        dq = float(np.max(np.abs(saddle.q_hat - oracle.q_star)))
        checked += 1
        worst_val = max(worst_val, dv)
        if not oracle.flat:
            worst_q = max(worst_q, dq)
        lines.append({"instance": i, "M": M, "d": d, "value_rel_err": dv,
                      "q_linf_err": dq, "flat": oracle.flat})
        print(f"instance {i}: M={M} d={d} value_rel={dv:.2e} "
              f"q_linf={dq:.2e}{' (flat)' if oracle.flat else ''}")
    ok = worst_val < 1e-3 and worst_q < 1e-2
    print(f"oracle-check: {checked} instances, worst value_rel={worst_val:.2e} "
          f"worst q_linf={worst_q:.2e} -> {'PASS' if ok else 'FAIL'}")
    if cfg.out:
        _echo_config(cfg, cfg.out)
        with open(os.path.join(cfg.out, "oracle-report.json"), "w") as fh:
            json.dump({"instances": lines, "pass": ok}, fh, indent=2)
    if not ok:
        raise MimalError("solver disagrees with the closed-form oracle",
                         kind="numeric", exit_code=3)
    return 0


_COMMANDS = {"analyze": _cmd_analyze, "scan": _cmd_scan,
             "simulate": _cmd_simulate, "coverage": _cmd_coverage,
             "oracle-check": _cmd_oracle_check}


def run(argv):
    args = build_parser().parse_args(argv)
    if not args.command:
        raise UsageError("a command is required",
                         commands=sorted(_COMMANDS))
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    cfg = _resolve(args)
    return _COMMANDS[args.command](cfg, args)


def main(argv=None):
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except MimalError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # internal faults still exit nonzero, one line
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
