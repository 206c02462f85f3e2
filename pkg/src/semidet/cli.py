"""Command-line entry point: ``semidet gen-data | train | eval | ablate``.

Exit codes: 0 success, 1 invalid input (config, arguments, mismatched
checkpoint), 2 runtime failure (divergence, I/O).
"""

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import storage
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import BREAKDOWN_THRESHOLDS, EvalReport, full_report
from .simworld import build_dataset, oracle_truth
from .trainer import DivergenceError, TrainLog, run_experiment

log = logging.getLogger("semidet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

PRESETS = {
    "selector_compare": ("selector", ("class", "box-score")),
    "assignment_compare": ("assignment", ("standard", "center-sampling", "soft")),
    "regression_compare": ("reg_loss", ("none", "confidence-l1", "listen2student")),
}


class UsageError(ValueError):
    """Bad arguments or inputs that do not fit together."""


def _load(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "reg_loss", None) is not None:
        over["reg_loss"] = args.reg_loss
    return cfg.override(**over) if over else cfg


def _split_for(cfg, data):
    if data is None:
        return build_dataset(cfg.world)
    if not Path(data).exists():
        raise UsageError(f"dataset {data} does not exist")
    split = storage.read_dataset(data, seed=cfg.seed)
    if not split.labeled:
        raise UsageError(f"dataset {data} has no labeled scenes")
    return split


# gen-data -----------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _load(args)
    split = build_dataset(cfg.world)
    out = Path(args.out)
    storage.write_dataset(split, out)
    n_boxes = sum(len(oracle_truth(s)[0]) for s in split.labeled + split.unlabeled)
    print(f"wrote {len(split.labeled) + len(split.unlabeled)} scenes ({len(split.labeled)} labeled, "
          f"{len(split.unlabeled)} unlabeled, {n_boxes} boxes) to {out}")
    print(f"wrote {len(split.test)} held-out scenes to {storage.heldout_path(out)}")
    return EXIT_OK


# train --------------------------------------------------------------------

def train_run(cfg, split, out_dir, resume=None, stop_at=None, checkpoint_every=0):
    """Train, writing checkpoint / log files into ``out_dir``. Returns ``(log, state)``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = cfg.config_hash()
    state, tlog = None, None
    if resume is not None:
        state, tlog, _ = storage.read_checkpoint(resume, expected_hash=digest)
    tlog = tlog if tlog is not None else TrainLog()
    tc = cfg.train

    def on_checkpoint(st):
        if checkpoint_every and st.iteration % checkpoint_every == 0:
            storage.write_checkpoint(out_dir / f"checkpoint_{st.iteration:07d}.json", st, digest,
                                     st.stage(tc), tlog)

    tlog, state = run_experiment(tc, split, cfg.world, state=state, log=tlog, eval_scenes=split.test,
                                 stop_at=stop_at, on_checkpoint=on_checkpoint)
    storage.write_checkpoint(out_dir / "checkpoint.json", state, digest, state.stage(tc), tlog)
    storage.write_trainlog(out_dir / "trainlog.jsonl", tlog, digest)
    storage.write_steps(out_dir / "steps.jsonl", tlog)
    (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return tlog, state


def cmd_train(args):
    cfg = _load(args)
    split = _split_for(cfg, args.data)
    out = Path(args.out or cfg.out)
    tlog, state = train_run(cfg, split, out, resume=args.resume, stop_at=args.stop_at,
                            checkpoint_every=args.checkpoint_every)
    done = cfg.train.burn_in_iters + (cfg.train.mutual_iters if split.unlabeled else 0)
    if state.iteration < done:
        print(f"stopped at iteration {state.iteration} of {done}; checkpoint in {out / 'checkpoint.json'}")
        return EXIT_OK
    if split.test:
        report = full_report(state.student, state.teacher, cfg.train, split.test, [], cfg.config_hash())
        storage.write_json(out / "report.json", report.to_dict())
        print(f"{tlog.label} run finished: mAP@[.50:.95] = {report.map_50_95:.4f}")
    else:
        print(f"{tlog.label} run finished (no held-out scenes to evaluate)")
    return EXIT_OK


# eval ---------------------------------------------------------------------

def cmd_eval(args):
    digest = None
    cfg = ExperimentConfig()
    if args.config:
        cfg = _load(args)
        digest = cfg.config_hash()
    try:
        state, _, rec = storage.read_checkpoint(args.checkpoint, expected_hash=digest)
    except storage.FormatError as exc:
        raise UsageError(str(exc)) from None
    split = _split_for(cfg, args.data)
    scenes = {"test": split.test, "unlabeled": split.unlabeled, "labeled": split.labeled}[args.split]
    if not scenes:
        raise UsageError(f"no {args.split} scenes in {args.data}")
    if state.student.feature_dim != scenes[0].features.shape[1]:
        raise UsageError("checkpoint feature dimension does not match the dataset")
    report = full_report(state.student, state.teacher, cfg.train, scenes, split.unlabeled, rec["config_hash"])
    text = report.to_json()
    if args.out:
        storage.write_json(args.out, report.to_dict())
    print(text)
    return EXIT_OK


# ablate -------------------------------------------------------------------

def _arm_job(payload):
    text, seed, key, value = payload
    cfg = ExperimentConfig.from_text(text).override(seed=seed, **{key: value})
    split = build_dataset(cfg.world)
    tlog, state = run_experiment(cfg.train, split, cfg.world)
    report = full_report(state.student, state.teacher, cfg.train, split.test, split.unlabeled, cfg.config_hash())
    return report.to_dict()


def _columns(report):
    row = {f"AP{round(t * 100)}": report.ap[t] for t in BREAKDOWN_THRESHOLDS}
    row["mAP"] = report.map_50_95
    row["pseudo_precision"] = report.pseudo_precision
    row["pseudo_recall"] = report.pseudo_recall
    return row


def run_ablation(cfg, preset, seeds, jobs=1, arms=None):
    """All arms of ``preset`` over ``seeds``; returns the JSON-ready summary."""
    key, values = PRESETS[preset]
    values = tuple(arms) if arms is not None else values
    payloads = [(cfg.to_text(), s, key, v) for v in values for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_arm_job, payloads))
    else:
        results = [_arm_job(p) for p in payloads]
    out = {"preset": preset, "key": key, "seeds": list(seeds), "arms": []}
    for i, v in enumerate(values):
        reports = [EvalReport.from_dict(r) for r in results[i * len(seeds):(i + 1) * len(seeds)]]
        cols = [_columns(r) for r in reports]
        mean = {c: _mean([x[c] for x in cols]) for c in cols[0]}
        out["arms"].append({
            "arm": v,
            "config_hash": cfg.override(**{key: v}).config_hash(),
            "reports": [r.to_dict() for r in reports],
            "per_seed": cols,
            "mean": mean,
        })
    base = out["arms"][0]["mean"]
    for arm in out["arms"]:
        arm["delta"] = {c: None if arm["mean"][c] is None or base[c] is None else arm["mean"][c] - base[c]
                        for c in base}
    return out


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def ablation_csv(summary, field):
    buf = io.StringIO()
    cols = list(summary["arms"][0][field])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["arm"] + cols)
    for arm in summary["arms"]:
        writer.writerow([arm["arm"]] + ["" if arm[field][c] is None else repr(arm[field][c]) for c in cols])
    return buf.getvalue()


def cmd_ablate(args):
    cfg = _load(args)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    seeds = [cfg.seed + i for i in range(args.seeds)]
    summary = run_ablation(cfg, args.preset, seeds, jobs=args.jobs)
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_json(out / f"{args.preset}.json", summary)
    (out / f"{args.preset}.csv").write_text(ablation_csv(summary, "mean"), encoding="utf-8")
    (out / f"{args.preset}_delta.csv").write_text(ablation_csv(summary, "delta"), encoding="utf-8")
    print(ablation_csv(summary, "mean"), end="")
    print(f"delta vs {summary['arms'][0]['arm']}:")
    print(ablation_csv(summary, "delta"), end="")
    return EXIT_OK


# entry --------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="semidet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="key = value config file (defaults apply to missing keys)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(p, "dataset file (held-out scenes go to <stem>.test<suffix>)")
    p.set_defaults(func=cmd_gen_data, out="data.jsonl")

    p = sub.add_parser("train", help="burn-in plus mutual learning")
    common(p, "output directory (default: config 'out')")
    p.add_argument("--data", help="dataset file from gen-data (default: generate from the config)")
    p.add_argument("--reg-loss", choices=("none", "confidence-l1", "listen2student"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="halt after this many total iterations")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, "write the report JSON here as well as to stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset file (default: generate from the config)")
    p.add_argument("--split", choices=("test", "unlabeled", "labeled"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation preset")
    p.add_argument("preset", choices=sorted(PRESETS))
    common(p, "output directory (default: config 'out')")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from --seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        key = getattr(exc, "key", None)
        print(f"error: {exc}" + (f" [key: {key}]" if key and key not in str(exc) else ""), file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        if exc.dump:
            print(json.dumps(exc.dump, sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, storage.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
