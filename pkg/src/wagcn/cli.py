"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical abort (or failed
gradient check), 3 I/O error. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .checkpoint import load_checkpoint
from .data import SynthConfig, load_manifest, synth_generate
from .errors import ConfigError, ValidationError, WagcnError
from .gradcheck import GradcheckConfig, gradcheck
from .graph import MODES, VARIANTS, GraphConfig
from .metrics import dataset_eval, export_curves, read_scores_dir, write_score_csv
from .model import score_video
from .trainer import TrainConfig, apply_overrides, run_ablation, sweep_sampling_length, train

CONFIG_DIR_ENV = "WAGCN_CONFIG_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report(ValidationError(message), 1)
        sys.exit(1)


def _report(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)


def _resolve_config(path):
    if path is None:
        return None
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(CONFIG_DIR_ENV):
        alt = Path(os.environ[CONFIG_DIR_ENV]) / p
        if alt.exists():
            return alt
    return p


def _load_json(path) -> dict:
    path = _resolve_config(path)
    if path is None:
        return {}
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None


def _train_config(args) -> TrainConfig:
    base = TrainConfig().to_dict()
    merged = copy.deepcopy(base)
    file_cfg = _load_json(args.config)
    unknown = set(file_cfg) - set(base)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key, value in file_cfg.items():
        if key == "graph" and isinstance(value, dict):
            bad = set(value) - set(base["graph"])
            if bad:
                raise ConfigError(f"unknown config keys {sorted('graph.' + k for k in bad)}")
            merged["graph"].update(value)
        else:
            merged[key] = value
    merged = apply_overrides(merged, args.set)
    if getattr(args, "workers", None) is not None:
        merged["workers"] = args.workers
    return TrainConfig.from_dict(merged)


def _write_effective(out: Path, cfg: dict):
    target = out if out.suffix == "" else out.parent
    target.mkdir(parents=True, exist_ok=True)
    with open(target / "effective_config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def cmd_synth(args):
    base = asdict(SynthConfig())
    merged = {**base, **_load_json(args.config)}
    if set(merged) - set(base):
        raise ConfigError(f"unknown config keys {sorted(set(merged) - set(base))}")
    merged = apply_overrides(merged, args.set)
    cfg = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in merged.items()})
    out = Path(args.out)
    ds = synth_generate(cfg, out)
    _write_effective(out, asdict(cfg))
    print(json.dumps({"train": ds.train.path, "test": ds.test.path}))
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    manifest = load_manifest(args.manifest)
    test = load_manifest(args.test_manifest) if args.test_manifest else None
    out = Path(args.out)
    _write_effective(out, cfg.to_dict())
    res = train(manifest, cfg, test, out)
    print(json.dumps({"checkpoint": res.checkpoint, "final_auc": res.final_auc, "best_auc": res.best_auc}))
    return 0


def cmd_score(args):
    params = load_checkpoint(args.model)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in manifest:
        write_score_csv(out / f"{rec.id}.csv", score_video(rec.load_features(), params))
    _write_effective(out, {"model": str(args.model), "manifest": str(args.manifest)})
    return 0


def cmd_eval(args):
    manifest = load_manifest(args.manifest, check_files=False)
    result = dataset_eval(manifest, read_scores_dir(args.scores_dir, manifest))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.save(out)
    _write_effective(out, {"scores_dir": str(args.scores_dir), "manifest": str(args.manifest)})
    print(json.dumps({"auc": result.auc}))
    return 0


def cmd_curves(args):
    manifest = load_manifest(args.manifest, check_files=False)
    wanted = set(args.video or [])
    missing = wanted - {r.id for r in manifest}
    if missing:
        raise ValidationError(f"videos not in manifest: {sorted(missing)}")
    records = [r for r in manifest if not wanted or r.id in wanted]
    scores = read_scores_dir(args.scores_dir, type(manifest)(records))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        export_curves(rec.id, scores[rec.id], rec.anomaly_intervals, rec.frame_count, out / f"{rec.id}.csv", args.render)
    _write_effective(out, {"scores_dir": str(args.scores_dir), "manifest": str(args.manifest), "render": args.render})
    return 0


def cmd_sweep(args):
    cfg = _train_config(args)
    train_m, test_m = load_manifest(args.manifest), load_manifest(args.test_manifest)
    out = Path(args.out)
    _write_effective(out, {**cfg.to_dict(), "T_values": args.T})
    rows = sweep_sampling_length(train_m, test_m, cfg, args.T, out)
    print(json.dumps(rows))
    return 0


def cmd_ablate(args):
    cfg = _train_config(args)
    train_m, test_m = load_manifest(args.manifest), load_manifest(args.test_manifest)
    out = Path(args.out)
    _write_effective(out, cfg.to_dict())
    rows = run_ablation(train_m, test_m, cfg, out)
    print(json.dumps(rows))
    return 0


def cmd_gradcheck(args):
    cfg = GradcheckConfig(
        T=args.T,
        D=args.D,
        dims=args.dims,
        graph=GraphConfig(variant=args.variant, mode=args.mode, embed_dim=args.embed_dim),
        residual=not args.no_residual,
    )
    report = gradcheck(cfg, seed=args.seed, tolerance=args.tolerance, h=args.h)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _write_effective(out, {**asdict(cfg), "seed": args.seed, "tolerance": args.tolerance, "h": args.h})
    print(text)
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wagcn", description="Weakly supervised adaptive GCN for video anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_config(p):
        p.add_argument("--config", help=f"JSON config file (relative names also searched in ${CONFIG_DIR_ENV})")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-key override, repeatable")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_config(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-manifest", help="evaluate on this manifest (final and every eval_every epochs)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, help="parallel per-video workers")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-video segment scores")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for <id>.csv files")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="frame-level ROC/AUC of score files")
    p.add_argument("--scores-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="export frame score curves")
    p.add_argument("--scores-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--video", action="append", help="restrict to this video id, repeatable")
    p.add_argument("--render", action="store_true", help="also write an SVG per video")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("sweep", help="sampling-length sweep")
    add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--T", type=int, nargs="+", required=True, help="sampling lengths")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="adjacency/graph-mode/residual ablation")
    add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--variant", choices=VARIANTS, default="dyn_a1")
    p.add_argument("--mode", choices=MODES, default="global")
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--dims", type=int, nargs="+", default=[16, 8, 4, 1])
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except WagcnError as exc:
        _report(exc, exc.exit_code)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        _report(exc, 1)
        return 1
    except OSError as exc:
        _report(exc, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
