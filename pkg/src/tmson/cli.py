"""Command-line entry point: gen-data | train | eval | predict | sweep |
gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import eval as ev
from . import verify
from .config import ConfigError, resolve_config
from .data import DataError, SynthConfig, generate_synthetic, load_jsonl, save_jsonl
from .model import MODALITIES, ModelConfig
from .training import (
    TrainConfig,
    TrainingError,
    load_checkpoint,
    save_checkpoint,
    train,
)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmson",
        description="Uncertainty-aware multimodal sentiment fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic multimodal data")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", dest="train_path", required=True)
    p.add_argument("--val", dest="val_path", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", default="mosi-acc2-nonneg",
                   choices=sorted(ev.SCHEMES))
    p.add_argument("--report", default=None)

    p = sub.add_parser("predict", help="per-sample predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--with-uncertainty", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="noise / missing-modality robustness sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--noise", default="")
    p.add_argument("--missing", default="")
    p.add_argument("--seeds", default="0")
    p.add_argument("--scheme", default="mosi-acc2-nonneg",
                   choices=sorted(ev.SCHEMES))
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)

    return parser


def cmd_gen_data(args) -> int:
    resolved = resolve_config(args.config, {"synth": {"seed": args.seed}})
    cfg = SynthConfig.from_dict(resolved["synth"])
    splits = generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        save_jsonl(ds, out / f"{name}.jsonl")
    manifest = {
        "bayes_floor_mae": splits["train"].header["bayes_floor_mae"],
        "config": resolved,
        "splits": {name: len(ds) for name, ds in splits.items()},
    }
    (out / "manifest.json").write_text(_dumps(manifest) + "\n", encoding="utf-8")
    print(f"wrote {len(splits)} splits to {out} "
          f"(bayes floor MAE {manifest['bayes_floor_mae']:.4f})")
    return 0


def cmd_train(args) -> int:
    resolved = resolve_config(args.config, {"train": {"seed": args.seed}})
    train_ds = load_jsonl(args.train_path)
    val_ds = load_jsonl(args.val_path)
    d_t, d_v, d_a = train_ds.dims
    model_cfg = ModelConfig(d_t=d_t, d_v=d_v, d_a=d_a, **resolved["model"])
    train_cfg = TrainConfig.from_dict(resolved["train"])
    model, history = train(train_ds, val_ds, model_cfg, train_cfg)
    save_checkpoint(args.out, model, seed=train_cfg.seed, config_echo=resolved)
    history_path = Path(str(args.out) + ".history.json")
    history_path.write_text(_dumps(history) + "\n", encoding="utf-8")
    best = min(h["val_mae"] for h in history)
    print(f"trained {len(history)} epochs, best val MAE {best:.4f}; "
          f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.model)
    ds = load_jsonl(args.data)
    report = ev.evaluate(model, ds, scheme=args.scheme)
    text = _dumps(report.to_dict())
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.model)
    ds = load_jsonl(args.data)
    preds, preds_m, raw_u = ev.evaluate_with_uncertainty(model, ds)
    cals = {k: ev.Calibration.from_values(v) for k, v in raw_u.items()}
    lines = []
    for i, sample in enumerate(ds.samples):
        rec = {
            "id": sample.id,
            "y_hat": float(preds[i]),
            **{f"y_hat_{m}": float(preds_m[m][i]) for m in MODALITIES},
        }
        if args.with_uncertainty:
            rec.update({
                f"u_{k}": cals[k].normalize(raw_u[k][i])
                for k in ("t", "v", "a", "f")
            })
        lines.append(_dumps(rec))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    model, _ = load_checkpoint(args.model)
    ds = load_jsonl(args.data)
    sweep = ev.robustness_sweep(
        model, ds,
        eta_grid=_csv_floats(args.noise),
        missing_grid=_csv_floats(args.missing),
        seeds=_csv_ints(args.seeds),
        scheme=args.scheme,
    )
    ev.sweep_to_csv(sweep, args.out)
    print(f"sweep table -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    errors = verify.gradcheck_suite(seed=args.seed)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:8s} max relative gradient error {err:.3e}")
    if worst <= verify.GRADCHECK_TOL:
        print(f"OK (all <= {verify.GRADCHECK_TOL})")
        return 0
    print(f"FAIL (worst {worst:.3e} > {verify.GRADCHECK_TOL})", file=sys.stderr)
    return 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, TrainingError, ev.MetricError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
