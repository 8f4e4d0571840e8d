"""``m2oe train | eval | predict``.

Exit codes: 0 success, 2 usage/config/data/format errors, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .config import dump_config, load_config
from .data import (CLASSIFICATION, Dataset, PeptideRecord, load_csv_dataset, tokenize,
                   validate_sequence)
from .errors import DivergenceError, M2oEError, ValidationError
from .model import evaluate, fit

CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.json"


class UsageError(M2oEError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="m2oe", description="Multimodal peptide mixture-of-experts model")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train a model and write a checkpoint")
    train.add_argument("--config", required=True, help="key = value config file")
    train.add_argument("--train", required=True, help="training CSV (sequence,label)")
    train.add_argument("--val", required=True, help="validation CSV (sequence,label)")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--no-cra", action="store_true", help="disable cross-attention routing input")
    train.add_argument("--no-moe", action="store_true", help="replace expert banks with a dense FFN")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="print metrics JSON for a labelled CSV")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.set_defaults(func=cmd_eval)

    pred = sub.add_parser("predict", help="write id,sequence,prediction CSV")
    pred.add_argument("--checkpoint", required=True)
    pred.add_argument("--input", required=True, help="CSV with a 'sequence' column")
    pred.add_argument("--output", default="-", help="output CSV path ('-' for stdout)")
    pred.set_defaults(func=cmd_predict)
    return parser


def _require_files(*paths: str) -> None:
    for path in paths:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"no such file: {path}")


def cmd_train(args) -> int:
    _require_files(args.config, args.train, args.val)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_cra:
        overrides["use_cra"] = False
    if args.no_moe:
        overrides["use_moe"] = False
    config = load_config(args.config, **overrides)
    train = load_csv_dataset(args.train, config.task)
    val = load_csv_dataset(args.val, config.task)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, METRICS_NAME)
    epochs: list[dict] = []

    def log(record):
        epochs.append(record.as_dict())
        _write_json(metrics_path, {"epochs": epochs})

    result = fit(train, val, config, log=log)
    best = result.best_model()
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    save_checkpoint(best, ckpt_path)
    with open(os.path.join(args.out, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(config))
    summary = {
        "best_epoch": result.best_epoch,
        "val": evaluate(best, val).as_dict(),
        "train": evaluate(best, train).as_dict(),
        "alpha": best.fusion.alpha,
        "checkpoint": ckpt_path,
    }
    _write_json(metrics_path, {"epochs": epochs, "summary": summary})
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    _require_files(args.checkpoint, args.data)
    model = load_checkpoint(args.checkpoint)
    try:
        data = load_csv_dataset(args.data, model.config.task)
    except ValidationError as exc:
        raise ValidationError(f"data does not match the checkpoint's {model.config.task} task: {exc}") from None
    if len(data) == 0:
        raise ValidationError(f"{args.data}: no records")
    print(evaluate(model, data).to_json())
    return 0


def read_prediction_input(path: str, max_len: int) -> Dataset:
    """Rows need a ``sequence`` column; ``id`` and ``label`` columns are optional."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "sequence" not in [f.strip() for f in reader.fieldnames]:
            raise ValidationError(f"{path}:1: header must contain a 'sequence' column")
        records = []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            seq = row["sequence"]
            try:
                validate_sequence(seq)
                tokenize(seq, max_len)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            rid = row.get("id") or str(lineno - 1)
            records.append(PeptideRecord(rid, seq, 0.0))
    return Dataset(records, CLASSIFICATION)


def cmd_predict(args) -> int:
    _require_files(args.checkpoint, args.input)
    model = load_checkpoint(args.checkpoint)
    data = read_prediction_input(args.input, model.config.max_len)
    preds = model.predict(data) if len(data) else []
    buf = io.StringIO()
    buf.write("id,sequence,prediction\n")
    for rec, p in zip(data.records, preds):
        buf.write(f"{rec.id},{rec.sequence},{format(float(p), '.17g')}\n")
    if args.output == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    return 0


def _write_json(path: str, payload) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    os.replace(tmp, path)


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except DivergenceError as exc:
        print(f"m2oe: diverged: {_one_line(exc)}", file=sys.stderr)
        return 3
    except (M2oEError, OSError, KeyError) as exc:
        print(f"m2oe: error: {_one_line(exc)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
