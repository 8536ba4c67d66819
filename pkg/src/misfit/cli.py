"""Command-line front end.

Subcommands::

    misfit gen     --dataset NAME --n N --seed S --out data.csv
    misfit train   --config run.json [--data train.csv] [--out-dir DIR]
    misfit eval    --model model.json [--data test.csv] [--out report.json]
    misfit curves  --model model.json [--grid -6,6,241] [--draws K] [--seed S] --out curves.csv
    misfit table   --table S2 --seeds 10 --out results/s2

File formats
------------
* dataset CSV: header ``x0,...,y0,...``; one row per sample.
* run config (JSON): any field of :class:`misfit.training.TrainConfig` plus
  ``out_dir``; ``dataset`` and ``model`` are required, unknown keys rejected.
* model artifact (JSON): ``{"format": "misfit-model/1", "config", "spec",
  "head", "weights" | "posterior": {"mean", "raw_scale"}, "epochs_run"}``.
* loss curve CSV: ``step,loss`` (mean loss per epoch, step counted in
  optimizer updates).
* eval report: JSON with ``test_nll_per_sample``, ``test_mse`` (null unless
  GLc), ``train_curve`` and ``wall_time``; a ``.csv`` output path writes the
  single row ``test_nll_per_sample,test_mse`` instead.
* uncertainty CSV: ``x,H,U_V,U_W,in_dist``; ``NA`` marks undefined values.
* table: ``STEM.csv`` with ``model,nll_mean,nll_sem,mse_mean,mse_sem`` and
  ``STEM.json`` with the same rows plus per-seed values.

Exit codes: 0 success, 1 user error, 2 I/O error, 3 numerical divergence.
``MISFIT_THREADS`` caps the worker threads used by ``table``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import jsonschema
import numpy as np

from .autodiff import GradientError
from .datasets import DATASET_NAMES, Dataset, generate
from .training import MODEL_CLASSES, TABLES, TrainConfig, TrainedModel, default_test_set, evaluate, reproduce_table, train
from .uncertainty import uncertainty_curve

EXIT_OK, EXIT_USER, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("misfit")


class UserError(Exception):
    pass


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "model"],
    "properties": {
        "dataset": {"enum": list(DATASET_NAMES)},
        "model": {"enum": list(MODEL_CLASSES)},
        "bayes": {"type": "boolean"},
        "n": _POS_INT,
        "seed": {"type": "integer", "minimum": 0},
        "sigma": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "hidden": {"type": "array", "items": _POS_INT},
        "activation": {"enum": ["relu", "tanh"]},
        "bins": {"type": "integer", "minimum": 2},
        "bound": {"type": "number", "exclusiveMinimum": 0},
        "flow_layers": _POS_INT,
        "conditioner_hidden": _POS_INT,
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "epochs": _POS_INT,
        "batch_size": {"type": "integer", "minimum": 0},
        "mc_samples": _POS_INT,
        "prior_sigma": {"type": "number", "exclusiveMinimum": 0},
        "init_scale": {"type": "number", "exclusiveMinimum": 0},
        "test_n": _POS_INT,
        "eval_draws": _POS_INT,
        "out_dir": {"type": "string"},
    },
}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_run_config(doc) -> None:
    """Raise :class:`UserError` naming the JSON pointer of the first violation."""
    if isinstance(doc, dict):
        extra = sorted(set(doc) - set(RUN_CONFIG_SCHEMA["properties"]))
        if extra:
            raise UserError(f"{_pointer([extra[0]])}: unknown key {extra[0]!r}")
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(RUN_CONFIG_SCHEMA).iter_errors(doc))
    if err is not None:
        raise UserError(f"{_pointer(err.absolute_path)}: {err.message}")


def load_run_config(path) -> tuple[TrainConfig, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON ({exc})") from exc
    validate_run_config(doc)
    doc = dict(doc)
    out_dir = doc.pop("out_dir", ".")
    try:
        return TrainConfig.from_dict(doc), out_dir
    except ValueError as exc:
        raise UserError(str(exc)) from exc


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _write_text(text, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "NA"
    return repr(float(v))


def _load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "misfit-model/1":
        raise UserError(f"{path}: not a model artifact")
    return TrainedModel.from_dict(doc)


def _load_data(path, config: TrainConfig) -> Dataset:
    data = Dataset.from_csv(path, config.dataset)
    if data.y.shape[1] != config.out_dim:
        raise UserError(f"{path}: expected {config.out_dim} outcome column(s), found {data.y.shape[1]}")
    return data


def parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(",")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError as exc:
        raise UserError(f"grid must look like LO,HI,N; got {spec!r}") from exc
    if n < 1 or (n > 1 and not hi > lo):
        raise UserError(f"invalid grid {spec!r}")
    return np.linspace(lo, hi, n)


# ----------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    if args.dataset not in DATASET_NAMES:
        raise UserError(f"unknown dataset {args.dataset!r}; valid names: {', '.join(DATASET_NAMES)}")
    if args.n < 1:
        raise UserError("--n must be >= 1")
    generate(args.dataset, args.n, args.seed).to_csv(args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    config, out_dir = load_run_config(args.config)
    out_dir = args.out_dir or out_dir
    data = _load_data(args.data, config) if args.data else None
    model = train(config, data)
    os.makedirs(out_dir, exist_ok=True)
    _dump_json(model.to_dict(), os.path.join(out_dir, "model.json"))
    _write_text(_csv_text(["step", "loss"], [(s, repr(v)) for s, v in model.curve]), os.path.join(out_dir, "loss.csv"))
    print(f"{config.label}: final loss {model.curve[-1][1]:.6g} after {model.curve[-1][0]} steps ({model.wall_time:.1f}s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    test = _load_data(args.data, model.config) if args.data else default_test_set(model.config)
    report = evaluate(model, test)
    if args.out and args.out.endswith(".csv"):
        _write_text(_csv_text(["test_nll_per_sample", "test_mse"], [[_cell(report.test_nll_per_sample), _cell(report.test_mse)]]), args.out)
    elif args.out:
        d = report.to_dict()
        d.pop("wall_time")
        _dump_json(d, args.out)
    mse = "NA" if report.test_mse is None else f"{report.test_mse:.4f}"
    print(f"{model.model_class}: test NLL {report.test_nll_per_sample:.4f}, MSE {mse}")
    return EXIT_OK


def cmd_curves(args) -> int:
    model = _load_model(args.model)
    curve = uncertainty_curve(model, parse_grid(args.grid), seed=args.seed, n_draws=args.draws)
    curve.to_csv(args.out)
    return EXIT_OK


def cmd_table(args) -> int:
    if args.table not in TABLES:
        raise UserError(f"unknown table {args.table!r}; valid: {', '.join(TABLES)}")
    if args.seeds < 2:
        raise UserError("--seeds must be >= 2 (the standard error is undefined for one seed)")
    rows = reproduce_table(args.table, args.seeds)
    header = ["model", "nll_mean", "nll_sem", "mse_mean", "mse_sem"]
    body = [[r.model, _cell(r.nll_mean), _cell(r.nll_sem), _cell(r.mse_mean), _cell(r.mse_sem)] for r in rows]
    text = _csv_text(header, body)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    _write_text(text, args.out + ".csv")
    _dump_json(
        {
            "table": args.table,
            "seeds": args.seeds,
            "rows": [
                {
                    "model": r.model,
                    "nll_mean": r.nll_mean,
                    "nll_sem": r.nll_sem,
                    "mse_mean": r.mse_mean,
                    "mse_sem": r.mse_sem,
                    "nll_per_seed": r.nll_per_seed,
                    "mse_per_seed": r.mse_per_seed,
                }
                for r in rows
            ],
        },
        args.out + ".json",
    )
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misfit", description=__doc__.split("\n\n")[0], allow_abbrev=False)
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset CSV", allow_abbrev=False)
    p.add_argument("--dataset", required=True, help=f"one of {', '.join(DATASET_NAMES)}")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model from a JSON run config", allow_abbrev=False)
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="training CSV; generated from the config when omitted")
    p.add_argument("--out-dir", help="overrides the config's out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test NLL (and MSE for GLc) of a trained model", allow_abbrev=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="test CSV; the default held-out test set when omitted")
    p.add_argument("--out", help="report path (.json or .csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="entropy and disagreement along an input grid", allow_abbrev=False)
    p.add_argument("--model", required=True)
    p.add_argument("--grid", default="-6,6,241", help="LO,HI,N (default: -6,6,241)")
    p.add_argument("--draws", type=int, default=None, help="posterior draws (default: the config's eval_draws)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("table", help="reproduce a results table over several seeds", allow_abbrev=False)
    p.add_argument("--table", required=True, help=f"one of {', '.join(TABLES)}")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", required=True, help="output stem; writes STEM.csv and STEM.json")
    p.set_defaults(func=cmd_table)
    return parser


def _attach_grid_value(argv):
    # "--grid -6,6,241" would otherwise be read as an unknown option
    out = list(argv)
    for i, tok in enumerate(out[:-1]):
        if tok == "--grid":
            out[i : i + 2] = [f"--grid={out[i + 1]}"]
            break
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _attach_grid_value(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; usage errors are user errors here
        return EXIT_OK if exc.code == 0 else EXIT_USER
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UserError as exc:
        print(f"misfit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USER
    except (FloatingPointError, GradientError) as exc:
        print(f"misfit {args.command}: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"misfit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"misfit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
