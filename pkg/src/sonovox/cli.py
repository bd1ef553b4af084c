"""Command-line front end.

Subcommands: ``synth`` (generate a synthetic dataset directory), ``train``,
``eval``, ``grid`` (sweep layer combinations), ``info`` (shape chain and
parameter table), ``gradcheck``.

Exit codes are a stable scripting contract: 0 success, 2 usage/IO problems,
3 infeasible model or geometry, 4 numerical divergence (gradcheck uses 1
for check failures). Every training-style run writes a ``run_manifest.json``
next to its outputs (command, flag snapshot, timestamps, artifact hash,
metric summary); dataset synthesis does not, so identically-seeded dataset
directories stay byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import (
    checkpoint_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    dataset_fingerprint,
    load_windowed,
    split_by_utterance,
    write_dataset_dir,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FormatError,
    GeometryError,
    ShapeError,
)
from .gradcheck import standard_checks
from .models import (
    ARCHITECTURES,
    GRID_COMBOS,
    Model,
    ModelSpec,
    build_architecture,
    build_combo,
    count_params,
    infer_shapes,
    parity_reference,
    parse_model_config,
)
from .synth import SynthConfig, gen_synthetic
from .train import TrainConfig, evaluate, fit, history_to_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_DIVERGED = 4

GRID_PRESETS = {"table3": GRID_COMBOS}


def _write_run_manifest(out_dir: Path, command: str, args: dict,
                        started: float, metrics: dict,
                        artifact_hash: str | None,
                        name: str = "run_manifest.json") -> None:
    args = {k: v for k, v in args.items() if k != "func"}
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "seed": args.get("seed"),
        "started_at": started,
        "finished_at": time.time(),
        "artifact_hash": artifact_hash,
        "metrics": metrics,
    }
    tmp = out_dir / (name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(out_dir / name)


def _resolve_model(name_or_path: str, width_scale: int,
                   input_shape: tuple[int, ...] | None = None) -> ModelSpec:
    if name_or_path in ARCHITECTURES:
        kwargs = {} if input_shape is None else {"input_shape": input_shape}
        return build_architecture(name_or_path, width_scale=width_scale, **kwargs)
    path = Path(name_or_path)
    if path.exists():
        spec = parse_model_config(path.read_text(), name=path.stem)
        if width_scale != 1:
            raise ConfigError("--width-scale applies to built-in architectures only")
        return spec
    raise ConfigError(
        f"unknown model {name_or_path!r}: not one of {ARCHITECTURES} "
        f"and no such config file"
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.utterances < 1 or args.frames < 1:
        print("error: --utterances and --frames must be positive", file=sys.stderr)
        return EXIT_USAGE
    cfg = SynthConfig(n_utterances=args.utterances,
                      frames_per_utterance=args.frames,
                      latent_dim=args.latent_dim,
                      noise_level=args.noise, seed=args.seed)
    utterances, targets = gen_synthetic(cfg)
    splits = split_by_utterance(len(utterances), seed=args.seed)
    out = Path(args.out)
    try:
        write_dataset_dir(out, utterances, targets, splits)
    except OSError as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_USAGE
    windows = sum(max(len(u.frames) - 24, 0) for u in utterances)
    print(f"wrote {len(utterances)} utterances "
          f"({ {k: len(v) for k, v in splits.items()} }) to {out}")
    print(f"window count: {windows}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    data_dir = Path(args.data)
    dataset = load_windowed(data_dir)
    spec = _resolve_model(args.model, args.width_scale)
    infer_shapes(spec)  # surface geometry problems before training
    model = Model.build(spec, seed=args.seed)
    config = TrainConfig(
        optimizer=args.optimizer, learning_rate=args.lr,
        batch_size=args.batch_size, max_epochs=args.epochs,
        early_stop_patience=args.patience, seed=args.seed,
        target_dev_r2=args.target_dev_r2,
    )
    result = fit(model, dataset, config)
    dev = evaluate(model, dataset, "dev")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, history=result.history,
                    input_stats=dataset.input_stats,
                    target_stats=dataset.target_stats, seed=args.seed,
                    dataset_fingerprint=dataset_fingerprint(data_dir))
    (out / "history.csv").write_text(history_to_csv(result.history))
    _write_run_manifest(
        out, "train", vars(args), started,
        {"dev_mse": dev.mse, "dev_mean_r2": dev.mean_r2,
         "epochs_run": len(result.history)},
        checkpoint_fingerprint(out),
    )
    print(f"trained {spec.name} for {len(result.history)} epochs "
          f"({model.param_count()} parameters)")
    print(f"final dev mse {dev.mse:.6f}  mean r2 {dev.mean_r2:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    ckpt_dir = Path(args.ckpt)
    if not ckpt_dir.exists():
        print(f"error: no such checkpoint: {ckpt_dir}", file=sys.stderr)
        return EXIT_USAGE
    ckpt = load_checkpoint(ckpt_dir)
    data_dir = Path(args.data)
    fingerprint = dataset_fingerprint(data_dir)
    if ckpt.dataset_fingerprint and fingerprint != ckpt.dataset_fingerprint:
        print("warning: dataset fingerprint differs from the checkpoint's "
              "(normalization statistics may not match this data)", file=sys.stderr)
        if not args.allow_stats_mismatch:
            print("error: pass --allow-stats-mismatch to evaluate anyway",
                  file=sys.stderr)
            return EXIT_USAGE
    dataset = load_windowed(data_dir, input_stats=ckpt.input_stats,
                            target_stats=ckpt.target_stats)
    metrics = evaluate(ckpt.model, dataset, args.split)
    payload = json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n"
    out_path = Path(args.out) if args.out else ckpt_dir / f"eval_{args.split}.json"
    out_path.write_text(payload)
    _write_run_manifest(ckpt_dir, "eval", vars(args), started,
                        {"mse": metrics.mse, "mean_r2": metrics.mean_r2},
                        checkpoint_fingerprint(ckpt_dir),
                        name=f"run_manifest_eval_{args.split}.json")
    print(payload, end="")
    return EXIT_OK


def _parse_grid_rows(rows_arg: str) -> list[tuple[str, ...]]:
    if rows_arg in GRID_PRESETS:
        return [tuple(c) for c in GRID_PRESETS[rows_arg]]
    path = Path(rows_arg)
    if not path.exists():
        raise ConfigError(
            f"unknown grid {rows_arg!r}: not a preset ({', '.join(GRID_PRESETS)}) "
            f"and no such file"
        )
    combos = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        combos.append(tuple(t.strip().upper() for t in line.replace(",", " ").split()))
    if not combos:
        raise ConfigError(f"{path}: no combos found")
    return combos


def cmd_grid(args) -> int:
    started = time.time()
    combos = _parse_grid_rows(args.rows)
    dataset = load_windowed(Path(args.data))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer1", "layer2", "layer3", "layer4", "params",
                     "dev_mse", "test_mse", "dev_r2", "test_r2", "status"])
    reference = parity_reference(args.width_scale)
    for combo in combos:
        cells = list(combo) + [""] * (4 - len(combo))
        try:
            spec = build_combo(combo, width_scale=args.width_scale)
            params = count_params(spec)
            model = Model.build(spec, seed=args.seed)
            config = TrainConfig(optimizer=args.optimizer, learning_rate=args.lr,
                                 batch_size=args.batch_size, max_epochs=args.epochs,
                                 early_stop_patience=max(args.epochs, 1),
                                 seed=args.seed)
            fit(model, dataset, config)
            dev = evaluate(model, dataset, "dev")
            test = evaluate(model, dataset, "test")
            writer.writerow(cells + [params, repr(dev.mse), repr(test.mse),
                                     repr(dev.mean_r2), repr(test.mean_r2), "ok"])
            print(f"{'+'.join(combo):<28} params {params:>9}  dev mse {dev.mse:.4f} "
                  f"r2 {dev.mean_r2:.3f}  test mse {test.mse:.4f} r2 {test.mean_r2:.3f}")
        except (ConfigError, GeometryError, ShapeError, DivergenceError, DataError) as exc:
            writer.writerow(cells + ["", "", "", "", "", f"error: {exc}"])
            print(f"{'+'.join(combo):<28} failed: {exc}", file=sys.stderr)
    csv_path = out_dir / "grid_results.csv"
    csv_path.write_text(buf.getvalue())
    _write_run_manifest(out_dir, "grid", vars(args), started,
                        {"rows": len(combos), "parity_reference": reference}, None)
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_info(args) -> int:
    input_shape = None
    if args.input_shape:
        input_shape = tuple(int(v) for v in args.input_shape.split(","))
    spec = _resolve_model(args.model, args.width_scale, input_shape)
    chain = infer_shapes(spec)
    shape = tuple(spec.input_shape)
    print(f"model {spec.name}   input {shape}")
    print(f"{'#':>3}  {'layer':<42} {'output shape':<20} {'params':>10}")
    total = 0
    for i, (lspec, out_shape) in enumerate(zip(spec.layers, chain)):
        layer = lspec.to_layer()
        n = layer.param_count(shape)
        total += n
        desc = _describe_layer(lspec)
        print(f"{i:>3}  {desc:<42} {str(out_shape):<20} {n:>10}")
        shape = out_shape
    print(f"{'':>3}  {'total':<42} {'':<20} {total:>10}")
    return EXIT_OK


def _describe_layer(lspec) -> str:
    k = lspec.kind
    if k == "conv3d":
        return f"conv3d({lspec.filters}, {lspec.kernel}, strides={lspec.strides})"
    if k == "convlstm":
        return (f"convlstm({lspec.units}, {lspec.kernel}, strides={lspec.strides}, "
                f"ret_seq={lspec.return_sequences})")
    if k == "maxpool3d":
        return f"maxpool3d{lspec.pool}"
    if k == "dropout":
        return f"dropout({lspec.rate})"
    if k == "dense":
        return f"dense({lspec.units}, {lspec.activation})"
    if k == "lstm":
        return f"lstm({lspec.units}, ret_seq={lspec.return_sequences})"
    if k == "bilstm":
        return f"bilstm({lspec.units}, ret_seq={lspec.return_sequences})"
    if k == "reshape":
        return f"reshape{lspec.target}"
    return k


def cmd_gradcheck(args) -> int:
    results = standard_checks(tol=args.tol, scope=args.scope)
    if not results:
        print(f"error: no checks match scope {args.scope!r}", file=sys.stderr)
        return EXIT_USAGE
    failed = 0
    for r in results:
        print(r)
        failed += not r.passed
    if failed:
        print(f"{failed}/{len(results)} checks failed at tol {args.tol:g}")
        return 1
    print(f"all {len(results)} checks passed at tol {args.tol:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonovox",
        description="Spatiotemporal network engine: synthesize data, train, "
                    "evaluate, sweep layer combinations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--utterances", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--latent-dim", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True,
                   help=f"one of {ARCHITECTURES} or a model config file")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--width-scale", type=int, default=1,
                   help="divide filter/unit counts by this factor (speed)")
    p.add_argument("--target-dev-r2", type=float, default=None,
                   help="stop once dev mean R2 reaches this value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["dev", "test"], default="dev")
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--allow-stats-mismatch", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="train and evaluate layer combinations")
    p.add_argument("--data", required=True)
    p.add_argument("--rows", default="table3",
                   help="grid preset name ('table3': the built-in 7-row "
                        "C3D/CLSTM sweep) or a combos file")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--width-scale", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("info", help="print the shape chain and parameter table")
    p.add_argument("--model", required=True)
    p.add_argument("--width-scale", type=int, default=1)
    p.add_argument("--input-shape", default=None, help="e.g. 25,128,64,1")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--scope", default="all",
                   help="all, or a substring of a check name (e.g. convlstm)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (GeometryError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
