"""Command-line harness: synthetic data, benchmark runs, training, eval.

Subcommands::

    lada gen-synthetic  --out DIR [--seed N --tasks K --classes-per-task M
                        --dim D --n-train N --n-test N --separation S]
    lada run-benchmark  --config FILE [--out DIR] [--set key=value ...]
    lada train          --train LSE --text LSE --registry JSON --task-id K
                        --out CKPT [--ckpt CKPT] [hyperparameter flags]
    lada eval           --ckpt CKPT --test LSE [--out FILE --alpha A]
    lada inspect        --ckpt CKPT

The benchmark config file is a flat ``key = value`` text document ('#'
comments allowed); ``--set key=value`` flags override file values.  Keys:
``data_dir`` (directory produced by gen-synthetic) or explicit ``train_<k>``
/ ``test`` / ``text`` / ``registry`` paths, ``out``, plus any of ``seed
epochs lr weight_decay batch_size loss_mode replay_mode beta lambda1 lambda2
logit_scale alpha``.  Re-running an unchanged config reproduces every output
byte.  ``LADA_THREADS`` caps evaluation worker threads (results identical at
any setting).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .adapter import AdapterState
from .errors import LadaError, ParameterError
from .inference import InferenceConfig, batch_eval
from .metrics import AccuracyMatrix, summary, write_matrix_csv
from .prototypes import PrototypeSet
from .store import (
    gen_synthetic_stream,
    load_lse,
    load_registry,
    normalize_set,
    save_lse,
    save_registry,
)
from .text_head import build_unseen_bank, init_from_embeddings
from .trainer import CheckpointBundle, TrainConfig, load_checkpoint, save_checkpoint, train_task

_FLOAT_KEYS = {"lr", "weight_decay", "beta", "logit_scale", "alpha", "separation",
               "adam_beta1", "adam_beta2", "adam_eps"}
_INT_KEYS = {"seed", "epochs", "batch_size", "lambda1", "lambda2", "tasks",
             "classes_per_task", "dim", "n_train", "n_test"}
_STR_KEYS = {"loss_mode", "replay_mode", "data_dir", "test", "text", "registry", "out"}


def _coerce(key, value):
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _INT_KEYS:
        return int(value)
    if key in _STR_KEYS or key.startswith("train_"):
        return str(value)
    raise ParameterError(f"unknown config key {key!r}")


def parse_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = _coerce(key, value)
    return out


def _train_config(values: dict) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in values.items() if k in fields})


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _echo_dict(cfg: TrainConfig, alpha) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["alpha"] = alpha
    return doc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    stream = gen_synthetic_stream(
        seed=args.seed,
        tasks=args.tasks,
        classes_per_task=args.classes_per_task,
        dim=args.dim,
        n_train=args.n_train,
        n_test=args.n_test,
        separation=args.separation,
    )
    os.makedirs(args.out, exist_ok=True)
    for k, train in enumerate(stream.train_sets):
        save_lse(train, os.path.join(args.out, f"train_task_{k:02d}.lse"))
    save_lse(stream.test_set, os.path.join(args.out, "test.lse"))
    save_lse(stream.text_set, os.path.join(args.out, "text.lse"))
    save_registry(stream.registry, os.path.join(args.out, "registry.json"))
    print(f"wrote {len(stream.train_sets)} train files + test/text/registry to {args.out}")
    return 0


def _load_stream_from_config(values):
    registry_path = values.get("registry")
    data_dir = values.get("data_dir")
    if registry_path is None and data_dir is not None:
        registry_path = os.path.join(data_dir, "registry.json")
    if registry_path is None:
        raise ParameterError("config needs 'data_dir' or explicit 'registry'")
    registry = load_registry(registry_path)

    def resolve(key, default_name):
        if key in values:
            return values[key]
        if data_dir is None:
            raise ParameterError(f"config needs '{key}' or 'data_dir'")
        return os.path.join(data_dir, default_name)

    train_sets = []
    for pos, task in enumerate(registry.tasks):
        path = resolve(f"train_{task.task_id}", f"train_task_{pos:02d}.lse")
        train_sets.append(normalize_set(load_lse(path, registry)))
    test_set = normalize_set(load_lse(resolve("test", "test.lse"), registry))
    text_set = normalize_set(load_lse(resolve("text", "text.lse"), registry))
    return registry, train_sets, test_set, text_set


def cmd_run_benchmark(args) -> int:
    values = parse_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), value.strip())
    if args.out:
        values["out"] = args.out
    if "out" not in values:
        raise ParameterError("config needs an 'out' directory")

    registry, train_sets, test_set, text_set = _load_stream_from_config(values)
    cfg = _train_config(values)
    alpha = values.get("alpha", 0.5)
    inf_cfg = InferenceConfig(alpha=alpha)
    echo = _echo_dict(cfg, alpha)

    out_dir = values["out"]
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config-echo.txt"), "w", encoding="utf-8") as f:
        for key in sorted(echo):
            f.write(f"{key} = {echo[key]}\n")

    clf = init_from_embeddings(text_set, registry, scale=cfg.logit_scale)
    adapter = AdapterState.empty(cfg.adapter_config())
    protos = PrototypeSet(lambda2=cfg.lambda2)
    matrix = AccuracyMatrix(len(registry.tasks))

    for pos, task in enumerate(registry.tasks):
        registry.set_status(task.task_id, "current")
        adapter, clf, protos, _losses = train_task(
            train_sets[pos], adapter, clf, protos, registry, cfg, task.task_id
        )
        bank = build_unseen_bank(clf)
        report = batch_eval(test_set, adapter, clf, bank, registry, inf_cfg)
        column = [report["per_task"][str(t.task_id)]["accuracy"] for t in registry.tasks]
        matrix.write_column(pos, column)
        write_matrix_csv(matrix, os.path.join(out_dir, "matrix.csv"))
        _write_json(os.path.join(out_dir, f"eval_step_{pos:02d}.json"), report)
        save_checkpoint(
            CheckpointBundle(adapter, clf, protos, registry, dict(echo)),
            os.path.join(ckpt_dir, f"step_{pos:02d}"),
        )
        print(f"task {task.task_id}: column {pos + 1}/{len(registry.tasks)} written")

    doc = {"config": echo}
    doc.update(summary(matrix))
    _write_json(os.path.join(out_dir, "summary.json"), doc)
    print(
        "transfer_mean={transfer[mean]:.4f} average_mean={average[mean]:.4f} "
        "last_mean={last[mean]:.4f}".format(**doc)
    )
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(
        {
            k: getattr(args, k)
            for k in ("seed", "epochs", "lr", "weight_decay", "batch_size", "loss_mode",
                      "replay_mode", "beta", "lambda1", "lambda2", "logit_scale")
            if getattr(args, k) is not None
        }
    )
    if args.ckpt:
        bundle = load_checkpoint(args.ckpt)
        registry, adapter, clf, protos = (
            bundle.registry,
            bundle.adapter_state,
            bundle.text_clf,
            bundle.proto_set,
        )
    else:
        registry = load_registry(args.registry)
        text_set = normalize_set(load_lse(args.text, registry))
        clf = init_from_embeddings(text_set, registry, scale=cfg.logit_scale)
        adapter = AdapterState.empty(cfg.adapter_config())
        protos = PrototypeSet(lambda2=cfg.lambda2)
    train_set = normalize_set(load_lse(args.train, registry))
    registry.set_status(args.task_id, "current")
    adapter, clf, protos, losses = train_task(
        train_set, adapter, clf, protos, registry, cfg, args.task_id
    )
    save_checkpoint(
        CheckpointBundle(adapter, clf, protos, registry, _echo_dict(cfg, args.alpha)),
        args.out,
    )
    if losses:
        print(f"task {args.task_id}: epoch loss {losses[0]:.6f} -> {losses[-1]:.6f}")
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_checkpoint(args.ckpt)
    test_set = normalize_set(load_lse(args.test, bundle.registry))
    alpha = args.alpha if args.alpha is not None else bundle.config.get("alpha", 0.5)
    bank = build_unseen_bank(bundle.text_clf)
    report = batch_eval(
        test_set, bundle.adapter_state, bundle.text_clf, bank, bundle.registry,
        InferenceConfig(alpha=alpha),
    )
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return 0


def cmd_inspect(args) -> int:
    bundle = load_checkpoint(args.ckpt)
    adapter = bundle.adapter_state
    dim = bundle.text_clf.dim
    print(f"dimension: {dim}")
    print("tasks:")
    per_task_params = {}
    per_task_protos = {}
    for b in adapter.blocks:
        per_task_params[b.task_id] = per_task_params.get(b.task_id, 0) + b.W.size
    for p in bundle.proto_set.by_class.values():
        per_task_protos[p.task_id] = per_task_protos.get(p.task_id, 0) + len(p.weights)
    for t in bundle.registry.tasks:
        print(
            f"  task {t.task_id}: status={t.status} classes={len(t.class_ids)} "
            f"adapter_params={per_task_params.get(t.task_id, 0)} "
            f"prototype_components={per_task_protos.get(t.task_id, 0)}"
        )
    print(f"total adapter params: {adapter.num_params()}")
    print(f"total memory blocks: {len(adapter.blocks)}")
    print("config:")
    for key in sorted(bundle.config):
        print(f"  {key} = {bundle.config[key]}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lada",
        description="Continual-learning engine over precomputed embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic task stream")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", type=int, default=5)
    p.add_argument("--classes-per-task", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--n-train", type=int, default=32)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--separation", type=float, default=8.0)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("run-benchmark", help="train all tasks and emit the accuracy matrix")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config value")
    p.set_defaults(func=cmd_run_benchmark)

    p = sub.add_parser("train", help="train a single task into a checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--text")
    p.add_argument("--registry")
    p.add_argument("--task-id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", help="resume from an existing checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--loss-mode", dest="loss_mode")
    p.add_argument("--replay-mode", dest="replay_mode")
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda1", type=int)
    p.add_argument("--lambda2", type=int)
    p.add_argument("--logit-scale", dest="logit_scale", type=float)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump checkpoint structure")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not args.ckpt and not (args.text and args.registry):
        parser.error("train needs --ckpt or both --text and --registry")
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except LadaError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
