"""Command-line entry point: ``tgsample {synth,train,eval,bench}``.

Settings come from flags, then a flat ``key=value`` config file
(``--config``), then built-in defaults; flags win. The seed falls back to
the ``TGSAMPLE_SEED`` environment variable.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .bench import BenchError, Workload, run_bench
from .dataio import DataError, Dataset, load_csv, load_pairs, write_csv, write_pairs
from .nn import CheckpointError, load_checkpoint, save_checkpoint
from .samplers import STRATEGIES
from .backbone import BACKBONES
from .synthgen import SyntheticSpec, generate
from .trainer import SCORER_INITS, TrainConfig, Trainer

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


# keys accepted in config files and their types
_KEYS = {
    "data": str, "synth": str, "out": str, "strategy": str, "backbone": str, "k": int, "n_pool": str,
    "d_m": int, "d_t": int, "d_h": int, "d_mlp": int, "d_z": int, "seed": int, "epochs": int,
    "patience": int, "lr": float, "lambda_rank": float, "batch_size": int, "use_time": str,
    "scorer_init": str, "freeze_scorer": str, "eval_mode": str, "threads": int, "events": int,
    "nodes": int, "window": int, "repeats": int, "checkpoint": str, "split": str, "literal_init": str,
    "inductive_frac": float,
}


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _KEYS:
            raise UsageError(f"{path}:{lineno}: bad config line {line!r}")
        try:
            out[key] = _KEYS[key](val.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}") from None
    return out


def write_config(values: dict, path) -> None:
    lines = [f"{k}={'inf' if v is None else v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {v!r}")


def _pool(v):
    if v is None or isinstance(v, int):
        return v
    s = str(v).strip().lower()
    if s in ("inf", "all", "none", ""):
        return None
    return int(s)


def _settings(args) -> dict:
    """Merge flags over config file values."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    merged = dict(cfg)
    for key in _KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if "seed" not in merged:
        env = os.environ.get("TGSAMPLE_SEED")
        try:
            merged["seed"] = int(env) if env is not None else 0
        except ValueError:
            raise UsageError("TGSAMPLE_SEED must be an integer") from None
    return merged


def train_config(s: dict) -> TrainConfig:
    fields = {}
    for key in ("strategy", "backbone", "k", "d_m", "d_t", "d_h", "d_mlp", "d_z", "seed", "epochs", "patience",
                "lr", "lambda_rank", "batch_size", "scorer_init", "eval_mode", "inductive_frac"):
        if key in s:
            fields[key] = s[key]
    if "n_pool" in s:
        fields["n_pool"] = _pool(s["n_pool"])
    for key in ("use_time", "freeze_scorer", "literal_init"):
        if key in s:
            fields[key] = _bool(s[key])
    try:
        return TrainConfig(**fields)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def load_dataset(s: dict) -> Dataset:
    if s.get("synth") and s.get("data"):
        raise UsageError("give either --data or --synth, not both")
    if s.get("synth"):
        try:
            spec = SyntheticSpec.parse(s["synth"])
        except ValueError as e:
            raise UsageError(str(e)) from None
        return generate(spec)
    if not s.get("data"):
        raise UsageError("a dataset is required (--data or --synth)")
    path = Path(s["data"])
    ds = load_csv(path)
    pairs = path.with_name(path.stem + ".pairs.csv")
    if pairs.exists():
        load_pairs(ds, pairs)
    return ds


def _emit(records, path=None):
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if path:
        with open(path, "a") as f:
            f.write(text)
    sys.stdout.write(text)


def cmd_synth(s: dict) -> int:
    if not s.get("synth"):
        raise UsageError("synth needs --synth SPEC")
    ds = load_dataset({"synth": s["synth"]})
    out = Path(s.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{ds.name}.csv"
    n = write_csv(ds, csv_path)
    m = write_pairs(ds, out / f"{ds.name}.pairs.csv")
    print(f"wrote {n} events to {csv_path} and {m} eval pairs", file=sys.stderr)
    return EXIT_OK


def cmd_train(s: dict) -> int:
    cfg = train_config(s)
    ds = load_dataset(s)
    out = Path(s.get("out") or "run")
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.jsonl"
    metrics.write_text("")
    source = {"data": str(Path(s["data"]).resolve())} if s.get("data") else {"synth": s["synth"]}
    write_config({**source, **cfg.to_dict()}, out / "config.txt")
    trainer = Trainer(cfg, ds)
    t0 = time.perf_counter()
    history = trainer.fit(log=lambda r: _emit([r], metrics))
    save_checkpoint(trainer.model.store, out / "model")
    try:
        from .plotting import training_curves
        training_curves(history, out / "curves.png")
    except ImportError:
        print("matplotlib unavailable; skipping figures", file=sys.stderr)
    print(f"trained in {time.perf_counter() - t0:.1f}s; outputs in {out}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(s: dict) -> int:
    ckpt = s.get("checkpoint")
    if not ckpt:
        raise UsageError("eval needs --checkpoint RUN_DIR")
    run = Path(ckpt)
    prefix = run / "model" if run.is_dir() else run
    cfg_path = prefix.parent / "config.txt"
    if not cfg_path.exists():
        raise CheckpointError(f"missing {cfg_path}")
    saved = read_config(cfg_path)
    # flags may override dataset and evaluation mode only
    for key in ("data", "synth", "eval_mode"):
        if s.get(key):
            saved[key] = s[key]
    cfg = train_config(saved)
    trainer = Trainer(cfg, load_dataset(saved))
    load_checkpoint(trainer.model.store, prefix)
    split = s.get("split") or "test"
    if split not in ("train", "val", "test"):
        raise UsageError("split must be train, val or test")
    rec = trainer.evaluate(split, cfg.eval_mode)
    rec["mode"] = cfg.eval_mode
    out = s.get("out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        path = Path(out) / "eval.jsonl"
        path.write_text("")
        _emit([rec], path)
    else:
        _emit([rec])
    return EXIT_OK


def cmd_bench(s: dict) -> int:
    wl = Workload(num_nodes=s.get("nodes", 1000), num_events=s.get("events", 100_000), k=s.get("k", 10),
                  n_pool=_pool(s.get("n_pool", 32)) or 32, window=s.get("window", 2000), seed=s["seed"],
                  backbone=s.get("backbone", "attn_lite"))
    strategies = [s["strategy"]] if s.get("strategy") else list(STRATEGIES)
    report = run_bench(wl, strategies, threads=s.get("threads", 1), repeats=s.get("repeats", 5))
    print(report.table(), file=sys.stderr)
    out = s.get("out")
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.jsonl").write_text(report.to_jsonl())
        from .plotting import sampling_scaling, throughput_bars
        throughput_bars(report, out / "throughput.png")
        if report.micro:
            sampling_scaling(report, out / "sampling.png")
    sys.stdout.write(report.to_jsonl())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgsample", description="Neighbor sampling for temporal link prediction.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key=value settings file (flags win)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    def model_flags(sp):
        sp.add_argument("--strategy", choices=STRATEGIES)
        sp.add_argument("--backbone", choices=BACKBONES)
        sp.add_argument("--k", type=int)
        sp.add_argument("--n-pool", dest="n_pool", help="candidate pool size, or 'inf' for the full history")
        sp.add_argument("--d-m", dest="d_m", type=int)
        sp.add_argument("--threads", type=int)

    sp = sub.add_parser("synth", help="write a synthetic stream and its eval pairs")
    common(sp)
    sp.add_argument("--synth", help="e.g. thm1:k=2,horizon=4000")

    sp = sub.add_parser("train", help="train, evaluate and checkpoint one configuration")
    common(sp)
    model_flags(sp)
    sp.add_argument("--data")
    sp.add_argument("--synth")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lambda-rank", dest="lambda_rank", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--d-h", dest="d_h", type=int)
    sp.add_argument("--d-z", dest="d_z", type=int)
    sp.add_argument("--use-time", dest="use_time", choices=("true", "false"))
    sp.add_argument("--scorer-init", dest="scorer_init", choices=SCORER_INITS)
    sp.add_argument("--freeze-scorer", dest="freeze_scorer", choices=("true", "false"))
    sp.add_argument("--eval-mode", dest="eval_mode", choices=("transductive", "inductive"))

    sp = sub.add_parser("eval", help="evaluate a saved checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="run directory or checkpoint prefix")
    sp.add_argument("--split", choices=("train", "val", "test"))
    sp.add_argument("--data")
    sp.add_argument("--synth")
    sp.add_argument("--eval-mode", dest="eval_mode", choices=("transductive", "inductive"))

    sp = sub.add_parser("bench", help="throughput and sampling-cost benchmark")
    common(sp)
    model_flags(sp)
    sp.add_argument("--events", type=int)
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--window", type=int)
    sp.add_argument("--repeats", type=int)
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        s = _settings(args)
        if "threads" in s and s["threads"] < 1:
            raise UsageError("--threads must be positive")
        return COMMANDS[args.command](s)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, BenchError, OSError, RuntimeError, ValueError,
            FloatingPointError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
