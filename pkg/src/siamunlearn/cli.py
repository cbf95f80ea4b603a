"""Command-line harness: ``siamunlearn <command> --config run.ini ...``.

Output layout under ``run.out_dir``::

    config.ini                      effective config (stamped with its hash)
    pretrain/seed<S>/model.vapw     original model, log.csv, model.json
    unlearn/<method>/seed<S>/...    unlearned model, trace.csv, model.json
    reports.csv                     one MetricsReport row per evaluated checkpoint
    plots/<name>/...                projection.csv, logits.csv, entropy_hist.csv

Exit codes: 0 success, 2 configuration, 3 data, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import METHODS, ExperimentConfig, load_config
from .core.checkpoint import load_checkpoint, save_checkpoint
from .datasets import generate_synthetic, save_dataset
from .errors import ConfigError, DataError, MetricError, SiamUnlearnError
from .evaluation import (
    MetricsReport,
    entropy_from_logits,
    format_table,
    network_logits,
    project_2d,
    report_csv_header,
    report_csv_row,
)
from .augment import augment_batch
from .models import Network

log = logging.getLogger("siamunlearn")

HASH_KEY = "meta.config_hash"


# ------------------------------------------------------------------ run dir

def _hash_line(config_hash: str) -> str:
    return f"# config_hash: {config_hash}"


def _read_hash_line(path: Path) -> str | None:
    with open(path) as fh:
        first = fh.readline().strip()
    return first.split(":", 1)[1].strip() if first.startswith("# config_hash:") else None


@contextmanager
def run_directory(cfg: ExperimentConfig):
    """Claim ``run.out_dir`` for this process and stamp it with the config.

    The directory belongs to one config hash. A second process is kept out
    by a lock file; a different config is refused rather than allowed to
    mix its results with the existing ones.
    """
    out = Path(cfg.run.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from exc
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        owner = lock.read_text().strip() or "?"
        if owner.isdigit() and not _pid_alive(int(owner)):
            lock.unlink()
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        else:
            raise ConfigError(f"output directory {out} is locked by process {owner}") from None
    except OSError as exc:
        raise ConfigError(f"cannot write to output directory {out}: {exc.strerror}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        stamp = out / "config.ini"
        digest = cfg.config_hash()
        if stamp.exists():
            existing = _read_hash_line(stamp)
            if existing != digest:
                raise ConfigError(f"{out} holds results for config {existing}, this config is {digest}; "
                                  "use another --out or remove the directory")
        else:
            stamp.write_text(_hash_line(digest) + "\n" + cfg.to_text())
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _write_csv(path: Path, config_hash: str, header: list[str], rows: list[dict | list]) -> None:
    buf = io.StringIO()
    buf.write(_hash_line(config_hash) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[h] for h in header] if isinstance(row, dict) else row)
    path.write_text(buf.getvalue())


def _save_model(net: Network, path: Path, config_hash: str) -> None:
    state = net.state_dict()
    state[HASH_KEY] = np.frombuffer(config_hash.encode("ascii"), dtype=np.uint8).astype(np.float32)
    save_checkpoint(state, path)


def _load_model(cfg: ExperimentConfig, path: Path, image_shape, class_count: int) -> tuple[Network, str]:
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    state = load_checkpoint(path)
    stamp = state.pop(HASH_KEY, None)
    stamp = bytes(stamp.astype(np.uint8)).decode("ascii") if stamp is not None else ""
    net = Network.create(cfg.model.arch_config(), image_shape, class_count, cfg.run.seed)
    net.load_state_dict(state)
    return net, stamp


def _sidecar(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, default=float) + "\n")


def _pretrain_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.run.out_dir) / "pretrain" / f"seed{cfg.run.seed}"


def _unlearn_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.run.out_dir) / "unlearn" / cfg.unlearn.method / f"seed{cfg.run.seed}"


def _guard_existing(directory: Path, config_hash: str) -> None:
    meta = directory / "model.json"
    if meta.exists():
        previous = json.loads(meta.read_text()).get("config_hash")
        if previous != config_hash:
            raise ConfigError(f"{directory} holds results from config {previous}; refusing to overwrite")


# ----------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    ds = generate_synthetic(args.kind, args.classes, args.per_class, args.size, args.seed,
                            channels=args.channels, noise=args.noise, layout_seed=args.layout_seed)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} examples ({ds.class_count} classes, {ds.image_shape}) to {out}")
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    train, _ = ex.load_datasets(cfg)
    digest = cfg.config_hash()
    with run_directory(cfg):
        target = _pretrain_dir(cfg)
        target.mkdir(parents=True, exist_ok=True)
        _guard_existing(target, digest)
        net, history = ex.pretrain(cfg, train, on_epoch=lambda e, row: log.info(
            "pretrain epoch %d loss %.4f acc %.2f", e, row["loss"], row["train_acc"]))
        _save_model(net, target / "model.vapw", digest)
        _write_csv(target / "log.csv", digest, ["epoch", "lr", "loss", "train_acc"], history)
        _sidecar(target / "model.json", {"kind": "pretrain", "method": "original", "seed": cfg.run.seed,
                                         "config_hash": digest, "log": history})
    final = f"{history[-1]['train_acc']:.2f}%" if history else "n/a (0 epochs)"
    print(f"pretrained {target / 'model.vapw'}; final train accuracy {final}")
    return 0


def cmd_unlearn(cfg: ExperimentConfig, args) -> int:
    train, _ = ex.load_datasets(cfg)
    digest = cfg.config_hash()
    source = Path(args.checkpoint) if args.checkpoint else _pretrain_dir(cfg) / "model.vapw"
    net, _ = _load_model(cfg, source, train.image_shape, train.class_count)
    split = ex.make_split(cfg, train)
    with run_directory(cfg):
        target = _unlearn_dir(cfg)
        target.mkdir(parents=True, exist_ok=True)
        _guard_existing(target, digest)
        out, trace, runtime = ex.run_method(cfg, net, train, split)
        _save_model(out, target / "model.vapw", digest)
        header = list(trace[0]) if trace else ["epoch"]
        _write_csv(target / "trace.csv", digest, header, trace)
        _sidecar(target / "model.json", {
            "kind": "unlearn", "method": cfg.unlearn.method, "seed": cfg.run.seed, "config_hash": digest,
            "source": str(source), "runtime_seconds": runtime, "trace": _per_epoch(trace)})
    print(f"{cfg.unlearn.method}: wrote {target / 'model.vapw'} in {runtime:.1f}s")
    return 0


def _per_epoch(trace: list[dict]) -> list[dict]:
    """Collapse a per-step trace to per-epoch means (baseline logs pass through)."""
    if not trace or "step" not in trace[0]:
        return trace
    out = []
    for epoch in sorted({row["epoch"] for row in trace}):
        rows = [r for r in trace if r["epoch"] == epoch]
        entry = {"epoch": epoch}
        for phase in ("retain", "forget"):
            sel = [r for r in rows if r["phase"] == phase]
            for key in ("kvc", "sce", "total"):
                entry[f"{phase}_{key}"] = float(np.mean([r[key] for r in sel])) if sel else float("nan")
        out.append(entry)
    return out


def _default_checkpoints(cfg: ExperimentConfig) -> list[Path]:
    found = [_pretrain_dir(cfg) / "model.vapw"]
    unlearn_root = Path(cfg.run.out_dir) / "unlearn"
    for method in METHODS:
        path = unlearn_root / method / f"seed{cfg.run.seed}" / "model.vapw"
        if path.exists():
            found.append(path)
    return found


def _describe(path: Path) -> tuple[str, float]:
    meta = path.with_name("model.json")
    if meta.exists():
        data = json.loads(meta.read_text())
        return data.get("method", path.stem), float(data.get("runtime_seconds", 0.0))
    return path.stem, 0.0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    train, test = ex.load_datasets(cfg)
    split = ex.make_split(cfg, train)
    paths = [Path(p) for p in args.checkpoint] if args.checkpoint else _default_checkpoints(cfg)
    digest = cfg.config_hash()
    reports: list[MetricsReport] = []
    for path in paths:
        net, _ = _load_model(cfg, path, train.image_shape, train.class_count)
        method, runtime = _describe(path)
        reports.append(ex.evaluate(cfg, net, train, test, split, method, runtime))
    with run_directory(cfg) as out:
        target = out / "reports.csv"
        if target.exists():
            if _read_hash_line(target) != digest:
                raise ConfigError(f"{target} was written under another config; refusing to append")
            text = target.read_text()
        else:
            text = _hash_line(digest) + "\n" + report_csv_header() + "\n"
        text += "".join(report_csv_row(r) + "\n" for r in reports)
        target.write_text(text)
    print(format_table(reports))
    return 0


def cmd_export_plots(cfg: ExperimentConfig, args) -> int:
    train, test = ex.load_datasets(cfg)
    split = ex.make_split(cfg, train)
    path = Path(args.checkpoint) if args.checkpoint else _default_checkpoints(cfg)[-1]
    net, _ = _load_model(cfg, path, train.image_shape, train.class_count)
    samples, views = cfg.eval.export_samples, cfg.eval.export_views
    rng = np.random.default_rng([cfg.run.seed, 0xE5])
    chosen = []
    for pool in (split.forget_indices, split.retain_indices):
        chosen.append(rng.choice(pool, size=min(samples, len(pool)), replace=False))
    ids = np.sort(np.concatenate(chosen))
    if len(ids) * views < 3:
        raise MetricError(f"need at least 3 projected points, have {len(ids)} examples x {views} views")
    aug = cfg.augment.pipeline(cfg.run.seed)
    images = np.concatenate([augment_batch(aug, train.images[ids], ids, v, 0) for v in range(views)])
    example_ids = np.tile(ids, views)
    view_ids = np.repeat(np.arange(views), len(ids))
    logits = network_logits(net, images)
    proj = project_2d(logits)
    if proj.rank_deficient:
        log.warning("logits span fewer than two directions; second coordinate is zero")
    is_forget = np.isin(example_ids, split.forget_indices)
    digest = cfg.config_hash()

    with run_directory(cfg) as out:
        target = out / "plots" / f"{_describe(path)[0]}-seed{cfg.run.seed}"
        target.mkdir(parents=True, exist_ok=True)
        rows = [[int(i), int(train.labels[i]), int(f), repr(float(x)), repr(float(y))]
                for i, f, (x, y) in zip(example_ids, is_forget, proj.coords)]
        _write_csv(target / "projection.csv", digest, ["example_id", "label", "is_forget", "x", "y"], rows)
        logit_rows = [[int(i), int(v), int(f)] + [repr(float(z)) for z in row]
                      for i, v, f, row in zip(example_ids, view_ids, is_forget, logits)]
        _write_csv(target / "logits.csv", digest,
                   ["example_id", "view", "is_forget"] + [f"logit_{k}" for k in range(train.class_count)],
                   logit_rows)
        _write_csv(target / "entropy_hist.csv", digest, ["set", "bin_lo", "bin_hi", "count"],
                   _entropy_histogram(net, train, test, split, cfg.eval.histogram_bins))
    print(f"wrote {len(rows)} projected points to {target}")
    return 0


def _entropy_histogram(net, train, test, split, bins: int) -> list[list]:
    edges = np.linspace(0.0, np.log(train.class_count), bins + 1)
    train_ent = entropy_from_logits(network_logits(net, train.images))
    sets = {"forget": train_ent[split.forget_indices], "retain": train_ent[split.retain_indices],
            "test": entropy_from_logits(network_logits(net, test.images))}
    rows = []
    for name, values in sets.items():
        counts, _ = np.histogram(np.clip(values, 0.0, edges[-1]), bins=edges)
        rows += [[name, repr(float(lo)), repr(float(hi)), int(c)] for lo, hi, c in zip(edges, edges[1:], counts)]
    return rows


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siamunlearn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="render a synthetic dataset to a SUDS file")
    gen.add_argument("--kind", choices=("blobs", "rings"), default="blobs")
    gen.add_argument("--classes", type=int, default=3)
    gen.add_argument("--per-class", type=int, default=200)
    gen.add_argument("--size", type=int, default=16)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--channels", type=int, default=3)
    gen.add_argument("--noise", type=float, default=0.15)
    gen.add_argument("--layout-seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    for name, help_text in (("pretrain", "train the original model"),
                            ("unlearn", "apply an unlearning method to a checkpoint"),
                            ("evaluate", "compute metrics for checkpoints"),
                            ("export-plots", "write projection and entropy-histogram CSVs")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="experiment config (defaults apply when omitted)")
        cmd.add_argument("--seed", type=int, help="override run.seed")
        cmd.add_argument("--method", help=f"override unlearn.method ({', '.join(METHODS)})")
        cmd.add_argument("--out", help="override run.out_dir")
        if name == "evaluate":
            cmd.add_argument("--checkpoint", nargs="+",
                             help="checkpoints to evaluate (default: original plus every unlearned one)")
        elif name != "pretrain":
            cmd.add_argument("--checkpoint", help="input checkpoint (default: from the run directory)")
    return parser


COMMANDS = {"pretrain": cmd_pretrain, "unlearn": cmd_unlearn, "evaluate": cmd_evaluate,
            "export-plots": cmd_export_plots}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.method is not None and args.method not in METHODS:
            raise ConfigError(f"unknown method {args.method!r}; valid methods: {', '.join(METHODS)}")
        cfg = cfg.with_overrides(args.seed, args.method, args.out)
        return COMMANDS[args.command](cfg, args)
    except SiamUnlearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
