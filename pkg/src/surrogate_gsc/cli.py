"""Command-line pipeline: ``gen-data``, ``train``, ``optimize`` and ``eval``.

Every command writes a manifest next to its outputs recording the command,
configuration hashes, seed, artifact hashes and versions. Exit codes: 0 on
success, 2 for configuration errors, 3 for numeric failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .optimize import OptimizeConfig, pearson, report, run_optimization, select_top
from .probe import (
    SamplingStrategy,
    generate_dataset,
    generate_records,
    manifest_path,
    read_dataset,
    sample_weights,
    split_dataset,
    write_dataset,
)
from .qsim import NumericError, QubitConfig, config_hash, read_preset_json
from .surrogate import (
    Network,
    Normalization,
    TrainConfig,
    encode_batch,
    evaluate,
    length_generalization_report,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger("surrogate_gsc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, pairs, prefix: str | None = None) -> dict:
    """Apply ``key.sub=value`` overrides; with ``prefix`` only keys starting with it."""
    doc = json.loads(json.dumps(doc))
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        parts = key.split(".")
        if prefix is not None:
            if parts[0] != prefix:
                continue
            parts = parts[1:]
        elif parts[0] == "qubit":
            continue
        if not parts or not all(parts):
            raise ConfigError(f"malformed override key {key!r}")
        node = doc
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = parse_value(value)
    return doc


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, args: argparse.Namespace, seed: int,
                   configs: dict, artifacts: list) -> Path:
    doc = {
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": seed,
        "config_hashes": {k: config_hash(v) for k, v in configs.items()},
        "configs": configs,
        "artifacts": {str(Path(a).name): file_hash(a) for a in artifacts},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": {"surrogate_gsc": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str))
    return path


def load_qubit(name_or_path, overrides) -> QubitConfig:
    try:
        doc = read_preset_json(name_or_path) if isinstance(name_or_path, (str, Path)) else name_or_path
        return QubitConfig.from_dict(apply_overrides(doc, overrides, prefix="qubit"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid qubit configuration: {exc}") from exc


def _chunk(args):
    strategy, cfg, start, stop, seed = args
    return generate_records(strategy, cfg, start, stop, seed)


def _history_csv(path: Path, hist) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in hist.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return path


def _xy(records, L_max, norm):
    X = encode_batch([r.pulse for r in records], L_max, norm)
    Y = np.array([[r.stats.p_mean, r.stats.p_stderr] for r in records])
    return X, Y


# --------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    doc = read_preset_json(args.config)
    cfg = QubitConfig.from_dict(apply_overrides(doc, args.set))
    strategy = SamplingStrategy.from_config(cfg)
    if args.count < 0:
        raise ConfigError("count must be non-negative")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    workers = max(1, args.workers or 1)
    if workers > 1 and args.count > 2048:
        # fixed chunk boundaries; record i depends only on (seed, i)
        bounds = [(s, min(args.count, s + 2048)) for s in range(0, args.count, 2048)]
        with ProcessPoolExecutor(workers) as ex:
            parts = ex.map(_chunk, [(strategy, cfg, a, b, args.seed) for a, b in bounds])
            records = [r for part in parts for r in part]
    else:
        records = generate_dataset(strategy, cfg, args.count, args.seed)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "strategy": strategy.to_dict(),
        "count": args.count,
        "seed": args.seed,
    }
    write_dataset(out, records, manifest)
    write_manifest(out.with_name(out.name + ".run.json"), "gen-data", args, args.seed,
                   {"qubit": cfg.to_dict()}, [out, manifest_path(out)])
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def _dataset_config(path) -> QubitConfig:
    mp = manifest_path(path)
    if not mp.exists():
        raise ConfigError(f"dataset manifest {mp} not found")
    return QubitConfig.from_dict(json.loads(mp.read_text())["config"])


def cmd_train(args) -> int:
    records = read_dataset(args.data)
    if len(records) < 3:
        raise ConfigError("need at least 3 records to split")
    cfg = _dataset_config(args.data)
    tdoc = apply_overrides(TrainConfig.preset(args.train_preset).to_dict(), args.set)
    try:
        tcfg = TrainConfig(**tdoc)
    except TypeError as exc:
        raise ConfigError(f"invalid training configuration: {exc}") from exc
    L_max = args.L_max or max(r.pulse.length for r in records)
    if any(r.pulse.length > L_max for r in records):
        raise ConfigError(f"dataset has pulses longer than --L-max {L_max}")
    norm = Normalization(1.0 / abs(cfg.eps_min))
    X, Y = _xy(records, L_max, norm)
    split = split_dataset(len(records), seed=args.seed)
    w = sample_weights(Y[split.train, 0])
    net = Network.initialize(args.network, seed=args.seed, dtype=np.dtype(tcfg.dtype))
    best, hist = train(net, X[split.train], Y[split.train], X[split.validation], Y[split.validation],
                       w, tcfg, seed=args.seed)
    if hist.stopped.startswith(("numeric", "non-finite")):
        log.error("training aborted: %s", hist.stopped)
        code = EXIT_NUMERIC
    else:
        code = EXIT_OK
    metrics = evaluate(best, X[split.test], Y[split.test])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mname = out.name + ".manifest.json"
    save_checkpoint(out, best, norm, L_max, args.seed, hist.to_dict(), extra={
        "manifest": mname, "qubit_config": cfg.to_dict(), "train_config": tcfg.to_dict(),
        "dataset_sha256": file_hash(args.data), "test_metrics": metrics.to_dict(),
        "network_preset": args.network if isinstance(args.network, str) else None,
    })
    hpath = _history_csv(out.with_name(out.stem + ".history.csv"), hist)
    mpath = out.with_name(out.stem + ".metrics.json")
    mpath.write_text(json.dumps({str(k): v for k, v in metrics.to_dict().items()}, indent=1, sort_keys=True))
    write_manifest(out.with_name(mname), "train", args, args.seed,
                   {"qubit": cfg.to_dict(), "train": tcfg.to_dict()}, [out, hpath, mpath])
    print(f"epochs {len(hist)} ({hist.stopped}); test MAE {metrics.mae:.4g}, "
          f"A_0.05 {metrics.accuracy[0.05]:.4f}; checkpoint {out}")
    return code


def cmd_optimize(args) -> int:
    net, norm, L_max, doc = load_checkpoint(args.checkpoint)
    qdoc = read_preset_json(args.config) if args.config else doc.get("extra", {}).get("qubit_config")
    if qdoc is None:
        raise ConfigError("no qubit configuration given and none stored in the checkpoint")
    qubit = load_qubit(qdoc, args.set)
    odoc = apply_overrides(read_preset_json(args.opt_config), args.set)
    odoc["seed"] = args.seed
    ocfg = OptimizeConfig.from_dict(odoc)
    print("resolved schedule:")
    for i, s in enumerate(ocfg.stages):
        print(f"  stage {i + 1}: {s}")
    start = time.monotonic()

    def progress(it, losses):
        if it % max(1, ocfg.total_iterations // 20) == 0:
            log.info("iteration %d/%d median L_GSC %.3g (%.0fs)", it, ocfg.total_iterations,
                     float(np.nanmedian(losses)), time.monotonic() - start)

    cands = run_optimization(net, norm, L_max, qubit, ocfg, progress)
    out = Path(args.out)
    (out / "candidates").mkdir(parents=True, exist_ok=True)
    artifacts = []
    for c in cands:
        p = out / "candidates" / f"candidate_{c.index:04d}.json"
        p.write_text(c.to_json())
        artifacts.append(p)
    paths = report(cands, out, n_top=ocfg.n_top)
    artifacts += list(paths.values())
    init = np.array([c.initial_gsc_loss for c in cands])
    final = np.array([c.gsc_loss for c in cands])
    def ev(c, key):
        return c.final_eval[key] if c.final_eval else float("nan")

    coh = np.array([ev(c, "coherent_mean") for c in cands])
    coh0 = np.array([c.initial_eval["coherent_mean"] for c in cands])
    top = select_top(cands, ocfg.n_top)
    summary = {
        "n_gatesets": len(cands),
        "failed": int(sum(c.failed for c in cands)),
        "median_initial_gsc_loss": float(np.nanmedian(init)),
        "median_final_gsc_loss": float(np.nanmedian(final)),
        "top_indices": [c.index for c in top],
        "top_mean_coherent_infidelity": float(np.nanmean([ev(c, "coherent_mean") for c in top])),
        "top_mean_incoherent_infidelity": float(np.nanmean([ev(c, "incoherent_mean") for c in top])),
        "best_top_coherent_infidelity": float(np.nanmin([ev(c, "coherent_mean") for c in top])),
        "fraction_coherent_below_1pct": float(np.mean(coh <= 0.01)),
        "pearson_initial_final": pearson(coh0[np.isfinite(coh)], coh[np.isfinite(coh)]),
    }
    sp = out / "summary.json"
    sp.write_text(json.dumps(summary, indent=1, sort_keys=True))
    artifacts.append(sp)
    write_manifest(out / "manifest.json", "optimize", args, args.seed,
                   {"qubit": qubit.to_dict(), "optimize": ocfg.to_dict()}, artifacts)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_NUMERIC if summary["failed"] == len(cands) else EXIT_OK


def cmd_eval(args) -> int:
    net, norm, L_max, doc = load_checkpoint(args.checkpoint)
    qdoc = read_preset_json(args.config) if args.config else doc.get("extra", {}).get("qubit_config")
    if qdoc is None:
        raise ConfigError("no qubit configuration given and none stored in the checkpoint")
    qubit = load_qubit(qdoc, args.set)
    lengths = [int(v) for v in args.lengths.split(",") if v.strip()] if args.lengths else []
    bad = [L for L in lengths if not 1 <= L <= L_max]
    if bad:
        raise ConfigError(f"lengths {bad} exceed the encoder capacity L_max={L_max}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    metrics = {}
    if args.data:
        records = read_dataset(args.data)
        X, Y = _xy(records, L_max, norm)
        metrics = evaluate(net, X, Y).to_dict()
        mp = out / "metrics.json"
        mp.write_text(json.dumps({str(k): v for k, v in metrics.items()}, indent=1, sort_keys=True))
        artifacts.append(mp)
    if lengths:
        window = doc.get("extra", {}).get("qubit_config", {}).get("probe", {}).get("length_range")
        strategy = SamplingStrategy.from_config(qubit)
        if window:
            strategy = strategy.with_lengths(window)
        rows = length_generalization_report(net, norm, L_max, qubit, strategy, lengths, args.count, args.seed)
        rp = out / "length_report.csv"
        with rp.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        artifacts.append(rp)
    write_manifest(out / "manifest.json", "eval", args, args.seed, {"qubit": qubit.to_dict()}, artifacts)
    if metrics:
        print(json.dumps(metrics, indent=1, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    default_workers = os.cpu_count() or 1
    p = argparse.ArgumentParser(prog="surrogate-gsc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_default):
        sp.add_argument("--config", default=config_default,
                        help="qubit config: preset name or JSON path")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        sp.add_argument("--workers", type=int, default=default_workers)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (repeatable); prefix qubit. for the qubit config")

    g = sub.add_parser("gen-data", help="simulate a probe-pulse dataset")
    common(g, "general")
    g.add_argument("--count", type=int, required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a surrogate on a dataset")
    common(t, None)
    t.add_argument("--data", required=True)
    t.add_argument("--network", default="desk", help="network preset: general, specific, desk, tiny")
    t.add_argument("--train-preset", default="general", help="plateau schedule: general, specific or desk")
    t.add_argument("--L-max", dest="L_max", type=int, default=None)
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("optimize", help="optimize gate sets through a trained surrogate")
    common(o, None)
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--opt-config", default="desk", help="optimize config: desk, paper or JSON path")
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("eval", help="score a surrogate and its length generalization")
    common(e, None)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default=None, help="dataset to score")
    e.add_argument("--lengths", default="", help="comma-separated pulse lengths")
    e.add_argument("--count", type=int, default=500, help="records per length")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
