"""Command-line interface: train / verify / report / gen-data / fetch-mnist.

Configuration is a flat key=value text file plus command-line overrides
(KEY=VALUE positionals) and FALIGN_* environment variables; unknown keys are
rejected. Every run writes its fully resolved configuration next to its
outputs. Exit codes: 0 success, 1 I/O error, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import gzip
import hashlib
import json
import math
import os
import sys
import urllib.request
from pathlib import Path

import numpy as np

from . import verifiers as vf
from .data import Dataset, gen_nearly_orthogonal, gen_orthogonal_separable, \
    inject_label_noise, load_cache, load_idx, remap_to_indices, save_cache, subset, export_csv
from .linalg import Rng
from .losses import LossKind
from .metrics import metrics_csv_columns, read_metrics_csv, write_metrics_csv
from .network import Architecture, InitStrategy, init_network, load_checkpoint, save_checkpoint
from .rules import Rule
from .synthdigits import write_corpus_idx
from .trainer import NumericalAbortError, TrainConfig, parse_schedule, train

ENV_PREFIX = "FALIGN_"
REPORT_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    """Bad or missing configuration; maps to exit code 2."""


# key -> (type, default); None default means unset
KNOWN_KEYS: dict[str, tuple[type, object]] = {
    "preset": (str, None),
    "out": (str, "runs"),
    "seed": (int, 0),
    "workers": (int, 1),
    "data.kind": (str, None),  # ortho | near-ortho | idx | cache | digits
    "data.n": (int, 20),
    "data.d": (int, 10),
    "data.gamma": (float, 0.5),
    "data.eps": (float, 0.1),
    "data.images": (str, None),
    "data.labels": (str, None),
    "data.cache": (str, None),
    "data.digits_dir": (str, None),
    "data.classes": (str, None),
    "data.binary": (bool, False),
    "data.remap": (bool, False),
    "data.subset": (int, None),
    "data.noise": (float, 0.0),
    "data.test_images": (str, None),
    "data.test_labels": (str, None),
    "data.test_cache": (str, None),
    "net.widths": (str, None),  # comma list incl. input/output, e.g. 784,30,1
    "net.leaky": (float, 0.01),
    "net.init": (str, "uniform"),
    "train.rule": (str, "fa"),
    "train.loss": (str, "exp"),
    "train.lr": (float, 1e-4),
    "train.schedule": (str, "constant"),
    "train.momentum": (float, 0.0),
    "train.steps": (int, 1000),
    "train.log_every": (int, 10),
    "train.batch_size": (int, None),
    "train.checkpoint": (str, None),
    "sweep.widths": (str, None),
    "sweep.rules": (str, None),
    "sweep.seeds": (int, 1),
    "verify.suite": (str, ",".join(vf.ALL_VERIFIERS)),
}

PRESETS: dict[str, dict[str, str]] = {
    # Two-layer noisy-image replication protocol: widths 15..200, all rules,
    # full batch, lr 0.05 with momentum 0.05, divide lr by 10 every 1000 steps.
    "mnist-noisy-sweep": {
        "data.subset": "4000",
        "data.noise": "0.2",
        "data.remap": "true",
        "net.init": "uniform",
        "train.loss": "ce",
        "train.lr": "0.05",
        "train.momentum": "0.05",
        "train.schedule": "step:0.1:1000",
        "train.steps": "6000",
        "train.log_every": "5",
        "sweep.widths": "15,30,45,60,75,100,125,150,175,200",
        "sweep.rules": "bp,fa,adafa,signfa",
        "sweep.seeds": "6",
    },
    # Dominance + envelope verification on generated orthogonal-separable data.
    "ortho-dominance": {
        "data.kind": "ortho",
        "data.n": "20",
        "data.d": "10",
        "data.gamma": "0.5",
        "net.widths": "10,20,1",
        "net.init": "aligned",
        "train.rule": "fa",
        "train.loss": "exp",
        "train.lr": "1e-4",
        "train.steps": "10000",
        "train.log_every": "1",
        "verify.suite": "dominance,envelope",
    },
}

MNIST_FILES = {
    # name -> (url, sha256 of the gzip archive)
    "train-images-idx3-ubyte": (
        "https://ossci-datasets.s3.amazonaws.com/mnist/train-images-idx3-ubyte.gz",
        "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609"),
    "train-labels-idx1-ubyte": (
        "https://ossci-datasets.s3.amazonaws.com/mnist/train-labels-idx1-ubyte.gz",
        "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c"),
    "t10k-images-idx3-ubyte": (
        "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-images-idx3-ubyte.gz",
        "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6"),
    "t10k-labels-idx1-ubyte": (
        "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-labels-idx1-ubyte.gz",
        "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6"),
}


def _parse_value(key: str, raw: str):
    typ, _ = KNOWN_KEYS[key]
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def _env_key_map() -> dict[str, str]:
    return {ENV_PREFIX + k.upper().replace(".", "_"): k for k in KNOWN_KEYS}


def resolve_config(config_path: str | None, overrides: list[str],
                   flag_values: dict[str, object]) -> dict:
    """Merge defaults < preset < config file < environment < CLI overrides."""
    cfg = {k: d for k, (_, d) in KNOWN_KEYS.items()}

    staged: list[tuple[str, str]] = []
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {config_path}: {e}") from e
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{config_path}:{ln}: expected key = value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            staged.append((key, raw))
    env_map = _env_key_map()
    env_staged = [(env_map[name], val) for name, val in os.environ.items() if name in env_map]
    cli_staged = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = (s.strip() for s in item.split("=", 1))
        cli_staged.append((key, raw))

    # find the preset first (any layer may name it), then apply layers in order
    preset_name = None
    for key, raw in staged + env_staged + cli_staged:
        if key == "preset":
            preset_name = raw
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r} "
                              f"(known: {', '.join(sorted(PRESETS))})")
        cfg["preset"] = preset_name
        for key, raw in PRESETS[preset_name].items():
            cfg[key] = _parse_value(key, raw)
    for key, raw in staged + env_staged + cli_staged:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        cfg[key] = _parse_value(key, raw)
    for key, val in flag_values.items():
        if val is not None:
            cfg[key] = val
    return cfg


def write_resolved(cfg: dict, path: Path) -> None:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if val is None:
            continue
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key} = {val}")
    path.write_text("\n".join(lines) + "\n")


def _parse_int_list(raw: str, what: str) -> list[int]:
    try:
        return [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad {what}: {raw!r}") from e


def _rule(name: str) -> Rule:
    try:
        return Rule(name)
    except ValueError as e:
        raise ConfigError(f"unknown rule {name!r} (bp, fa, adafa, signfa)") from e


def build_dataset(cfg: dict, seed_offset: int = 0, test: bool = False) -> Dataset | None:
    """Materialize the dataset a config describes (train or test side)."""
    kind = cfg["data.kind"]
    seed = cfg["seed"] + seed_offset
    if test:
        if cfg["data.test_cache"]:
            ds = load_cache(cfg["data.test_cache"])
        elif cfg["data.test_images"]:
            if not cfg["data.test_labels"]:
                raise ConfigError("data.test_images requires data.test_labels")
            ds = load_idx(cfg["data.test_images"], cfg["data.test_labels"])
        elif kind == "digits":
            paths = write_corpus_idx(cfg["data.digits_dir"] or "digits-corpus")
            ds = load_idx(paths["test_images"], paths["test_labels"])
        else:
            return None
        return _shape_image_dataset(ds, cfg, seed + 1, noisy=False)

    if kind is None:
        raise ConfigError("data.kind is required (ortho, near-ortho, idx, cache, digits)")
    if kind == "ortho":
        return gen_orthogonal_separable(cfg["data.n"], cfg["data.d"], cfg["data.gamma"], Rng(seed))
    if kind == "near-ortho":
        return gen_nearly_orthogonal(cfg["data.n"], cfg["data.d"], cfg["data.eps"], Rng(seed))
    if kind == "cache":
        if not cfg["data.cache"]:
            raise ConfigError("data.kind = cache requires data.cache")
        return _shape_image_dataset(load_cache(cfg["data.cache"]), cfg, seed, noisy=True)
    if kind == "idx":
        if not cfg["data.images"] or not cfg["data.labels"]:
            raise ConfigError("data.kind = idx requires data.images and data.labels")
        return _shape_image_dataset(load_idx(cfg["data.images"], cfg["data.labels"]),
                                    cfg, seed, noisy=True)
    if kind == "digits":
        paths = write_corpus_idx(cfg["data.digits_dir"] or "digits-corpus")
        return _shape_image_dataset(load_idx(paths["train_images"], paths["train_labels"]),
                                    cfg, seed, noisy=True)
    raise ConfigError(f"unknown data.kind {kind!r}")


def _shape_image_dataset(ds: Dataset, cfg: dict, seed: int, noisy: bool) -> Dataset:
    classes = None
    if cfg["data.classes"]:
        classes = set(_parse_int_list(cfg["data.classes"], "data.classes"))
    if classes is not None or cfg["data.subset"]:
        if noisy and cfg["data.subset"]:
            take = cfg["data.subset"]
        elif classes is not None:
            # test side (or no subset requested): keep everything in the filter
            take = int(np.isin(ds.labels, sorted(classes)).sum())
        else:
            take = ds.n
        ds = subset(ds, take, Rng(seed + 17), classes=classes, binary=cfg["data.binary"])
    if cfg["data.remap"] and not cfg["data.binary"]:
        ds = remap_to_indices(ds)
    if noisy and cfg["data.noise"] > 0:
        ds = inject_label_noise(ds, cfg["data.noise"], Rng(seed + 29))
    return ds


def _net_widths(cfg: dict, ds: Dataset, width: int | None) -> tuple[int, ...]:
    if width is not None:
        if cfg["train.loss"] == "ce":
            out = len(np.unique(ds.labels))
        else:
            out = 1
        return (ds.d, width, out)
    if not cfg["net.widths"]:
        raise ConfigError("net.widths is required (e.g. 784,30,1) unless sweeping widths")
    widths = tuple(_parse_int_list(cfg["net.widths"], "net.widths"))
    if widths[0] != ds.d:
        raise ConfigError(f"net.widths input {widths[0]} does not match dataset d={ds.d}")
    return widths


def _execute_run(cfg: dict, width: int | None, rule_name: str, seed: int,
                 out_dir: str) -> dict:
    """One training run: returns the summary dict written to run.json."""
    ds = build_dataset(dict(cfg, **{"seed": seed}))
    test_ds = build_dataset(dict(cfg, **{"seed": seed}), test=True)
    rule = _rule(rule_name)
    widths = _net_widths(cfg, ds, width)
    arch = Architecture(widths, cfg["net.leaky"])
    try:
        init = InitStrategy(cfg["net.init"])
    except ValueError as e:
        raise ConfigError(f"unknown net.init {cfg['net.init']!r}") from e
    try:
        loss = LossKind(cfg["train.loss"])
    except ValueError as e:
        raise ConfigError(f"unknown train.loss {cfg['train.loss']!r}") from e
    tcfg = TrainConfig(rule=rule, loss=loss, lr=cfg["train.lr"], steps=cfg["train.steps"],
                       schedule=parse_schedule(cfg["train.schedule"]),
                       momentum=cfg["train.momentum"], log_every=cfg["train.log_every"],
                       seed=seed, batch_size=cfg["train.batch_size"])
    if cfg["train.checkpoint"]:
        net, meta = load_checkpoint(cfg["train.checkpoint"])
        start_step = int(meta.get("step") or 0)
    else:
        net = init_network(arch, init, rule, Rng(seed))
        start_step = 0

    run_name = f"{rule.value}_w{widths[1]}_s{seed}"
    run_dir = Path(out_dir) / run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = dict(cfg)
    resolved.update({"seed": seed, "train.rule": rule.value,
                     "net.widths": ",".join(str(w) for w in widths)})
    write_resolved(resolved, run_dir / "config.resolved")

    log = train(net, ds, tcfg, test_ds=test_ds)
    write_metrics_csv(log, run_dir / "metrics.csv", log.n_layers)
    save_checkpoint(net, run_dir / "checkpoint.json", seed=seed,
                    step=start_step + log.entries[-1].step)
    last = log.entries[-1]
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "run": run_name,
        "rule": rule.value,
        "width": widths[1],
        "seed": seed,
        "steps_run": last.step,
        "stop_reason": log.stop_reason,
        "final_loss": last.loss,
        "final_train_acc": last.train_acc,
        "final_test_loss": None if math.isnan(last.test_loss) else last.test_loss,
        "final_test_acc": None if math.isnan(last.test_acc) else last.test_acc,
        "cons_dev_mean": {str(layer): float(np.mean([e.cons_dev_mean[layer]
                                                     for e in log.entries]))
                          for layer in (log.entries[-1].cons_dev_mean or {})},
    }
    (run_dir / "run.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.overrides,
                         {"seed": args.seed, "out": args.out, "workers": args.workers})
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir / "config.resolved")

    widths = [None]
    rules = [cfg["train.rule"]]
    seeds = [cfg["seed"]]
    if cfg["sweep.widths"]:
        widths = _parse_int_list(cfg["sweep.widths"], "sweep.widths")
    if cfg["sweep.rules"]:
        rules = [r.strip() for r in cfg["sweep.rules"].split(",") if r.strip()]
    if cfg["sweep.seeds"] > 1:
        seeds = [cfg["seed"] + i for i in range(cfg["sweep.seeds"])]
    for r in rules:
        _rule(r)

    jobs = [(w, r, s) for w in widths for r in rules for s in seeds]
    summaries = []
    if cfg["workers"] > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            futures = {pool.submit(_execute_run, cfg, w, r, s, str(out_dir)): (w, r, s)
                       for w, r, s in jobs}
            for fut in concurrent.futures.as_completed(futures):
                summaries.append(fut.result())
    else:
        for w, r, s in jobs:
            summaries.append(_execute_run(cfg, w, r, s, str(out_dir)))
    # deterministic merge order regardless of completion order
    summaries.sort(key=lambda s: (s["width"], s["rule"], s["seed"]))
    for s in summaries:
        test = "" if s["final_test_acc"] is None else f" test_acc={s['final_test_acc']:.4f}"
        print(f"{s['run']}: loss={s['final_loss']:.6g} train_acc={s['final_train_acc']:.4f}"
              f"{test} [{s['stop_reason']}]")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = resolve_config(args.config, args.overrides,
                         {"seed": args.seed, "out": args.out})
    if cfg["train.momentum"] != 0.0:
        raise ConfigError("verification requires train.momentum = 0")
    suite = [s.strip() for s in cfg["verify.suite"].split(",") if s.strip()]
    unknown = [s for s in suite if s not in vf.ALL_VERIFIERS]
    if unknown:
        raise ConfigError(f"unknown verifiers {unknown}; choose from {list(vf.ALL_VERIFIERS)}")

    results = []
    dominance_runs = None
    image_ds = None
    if "conservation" in suite or "sign-floor" in suite:
        image_ds = _verification_image_dataset(cfg)
    for name in suite:
        if name == "gradcheck":
            results.append(vf.run_gradcheck(seed=cfg["seed"] + 61001))
        elif name == "conservation":
            results.append(vf.run_conservation(image_ds, seed=cfg["seed"] + 61003))
        elif name == "sign-floor":
            results.append(vf.run_sign_floor(image_ds, seed=cfg["seed"] + 61004))
        elif name == "dale":
            results.append(vf.run_dale(seed=cfg["seed"] + 61005))
        elif name == "dominance":
            res, dominance_runs = vf.run_dominance(seed=cfg["seed"] + 61006)
            results.append(res)
        elif name == "envelope":
            if dominance_runs is None:
                _, dominance_runs = vf.run_dominance(seed=cfg["seed"] + 61006)
            results.append(vf.run_envelope(dominance_runs))
        elif name == "eq1-bookkeeping":
            logs = [r.log for r in dominance_runs] if dominance_runs else None
            results.append(vf.run_eq1(seed=cfg["seed"] + 61007, logs=logs))

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"schema_version": REPORT_SCHEMA_VERSION,
              "all_passed": all(r.passed for r in results),
              "verifiers": [r.to_json() for r in results]}
    (out_dir / "verify.json").write_text(json.dumps(report, indent=2))
    for r in results:
        state = "PASS" if r.passed else "FAIL"
        print(f"{state} {r.name}: measured={r.measured} thresholds={r.thresholds}")
    return EXIT_OK if report["all_passed"] else EXIT_NUMERIC


def _verification_image_dataset(cfg: dict) -> Dataset:
    """Binary high-dimensional dataset for the conservation/sign-floor runs:
    user-supplied IDX files when configured, otherwise the synthetic digits."""
    c = dict(cfg)
    if not c["data.kind"] or c["data.kind"] in ("ortho", "near-ortho"):
        c["data.kind"] = "digits"
    c["data.classes"] = c["data.classes"] or "3,7"
    c["data.binary"] = True
    c["data.remap"] = False
    c["data.subset"] = c["data.subset"] or 500
    c["data.noise"] = c["data.noise"] if c["data.noise"] else 0.2
    return build_dataset(c)


def cmd_report(args) -> int:
    run_dirs = sorted(p.parent for p in Path(args.run_dir).rglob("run.json"))
    if not run_dirs:
        print(f"no run.json files under {args.run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for rd in run_dirs:
        summary = json.loads((rd / "run.json").read_text())
        summary["_dir"] = rd
        rows.append(summary)

    groups: dict[tuple[int, str], list[dict]] = {}
    for s in rows:
        groups.setdefault((s["width"], s["rule"]), []).append(s)

    def mean_se(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return None, None
        m = float(np.mean(vals))
        if len(vals) < 2:
            return m, None
        return m, float(np.std(vals, ddof=1) / np.sqrt(len(vals)))

    out_dir = Path(args.out or args.run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = []
    for (width, rule) in sorted(groups):
        members = groups[(width, rule)]
        dev_vals = [list(m["cons_dev_mean"].values())[0] if m["cons_dev_mean"] else None
                    for m in members]
        row = {"width": width, "rule": rule, "n_runs": len(members)}
        for name, vals in (("train_acc", [m["final_train_acc"] for m in members]),
                           ("test_acc", [m["final_test_acc"] for m in members]),
                           ("test_loss", [m["final_test_loss"] for m in members]),
                           ("cons_dev", dev_vals)):
            m, se = mean_se(vals)
            row[f"{name}_mean"] = m
            row[f"{name}_se"] = se
        row["single_replicate"] = len(members) < 2
        table.append(row)

    def fmt(v):
        return "" if v is None else f"{v:.17g}"

    cols = ["width", "rule", "n_runs", "train_acc_mean", "train_acc_se", "test_acc_mean",
            "test_acc_se", "test_loss_mean", "test_loss_se", "cons_dev_mean", "cons_dev_se"]
    with open(out_dir / "report.csv", "w") as f:
        f.write(",".join(cols) + "\n")
        for row in table:
            f.write(",".join(fmt(row.get(c)) if not isinstance(row.get(c), (int, str))
                             else str(row.get(c)) for c in cols) + "\n")

    md = ["| width | rule | runs | train acc | test acc | conservation dev |",
          "|---|---|---|---|---|---|"]
    for row in table:
        def pm(mean, se):
            if mean is None:
                return "-"
            if se is None:
                return f"{mean:.4g} (single replicate)"
            return f"{mean:.4g} +- {se:.2g}"
        md.append(f"| {row['width']} | {row['rule']} | {row['n_runs']} "
                  f"| {pm(row['train_acc_mean'], row['train_acc_se'])} "
                  f"| {pm(row['test_acc_mean'], row['test_acc_se'])} "
                  f"| {pm(row['cons_dev_mean'], row['cons_dev_se'])} |")
    (out_dir / "report.md").write_text("\n".join(md) + "\n")

    # long-format per-step CSV for external plotting
    with open(out_dir / "long.csv", "w") as f:
        wrote_header = False
        for s in rows:
            header, steps = read_metrics_csv(s["_dir"] / "metrics.csv")
            if not wrote_header:
                f.write(",".join(["width", "rule", "seed"] + header) + "\n")
                wrote_header = True
            for step_row in steps:
                vals = [str(s["width"]), s["rule"], str(s["seed"])]
                vals += [f"{step_row[c]:.17g}" for c in header]
                f.write(",".join(vals) + "\n")
    print(f"report over {len(rows)} runs -> {out_dir / 'report.md'}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    rng = Rng(args.seed)
    if args.kind == "ortho":
        ds = gen_orthogonal_separable(args.n, args.d, args.gamma, rng)
        print(f"generated n={ds.n} d={ds.d} measured gamma={ds.metadata['gamma']:.6g}")
    elif args.kind == "near-ortho":
        ds = gen_nearly_orthogonal(args.n, args.d, args.eps, rng)
        print(f"generated n={ds.n} d={ds.d} measured gamma={ds.metadata['gamma']:.6g} "
              f"eps={ds.metadata['eps']:.6g}")
    elif args.kind == "digits":
        paths = write_corpus_idx(args.out)
        print("wrote " + ", ".join(str(p) for p in paths.values()))
        return EXIT_OK
    else:
        raise ConfigError(f"unknown kind {args.kind!r}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        export_csv(ds, out)
    else:
        save_cache(ds, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fetch_mnist(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (url, digest) in MNIST_FILES.items():
        target = out / name
        if target.exists() and not args.force:
            print(f"{target} exists, skipping")
            continue
        print(f"fetching {url}")
        with urllib.request.urlopen(url, timeout=60) as r:
            blob = r.read()
        got = hashlib.sha256(blob).hexdigest()
        if got != digest:
            print(f"checksum mismatch for {name}: expected {digest}, got {got}",
                  file=sys.stderr)
            return EXIT_IO
        target.write_bytes(gzip.decompress(blob))
        print(f"wrote {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="falign",
                                description="Feedback-alignment training and verification")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int, default=None, help="base RNG seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                        help="config overrides")

    sp = sub.add_parser("train", help="run a training job or sweep")
    add_common(sp)
    sp.add_argument("--workers", type=int, default=None,
                    help="parallel replicate workers for sweeps")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("verify", help="run theorem verifiers, emit verify.json")
    add_common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="aggregate a sweep directory into tables")
    sp.add_argument("run_dir")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("gen-data", help="generate and certify a dataset")
    sp.add_argument("--kind", required=True, choices=["ortho", "near-ortho", "digits"])
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--d", type=int, default=10)
    sp.add_argument("--gamma", type=float, default=0.5)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help=".npz cache or .csv path (directory for digits)")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("fetch-mnist", help="download the IDX files (checksum verified)")
    sp.add_argument("--out", default="data/mnist")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_fetch_mnist)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbortError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
