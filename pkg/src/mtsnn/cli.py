"""Command line front end.

Subcommands:

  fetch-data     download (or just verify) the event-camera dataset
  gen-fixtures   write the synthetic spike-pattern corpus
  train          train one network on a corpus directory
  eval           re-evaluate a saved checkpoint on a corpus split
  sweep          run experiment families, emit results CSV/tables/curves

Every option resolves through three layers: built-in default, config
file (flat ``key = value`` lines, ``#`` comments), then command-line
flag.  The resolved values, each tagged with the layer that set it, are
written next to any outputs as ``resolved_config.txt``.  The data root
falls back to the MTSNN_DATA_ROOT environment variable.

Exit codes follow the exception families: 1 for configuration and
validation problems, 2 for numeric failures, 3 for I/O (dataset,
checkpoint, filesystem).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .errors import ConfigError
from .experiments import (
    FAMILIES,
    PROFILES,
    base_config,
    build_arch,
    default_values,
    emit_table,
    ensure_corpus,
    load_profile_data,
    run_family,
    write_reference_csv,
    write_results_csv,
)
from .fetch import fetch_nmnist
from .fixtures import DEFAULT_PARAMS, generate_fixture_tree
from .graph import build_mtsnn
from .train import TrainConfig, evaluate, train

log = logging.getLogger("mtsnn")


# ---------------------------------------------------------------- options

def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in s.split(",") if p.strip() != "")
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def _strs(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip() != "")


def _values(s: str) -> tuple:
    # sweep values: floats where possible, else strings (base: task1/task2)
    out = []
    for p in _strs(s):
        try:
            out.append(float(p))
        except ValueError:
            out.append(p)
    return tuple(out)


def _maybe_int(s: str):
    return None if s.strip().lower() == "none" else int(s)


class Opt:
    """One resolvable option: name, parser from string, default."""

    def __init__(self, name, parse, default, help=""):
        self.name = name
        self.parse = parse
        self.default = default
        self.help = help


COMMON = [
    Opt("config", str, None, "flat key = value config file"),
    Opt("data_root", str, None, "base data directory (env MTSNN_DATA_ROOT)"),
    Opt("log_level", str, "info", "debug|info|warning|error"),
]

TRAIN_OPTS = [
    Opt("corpus", str, None, "corpus directory (default <data-root>/fixtures)"),
    Opt("out", str, None, "output directory (required)"),
    Opt("profile", str, "desk", "|".join(PROFILES)),
    Opt("gen_corpus", _bool, False, "generate the synthetic corpus if missing"),
    Opt("hidden", _ints, None, "feature widths, e.g. 128,128"),
    Opt("t_steps", int, None, "simulation steps per sample"),
    Opt("bin_width_us", int, None, "event binning width"),
    Opt("epochs", int, None, ""),
    Opt("batch_size", int, None, ""),
    Opt("lr", float, None, ""),
    Opt("lr_decay", float, None, "per-epoch learning-rate multiplier"),
    Opt("lr_decay_after", int, None, "epochs at the full rate before decaying"),
    Opt("optimizer", str, None, "adam|sgd"),
    Opt("gamma", float, None, "task-head loss weight"),
    Opt("task_probability", float, None, "chance a batch trains task 1"),
    Opt("phi1", float, None, "task-1 firing threshold"),
    Opt("phi2", float, None, "task-2 firing threshold"),
    Opt("i_ext2", float, None, "task-2 injected current (ext_current mode)"),
    Opt("control_mode", str, None, "threshold|ext_current"),
    Opt("surrogate_kind", str, None, "exp_decay|fast_sigmoid"),
    Opt("surrogate_scale", float, None, ""),
    Opt("true_rate", float, None, ""),
    Opt("false_rate", float, None, ""),
    Opt("use_task_block", _bool, None, ""),
    Opt("seed", int, 0, ""),
]

EVAL_OPTS = [
    Opt("checkpoint", str, None, "checkpoint file (required)"),
    Opt("corpus", str, None, "corpus directory (default <data-root>/fixtures)"),
    Opt("split", str, "test", "train|test"),
    Opt("task", _maybe_int, None, "1 or 2; default evaluates both"),
    Opt("profile", str, "desk", "|".join(PROFILES)),
    Opt("t_steps", int, None, ""),
    Opt("bin_width_us", int, None, ""),
    Opt("batch_size", int, None, ""),
    Opt("phi1", float, None, ""),
    Opt("phi2", float, None, ""),
    Opt("i_ext2", float, None, ""),
    Opt("control_mode", str, None, "threshold|ext_current"),
]

SWEEP_OPTS = [
    Opt("corpus", str, None, "corpus directory (default <data-root>/fixtures)"),
    Opt("out", str, None, "output directory (required)"),
    Opt("profile", str, "desk", "|".join(PROFILES)),
    Opt("gen_corpus", _bool, True, "generate the synthetic corpus if missing"),
    Opt("families", _strs, FAMILIES, "comma list of " + ",".join(FAMILIES)),
    Opt("values", _values, None, "sweep values (single family only)"),
    Opt("seeds", _ints, None, "comma list, default from the profile"),
    Opt("jobs", int, 1, "parallel training processes"),
    Opt("hidden", _ints, None, "feature widths, e.g. 128,128"),
    Opt("t_steps", int, None, "simulation steps per sample"),
    Opt("bin_width_us", int, None, "event binning width"),
    Opt("epochs", int, None, ""),
    Opt("batch_size", int, None, ""),
]

FETCH_OPTS = [
    Opt("root", str, None, "dataset directory (default <data-root>/nmnist)"),
    Opt("splits", _strs, ("train", "test"), ""),
    Opt("verify_only", _bool, False, "check an existing tree, download nothing"),
]

GEN_OPTS = [
    Opt("root", str, None, "corpus directory (default <data-root>/fixtures)"),
    Opt("train_per_class", int, 100, ""),
    Opt("test_per_class", int, 50, ""),
    Opt("seed", int, 1234, ""),
] + [
    Opt(k, (_maybe_int if k == "pattern_pool" else type(v)), v, "")
    for k, v in DEFAULT_PARAMS.items()
]

COMMANDS = {
    "fetch-data": FETCH_OPTS,
    "gen-fixtures": GEN_OPTS,
    "train": TRAIN_OPTS,
    "eval": EVAL_OPTS,
    "sweep": SWEEP_OPTS,
}


# ------------------------------------------------------------- resolution

def parse_config_file(path) -> dict[str, str]:
    vals: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        vals[key.strip()] = value.strip()
    return vals


def resolve(opts: list[Opt], args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge defaults, config file, and flags; returns (values, provenance)."""
    table = {o.name: o for o in opts}
    values, source = {}, {}
    for o in opts:
        values[o.name] = o.default
        source[o.name] = "default"
    if values.get("data_root") is None and os.environ.get("MTSNN_DATA_ROOT"):
        values["data_root"] = os.environ["MTSNN_DATA_ROOT"]
        source["data_root"] = "env"
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        for key, raw in parse_config_file(cfg_path).items():
            if key not in table:
                raise ConfigError(f"config file sets unknown option {key!r}")
            values[key] = table[key].parse(raw)
            source[key] = "file"
    for o in opts:
        flag_val = getattr(args, o.name, None)
        if flag_val is not None:
            values[o.name] = flag_val
            source[o.name] = "flag"
    return values, source


def write_resolved(path, values: dict, source: dict) -> None:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, (tuple, list)):
            return ",".join(str(x) for x in v)
        return str(v)

    lines = [f"{k} = {fmt(values[k])}  # {source[k]}"
             for k in sorted(values) if k != "config"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _default_dir(values: dict, key: str, leaf: str) -> Path:
    if values.get(key):
        return Path(values[key])
    root = values.get("data_root") or "data"
    return Path(root) / leaf


def _profile(values: dict):
    name = values["profile"]
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}, have {sorted(PROFILES)}")
    prof = PROFILES[name]
    for key in ("t_steps", "bin_width_us", "epochs", "batch_size"):
        if values.get(key) is not None:
            prof = replace(prof, **{key: values[key]})
    if values.get("hidden") is not None:
        prof = replace(prof, hidden=tuple(values["hidden"]))
    return prof


# --------------------------------------------------------------- commands

def cmd_fetch_data(values: dict, source: dict) -> int:
    root = _default_dir(values, "root", "nmnist")
    counts = fetch_nmnist(root, splits=values["splits"],
                          verify_only=values["verify_only"])
    for split, n in counts.items():
        log.info("%s: %d samples verified", split, n)
    return 0


def cmd_gen_fixtures(values: dict, source: dict) -> int:
    root = _default_dir(values, "root", "fixtures")
    params = {k: values[k] for k in DEFAULT_PARAMS}
    manifest = generate_fixture_tree(
        root, values["train_per_class"], values["test_per_class"],
        seed=values["seed"], params=params,
    )
    log.info("wrote %d files under %s", len(manifest["files"]), root)
    write_resolved(root / "resolved_config.txt", values, source)
    return 0


def _train_config(profile, values: dict) -> TrainConfig:
    overrides = {}
    for key in ("epochs", "batch_size", "lr", "lr_decay", "lr_decay_after",
                "optimizer", "gamma", "task_probability", "phi1", "phi2",
                "i_ext2", "control_mode", "surrogate_kind", "surrogate_scale",
                "true_rate", "false_rate", "use_task_block"):
        if values.get(key) is not None:
            overrides[key] = values[key]
    return base_config(profile, values.get("seed", 0), **overrides)


def cmd_train(values: dict, source: dict) -> int:
    if not values.get("out"):
        raise ConfigError("train requires --out")
    profile = _profile(values)
    corpus = _default_dir(values, "corpus", "fixtures")
    if values["gen_corpus"]:
        ensure_corpus(corpus, profile)
    train_ds, test_ds = load_profile_data(corpus, profile)
    cfg = _train_config(profile, values)
    net = build_mtsnn(build_arch(profile), seed=cfg.seed,
                      init_gain=dict(profile.init_gain))
    out = Path(values["out"])
    write_resolved(out / "resolved_config.txt", values, source)
    train(net, train_ds, test_ds, cfg, out_dir=out, log=log.info)
    for task in (1, 2):
        loss, acc = evaluate(net, test_ds, cfg, task)
        print(f"task {task} accuracy {acc:.4f} loss {loss:.4f}")
    return 0


def cmd_eval(values: dict, source: dict) -> int:
    if not values.get("checkpoint"):
        raise ConfigError("eval requires --checkpoint")
    net = load_checkpoint(values["checkpoint"])
    profile = _profile(values)
    corpus = _default_dir(values, "corpus", "fixtures")
    from .data import load_dataset  # local import keeps module top small

    ds = load_dataset(corpus, values["split"], profile.t_steps,
                      profile.bin_width_us)
    cfg = _train_config(profile, values)
    present = [t for t, n in ((1, net.spec.num_labels_task1),
                              (2, net.spec.num_labels_task2)) if n > 0]
    tasks = (values["task"],) if values.get("task") else present
    for task in tasks:
        if task not in (1, 2):
            raise ConfigError(f"task must be 1 or 2, got {task}")
        loss, acc = evaluate(net, ds, cfg, task)
        print(f"task {task} accuracy {acc:.4f} loss {loss:.4f}")
    return 0


def cmd_sweep(values: dict, source: dict) -> int:
    if not values.get("out"):
        raise ConfigError("sweep requires --out")
    families = values["families"]
    for fam in families:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown family {fam!r}, have {FAMILIES}")
    if values.get("values") is not None and len(families) != 1:
        raise ConfigError("--values needs exactly one --families entry")
    profile = _profile(values)
    corpus = _default_dir(values, "corpus", "fixtures")
    if values["gen_corpus"]:
        ensure_corpus(corpus, profile)
    out = Path(values["out"])
    write_resolved(out / "resolved_config.txt", values, source)
    rows = []
    for fam in families:
        vals = values.get("values") or default_values(fam)
        log.info("family %s: values %s, seeds %s", fam, list(vals),
                 list(values.get("seeds") or profile.seeds))
        rows += run_family(corpus, profile, fam, values=vals,
                           seeds=values.get("seeds"), out_dir=out,
                           jobs=values["jobs"], log=log.info)
        write_results_csv(out / "results.csv", rows)  # checkpoint progress
    write_reference_csv(out / "reference.csv")
    (out / "tables.md").write_text(emit_table(rows, "markdown"))
    log.info("wrote %s", out / "results.csv")
    return 0


HANDLERS = {
    "fetch-data": cmd_fetch_data,
    "gen-fixtures": cmd_gen_fixtures,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtsnn",
        description="Spiking-network multi-task training tool.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        for o in COMMON + opts:
            flag = "--" + o.name.replace("_", "-")
            p.add_argument(flag, type=o.parse, default=None, help=o.help,
                           metavar="V")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if not e.code else 1
    try:
        values, source = resolve(COMMON + COMMANDS[args.command], args)
        logging.basicConfig(
            stream=sys.stderr, format="%(levelname)s %(message)s",
            level=getattr(logging, values["log_level"].upper(), logging.INFO),
        )
        return HANDLERS[args.command](values, source)
    except ValueError as e:  # ConfigError, ShapeError, TopologyError, ...
        log.error("%s", e)
        return 1
    except ArithmeticError as e:
        log.error("%s", e)
        return 2
    except OSError as e:  # DatasetError, ChecksumError, CheckpointError, ...
        log.error("%s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
