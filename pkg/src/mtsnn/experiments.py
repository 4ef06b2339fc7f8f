"""Sweep driver for the headline comparisons.

Four experiment families, each a set of training runs over a shared
synthetic corpus and a few seeds:

  base         single-task networks, one per task (the no-sharing upper
               reference: no task mixing, no run-time control)
  threshold    multi-task nets where task 2 raises the firing threshold
               of the feature and label blocks to phi-2 (swept)
  gamma        loss-mix sweep: weight of the task-head loss at the
               default phi-2
  ext_current  control variant that injects a constant current for
               task 2 instead of moving the threshold (swept)

Two profiles are defined.  The desk profile is small enough to run on a
laptop CPU in minutes per case and is what the tests exercise; the full
profile records the published full-scale configuration for reference and
is never run here.  Reference accuracies for the full-scale runs ship in
REFERENCE_FULL_SCALE so desk results can be compared against the
intended trends.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .data import Dataset, load_dataset
from .errors import ConfigError
from .fixtures import MANIFEST_NAME, generate_fixture_tree, verify_fixtures
from .graph import LayerSpec, NetworkSpec, NetworkState, build_mtsnn
from .train import ControlMode, RunMetrics, TrainConfig, evaluate, train

THRESHOLD_VALUES = (1.5, 2.0, 3.0, 5.0, 10.0)
GAMMA_VALUES = (0.1, 0.2, 0.3, 0.5)
EXT_CURRENT_VALUES = (0.05, 0.1, 0.5, 1.0, 5.0)
BASE_VALUES = ("task1", "task2")

FAMILIES = ("base", "threshold", "gamma", "ext_current")


@dataclass(frozen=True)
class Profile:
    """Scale and tuning of one experiment tier."""

    name: str
    train_per_class: int
    test_per_class: int
    duration_ms: int
    t_steps: int
    bin_width_us: int
    hidden: tuple[int, ...]
    epochs: int
    batch_size: int
    seeds: tuple[int, ...]
    lr: float
    surrogate_scale: float
    init_gain: dict = field(default_factory=dict)
    lr_decay: float = 1.0
    lr_decay_after: int = 0
    false_rate: float = 0.05
    phi1: float = 1.25
    phi2: float = 5.0
    gamma: float = 0.1
    i_ext2: float = 0.1

    def fixture_params(self) -> dict:
        return {"duration_ms": self.duration_ms}


DESK = Profile(
    name="desk",
    train_per_class=100,
    test_per_class=50,
    duration_ms=100,
    t_steps=100,
    bin_width_us=1000,
    hidden=(128, 128),
    epochs=15,
    batch_size=32,
    seeds=(0, 1, 2),
    lr=1e-3,
    surrogate_scale=2.0,
    init_gain={"feature": 6.0, "label": 0.75, "task": 0.75},
    lr_decay=0.5,
    lr_decay_after=12,
    # a zero silence target keeps the high-threshold task from dragging on
    # the idle label segment; at this scale that cross-talk costs accuracy
    false_rate=0.0,
)

# the published configuration; kept for the record, far too slow to run here
FULL = Profile(
    name="full",
    train_per_class=6000,
    test_per_class=1000,
    duration_ms=300,
    t_steps=300,
    bin_width_us=1000,
    hidden=(512, 512),
    epochs=100,
    batch_size=32,
    seeds=(0,),
    lr=1e-3,
    surrogate_scale=2.0,
    init_gain={"feature": 5.0, "label": 0.75, "task": 0.75},
)

PROFILES = {"desk": DESK, "full": FULL}

NUM_DIGIT_LABELS = 10
NUM_PARITY_LABELS = 2


def build_arch(profile: Profile, n1: int = NUM_DIGIT_LABELS, n2: int = NUM_PARITY_LABELS,
               with_task_block: bool = True) -> NetworkSpec:
    """Feed-forward spec at the profile's widths; heads read the last hidden layer."""
    sizes = (2312,) + tuple(profile.hidden)
    feature = [LayerSpec(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
    latent = sizes[-1]
    return NetworkSpec(
        feature_block=feature,
        label_block=[LayerSpec(latent, n1 + n2)],
        task_block=[LayerSpec(latent, 2)] if with_task_block else [],
        num_labels_task1=n1,
        num_labels_task2=n2,
    )


def base_config(profile: Profile, seed: int, **overrides) -> TrainConfig:
    cfg = dict(
        epochs=profile.epochs, batch_size=profile.batch_size, lr=profile.lr,
        lr_decay=profile.lr_decay, lr_decay_after=profile.lr_decay_after,
        false_rate=profile.false_rate,
        gamma=profile.gamma, phi1=profile.phi1,
        phi2=profile.phi2, i_ext2=profile.i_ext2,
        surrogate_scale=profile.surrogate_scale, seed=seed,
    )
    cfg.update(overrides)
    return TrainConfig(**cfg)


def ensure_corpus(root, profile: Profile, seed: int = 1234) -> None:
    """Generate the profile's synthetic corpus unless a valid one is present."""
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        verify_fixtures(root)  # raises on corruption rather than clobbering
        return
    generate_fixture_tree(root, profile.train_per_class, profile.test_per_class,
                          seed=seed, params=profile.fixture_params())


def load_profile_data(root, profile: Profile) -> tuple[Dataset, Dataset]:
    train_ds = load_dataset(root, "train", profile.t_steps, profile.bin_width_us)
    test_ds = load_dataset(root, "test", profile.t_steps, profile.bin_width_us)
    return train_ds, test_ds


@dataclass
class ResultRow:
    """One training run's end state, one line of results.csv."""

    family: str
    value: str
    seed: int
    task1_acc: float | None
    task2_acc: float | None
    phi1: float
    phi2: float
    gamma: float
    i_ext2: float | None
    epochs: int
    t_steps: int
    profile: str
    wall_s: float


RESULTS_COLUMNS = ["family", "value", "seed", "task1_acc", "task2_acc",
                   "phi1", "phi2", "gamma", "i_ext2", "epochs", "t_steps",
                   "profile", "wall_s"]


def _case_label(family: str, value, seed: int) -> str:
    v = value if isinstance(value, str) else f"{value:g}"
    return f"{family}_{v}_{seed}"


def _case_setup(profile: Profile, family: str, value, seed: int):
    """(network, config, tasks-to-evaluate) for one case."""
    if family == "base":
        if value == "task1":
            arch = build_arch(profile, NUM_DIGIT_LABELS, 0, with_task_block=False)
            cfg = base_config(profile, seed, task_probability=1.0,
                              use_task_block=False)
            tasks = (1,)
        elif value == "task2":
            arch = build_arch(profile, 0, NUM_PARITY_LABELS, with_task_block=False)
            cfg = base_config(profile, seed, task_probability=0.0,
                              use_task_block=False, phi2=profile.phi1)
            tasks = (2,)
        else:
            raise ConfigError(f"base family takes task1 or task2, got {value!r}")
    elif family == "threshold":
        arch = build_arch(profile)
        cfg = base_config(profile, seed, phi2=float(value))
        tasks = (1, 2)
    elif family == "gamma":
        arch = build_arch(profile)
        cfg = base_config(profile, seed, gamma=float(value))
        tasks = (1, 2)
    elif family == "ext_current":
        arch = build_arch(profile)
        cfg = base_config(profile, seed, i_ext2=float(value),
                          control_mode=ControlMode.EXT_CURRENT)
        tasks = (1, 2)
    else:
        raise ConfigError(f"unknown experiment family {family!r}")
    return build_mtsnn(arch, seed=seed, init_gain=dict(profile.init_gain)), cfg, tasks


def run_case(profile: Profile, family: str, value, seed: int,
             train_ds: Dataset, test_ds: Dataset, out_dir=None,
             log=None) -> tuple[ResultRow, list[RunMetrics], NetworkState]:
    """Train one case and evaluate both tasks on the test split."""
    net, cfg, tasks = _case_setup(profile, family, value, seed)
    label = _case_label(family, value, seed)
    case_dir = None if out_dir is None else Path(out_dir) / "runs" / label
    case_log = None if log is None else (lambda msg: log(f"[{label}] {msg}"))
    t0 = time.perf_counter()
    _, metrics = train(net, train_ds, test_ds, cfg, out_dir=case_dir, log=case_log)
    wall = time.perf_counter() - t0
    accs = {t: evaluate(net, test_ds, cfg, t)[1] for t in tasks}
    row = ResultRow(
        family=family, value=str(value), seed=seed,
        task1_acc=accs.get(1), task2_acc=accs.get(2),
        phi1=cfg.phi1, phi2=cfg.phi2, gamma=cfg.gamma,
        i_ext2=cfg.i_ext2 if cfg.control_mode is ControlMode.EXT_CURRENT else None,
        epochs=cfg.epochs, t_steps=profile.t_steps, profile=profile.name,
        wall_s=wall,
    )
    if out_dir is not None:
        write_curve_svg(Path(out_dir) / "curves" / f"{label}.svg", metrics,
                        title=label)
    return row, metrics, net


def default_values(family: str):
    return {
        "base": BASE_VALUES,
        "threshold": THRESHOLD_VALUES,
        "gamma": GAMMA_VALUES,
        "ext_current": EXT_CURRENT_VALUES,
    }[family]


def _case_worker(args):
    root, profile, family, value, seed, out_dir = args
    train_ds, test_ds = load_profile_data(root, profile)
    row, _, _ = run_case(profile, family, value, seed, train_ds, test_ds,
                         out_dir=out_dir)
    return row


def run_family(root, profile: Profile, family: str, values=None, seeds=None,
               out_dir=None, jobs: int = 1, log=None) -> list[ResultRow]:
    """All (value, seed) cases of one family, in deterministic order."""
    values = default_values(family) if values is None else values
    seeds = profile.seeds if seeds is None else seeds
    cases = [(family, v, s) for v in values for s in seeds]
    if jobs > 1:
        specs = [(root, profile, f, v, s, out_dir) for f, v, s in cases]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_case_worker, specs))
    train_ds, test_ds = load_profile_data(root, profile)
    rows = []
    for f, v, s in cases:
        row, _, _ = run_case(profile, f, v, s, train_ds, test_ds,
                             out_dir=out_dir, log=log)
        if log is not None:
            log(f"[{_case_label(f, v, s)}] done: "
                f"task1 {_fmt_acc(row.task1_acc)} task2 {_fmt_acc(row.task2_acc)} "
                f"({row.wall_s:.0f}s)")
        rows.append(row)
    return rows


def _fmt_acc(a: float | None) -> str:
    return "-" if a is None else f"{a:.3f}"


def write_results_csv(path, rows: list[ResultRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULTS_COLUMNS)
        for r in rows:
            w.writerow([
                r.family, r.value, r.seed,
                "" if r.task1_acc is None else repr(float(r.task1_acc)),
                "" if r.task2_acc is None else repr(float(r.task2_acc)),
                repr(float(r.phi1)), repr(float(r.phi2)), repr(float(r.gamma)),
                "" if r.i_ext2 is None else repr(float(r.i_ext2)),
                r.epochs, r.t_steps, r.profile, f"{r.wall_s:.3f}",
            ])


def read_results_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(ResultRow(
                family=rec["family"], value=rec["value"], seed=int(rec["seed"]),
                task1_acc=float(rec["task1_acc"]) if rec["task1_acc"] else None,
                task2_acc=float(rec["task2_acc"]) if rec["task2_acc"] else None,
                phi1=float(rec["phi1"]), phi2=float(rec["phi2"]),
                gamma=float(rec["gamma"]),
                i_ext2=float(rec["i_ext2"]) if rec["i_ext2"] else None,
                epochs=int(rec["epochs"]), t_steps=int(rec["t_steps"]),
                profile=rec["profile"], wall_s=float(rec["wall_s"]),
            ))
    return rows


def summarize(rows: list[ResultRow]) -> dict:
    """(family, value) -> (mean task1, mean task2, n seeds); None if absent."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.family, r.value), []).append(r)
    out = {}
    for key, grp in groups.items():
        a1 = [r.task1_acc for r in grp if r.task1_acc is not None]
        a2 = [r.task2_acc for r in grp if r.task2_acc is not None]
        out[key] = (
            sum(a1) / len(a1) if a1 else None,
            sum(a2) / len(a2) if a2 else None,
            len(grp),
        )
    return out


def emit_table(rows: list[ResultRow], fmt: str = "markdown") -> str:
    """Seed-averaged accuracy table, percentages to two decimals."""
    if fmt not in ("markdown", "csv"):
        raise ConfigError(f"unknown table format {fmt!r}")
    summary = summarize(rows)
    order = []
    for r in rows:
        if (r.family, r.value) not in order:
            order.append((r.family, r.value))
    pct = lambda a: "-" if a is None else f"{100.0 * a:.2f}"
    lines = []
    if fmt == "markdown":
        lines.append("| family | value | task1 % | task2 % | seeds |")
        lines.append("|---|---|---|---|---|")
        for key in order:
            a1, a2, n = summary[key]
            lines.append(f"| {key[0]} | {key[1]} | {pct(a1)} | {pct(a2)} | {n} |")
    else:
        lines.append("family,value,task1_pct,task2_pct,seeds")
        for key in order:
            a1, a2, n = summary[key]
            lines.append(f"{key[0]},{key[1]},{pct(a1)},{pct(a2)},{n}")
    return "\n".join(lines) + "\n"


# Accuracies reported for the full-scale configuration (percent / 100).
# Desk runs are compared against these trends, not these magnitudes.
REFERENCE_FULL_SCALE = [
    ("base", "task1", 0.9885, None),
    ("base", "task2", None, 1.0000),
    ("threshold", "1.5", 0.9373, 0.9800),
    ("threshold", "2", 0.9540, 0.9831),
    ("threshold", "3", 0.9660, 0.9890),
    ("threshold", "5", 0.9786, 0.9919),
    ("threshold", "10", 0.9799, 0.9913),
    ("gamma", "0.1", 0.9797, 1.0000),
    ("gamma", "0.2", 0.9772, 1.0000),
    ("gamma", "0.3", 0.9759, 1.0000),
    ("gamma", "0.5", 0.9769, 1.0000),
    ("ext_current", "0.05", 0.9563, 0.9806),
    ("ext_current", "0.1", 0.9605, 0.9786),
    ("ext_current", "0.5", 0.9607, 0.9766),
    ("ext_current", "1", 0.9578, 0.9762),
    ("ext_current", "5", 0.9220, 0.9795),
]


def write_reference_csv(path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["family", "value", "task1_acc", "task2_acc", "profile"])
        for family, value, a1, a2 in REFERENCE_FULL_SCALE:
            w.writerow([family, value,
                        "" if a1 is None else repr(a1),
                        "" if a2 is None else repr(a2), "full"])


def write_curve_svg(path, metrics: list[RunMetrics], title: str = "") -> None:
    """Test-accuracy learning curves as a small standalone SVG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    width, height = 480, 300
    left, right, top, bottom = 45, 15, 25, 35
    split = "test" if any(r.split == "test" for r in metrics) else "train"
    series: dict[int, list[tuple[int, float]]] = {}
    for r in metrics:
        if r.split == split:
            series.setdefault(r.task, []).append((r.epoch, r.accuracy))
    max_epoch = max((e for pts in series.values() for e, _ in pts), default=1)

    def sx(epoch):
        frac = (epoch - 1) / max(max_epoch - 1, 1)
        return left + frac * (width - left - right)

    def sy(acc):
        return top + (1.0 - acc) * (height - top - bottom)

    colors = {1: "#1f77b4", 2: "#d62728"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="15" text-anchor="middle" '
        f'font-size="12">{title} ({split} accuracy)</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{width - right}" '
                     f'y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="10">{frac:g}</text>')
    for task, pts in sorted(series.items()):
        pts.sort()
        coords = " ".join(f"{sx(e):.1f},{sy(a):.1f}" for e, a in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{colors.get(task, "#555")}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - right - 5}" '
                     f'y="{sy(pts[-1][1]) - 6:.1f}" text-anchor="end" '
                     f'font-size="10" fill="{colors.get(task, "#555")}">'
                     f'task {task}</text>')
    parts.append(f'<text x="{(left + width - right) / 2:.0f}" y="{height - 8}" '
                 f'text-anchor="middle" font-size="10">epoch (1..{max_epoch})</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
