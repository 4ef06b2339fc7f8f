"""Single-tasking training of the two classification tasks.

Each batch trains exactly one task, drawn at random.  The active task
sets the run-time control signal (firing threshold, or injected current
in the ext_current mode), and only its own label segment carries the
"true" firing-rate target; every other label neuron is pushed to the low
rate.  The task head, when enabled, is trained to indicate the active
task and its loss mixes with the label loss as

    L = (1 - gamma) * L_label + gamma * L_task

Losses are squared differences between output spike counts and target
counts (rate coding); classification reads the argmax spike count inside
the active task's label segment.  Evaluation always runs with the task
head disabled, the control signal set for the task under test.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, derive_labels
from .errors import ConfigError
from .grad import SurrogateKind, SurrogateSpec, backward, init_optimizer, optimizer_step
from .graph import ForwardTrace, NetworkState, forward


class ControlMode(enum.Enum):
    THRESHOLD = "threshold"
    EXT_CURRENT = "ext_current"


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 2e-3
    lr_decay: float = 1.0  # per-epoch multiplier once past lr_decay_after
    lr_decay_after: int = 0  # epochs that run at the full rate first
    optimizer: str = "adam"
    gamma: float = 0.1
    task_probability: float = 0.5  # chance that a batch trains task 1
    phi1: float = 1.25
    phi2: float = 5.0
    i_ext2: float = 0.1
    control_mode: ControlMode = ControlMode.THRESHOLD
    surrogate_kind: SurrogateKind = SurrogateKind.EXP_DECAY
    surrogate_scale: float = 1.0
    reset_grad: bool = True
    true_rate: float = 0.5
    false_rate: float = 0.05
    use_task_block: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.lr_decay_after < 0:
            raise ConfigError("lr_decay_after must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.task_probability <= 1.0:
            raise ConfigError("task_probability must be in [0, 1]")
        if self.phi1 <= 0 or self.phi2 <= 0:
            raise ConfigError("thresholds must be > 0")
        if not 0.0 <= self.false_rate <= self.true_rate <= 1.0:
            raise ConfigError("need 0 <= false_rate <= true_rate <= 1")
        if isinstance(self.control_mode, str):
            self.control_mode = ControlMode(self.control_mode)
        if isinstance(self.surrogate_kind, str):
            self.surrogate_kind = SurrogateKind(self.surrogate_kind)

    @property
    def surrogate(self) -> SurrogateSpec:
        return SurrogateSpec(self.surrogate_kind, self.surrogate_scale)


def select_task(rng: np.random.Generator, p_task1: float) -> int:
    return 1 if rng.random() < p_task1 else 2


def task_control(config: TrainConfig, task: int) -> tuple[float | None, float | None]:
    """(phi_override, i_ext_override) steering the network toward a task.

    Current control keeps every threshold pinned at phi1; only the injected
    current distinguishes the tasks.
    """
    if task not in (1, 2):
        raise ConfigError(f"task must be 1 or 2, got {task}")
    if config.control_mode is ControlMode.THRESHOLD:
        return (config.phi1 if task == 1 else config.phi2), None
    return config.phi1, (0.0 if task == 1 else config.i_ext2)


def segment_slice(net: NetworkState, task: int) -> slice:
    n1 = net.spec.num_labels_task1
    n2 = net.spec.num_labels_task2
    seg = slice(0, n1) if task == 1 else slice(n1, n1 + n2)
    if seg.stop - seg.start == 0:
        raise ConfigError(f"network has no label segment for task {task}")
    return seg


def make_targets(task: int, digits: np.ndarray, n1: int, n2: int, t_steps: int,
                 true_rate: float, false_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample target spike counts: (batch, n1+n2) labels, (batch, 2) task.

    Only the active task's segment codes the class (one-hot at the high
    rate); everything else, including the whole inactive segment, sits at
    the low rate.  The task target is one-hot over the two tasks.
    """
    digits = np.asarray(digits, dtype=np.int64)
    batch = digits.shape[0]
    hi, lo = true_rate * t_steps, false_rate * t_steps
    labels = np.full((batch, n1 + n2), lo)
    rows = np.arange(batch)
    if task == 1:
        if n1 == 0:
            raise ConfigError("task 1 has no label segment")
        if digits.max() >= n1:
            raise ConfigError(f"digit {digits.max()} outside the {n1}-way segment")
        labels[rows, digits] = hi
    elif task == 2:
        if n2 == 0:
            raise ConfigError("task 2 has no label segment")
        labels[rows, n1 + (digits % 2)] = hi
    else:
        raise ConfigError(f"task must be 1 or 2, got {task}")
    task_target = np.full((batch, 2), lo)
    task_target[:, task - 1] = hi
    return labels, task_target


def rate_loss(output: np.ndarray, target_counts: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared count error, averaged over the batch and scaled by 1/T.

    output is (T, batch, n) spikes; returns the scalar loss and its
    gradient with respect to every output entry.
    """
    t_steps, batch = output.shape[0], output.shape[1]
    diff = output.sum(axis=0) - target_counts
    loss = 0.5 * float(np.sum(diff * diff)) / (t_steps * batch)
    grads = np.broadcast_to(diff / (t_steps * batch), output.shape).copy()
    return loss, grads


def total_loss(trace: ForwardTrace, label_targets: np.ndarray,
               task_targets: np.ndarray, gamma: float,
               use_task_block: bool) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Mixed objective and the per-head upstream gradients, mixing folded in."""
    l_y, g_y = rate_loss(trace.label_output, label_targets)
    if not use_task_block:
        return l_y, g_y, None
    l_t, g_t = rate_loss(trace.task_output, task_targets)
    total = (1.0 - gamma) * l_y + gamma * l_t
    return total, (1.0 - gamma) * g_y, gamma * g_t


def predict(trace: ForwardTrace, net: NetworkState, task: int) -> np.ndarray:
    """Argmax spike count inside the active segment (ties break low)."""
    seg = segment_slice(net, task)
    counts = trace.label_output.sum(axis=0)
    return np.argmax(counts[:, seg], axis=1)


def task_truth(task: int, digits: np.ndarray) -> np.ndarray:
    pairs = np.asarray([derive_labels(int(d)) for d in digits], dtype=np.int64)
    return pairs[:, 0] if task == 1 else pairs[:, 1]


@dataclass
class RunMetrics:
    epoch: int
    split: str
    task: int
    loss: float
    accuracy: float
    phi1: float
    phi2: float
    gamma: float
    control_mode: str
    seed: int


METRICS_COLUMNS = ["epoch", "split", "task", "loss", "accuracy",
                   "phi1", "phi2", "gamma", "control_mode", "seed"]


def write_metrics_csv(path, rows: list[RunMetrics]) -> None:
    """Stable text form: floats via repr, so identical runs give identical bytes."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([
                r.epoch, r.split, r.task,
                repr(float(r.loss)), repr(float(r.accuracy)),
                repr(float(r.phi1)), repr(float(r.phi2)), repr(float(r.gamma)),
                r.control_mode, r.seed,
            ])


def _metrics_row(config: TrainConfig, epoch: int, split: str, task: int,
                 loss: float, acc: float) -> RunMetrics:
    return RunMetrics(
        epoch=epoch, split=split, task=task, loss=loss, accuracy=acc,
        phi1=config.phi1, phi2=config.phi2, gamma=config.gamma,
        control_mode=config.control_mode.value, seed=config.seed,
    )


def _tasks_present(net: NetworkState) -> list[int]:
    out = []
    if net.spec.num_labels_task1 > 0:
        out.append(1)
    if net.spec.num_labels_task2 > 0:
        out.append(2)
    return out


def evaluate(net: NetworkState, ds: Dataset, config: TrainConfig,
             task: int) -> tuple[float, float]:
    """Mean rate loss and accuracy over a split, task head off."""
    phi_ov, i_ov = task_control(config, task)
    n1, n2 = net.spec.num_labels_task1, net.spec.num_labels_task2
    total, correct, loss_sum = 0, 0, 0.0
    for start in range(0, len(ds), config.batch_size):
        idx = range(start, min(start + config.batch_size, len(ds)))
        x, digits = ds.batch(idx)
        tr = forward(net, x, phi_override=phi_ov, use_task_block=False,
                     i_ext_override=i_ov)
        labels, _ = make_targets(task, digits, n1, n2, ds.t_steps,
                                 config.true_rate, config.false_rate)
        loss, _ = rate_loss(tr.label_output, labels)
        loss_sum += loss * len(digits)
        correct += int(np.sum(predict(tr, net, task) == task_truth(task, digits)))
        total += len(digits)
    return loss_sum / total, correct / total


def train(net: NetworkState, train_ds: Dataset, test_ds: Dataset | None,
          config: TrainConfig, out_dir=None,
          log=None) -> tuple[NetworkState, list[RunMetrics]]:
    """Train in place; returns the network and the per-epoch metric rows.

    All randomness (shuffling, task draws) derives from config.seed, so a
    repeated call with equal inputs reproduces weights and metrics exactly.
    When out_dir is given, metrics.csv and final.ckpt are written there.
    """
    tasks = _tasks_present(net)
    if config.use_task_block and not net.task:
        raise ConfigError("config enables the task head but the network has none")
    root = np.random.SeedSequence(config.seed)
    shuffle_rng, task_rng = (np.random.default_rng(s) for s in root.spawn(2))
    opt = init_optimizer(net, kind=config.optimizer, lr=config.lr)
    n1, n2 = net.spec.num_labels_task1, net.spec.num_labels_task2
    rows: list[RunMetrics] = []

    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr * config.lr_decay ** max(0, epoch - 1 - config.lr_decay_after)
        order = shuffle_rng.permutation(len(train_ds))
        sums = {t: [0.0, 0, 0] for t in tasks}  # loss*n, correct, n
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            task = select_task(task_rng, config.task_probability) if len(tasks) == 2 else tasks[0]
            phi_ov, i_ov = task_control(config, task)
            x, digits = train_ds.batch(idx)
            tr = forward(net, x, phi_override=phi_ov,
                         use_task_block=config.use_task_block,
                         i_ext_override=i_ov)
            labels, task_t = make_targets(task, digits, n1, n2, train_ds.t_steps,
                                          config.true_rate, config.false_rate)
            loss, g_y, g_t = total_loss(tr, labels, task_t, config.gamma,
                                        config.use_task_block)
            gs = backward(tr, net, g_y, g_t, surrogate=config.surrogate,
                          reset_grad=config.reset_grad)
            optimizer_step(net, opt, gs)
            hits = int(np.sum(predict(tr, net, task) == task_truth(task, digits)))
            agg = sums[task]
            agg[0] += loss * len(digits)
            agg[1] += hits
            agg[2] += len(digits)

        for task in tasks:
            loss_n, hit, n = sums[task]
            if n:
                rows.append(_metrics_row(config, epoch, "train", task,
                                         loss_n / n, hit / n))
        if test_ds is not None:
            for task in tasks:
                loss, acc = evaluate(net, test_ds, config, task)
                rows.append(_metrics_row(config, epoch, "test", task, loss, acc))
        if log is not None:
            tail = ", ".join(
                f"{r.split}/{r.task} acc {r.accuracy:.3f}"
                for r in rows if r.epoch == epoch and r.split == "test"
            )
            log(f"epoch {epoch}/{config.epochs} {tail}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "metrics.csv", rows)
        save_checkpoint(out_dir / "final.ckpt", net)
    return net, rows
