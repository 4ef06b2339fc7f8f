"""Three-block spiking network: feature extractor feeding two classifier heads.

The feature block transforms the input spike train into a latent spike
train; the label block maps it to the concatenated per-task label outputs
and the task block to one output per task.  All connections are
feed-forward between blocks, so the whole T-step run can be scheduled
layer by layer: a layer's entire drive series is one matrix product of
its producer's spike history, after which its own time recursion is
elementwise.  That keeps the large input-layer products in single GEMMs.

Task switching happens at run time via a per-forward threshold override
(or an external-current override) applied to the feature and label blocks
only; the task block always runs at its stored base configuration.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import lif
from .errors import ConfigError, ShapeError, TopologyError
from .lif import LayerState, NeuronConfig


@dataclass
class LayerSpec:
    """One dense spiking layer: sizes, neuron parameters, weights.

    ``weights`` (out_size x in_size) and ``recurrent`` (out_size square)
    are filled in by build_mtsnn; ``use_recurrent`` asks for a recurrent
    matrix at initialization time.
    """

    in_size: int
    out_size: int
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    weights: np.ndarray | None = None
    recurrent: np.ndarray | None = None
    use_recurrent: bool = False

    def validate(self):
        if self.in_size < 1 or self.out_size < 1:
            raise TopologyError(f"layer sizes must be >= 1, got {self.in_size}x{self.out_size}")
        if self.weights is not None and self.weights.shape != (self.out_size, self.in_size):
            raise TopologyError(
                f"weight shape {self.weights.shape} != ({self.out_size}, {self.in_size})"
            )
        if self.recurrent is not None and self.recurrent.shape != (self.out_size, self.out_size):
            raise TopologyError(
                f"recurrent shape {self.recurrent.shape} != square of side {self.out_size}"
            )


@dataclass
class NetworkSpec:
    """Topology of the three blocks plus the label-segment split."""

    feature_block: list[LayerSpec]
    label_block: list[LayerSpec]
    task_block: list[LayerSpec]
    num_labels_task1: int = 10
    num_labels_task2: int = 2

    def validate(self):
        if not self.feature_block or not self.label_block:
            raise TopologyError("feature and label blocks must be non-empty")
        for name, block in self.blocks().items():
            for spec in block:
                spec.validate()
            for a, b in zip(block, block[1:]):
                if a.out_size != b.in_size:
                    raise TopologyError(
                        f"{name} block: layer output {a.out_size} feeds layer input {b.in_size}"
                    )
        feat_out = self.feature_block[-1].out_size
        for name in ("label_block", "task_block"):
            block = getattr(self, name)
            if block and block[0].in_size != feat_out:
                raise TopologyError(
                    f"{name} input {block[0].in_size} != feature output {feat_out}"
                )
        n_out = self.label_block[-1].out_size
        if n_out != self.num_labels_task1 + self.num_labels_task2:
            raise TopologyError(
                f"label output {n_out} != task segments "
                f"{self.num_labels_task1}+{self.num_labels_task2}"
            )
        if self.task_block and self.task_block[-1].out_size != 2:
            raise TopologyError(
                f"task block output {self.task_block[-1].out_size} != 2 tasks"
            )

    def blocks(self) -> dict[str, list[LayerSpec]]:
        return {
            "feature_block": self.feature_block,
            "label_block": self.label_block,
            "task_block": self.task_block,
        }

    @property
    def input_size(self) -> int:
        return self.feature_block[0].in_size


# Block iteration order everywhere weights are walked (init, gradients,
# optimizer slots, checkpoints).
BLOCK_ORDER = ("feature_block", "label_block", "task_block")


@dataclass
class NetworkState:
    """A built network: spec with materialized weights, plus provenance."""

    spec: NetworkSpec
    seed: int
    init_gain: float | dict

    @property
    def feature(self) -> list[LayerSpec]:
        return self.spec.feature_block

    @property
    def label(self) -> list[LayerSpec]:
        return self.spec.label_block

    @property
    def task(self) -> list[LayerSpec]:
        return self.spec.task_block

    def layers_flat(self) -> list[tuple[str, int, LayerSpec]]:
        out = []
        for name in BLOCK_ORDER:
            for k, spec in enumerate(getattr(self.spec, name)):
                out.append((name, k, spec))
        return out


DEFAULT_INIT_GAIN = 3.0


def _block_gain(init_gain, block_name: str) -> float:
    if isinstance(init_gain, dict):
        short = block_name.removesuffix("_block")
        if short not in init_gain:
            raise ConfigError(f"init_gain mapping lacks a '{short}' entry")
        return float(init_gain[short])
    return float(init_gain)


def build_mtsnn(arch: NetworkSpec, seed: int, init_gain=DEFAULT_INIT_GAIN) -> NetworkState:
    """Initialize all weights of the architecture from one integer seed.

    Weights are uniform in [-k, k] with k = gain / sqrt(fan_in).  The gain
    is a scalar, or a {"feature": g, "label": g, "task": g} mapping; the
    classifier heads want a markedly cooler start than the feature block,
    otherwise the low-rate targets drag every head row into silence before
    the class structure can form.  Same seed, same arch -> bit-identical
    weights (draw order is the fixed block order).
    """
    arch.validate()
    spec = copy.deepcopy(arch)
    rng = np.random.default_rng(seed)
    for name in BLOCK_ORDER:
        gain = _block_gain(init_gain, name)
        for layer in getattr(spec, name):
            k = gain / np.sqrt(layer.in_size)
            layer.weights = rng.uniform(-k, k, size=(layer.out_size, layer.in_size))
            if layer.use_recurrent:
                kr = gain / np.sqrt(layer.out_size)
                layer.recurrent = rng.uniform(-kr, kr, size=(layer.out_size, layer.out_size))
    if not isinstance(init_gain, dict):
        init_gain = float(init_gain)
    return NetworkState(spec=spec, seed=int(seed), init_gain=init_gain)


@dataclass
class LayerTrace:
    """Per-step records of one layer over a forward run.

    Arrays are (T+1, batch, n); index n along the first axis is the state
    at step n, with row 0 the all-zero initial state.  ``cfg`` is the
    effective neuron config the layer ran with (after any override).
    """

    block: str
    index: int
    cfg: NeuronConfig
    u: np.ndarray
    i: np.ndarray
    s: np.ndarray


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward run."""

    t_steps: int
    inputs: np.ndarray  # (T, batch, n_in) float 0/1
    feature: list[LayerTrace]
    label: list[LayerTrace]
    task: list[LayerTrace] | None

    @property
    def batch(self) -> int:
        return self.inputs.shape[1]

    @property
    def label_output(self) -> np.ndarray:
        """Output spike train of the label head, steps 1..T: (T, batch, n)."""
        return self.label[-1].s[1:]

    @property
    def task_output(self) -> np.ndarray | None:
        return None if self.task is None else self.task[-1].s[1:]


def as_batch(input_spikes) -> np.ndarray:
    """Normalize input to (T, batch, features) float64.

    Accepts a (T, batch, features) array, a single-sample (features, T)
    array, or anything with a ``.data`` attribute holding (features, T)
    such as a SpikeTensor.
    """
    data = getattr(input_spikes, "data", input_spikes)
    arr = np.asarray(data)
    if arr.ndim == 2:  # (features, T) single sample
        arr = np.ascontiguousarray(arr.T[:, None, :], dtype=np.float64)
    elif arr.ndim == 3:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
    else:
        raise ShapeError(f"input must be 2-D or 3-D, got shape {arr.shape}")
    return arr


def _run_block_layer(layer: LayerSpec, cfg: NeuronConfig, src: np.ndarray,
                     t_steps: int, spike_fn=None) -> LayerTrace:
    """Run one layer for t_steps given its producer's spike history.

    src is (>=T, batch, in_size); only steps 0..T-1 drive this layer.  The
    feed-forward drive for all steps is one GEMM; the remaining recursion
    is elementwise per step (see the lif module).
    """
    T = t_steps
    batch = src.shape[1]
    n = layer.out_size
    if src.shape[2] != layer.in_size:
        raise ShapeError(f"drive width {src.shape[2]} != layer input {layer.in_size}")
    flat = src[:T].reshape(T * batch, layer.in_size)
    drive = (flat @ layer.weights.T).reshape(T, batch, n)

    u = np.zeros((T + 1, batch, n))
    i = np.zeros((T + 1, batch, n))
    s = np.zeros((T + 1, batch, n))
    state = LayerState.zeros(n, batch=batch)
    v = layer.recurrent
    for t in range(T):
        rec = state.s @ v.T if v is not None else None
        state = lif.step(state, cfg, drive[t], rec, spike_fn=spike_fn)
        u[t + 1] = state.u
        i[t + 1] = state.i
        s[t + 1] = state.s
    return LayerTrace(block="", index=0, cfg=cfg, u=u, i=i, s=s)


def _effective_cfg(cfg: NeuronConfig, phi_override, i_ext_override) -> NeuronConfig:
    if phi_override is not None:
        cfg = lif.set_threshold(cfg, phi_override)
    if i_ext_override is not None:
        cfg = cfg.with_i_ext(i_ext_override)
    return cfg


def forward(
    net: NetworkState,
    input_spikes,
    phi_override: float | None = None,
    use_task_block: bool = False,
    i_ext_override: float | None = None,
    spike_fn=None,
) -> ForwardTrace:
    """Run the full network for T steps and record every layer's history.

    phi_override / i_ext_override retarget the feature and label blocks
    only (the run-time task-selection signal); the task block always keeps
    its stored threshold and external current, and is evaluated only when
    use_task_block is set.  The stored network configs are never mutated.
    """
    if use_task_block and not net.task:
        raise TopologyError("use_task_block requires a non-empty task block")
    x = as_batch(input_spikes)
    T = x.shape[0]
    if T < 1:
        raise ShapeError("need at least one time step")
    if x.shape[2] != net.spec.input_size:
        raise ShapeError(
            f"input features {x.shape[2]} != network input {net.spec.input_size}"
        )

    def run_block(name: str, layers: list[LayerSpec], src: np.ndarray, override: bool):
        traces = []
        for k, layer in enumerate(layers):
            cfg = layer.neuron
            if override:
                cfg = _effective_cfg(cfg, phi_override, i_ext_override)
            tr = _run_block_layer(layer, cfg, src, T, spike_fn=spike_fn)
            tr.block, tr.index = name, k
            traces.append(tr)
            src = tr.s
        return traces

    feature = run_block("feature", net.feature, x, override=True)
    latent = feature[-1].s
    label = run_block("label", net.label, latent, override=True)
    task = run_block("task", net.task, latent, override=False) if use_task_block else None
    return ForwardTrace(t_steps=T, inputs=x, feature=feature, label=label, task=task)


def forward_with_ext_current(
    net: NetworkState,
    input_spikes,
    i_ext_override: float,
    use_task_block: bool = False,
    spike_fn=None,
) -> ForwardTrace:
    """Forward pass with the external-current control signal.

    Thresholds stay at their stored base values; the override current is
    injected additively into every feature- and label-block neuron at
    every step.  Zero override is exactly the plain forward pass.
    """
    return forward(
        net,
        input_spikes,
        phi_override=None,
        use_task_block=use_task_block,
        i_ext_override=i_ext_override,
        spike_fn=spike_fn,
    )
