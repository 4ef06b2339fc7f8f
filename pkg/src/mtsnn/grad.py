"""Backpropagation through time over the spiking network, with surrogate
spike derivatives, plus the weight-update rules.

The hard threshold has zero derivative almost everywhere, so the backward
pass substitutes a pseudo-derivative sigma'(u - phi) at each spike
decision.  Two shapes are provided:

    exp_decay:     sigma'(x) = (1/a) * exp(-|x|/a)
    fast_sigmoid:  sigma'(x) = a / (a + |x|)**2

Both peak at 1/a on the threshold and integrate to a soft step G with
G(-inf)=0, G(0)=1, G(+inf)=2.  Running the forward pass with that soft
step as the spike function (make_smoothed_spike_fn) turns this module's
backward pass into the exact gradient of the smoothed network, which is
what the finite-difference tests check.

Per layer the adjoints run backward in time.  With S[n] = G(U[n] - phi),
U[n+1] = alpha*U[n] + I[n] - r*S[n] and I[n+1] = beta*I[n] + W S_src[n]
+ V S[n] + i_ext, the chain rule gives, for n = T..1,

    lamS[n] = g[n] + lamI[n+1] @ V - r * lamU[n+1]
    lamU[n] = sigma'(U[n] - phi) * lamS[n] + alpha * lamU[n+1]
    lamI[n] = lamU[n+1] + beta * lamI[n+1]

with zero adjoints beyond the horizon, g[n] the sum of the direct loss
derivative and consumer contributions, and the reset term dropped when
the reset path is detached.  Weight gradients and producer contributions
then collapse into single matrix products over the flattened time-batch
axis:

    dW = sum_n lamI[n+1] (x) S_src[n]      g_src[n] = lamI[n+1] @ W
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError, TopologyError
from .graph import BLOCK_ORDER, ForwardTrace, LayerTrace, NetworkState


class SurrogateKind(enum.Enum):
    EXP_DECAY = "exp_decay"
    FAST_SIGMOID = "fast_sigmoid"


@dataclass(frozen=True)
class SurrogateSpec:
    kind: SurrogateKind = SurrogateKind.EXP_DECAY
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0):
            raise ConfigError(f"surrogate scale must be > 0, got {self.scale}")


def surrogate_derivative(x, spec: SurrogateSpec):
    """Pseudo-derivative of the spike nonlinearity at distance x from threshold."""
    a = spec.scale
    ax = np.abs(x)
    if spec.kind is SurrogateKind.EXP_DECAY:
        return np.exp(-ax / a) / a
    return a / (a + ax) ** 2


def smoothed_heaviside(x, spec: SurrogateSpec):
    """Antiderivative of surrogate_derivative: a soft step from 0 to 2 with G(0)=1."""
    a = spec.scale
    x = np.asarray(x, dtype=np.float64)
    neg = x <= 0
    out = np.empty_like(x)
    if spec.kind is SurrogateKind.EXP_DECAY:
        out[neg] = np.exp(x[neg] / a)
        out[~neg] = 2.0 - np.exp(-x[~neg] / a)
    else:
        out[neg] = a / (a - x[neg])
        out[~neg] = 2.0 - a / (a + x[~neg])
    return out


def make_smoothed_spike_fn(spec: SurrogateSpec):
    """Spike function for graph.forward that relaxes the hard threshold.

    The relaxed network is differentiable everywhere and backward() is its
    exact gradient, so central differences on it validate the whole
    backward pass at ordinary floating-point tolerances.
    """
    return lambda u, cfg: smoothed_heaviside(u - cfg.threshold, spec)


@dataclass
class LayerGrad:
    w: np.ndarray
    v: np.ndarray | None = None


@dataclass
class GradientSet:
    feature: list[LayerGrad]
    label: list[LayerGrad]
    task: list[LayerGrad]

    def flat(self) -> list[LayerGrad]:
        return list(self.feature) + list(self.label) + list(self.task)


def _zero_grads(layers) -> list[LayerGrad]:
    return [
        LayerGrad(
            w=np.zeros_like(sp.weights),
            v=None if sp.recurrent is None else np.zeros_like(sp.recurrent),
        )
        for sp in layers
    ]


def _layer_backward(tr: LayerTrace, weights, recurrent, g, src_s, spec, reset_grad,
                    want_input_grad):
    """Adjoint sweep for one layer.  g is (T+1, B, n) upstream dL/dS."""
    T = tr.s.shape[0] - 1
    batch, n = tr.s.shape[1], tr.s.shape[2]
    cfg = tr.cfg
    alpha, beta = cfg.alpha, cfg.beta
    phi, r = cfg.threshold, cfg.reset_magnitude

    lam_i = np.zeros((T + 1, batch, n))
    lam_u_next = np.zeros((batch, n))
    lam_i_next = np.zeros((batch, n))
    for t in range(T, 0, -1):
        lam_s = g[t]
        if recurrent is not None:
            lam_s = lam_s + lam_i_next @ recurrent
        if reset_grad:
            lam_s = lam_s - r * lam_u_next
        lam_i[t] = lam_u_next + beta * lam_i_next
        lam_u_next = surrogate_derivative(tr.u[t] - phi, spec) * lam_s + alpha * lam_u_next
        lam_i_next = lam_i[t]

    flat_lam = lam_i[1:].reshape(T * batch, n)
    dw = flat_lam.T @ src_s[:T].reshape(T * batch, -1)
    dv = flat_lam.T @ tr.s[:T].reshape(T * batch, n) if recurrent is not None else None
    g_src = (flat_lam @ weights).reshape(T, batch, -1) if want_input_grad else None
    return dw, dv, g_src


def backward(
    trace: ForwardTrace,
    net: NetworkState,
    label_grads: np.ndarray,
    task_grads: np.ndarray | None = None,
    surrogate: SurrogateSpec = SurrogateSpec(),
    reset_grad: bool = True,
) -> GradientSet:
    """Full-network BPTT from per-step output-spike gradients.

    label_grads is (T, batch, n_label) aligned with trace.label_output;
    task_grads likewise for the task head or None when the task head
    carries no loss.  Any Eq.-style loss mixing weights must already be
    folded into these arrays by the caller.  Heads are processed first,
    their producer contributions summed into the shared feature block.
    """
    T, batch = trace.t_steps, trace.batch
    n_label = net.label[-1].out_size
    if label_grads.shape != (T, batch, n_label):
        raise ShapeError(
            f"label_grads shape {label_grads.shape} != {(T, batch, n_label)}"
        )
    if task_grads is not None and trace.task is None:
        raise TopologyError("task_grads given but the trace has no task block")
    if task_grads is not None and task_grads.shape != (T, batch, 2):
        raise ShapeError(f"task_grads shape {task_grads.shape} != {(T, batch, 2)}")

    # upstream dL/dS buffers per layer, (T+1, batch, n), step-indexed
    def fresh(traces):
        return [np.zeros_like(tr.s) for tr in traces]

    g_feature = fresh(trace.feature)
    out = GradientSet(
        feature=_zero_grads(net.feature),
        label=_zero_grads(net.label),
        task=_zero_grads(net.task),
    )

    def run_block(traces, layers, grads, g_block, src_below):
        """src_below: spike history feeding the block's first layer."""
        for k in range(len(layers) - 1, -1, -1):
            first = k == 0
            src = src_below if first else traces[k - 1].s
            want = not (first and src_below is trace.inputs)
            dw, dv, g_src = _layer_backward(
                traces[k], layers[k].weights, layers[k].recurrent,
                g_block[k], src, surrogate, reset_grad, want,
            )
            grads[k].w += dw
            if dv is not None:
                grads[k].v += dv
            if g_src is None:
                continue
            # g_src[j] is dL/dS_src[j] for j = 0..T-1; row 0 lands on the
            # constant initial state and is never read by the sweep
            target = g_feature[-1] if first else g_block[k - 1]
            target[:T] += g_src

    latent = trace.feature[-1].s
    g_label = fresh(trace.label)
    g_label[-1][1:] += label_grads
    run_block(trace.label, net.label, out.label, g_label, latent)

    if task_grads is not None:
        g_task = fresh(trace.task)
        g_task[-1][1:] += task_grads
        run_block(trace.task, net.task, out.task, g_task, latent)

    run_block(trace.feature, net.feature, out.feature, g_feature, trace.inputs)
    return out


# --- weight updates -------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    slots: list = field(default_factory=list)  # one dict per parameter array


def init_optimizer(net: NetworkState, kind: str = "adam", lr: float = 2e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> OptimizerState:
    if kind not in ("adam", "sgd"):
        raise ConfigError(f"unknown optimizer {kind!r}")
    if not (lr >= 0):
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    opt = OptimizerState(kind=kind, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    if kind == "adam":
        for _, _, layer in net.layers_flat():
            for arr in (layer.weights, layer.recurrent):
                if arr is not None:
                    opt.slots.append({"m": np.zeros_like(arr), "v": np.zeros_like(arr)})
    return opt


def optimizer_step(net: NetworkState, opt: OptimizerState, grads: GradientSet) -> None:
    """Apply one update in place.  Walk order matches init_optimizer."""
    params = []
    for (_, _, layer), lg in zip(net.layers_flat(), grads.flat()):
        if layer.weights.shape != lg.w.shape:
            raise ShapeError(
                f"gradient shape {lg.w.shape} != weight shape {layer.weights.shape}"
            )
        params.append((layer.weights, lg.w))
        if layer.recurrent is not None:
            if lg.v is None:
                raise ShapeError("recurrent layer got no recurrent gradient")
            params.append((layer.recurrent, lg.v))
    for _, g in params:
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient; lower the learning rate "
                                 "or check the input scaling")

    opt.t += 1
    if opt.kind == "sgd":
        for w, g in params:
            w -= opt.lr * g
        return
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for slot, (w, g) in zip(opt.slots, params):
        slot["m"] *= opt.beta1
        slot["m"] += (1.0 - opt.beta1) * g
        slot["v"] *= opt.beta2
        slot["v"] += (1.0 - opt.beta2) * g * g
        m_hat = slot["m"] / c1
        v_hat = slot["v"] / c2
        w -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def grad_norm(grads: GradientSet) -> float:
    """Euclidean norm over every gradient entry, for logging."""
    total = 0.0
    for lg in grads.flat():
        total += float(np.sum(lg.w * lg.w))
        if lg.v is not None:
            total += float(np.sum(lg.v * lg.v))
    return math.sqrt(total)
