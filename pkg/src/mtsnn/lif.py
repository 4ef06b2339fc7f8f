"""Discrete-time leaky integrate-and-fire dynamics for one layer.

State advances one step per call through the pair of exponential-decay
recursions

    I[n+1] = beta * I[n] + ff_drive[n] + rec_drive[n] + i_ext
    U[n+1] = alpha * U[n] + I[n] - reset * S[n]
    S[n+1] = 1  if U[n+1] >= threshold  else 0

with alpha = exp(-dt/tau_mem) and beta = exp(-dt/tau_syn).  The membrane
consumes the *pre-update* current, so drive injected at step n first moves
the membrane at step n+2.  A spike at equality (U == threshold) is emitted.

The weighted sums feeding ``ff_drive``/``rec_drive`` are computed by the
network layer on top of this module; everything here is per-neuron
arithmetic, vectorized over an arbitrary leading batch shape.

All functions are pure: the input ``LayerState`` is never mutated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError


class ResetMode(enum.Enum):
    """What is subtracted from the membrane after a spike.

    SUBTRACT_SPIKE removes exactly 1 per spike (the recursion as written
    above); SUBTRACT_THRESHOLD removes the current firing threshold, which
    keeps the residual potential small when the threshold is large.
    """

    SUBTRACT_SPIKE = "subtract_spike"
    SUBTRACT_THRESHOLD = "subtract_threshold"


@dataclass(frozen=True)
class NeuronConfig:
    """Scalar parameters of one LIF population.

    tau_mem/tau_syn share the unit of dt; threshold and i_ext are in
    membrane-potential / current units of the recursion itself.
    """

    tau_mem: float = 10.0
    tau_syn: float = 5.0
    dt: float = 1.0
    threshold: float = 1.25
    i_ext: float = 0.0
    reset_mode: ResetMode = ResetMode.SUBTRACT_SPIKE

    def __post_init__(self):
        if not (self.dt > 0):
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if not (self.tau_mem > 0):
            raise ConfigError(f"tau_mem must be > 0, got {self.tau_mem}")
        if not (self.tau_syn > 0):
            raise ConfigError(f"tau_syn must be > 0, got {self.tau_syn}")
        if not (self.threshold > 0):
            raise ConfigError(f"threshold must be > 0, got {self.threshold}")

    @property
    def alpha(self) -> float:
        """Membrane decay factor exp(-dt/tau_mem), strictly in (0, 1)."""
        return math.exp(-self.dt / self.tau_mem)

    @property
    def beta(self) -> float:
        """Synaptic-current decay factor exp(-dt/tau_syn), strictly in (0, 1)."""
        return math.exp(-self.dt / self.tau_syn)

    @property
    def reset_magnitude(self) -> float:
        if self.reset_mode is ResetMode.SUBTRACT_THRESHOLD:
            return self.threshold
        return 1.0

    def with_threshold(self, phi: float) -> "NeuronConfig":
        return set_threshold(self, phi)

    def with_i_ext(self, i_ext: float) -> "NeuronConfig":
        return replace(self, i_ext=float(i_ext))


def decay_constants(cfg: NeuronConfig) -> tuple[float, float]:
    """Return (alpha, beta) for a validated config."""
    return cfg.alpha, cfg.beta


def set_threshold(cfg: NeuronConfig, phi: float) -> NeuronConfig:
    """New config identical to cfg but with firing threshold phi.

    The threshold is the runtime control knob used to switch a trained
    network between tasks, so this is deliberately the only "setter".
    """
    if not (phi > 0):
        raise ConfigError(f"threshold must be > 0, got {phi}")
    return replace(cfg, threshold=float(phi))


@dataclass
class LayerState:
    """Per-neuron state (membrane potential, synaptic current, last spikes).

    Arrays share one shape whose last axis is the neuron index; leading
    axes (if any) are batch dimensions.  ``s`` holds float 0/1 values.
    """

    u: np.ndarray
    i: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        if not (self.u.shape == self.i.shape == self.s.shape):
            raise ShapeError(
                f"state arrays disagree: u{self.u.shape} i{self.i.shape} s{self.s.shape}"
            )

    @classmethod
    def zeros(cls, n: int, batch: int | None = None, dtype=np.float64) -> "LayerState":
        shape = (n,) if batch is None else (batch, n)
        return cls(
            u=np.zeros(shape, dtype=dtype),
            i=np.zeros(shape, dtype=dtype),
            s=np.zeros(shape, dtype=dtype),
        )

    @property
    def size(self) -> int:
        return self.u.shape[-1]


def _check_drive(state: LayerState, drive: np.ndarray, name: str) -> np.ndarray:
    drive = np.asarray(drive, dtype=state.u.dtype)
    if drive.shape != state.u.shape:
        raise ShapeError(f"{name} shape {drive.shape} != state shape {state.u.shape}")
    return drive


def step_current(
    state: LayerState,
    cfg: NeuronConfig,
    ff_drive: np.ndarray,
    rec_drive: np.ndarray | None = None,
) -> np.ndarray:
    """Advance the synaptic current one step: beta*I + drives + i_ext.

    ff_drive and rec_drive are the already-summed weighted spike inputs
    (feed-forward and recurrent).  Pure function; returns I[n+1].
    """
    ff = _check_drive(state, ff_drive, "ff_drive")
    i_next = cfg.beta * state.i + ff
    if rec_drive is not None:
        i_next = i_next + _check_drive(state, rec_drive, "rec_drive")
    return i_next + cfg.i_ext


def step_membrane(
    state: LayerState, cfg: NeuronConfig, i_next: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the membrane one step and threshold it.

    U[n+1] = alpha*U[n] + I[n] - reset*S[n] uses the state's current
    *before* the update that produced ``i_next``; ``i_next`` is validated
    here and becomes the successor state's current (see ``step``).
    Returns (u_next, s_next) with s_next = 1 where u_next >= threshold.
    """
    _check_drive(state, i_next, "i_next")
    u_next = cfg.alpha * state.u + state.i - cfg.reset_magnitude * state.s
    s_next = (u_next >= cfg.threshold).astype(state.u.dtype)
    return u_next, s_next


def step(
    state: LayerState,
    cfg: NeuronConfig,
    ff_drive: np.ndarray,
    rec_drive: np.ndarray | None = None,
    spike_fn=None,
) -> LayerState:
    """One full state transition for the layer.

    ``spike_fn(u_next, cfg)``, when given, replaces hard thresholding; the
    gradient checker uses this to run the smoothed relaxation of the spike
    function through identical dynamics.
    """
    i_next = step_current(state, cfg, ff_drive, rec_drive)
    if spike_fn is None:
        u_next, s_next = step_membrane(state, cfg, i_next)
    else:
        _check_drive(state, i_next, "i_next")
        u_next = cfg.alpha * state.u + state.i - cfg.reset_magnitude * state.s
        s_next = spike_fn(u_next, cfg)
    return LayerState(u=u_next, i=i_next, s=s_next)
