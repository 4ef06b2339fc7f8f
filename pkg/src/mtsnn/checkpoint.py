"""Byte-deterministic checkpoints for network weights.

Layout: 8-byte magic "MTSNNCKP", u32 little-endian version, u32
little-endian JSON header length, the UTF-8 JSON header, then the raw
C-order float64 weight buffers in fixed block order (feature, label,
task; within a layer the feed-forward matrix then the recurrent one if
present).  The header is serialized with sorted keys and fixed
separators, so save(load(p)) reproduces p byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .graph import BLOCK_ORDER, LayerSpec, NetworkSpec, NetworkState
from .lif import NeuronConfig, ResetMode

MAGIC = b"MTSNNCKP"
VERSION = 1
TOOL_VERSION = "0.1.0"


def _layer_header(layer: LayerSpec) -> dict:
    cfg = layer.neuron
    return {
        "in_size": layer.in_size,
        "out_size": layer.out_size,
        "use_recurrent": bool(layer.use_recurrent),
        "tau_mem": cfg.tau_mem,
        "tau_syn": cfg.tau_syn,
        "dt": cfg.dt,
        "threshold": cfg.threshold,
        "i_ext": cfg.i_ext,
        "reset_mode": cfg.reset_mode.value,
    }


def _layer_from_header(h: dict) -> LayerSpec:
    cfg = NeuronConfig(
        tau_mem=h["tau_mem"],
        tau_syn=h["tau_syn"],
        dt=h["dt"],
        threshold=h["threshold"],
        i_ext=h["i_ext"],
        reset_mode=ResetMode(h["reset_mode"]),
    )
    return LayerSpec(
        in_size=int(h["in_size"]),
        out_size=int(h["out_size"]),
        neuron=cfg,
        use_recurrent=bool(h["use_recurrent"]),
    )


def save_checkpoint(path, net: NetworkState) -> None:
    header = {
        "arch": {
            name: [_layer_header(sp) for sp in getattr(net.spec, name)]
            for name in BLOCK_ORDER
        },
        "num_labels_task1": net.spec.num_labels_task1,
        "num_labels_task2": net.spec.num_labels_task2,
        "dtype": "float64",
        "seed": net.seed,
        "init_gain": net.init_gain,
        "tool_version": TOOL_VERSION,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, _, layer in net.layers_flat():
            if layer.weights is None:
                raise CheckpointError("cannot save an unbuilt network (missing weights)")
            f.write(np.ascontiguousarray(layer.weights, dtype=np.float64).tobytes())
            if layer.recurrent is not None:
                f.write(np.ascontiguousarray(layer.recurrent, dtype=np.float64).tobytes())


def load_checkpoint(path) -> NetworkState:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(
                f"checkpoint version {version} not supported (reader handles {VERSION})"
            )
        (hlen,) = struct.unpack("<I", f.read(4))
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint header: {e}") from e
        if header.get("dtype") != "float64":
            raise CheckpointError(f"unsupported weight dtype {header.get('dtype')!r}")

        spec = NetworkSpec(
            feature_block=[_layer_from_header(h) for h in header["arch"]["feature_block"]],
            label_block=[_layer_from_header(h) for h in header["arch"]["label_block"]],
            task_block=[_layer_from_header(h) for h in header["arch"]["task_block"]],
            num_labels_task1=int(header["num_labels_task1"]),
            num_labels_task2=int(header["num_labels_task2"]),
        )
        for name in BLOCK_ORDER:
            for layer in getattr(spec, name):
                layer.weights = _read_array(f, (layer.out_size, layer.in_size))
                if layer.use_recurrent:
                    layer.recurrent = _read_array(f, (layer.out_size, layer.out_size))
        tail = f.read(1)
        if tail:
            raise CheckpointError("trailing bytes after weight buffers")
    spec.validate()
    gain = header["init_gain"]
    if not isinstance(gain, dict):
        gain = float(gain)
    return NetworkState(spec=spec, seed=int(header["seed"]), init_gain=gain)


def _read_array(f, shape) -> np.ndarray:
    want = int(np.prod(shape)) * 8
    raw = f.read(want)
    if len(raw) != want:
        raise CheckpointError(f"truncated weight buffer: wanted {want} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()
