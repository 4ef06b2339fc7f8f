"""Event-camera data handling: file codec, spike binning, dataset loading.

Recordings are streams of address events from a 34x34 sensor with two
polarity channels.  On disk each event is 5 bytes:

    byte 0    x coordinate (0..33)
    byte 1    y coordinate (0..33)
    byte 2    bit 7 = polarity, bits 6..0 = timestamp bits 22..16
    byte 3    timestamp bits 15..8
    byte 4    timestamp bits 7..0

The 23-bit timestamp is big-endian in microseconds from recording start.
Events become network input by flattening (polarity, y, x) to a feature
index and binning time, saturating each (feature, bin) cell at one spike.

Directory layout: <root>/<split>/<digit>/*.bin with split "train"/"test"
(capitalized variants accepted).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataFormatError, DatasetError

SENSOR_SIDE = 34
GRID = SENSOR_SIDE * SENSOR_SIDE
NUM_FEATURES = 2 * GRID  # 2312
RECORD_BYTES = 5
MAX_T_US = 1 << 23
NUM_DIGITS = 10


class Event(NamedTuple):
    x: int
    y: int
    polarity: int
    t_us: int


def parse_events(raw: bytes) -> np.ndarray:
    """Decode a raw byte stream into an (N, 4) int64 array [x, y, pol, t_us]."""
    if len(raw) % RECORD_BYTES:
        raise DataFormatError(
            f"truncated record: {len(raw)} bytes is not a multiple of {RECORD_BYTES}"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES).astype(np.int64)
    x, y = rec[:, 0], rec[:, 1]
    pol = rec[:, 2] >> 7
    t = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    if x.size and (x.max() >= SENSOR_SIDE or y.max() >= SENSOR_SIDE):
        raise DataFormatError(
            f"event coordinates out of the {SENSOR_SIDE}x{SENSOR_SIDE} sensor"
        )
    return np.stack([x, y, pol, t], axis=1)


def parse_nmnist_file(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    try:
        return parse_events(raw)
    except DataFormatError as e:
        raise DataFormatError(f"{path}: {e}") from e


def encode_events(events: np.ndarray) -> bytes:
    """Inverse of parse_events; validates ranges before packing."""
    ev = np.asarray(events, dtype=np.int64).reshape(-1, 4)
    x, y, pol, t = ev[:, 0], ev[:, 1], ev[:, 2], ev[:, 3]
    if ev.size:
        if x.min() < 0 or x.max() >= SENSOR_SIDE or y.min() < 0 or y.max() >= SENSOR_SIDE:
            raise DataFormatError("coordinate outside the sensor")
        if pol.min() < 0 or pol.max() > 1:
            raise DataFormatError("polarity must be 0 or 1")
        if t.min() < 0 or t.max() >= MAX_T_US:
            raise DataFormatError(f"timestamp outside [0, {MAX_T_US}) microseconds")
    rec = np.empty((ev.shape[0], RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = x
    rec[:, 1] = y
    rec[:, 2] = (pol << 7) | (t >> 16)
    rec[:, 3] = (t >> 8) & 0xFF
    rec[:, 4] = t & 0xFF
    return rec.tobytes()


def feature_index(x, y, polarity):
    """Flatten sensor address to the input-feature axis: pol*1156 + y*34 + x."""
    return polarity * GRID + y * SENSOR_SIDE + x


def bin_events(events: np.ndarray, t_steps: int, bin_width_us: int) -> np.ndarray:
    """Rasterize events into a (NUM_FEATURES, t_steps) uint8 spike tensor.

    bin = t_us // bin_width_us; events at or past t_steps bins are dropped;
    multiple events in one cell saturate to a single spike.
    """
    if t_steps < 1 or bin_width_us < 1:
        raise ConfigError(f"need t_steps >= 1 and bin_width_us >= 1, got {t_steps}, {bin_width_us}")
    ev = np.asarray(events, dtype=np.int64).reshape(-1, 4)
    out = np.zeros((NUM_FEATURES, t_steps), dtype=np.uint8)
    if ev.shape[0] == 0:
        return out
    bins = ev[:, 3] // bin_width_us
    keep = bins < t_steps
    out[feature_index(ev[keep, 0], ev[keep, 1], ev[keep, 2]), bins[keep]] = 1
    return out


@dataclass
class SpikeTensor:
    """One binned sample: (NUM_FEATURES, t_steps) uint8."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != NUM_FEATURES:
            raise DataFormatError(
                f"spike tensor must be ({NUM_FEATURES}, T), got {self.data.shape}"
            )


def stack_batch(tensors) -> np.ndarray:
    """Stack (features, T) samples into the (T, batch, features) input layout."""
    arr = np.stack([getattr(t, "data", t) for t in tensors])  # (B, F, T)
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float64)


def derive_labels(digit: int) -> tuple[int, int]:
    """Both task labels for a sample: (digit identity, digit parity)."""
    if not 0 <= digit <= 9:
        raise DataFormatError(f"digit label must be 0..9, got {digit}")
    return digit, digit % 2


def _find_split_dir(root: Path, split: str) -> Path:
    for name in (split, split.capitalize()):
        d = root / name
        if d.is_dir():
            return d
    raise DatasetError(f"no '{split}' split under {root}")


@dataclass
class Dataset:
    """Lazy, cached view of one split; samples are in a fixed balanced order."""

    root: Path
    split: str
    t_steps: int
    bin_width_us: int
    files: list[Path]
    digits: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.files)

    def tensor(self, i: int) -> np.ndarray:
        got = self._cache.get(i)
        if got is None:
            got = bin_events(parse_nmnist_file(self.files[i]), self.t_steps, self.bin_width_us)
            self._cache[i] = got
        return got

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """(T, batch, features) float64 inputs plus the digit labels."""
        x = stack_batch([self.tensor(int(i)) for i in indices])
        return x, self.digits[np.asarray(indices, dtype=np.int64)]


def load_dataset(root, split: str, t_steps: int, bin_width_us: int,
                 per_class: int | None = None, seed: int = 0) -> Dataset:
    """Index one split, optionally balanced-subsampled to per_class files.

    Subsampling draws without replacement from the sorted file list of each
    digit with a digit-specific stream, so the selection depends only on
    (seed, digit, file names) and not on class sizes or dict order.
    """
    root = Path(root)
    split_dir = _find_split_dir(root, split)
    files: list[Path] = []
    digits: list[int] = []
    for digit in range(NUM_DIGITS):
        d = split_dir / str(digit)
        if not d.is_dir():
            raise DatasetError(f"missing digit directory {d}")
        names = sorted(d.glob("*.bin"))
        if not names:
            raise DatasetError(f"no .bin files under {d}")
        if per_class is not None:
            if per_class > len(names):
                raise DatasetError(
                    f"asked for {per_class} samples of digit {digit}, only {len(names)} available"
                )
            rng = np.random.default_rng(np.random.SeedSequence([seed, digit]))
            chosen = np.sort(rng.choice(len(names), size=per_class, replace=False))
            names = [names[int(j)] for j in chosen]
        files.extend(names)
        digits.extend([digit] * len(names))
    return Dataset(
        root=root,
        split=split,
        t_steps=int(t_steps),
        bin_width_us=int(bin_width_us),
        files=files,
        digits=np.asarray(digits, dtype=np.int64),
    )
