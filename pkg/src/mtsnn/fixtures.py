"""Synthetic event-camera corpus shaped like the real recordings.

Each digit class owns a fixed random set of signal pixels (a constant of
the generator, independent of the corpus seed, like the classes of a real
dataset).  A sample keeps each signal pixel with high probability, fires
it as a per-millisecond Bernoulli train, and mixes in uniform background
noise over the full sensor.  Files use the 5-byte event codec and the
<root>/<split>/<digit>/ layout, so everything downstream is exercised
exactly as with downloaded data.

A manifest of sha256 hashes is written next to the tree so a corpus can
be re-verified later.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .data import GRID, NUM_DIGITS, NUM_FEATURES, SENSOR_SIDE, encode_events
from .errors import ChecksumError, DatasetError

PATTERN_STREAM = 9001  # root of the per-class pattern draws
MANIFEST_NAME = "manifest.json"

DEFAULT_PARAMS = {
    "signal_pixels": 48,
    "keep_prob": 1.0,
    "signal_rate": 0.17,  # spikes per pixel per millisecond
    "noise_per_ms": 9.0,  # background events per millisecond, whole sensor
    "pool_noise_per_ms": 2.0,  # extra events per millisecond, on the pool only
    "duration_ms": 300,
    "pattern_pool": 640,  # classes draw their pixels from this shared pool
}


def shared_pool(pool_size: int) -> np.ndarray:
    """The sensor subset all class patterns are drawn from."""
    rng = np.random.default_rng(np.random.SeedSequence([PATTERN_STREAM]))
    return rng.choice(NUM_FEATURES, size=pool_size, replace=False)


def class_pattern(digit: int, signal_pixels: int, pattern_pool: int | None = None) -> np.ndarray:
    """The fixed feature indices that carry this class's signal.

    With a pattern_pool, every class samples its pixels from one shared
    subset of the sensor, so classes overlap and are genuinely confusable
    (like strokes shared between handwritten digits).
    """
    rng = np.random.default_rng(np.random.SeedSequence([PATTERN_STREAM, digit]))
    if pattern_pool is None:
        return rng.choice(NUM_FEATURES, size=signal_pixels, replace=False)
    pool = shared_pool(pattern_pool)
    return pool[rng.choice(pattern_pool, size=signal_pixels, replace=False)]


def _features_to_events(features: np.ndarray, t_us: np.ndarray) -> np.ndarray:
    pol = features // GRID
    rem = features % GRID
    y, x = rem // SENSOR_SIDE, rem % SENSOR_SIDE
    ev = np.stack([x, y, pol, t_us], axis=1)
    order = np.lexsort((ev[:, 2], ev[:, 1], ev[:, 0], ev[:, 3]))
    return ev[order]


def sample_events(rng: np.random.Generator, pattern: np.ndarray, params: dict,
                  pool: np.ndarray | None = None) -> np.ndarray:
    duration = int(params["duration_ms"])
    keep = rng.random(pattern.size) < params["keep_prob"]
    kept = pattern[keep]
    fires = rng.random((kept.size, duration)) < params["signal_rate"]
    pix_idx, ms = np.nonzero(fires)
    sig_feat = kept[pix_idx]
    sig_t = ms * 1000 + rng.integers(0, 1000, size=ms.size)

    n_noise = rng.poisson(params["noise_per_ms"] * duration)
    noise_feat = rng.integers(0, NUM_FEATURES, size=n_noise)
    noise_t = rng.integers(0, duration * 1000, size=n_noise)

    parts_f = [sig_feat, noise_feat]
    parts_t = [sig_t, noise_t]
    # distractor events on the shared pool: they hit other classes' pixels
    pool_rate = float(params.get("pool_noise_per_ms", 0.0))
    if pool is not None and pool_rate > 0.0:
        n_pool = rng.poisson(pool_rate * duration)
        parts_f.append(pool[rng.integers(0, pool.size, size=n_pool)])
        parts_t.append(rng.integers(0, duration * 1000, size=n_pool))

    feat = np.concatenate(parts_f)
    t = np.concatenate(parts_t)
    return _features_to_events(feat.astype(np.int64), t.astype(np.int64))


def generate_fixture_tree(root, train_per_class: int = 100, test_per_class: int = 50,
                          seed: int = 1234, params: dict | None = None) -> dict:
    """Write a complete synthetic corpus and its manifest; returns the manifest."""
    merged = dict(DEFAULT_PARAMS)
    if params:
        merged.update(params)
    root = Path(root)
    pool_size = merged.get("pattern_pool")
    pool_size = None if pool_size is None else int(pool_size)
    pool = None if pool_size is None else shared_pool(pool_size)
    patterns = [class_pattern(d, int(merged["signal_pixels"]), pool_size)
                for d in range(NUM_DIGITS)]
    hashes: dict[str, str] = {}
    counts = {"train": train_per_class, "test": test_per_class}
    for split_code, (split, per_class) in enumerate(counts.items()):
        for digit in range(NUM_DIGITS):
            d = root / split / str(digit)
            d.mkdir(parents=True, exist_ok=True)
            for k in range(per_class):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, split_code, digit, k])
                )
                blob = encode_events(sample_events(rng, patterns[digit], merged, pool))
                path = d / f"{k:05d}.bin"
                path.write_bytes(blob)
                hashes[str(path.relative_to(root))] = hashlib.sha256(blob).hexdigest()
    manifest = {
        "seed": int(seed),
        "train_per_class": int(train_per_class),
        "test_per_class": int(test_per_class),
        "params": merged,
        "files": hashes,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def verify_fixtures(root) -> int:
    """Re-hash every file against the manifest; returns the verified count."""
    root = Path(root)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} under {root}")
    manifest = json.loads(mpath.read_text())
    files = manifest["files"]
    for rel, want in files.items():
        p = root / rel
        if not p.is_file():
            raise ChecksumError(f"missing fixture file {rel}")
        got = hashlib.sha256(p.read_bytes()).hexdigest()
        if got != want:
            raise ChecksumError(f"hash mismatch for {rel}")
    listed = set(files)
    on_disk = {str(p.relative_to(root)) for p in root.rglob("*.bin")}
    extras = sorted(on_disk - listed)
    if extras:
        raise ChecksumError(f"files not in manifest: {extras[:3]}{'...' if len(extras) > 3 else ''}")
    return len(files)
