"""Spiking datasets: synthetic benchmark, SPKT files, federated splits.

SPKT v1 layout (all integers little-endian unsigned 32-bit)::

    offset 0   b"SPKT"
    offset 4   channels d
    offset 8   horizon T
    offset 12  example count n
    offset 16  n records of [label byte]? + ceil(d*T/8) packed bytes

Bits are packed channel-major (``bits[c, t]`` at position ``c*T + t``), most
significant bit first. Whether records carry a label byte is implied by the
payload length: ``n*(1+L)`` bytes means labelled, ``n*L`` unlabelled.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .readout import DEFAULT_HIGH_RATE, DEFAULT_LOW_RATE, rate_target
from .seeding import make_rng
from .snn import ConfigurationError, SpikeRaster

MAGIC = b"SPKT"
_HEADER = struct.Struct("<4sIII")

# MNIST-DVS after the usual preprocessing: 26x26 pixels flattened row-major, 80 steps
MNIST_DVS_SHAPE = (26, 26)
MNIST_DVS_HORIZON = 80


class DataFormatError(ValueError):
    """Malformed spike file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledSpikeSet:
    rasters: np.ndarray  # (n, d, T) uint8
    labels: np.ndarray | None
    class_count: int = 2

    def __post_init__(self):
        r = np.asarray(self.rasters)
        if r.ndim != 3:
            raise ConfigurationError(f"rasters must be (n, d, T), got {r.shape}")
        if r.size and not np.all((r == 0) | (r == 1)):
            raise ConfigurationError("rasters must be binary")
        self.rasters = r.astype(np.uint8)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (r.shape[0],):
                raise ConfigurationError("one label per raster required")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
                raise ConfigurationError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.rasters.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield SpikeRaster(self.rasters[i]), None if self.labels is None else int(self.labels[i])

    @property
    def d_o(self) -> int:
        return self.rasters.shape[1]

    @property
    def horizon(self) -> int:
        return self.rasters.shape[2]

    def subset(self, idx) -> "LabeledSpikeSet":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledSpikeSet(
            self.rasters[idx], None if self.labels is None else self.labels[idx], self.class_count
        )

    def density(self) -> float:
        return float(self.rasters.mean()) if self.rasters.size else 0.0


@dataclass
class SyntheticSpec:
    """Stand-in for a neuromorphic-camera classification set.

    Each class has a random prototype of active channels; examples fire at
    ``active_rate`` on those and ``background_rate`` elsewhere, then every bit
    is flipped with probability ``noise_flip``.
    """

    d_o: int = 64
    horizon: int = 40
    class_count: int = 2
    pattern_density: float = 0.2
    noise_flip: float = 0.05
    seed: int = 0
    count: int = 200
    active_rate: float = 0.5
    background_rate: float = 0.02

    def validate(self) -> None:
        for name in ("pattern_density", "noise_flip", "active_rate", "background_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        for name in ("d_o", "horizon", "class_count"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.count < 0:
            raise ConfigurationError("count must be non-negative")


def class_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """Boolean ``(class_count, d_o)`` active-channel masks."""
    return np.stack(
        [make_rng(spec.seed, "prototype", c).random(spec.d_o) < spec.pattern_density for c in range(spec.class_count)]
    )


def generate_synthetic(spec: SyntheticSpec, start: int = 0) -> LabeledSpikeSet:
    """Examples ``start .. start+count-1`` of the stream defined by ``spec``.

    Each example index has its own sub-seed, so disjoint index ranges give
    disjoint (train/test) samples over the same class prototypes.
    """
    spec.validate()
    protos = class_prototypes(spec)
    labels = np.arange(start, start + spec.count) % spec.class_count
    make_rng(spec.seed, "order", start).shuffle(labels)
    rasters = np.zeros((spec.count, spec.d_o, spec.horizon), dtype=np.uint8)
    for j, label in enumerate(labels):
        rng = make_rng(spec.seed, "example", start + j)
        rates = np.where(protos[label], spec.active_rate, spec.background_rate)[:, None]
        bits = rng.random((spec.d_o, spec.horizon)) < rates
        flips = rng.random((spec.d_o, spec.horizon)) < spec.noise_flip
        rasters[j] = bits ^ flips
    return LabeledSpikeSet(rasters, labels, spec.class_count)


# --------------------------------------------------------------------------
# SPKT files


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_spkt(data: LabeledSpikeSet) -> bytes:
    n, d, horizon = data.rasters.shape
    if data.labels is not None and data.labels.size and data.labels.max() > 255:
        raise ConfigurationError("SPKT labels are single bytes")
    parts = [_HEADER.pack(MAGIC, d, horizon, n)]
    for i in range(n):
        if data.labels is not None:
            parts.append(bytes([int(data.labels[i])]))
        parts.append(np.packbits(data.rasters[i].ravel()).tobytes())
    return b"".join(parts)


def decode_spkt(blob: bytes, class_count: int | None = None) -> LabeledSpikeSet:
    if len(blob) < _HEADER.size:
        raise DataFormatError(f"header needs {_HEADER.size} bytes, file has {len(blob)}", len(blob))
    magic, d, horizon, n = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if d < 1:
        raise DataFormatError("channel count must be positive", 4)
    if horizon < 1:
        raise DataFormatError("horizon must be positive", 8)
    rec = (d * horizon + 7) // 8
    payload = len(blob) - _HEADER.size
    if payload == n * (rec + 1) and n > 0:
        labelled = True
    elif payload == n * rec:
        labelled = n == 0  # an empty file reads as an empty labelled set
    else:
        # report where the data runs out (or where the surplus starts)
        expected = n * (rec + 1) if payload > n * rec else n * rec
        raise DataFormatError(
            f"payload of {payload} bytes does not hold {n} records of {rec} (+1 label) bytes; expected {expected}",
            _HEADER.size + min(payload, expected),
        )
    bits = np.zeros((n, d, horizon), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.int64) if labelled else None
    buf = np.frombuffer(blob, dtype=np.uint8)
    pos = _HEADER.size
    for i in range(n):
        if labelled:
            labels[i] = buf[pos]
            if class_count is not None and labels[i] >= class_count:
                raise DataFormatError(f"label {labels[i]} of record {i} is not below class count {class_count}", pos)
            pos += 1
        bits[i] = np.unpackbits(buf[pos : pos + rec], count=d * horizon).reshape(d, horizon)
        pos += rec
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels is not None and n else 1
        class_count = max(class_count, 1)
    return LabeledSpikeSet(bits, labels, class_count)


def save_spkt(data: LabeledSpikeSet, path: str | os.PathLike) -> None:
    atomic_write(path, encode_spkt(data))


def load_spkt(path: str | os.PathLike, class_count: int | None = None) -> LabeledSpikeSet:
    """Read an SPKT v1 file; ``class_count`` defaults to ``max(label) + 1``."""
    return decode_spkt(Path(path).read_bytes(), class_count)


def frames_to_spikes(frames: np.ndarray, labels=None, class_count: int = 2) -> LabeledSpikeSet:
    """Binarised camera frames ``(n, T, H, W)`` to a spike set with row-major pixel channels.

    This is the drop-in point for externally preprocessed MNIST-DVS
    (``H = W = 26``, ``T = 80``, giving 676 channels).
    """
    frames = np.asarray(frames)
    n, horizon, h, w = frames.shape
    rasters = frames.reshape(n, horizon, h * w).transpose(0, 2, 1)
    return LabeledSpikeSet(rasters, labels, class_count)


def load_csv_raster(path: str | os.PathLike) -> SpikeRaster:
    """One row per channel, comma-separated 0/1 entries."""
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
    return SpikeRaster(np.array(rows))


def save_csv_raster(raster: SpikeRaster, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(np.asarray(raster).tolist())


# --------------------------------------------------------------------------
# federated split and targets


def federated_split(data: LabeledSpikeSet, assignment: dict[int, int]) -> list[LabeledSpikeSet]:
    """Give each device the examples of the classes mapped to it.

    Devices are numbered ``0 .. max(assignment.values())``.
    """
    if data.labels is None:
        raise ConfigurationError("federated_split needs labelled data")
    missing = sorted(set(range(data.class_count)) - set(assignment))
    if missing:
        raise ConfigurationError(f"classes {missing} have no device assignment")
    n_devices = max(assignment.values()) + 1
    owner = np.array([assignment[int(c)] for c in data.labels], dtype=np.intp)
    return [data.subset(np.flatnonzero(owner == dev)) for dev in range(n_devices)]


def to_fl_target(
    example: tuple[SpikeRaster | np.ndarray, int],
    visible_count: int,
    rng: np.random.Generator,
    high_rate: float = DEFAULT_HIGH_RATE,
    low_rate: float = DEFAULT_LOW_RATE,
) -> np.ndarray:
    raster, label = example
    horizon = np.asarray(raster).shape[-1]
    return rate_target(label, visible_count, horizon, rng, high_rate, low_rate)
