"""Rate coding of class labels on read-out neurons."""
from __future__ import annotations

import numpy as np

from .snn import ConfigurationError

DEFAULT_HIGH_RATE = 0.9
DEFAULT_LOW_RATE = 0.01


def rate_decode(output, upto: int | None = None) -> int | np.ndarray:
    """Index of the read-out row with the most spikes in steps ``1..upto``.

    ``output`` is ``(d_v, T)`` or a batch ``(B, d_v, T)``. Ties go to the
    lowest index (``argmax`` semantics).
    """
    out = np.asarray(output)
    horizon = out.shape[-1]
    upto = horizon if upto is None else upto
    if not 1 <= upto <= horizon:
        raise ConfigurationError(f"upto must be in [1, {horizon}], got {upto}")
    counts = out[..., :upto].sum(axis=-1)
    dec = np.argmax(counts, axis=-1)
    return int(dec) if dec.ndim == 0 else dec


def decode_curve(output) -> np.ndarray:
    """Decisions for every ``upto = 1..T``; shape ``(B, T)``."""
    out = np.asarray(output, dtype=float)
    if out.ndim == 2:
        out = out[None]
    counts = np.cumsum(out, axis=-1)
    return np.argmax(counts, axis=1)


def rate_target(
    label: int,
    d_v: int,
    horizon: int,
    rng: np.random.Generator,
    high_rate: float = DEFAULT_HIGH_RATE,
    low_rate: float = DEFAULT_LOW_RATE,
) -> np.ndarray:
    """Bernoulli target raster: ``high_rate`` on row ``label``, ``low_rate`` elsewhere."""
    if not 0 <= label < d_v:
        raise ConfigurationError(f"label {label} out of range for {d_v} read-out neurons")
    if not high_rate > low_rate:
        raise ConfigurationError("high_rate must exceed low_rate")
    rates = np.full((d_v, 1), low_rate)
    rates[label] = high_rate
    return (rng.random((d_v, horizon)) < rates).astype(np.uint8)
