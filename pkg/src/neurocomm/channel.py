"""Memoryless binary link: on-off keying, additive Gaussian noise, hard threshold.

A spike is sent as amplitude 1 and silence as 0 on each of ``d_x`` parallel
lanes; the receiver adds ``N(0, sigma^2)`` noise and outputs 1 when the sample
exceeds the threshold. The per-symbol SNR is ``(||x||_1 / (d_x T)) / sigma^2``,
so ``sigma`` is calibrated against the density of what is actually sent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .snn import ConfigurationError

log = logging.getLogger(__name__)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    noise_sigma: float
    parallel_lanes: int
    threshold: float = 0.5

    def __post_init__(self):
        if not self.noise_sigma > 0:
            raise ConfigurationError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.parallel_lanes < 1:
            raise ConfigurationError("parallel_lanes must be positive")

    @classmethod
    def calibrated(cls, density: float, snr_db: float, lanes: int, threshold: float = 0.5) -> "ChannelConfig":
        return cls(snr_db, calibrate_sigma(density, snr_db), lanes, threshold)

    def flip_probabilities(self) -> tuple[float, float]:
        """``(P(0 -> 1), P(1 -> 0))``."""
        return float(norm.sf(self.threshold / self.noise_sigma)), float(norm.sf((1 - self.threshold) / self.noise_sigma))


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(ratio: float) -> float:
    return 10.0 * np.log10(ratio)


def measured_snr(x, sigma: float) -> float:
    """Linear per-symbol SNR of raster(s) ``x`` under noise level ``sigma``."""
    x = np.asarray(x)
    if x.size == 0:
        raise ConfigurationError("empty raster")
    density = float(np.count_nonzero(x)) / x.size
    if density == 0.0:
        log.warning("all-zero raster: SNR undefined, reporting 0")
        return 0.0
    return density / sigma**2


def calibrate_sigma(x_density: float, target_snr_db: float) -> float:
    """Noise standard deviation that puts a raster of this density at the target SNR."""
    if not x_density > 0:
        raise CalibrationError(f"cannot calibrate against zero spike density (got {x_density})")
    return float(np.sqrt(x_density / db_to_linear(target_snr_db)))


def transmit_step(x_t: np.ndarray, config: ChannelConfig, rng: np.random.Generator, past=None) -> np.ndarray:
    """Channel output for one time step; ``x_t`` has lanes on the last axis.

    ``past`` (earlier channel inputs) is accepted for channels with memory
    and ignored here.
    """
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape[-1] != config.parallel_lanes:
        raise ConfigurationError(f"expected {config.parallel_lanes} lanes, got {x_t.shape[-1]}")
    noise = rng.standard_normal(x_t.shape) * config.noise_sigma
    return (x_t + noise > config.threshold).astype(float)


def transmit(x, config: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Pass a ``(d_x, T)`` raster (or a ``(B, d_x, T)`` batch) through the link."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] != config.parallel_lanes:
        raise ConfigurationError(f"expected {config.parallel_lanes} lanes on axis -2, got shape {x.shape}")
    noise = rng.standard_normal(x.shape) * config.noise_sigma
    return (x + noise > config.threshold).astype(np.uint8)


def uncoded_link(o, config: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Send the sensor raster itself (rate 1: one lane per sensor channel)."""
    o = np.asarray(o)
    if o.shape[-2] != config.parallel_lanes:
        raise ConfigurationError(
            f"uncoded transmission needs one lane per input channel: {o.shape[-2]} channels, {config.parallel_lanes} lanes"
        )
    return transmit(o, config, rng)
