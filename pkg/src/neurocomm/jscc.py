"""Spiking joint source-channel coding.

sensor raster ``o`` -> encoder SNN -> ``x`` (``d_x`` lanes) -> binary channel
-> ``y`` -> decoder SNN -> read-out ``v`` -> rate-decoded class.

Training clamps the decoder read-out to a rate-coded target and updates every
time step: read-out neurons get the supervised term, every other neuron
(encoder outputs and hidden neurons on both sides) gets the error-signal
modulated eligibility term. The channel is treated as sampled context.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, calibrate_sigma, transmit_step, uncoded_link
from .data import DataFormatError, LabeledSpikeSet, atomic_write
from .federated import DeviceReplica
from .learning import ThreeFactorRule, error_signal
from .readout import DEFAULT_HIGH_RATE, DEFAULT_LOW_RATE, decode_curve, rate_target
from .seeding import make_rng
from .snn import (
    ConfigurationError,
    NetworkParams,
    NetworkState,
    SynapticFilter,
    default_feedback_filter,
    default_synaptic_filter,
    run_free,
    step_network,
)

log = logging.getLogger(__name__)

PARAM_MAGIC = b"NJSC"
PARAM_VERSION = 1
DEFAULT_ENCODER_INIT_SCALE = 1.0
DEFAULT_ENCODER_INIT_BIAS = -2.0
DEFAULT_LR = 5e-4
DEFAULT_ENCODER_LR = 2.5e-4


@dataclass(frozen=True)
class PipelineConfig:
    d_o: int
    rate: Fraction = Fraction(1)
    d_v: int = 2
    horizon: int = 40
    decoder_hidden: int | None = None  # defaults to d_x
    encoder_hidden: int = 0
    readout_recurrent: bool = False  # see Pipeline.build

    def __post_init__(self):
        object.__setattr__(self, "rate", Fraction(self.rate).limit_denominator(10_000))
        if self.rate <= 0:
            raise ConfigurationError("rate must be positive")
        d_x = self.rate * self.d_o
        if d_x.denominator != 1:
            raise ConfigurationError(f"d_x = r * d_o = {self.rate} * {self.d_o} is not an integer")
        if self.d_v < 1 or self.horizon < 1:
            raise ConfigurationError("d_v and horizon must be positive")

    @property
    def d_x(self) -> int:
        return int(self.rate * self.d_o)

    @property
    def d_y(self) -> int:
        return self.d_x

    @property
    def n_decoder_hidden(self) -> int:
        return self.d_x if self.decoder_hidden is None else self.decoder_hidden


@dataclass
class Pipeline:
    config: PipelineConfig
    encoder: NetworkParams
    decoder: NetworkParams
    channel: ChannelConfig | None = None
    calibration_density: float | None = None
    synaptic_filter: SynapticFilter = field(default_factory=default_synaptic_filter)
    feedback_filter: SynapticFilter = field(default_factory=default_feedback_filter)

    def __post_init__(self):
        c = self.config
        if self.encoder.n_inputs != c.d_o or self.encoder.visible.size != c.d_x:
            raise ConfigurationError("encoder must map d_o inputs to d_x outputs")
        if self.decoder.n_inputs != c.d_y or self.decoder.visible.size != c.d_v:
            raise ConfigurationError("decoder must map d_y inputs to d_v read-out neurons")

    @classmethod
    def build(
        cls,
        config: PipelineConfig,
        seed: int = 0,
        channel: ChannelConfig | None = None,
        *,
        encoder_init_scale: float = DEFAULT_ENCODER_INIT_SCALE,
        encoder_init_bias: float = DEFAULT_ENCODER_INIT_BIAS,
        **kw,
    ) -> "Pipeline":
        """Encoder: inputs to outputs only (plus optional hidden); decoder dense.

        The encoder starts as a sparse random projection (weights uniform in
        ``+-encoder_init_scale``, negative bias) so that its outputs carry
        input information from the first step. With ``readout_recurrent``
        off, decoder read-out neurons receive all inputs and hidden neurons
        but send nothing back: under teacher forcing a read-out neuron's own
        clamped history predicts its target far better than a noisy
        channel does, and learning would latch onto it.
        """
        encoder = NetworkParams.dense(
            config.d_o,
            config.d_x,
            config.encoder_hidden,
            seed=make_seed(seed, "encoder"),
            recurrent=config.encoder_hidden > 0,
            init_scale=encoder_init_scale,
        )
        encoder.bias[:] = encoder_init_bias
        decoder = NetworkParams.dense(
            config.d_y,
            config.d_v,
            config.n_decoder_hidden,
            seed=make_seed(seed, "decoder"),
            readout_recurrent=config.readout_recurrent,
        )
        return cls(config, encoder, decoder, channel, **kw)

    @property
    def filters(self) -> dict:
        return dict(synaptic_filter=self.synaptic_filter, feedback_filter=self.feedback_filter)

    def with_channel(self, channel: ChannelConfig | None) -> "Pipeline":
        return replace(self, channel=channel)

    def calibrate(self, snr_db: float, density: float | None = None, threshold: float = 0.5) -> "Pipeline":
        """Copy of the pipeline whose channel sits at ``snr_db`` for the given (or stored) spike density."""
        density = self.calibration_density if density is None else density
        if density is None:
            raise ConfigurationError("no calibration density available; measure encoder output first")
        ch = ChannelConfig.calibrated(density, snr_db, self.config.d_x, threshold)
        return replace(self, channel=ch, calibration_density=density)

    def copy(self) -> "Pipeline":
        return replace(self, encoder=self.encoder.copy(), decoder=self.decoder.copy())


def make_seed(seed: int, *keys) -> int:
    from .seeding import derive_int

    return derive_int(seed, *keys)


@dataclass
class ForwardResult:
    x: np.ndarray  # (B, d_x, T)
    y: np.ndarray  # (B, d_y, T)
    v: np.ndarray  # (B, d_v, T)
    losses: np.ndarray | None  # (B, T) summed read-out loss per step when clamped


def forward_pipeline(
    pipeline: Pipeline,
    o,
    rng: np.random.Generator,
    clamp_v=None,
    *,
    encoder_rule: ThreeFactorRule | None = None,
    decoder_rule: ThreeFactorRule | None = None,
    lr: float = 0.0,
    encoder_lr: float | None = None,
) -> ForwardResult:
    """Run encoder, channel and decoder together one step at a time.

    ``o`` is ``(d_o, T)`` or ``(B, d_o, T)``. With ``pipeline.channel`` set to
    ``None`` the link is noiseless (``y = x``). When rules are given the
    update for each step is folded in and applied with ``lr`` (``encoder_lr``
    for the encoder, defaulting to ``lr``) before the next step. Random draws per step, in order: encoder, channel, decoder.
    """
    o = np.asarray(o, dtype=float)
    if o.ndim == 2:
        o = o[None]
    cfg = pipeline.config
    b, d_o, horizon = o.shape
    if d_o != cfg.d_o:
        raise ConfigurationError(f"input has {d_o} channels, pipeline expects {cfg.d_o}")
    if clamp_v is not None:
        clamp_v = np.asarray(clamp_v, dtype=float)
        if clamp_v.ndim == 2:
            clamp_v = clamp_v[None]
        if clamp_v.shape != (b, cfg.d_v, horizon):
            raise ConfigurationError(f"target must be {(b, cfg.d_v, horizon)}, got {clamp_v.shape}")
    enc, dec = pipeline.encoder, pipeline.decoder
    enc_state = NetworkState.initial(enc, b, **pipeline.filters)
    dec_state = NetworkState.initial(dec, b, **pipeline.filters)
    xs = np.zeros((b, cfg.d_x, horizon))
    ys = np.zeros((b, cfg.d_y, horizon))
    vs = np.zeros((b, cfg.d_v, horizon))
    losses = np.zeros((b, horizon)) if clamp_v is not None else None
    for t in range(horizon):
        s_enc, _ = step_network(enc, enc_state, o[:, :, t], rng)
        x_t = s_enc[:, enc.visible]
        y_t = x_t if pipeline.channel is None else transmit_step(x_t, pipeline.channel, rng)
        clamp = None if clamp_v is None else clamp_v[:, :, t]
        s_dec, loss = step_network(dec, dec_state, y_t, rng, clamp=clamp)
        xs[:, :, t] = x_t
        ys[:, :, t] = y_t
        vs[:, :, t] = s_dec[:, dec.visible]
        if losses is not None:
            signal = error_signal(loss)
            losses[:, t] = signal
            if decoder_rule is not None:
                decoder_rule.observe(dec_state, signal)
                decoder_rule.apply(lr)
            if encoder_rule is not None:
                encoder_rule.observe(enc_state, signal)
                encoder_rule.apply(lr if encoder_lr is None else encoder_lr)
    return ForwardResult(xs, ys, vs, losses)


class Trainer:
    """Online trainer holding the learning-rule state across examples.

    ``eligibility_decay`` (kappa) lets an encoder spike at step ``t`` be
    credited with the decoder losses of later steps; ``0`` gives the plain
    same-step rule. Eligibilities reset at example boundaries.
    """

    def __init__(
        self,
        pipeline: Pipeline,
        lr: float = DEFAULT_LR,
        *,
        encoder_lr: float | None = DEFAULT_ENCODER_LR,
        eligibility_decay: float = 0.9,
        baseline_decay: float | None = 0.99,
        high_rate: float = DEFAULT_HIGH_RATE,
        low_rate: float = DEFAULT_LOW_RATE,
    ):
        self.pipeline = pipeline
        self.lr = lr
        self.encoder_lr = lr if encoder_lr is None else encoder_lr
        self.high_rate = high_rate
        self.low_rate = low_rate
        self.encoder_rule = ThreeFactorRule(
            pipeline.encoder, supervised=np.empty(0, dtype=np.intp),
            eligibility_decay=eligibility_decay, baseline_decay=baseline_decay,
        )
        self.decoder_rule = ThreeFactorRule(
            pipeline.decoder, eligibility_decay=eligibility_decay, baseline_decay=baseline_decay
        )

    def target(self, label: int, rng: np.random.Generator) -> np.ndarray:
        cfg = self.pipeline.config
        return rate_target(label, cfg.d_v, cfg.horizon, rng, self.high_rate, self.low_rate)

    def step(self, o, v_target, rng: np.random.Generator) -> float:
        """Train on one example; returns the summed clamped read-out loss (the bound estimate)."""
        self.encoder_rule.reset_eligibility()
        self.decoder_rule.reset_eligibility()
        res = forward_pipeline(
            self.pipeline, o, rng, clamp_v=v_target,
            encoder_rule=self.encoder_rule, decoder_rule=self.decoder_rule, lr=self.lr, encoder_lr=self.encoder_lr,
        )
        return float(res.losses.sum())

    def fit(
        self,
        data: LabeledSpikeSet,
        epochs: int,
        rng: np.random.Generator,
        train_snr_db: float | None = None,
    ) -> list[float]:
        """Online passes over ``data`` in shuffled order.

        With ``train_snr_db`` the channel is recalibrated before every epoch
        from the encoder's current output density on the training set.
        """
        bounds = []
        for _ in range(epochs):
            if train_snr_db is not None:
                density = encoder_density(self.pipeline, data, rng)
                self.pipeline.channel = ChannelConfig.calibrated(density, train_snr_db, self.pipeline.config.d_x)
                self.pipeline.calibration_density = density
            for idx in rng.permutation(len(data)):
                v = self.target(int(data.labels[idx]), rng)
                bounds.append(self.step(data.rasters[idx], v, rng))
        if train_snr_db is not None:
            self.pipeline.calibration_density = encoder_density(self.pipeline, data, rng)
            self.pipeline.channel = ChannelConfig.calibrated(
                self.pipeline.calibration_density, train_snr_db, self.pipeline.config.d_x
            )
        return bounds


def train_step(pipeline: Pipeline, example, lr: float, rng: np.random.Generator, trainer: Trainer | None = None):
    """One online update on ``(o, v_target)``; returns ``(pipeline, bound_estimate)``."""
    trainer = trainer or Trainer(pipeline, lr, encoder_lr=lr)
    o, v_target = example
    return pipeline, trainer.step(o, v_target, rng)


def encoder_density(pipeline: Pipeline, data: LabeledSpikeSet, rng: np.random.Generator) -> float:
    """Mean spike density of the encoder outputs over ``data``."""
    out = run_free(pipeline.encoder, data.rasters, rng, **pipeline.filters)
    return float(out[:, pipeline.encoder.visible].mean())


def evaluate_accuracy_vs_time(pipeline: Pipeline, data: LabeledSpikeSet, rng: np.random.Generator) -> np.ndarray:
    """Accuracy of rate decoding after ``t = 1..T`` observed steps, averaged over ``data``."""
    res = forward_pipeline(pipeline, data.rasters, rng)
    decisions = decode_curve(res.v)
    return (decisions == data.labels[:, None]).mean(axis=0)


def evaluate_accuracy_vs_snr(
    pipeline: Pipeline,
    data: LabeledSpikeSet,
    snr_grid_db,
    seed: int,
    repetitions: int = 3,
    density: float | None = None,
) -> np.ndarray:
    """Final-step accuracy at each SNR, mean over ``repetitions`` seeded channel/spike realisations."""
    snr_grid_db = list(snr_grid_db)
    if not snr_grid_db:
        raise ConfigurationError("empty SNR grid")
    out = np.zeros(len(snr_grid_db))
    for i, snr in enumerate(snr_grid_db):
        p = pipeline.calibrate(snr, density)
        accs = [evaluate_accuracy_vs_time(p, data, make_rng(seed, "snr-eval", i, rep))[-1] for rep in range(repetitions)]
        out[i] = float(np.mean(accs))
    return out


# --------------------------------------------------------------------------
# uncoded baseline


class UncodedBaseline:
    """Raw sensor raster sent over the link (rate 1) and classified by a GLM SNN.

    The classifier is trained online on noiseless inputs, so it does not
    depend on the SNR it is later evaluated at.
    """

    def __init__(self, d_o: int, d_v: int = 2, n_hidden: int = 16, seed: int = 0, lr: float = 0.05, **filters):
        self.params = NetworkParams.dense(d_o, d_v, n_hidden, seed=make_seed(seed, "uncoded"))
        self.seed = seed
        self.lr = lr
        self.filters = filters

    def fit(self, data: LabeledSpikeSet, epochs: int = 1) -> "UncodedBaseline":
        dev = DeviceReplica(0, self.params, data, seed=make_seed(self.seed, "uncoded-train"), learning_rate=self.lr, **self.filters)
        for _ in range(epochs * len(data) * data.horizon):
            dev.local_iteration(1)
        return self

    def accuracy_vs_time(self, data: LabeledSpikeSet, snr_db: float | None, rng: np.random.Generator) -> np.ndarray:
        o = data.rasters
        if snr_db is None:
            received = o
        else:
            ch = ChannelConfig.calibrated(data.density(), snr_db, data.d_o)
            received = uncoded_link(o, ch, rng)
        out = run_free(self.params, received, rng, **self.filters)
        decisions = decode_curve(out[:, self.params.visible])
        return (decisions == data.labels[:, None]).mean(axis=0)


# --------------------------------------------------------------------------
# parameter files


def _manifest_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + ".manifest")


def _taps_str(f: SynapticFilter) -> str:
    return ",".join(repr(float(a)) for a in f.taps)


def save_pipeline(pipeline: Pipeline, path: str | os.PathLike, extra: dict | None = None) -> None:
    """Write ``NJSC`` parameters plus a ``key=value`` manifest next to them."""
    arrays = [
        pipeline.encoder.weights, pipeline.encoder.feedback, pipeline.encoder.bias,
        pipeline.decoder.weights, pipeline.decoder.feedback, pipeline.decoder.bias,
    ]
    blob = PARAM_MAGIC + bytes([PARAM_VERSION]) + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    atomic_write(path, blob)
    c = pipeline.config
    ch = pipeline.channel
    manifest = {
        "format": "NJSC",
        "version": PARAM_VERSION,
        "d_o": c.d_o,
        "rate": str(c.rate),
        "d_v": c.d_v,
        "horizon": c.horizon,
        "decoder_hidden": c.n_decoder_hidden,
        "encoder_hidden": c.encoder_hidden,
        "readout_recurrent": int(c.readout_recurrent),
        "synaptic_taps": _taps_str(pipeline.synaptic_filter),
        "synaptic_decay": repr(pipeline.synaptic_filter.decay),
        "feedback_taps": _taps_str(pipeline.feedback_filter),
        "feedback_decay": repr(pipeline.feedback_filter.decay),
        "calibration_density": repr(pipeline.calibration_density),
        "snr_db": repr(None if ch is None else ch.snr_db),
        "noise_sigma": repr(None if ch is None else ch.noise_sigma),
        "threshold": repr(None if ch is None else ch.threshold),
    }
    manifest.update(extra or {})
    text = "".join(f"{k}={v}\n" for k, v in manifest.items())
    atomic_write(_manifest_path(path), text.encode())


def read_manifest(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _opt_float(s: str) -> float | None:
    return None if s == "None" else float(s)


def load_pipeline(path: str | os.PathLike) -> Pipeline:
    m = read_manifest(_manifest_path(path))
    blob = Path(path).read_bytes()
    if blob[:4] != PARAM_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}", 0)
    if len(blob) < 5 or blob[4] != PARAM_VERSION:
        raise DataFormatError(f"{path}: unsupported or missing version byte", 4)
    config = PipelineConfig(
        d_o=int(m["d_o"]), rate=Fraction(m["rate"]), d_v=int(m["d_v"]), horizon=int(m["horizon"]),
        decoder_hidden=int(m["decoder_hidden"]), encoder_hidden=int(m["encoder_hidden"]),
        readout_recurrent=bool(int(m.get("readout_recurrent", "0"))),
    )
    syn = SynapticFilter(np.array([float(a) for a in m["synaptic_taps"].split(",")]), _opt_float(m["synaptic_decay"]))
    fb = SynapticFilter(np.array([float(a) for a in m["feedback_taps"].split(",")]), _opt_float(m["feedback_decay"]))
    pipeline = Pipeline.build(config, seed=0, synaptic_filter=syn, feedback_filter=fb)
    sizes = [pipeline.encoder.flat().size, pipeline.decoder.flat().size]
    if len(blob) != 5 + 8 * sum(sizes):
        raise DataFormatError(f"{path}: expected {sum(sizes)} float64 parameters, found {len(blob) - 5} bytes", len(blob))
    values = np.frombuffer(blob, dtype="<f8", offset=5)
    pipeline.encoder.load_flat(values[: sizes[0]])
    pipeline.decoder.load_flat(values[sizes[0] :])
    pipeline.calibration_density = _opt_float(m["calibration_density"])
    if m.get("noise_sigma", "None") != "None":
        pipeline.channel = ChannelConfig(
            float(m["snr_db"]), float(m["noise_sigma"]), config.d_x, float(m["threshold"])
        )
    return pipeline


__all__ = [
    "ForwardResult",
    "Pipeline",
    "PipelineConfig",
    "Trainer",
    "UncodedBaseline",
    "calibrate_sigma",
    "encoder_density",
    "evaluate_accuracy_vs_snr",
    "evaluate_accuracy_vs_time",
    "forward_pipeline",
    "load_pipeline",
    "rate_target",
    "save_pipeline",
    "train_step",
]
