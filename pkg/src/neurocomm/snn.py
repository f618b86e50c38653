"""Probabilistic GLM spiking neurons.

A neuron ``i`` spikes at step ``t`` with probability ``sigmoid(u[i, t])`` where

    u[i, t] = sum_k w[i, k] * (alpha * s_k)[t] + w_fb[i] * (beta * s_i)[t] + b[i]

and ``(alpha * s)[t] = sum_{tau=1..K} alpha[tau] * s[t - tau]`` is a strictly
causal filtered trace: a spike emitted at step ``t`` first influences
potentials at ``t + 1``.

Sources are ordered as ``[exogenous inputs..., neurons...]``. Filtered traces
depend only on the source (one synaptic filter per network), so they are
stored once per source and shared by all post-synaptic neurons.

All state carries a leading batch axis so that independent trajectories
(test examples, Monte Carlo samples) can be simulated together.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .seeding import make_rng

PROB_EPS = 1e-12


class ConfigurationError(ValueError):
    """Raised when shapes or topology do not fit together."""


def sigmoid(a):
    """Logistic function clamped to ``[PROB_EPS, 1 - PROB_EPS]``."""
    return np.clip(expit(a), PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(target, prob):
    """Binary cross-entropy ``-t log p - (1 - t) log(1 - p)``."""
    p = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(target, dtype=float)
    return -(t * np.log(p) + (1.0 - t) * np.log1p(-p))


def sample_spike(prob, rng: np.random.Generator):
    """Bernoulli draw(s) with success probability ``prob`` (returns 0/1 floats)."""
    prob = np.asarray(prob, dtype=float)
    return (rng.random(prob.shape) < prob).astype(float)


# --------------------------------------------------------------------------
# signals


@dataclass(frozen=True)
class SpikeRaster:
    """A ``channels x horizon`` binary spike matrix."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ConfigurationError(f"raster must be 2-D and non-empty, got shape {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ConfigurationError("raster entries must be 0 or 1")
        object.__setattr__(self, "bits", bits.astype(np.uint8))

    @property
    def channels(self) -> int:
        return self.bits.shape[0]

    @property
    def horizon(self) -> int:
        return self.bits.shape[1]

    def at(self, t: int) -> np.ndarray:
        """Column for (1-based) time step ``t``."""
        return self.bits[:, t - 1]

    def counts(self, upto: int | None = None) -> np.ndarray:
        upto = self.horizon if upto is None else upto
        return self.bits[:, :upto].sum(axis=1)

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, SpikeRaster) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))


@dataclass(frozen=True)
class SynapticFilter:
    """Finite causal kernel ``alpha[1..K]``.

    ``decay`` is set for truncated exponentials, which lets traces be updated
    recursively in O(1) per step instead of by direct convolution.
    """

    taps: np.ndarray
    decay: float | None = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float).ravel()
        if taps.size < 1 or not np.all(np.isfinite(taps)):
            raise ConfigurationError("filter needs at least one finite tap")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def exponential(cls, tau: float, length: int = 10) -> "SynapticFilter":
        taps = np.exp(-np.arange(length) / tau)
        return cls(taps, decay=float(np.exp(-1.0 / tau)))

    @property
    def length(self) -> int:
        return self.taps.size


def default_synaptic_filter() -> SynapticFilter:
    return SynapticFilter.exponential(tau=3.0, length=10)


def default_feedback_filter() -> SynapticFilter:
    return SynapticFilter.exponential(tau=1.0, length=10)


# --------------------------------------------------------------------------
# parameters


@dataclass
class NeuronParams:
    synaptic_weights: np.ndarray
    feedback_weight: float
    bias: float


@dataclass
class NetworkParams:
    """Parameters and topology of one network.

    ``weights[i, k]`` connects source ``k`` to neuron ``i``; ``mask`` marks the
    connections that exist (masked entries are kept at exactly zero).
    """

    weights: np.ndarray
    mask: np.ndarray
    feedback: np.ndarray
    bias: np.ndarray
    n_inputs: int
    visible: np.ndarray
    hidden: np.ndarray
    feedback_mask: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.feedback = np.asarray(self.feedback, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        self.visible = np.asarray(self.visible, dtype=np.intp)
        self.hidden = np.asarray(self.hidden, dtype=np.intp)
        n = self.bias.size
        if self.weights.shape != (n, self.n_inputs + n) or self.mask.shape != self.weights.shape:
            raise ConfigurationError(
                f"weights/mask must be ({n}, {self.n_inputs + n}), got {self.weights.shape} / {self.mask.shape}"
            )
        if self.feedback.shape != (n,):
            raise ConfigurationError("feedback must have one entry per neuron")
        self.feedback_mask = (
            np.ones(n, dtype=bool) if self.feedback_mask is None else np.asarray(self.feedback_mask, dtype=bool)
        )
        if self.feedback_mask.shape != (n,):
            raise ConfigurationError("feedback_mask must have one entry per neuron")
        both = np.concatenate([self.visible, self.hidden])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ConfigurationError("visible/hidden must partition the neurons")
        self.enforce_masks()

    def enforce_masks(self) -> None:
        self.weights[~self.mask] = 0.0
        self.feedback[~self.feedback_mask] = 0.0

    @classmethod
    def dense(
        cls,
        n_inputs: int,
        n_visible: int,
        n_hidden: int = 0,
        *,
        seed: int = 0,
        recurrent: bool = True,
        readout_recurrent: bool = True,
        init_scale: float = 0.1,
    ) -> "NetworkParams":
        """Hidden neurons first, read-out neurons last.

        Every neuron receives all exogenous inputs; with ``recurrent`` it also
        receives every other neuron (self-history goes through the feedback
        weight). ``readout_recurrent=False`` removes every connection out of
        the read-out neurons, including their self-feedback, so that clamped
        targets cannot leak back into the potentials. Neuron ``i`` draws its
        initial values from its own sub-seed.
        """
        n = n_visible + n_hidden
        mask = np.zeros((n, n_inputs + n), dtype=bool)
        mask[:, :n_inputs] = True
        if recurrent:
            mask[:, n_inputs:] = ~np.eye(n, dtype=bool)
        feedback_mask = np.ones(n, dtype=bool)
        if not readout_recurrent:
            mask[:, n_inputs + n_hidden :] = False
            feedback_mask[n_hidden:] = False
        weights = np.zeros(mask.shape)
        feedback = np.zeros(n)
        for i in range(n):
            rng = make_rng(seed, "init", i)
            weights[i] = rng.uniform(-init_scale, init_scale, size=mask.shape[1])
            feedback[i] = rng.uniform(-init_scale, init_scale)
        return cls(
            weights=weights,
            mask=mask,
            feedback=feedback,
            bias=np.zeros(n),
            n_inputs=n_inputs,
            visible=np.arange(n_hidden, n),
            hidden=np.arange(n_hidden),
            feedback_mask=feedback_mask,
        )

    @classmethod
    def zeros_like(cls, other: "NetworkParams") -> "NetworkParams":
        return cls(
            np.zeros_like(other.weights),
            other.mask.copy(),
            np.zeros_like(other.feedback),
            np.zeros_like(other.bias),
            other.n_inputs,
            other.visible.copy(),
            other.hidden.copy(),
            other.feedback_mask.copy(),
        )

    @property
    def n_neurons(self) -> int:
        return self.bias.size

    @property
    def n_sources(self) -> int:
        return self.n_inputs + self.n_neurons

    def sources(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.mask[i])

    def neuron(self, i: int) -> NeuronParams:
        return NeuronParams(self.weights[i, self.mask[i]].copy(), float(self.feedback[i]), float(self.bias[i]))

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.weights.copy(),
            self.mask.copy(),
            self.feedback.copy(),
            self.bias.copy(),
            self.n_inputs,
            self.visible.copy(),
            self.hidden.copy(),
            self.feedback_mask.copy(),
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.weights, self.feedback, self.bias

    def flat(self) -> np.ndarray:
        """Weights (full matrix, row-major), feedback, bias as one vector."""
        return np.concatenate([self.weights.ravel(), self.feedback, self.bias])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        nw, n = self.weights.size, self.n_neurons
        if vec.size != nw + 2 * n:
            raise ConfigurationError(f"expected {nw + 2 * n} values, got {vec.size}")
        self.weights[...] = vec[:nw].reshape(self.weights.shape)
        self.feedback[...] = vec[nw : nw + n]
        self.bias[...] = vec[nw + n :]
        self.enforce_masks()

    def compatible(self, other: "NetworkParams") -> bool:
        return (
            self.weights.shape == other.weights.shape
            and self.n_inputs == other.n_inputs
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.feedback_mask, other.feedback_mask)
        )


# --------------------------------------------------------------------------
# state


class TraceBank:
    """Filtered traces of a bank of spike trains.

    ``push(s)`` records the spikes of the step that just finished; ``value``
    then holds ``sum_{tau=1..K} taps[tau] * s[t - tau]`` for the next step.
    """

    def __init__(self, filt: SynapticFilter, shape: tuple[int, ...]):
        self.filter = filt
        k = filt.length
        self._history = np.zeros((k + 1,) + tuple(shape))
        self._pos = 0
        self.value = np.zeros(shape)
        if filt.decay is not None:
            self._tail = filt.taps[0] * filt.decay**k
        self._order = np.arange(k)

    def push(self, spikes: np.ndarray) -> None:
        k = self.filter.length
        self._pos = (self._pos + 1) % (k + 1)
        self._history[self._pos] = spikes
        if self.filter.decay is not None:
            # the slot after the newest holds s[t - 1 - K], which just fell out of the window
            oldest = self._history[(self._pos + 1) % (k + 1)]
            self.value = self.filter.decay * self.value + self.filter.taps[0] * spikes - self._tail * oldest
        else:
            idx = (self._pos - self._order) % (k + 1)
            self.value = np.tensordot(self.filter.taps, self._history[idx], axes=1)

    def reset(self) -> None:
        self._history[...] = 0.0
        self.value = np.zeros_like(self.value)


@dataclass
class NetworkState:
    """Dynamic state of a (batch of) network(s) after ``clock`` steps.

    ``traces``/``feedback_traces``/``potentials``/``probs`` are the values
    used at step ``clock``; ``last_spikes`` are the outputs of that step.
    """

    synaptic: TraceBank
    feedback: TraceBank
    potentials: np.ndarray
    probs: np.ndarray
    last_spikes: np.ndarray
    last_inputs: np.ndarray
    clock: int = 0

    @classmethod
    def initial(
        cls,
        params: NetworkParams,
        batch: int = 1,
        synaptic_filter: SynapticFilter | None = None,
        feedback_filter: SynapticFilter | None = None,
    ) -> "NetworkState":
        synaptic_filter = synaptic_filter or default_synaptic_filter()
        feedback_filter = feedback_filter or default_feedback_filter()
        n = params.n_neurons
        return cls(
            synaptic=TraceBank(synaptic_filter, (batch, params.n_sources)),
            feedback=TraceBank(feedback_filter, (batch, n)),
            potentials=np.zeros((batch, n)),
            probs=np.full((batch, n), 0.5),
            last_spikes=np.zeros((batch, n)),
            last_inputs=np.zeros((batch, params.n_inputs)),
        )

    @property
    def batch(self) -> int:
        return self.potentials.shape[0]

    @property
    def traces(self) -> np.ndarray:
        return self.synaptic.value

    @property
    def feedback_traces(self) -> np.ndarray:
        return self.feedback.value

    def reset(self) -> None:
        self.synaptic.reset()
        self.feedback.reset()
        self.potentials[...] = 0.0
        self.probs[...] = 0.5
        self.last_spikes[...] = 0.0
        self.last_inputs[...] = 0.0
        self.clock = 0


def update_traces(state: NetworkState, spikes_in: np.ndarray) -> None:
    """Fold the source spikes of the finished step into the traces.

    ``spikes_in`` is ``[exogenous, neuron spikes]`` along the last axis.
    """
    spikes_in = np.asarray(spikes_in, dtype=float)
    n_src = state.synaptic.value.shape[-1]
    if spikes_in.shape[-1] != n_src:
        raise ConfigurationError(f"expected {n_src} source spikes, got {spikes_in.shape[-1]}")
    n = state.feedback.value.shape[-1]
    state.synaptic.push(spikes_in)
    state.feedback.push(spikes_in[..., n_src - n :])


def membrane_potential(params: NetworkParams, state: NetworkState, neuron: int) -> np.ndarray:
    """``u`` of one neuron from the current traces, one value per batch row."""
    return (
        state.traces @ params.weights[neuron]
        + params.feedback[neuron] * state.feedback_traces[:, neuron]
        + params.bias[neuron]
    )


def step_network(
    params: NetworkParams,
    state: NetworkState,
    exogenous: np.ndarray,
    rng: np.random.Generator,
    clamp: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one time step.

    Returns ``(spikes, visible_loss)``, both with a leading batch axis.
    ``visible_loss`` is the cross-entropy of the read-out neurons' emitted
    values (the clamp when given, their own samples otherwise). Uniform draws
    are taken for every neuron whether or not a clamp is given.
    """
    exogenous = np.atleast_2d(np.asarray(exogenous, dtype=float))
    if exogenous.shape != (state.batch, params.n_inputs):
        raise ConfigurationError(f"exogenous input must be {(state.batch, params.n_inputs)}, got {exogenous.shape}")
    if state.clock > 0:
        update_traces(state, np.concatenate([state.last_inputs, state.last_spikes], axis=1))
    u = state.traces @ params.weights.T + params.feedback * state.feedback_traces + params.bias
    p = sigmoid(u)
    spikes = (rng.random(p.shape) < p).astype(float)
    if clamp is not None:
        clamp = np.atleast_2d(np.asarray(clamp, dtype=float))
        if clamp.shape != (state.batch, params.visible.size):
            raise ConfigurationError(f"clamp must be {(state.batch, params.visible.size)}, got {clamp.shape}")
        spikes[:, params.visible] = clamp
    loss = bce_loss(spikes[:, params.visible], p[:, params.visible])
    state.potentials = u
    state.probs = p
    state.last_spikes = spikes
    state.last_inputs = exogenous
    state.clock += 1
    return spikes, loss


@dataclass
class GradientTerms:
    """Per-step post-synaptic error times pre-synaptic trace, per batch row."""

    weights: np.ndarray
    feedback: np.ndarray
    bias: np.ndarray


def gradient_terms(params: NetworkParams, state: NetworkState, spikes: np.ndarray | None = None) -> GradientTerms:
    """``(s - sigmoid(u)) * trace`` for the step just executed.

    ``spikes`` defaults to the emitted values (clamped targets for read-out
    neurons). No error-signal factor is applied here.
    """
    s = state.last_spikes if spikes is None else np.atleast_2d(spikes)
    err = s - state.probs
    w = err[:, :, None] * state.traces[:, None, :]
    w *= params.mask
    return GradientTerms(w, err * state.feedback_traces * params.feedback_mask, err)


def run_clamped(
    params: NetworkParams,
    exogenous: np.ndarray,
    target: np.ndarray,
    rng: np.random.Generator,
    **filters,
) -> tuple[np.ndarray, float]:
    """Run one example with read-out neurons clamped; return spikes (n, T) and the summed loss."""
    exogenous = np.asarray(exogenous, dtype=float)
    target = np.asarray(target, dtype=float)
    state = NetworkState.initial(params, 1, **filters)
    out = np.zeros((params.n_neurons, exogenous.shape[1]))
    total = 0.0
    for t in range(exogenous.shape[1]):
        s, loss = step_network(params, state, exogenous[:, t], rng, clamp=target[:, t])
        out[:, t] = s[0]
        total += float(loss.sum())
    return out, total


def run_free(
    params: NetworkParams,
    exogenous: np.ndarray,
    rng: np.random.Generator,
    **filters,
) -> np.ndarray:
    """Unclamped run over a batch of examples ``(B, n_inputs, T)``; returns spikes ``(B, n, T)``."""
    exogenous = np.asarray(exogenous, dtype=float)
    if exogenous.ndim == 2:
        exogenous = exogenous[None]
    b, _, horizon = exogenous.shape
    state = NetworkState.initial(params, b, **filters)
    out = np.zeros((b, params.n_neurons, horizon))
    for t in range(horizon):
        s, _ = step_network(params, state, exogenous[:, :, t], rng)
        out[:, :, t] = s
    return out
