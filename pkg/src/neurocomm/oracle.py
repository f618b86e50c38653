"""Exact likelihoods of tiny networks by enumerating hidden spike patterns.

Used to check the sampled learning rules. The forward pass here is a plain
direct convolution over the full spike history and shares no code with the
recursive trace updates in :mod:`neurocomm.snn`.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from .snn import PROB_EPS, NetworkParams, SynapticFilter, default_feedback_filter, default_synaptic_filter

MAX_HIDDEN_BITS = 16


class EnumerationLimitError(ValueError):
    pass


def _filtered(spikes: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Strictly causal convolution along the last axis."""
    out = np.zeros_like(spikes, dtype=float)
    horizon = spikes.shape[-1]
    for tau, a in enumerate(taps, start=1):
        if tau >= horizon + 1:
            break
        out[..., tau:] += a * spikes[..., : horizon - tau]
    return out


def _pattern_terms(params, exogenous, target, synaptic_filter, feedback_filter):
    n_hidden = params.hidden.size
    horizon = exogenous.shape[1]
    bits = n_hidden * horizon
    if bits > MAX_HIDDEN_BITS:
        raise EnumerationLimitError(f"|H|*T = {bits} exceeds the enumeration bound {MAX_HIDDEN_BITS}")
    patterns = np.array(list(itertools.product((0.0, 1.0), repeat=bits))).reshape(2**bits, n_hidden, horizon)
    n_pat = patterns.shape[0]
    n = params.n_neurons
    spikes = np.zeros((n_pat, n, horizon))
    spikes[:, params.visible] = target
    spikes[:, params.hidden] = patterns
    sources = np.concatenate([np.broadcast_to(exogenous, (n_pat,) + exogenous.shape), spikes], axis=1)
    syn = _filtered(sources, synaptic_filter.taps)
    fb = _filtered(spikes, feedback_filter.taps)
    u = np.einsum("ik,pkt->pit", params.weights, syn) + params.feedback[None, :, None] * fb + params.bias[None, :, None]
    p = np.clip(1.0 / (1.0 + np.exp(-u)), PROB_EPS, 1 - PROB_EPS)
    logp = spikes * np.log(p) + (1 - spikes) * np.log1p(-p)
    log_hidden = logp[:, params.hidden].sum(axis=(1, 2))
    visible_loss = -logp[:, params.visible].sum(axis=(1, 2))
    return log_hidden, visible_loss


def exact_nll_oracle(
    params: NetworkParams,
    exogenous,
    target,
    synaptic_filter: SynapticFilter | None = None,
    feedback_filter: SynapticFilter | None = None,
) -> float:
    """``-log sum_h p(h || x) p(x || h)`` over all hidden patterns."""
    log_hidden, visible_loss = _pattern_terms(
        params,
        np.asarray(exogenous, dtype=float),
        np.asarray(target, dtype=float),
        synaptic_filter or default_synaptic_filter(),
        feedback_filter or default_feedback_filter(),
    )
    return float(-logsumexp(log_hidden - visible_loss))


def exact_bound(
    params: NetworkParams,
    exogenous,
    target,
    synaptic_filter: SynapticFilter | None = None,
    feedback_filter: SynapticFilter | None = None,
) -> float:
    """``E_{p(h || x)}[sum_t sum_i l(x_it, sigmoid(u_it))]``, the Jensen upper bound on the NLL."""
    log_hidden, visible_loss = _pattern_terms(
        params,
        np.asarray(exogenous, dtype=float),
        np.asarray(target, dtype=float),
        synaptic_filter or default_synaptic_filter(),
        feedback_filter or default_feedback_filter(),
    )
    return float(np.exp(log_hidden) @ visible_loss)
