"""
GLM spiking neurons and the three-factor rule
=============================================

A walk through the simulator on a network small enough to enumerate:
causal traces, sampled trajectories, the exact likelihood, and how the
online rule's average update lines up with the gradient of the bound.

Run with ``python3 notebooks/01_glm_neuron.py``.
"""

import numpy as np

from neurocomm.learning import ThreeFactorRule, error_signal
from neurocomm.oracle import exact_bound, exact_nll_oracle
from neurocomm.seeding import make_rng
from neurocomm.snn import NetworkParams, NetworkState, default_synaptic_filter, run_free, step_network

# %% Filters
# Synaptic traces are exponentially weighted sums of past spikes.
syn = default_synaptic_filter()
print("synaptic taps:", np.round(syn.taps, 3))

# %% A tiny network
# Two exogenous inputs, one read-out neuron, two hidden neurons.
params = NetworkParams.dense(2, 1, 2, seed=5, init_scale=1.5)
params.bias[:] = make_rng(1005).uniform(-0.5, 0.5, params.n_neurons)
exo = make_rng(11).integers(0, 2, (2, 5)).astype(float)
target = make_rng(12).integers(0, 2, (1, 5)).astype(float)
print("inputs:\n", exo.astype(int))
print("target:", target.astype(int).ravel())

# %% Free running
raster = run_free(params, exo, make_rng(0))
print("one free-running sample (neurons x time):\n", raster.astype(int))

# %% Exact likelihood vs the bound
# The read-out likelihood marginalises the hidden spikes; moving the log
# inside the expectation gives an upper bound on the negative log-likelihood.
nll = exact_nll_oracle(params, exo, target)
bound = exact_bound(params, exo, target)
print(f"exact NLL {nll:.4f}  <=  bound {bound:.4f}")

# %% The online rule, averaged over many trajectories
n = 50_000
rule = ThreeFactorRule(params, per_sample=True)
state = NetworkState.initial(params, n)
rng = make_rng(13)
for t in range(exo.shape[1]):
    _, loss = step_network(params, state, np.broadcast_to(exo[:, t], (n, 2)), rng,
                           clamp=np.broadcast_to(target[:, t], (n, 1)))
    rule.observe(state, error_signal(loss))
hidden_bias_update = rule.accumulated.bias[:, params.hidden]

# central differences of the enumerated bound
h = 1e-5
fd = []
for i in params.hidden:
    up, down = params.copy(), params.copy()
    up.bias[i] += h
    down.bias[i] -= h
    fd.append(-(exact_bound(up, exo, target) - exact_bound(down, exo, target)) / (2 * h))

mean = hidden_bias_update.mean(axis=0)
se = hidden_bias_update.std(axis=0, ddof=1) / np.sqrt(n)
for i, (m, s, g) in enumerate(zip(mean, se, fd)):
    print(f"hidden neuron {i}: rule {m:+.4f} +- {s:.4f}   exact descent direction {g:+.4f}")
