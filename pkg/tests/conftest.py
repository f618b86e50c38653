import numpy as np
import pytest

from neurocomm.snn import NetworkParams, NetworkState, SynapticFilter, step_network


def random_network(n_inputs, n_visible, n_hidden=0, seed=0, scale=1.0, bias_scale=0.5):
    """Dense recurrent network with non-trivial weights, feedback and biases."""
    params = NetworkParams.dense(n_inputs, n_visible, n_hidden, seed=seed, init_scale=scale)
    params.bias[:] = np.random.default_rng(seed + 1000).uniform(-bias_scale, bias_scale, params.n_neurons)
    return params


def single_tap():
    return SynapticFilter(np.array([1.0]))


def sampled_losses(params, exogenous, target, n, rng, **filters):
    """Summed clamped read-out loss of ``n`` independent hidden trajectories."""
    exogenous = np.asarray(exogenous, dtype=float)
    target = np.asarray(target, dtype=float)
    state = NetworkState.initial(params, n, **filters)
    total = np.zeros(n)
    for t in range(exogenous.shape[1]):
        x = np.broadcast_to(exogenous[:, t], (n, params.n_inputs))
        c = np.broadcast_to(target[:, t], (n, params.visible.size))
        _, loss = step_network(params, state, x, rng, clamp=c)
        total += loss.sum(axis=1)
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance summary: test_acceptance.py appends (criterion, passed, detail)
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split()[1].rstrip(":"))):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name} {detail}")
