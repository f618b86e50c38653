"""
Local updates vs communication rounds
=====================================

Two devices, one class each, train a shared spiking classifier. We sweep
the number of local updates between averaging steps and look at how the
devices' own models behave between rounds.

Run with ``python3 notebooks/02_federated_schedules.py`` (about a minute).
"""

import numpy as np

from neurocomm.data import SyntheticSpec, federated_split, generate_synthetic
from neurocomm.federated import DeviceReplica, FLSchedule, make_evaluator, run_fl
from neurocomm.snn import NetworkParams

# %% Data: a non-IID split, class c on device c
kw = dict(seed=0, active_rate=0.35, background_rate=0.07, noise_flip=0.05)
train = generate_synthetic(SyntheticSpec(count=100, **kw))
test = generate_synthetic(SyntheticSpec(count=60, **kw), start=10000)
parts = federated_split(train, {0: 0, 1: 1})
print("device sizes:", [len(p) for p in parts])

# %% Sweep delta_J at delta_t = 10
# With many local steps each device drifts towards its own class: the
# averaged model is good right after a round, then the local copies decay.
delta_t, rounds = 10, 40
for delta_j in (1, 8, 80):
    init = NetworkParams.dense(64, 2, 4, seed=0)
    devices = [DeviceReplica(d, init.copy(), parts[d], seed=d + 1, learning_rate=0.15) for d in range(2)]
    log = run_fl(devices, FLSchedule.for_rounds(delta_t, delta_j, rounds, 40), rounds,
                 make_evaluator(test, 123), eval_every=max(1, delta_j // 4))
    rows = log.rows
    round_end = [r for r in rows if r["phase"] == "local" and r["wall_step"] % (delta_t * delta_j) == 0]
    glob = {r["round"]: r["test_accuracy"] for r in rows if r["phase"] == "global"}
    # accuracy lost between the averaged model and the devices' round-end copies
    drop = np.mean([glob[r["round"] - 1] - r["test_accuracy"] for r in round_end])
    final = np.mean([r["test_accuracy"] for r in round_end if r["round"] > rounds - 10])
    print(f"delta_J={delta_j:3d}: device accuracy at round end (last 10 rounds) {final:.3f}, "
          f"mean drop after averaging {drop:+.3f}")
