"""
Spiking joint source-channel coding
===================================

Train an encoder/decoder pair through a noisy on-off keyed link, then look
at accuracy against observation time and against the channel SNR, next to
a classifier that receives the raw raster over the same link.

Run with ``python3 notebooks/03_neurojscc.py`` (about half a minute).
"""

import numpy as np

from neurocomm.data import SyntheticSpec, generate_synthetic
from neurocomm.jscc import (
    Pipeline,
    PipelineConfig,
    Trainer,
    UncodedBaseline,
    encoder_density,
    evaluate_accuracy_vs_snr,
    evaluate_accuracy_vs_time,
)
from neurocomm.seeding import make_rng

# %% Data
train = generate_synthetic(SyntheticSpec(seed=0, count=200))
test = generate_synthetic(SyntheticSpec(seed=0, count=100), start=10**6)
print(f"{len(train)} training rasters of {train.d_o} x {train.horizon}, density {train.density():.3f}")

# %% Build and train at -8 dB, half rate
p = Pipeline.build(PipelineConfig(d_o=64, rate="1/2", horizon=40), seed=0)
print("encoder output density before training:", round(encoder_density(p, train, make_rng(1)), 3))
bounds = Trainer(p).fit(train, 4, make_rng(0, "train"), train_snr_db=-8.0)
q = len(bounds) // 4
print(f"bound estimate: first quarter {np.mean(bounds[:q]):.2f}, last quarter {np.mean(bounds[-q:]):.2f}")
print(f"channel sigma {p.channel.noise_sigma:.3f} for encoder density {p.calibration_density:.3f}")

# %% Accuracy as the decoder sees more of the message
curve = evaluate_accuracy_vs_time(p, test, make_rng(0, "eval"))
print("accuracy at t = 1, 5, 10, 20, 40:", np.round(curve[[0, 4, 9, 19, 39]], 3))

# %% Uncoded raster over the same link
base = UncodedBaseline(64, seed=0).fit(train, 1)
for snr in (None, 0.0, -8.0):
    acc = base.accuracy_vs_time(test, snr, make_rng(0, "eval"))[-1]
    print(f"uncoded classifier, SNR {snr}: final accuracy {acc:.3f}")

# %% Accuracy against SNR
grid = [-12.0, -8.0, -4.0, 0.0, 6.0]
sweep = evaluate_accuracy_vs_snr(p, test, grid, 0)
for snr, acc in zip(grid, sweep):
    print(f"NeuroJSCC at {snr:+5.1f} dB: {acc:.3f}")
