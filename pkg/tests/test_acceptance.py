"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end of the run."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, random_network, sampled_losses
from neurocomm.channel import ChannelConfig, calibrate_sigma, linear_to_db, measured_snr, transmit
from neurocomm.cli import main
from neurocomm.data import (
    LabeledSpikeSet,
    SyntheticSpec,
    decode_spkt,
    encode_spkt,
    federated_split,
    generate_synthetic,
)
from neurocomm.federated import DeviceReplica, FLSchedule, make_evaluator, run_fl
from neurocomm.jscc import (
    Pipeline,
    PipelineConfig,
    Trainer,
    UncodedBaseline,
    evaluate_accuracy_vs_snr,
    evaluate_accuracy_vs_time,
    load_pipeline,
    save_pipeline,
)
from neurocomm.learning import ThreeFactorRule, error_signal
from neurocomm.oracle import exact_bound, exact_nll_oracle
from neurocomm.seeding import make_rng
from neurocomm.snn import NetworkParams, NetworkState, step_network


def record(number, ok, detail):
    ACCEPTANCE_RESULTS.append((f"criterion {number}:", bool(ok), detail))
    return ok


def max_dip(curve):
    """Largest drop below the running maximum."""
    curve = np.asarray(curve)
    return float(np.max(np.maximum.accumulate(curve) - curve))


def clamped_total_loss(params, exo, target, seed):
    state = NetworkState.initial(params)
    rng = make_rng(seed)
    total = 0.0
    for t in range(exo.shape[1]):
        _, loss = step_network(params, state, exo[:, t], rng, clamp=target[:, t])
        total += loss.sum()
    return total


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    params = random_network(2, 2, 1, seed=21)  # 3 neurons, one hidden
    exo = make_rng(1).integers(0, 2, (2, 25)).astype(float)
    target = make_rng(2).integers(0, 2, (2, 25)).astype(float)
    rule = ThreeFactorRule(params)
    state = NetworkState.initial(params)
    rng = make_rng(7)
    for t in range(25):
        _, loss = step_network(params, state, exo[:, t], rng, clamp=target[:, t])
        rule.observe(state, error_signal(loss[0]))
    acc = rule.accumulated
    vis = params.visible
    analytic = np.concatenate([acc.weights[vis][params.mask[vis]], acc.feedback[vis], acc.bias[vis]])

    def perturbed(kind, i, k, h):
        q = params.copy()
        if kind == "w":
            q.weights[i, k] += h
        elif kind == "fb":
            q.feedback[i] += h
        else:
            q.bias[i] += h
        return clamped_total_loss(q, exo, target, 7)

    h = 1e-6
    coords = [("w", i, k) for i in vis for k in range(params.weights.shape[1]) if params.mask[i, k]]
    coords += [("fb", i, 0) for i in vis] + [("b", i, 0) for i in vis]
    fd = np.array([-(perturbed(c, i, k, h) - perturbed(c, i, k, -h)) / (2 * h) for c, i, k in coords])
    rel = float(np.max(np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-3)))
    elapsed = time.perf_counter() - start
    ok = record(1, rel <= 1e-4 and elapsed < 5, f"max rel error {rel:.2e} over {fd.size} visible params; {elapsed:.2f}s")
    assert ok


def test_criterion_2_estimator_unbiasedness():
    start = time.perf_counter()
    params = random_network(2, 1, 2, seed=5, scale=1.5)
    horizon, n = 5, 10**5
    exo = make_rng(11).integers(0, 2, (2, horizon)).astype(float)
    target = make_rng(12).integers(0, 2, (1, horizon)).astype(float)
    rule = ThreeFactorRule(params, per_sample=True)
    state = NetworkState.initial(params, n)
    rng = make_rng(13)
    for t in range(horizon):
        x = np.broadcast_to(exo[:, t], (n, 2))
        c = np.broadcast_to(target[:, t], (n, 1))
        _, loss = step_network(params, state, x, rng, clamp=c)
        rule.observe(state, error_signal(loss))
    upd = rule.accumulated
    hid = params.hidden
    samples, exact = [], []
    h = 1e-5

    def bound_at(kind, i, k, delta):
        q = params.copy()
        if kind == "w":
            q.weights[i, k] += delta
        elif kind == "fb":
            q.feedback[i] += delta
        else:
            q.bias[i] += delta
        return exact_bound(q, exo, target)

    for i in hid:
        for k in range(params.weights.shape[1]):
            if params.mask[i, k]:
                samples.append(upd.weights[:, i, k])
                exact.append(-(bound_at("w", i, k, h) - bound_at("w", i, k, -h)) / (2 * h))
        samples.append(upd.feedback[:, i])
        exact.append(-(bound_at("fb", i, 0, h) - bound_at("fb", i, 0, -h)) / (2 * h))
        samples.append(upd.bias[:, i])
        exact.append(-(bound_at("b", i, 0, h) - bound_at("b", i, 0, -h)) / (2 * h))
    samples = np.array(samples)
    z = (samples.mean(axis=1) - np.array(exact)) / (samples.std(axis=1, ddof=1) / math.sqrt(n))
    elapsed = time.perf_counter() - start
    worst = float(np.max(np.abs(z)))
    ok = record(
        2, worst <= 3 and elapsed < 120,
        f"{z.size} hidden params, 10^5 trajectories, max |mean - FD| = {worst:.2f} SE; {elapsed:.1f}s",
    )
    assert ok


def test_criterion_3_jensen_direction():
    start = time.perf_counter()
    rng = make_rng(31)
    margins = []
    for net in range(20):
        n_hidden = 1 + net % 2
        horizon = 4 if n_hidden == 2 else 6
        params = random_network(2, 1 + net % 2, n_hidden, seed=100 + net, scale=1.5)
        exo = rng.integers(0, 2, (2, horizon))
        target = rng.integers(0, 2, (params.visible.size, horizon))
        nll = exact_nll_oracle(params, exo, target)
        losses = sampled_losses(params, exo, target, 20000, make_rng(32, net))
        se = losses.std(ddof=1) / math.sqrt(losses.size)
        margins.append((losses.mean() + 3 * se - nll, exact_bound(params, exo, target) - nll))
    margins = np.array(margins)
    elapsed = time.perf_counter() - start
    ok = record(
        3, np.all(margins >= 0) and elapsed < 60,
        f"20 networks; min (MC bound + 3 SE - exact NLL) = {margins[:, 0].min():.4f}, "
        f"min (exact bound - NLL) = {margins[:, 1].min():.4f}; {elapsed:.1f}s",
    )
    assert ok


def test_criterion_4_fl_identity():
    data = generate_synthetic(SyntheticSpec(d_o=8, horizon=10, count=12, seed=4))
    init = NetworkParams.dense(8, 2, 3, seed=4)
    rounds = 12
    solo = DeviceReplica(0, init.copy(), data, seed=9, learning_rate=0.1)
    expected = [init.flat()]
    for _ in range(rounds):
        solo.local_iteration(5)
        expected.append(solo.params.flat())
    seen = []
    devs = [DeviceReplica(d, init.copy(), data, seed=9, learning_rate=0.1) for d in range(2)]
    run_fl(devs, FLSchedule.for_rounds(5, 1, rounds, 10), rounds, lambda p: seen.append(p.flat()) or 0.0)
    # hook order per round: device 0 local, device 1 local, global
    got_global = [seen[0]] + seen[3::3]
    got_local = seen[1::3] + seen[2::3]
    same = all(np.array_equal(a, b) for a, b in zip(got_global, expected)) and len(got_global) == rounds + 1
    same &= all(np.array_equal(a, b) for a, b in zip(got_local, expected[1:] * 2))
    ok = record(4, same, f"{rounds} rounds, global and per-device parameters bit-identical to standalone: {same}")
    assert ok


def _fl_run(seed, dj, rounds=40, dt=10):
    kw = dict(seed=seed, active_rate=0.35, background_rate=0.07, noise_flip=0.05)
    train = generate_synthetic(SyntheticSpec(count=100, **kw))
    test = generate_synthetic(SyntheticSpec(count=60, **kw), start=10000)
    parts = federated_split(train, {0: 0, 1: 1})
    init = NetworkParams.dense(64, 2, 4, seed=seed)
    devs = [DeviceReplica(d, init.copy(), parts[d], seed=seed * 10 + d + 1, learning_rate=0.15) for d in range(2)]
    log = run_fl(devs, FLSchedule.for_rounds(dt, dj, rounds, 40), rounds, make_evaluator(test, 123), eval_every=max(1, dj // 4))
    round_end = [r for r in log.rows if r["phase"] == "local" and r["wall_step"] % (dt * dj) == 0]
    final = np.mean([r["test_accuracy"] for r in round_end if r["round"] > rounds - 10])
    glob = {r["round"]: r["test_accuracy"] for r in log.rows if r["phase"] == "global"}
    drop = np.mean([glob[r["round"] - 1] - r["test_accuracy"] for r in round_end])
    return final, drop


def test_criterion_5_fl_schedule_ordering():
    start = time.perf_counter()
    acc, drop80 = {}, []
    for dj in (1, 8, 80):
        runs = [_fl_run(seed, dj) for seed in range(3)]
        acc[dj] = float(np.mean([r[0] for r in runs]))
        if dj == 80:
            drop80 = float(np.mean([r[1] for r in runs]))
    elapsed = time.perf_counter() - start
    gap = acc[1] - acc[8]
    ok = acc[1] >= acc[8] >= acc[80] and gap >= 0.05 and drop80 >= 0.05 and elapsed < 600
    record(
        5, ok,
        f"acc(dJ=1,8,80) = {acc[1]:.3f} / {acc[8]:.3f} / {acc[80]:.3f}, first gap {100 * gap:.1f} pts, "
        f"dJ=80 within-round drop {100 * drop80:.1f} pts; {elapsed:.0f}s",
    )
    assert ok


def test_criterion_6_channel_statistics():
    n = 10**6
    worst = 0.0
    for sigma in (0.25, 0.5, 1.0):
        cfg = ChannelConfig(0.0, sigma, 2)
        x = np.zeros((2, n))
        x[0] = 1
        y = transmit(x, cfg, make_rng(61, int(sigma * 100)))
        p01, p10 = cfg.flip_probabilities()
        for emp, q in ((1 - y[0].mean(), p10), (y[1].mean(), p01)):
            worst = max(worst, abs(emp - q) / math.sqrt(q * (1 - q) / n))
    rel = 0.0
    rng = make_rng(62)
    for density in (0.01, 0.1, 0.25, 0.5, 1.0):
        for snr_db in (-12.0, -8.0, -6.0, 0.0, 6.0, 40.0):
            x = np.zeros((32, 125))
            x.flat[rng.permutation(x.size)[: int(round(density * x.size))]] = 1
            sigma = calibrate_sigma(density, snr_db)
            target = 10 ** (snr_db / 10)
            rel = max(rel, abs(measured_snr(x, sigma) - target) / target)
    ok = record(6, worst <= 3 and rel <= 1e-9, f"max flip deviation {worst:.2f} binomial SD; max SNR rel error {rel:.1e}")
    assert ok


def _jscc_trained(seed, snr_db):
    train = generate_synthetic(SyntheticSpec(seed=seed, count=200))
    cfg = PipelineConfig(d_o=64, rate=Fraction(1, 2), horizon=40)
    p = Pipeline.build(cfg, seed=seed)
    Trainer(p, 5e-4, encoder_lr=2.5e-4).fit(train, 4, make_rng(seed, "train"), train_snr_db=snr_db)
    return p, train


def test_criterion_7_accuracy_vs_time():
    start = time.perf_counter()
    curves, uncoded = [], []
    for seed in range(3):
        test = generate_synthetic(SyntheticSpec(seed=seed, count=100), start=10**6)
        p, train = _jscc_trained(seed, -8.0)
        curves.append(evaluate_accuracy_vs_time(p, test, make_rng(seed, "eval")))
        base = UncodedBaseline(64, seed=seed).fit(train, 1)
        uncoded.append(base.accuracy_vs_time(test, -8.0, make_rng(seed, "eval"))[-1])
    curve = np.mean(curves, axis=0)
    dip, final, unc = max_dip(curve), float(curve[-1]), float(np.mean(uncoded))
    elapsed = time.perf_counter() - start
    clauses = {
        "nondecreasing (3 pts)": dip <= 0.03,
        "lead >= 10 pts": final - unc >= 0.10,
        "uncoded <= 55%": unc <= 0.55,
        "< 10 min": elapsed < 600,
    }
    ok = all(clauses.values())
    failed = [k for k, v in clauses.items() if not v]
    record(
        7, ok,
        f"NeuroJSCC final {final:.3f}, max dip {100 * dip:.1f} pts, uncoded {unc:.3f} "
        f"(per seed {', '.join(f'{u:.2f}' for u in uncoded)}); {elapsed:.0f}s"
        + (f"; failed: {', '.join(failed)}" if failed else ""),
    )
    assert ok, clauses


def test_criterion_8_accuracy_vs_snr():
    grid = [-12.0, -8.0, -4.0, 0.0, 6.0]
    sweeps = []
    for seed in range(3):
        test = generate_synthetic(SyntheticSpec(seed=seed, count=100), start=10**6)
        p, _ = _jscc_trained(seed, -6.0)
        sweeps.append(evaluate_accuracy_vs_snr(p, test, grid, seed, repetitions=3))
    sweep = np.mean(sweeps, axis=0)
    dip = max_dip(sweep)
    ratio = float(sweep[4] / sweep[3])
    ok = record(
        8, dip <= 0.03 and ratio >= 0.9,
        f"accuracy at {grid} dB = {np.round(sweep, 3).tolist()}, max dip {100 * dip:.1f} pts, +6/0 dB ratio {ratio:.3f}",
    )
    assert ok


def test_criterion_9_determinism_and_formats(tmp_path):
    gen = ["gen-data", "--channels", "12", "--horizon", "10", "--seed", "3"]
    ok_cli = True
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        train, test = str(d / "train.spkt"), str(d / "test.spkt")
        codes = [
            main([*gen, "--count", "30", "--out", train]),
            main([*gen, "--count", "10", "--start", "500", "--out", test]),
            main(["fl-train", "--data", train, "--test-data", test, "--delta-t", "1", "5", "--delta-j", "1", "2",
                  "--rounds", "2", "--repeats", "2", "--seed", "4", "--out", str(d / "fl.csv")]),
            main(["jscc-train", "--data", train, "--epochs", "1", "--seed", "4", "--out", str(d / "m.njsc"),
                  "--log", str(d / "bound.csv")]),
            main(["jscc-eval", "--model", str(d / "m.njsc"), "--data", test, "--repeats", "1", "--seed", "4",
                  "--baseline", "uncoded", "--baseline-data", train, "--out-dir", str(d / "eval")]),
        ]
        ok_cli &= codes == [0] * 5
        files = {p.relative_to(d): p.read_bytes().replace(str(d).encode(), b"@") for p in d.rglob("*") if p.is_file()}
        outputs.append(files)
    ok_cli &= outputs[0] == outputs[1] and len(outputs[0]) == 9

    rng = make_rng(91)
    spkt_ok = 0
    for _ in range(1000):
        n, d, horizon, classes = rng.integers(0, 5), rng.integers(1, 20), rng.integers(1, 20), rng.integers(1, 6)
        rasters = (rng.random((n, d, horizon)) < rng.random()).astype(np.uint8)
        labels = rng.integers(0, classes, n) if n and rng.random() < 0.8 else None
        data = LabeledSpikeSet(rasters, labels, classes)
        back = decode_spkt(encode_spkt(data), classes)
        same = np.array_equal(back.rasters, rasters) and back.rasters.shape == rasters.shape
        same &= (labels is None and (back.labels is None or back.labels.size == 0)) or np.array_equal(back.labels, labels)
        spkt_ok += bool(same)

    njsc_ok = 0
    path = tmp_path / "rt.njsc"
    for i in range(1000):
        d_o = int(rng.integers(1, 7))
        rate = Fraction(int(rng.integers(1, 4)), 1) if rng.random() < 0.5 else Fraction(1, 1)
        cfg = PipelineConfig(d_o=d_o, rate=rate, d_v=int(rng.integers(1, 4)), horizon=int(rng.integers(1, 50)),
                             decoder_hidden=int(rng.integers(0, 4)), encoder_hidden=int(rng.integers(0, 3)),
                             readout_recurrent=bool(rng.random() < 0.5))
        p = Pipeline.build(cfg, seed=i)
        for net in (p.encoder, p.decoder):
            vals = rng.standard_normal(net.flat().size) * 10.0 ** rng.integers(-300, 300, net.flat().size)
            net.load_flat(vals)
        if rng.random() < 0.5:
            p = p.calibrate(float(rng.uniform(-20, 20)), float(rng.uniform(0.01, 1)))
        save_pipeline(p, path)
        q = load_pipeline(path)
        same = q.config == p.config and q.channel == p.channel and q.calibration_density == p.calibration_density
        same &= q.encoder.flat().tobytes() == p.encoder.flat().tobytes()
        same &= q.decoder.flat().tobytes() == p.decoder.flat().tobytes()
        njsc_ok += bool(same)
    ok = record(
        9, ok_cli and spkt_ok == 1000 and njsc_ok == 1000,
        f"CLI outputs byte-identical: {ok_cli}; SPKT round-trips {spkt_ok}/1000; NJSC round-trips {njsc_ok}/1000",
    )
    assert ok
