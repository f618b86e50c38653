"""Experiment runner: ``python3 -m neurocomm <command> [flags]``.

Commands: ``gen-data``, ``fl-train``, ``jscc-train``, ``jscc-eval``.
Settings come from defaults, then ``--config FILE`` (``key=value`` lines,
keys spelled like the long flags), then explicit flags. Every CSV starts with
a ``#`` line echoing the effective settings. Exit codes: 0 success, 2 bad
configuration, 3 unreadable or malformed data.

Sub-seeds are derived from ``--seed`` with :func:`neurocomm.seeding.derive_int`
under fixed keys, e.g. ``("fl", repeat, "init")`` for the initial network of
an FL repeat and ``("fl", repeat, delta_t, delta_j, "device", d)`` for
device ``d``.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .data import DataFormatError, LabeledSpikeSet, SyntheticSpec, atomic_write, federated_split, generate_synthetic
from .data import load_spkt, save_spkt
from .federated import DeviceReplica, FLSchedule, ProtocolError, ScheduleError, make_evaluator, run_fl
from .jscc import (
    DEFAULT_ENCODER_LR,
    DEFAULT_LR,
    Pipeline,
    PipelineConfig,
    Trainer,
    UncodedBaseline,
    encoder_density,
    evaluate_accuracy_vs_snr,
    evaluate_accuracy_vs_time,
    load_pipeline,
    save_pipeline,
)
from .seeding import derive_int, make_rng
from .snn import ConfigurationError, NetworkParams

log = logging.getLogger("neurocomm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

PLOT_SCRIPT = '''"""Plots the CSVs written next to this script (needs matplotlib)."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent


def read(name):
    with open(here / name) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    head, body = rows[0], rows[1:]
    return head, [[float(v) for v in r] for r in body]


fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, name, xlabel in (
    (axes[0], "accuracy_vs_time.csv", "observed time steps"),
    (axes[1], "accuracy_vs_snr.csv", "SNR (dB)"),
):
    head, body = read(name)
    xs = [r[0] for r in body]
    for j, label in enumerate(head[1:], start=1):
        ax.plot(xs, [r[j] for r in body], marker="o", ms=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
fig.tight_layout()
fig.savefig(here / "accuracy.png", dpi=120)
'''


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# argument types


def _uint64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text!r}")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {text!r}")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text!r}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
    return value


def _snr(text: str) -> float | None:
    """A dB value, or ``none`` for a noiseless link."""
    return None if text.lower() in ("none", "inf", "noiseless") else float(text)


def _fraction(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
    return value


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurocomm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value settings file; explicit flags take precedence")
        p.add_argument("--seed", type=_uint64, default=0, help="global seed (unsigned 64-bit)")

    p = sub.add_parser("gen-data", help="write a synthetic labelled spike dataset (SPKT)")
    common(p)
    p.add_argument("--classes", type=_positive_int, default=2)
    p.add_argument("--channels", type=_positive_int, default=64)
    p.add_argument("--horizon", type=_positive_int, default=40)
    p.add_argument("--count", type=_positive_int, default=200)
    p.add_argument("--start", type=_nonnegative_int, default=0, help="index of the first example in the stream")
    p.add_argument("--density", type=_probability, default=0.2, help="fraction of channels in a class pattern")
    p.add_argument("--active-rate", type=_probability, default=0.5)
    p.add_argument("--background-rate", type=_probability, default=0.02)
    p.add_argument("--noise-flip", type=_probability, default=0.05)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fl-train", help="federated training sweep over delta-t and delta-J")
    common(p)
    p.add_argument("--data", required=True, help="training set (SPKT)")
    p.add_argument("--test-data", help="test set (SPKT); defaults to the training set")
    p.add_argument("--devices", type=_positive_int, default=2)
    p.add_argument("--delta-t", type=_positive_int, nargs="+", default=[10])
    p.add_argument("--delta-j", type=_positive_int, nargs="+", default=[1])
    p.add_argument("--rounds", type=_positive_int, default=40)
    p.add_argument("--examples", type=_positive_int, help="examples per device (N); default: just enough for --rounds")
    p.add_argument("--lr", type=_positive_float, default=0.05)
    p.add_argument("--hidden", type=_nonnegative_int, default=4)
    p.add_argument("--eval-every", type=_nonnegative_int, default=0, help="local iterations between in-round evaluations")
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("jscc-train", help="train an encoder/decoder pipeline through the channel")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--rate", type=_fraction, default=Fraction(1, 2), help="d_x / d_o, e.g. 1/2")
    p.add_argument("--hidden", type=_nonnegative_int, help="decoder hidden neurons (default d_x)")
    p.add_argument("--train-snr-db", type=_snr, default=-8.0, help="training SNR in dB, or 'none'")
    p.add_argument("--epochs", type=_positive_int, default=4)
    p.add_argument("--lr", type=_positive_float, default=DEFAULT_LR)
    p.add_argument("--encoder-lr", type=float, default=DEFAULT_ENCODER_LR)
    p.add_argument("--out", required=True, help="parameter file; the manifest goes to OUT.manifest")
    p.add_argument("--log", help="optional CSV of the per-example bound estimate")

    p = sub.add_parser("jscc-eval", help="accuracy vs time and vs SNR for a trained pipeline")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="test set (SPKT)")
    p.add_argument("--snr-db", type=_snr, default=-8.0, help="SNR of the accuracy-vs-time curve, or 'none'")
    p.add_argument("--snr-grid", type=float, nargs="+", default=[-12.0, -8.0, -4.0, 0.0, 6.0])
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--baseline", choices=("none", "uncoded"), default="none")
    p.add_argument("--baseline-data", help="training set for the uncoded classifier")
    p.add_argument("--baseline-epochs", type=_positive_int, default=1)
    p.add_argument("--out-dir", required=True)
    return parser


def read_config(path: str | Path) -> list[tuple[str, str]]:
    """``key=value`` pairs in file order; blank lines and ``#`` comments skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CommandError(f"cannot read config file {path}: {exc.strerror}", EXIT_CONFIG) from None
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CommandError(f"{path}:{lineno}: expected key=value, got {line!r}", EXIT_CONFIG)
        pairs.append((key.strip().replace("_", "-"), value.strip()))
    return pairs


def _config_tokens(pairs, subparser: argparse.ArgumentParser, path) -> list[str]:
    known = {a.dest.replace("_", "-"): a for a in subparser._actions if a.option_strings}
    tokens = []
    for key, value in pairs:
        action = known.get(key)
        if action is None or key == "config":
            raise CommandError(f"{path}: unknown setting {key!r}", EXIT_CONFIG)
        tokens.append(f"--{key}")
        tokens.extend(value.replace(",", " ").split() if action.nargs == "+" else [value])
    return tokens


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        tokens = _config_tokens(read_config(args.config), subparser, args.config)
        idx = argv.index(args.command)
        # flags after the config-derived tokens win
        args = parser.parse_args(argv[: idx + 1] + tokens + argv[idx + 1 :])
    return args


def provenance(args: argparse.Namespace) -> str:
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    parts = []
    for k, v in items.items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        parts.append(f"{k}={v}")
    return "# neurocomm " + " ".join(parts) + "\n"


def _csv_text(args, header, rows) -> str:
    buf = io.StringIO()
    buf.write(provenance(args))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else repr(round(float(v), 10))
    return str(v)


def _load(path: str | None, what: str) -> LabeledSpikeSet:
    try:
        data = load_spkt(path)
    except FileNotFoundError:
        raise CommandError(f"{what} file not found: {path}", EXIT_DATA) from None
    except DataFormatError as exc:
        raise CommandError(f"{what} file {path}: {exc}", EXIT_DATA) from None
    if data.labels is None:
        raise CommandError(f"{what} file {path} has no labels", EXIT_DATA)
    return data


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> None:
    spec = SyntheticSpec(
        d_o=args.channels,
        horizon=args.horizon,
        class_count=args.classes,
        pattern_density=args.density,
        noise_flip=args.noise_flip,
        seed=args.seed,
        count=args.count,
        active_rate=args.active_rate,
        background_rate=args.background_rate,
    )
    data = generate_synthetic(spec, start=args.start)
    save_spkt(data, args.out)
    log.info("wrote %d examples (%d x %d) to %s", len(data), data.d_o, data.horizon, args.out)


def _fl_schedules(args, horizon: int) -> dict[tuple[int, int], FLSchedule]:
    out = {}
    for dt in args.delta_t:
        for dj in args.delta_j:
            if args.examples is None:
                out[dt, dj] = FLSchedule.for_rounds(dt, dj, args.rounds, horizon)
            else:
                sched = FLSchedule(dt, dj, args.examples, horizon)
                if sched.rounds < args.rounds:
                    raise ScheduleError(
                        f"delta_t={dt}, delta_j={dj}: {args.examples} examples give only {sched.rounds} rounds, "
                        f"{args.rounds} requested"
                    )
                out[dt, dj] = sched
    return out


def cmd_fl_train(args) -> None:
    train = _load(args.data, "training")
    test = _load(args.test_data, "test") if args.test_data else train
    if not args.test_data:
        log.warning("no --test-data: evaluating on the training set")
    if test.d_o != train.d_o:
        raise CommandError(f"test set has {test.d_o} channels, training set {train.d_o}", EXIT_DATA)
    schedules = _fl_schedules(args, train.horizon)  # fail before any training
    # non-IID split: class c lives on device c mod D
    parts = federated_split(train, {c: c % args.devices for c in range(train.class_count)})
    header = ["delta_t", "delta_j", "round", "device", "wall_step", "phase", "train_loss", "test_accuracy"]
    header += [f"test_accuracy_rep{r}" for r in range(args.repeats)]
    rows = []
    for (dt, dj), sched in schedules.items():
        logs = []
        for rep in range(args.repeats):
            init = NetworkParams.dense(
                train.d_o, train.class_count, args.hidden, seed=derive_int(args.seed, "fl", rep, "init")
            )
            devices = [
                DeviceReplica(
                    d, init.copy(), parts[d], seed=derive_int(args.seed, "fl", rep, dt, dj, "device", d), learning_rate=args.lr
                )
                for d in range(args.devices)
            ]
            evaluator = make_evaluator(test, derive_int(args.seed, "fl", rep, "eval"))
            logs.append(run_fl(devices, sched, args.rounds, evaluator, eval_every=args.eval_every or None).rows)
            log.info("delta_t=%d delta_j=%d repeat %d done", dt, dj, rep)
        rows.extend(_fl_rows(dt, dj, logs))
    atomic_write(args.out, _csv_text(args, header, rows).encode())


def _fl_rows(dt: int, dj: int, logs: list[list[dict]]) -> list[list]:
    """Per-device rows plus a device-mean row for every evaluation point; accuracy averaged over repeats."""
    out = []
    group: list[list[dict]] = []

    def flush():
        if not group:
            return
        first = group[0][0]
        accs = np.array([[r["test_accuracy"] for r in g] for g in group])  # (devices, repeats)
        losses = np.array([[r["train_loss"] for r in g] for g in group])
        for g, acc, loss in zip(group, accs, losses):
            out.append([dt, dj, first["round"], g[0]["device"], first["wall_step"], first["phase"],
                        float(np.mean(loss)), float(np.mean(acc)), *acc])
        mean_acc = accs.mean(axis=0)
        out.append([dt, dj, first["round"], "mean", first["wall_step"], first["phase"],
                    float(np.mean(losses)), float(np.mean(mean_acc)), *mean_acc])
        group.clear()

    for rows in zip(*logs):
        key = (rows[0]["round"], rows[0]["phase"], rows[0]["wall_step"])
        if group and (group[0][0]["round"], group[0][0]["phase"], group[0][0]["wall_step"]) != key:
            flush()
        group.append(list(rows))
    flush()
    return out


def cmd_jscc_train(args) -> None:
    data = _load(args.data, "training")
    config = PipelineConfig(
        d_o=data.d_o, rate=args.rate, d_v=data.class_count, horizon=data.horizon, decoder_hidden=args.hidden
    )
    pipeline = Pipeline.build(config, seed=derive_int(args.seed, "jscc", "init"))
    trainer = Trainer(pipeline, args.lr, encoder_lr=args.encoder_lr)
    bounds = trainer.fit(data, args.epochs, make_rng(args.seed, "jscc", "train"), train_snr_db=args.train_snr_db)
    if args.train_snr_db is None:
        pipeline.calibration_density = encoder_density(pipeline, data, make_rng(args.seed, "jscc", "density"))
    save_pipeline(
        pipeline,
        args.out,
        extra={"seed": args.seed, "train_snr_db": args.train_snr_db, "epochs": args.epochs, "lr": args.lr,
               "encoder_lr": args.encoder_lr, "data": args.data},
    )
    if args.log:
        atomic_write(args.log, _csv_text(args, ["example", "bound"], enumerate(bounds)).encode())
    log.info("trained on %d examples x %d epochs, final bound %.3f", len(data), args.epochs, bounds[-1])


def cmd_jscc_eval(args) -> None:
    try:
        pipeline = load_pipeline(args.model)
    except FileNotFoundError as exc:
        raise CommandError(f"model file not found: {exc.filename}", EXIT_DATA) from None
    except (ValueError, KeyError) as exc:
        raise CommandError(f"model {args.model}: {exc}", EXIT_DATA) from None
    test = _load(args.data, "test")
    cfg = pipeline.config
    if (test.d_o, test.horizon) != (cfg.d_o, cfg.horizon):
        raise ConfigurationError(
            f"test set is {test.d_o} x {test.horizon}, model expects {cfg.d_o} x {cfg.horizon}"
        )
    if args.baseline == "uncoded" and not args.baseline_data:
        raise ConfigurationError("--baseline uncoded needs --baseline-data")

    def at(snr):
        return pipeline.with_channel(None) if snr is None else pipeline.calibrate(snr)

    curves = {"neurojscc": np.mean(
        [evaluate_accuracy_vs_time(at(args.snr_db), test, make_rng(args.seed, "eval", "time", r)) for r in range(args.repeats)],
        axis=0,
    )}
    sweeps = {"neurojscc": evaluate_accuracy_vs_snr(pipeline, test, args.snr_grid, derive_int(args.seed, "eval", "snr"), args.repeats)}
    if args.baseline == "uncoded":
        train = _load(args.baseline_data, "baseline training")
        base = UncodedBaseline(cfg.d_o, cfg.d_v, seed=derive_int(args.seed, "uncoded")).fit(train, args.baseline_epochs)
        curves["uncoded"] = np.mean(
            [base.accuracy_vs_time(test, args.snr_db, make_rng(args.seed, "uncoded", "time", r)) for r in range(args.repeats)],
            axis=0,
        )
        sweeps["uncoded"] = np.array([
            np.mean([base.accuracy_vs_time(test, s, make_rng(args.seed, "uncoded", "snr", i, r))[-1] for r in range(args.repeats)])
            for i, s in enumerate(args.snr_grid)
        ])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(curves)
    time_rows = [[t + 1, *(curves[n][t] for n in names)] for t in range(cfg.horizon)]
    snr_rows = [[s, *(sweeps[n][i] for n in names)] for i, s in enumerate(args.snr_grid)]
    atomic_write(out / "accuracy_vs_time.csv", _csv_text(args, ["t", *names], time_rows).encode())
    atomic_write(out / "accuracy_vs_snr.csv", _csv_text(args, ["snr_db", *names], snr_rows).encode())
    atomic_write(out / "plot_figures.py", PLOT_SCRIPT.encode())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "fl-train": cmd_fl_train,
    "jscc-train": cmd_jscc_train,
    "jscc-eval": cmd_jscc_eval,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    except CommandError as exc:
        print(f"neurocomm: error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"neurocomm: error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, ScheduleError, ProtocolError) as exc:
        print(f"neurocomm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"neurocomm: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK
