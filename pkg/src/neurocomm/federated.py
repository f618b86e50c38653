"""Federated online training of spiking networks through a base station.

Each device presents its local examples one after another (``T`` steps each)
to its own network copy. Every ``delta_t`` steps it applies the update
accumulated over that interval (one local iteration); every ``delta_j`` local
iterations all devices upload their parameters, the base station forms the
dataset-size weighted average and multicasts it back.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import LabeledSpikeSet, to_fl_target
from .learning import ThreeFactorRule, error_signal
from .readout import DEFAULT_HIGH_RATE, DEFAULT_LOW_RATE, rate_decode
from .seeding import make_rng
from .snn import GradientTerms, NetworkParams, NetworkState, SynapticFilter, run_free, step_network

log = logging.getLogger(__name__)

__all__ = [
    "FLSchedule",
    "DeviceReplica",
    "GlobalModel",
    "ProtocolError",
    "ScheduleError",
    "TrainingLog",
    "broadcast",
    "error_signal",
    "global_average",
    "local_update",
    "make_evaluator",
    "rate_decode",
    "run_fl",
]

LOG_COLUMNS = ("round", "device", "wall_step", "phase", "train_loss", "test_accuracy")


class ScheduleError(ValueError):
    pass


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class FLSchedule:
    """Ties SNN time steps to local iterations and communication rounds.

    ``examples_n * horizon_t`` steps make ``J = N T / delta_t`` local
    iterations, grouped ``delta_j`` per round.
    """

    delta_t: int
    delta_j: int
    examples_n: int
    horizon_t: int

    def __post_init__(self):
        for name in ("delta_t", "delta_j", "examples_n", "horizon_t"):
            if getattr(self, name) < 1:
                raise ScheduleError(f"{name} must be a positive integer")
        if (self.examples_n * self.horizon_t) % self.delta_t:
            raise ScheduleError(
                f"N*T = {self.examples_n * self.horizon_t} steps is not a whole number of "
                f"local iterations of delta_t = {self.delta_t}"
            )

    @classmethod
    def for_rounds(cls, delta_t: int, delta_j: int, rounds: int, horizon_t: int) -> "FLSchedule":
        """Smallest schedule covering ``rounds`` full communication rounds."""
        steps = rounds * delta_t * delta_j
        n = math.ceil(steps / horizon_t)
        while (n * horizon_t) % delta_t:
            n += 1
        return cls(delta_t, delta_j, n, horizon_t)

    @property
    def total_steps(self) -> int:
        return self.examples_n * self.horizon_t

    @property
    def local_iterations(self) -> int:
        return self.total_steps // self.delta_t

    @property
    def rounds(self) -> int:
        return self.local_iterations // self.delta_j

    @property
    def steps_per_round(self) -> int:
        return self.delta_t * self.delta_j

    def communication_steps(self, rounds: int | None = None) -> np.ndarray:
        """Wall-step positions (per device) at which averaging happens."""
        rounds = self.rounds if rounds is None else rounds
        return self.steps_per_round * np.arange(1, rounds + 1)


class DeviceReplica:
    """One device: local parameters, data stream and online learner.

    ``dataset_weight`` is ``|D^(d)|``. Randomness is split into three
    streams derived from ``seed`` (spike sampling, example order, targets).
    """

    def __init__(
        self,
        device_id: int,
        params: NetworkParams,
        dataset: LabeledSpikeSet,
        *,
        seed: int,
        learning_rate: float = 0.05,
        lr_decay: float = 1.0,
        baseline_decay: float | None = None,
        high_rate: float = DEFAULT_HIGH_RATE,
        low_rate: float = DEFAULT_LOW_RATE,
        synaptic_filter: SynapticFilter | None = None,
        feedback_filter: SynapticFilter | None = None,
    ):
        if len(dataset) == 0:
            raise ProtocolError(f"device {device_id} has no data")
        self.id = device_id
        self.params = params
        self.dataset = dataset
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.high_rate = high_rate
        self.low_rate = low_rate
        self.filters = dict(synaptic_filter=synaptic_filter, feedback_filter=feedback_filter)
        self.rule = ThreeFactorRule(params, eligibility_decay=1.0, baseline_decay=baseline_decay)
        self.state = NetworkState.initial(params, 1, **self.filters)
        self.spike_rng = make_rng(seed, "spikes")
        self.order_rng = make_rng(seed, "order")
        self.target_rng = make_rng(seed, "targets")
        self.wall_step = 0
        self.iterations = 0
        self._order: np.ndarray = np.empty(0, dtype=np.intp)
        self._cursor = 0
        self._t = 0
        self._inputs: np.ndarray | None = None
        self._target: np.ndarray | None = None
        self.loss_sum = 0.0
        self.loss_steps = 0

    @property
    def dataset_weight(self) -> int:
        return len(self.dataset)

    @property
    def accumulator(self) -> GradientTerms | None:
        return self.rule.accumulated

    def _next_example(self) -> None:
        if self._cursor >= self._order.size:
            self._order = self.order_rng.permutation(len(self.dataset))
            self._cursor = 0
        idx = self._order[self._cursor]
        self._cursor += 1
        self._inputs = self.dataset.rasters[idx].astype(float)
        label = int(self.dataset.labels[idx])
        self._target = to_fl_target(
            (self._inputs, label), self.params.visible.size, self.target_rng, self.high_rate, self.low_rate
        ).astype(float)
        self._t = 0
        self.state.reset()
        self.rule.reset_eligibility()

    def step(self) -> float:
        """One SNN time step with read-out neurons clamped; returns the summed read-out loss."""
        if self._inputs is None or self._t >= self._inputs.shape[1]:
            self._next_example()
        t = self._t
        _, loss = step_network(
            self.params, self.state, self._inputs[:, t], self.spike_rng, clamp=self._target[:, t]
        )
        signal = error_signal(loss[0])
        self.rule.observe(self.state, signal)
        self._t += 1
        self.wall_step += 1
        self.loss_sum += signal
        self.loss_steps += 1
        return signal

    def current_lr(self) -> float:
        return self.learning_rate * self.lr_decay**self.iterations

    def local_iteration(self, delta_t: int) -> None:
        for _ in range(delta_t):
            self.step()
        self.rule.apply(self.current_lr())
        self.rule.reset_eligibility()
        self.iterations += 1

    def take_loss(self) -> float:
        out = self.loss_sum / self.loss_steps if self.loss_steps else float("nan")
        self.loss_sum = 0.0
        self.loss_steps = 0
        return out


@dataclass
class GlobalModel:
    params: NetworkParams
    round_counter: int = 0


def local_update(
    device: DeviceReplica,
    interval_steps: Sequence[tuple[GradientTerms, float]],
    delta_t: int,
) -> DeviceReplica:
    """Apply one local iteration from precomputed per-step terms and error signals.

    Read-out rows use the summed terms; other rows use the error signal times
    the eligibility accumulated since the start of the interval.
    """
    if len(interval_steps) != delta_t:
        raise ScheduleError(f"interval has {len(interval_steps)} steps, expected delta_t = {delta_t}")
    device.rule.reset_eligibility()
    for terms, signal in interval_steps:
        device.rule.observe_terms(terms, signal)
    device.rule.apply(device.current_lr())
    device.rule.reset_eligibility()
    device.iterations += 1
    return device


def global_average(devices: Sequence[DeviceReplica], round_counter: int = 0) -> GlobalModel:
    """Dataset-size weighted average of all device parameters.

    Computed as ``theta_0 + sum_d (n_d / n) (theta_d - theta_0)`` so that
    averaging identical replicas returns them bit for bit.
    """
    if not devices:
        raise ProtocolError("no devices to average")
    ref = devices[0].params
    for dev in devices[1:]:
        if not ref.compatible(dev.params):
            raise ProtocolError(f"device {dev.id} parameters do not match device {devices[0].id}")
    total = float(sum(dev.dataset_weight for dev in devices))
    if total <= 0:
        raise ProtocolError("total dataset weight must be positive")
    out = ref.copy()
    for name in ("weights", "feedback", "bias"):
        base = getattr(ref, name)
        acc = np.zeros_like(base)
        for dev in devices:
            acc += (dev.dataset_weight / total) * (getattr(dev.params, name) - base)
        getattr(out, name)[...] = base + acc
    return GlobalModel(out, round_counter)


def broadcast(global_model: GlobalModel, devices: Sequence[DeviceReplica], reset_state: bool = False):
    """Overwrite every device's parameters (in place) with the global ones."""
    for dev in devices:
        dev.params.weights[...] = global_model.params.weights
        dev.params.feedback[...] = global_model.params.feedback
        dev.params.bias[...] = global_model.params.bias
        dev.rule.clear()
        if reset_state:
            dev.state.reset()
            dev._inputs = None
    return devices


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    schedule: FLSchedule | None = None
    rounds: int = 0

    def add(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str, **where) -> np.ndarray:
        sel = [r for r in self.rows if all(r[k] == v for k, v in where.items())]
        return np.array([r[name] for r in sel])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in LOG_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def make_evaluator(test_set: LabeledSpikeSet, seed: int, **filters) -> Callable[[NetworkParams], float]:
    """Accuracy of rate decoding at the last step, unclamped, over the whole test set.

    Every call reuses the same noise stream so that successive evaluations of
    a changing model are directly comparable.
    """
    inputs = test_set.rasters.astype(float)
    labels = test_set.labels

    def evaluate(params: NetworkParams) -> float:
        out = run_free(params, inputs, make_rng(seed, "eval"), **filters)
        pred = rate_decode(out[:, params.visible, :])
        return float(np.mean(pred == labels))

    return evaluate


def run_fl(
    devices: Sequence[DeviceReplica],
    schedule: FLSchedule,
    rounds_budget: int | None = None,
    eval_hook: Callable[[NetworkParams], float] | None = None,
    *,
    eval_every: int | None = None,
    reset_on_broadcast: bool = False,
) -> TrainingLog:
    """Run the protocol and return a per-device log.

    Rows with ``phase == "local"`` evaluate each device's own model (at the
    end of every round, and every ``eval_every`` local iterations within it);
    ``phase == "global"`` rows evaluate the model just broadcast.
    """
    if schedule.local_iterations % schedule.delta_j:
        log.warning(
            "discarding trailing partial round: %d local iterations are not a multiple of delta_j = %d",
            schedule.local_iterations,
            schedule.delta_j,
        )
    rounds = schedule.rounds if rounds_budget is None else min(rounds_budget, schedule.rounds)
    if rounds < 1:
        raise ScheduleError("schedule does not contain a single full communication round")
    evaluate = eval_hook or (lambda params: float("nan"))
    out = TrainingLog(schedule=schedule, rounds=rounds)

    acc0 = evaluate(devices[0].params)
    for dev in devices:
        out.add(round=0, device=dev.id, wall_step=0, phase="global", train_loss=float("nan"), test_accuracy=acc0)

    for r in range(1, rounds + 1):
        for dev in devices:
            for j in range(1, schedule.delta_j + 1):
                dev.local_iteration(schedule.delta_t)
                last = j == schedule.delta_j
                if last or (eval_every and j % eval_every == 0):
                    out.add(
                        round=r,
                        device=dev.id,
                        wall_step=dev.wall_step,
                        phase="local",
                        train_loss=dev.take_loss(),
                        test_accuracy=evaluate(dev.params),
                    )
        model = global_average(devices, r)
        broadcast(model, devices, reset_state=reset_on_broadcast)
        acc = evaluate(model.params)
        for dev in devices:
            out.add(
                round=r, device=dev.id, wall_step=dev.wall_step, phase="global", train_loss=float("nan"), test_accuracy=acc
            )
    return out
