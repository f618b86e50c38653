"""Three-factor online learning for GLM spiking networks.

Read-out neurons get the supervised term ``(x - sigmoid(u)) * trace``.
Every other neuron is trained through a score-function estimate: its
eligibility (running sum of ``(s - sigmoid(u)) * trace``) is multiplied by
the global error signal, the summed read-out cross-entropy at the step.

Updates are ascent directions on the log-likelihood, i.e. descent on the
cross-entropy bound, so they are applied as ``params += lr * update``. The
error signal is a loss (positive), hence the minus sign on the
error-modulated part.
"""
from __future__ import annotations

import numpy as np

from .snn import GradientTerms, NetworkParams, NetworkState, gradient_terms


def error_signal(per_visible_loss) -> np.ndarray | float:
    """Sum of read-out losses over the last axis."""
    loss = np.asarray(per_visible_loss, dtype=float)
    if loss.ndim == 0:
        return float(loss)
    out = loss.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


class ThreeFactorRule:
    """Accumulates updates for one network.

    Args:
        params: the network being trained (modified in place by ``apply``).
        supervised: neurons that receive the direct term; defaults to the
            network's read-out neurons. Pass an empty array for networks
            whose outputs are themselves latent (e.g. an encoder).
        eligibility_decay: ``kappa`` in ``e <- kappa * e + terms``. ``1.0``
            sums terms since the last ``reset_eligibility``; ``0.0`` pairs
            each step's terms with the same step's error signal only.
        baseline_decay: when set, a running mean of the error signal is
            subtracted before modulation.
        per_sample: keep the batch axis in the accumulator (for estimator
            studies); otherwise rows are summed.
    """

    def __init__(
        self,
        params: NetworkParams,
        supervised: np.ndarray | None = None,
        *,
        eligibility_decay: float = 1.0,
        baseline_decay: float | None = None,
        per_sample: bool = False,
    ):
        self.params = params
        n = params.n_neurons
        sup = params.visible if supervised is None else np.asarray(supervised, dtype=np.intp)
        self.supervised = np.zeros(n, dtype=bool)
        self.supervised[sup] = True
        self.eligibility_decay = float(eligibility_decay)
        self.baseline_decay = baseline_decay
        self.baseline = 0.0
        self.per_sample = per_sample
        self._elig: GradientTerms | None = None
        self.accumulated: GradientTerms | None = None
        self.steps = 0

    def _zeros(self, batch: int) -> GradientTerms:
        p = self.params
        lead = (batch,) if self.per_sample else ()
        return GradientTerms(
            np.zeros(lead + p.weights.shape), np.zeros(lead + p.feedback.shape), np.zeros(lead + p.bias.shape)
        )

    def reset_eligibility(self) -> None:
        self._elig = None

    def observe(self, state: NetworkState, signal) -> None:
        """Fold in the step just executed by ``state`` and its error signal."""
        self.observe_terms(gradient_terms(self.params, state), signal)

    def observe_terms(self, terms: GradientTerms, signal) -> None:
        """Same as ``observe`` from precomputed per-step terms (leading batch axis optional)."""
        if terms.bias.ndim == 1:
            terms = GradientTerms(terms.weights[None], terms.feedback[None], terms.bias[None])
        batch = terms.bias.shape[0]
        if self.accumulated is None:
            self.accumulated = self._zeros(batch)
        sup = self.supervised
        signal = np.broadcast_to(np.asarray(signal, dtype=float), (batch,))
        if self.baseline_decay is not None:
            centred = signal - self.baseline
            self.baseline = self.baseline_decay * self.baseline + (1 - self.baseline_decay) * float(signal.mean())
        else:
            centred = signal

        unsup = ~sup
        if self._elig is None:
            self._elig = GradientTerms(
                np.where(unsup[:, None], terms.weights, 0.0), terms.feedback * unsup, terms.bias * unsup
            )
        else:
            k = self.eligibility_decay
            e = self._elig
            e.weights *= k
            e.weights[:, unsup] += terms.weights[:, unsup]
            e.feedback *= k
            e.feedback += terms.feedback * unsup
            e.bias *= k
            e.bias += terms.bias * unsup

        e = self._elig
        c = centred[:, None]
        dw = np.where(sup[:, None], terms.weights, 0.0) - c[:, :, None] * e.weights
        dfb = terms.feedback * sup - c * e.feedback
        db = terms.bias * sup - c * e.bias
        acc = self.accumulated
        if self.per_sample:
            acc.weights += dw
            acc.feedback += dfb
            acc.bias += db
        else:
            acc.weights += dw.sum(axis=0)
            acc.feedback += dfb.sum(axis=0)
            acc.bias += db.sum(axis=0)
        self.steps += 1

    def apply(self, lr: float) -> None:
        """``params += lr * accumulated``; then clear the accumulator."""
        acc = self.accumulated
        if acc is not None:
            p = self.params
            if self.per_sample:
                p.weights += lr * acc.weights.sum(axis=0)
                p.feedback += lr * acc.feedback.sum(axis=0)
                p.bias += lr * acc.bias.sum(axis=0)
            else:
                p.weights += lr * acc.weights
                p.feedback += lr * acc.feedback
                p.bias += lr * acc.bias
            p.enforce_masks()
        self.accumulated = None
        self.steps = 0

    def clear(self) -> None:
        self.accumulated = None
        self.steps = 0
        self._elig = None
