"""Gaussian regression losses for probabilistic box heads.

Two training losses over the 6 encoded box variables: the attenuated
negative log likelihood, and the closed-form KL divergence against a
Gaussian label distribution (which regularizes the predicted variances).
Plus their analytic gradients, label sampling for augmentation, and a
Monte-Carlo estimator used to verify that sampled-label training targets
the same objective as the KL loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import PRED_VAR_FLOOR

__all__ = [
    "GaussianPrediction",
    "LossValue",
    "nll_loss",
    "kld_loss",
    "loss_gradients",
    "sample_label",
    "mc_expected_nll",
    "expected_nll",
]


@dataclass(frozen=True, eq=False)
class GaussianPrediction:
    """Predicted per-variable Gaussian: mean and variance, 6 entries each.

    Variances are floored at PRED_VAR_FLOOR on construction.
    """

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.maximum(np.asarray(self.var, dtype=float), PRED_VAR_FLOOR)
        if mean.shape != (6,) or var.shape != (6,):
            raise ValueError("prediction mean and variance must have 6 entries")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)


@dataclass(frozen=True, eq=False)
class LossValue:
    """Per-variable loss terms in nats; total is their exact sum."""

    per_variable: np.ndarray

    @property
    def total(self):
        return float(self.per_variable.sum())


def nll_loss(pred: GaussianPrediction, target) -> LossValue:
    """Attenuated regression loss: (log var)/2 + residual^2 / (2 var), per variable."""
    y = np.asarray(target, dtype=float)
    per = 0.5 * np.log(pred.var) + (y - pred.mean) ** 2 / (2.0 * pred.var)
    return LossValue(per)


def kld_loss(pred: GaussianPrediction, label, label_var) -> LossValue:
    """Closed-form KL regularizer between label and prediction Gaussians.

    Per variable: log(sig_hat/sig) + sig^2/(2 sig_hat^2) + (y - y_hat)^2/(2 sig_hat^2).
    This equals the exact KL divergence plus the constant 1/2 (the -1/2 term
    of the divergence is dropped).
    """
    y = np.asarray(label, dtype=float)
    s2 = np.asarray(label_var, dtype=float)
    per = (
        0.5 * np.log(pred.var / s2)
        + s2 / (2.0 * pred.var)
        + (y - pred.mean) ** 2 / (2.0 * pred.var)
    )
    return LossValue(per)


def loss_gradients(kind, pred: GaussianPrediction, target, label_var=None) -> np.ndarray:
    """Analytic gradient of the total loss, as a 12-vector.

    Layout: entries 0..5 are d/d(mean), entries 6..11 are d/d(var). With
    label_var -> 0 the KLD gradients degenerate to the NLL ones.
    """
    kind = kind.lower()
    y = np.asarray(target, dtype=float)
    d_mean = (pred.mean - y) / pred.var
    d_var = 1.0 / (2.0 * pred.var) - (y - pred.mean) ** 2 / (2.0 * pred.var**2)
    if kind == "kld":
        if label_var is None:
            raise ValueError("kld gradients need label_var")
        s2 = np.asarray(label_var, dtype=float)
        d_var = d_var - s2 / (2.0 * pred.var**2)
    elif kind != "nll":
        raise ValueError(f"unknown loss kind {kind!r}")
    return np.concatenate([d_mean, d_var])


def sample_label(label, label_var, seed) -> np.ndarray:
    """Gaussian draw around a label, one independent draw per variable.

    Uses a counter-based generator keyed by `seed`, so the draw depends only
    on (seed, inputs) and is reproducible under any call scheduling. Zero
    variances return the label coordinate exactly.
    """
    y = np.asarray(label, dtype=float)
    v = np.asarray(label_var, dtype=float)
    if np.any(v < 0.0):
        raise ValueError("label variances must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    return y + np.sqrt(v) * rng.standard_normal(y.shape)


def expected_nll(pred: GaussianPrediction, label, label_var) -> float:
    """Analytic expectation of the NLL loss under the label distribution.

    Per variable: (log var_hat)/2 + (sig^2 + (y - y_hat)^2) / (2 var_hat),
    summed. Differs from kld_loss(...).total by a term that depends only on
    label_var.
    """
    y = np.asarray(label, dtype=float)
    s2 = np.asarray(label_var, dtype=float)
    per = 0.5 * np.log(pred.var) + (s2 + (y - pred.mean) ** 2) / (2.0 * pred.var)
    return float(per.sum())


def mc_expected_nll(pred: GaussianPrediction, label, label_var, n_samples, seed=0) -> float:
    """Monte-Carlo estimate of expected_nll from sampled labels.

    Averages nll_loss(pred, y*).total over n_samples draws y* ~ N(label,
    label_var). The all-zero-variance case short-circuits to the exact loss.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    y = np.asarray(label, dtype=float)
    v = np.asarray(label_var, dtype=float)
    if np.all(v == 0.0):
        return nll_loss(pred, y).total
    rng = np.random.Generator(np.random.Philox(key=seed))
    sig = np.sqrt(v)
    log_term = float(0.5 * np.log(pred.var).sum())
    acc = 0.0
    done = 0
    while done < n_samples:
        m = min(262_144, n_samples - done)
        z = rng.standard_normal((m, y.size))
        ystar = y + sig * z
        acc += float(((ystar - pred.mean) ** 2 / (2.0 * pred.var)).sum())
        done += m
    return log_term + acc / n_samples
