"""Empirical variational objectives and their per-sample output gradients.

Every objective takes critic outputs on joint samples ``f_joint`` (length n)
and on product-of-marginals samples ``f_marginal`` (length m) and returns an
:class:`OutputGrads` holding the value and ``d value / d f`` for each sample.
All logarithms are natural, so values are in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, logsumexp

from .errors import MagnitudeError, ParameterError

ESTIMATORS = ("nwj", "mine", "js", "smile")

EXP_LIMIT = 700.0


@dataclass
class Batch:
    """Joint samples and product-of-marginals samples, one row per sample."""

    joint: np.ndarray
    marginal: np.ndarray

    def __post_init__(self):
        self.joint = np.asarray(self.joint, dtype=np.float64)
        self.marginal = np.asarray(self.marginal, dtype=np.float64)
        if self.joint.ndim != 2 or self.marginal.ndim != 2:
            raise ParameterError("batch halves must be 2-D")
        if len(self.joint) < 1 or len(self.marginal) < 1:
            raise ParameterError("batch halves must be non-empty")
        if self.joint.shape[1] != self.marginal.shape[1]:
            raise ParameterError(
                f"column mismatch: joint {self.joint.shape}, marginal {self.marginal.shape}"
            )

    @property
    def n(self) -> int:
        return len(self.joint)

    @property
    def m(self) -> int:
        return len(self.marginal)

    def stacked(self) -> np.ndarray:
        return np.vstack([self.joint, self.marginal])


@dataclass
class OutputGrads:
    value: float
    d_joint: np.ndarray
    d_marginal: np.ndarray


@dataclass(frozen=True)
class EmaState:
    """Running average of ``mean(exp(f_marginal))`` used as the MINE baseline."""

    value: float = 1.0
    decay: float = 0.99
    initialized: bool = False

    def update(self, batch_mean: float) -> "EmaState":
        if not self.initialized:
            return EmaState(batch_mean, self.decay, True)
        return EmaState(self.decay * self.value + (1.0 - self.decay) * batch_mean, self.decay, True)


def _as_outputs(f_joint, f_marginal):
    fj = np.asarray(f_joint, dtype=np.float64)
    fm = np.asarray(f_marginal, dtype=np.float64)
    if fj.ndim != 1 or fm.ndim != 1 or fj.size < 1 or fm.size < 1:
        raise ParameterError("critic outputs must be non-empty 1-D arrays")
    if not (np.all(np.isfinite(fj)) and np.all(np.isfinite(fm))):
        raise ParameterError("critic outputs must be finite")
    return fj, fm


def _guard_exp(fm: np.ndarray) -> None:
    big = np.abs(fm) > EXP_LIMIT
    if big.any():
        idx = int(np.flatnonzero(big)[0])
        raise MagnitudeError(
            f"critic output {fm[idx]:.6g} at marginal sample {idx} exceeds |f| <= {EXP_LIMIT}",
            index=idx,
        )


def tuba_value(f_joint, f_marginal, a: float) -> OutputGrads:
    """Tractable unnormalized bound with constant baseline ``a > 0``."""
    if not a > 0 or not math.isfinite(a):
        raise ParameterError(f"baseline a must be positive and finite, got {a}")
    fj, fm = _as_outputs(f_joint, f_marginal)
    _guard_exp(fm)
    ef = np.exp(fm)
    value = fj.mean() - ef.mean() / a - math.log(a) + 1.0
    return OutputGrads(
        float(value),
        np.full(fj.size, 1.0 / fj.size),
        -ef / (a * fm.size),
    )


def nwj_value(f_joint, f_marginal) -> OutputGrads:
    return tuba_value(f_joint, f_marginal, math.e)


def dv_value(f_joint, f_marginal) -> OutputGrads:
    """Donsker-Varadhan bound, evaluated through a stable log-sum-exp."""
    fj, fm = _as_outputs(f_joint, f_marginal)
    lse = logsumexp(fm)
    value = fj.mean() - lse + math.log(fm.size)
    return OutputGrads(
        float(value),
        np.full(fj.size, 1.0 / fj.size),
        -np.exp(fm - lse),
    )


def gan_objective(f_joint, f_marginal) -> OutputGrads:
    """Discriminator log-likelihood with logits ``f``.

    Uses ``log sigmoid(x) = -softplus(-x)`` and ``log(1 - sigmoid(x)) = -softplus(x)``.
    """
    fj, fm = _as_outputs(f_joint, f_marginal)
    value = -np.logaddexp(0.0, -fj).mean() - np.logaddexp(0.0, fm).mean()
    return OutputGrads(
        float(value),
        expit(-fj) / fj.size,
        -expit(fm) / fm.size,
    )


def mine_value(f_joint, f_marginal, ema: EmaState) -> Tuple[OutputGrads, EmaState]:
    """TUBA with the baseline set to the updated moving average.

    The baseline is treated as a constant: no gradient flows through it.
    """
    fj, fm = _as_outputs(f_joint, f_marginal)
    _guard_exp(fm)
    ema = ema.update(float(np.exp(fm).mean()))
    return tuba_value(fj, fm, ema.value), ema


def js_bound_value(f_joint, f_marginal) -> float:
    fj, fm = _as_outputs(f_joint, f_marginal)
    return nwj_value(fj + 1.0, fm + 1.0).value


def smile_bound_value(f_joint, f_marginal) -> float:
    return dv_value(f_joint, f_marginal).value


def evaluate(kind: str, f_joint, f_marginal, ema: Optional[EmaState] = None):
    """Training objective and reported bound for one estimator.

    Returns ``(train, reported, ema)`` where ``train`` is the maximised
    objective with its output gradients, ``reported`` the MI estimate in nats,
    and ``ema`` the advanced MINE state (unchanged for other estimators).
    """
    if kind == "nwj":
        train = nwj_value(f_joint, f_marginal)
        return train, train.value, ema
    if kind == "mine":
        train, ema = mine_value(f_joint, f_marginal, ema if ema is not None else EmaState())
        return train, train.value, ema
    if kind == "js":
        return gan_objective(f_joint, f_marginal), js_bound_value(f_joint, f_marginal), ema
    if kind == "smile":
        return gan_objective(f_joint, f_marginal), smile_bound_value(f_joint, f_marginal), ema
    raise ParameterError(f"unknown estimator {kind!r}; expected one of {ESTIMATORS}")
