"""Finite-difference verification of every analytic gradient in the package."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import complexity, critics, estimators, harness
from .complexity import RegWeights
from .critics import AsklParams
from .estimators import Batch, EmaState
from .numkit import RngStream

FD_STEP = 1e-5


@dataclass
class CheckResult:
    component: str
    max_rel_error: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest coordinate error relative to the larger of the two values.

    The denominator is floored at 1e-4 of the component's largest magnitude so
    that coordinates whose true derivative is ~0 do not dominate.
    """
    a = np.ravel(analytic)
    b = np.ravel(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4 * scale)
    return float(np.max(np.abs(a - b) / denom))


def numeric_grad(fn: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``fn`` with respect to ``x``, perturbed in place."""
    out = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return out


def _small_askl(rng: RngStream, d: int = 2, D: int = 4) -> AsklParams:
    p = critics.askl_init(rng, d, D)
    p.w = rng.gen.uniform(-3, 3, D)
    return p


def _small_batch(rng: RngStream, d: int, n: int = 3, m: int = 3) -> Batch:
    return Batch(rng.gen.uniform(-3, 3, (n, d)), rng.gen.uniform(-3, 3, (m, d)))


def _downstream(f: np.ndarray, c: np.ndarray):
    """Smooth test loss ``sum(c f) + 0.5 sum f^2`` and its output gradient."""
    return float(c @ f + 0.5 * f @ f), c + f


def _check_params(prefix: str, p, loss: Callable[[object], float], grads: Dict[str, np.ndarray]) -> List[CheckResult]:
    results = []
    arrays = {k: v.copy() for k, v in p.trainable().items()}
    for name in p.trainable_names:
        x = arrays[name]

        def fn():
            return loss(p.with_trainable(arrays))

        results.append(CheckResult(f"{prefix}.{name}", rel_error(grads[name], numeric_grad(fn, x))))
    return results


def check_askl(rng: RngStream) -> List[CheckResult]:
    p = _small_askl(rng)
    X = rng.gen.uniform(-3, 3, (5, p.input_dim))
    c = rng.gen.uniform(-1, 1, 5)
    _, g_out = _downstream(critics.askl_forward(p, X), c)
    grads = critics.askl_backward(p, X, g_out)
    return _check_params("askl", p, lambda q: _downstream(critics.askl_forward(q, X), c)[0], grads)


def check_mlp(rng: RngStream) -> List[CheckResult]:
    p = critics.mlp_init(rng, 3, (5, 4))
    p = p.with_trainable({k: rng.gen.uniform(-1, 1, v.shape) for k, v in p.trainable().items()})
    X = rng.gen.uniform(-3, 3, (6, 3))
    c = rng.gen.uniform(-1, 1, 6)
    _, g_out = _downstream(critics.mlp_forward(p, X), c)
    grads = critics.mlp_backward(p, X, g_out)
    return _check_params("mlp", p, lambda q: _downstream(critics.mlp_forward(q, X), c)[0], grads)


def check_regularizers(rng: RngStream) -> List[CheckResult]:
    reg = RegWeights(0.7, 1.3)
    p = _small_askl(rng)
    S = _small_batch(rng, p.input_dim)
    _, grads = complexity.reg_terms(p, S, reg)
    out = _check_params("reg.askl", p, lambda q: complexity.reg_terms(q, S, reg)[0], grads)

    m = critics.mlp_init(rng, 3, (5, 4))
    m = m.with_trainable({k: rng.gen.uniform(-1, 1, v.shape) for k, v in m.trainable().items()})
    S = _small_batch(rng, 3)
    _, grads = complexity.reg_terms(m, S, reg)
    out += _check_params("reg.mlp", m, lambda q: complexity.reg_terms(q, S, reg)[0], grads)
    return out


def check_estimators(rng: RngStream) -> List[CheckResult]:
    fj = rng.gen.uniform(-3, 3, 5)
    fm = rng.gen.uniform(-3, 3, 4)
    a = float(rng.gen.uniform(0.5, 3.0))
    ema = EmaState(value=1.7, decay=0.9, initialized=True)
    # the MINE baseline is a stop-gradient constant: differentiate at the frozen value
    a_mine = ema.update(float(np.exp(fm).mean())).value
    objectives = {
        "tuba": (lambda j, k: estimators.tuba_value(j, k, a), estimators.tuba_value(fj, fm, a)),
        "nwj": (estimators.nwj_value, estimators.nwj_value(fj, fm)),
        "dv": (estimators.dv_value, estimators.dv_value(fj, fm)),
        "gan": (estimators.gan_objective, estimators.gan_objective(fj, fm)),
        "mine": (lambda j, k: estimators.tuba_value(j, k, a_mine), estimators.mine_value(fj, fm, ema)[0]),
    }
    out = []
    for name, (fn, og) in objectives.items():
        xj, xm = fj.copy(), fm.copy()
        nj = numeric_grad(lambda: fn(xj, xm).value, xj)
        nm = numeric_grad(lambda: fn(xj, xm).value, xm)
        err = max(rel_error(og.d_joint, nj), rel_error(og.d_marginal, nm))
        out.append(CheckResult(f"estimator.{name}", err))
    return out


def check_objective(rng: RngStream) -> List[CheckResult]:
    """Full minimised objective (bound + both penalties) for both critics."""
    reg = RegWeights(0.3, 0.5)
    out = []
    for est in estimators.ESTIMATORS:
        ema = EmaState(value=1.4, decay=0.9, initialized=True) if est == "mine" else None
        p = _small_askl(rng)
        S = _small_batch(rng, p.input_dim)
        value, _, _, grads, new_ema = harness.objective_and_grad(p, S, est, reg, ema)
        frozen = new_ema if est == "mine" else None

        def loss(q, frozen=frozen):
            if frozen is None:
                return harness.objective_and_grad(q, S, est, reg, None)[0]
            # same objective with the baseline held at its updated value
            f = critics.forward(q, S.stacked())
            tv = estimators.tuba_value(f[: S.n], f[S.n:], frozen.value).value
            return -tv + complexity.reg_terms(q, S, reg)[0]

        out += _check_params(f"objective.{est}.askl", p, loss, grads)

        m = critics.mlp_init(rng, p.input_dim, (5, 4))
        m = m.with_trainable({k: rng.gen.uniform(-1, 1, v.shape) for k, v in m.trainable().items()})
        value, _, _, grads, new_ema = harness.objective_and_grad(m, S, est, reg, ema)
        frozen = new_ema if est == "mine" else None
        out += _check_params(f"objective.{est}.mlp", m, lambda q, fr=frozen: loss(q, fr), grads)
    return out


SUITES = (check_askl, check_mlp, check_regularizers, check_estimators, check_objective)


def run_all(seed: int = 0) -> List[CheckResult]:
    results: List[CheckResult] = []
    for i, suite in enumerate(SUITES):
        results += suite(RngStream(seed, 1000 + i))
    return results
