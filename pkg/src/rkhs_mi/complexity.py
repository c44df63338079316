"""Regularizers, Rademacher certificates and generalization-bound arithmetic."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from . import critics
from .critics import AsklParams, Critic, CriticGrad, MlpParams
from .errors import ParameterError
from .estimators import Batch
from .numkit import RngStream

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class RegWeights:
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")


# regularization weights per estimator for the ASKL critic
TABLE_I = {
    "nwj": RegWeights(1e-3, 1e-3),
    "mine": RegWeights(1e-3, 1e-3),
    "js": RegWeights(1e-5, 1e-5),
    "smile": RegWeights(1e-4, 1e-3),
}


def default_reg_weights(estimator: str) -> RegWeights:
    try:
        return TABLE_I[estimator]
    except KeyError:
        raise ParameterError(f"no default weights for estimator {estimator!r}") from None


def _safe_unit(x: np.ndarray) -> Tuple[float, np.ndarray]:
    norm = float(np.linalg.norm(x))
    if norm < NORM_FLOOR:
        return norm, np.zeros_like(x)
    return norm, x / norm


def reg_terms(p: Critic, S: Batch, reg: RegWeights) -> Tuple[float, CriticGrad]:
    """Weighted norm penalties and their gradients.

    For the ASKL critic: ``lambda1 * ||w||_2 + lambda2 * ||Phi||_F`` with
    ``Phi`` the feature matrix over joint and marginal rows together. For the
    MLP the same weights apply to the output-layer weight vector and to the
    last hidden activations.
    """
    grads = critics.zeros_like_grad(p)
    if reg.lambda1 == 0 and reg.lambda2 == 0:
        return 0.0, grads
    Z = S.stacked()
    value = 0.0
    if isinstance(p, AsklParams):
        w_norm, w_dir = _safe_unit(p.w)
        value += reg.lambda1 * w_norm
        grads["w"] += reg.lambda1 * w_dir
        if reg.lambda2 != 0:
            phi = critics.askl_features(p, Z)
            f_norm, f_dir = _safe_unit(phi)
            value += reg.lambda2 * f_norm
            g = critics.askl_features_backward(p, Z, reg.lambda2 * f_dir)
            grads["Omega"] += g["Omega"]
            grads["OmegaPrime"] += g["OmegaPrime"]
        return float(value), grads

    last = f"W{len(p.weights) - 1}"
    w_norm, w_dir = _safe_unit(p.weights[-1])
    value += reg.lambda1 * w_norm
    grads[last] += reg.lambda1 * w_dir
    if reg.lambda2 != 0:
        H = critics.mlp_last_hidden(p, Z)
        h_norm, h_dir = _safe_unit(H)
        value += reg.lambda2 * h_norm
        g = critics.mlp_backward(p, Z, np.zeros(len(Z)), dL_dh=reg.lambda2 * h_dir)
        for k in grads:
            grads[k] += g[k]
    return float(value), grads


@dataclass(frozen=True)
class RadCertificate:
    """Empirical Rademacher bounds for the ball ``||w||_2 <= B``.

    ``bound_tight`` is ``(B/n) sqrt(sum ||phi(x_i)||^2)``; ``bound_loose`` is
    ``B sqrt(2/n)``, which uses the worst-case feature norm ``||phi||^2 <= 2``.
    ``bound_unit_norm`` is ``B / sqrt(n)``; it holds only if every squared
    feature norm is at most 1, which ``max_feature_norm_sq`` lets you check.
    """

    B: float
    n: int
    feature_norm_sq_sum: float
    max_feature_norm_sq: float
    bound_tight: float
    bound_loose: float
    bound_unit_norm: float

    @property
    def unit_norm_verified(self) -> bool:
        return self.max_feature_norm_sq <= 1.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["unit_norm_verified"] = self.unit_norm_verified
        return out


def certificate_from_norms(B: float, norms_sq: np.ndarray) -> RadCertificate:
    norms_sq = np.asarray(norms_sq, dtype=np.float64)
    n = norms_sq.size
    if n < 1:
        raise ParameterError("need at least one point")
    total = float(norms_sq.sum())
    return RadCertificate(
        B=float(B),
        n=n,
        feature_norm_sq_sum=total,
        max_feature_norm_sq=float(norms_sq.max()),
        bound_tight=B / n * math.sqrt(total),
        bound_loose=B * math.sqrt(2.0 / n),
        bound_unit_norm=B / math.sqrt(n),
    )


def rademacher_bound(p: AsklParams, X: np.ndarray, B: Optional[float] = None) -> RadCertificate:
    """Certificate using the trained ``||w||_2`` as ``B`` unless one is given."""
    phi = critics.askl_features(p, X)
    if B is None:
        B = float(np.linalg.norm(p.w))
    return certificate_from_norms(B, np.einsum("ij,ij->i", phi, phi))


def mc_rademacher(
    p: AsklParams,
    X: np.ndarray,
    B: float,
    trials: int,
    rng: RngStream,
    return_stderr: bool = False,
    chunk: int = 2048,
):
    """Monte-Carlo estimate of the empirical Rademacher average of the ball.

    The supremum over ``||w|| <= B`` of ``w . sum_i sigma_i phi(x_i)`` is
    ``B * ||sum_i sigma_i phi(x_i)||``, so only the sign vectors are sampled.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    phi = critics.askl_features(p, X)
    n = len(phi)
    norms = np.empty(trials)
    for start in range(0, trials, chunk):
        k = min(chunk, trials - start)
        sigma = rng.gen.integers(0, 2, size=(k, n)) * 2.0 - 1.0
        norms[start:start + k] = np.linalg.norm(sigma @ phi, axis=1)
    vals = B / n * norms
    mean = float(vals.mean())
    if not return_stderr:
        return mean
    stderr = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr


@dataclass(frozen=True)
class BoundInputs:
    M: float
    a: float
    n: int
    m: int
    delta: float
    rad_n: float
    rad_m: float

    def __post_init__(self):
        if not (math.isfinite(self.M) and self.M >= 0):
            raise ParameterError(f"M must be finite and >= 0, got {self.M}")
        if not (math.isfinite(self.a) and self.a > 0):
            raise ParameterError(f"a must be positive, got {self.a}")
        if self.n < 1 or self.m < 1:
            raise ParameterError(f"sample sizes must be >= 1, got n={self.n}, m={self.m}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if self.rad_n < 0 or self.rad_m < 0:
            raise ParameterError("Rademacher averages must be non-negative")


def tuba_gen_bound(inp: BoundInputs) -> float:
    """High-probability bound on ``sup_f (I_TUBA(f) - empirical estimate)``."""
    M, a, n, m = inp.M, inp.a, inp.n, inp.m
    eM = math.exp(M)
    log4 = math.log(4.0 / inp.delta)
    log2 = math.log(2.0 / inp.delta)
    return (
        4.0 * inp.rad_n
        + 8.0 / a * eM * inp.rad_m
        + 4.0 * M / n * log4
        + 8.0 * M * eM / (a * m) * log4
        + math.sqrt((4.0 * M * M / n + (eM - math.exp(-M)) ** 2 / (a * a * m)) * log2 / 2.0)
    )


def dv_gen_bound(inp: BoundInputs) -> float:
    """Same as :func:`tuba_gen_bound` for the Donsker-Varadhan estimate (``a`` unused)."""
    M, n, m = inp.M, inp.n, inp.m
    e2M = math.exp(2.0 * M)
    log4 = math.log(4.0 / inp.delta)
    log2 = math.log(2.0 / inp.delta)
    return (
        4.0 * inp.rad_n
        + 8.0 * e2M * inp.rad_m
        + 4.0 * M / n * log4
        + 8.0 * M * e2M / m * log4
        + math.sqrt((4.0 * M * M / n + (e2M - 1.0) ** 2 / m) * log2 / 2.0)
    )


@dataclass(frozen=True)
class MEstimate:
    empirical: float
    certified: Optional[float] = None

    @property
    def value(self) -> float:
        if self.certified is None:
            return self.empirical
        return max(self.empirical, self.certified)


def estimate_M(p: Critic, probe: np.ndarray) -> MEstimate:
    """Largest critic magnitude on ``probe``; ASKL also gets ``sqrt(2) ||w||``."""
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 2 or len(probe) == 0:
        raise ParameterError("probe set must be a non-empty 2-D array")
    emp = float(np.max(np.abs(critics.forward(p, probe))))
    if isinstance(p, AsklParams):
        return MEstimate(emp, float(np.linalg.norm(p.w)) * math.sqrt(2.0))
    return MEstimate(emp)
