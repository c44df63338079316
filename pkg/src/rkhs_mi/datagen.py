"""Synthetic benchmarks: correlated (optionally cubed) Gaussians and small
discrete joints whose bounds can be evaluated with exact expectations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ParameterError
from .numkit import RngStream, gauss_sample


def rho_from_mi(mi: float, dim: int) -> float:
    """Per-dimension correlation giving ``mi`` nats between ``dim``-dimensional X and Y."""
    if mi < 0:
        raise ParameterError(f"mutual information must be >= 0, got {mi}")
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    return math.sqrt(-math.expm1(-2.0 * mi / dim))


def mi_from_rho(rho: float, dim: int) -> float:
    if not -1 < rho < 1:
        raise ParameterError(f"rho must lie in (-1, 1), got {rho}")
    # (1 - r)(1 + r) avoids the rounding of r*r as |r| -> 1
    r = abs(rho)
    return -0.5 * dim * (math.log1p(-r) + math.log1p(r))


@dataclass(frozen=True)
class GaussianTask:
    dim: int = 20
    rho: float = 0.0
    cubed: bool = False

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ParameterError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.dim < 1:
            raise ParameterError(f"dim must be >= 1, got {self.dim}")

    @classmethod
    def from_mi(cls, mi: float, dim: int = 20, cubed: bool = False) -> "GaussianTask":
        return cls(dim, rho_from_mi(mi, dim), cubed)

    @property
    def mi(self) -> float:
        return mi_from_rho(self.rho, self.dim)


def sample_task(task: GaussianTask, n: int, rng: RngStream) -> np.ndarray:
    """``n`` joint rows ``(x, y)`` of width ``2 * dim``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    x = gauss_sample(rng, n * task.dim).reshape(n, task.dim)
    eps = gauss_sample(rng, n * task.dim).reshape(n, task.dim)
    y = task.rho * x + math.sqrt(1.0 - task.rho**2) * eps
    if task.cubed:
        y = y**3
    return np.hstack([x, y])


def random_derangement(n: int, rng: RngStream) -> np.ndarray:
    """Uniformly random permutation without fixed points (rejection sampling)."""
    if n < 2:
        raise ParameterError(f"a derangement needs n >= 2, got {n}")
    idx = np.arange(n)
    while True:
        perm = rng.gen.permutation(n)
        if not np.any(perm == idx):
            return perm


def make_marginal(joint_rows: np.ndarray, rng: RngStream) -> np.ndarray:
    """Re-pair each ``x_i`` with ``y_{pi(i)}`` for a random derangement ``pi``."""
    joint_rows = np.asarray(joint_rows, dtype=np.float64)
    n, width = joint_rows.shape
    if width % 2:
        raise ParameterError(f"joint rows must have even width, got {width}")
    half = width // 2
    perm = random_derangement(n, rng)
    return np.hstack([joint_rows[:, :half], joint_rows[perm, half:]])


# ------------------------------------------------------------------ schedules

Schedule = List[Tuple[float, int]]


def staircase(levels: Sequence[float], steps: int) -> Schedule:
    if steps < 1:
        raise ParameterError(f"steps per level must be >= 1, got {steps}")
    for mi in levels:
        if mi < 0:
            raise ParameterError(f"MI level must be >= 0, got {mi}")
    return [(float(mi), int(steps)) for mi in levels]


FULL_SCHEDULE = staircase(range(2, 21, 2), 4000)
DESK_SCHEDULE = staircase((2, 4, 6), 4000)


def validate_schedule(schedule) -> Schedule:
    out = []
    for entry in schedule:
        mi, steps = entry
        if mi < 0 or int(steps) != steps or steps < 1:
            raise ParameterError(f"invalid schedule entry {entry!r}")
        out.append((float(mi), int(steps)))
    if not out:
        raise ParameterError("schedule is empty")
    return out


# ---------------------------------------------------------- discrete oracles


@dataclass(frozen=True)
class DiscreteJoint:
    pmf: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=np.float64)
        if p.ndim != 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ParameterError("pmf must be a non-negative 2-D table summing to 1")
        object.__setattr__(self, "pmf", p)

    @property
    def product(self) -> np.ndarray:
        return np.outer(self.pmf.sum(axis=1), self.pmf.sum(axis=0))

    def log_ratio(self) -> np.ndarray:
        """``log p(x,y) / (p(x)p(y))``; ``-inf`` where the joint has no mass."""
        q = self.product
        with np.errstate(divide="ignore"):
            return np.where(self.pmf > 0, np.log(self.pmf) - np.log(np.where(q > 0, q, 1.0)), -np.inf)


def discrete_mi(d: DiscreteJoint) -> float:
    mask = d.pmf > 0
    return float(np.sum(d.pmf[mask] * d.log_ratio()[mask]))


DISCRETE_BOUNDS = ("dv", "tuba", "nwj", "js", "smile")


def discrete_bound_exact(d: DiscreteJoint, critic_table: np.ndarray, bound: str, a: float = math.e) -> float:
    """Exact-expectation value of a variational bound for a tabulated critic.

    ``bound`` is one of ``dv``, ``tuba`` (baseline ``a``), ``nwj``, ``js``
    (NWJ applied to ``f + 1``, the GAN-critic bound) or ``smile`` (DV
    applied to the GAN critic). Cells where the joint has no mass do not
    contribute to the joint expectation; ``-inf`` critic entries there are allowed.
    """
    f = np.asarray(critic_table, dtype=np.float64)
    if f.shape != d.pmf.shape:
        raise ParameterError(f"critic table shape {f.shape} != pmf shape {d.pmf.shape}")
    p, q = d.pmf, d.product
    pm, qm = p > 0, q > 0
    if bound == "js":
        f, bound = f + 1.0, "nwj"
    if bound == "smile":
        bound = "dv"
    e_p = float(np.sum(p[pm] * f[pm]))
    if bound == "dv":
        fq = f[qm]
        top = np.max(fq)
        return e_p - (top + math.log(float(np.sum(q[qm] * np.exp(fq - top)))))
    if bound == "nwj":
        a = math.e
    elif bound != "tuba":
        raise ParameterError(f"unknown bound {bound!r}; expected one of {DISCRETE_BOUNDS}")
    if not a > 0:
        raise ParameterError(f"baseline a must be positive, got {a}")
    e_q = float(np.sum(q[qm] * np.exp(f[qm])))
    return e_p - e_q / a - math.log(a) + 1.0
