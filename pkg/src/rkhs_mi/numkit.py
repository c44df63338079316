"""Random streams, small dense helpers and the Adam optimizer.

All arithmetic is float64. Matrices are plain 2-D numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError

try:  # torch's vectorised float64 trig is ~10x faster than numpy's libm loop
    import torch as _torch
except ImportError:  # pragma: no cover
    _torch = None


class RngStream:
    """Counter-based (Philox) random stream keyed by ``(seed, stream_id)``.

    Streams with distinct ids are statistically independent, so trials can be
    farmed out to workers by index without coordinating state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id])
        self.gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, stream_id: int) -> "RngStream":
        """Independent stream sharing this seed."""
        return RngStream(self.seed, stream_id)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gauss_sample(rng: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return rng.gen.standard_normal(n)


def uniform_sample(rng: RngStream, n: int, lo: float, hi: float) -> np.ndarray:
    if not lo < hi:
        raise ParameterError(f"need lo < hi, got lo={lo}, hi={hi}")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return rng.gen.uniform(lo, hi, n)


def cos(z: np.ndarray) -> np.ndarray:
    """Elementwise float64 cosine."""
    if _torch is None:
        return np.cos(z)
    return _torch.cos(_torch.from_numpy(np.ascontiguousarray(z))).numpy()


def sin(z: np.ndarray) -> np.ndarray:
    if _torch is None:
        return np.sin(z)
    return _torch.sin(_torch.from_numpy(np.ascontiguousarray(z))).numpy()


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {x.shape}")
    return a @ x


@dataclass
class AdamState:
    """Moment estimates for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Apply one bias-corrected Adam update.

    Returns the new parameter vector; ``state`` is advanced in place.
    Raises :class:`DivergenceError` naming the first non-finite gradient entry.
    """
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}"
        )
    bad = ~np.isfinite(grads)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"non-finite gradient at index {idx}", index=idx)

    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
