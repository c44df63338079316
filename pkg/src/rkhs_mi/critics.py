"""Critic families: the spectral cosine-feature RKHS critic and a ReLU MLP.

Both expose batched forward passes and exact gradients of a scalar loss with
respect to their trainable arrays. Gradients are returned as ``dict`` objects
keyed like :meth:`trainable`, so they can be packed for the optimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError
from . import numkit
from .numkit import RngStream, gauss_sample, uniform_sample

CriticGrad = Dict[str, np.ndarray]


@dataclass
class AsklParams:
    """Spectral kernel critic ``f(x) = w . phi(x)``.

    ``Omega`` and ``OmegaPrime`` are ``(d, D)`` frequency matrices, ``b`` and
    ``bprime`` the fixed phases, ``w`` the RKHS representation of ``f``.
    """

    Omega: np.ndarray
    OmegaPrime: np.ndarray
    b: np.ndarray
    bprime: np.ndarray
    w: np.ndarray

    kind = "askl"
    trainable_names = ("Omega", "OmegaPrime", "w")

    @property
    def input_dim(self) -> int:
        return self.Omega.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.Omega.shape[1]

    def trainable(self) -> CriticGrad:
        return {k: getattr(self, k) for k in self.trainable_names}

    def with_trainable(self, arrays: CriticGrad) -> "AsklParams":
        return replace(self, **arrays)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("Omega", "OmegaPrime", "b", "bprime", "w")}


@dataclass
class MlpParams:
    """Dense ReLU network; ``weights[i]`` has shape ``(fan_in, fan_out)``."""

    weights: list
    biases: list

    kind = "mlp"

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden(self) -> Tuple[int, ...]:
        return tuple(W.shape[1] for W in self.weights[:-1])

    @property
    def trainable_names(self) -> Tuple[str, ...]:
        names = []
        for i in range(len(self.weights)):
            names += [f"W{i}", f"b{i}"]
        return tuple(names)

    def trainable(self) -> CriticGrad:
        out = {}
        for i, (W, c) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = c
        return out

    def with_trainable(self, arrays: CriticGrad) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(
            weights=[arrays[f"W{i}"] for i in range(n)],
            biases=[arrays[f"b{i}"] for i in range(n)],
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return self.trainable()


Critic = Union[AsklParams, MlpParams]


def _check_input(X: np.ndarray, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != d:
        raise ShapeError(f"expected inputs of shape (n, {d}), got {X.shape}")
    return X


# ---------------------------------------------------------------- ASKL critic


def askl_init(rng: RngStream, d: int, D: int, freq_scale: float = 1.0) -> AsklParams:
    """Random spectral critic.

    Frequencies are normal with standard deviation ``freq_scale`` (the initial
    kernel is then close to an RBF kernel with length scale ``1/freq_scale``),
    phases uniform on ``[0, 2 pi)`` and ``w`` normal with std ``1/sqrt(D)``.
    """
    if d < 1 or D < 1:
        raise ShapeError(f"need d >= 1 and D >= 1, got d={d}, D={D}")
    Omega = freq_scale * gauss_sample(rng, d * D).reshape(d, D)
    OmegaPrime = freq_scale * gauss_sample(rng, d * D).reshape(d, D)
    b = uniform_sample(rng, D, 0.0, 2 * math.pi)
    bprime = uniform_sample(rng, D, 0.0, 2 * math.pi)
    w = gauss_sample(rng, D) / math.sqrt(D)
    return AsklParams(Omega, OmegaPrime, b, bprime, w)


def _askl_preacts(p: AsklParams, X: np.ndarray):
    return X @ p.Omega + p.b, X @ p.OmegaPrime + p.bprime


def askl_features(p: AsklParams, X: np.ndarray) -> np.ndarray:
    """Cosine feature map, one row per input."""
    X = _check_input(X, p.input_dim)
    z1, z2 = _askl_preacts(p, X)
    return (numkit.cos(z1) + numkit.cos(z2)) / math.sqrt(2 * p.feature_dim)


def askl_forward(p: AsklParams, X: np.ndarray) -> np.ndarray:
    return askl_features(p, X) @ p.w


def askl_kernel(p: AsklParams, x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (p.input_dim,) or y.shape != (p.input_dim,):
        raise ShapeError(f"kernel arguments must have shape ({p.input_dim},)")
    phi = askl_features(p, np.stack([x, y]))
    # elementwise products are commutative, so K(x,y) == K(y,x) bit for bit
    return float(np.sum(phi[0] * phi[1]))


def askl_features_backward(p: AsklParams, X: np.ndarray, dL_dphi: np.ndarray) -> CriticGrad:
    """Pull a gradient on the feature matrix back to the frequency matrices."""
    X = _check_input(X, p.input_dim)
    if dL_dphi.shape != (X.shape[0], p.feature_dim):
        raise ShapeError(f"feature gradient has shape {dL_dphi.shape}")
    z1, z2 = _askl_preacts(p, X)
    scale = -1.0 / math.sqrt(2 * p.feature_dim)
    return {
        "Omega": X.T @ (scale * numkit.sin(z1) * dL_dphi),
        "OmegaPrime": X.T @ (scale * numkit.sin(z2) * dL_dphi),
    }


def askl_backward(p: AsklParams, X: np.ndarray, dL_df: np.ndarray) -> CriticGrad:
    X = _check_input(X, p.input_dim)
    dL_df = np.asarray(dL_df, dtype=np.float64)
    if dL_df.shape != (X.shape[0],):
        raise ShapeError(f"output gradient has shape {dL_df.shape}, expected ({X.shape[0]},)")
    phi = askl_features(p, X)
    grads = askl_features_backward(p, X, np.outer(dL_df, p.w))
    grads["w"] = phi.T @ dL_df
    return grads


# ----------------------------------------------------------------- MLP critic


def mlp_init(rng: RngStream, d: int, hidden: Sequence[int] = (256, 256)) -> MlpParams:
    """He-initialised ReLU network ``d -> hidden... -> 1`` with zero biases."""
    sizes = [d, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = gauss_sample(rng, fan_in * fan_out).reshape(fan_in, fan_out)
        weights.append(W * math.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _mlp_activations(p: MlpParams, X: np.ndarray):
    acts = [X]
    h = X
    for W, c in zip(p.weights[:-1], p.biases[:-1]):
        h = np.maximum(h @ W + c, 0.0)
        acts.append(h)
    out = h @ p.weights[-1] + p.biases[-1]
    return acts, out[:, 0]


def mlp_forward(p: MlpParams, X: np.ndarray) -> np.ndarray:
    X = _check_input(X, p.input_dim)
    return _mlp_activations(p, X)[1]


def mlp_last_hidden(p: MlpParams, X: np.ndarray) -> np.ndarray:
    X = _check_input(X, p.input_dim)
    return _mlp_activations(p, X)[0][-1]


def mlp_backward(p: MlpParams, X: np.ndarray, dL_df: np.ndarray, dL_dh=None) -> CriticGrad:
    """Exact gradients for every weight and bias.

    ``dL_dh`` optionally adds a gradient arriving directly at the last hidden
    activation (used by the activation-norm regularizer).
    """
    X = _check_input(X, p.input_dim)
    dL_df = np.asarray(dL_df, dtype=np.float64)
    if dL_df.shape != (X.shape[0],):
        raise ShapeError(f"output gradient has shape {dL_df.shape}, expected ({X.shape[0]},)")
    acts, _ = _mlp_activations(p, X)
    n_layers = len(p.weights)
    grads = {}
    g = dL_df[:, None]
    grads[f"W{n_layers - 1}"] = acts[-1].T @ g
    grads[f"b{n_layers - 1}"] = g.sum(axis=0)
    g = g @ p.weights[-1].T
    if dL_dh is not None:
        g = g + dL_dh
    for i in range(n_layers - 2, -1, -1):
        g = g * (acts[i + 1] > 0)
        grads[f"W{i}"] = acts[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ p.weights[i].T
    return grads


# ------------------------------------------------------------------ dispatch


def forward(p: Critic, X: np.ndarray) -> np.ndarray:
    if isinstance(p, AsklParams):
        return askl_forward(p, X)
    return mlp_forward(p, X)


def backward(p: Critic, X: np.ndarray, dL_df: np.ndarray) -> CriticGrad:
    if isinstance(p, AsklParams):
        return askl_backward(p, X, dL_df)
    return mlp_backward(p, X, dL_df)


def pack(arrays: CriticGrad, names: Sequence[str]) -> np.ndarray:
    return np.concatenate([np.ravel(arrays[k]) for k in names])


def unpack(p: Critic, vec: np.ndarray) -> Critic:
    """Inverse of ``pack(p.trainable(), p.trainable_names)``."""
    out, pos = {}, 0
    current = p.trainable()
    for k in p.trainable_names:
        ref = current[k]
        out[k] = vec[pos:pos + ref.size].reshape(ref.shape).copy()
        pos += ref.size
    if pos != vec.size:
        raise ShapeError(f"vector length {vec.size} does not match parameter count {pos}")
    return p.with_trainable(out)


def zeros_like_grad(p: Critic) -> CriticGrad:
    return {k: np.zeros_like(v) for k, v in p.trainable().items()}
