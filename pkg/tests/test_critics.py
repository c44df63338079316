import math

import numpy as np
import pytest

from rkhs_mi import critics
from rkhs_mi.critics import AsklParams, MlpParams
from rkhs_mi.errors import ShapeError
from rkhs_mi.numkit import RngStream

from conftest import central_diff, max_rel_err


def one_feature(b=0.0, bprime=0.0, w=1.0, d=3):
    z = np.zeros((d, 1))
    return AsklParams(z, z.copy(), np.array([b]), np.array([bprime]), np.array([w]))


def test_init_shapes():
    p = critics.askl_init(RngStream(0), 40, 512)
    assert p.Omega.shape == (40, 512) and p.OmegaPrime.shape == (40, 512)
    assert p.b.shape == p.bprime.shape == p.w.shape == (512,)
    assert np.all((p.b >= 0) & (p.b < 2 * math.pi))


def test_init_deterministic():
    a = critics.askl_init(RngStream(4), 5, 16)
    b = critics.askl_init(RngStream(4), 5, 16)
    for k, v in a.arrays().items():
        assert np.array_equal(v, b.arrays()[k])


def test_fresh_init_outputs_bounded():
    # |f| <= ||w|| sqrt(2) and ||w|| ~ 1 at init, so |f| < 5 always
    p = critics.askl_init(RngStream(1), 40, 512)
    X = RngStream(2).gen.standard_normal((1000, 40)) * 3
    f = critics.askl_forward(p, X)
    assert np.mean(np.abs(f) < 5) == 1.0


def test_features_special_cases():
    X = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(critics.askl_features(one_feature(), X), math.sqrt(2))
    assert np.allclose(critics.askl_features(one_feature(bprime=math.pi), X), 0.0, atol=1e-15)


def test_feature_bounds(rng):
    p = critics.askl_init(rng, 6, 64)
    X = rng.gen.normal(size=(200, 6)) * 5
    phi = critics.askl_features(p, X)
    lim = 2 / math.sqrt(2 * 64)
    assert np.all(np.abs(phi) <= lim + 1e-15)
    assert np.all(np.sum(phi**2, axis=1) <= 2 + 1e-12)


def test_forward_cases():
    X = np.ones((3, 3))
    p = one_feature(w=0.0)
    assert np.all(critics.askl_forward(p, X) == 0)
    assert np.allclose(critics.askl_forward(one_feature(bprime=math.pi, w=7.0), X), 0.0, atol=1e-14)
    assert np.allclose(critics.askl_forward(one_feature(w=1.0), X), math.sqrt(2))


def test_shape_errors(rng):
    p = critics.askl_init(rng, 3, 4)
    with pytest.raises(ShapeError):
        critics.askl_forward(p, np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        critics.askl_backward(p, np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        critics.askl_kernel(p, np.zeros(3), np.zeros(2))


def test_kernel_symmetric_psd(rng):
    p = critics.askl_init(rng, 4, 32)
    pts = rng.gen.normal(size=(100, 4))
    for x, y in zip(pts[:-1], pts[1:]):
        assert critics.askl_kernel(p, x, y) == critics.askl_kernel(p, y, x)
        assert critics.askl_kernel(p, x, x) >= 0
    pts = pts[:10]
    G = np.array([[critics.askl_kernel(p, a, b) for b in pts] for a in pts])
    assert np.array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-10


def test_backward_zero_and_linear_in_w(rng):
    p = critics.askl_init(rng, 3, 8)
    X = rng.gen.normal(size=(5, 3))
    g = critics.askl_backward(p, X, np.zeros(5))
    assert all(np.all(v == 0) for v in g.values())
    c = rng.gen.normal(size=5)
    g = critics.askl_backward(p, X, c)
    assert np.array_equal(g["w"], critics.askl_features(p, X).T @ c)
    assert set(g) == {"Omega", "OmegaPrime", "w"}


def _fd_check(p, X, c, forward, backward):
    grads = backward(p, X, c)
    arrays = {k: v.copy() for k, v in p.trainable().items()}
    for name, x in arrays.items():
        num = central_diff(lambda: float(c @ forward(p.with_trainable(arrays), X)), x)
        assert max_rel_err(grads[name], num, floor=1e-6) < 1e-5, name


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_askl_gradient_fd(seed):
    r = RngStream(seed)
    p = critics.askl_init(r, 3, 6)
    p.Omega = r.gen.uniform(-3, 3, p.Omega.shape)
    p.w = r.gen.uniform(-3, 3, 6)
    X = r.gen.uniform(-3, 3, (4, 3))
    _fd_check(p, X, r.gen.normal(size=4), critics.askl_forward, critics.askl_backward)


def test_mlp_relu_kills_signal():
    p = MlpParams([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    assert critics.mlp_forward(p, np.array([[-1.0]]))[0] == 0.0
    assert critics.mlp_forward(p, np.array([[2.0]]))[0] == 2.0


def test_mlp_zero_weights(rng):
    p = critics.mlp_init(rng, 4)
    p = p.with_trainable({k: np.zeros_like(v) for k, v in p.trainable().items()})
    assert np.all(critics.mlp_forward(p, rng.gen.normal(size=(7, 4))) == 0)


def test_mlp_default_shape(rng):
    p = critics.mlp_init(rng, 40)
    assert [W.shape for W in p.weights] == [(40, 256), (256, 256), (256, 1)]
    assert all(np.all(c == 0) for c in p.biases)


@pytest.mark.parametrize("seed", [0, 1])
def test_mlp_gradient_fd(seed):
    r = RngStream(seed)
    p = critics.mlp_init(r, 3, (6, 5))
    p = p.with_trainable({k: r.gen.uniform(-1, 1, v.shape) for k, v in p.trainable().items()})
    X = r.gen.uniform(-3, 3, (5, 3))
    _fd_check(p, X, r.gen.normal(size=5), critics.mlp_forward, critics.mlp_backward)


def test_pack_unpack_roundtrip(rng):
    for p in (critics.askl_init(rng, 3, 5), critics.mlp_init(rng, 3, (4,))):
        vec = critics.pack(p.trainable(), p.trainable_names)
        q = critics.unpack(p, vec * 2)
        assert np.array_equal(critics.pack(q.trainable(), q.trainable_names), vec * 2)
