import math

import numpy as np
import pytest

from rkhs_mi import complexity as C
from rkhs_mi import critics
from rkhs_mi.critics import AsklParams
from rkhs_mi.errors import ParameterError
from rkhs_mi.estimators import Batch
from rkhs_mi.numkit import RngStream

from conftest import central_diff, max_rel_err

# mpmath (30 digits), term by term: 0.5 + 0.5 + 0.1295 + 0.3242 + 0.6629
TUBA_EXAMPLE = 2.11665289630519941


def example_inputs(**kw):
    base = dict(M=1.0, a=math.e, n=64, m=64, delta=0.5, rad_n=0.125, rad_m=0.125)
    base.update(kw)
    return C.BoundInputs(**base)


def test_table_defaults():
    assert C.default_reg_weights("nwj") == C.RegWeights(0.001, 0.001)
    assert C.default_reg_weights("mine") == C.RegWeights(0.001, 0.001)
    assert C.default_reg_weights("js") == C.RegWeights(1e-5, 1e-5)
    assert C.default_reg_weights("smile") == C.RegWeights(1e-4, 0.001)


def test_reg_zero(rng):
    p = critics.askl_init(rng, 2, 4)
    S = Batch(rng.gen.normal(size=(3, 2)), rng.gen.normal(size=(3, 2)))
    value, grads = C.reg_terms(p, S, C.RegWeights())
    assert value == 0 and all(np.all(g == 0) for g in grads.values())


def test_reg_w_norm(rng):
    p = critics.askl_init(rng, 2, 2)
    p.w = np.array([3.0, 4.0])
    S = Batch(rng.gen.normal(size=(3, 2)), rng.gen.normal(size=(3, 2)))
    value, grads = C.reg_terms(p, S, C.RegWeights(1.0, 0.0))
    assert value == 5.0
    assert np.allclose(grads["w"], [0.6, 0.8], rtol=0, atol=1e-15)
    assert np.all(grads["Omega"] == 0)


def test_reg_zero_norm_subgradient(rng):
    p = critics.askl_init(rng, 2, 3)
    p.w = np.zeros(3)
    S = Batch(rng.gen.normal(size=(2, 2)), rng.gen.normal(size=(2, 2)))
    _, grads = C.reg_terms(p, S, C.RegWeights(1.0, 0.0))
    assert np.all(grads["w"] == 0)


@pytest.mark.parametrize("kind", ["askl", "mlp"])
def test_reg_gradient_fd(kind):
    r = RngStream(8)
    if kind == "askl":
        p = critics.askl_init(r, 3, 5)
    else:
        p = critics.mlp_init(r, 3, (4, 6))
        p = p.with_trainable({k: r.gen.uniform(-1, 1, v.shape) for k, v in p.trainable().items()})
    S = Batch(r.gen.uniform(-3, 3, (4, 3)), r.gen.uniform(-3, 3, (3, 3)))
    reg = C.RegWeights(0.4, 1.1)
    _, grads = C.reg_terms(p, S, reg)
    arrays = {k: v.copy() for k, v in p.trainable().items()}
    for name, x in arrays.items():
        num = central_diff(lambda: C.reg_terms(p.with_trainable(arrays), S, reg)[0], x)
        assert max_rel_err(grads[name], num, floor=1e-7) < 1e-5, name


def test_certificate_arithmetic():
    cert = C.certificate_from_norms(2.0, np.ones(64))
    assert cert.bound_tight == 0.25
    assert cert.bound_loose == 2.0 * math.sqrt(2 / 64)
    doubled = C.certificate_from_norms(2.0, np.ones(128))
    assert abs(doubled.bound_tight / cert.bound_tight - 1 / math.sqrt(2)) < 1e-15


def test_unit_norm_flag():
    # zero frequencies and zero phases give ||phi||^2 = 2 > 1
    z = np.zeros((2, 1))
    p = AsklParams(z, z.copy(), np.zeros(1), np.zeros(1), np.ones(1))
    cert = C.rademacher_bound(p, np.ones((4, 2)))
    assert cert.max_feature_norm_sq == pytest.approx(2.0)
    assert not cert.unit_norm_verified
    assert cert.bound_tight <= cert.bound_loose + 1e-12


def test_mc_single_point(rng):
    p = critics.askl_init(rng, 3, 16)
    X = rng.gen.normal(size=(1, 3))
    phi = critics.askl_features(p, X)
    est, se = C.mc_rademacher(p, X, 1.7, 50, rng, return_stderr=True)
    assert est == pytest.approx(1.7 * np.linalg.norm(phi), rel=1e-14)
    assert se < 1e-14
    assert C.mc_rademacher(p, X, 0.0, 10, rng) == 0.0


def test_mc_below_certificate(rng):
    p = critics.askl_init(rng, 4, 64)
    X = rng.gen.normal(size=(32, 4))
    cert = C.rademacher_bound(p, X)
    est, se = C.mc_rademacher(p, X, cert.B, 10_000, rng, return_stderr=True)
    assert est <= cert.bound_tight + 3 * se


def test_tuba_bound_example():
    assert abs(C.tuba_gen_bound(example_inputs()) - TUBA_EXAMPLE) < 1e-3
    assert abs(C.tuba_gen_bound(example_inputs()) - TUBA_EXAMPLE) < 1e-12


def test_bounds_vanish():
    tiny = example_inputs(M=1e-9, rad_n=0, rad_m=0, n=10**12, m=10**12)
    assert C.tuba_gen_bound(tiny) < 1e-6
    zero = example_inputs(M=0.0, rad_n=0, rad_m=0)
    assert C.dv_gen_bound(zero) == 0.0
    assert C.tuba_gen_bound(zero) == 0.0


def test_dv_exceeds_tuba():
    assert C.dv_gen_bound(example_inputs()) > C.tuba_gen_bound(example_inputs())


GRID = dict(
    M=[0.0, 0.5, 1.0, 2.0, 4.0],
    n=[8, 16, 64, 256],
    m=[8, 16, 64, 256],
    delta=[0.01, 0.05, 0.3, 0.9],
    rad_n=[0.0, 0.05, 0.2],
    rad_m=[0.0, 0.05, 0.2],
)
DIRECTION = dict(M=1, n=-1, m=-1, delta=-1, rad_n=1, rad_m=1)


@pytest.mark.parametrize("bound", [C.tuba_gen_bound, C.dv_gen_bound])
@pytest.mark.parametrize("axis", list(GRID))
def test_monotone(bound, axis):
    for base in ({}, dict(M=0.7, rad_n=0.1, rad_m=0.02), dict(n=32, m=128, delta=0.1)):
        vals = [bound(example_inputs(**{**base, axis: v})) for v in GRID[axis]]
        diffs = np.diff(vals) * DIRECTION[axis]
        assert np.all(diffs >= -1e-12), (axis, vals)


def test_doubling_m_strictly_decreases_dv():
    assert C.dv_gen_bound(example_inputs(m=128)) < C.dv_gen_bound(example_inputs())


def test_bound_input_validation():
    with pytest.raises(ParameterError):
        example_inputs(delta=1.0)
    with pytest.raises(ParameterError):
        example_inputs(a=0.0)
    with pytest.raises(ParameterError):
        example_inputs(M=-1.0)


def test_estimate_m(rng):
    p = critics.askl_init(rng, 3, 8)
    probe = rng.gen.normal(size=(200, 3)) * 4
    est = C.estimate_M(p, probe)
    assert est.empirical <= est.certified
    assert est.value == est.certified
    p.w = np.zeros(8)
    assert C.estimate_M(p, probe).empirical == 0.0


def test_estimate_m_constant_critic():
    z = np.zeros((2, 1))
    p = AsklParams(z, z.copy(), np.zeros(1), np.zeros(1), np.array([-1.5]))
    est = C.estimate_M(p, np.ones((5, 2)))
    assert est.empirical == pytest.approx(1.5 * math.sqrt(2))
