import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dacrl.errors import ContractError
from dacrl.features import (PolicyParams, RbfFeatureMap, compatible_features,
                            compatible_features_from_phi, eval_features, policy_action,
                            policy_jacobian)


def loop_features(centers, widths, s):
    # scalar-loop oracle, written straight from the Gaussian bump formula
    out = []
    for c, sig in zip(centers, widths):
        d2 = sum((float(x) - float(y)) ** 2 for x, y in zip(s, c))
        out.append(math.exp(-d2 / (2 * sig * sig)) / math.sqrt(2 * math.pi * sig * sig))
    return np.array(out)


def test_value_at_center_unit_width():
    fmap = RbfFeatureMap(np.array([[0.3, -1.0]]), np.array([1.0]))
    phi = eval_features(fmap, [0.3, -1.0])
    assert phi[0] == pytest.approx(0.3989422804014327, abs=1e-14)


def test_matches_scalar_loop():
    rng = np.random.default_rng(3)
    centers = rng.normal(size=(5, 4))
    widths = rng.uniform(0.3, 2.0, size=5)
    fmap = RbfFeatureMap(centers, widths)
    for _ in range(20):
        s = rng.normal(size=4)
        np.testing.assert_allclose(eval_features(fmap, s), loop_features(centers, widths, s),
                                   rtol=0, atol=1e-12)


def test_batched_matches_single():
    fmap = RbfFeatureMap.random(7, -np.ones(3), np.ones(3), 0.8, seed=1)
    S = np.random.default_rng(0).uniform(-1, 1, size=(4, 5, 3))
    batch = eval_features(fmap, S)
    assert batch.shape == (4, 5, 7)
    for i in range(4):
        for j in range(5):
            np.testing.assert_allclose(batch[i, j], eval_features(fmap, S[i, j]), rtol=1e-15)


def test_rejects_bad_inputs():
    fmap = RbfFeatureMap(np.zeros((2, 3)), np.ones(2))
    with pytest.raises(ContractError):
        eval_features(fmap, np.zeros(2))
    with pytest.raises(ContractError):
        RbfFeatureMap(np.zeros((2, 3)), np.ones(3))
    with pytest.raises(ContractError):
        RbfFeatureMap(np.zeros((2, 3)), np.array([1.0, 0.0]))
    with pytest.raises(ContractError):
        PolicyParams(np.array([[np.nan]]))


def test_random_centers_inside_box_and_seeded():
    low, high = np.array([-1.0, 0.0]), np.array([1.0, 5.0])
    a = RbfFeatureMap.random(50, low, high, 1.0, seed=4)
    b = RbfFeatureMap.random(50, low, high, 1.0, seed=4)
    assert np.array_equal(a.centers, b.centers)
    assert np.all(a.centers >= low) and np.all(a.centers <= high)


def test_dict_round_trip():
    fmap = RbfFeatureMap.random(6, -np.ones(2), np.ones(2), 0.5, seed=2)
    back = RbfFeatureMap.from_dict(fmap.to_dict())
    assert np.array_equal(back.centers, fmap.centers)
    assert np.array_equal(back.widths, fmap.widths)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 3, elements=st.floats(-50, 50)),
       st.floats(0.05, 10.0), st.integers(0, 1000))
def test_features_bounded(s, width, seed):
    fmap = RbfFeatureMap.random(8, -np.ones(3), np.ones(3), width, seed=seed)
    phi = eval_features(fmap, s)
    assert np.all(phi >= 0)
    assert np.all(phi <= fmap.peak_values * (1 + 1e-12))
    assert np.linalg.norm(phi) <= fmap.norm_bound() * (1 + 1e-12)


def test_compatible_features_layout():
    rng = np.random.default_rng(5)
    fmap = RbfFeatureMap.random(4, -np.ones(2), np.ones(2), 1.0, seed=0)
    params = PolicyParams(rng.normal(size=(4, 3)))
    s, a = rng.normal(size=2), rng.normal(size=3)
    phi = eval_features(fmap, s)
    expect = np.outer(phi, a - params.theta.T @ phi).ravel(order="F")
    np.testing.assert_allclose(compatible_features(fmap, s, a, params), expect, rtol=1e-14)
    with pytest.raises(ContractError):
        compatible_features_from_phi(phi, np.zeros(2), params)


def test_compatible_features_vanish_at_policy_action():
    fmap = RbfFeatureMap.random(5, -np.ones(2), np.ones(2), 1.0, seed=1)
    params = PolicyParams(np.random.default_rng(0).normal(size=(5, 2)))
    s = np.array([0.2, -0.4])
    a = policy_action(params, eval_features(fmap, s))
    np.testing.assert_allclose(compatible_features(fmap, s, a, params), 0.0, atol=1e-15)


def test_policy_jacobian_matches_finite_differences():
    rng = np.random.default_rng(8)
    fmap = RbfFeatureMap.random(4, -np.ones(2), np.ones(2), 0.7, seed=3)
    theta = rng.normal(size=(4, 2))
    s = rng.uniform(-1, 1, size=2)
    J = policy_jacobian(fmap, s, 2)
    dense = J.dense()
    h = 1e-6
    flat = theta.ravel(order="F")
    for c in range(flat.size):
        e = np.zeros_like(flat)
        e[c] = h
        plus = (flat + e).reshape(theta.shape, order="F")
        minus = (flat - e).reshape(theta.shape, order="F")
        phi = eval_features(fmap, s)
        fd = (phi @ plus - phi @ minus) / (2 * h)
        np.testing.assert_allclose(dense[c], fd, atol=1e-9)
    x = rng.normal(size=2)
    w = rng.normal(size=8)
    np.testing.assert_allclose(J.matvec(x), dense @ x, rtol=1e-13)
    np.testing.assert_allclose(J.rmatvec(w), dense.T @ w, rtol=1e-13)
    assert J.shape == (8, 2)
