import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from smile_lab import mixup


def test_mix_endpoints_exact():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(4, 3))
    v = rng.normal(size=(4, 3))
    assert np.array_equal(mixup.mix(u, v, 0.0), u)
    assert np.array_equal(mixup.mix(u, v, 1.0), v)


def test_mix_midpoint():
    u = np.array([0.0, 2.0])
    v = np.array([4.0, 6.0])
    assert np.array_equal(mixup.mix(u, v, 0.5), [2.0, 4.0])


def test_mix_quarter():
    # (1 - 0.25) * 0 + 0.25 * 8 = 2
    assert mixup.mix(np.array([0.0]), np.array([8.0]), 0.25) == pytest.approx(
        [2.0])


def test_mix_rejects_bad_inputs():
    u = np.zeros((2, 2))
    with pytest.raises(ValueError):
        mixup.mix(u, np.zeros((3, 2)), 0.5)
    for lam in (-0.1, 1.1):
        with pytest.raises(ValueError):
            mixup.mix(u, u, lam)


def test_sample_lambda_range_and_determinism():
    draws = [mixup.sample_lambda(1.0, np.random.default_rng(7))
             for _ in range(200)]
    assert all(0.0 <= lam <= 1.0 for lam in draws)
    again = [mixup.sample_lambda(1.0, np.random.default_rng(7))
             for _ in range(200)]
    assert draws == again


def test_sample_lambda_beta_moments():
    rng = np.random.default_rng(123)
    draws = np.array([mixup.sample_lambda(1.0, rng)
                      for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01
    # Beta(1, 1) is uniform: variance 1/12
    assert abs(draws.var() - 1.0 / 12) < 0.005


def test_sample_lambda_symmetry():
    rng = np.random.default_rng(9)
    draws = np.array([mixup.sample_lambda(2.0, rng)
                      for _ in range(100_000)])
    # lam and 1 - lam should follow the same law: compare empirical CDFs
    grid = np.linspace(0.0, 1.0, 101)
    cdf = np.searchsorted(np.sort(draws), grid) / draws.size
    cdf_flip = np.searchsorted(np.sort(1.0 - draws), grid) / draws.size
    assert np.max(np.abs(cdf - cdf_flip)) < 0.02


def test_sample_lambda_alpha_shapes_distribution():
    rng = np.random.default_rng(11)
    big_alpha = np.array([mixup.sample_lambda(50.0, rng)
                          for _ in range(10_000)])
    # Beta(50, 50) concentrates near 0.5
    assert big_alpha.std() < 0.06


def test_sample_lambda_rejects_bad_alpha():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        mixup.sample_lambda(0.0, rng)


def test_pair_batch_is_permutation():
    rng = np.random.default_rng(13)
    perm = mixup.pair_batch(10, rng)
    assert sorted(perm.tolist()) == list(range(10))


def test_pair_batch_deterministic():
    a = mixup.pair_batch(32, np.random.default_rng(5))
    b = mixup.pair_batch(32, np.random.default_rng(5))
    assert np.array_equal(a, b)


finite_arrays = hnp.arrays(np.float64, (3, 4),
                           elements=st.floats(-1e6, 1e6))


@settings(max_examples=50, deadline=None)
@given(u=finite_arrays, lam=st.floats(0.0, 1.0))
def test_mix_self_is_identity(u, lam):
    assert np.allclose(mixup.mix(u, u, lam), u, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(u=finite_arrays, v=finite_arrays, lam=st.floats(0.0, 1.0))
def test_mix_swap_symmetry(u, v, lam):
    assert np.allclose(mixup.mix(u, v, lam), mixup.mix(v, u, 1.0 - lam),
                       atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(u=finite_arrays, v=finite_arrays,
       lam1=st.floats(0.0, 1.0), lam2=st.floats(0.0, 1.0),
       w=st.floats(0.0, 1.0))
def test_mix_affine_in_lambda(u, v, lam1, lam2, w):
    lam = (1.0 - w) * lam1 + w * lam2
    direct = mixup.mix(u, v, lam)
    composed = (1.0 - w) * mixup.mix(u, v, lam1) + w * mixup.mix(u, v, lam2)
    assert np.allclose(direct, composed, atol=1e-6)
