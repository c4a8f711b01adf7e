import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmriv import kernels
from mmriv.errors import InputError
from mmriv.kernels import KernelSpec

from oracles import gauss_gram

SPECS = [
    KernelSpec.gaussian(0.7),
    KernelSpec.laplacian(1.3),
    KernelSpec.imq(1.0, 0.5),
    KernelSpec.sum_gaussians((1.0, 0.1, 10.0)),
    KernelSpec.ard((0.5, 2.0)),
]


def test_gaussian_at_zero_distance():
    assert kernels.evaluate(KernelSpec.gaussian(1.0), [0.3, -2.0], [0.3, -2.0]) == 1.0


def test_gaussian_at_sqrt2():
    v = kernels.evaluate(KernelSpec.gaussian(1.0), [0.0, 0.0], [1.0, 1.0])
    assert v == pytest.approx(np.exp(-1.0), abs=1e-15)
    assert v == pytest.approx(0.367879, abs=1e-6)


def test_imq_and_sum_at_zero_distance():
    assert kernels.evaluate(KernelSpec.imq(1.0, 1.0), [2.0], [2.0]) == 1.0
    assert kernels.evaluate(KernelSpec.sum_gaussians((1.0, 0.1, 10.0)), [5.0], [5.0]) == 1.0


def test_sum_gaussians_weights_are_a_third():
    spec = KernelSpec.sum_gaussians((1.0, 0.1, 10.0))
    d2 = 0.8
    want = sum(np.exp(-d2 / (2 * s * s)) for s in (1.0, 0.1, 10.0)) / 3
    assert kernels.evaluate(spec, [0.0], [np.sqrt(d2)]) == pytest.approx(want, rel=1e-14)


def test_evaluate_dimension_mismatch():
    with pytest.raises(InputError):
        kernels.evaluate(KernelSpec.gaussian(1.0), [0.0, 1.0], [0.0])
    with pytest.raises(InputError):
        kernels.evaluate(KernelSpec.ard((1.0, 2.0)), [0.0], [1.0])


@pytest.mark.parametrize("params", [(0.0,), (-1.0,), (np.nan,)])
def test_non_positive_parameters_rejected(params):
    with pytest.raises(InputError):
        KernelSpec("gaussian", params)


def test_unknown_family_rejected():
    with pytest.raises(InputError):
        KernelSpec("cosine", (1.0,))


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
def test_single_point_gram(spec):
    p = np.array([[0.4, -1.0]])
    G = kernels.gram(spec, p)
    assert G.shape == (1, 1)
    assert G[0, 0] == kernels.evaluate(spec, p[0], p[0])


def test_gram_two_points():
    G = kernels.gram(KernelSpec.gaussian(1.0), np.array([0.0, 1.0]))
    want = np.array([[1.0, np.exp(-0.5)], [np.exp(-0.5), 1.0]])
    np.testing.assert_allclose(G, want, rtol=1e-15)


def test_gram_matches_loop_oracle():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(12, 3))
    np.testing.assert_allclose(kernels.gram(KernelSpec.gaussian(0.9), p), gauss_gram(p, p, 0.9), rtol=1e-12, atol=1e-15)


def test_gram_of_full_subset_equals_full_gram():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(15, 2))
    spec = KernelSpec.gaussian(1.0)
    idx = np.arange(15)
    np.testing.assert_array_equal(kernels.gram(spec, p[idx]), kernels.gram(spec, p))


def test_empty_gram_rejected():
    with pytest.raises(InputError):
        kernels.gram(KernelSpec.gaussian(1.0), np.empty((0, 2)))


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
def test_symmetry_boundedness_psd(spec):
    rng = np.random.default_rng(11)
    a = rng.normal(size=(1000, 2)) * 2
    b = rng.normal(size=(1000, 2)) * 2
    for i in range(1000):
        assert kernels.evaluate(spec, a[i], b[i]) == kernels.evaluate(spec, b[i], a[i])
    G = kernels.gram(spec, a[:50])
    np.testing.assert_array_equal(G, G.T)
    np.testing.assert_allclose(np.diag(G), [kernels.evaluate(spec, p, p) for p in a[:50]], rtol=1e-15)
    assert np.all(np.diag(G) <= 1.0) and np.all(np.isfinite(G))
    ev = np.linalg.eigvalsh(G)
    assert ev[0] >= -1e-8 * ev[-1]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
def test_cross_gram_agrees_with_evaluate(spec):
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    C = kernels.cross_gram(spec, a, b)
    want = np.array([[kernels.evaluate(spec, ai, bj) for bj in b] for ai in a])
    np.testing.assert_allclose(C, want, rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
def test_sq_dists_never_negative(values):
    p = np.asarray(values)[:, None]
    assert np.all(kernels.sq_dists(p, p) >= 0.0)


def test_median_heuristic_examples():
    assert kernels.median_heuristic(np.array([0.0, 1.0])) == 1.0
    assert kernels.median_heuristic(np.array([0.0, 1.0, 3.0])) == 2.0
    # four points, six distances {1, 2, 3, 1, 2, 1} -> mean of the two central values
    assert kernels.median_heuristic(np.array([0.0, 1.0, 2.0, 3.0])) == 1.5


def test_median_heuristic_degenerate():
    with pytest.raises(InputError):
        kernels.median_heuristic(np.zeros(3))
    with pytest.raises(InputError):
        kernels.median_heuristic(np.zeros((1, 2)))


def test_sum_gaussians_from_median():
    assert kernels.sum_gaussians_from_median(np.array([0.0, 1.0])).params == (1.0, 0.1, 10.0)
    assert kernels.sum_gaussians_from_median(np.array([0.0, 2.0])).params == pytest.approx((2.0, 0.2, 20.0))
    with pytest.raises(InputError):
        kernels.sum_gaussians_from_median(np.ones(4))


def test_config_round_trip():
    for spec in SPECS:
        assert KernelSpec.from_dict(spec.to_dict()) == spec
    pts = np.array([0.0, 2.0])
    assert KernelSpec.from_dict({"family": "sum_gaussians", "mode": "median"}, pts).params == pytest.approx((2.0, 0.2, 20.0))
    assert KernelSpec.from_dict({"family": "gaussian", "sigma": 0.7}) == KernelSpec.gaussian(0.7)
    with pytest.raises(InputError):
        KernelSpec.from_dict({"family": "gaussian", "mode": "median"})
    with pytest.raises(InputError):
        KernelSpec.from_dict({"family": "gaussian"})
