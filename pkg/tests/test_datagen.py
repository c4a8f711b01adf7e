import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmriv import datagen
from mmriv.errors import InputError
from mmriv.risk import Dataset


def test_step_truth():
    f = datagen.structural("step")
    np.testing.assert_array_equal(f(np.array([0.5, -0.5, 0.0])), [1.0, 0.0, 1.0])
    with pytest.raises(InputError):
        datagen.structural("cubic")


def test_low_dim_moments():
    d = datagen.gen_low_dim(datagen.LowDimSpec("sin", n=100_000, seed=0))
    x = d.x[:, 0]
    n = x.size
    assert abs(x.mean()) < 3 * np.sqrt(4.01 / n)
    # Var of a sample variance is (mu4 - sigma^4) / n; bound mu4 by the empirical value
    se_var = np.sqrt((np.mean((x - x.mean()) ** 4) - x.var() ** 2) / n)
    assert abs(x.var() - 4.01) < 3 * se_var
    assert np.all(np.abs(d.z) <= 3.0)
    np.testing.assert_array_equal(d.f_star, np.sin(x))


def test_low_dim_exogeneity_and_confounding():
    d = datagen.gen_low_dim(datagen.LowDimSpec("linear", n=100_000, seed=1))
    eps = d.y - d.f_star
    assert abs(np.corrcoef(d.z[:, 0], eps)[0, 1]) < 3 / np.sqrt(d.n)
    assert np.corrcoef(d.x[:, 0], eps)[0, 1] == pytest.approx(1 / np.sqrt(4.01 * 1.01), abs=0.01)


@pytest.mark.parametrize("spec", [datagen.LowDimSpec("abs", n=50, seed=3), datagen.MendelianSpec(d_prime=4, n=50, seed=3)])
def test_determinism(spec):
    a, b = datagen.generate(spec), datagen.generate(spec)
    for f in ("x", "y", "z", "f_star"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    c = datagen.generate(type(spec)(**{**spec.__dict__, "seed": 4}))
    assert not np.array_equal(a.y, c.y)


def test_streams_are_independent_of_n():
    # each column has its own stream, so a longer draw extends the shorter one
    a = datagen.gen_low_dim(datagen.LowDimSpec("sin", n=20, seed=5))
    b = datagen.gen_low_dim(datagen.LowDimSpec("sin", n=40, seed=5))
    np.testing.assert_array_equal(a.x, b.x[:20])


def test_mendelian_support_and_means():
    spec = datagen.MendelianSpec(d_prime=8, n=100_000, seed=0)
    d = datagen.gen_mendelian(spec)
    assert set(np.unique(d.z)) <= {0.0, 1.0, 2.0}
    p, _ = datagen.mendelian_params(8, 0)
    se = np.sqrt(2 * p * (1 - p) / d.n)
    assert np.all(np.abs(d.z.mean(axis=0) - 2 * p) < 3 * se)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_mendelian_alpha_sum(d_prime, seed):
    _, alpha = datagen.mendelian_params(d_prime, seed)
    assert np.all((alpha >= 0.8 / d_prime) & (alpha <= 1.2 / d_prime))
    assert 0.8 - 1e-12 <= alpha.sum() <= 1.2 + 1e-12


def test_mendelian_alpha_concentrates():
    spread = [np.std([datagen.mendelian_params(k, s)[1].sum() for s in range(200)]) for k in (8, 32)]
    assert spread[1] < spread[0]


def test_mendelian_shared_params():
    _, alpha = datagen.mendelian_params(5, 9)
    for seed in (1, 2):
        d = datagen.gen_mendelian(datagen.MendelianSpec(d_prime=5, n=20_000, seed=seed, param_seed=9))
        # X - Z alpha is pure noise only when the rows were built with the shared alpha
        resid = d.x[:, 0] - d.z @ alpha
        assert np.all(np.abs([np.corrcoef(resid, d.z[:, k])[0, 1] for k in range(5)]) < 4 / np.sqrt(d.n))
        assert abs(resid.var() - 1.01) < 0.05


def test_spec_validation():
    with pytest.raises(InputError):
        datagen.LowDimSpec(n=0)
    with pytest.raises(InputError):
        datagen.MendelianSpec(d_prime=0)
    with pytest.raises(InputError):
        datagen.generate("low_dim")


def test_standardize_examples():
    y = np.random.default_rng(0).normal(size=50)
    y = (y - y.mean()) / y.std()
    d = Dataset(np.zeros(50), y, np.zeros(50))
    _, _, t = datagen.standardize_y(d)
    assert abs(t.mean) < 1e-12 and abs(t.scale - 1) < 1e-12
    with pytest.raises(InputError):
        datagen.standardize_y(d.with_y(np.full(50, 3.0)))


def test_standardize_applies_train_statistics():
    tr = datagen.gen_low_dim(datagen.LowDimSpec("abs", n=100, seed=0))
    te = datagen.gen_low_dim(datagen.LowDimSpec("abs", n=100, seed=1))
    tr2, (te2,), t = datagen.standardize_y(tr, [te])
    assert abs(tr2.y.mean()) < 1e-12 and abs(tr2.y.std() - 1) < 1e-12
    np.testing.assert_allclose(te2.y, (te.y - tr.y.mean()) / tr.y.std(), rtol=1e-14)
    np.testing.assert_allclose(te2.f_star, t.apply(te.f_star), rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
def test_transform_round_trip(mean, scale):
    y = np.linspace(-5, 5, 11)
    t = datagen.YTransform(mean, scale)
    np.testing.assert_allclose(t.invert(t.apply(y)), y, rtol=0, atol=1e-12 * max(1.0, abs(mean)))


def test_csv_round_trip(tmp_path):
    d = datagen.gen_mendelian(datagen.MendelianSpec(d_prime=3, n=25, seed=0))
    p = tmp_path / "d.csv"
    datagen.write_csv(d, p)
    assert p.read_text().splitlines()[0] == "x_0,y,z_0,z_1,z_2,f_star"
    e = datagen.read_csv(p)
    for f in ("x", "y", "z", "f_star"):
        np.testing.assert_array_equal(getattr(e, f), getattr(d, f))


def test_csv_without_f_star(tmp_path):
    p = tmp_path / "d.csv"
    datagen.write_csv(Dataset([1.0, 2.0], [3.0, 4.0], [5.0, 6.0]), p)
    assert datagen.read_csv(p).f_star is None


def test_csv_bad_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        datagen.read_csv(p)
