import numpy as np
import pytest

from graspd import diffcore as dc


def test_square_derivative():
    t = dc.Tape()
    x = t.var(3.0)
    g = t.backward(x * x)
    assert g[x] == 6.0


def test_sum_derivative():
    t = dc.Tape()
    x, y = t.var(0.7), t.var(-2.0)
    g = t.backward(x + y)
    assert (g[x], g[y]) == (1.0, 1.0)


@pytest.mark.parametrize("x0, expected", [(-2.0, 1.0), (2.0, 0.0)])
def test_min_zero_derivative(x0, expected):
    t = dc.Tape()
    x = t.var(x0)
    assert t.backward(dc.minimum(x, 0.0))[x] == expected


@pytest.mark.parametrize("x0, alpha, value, deriv", [
    (-0.5, 0.1, -0.5, 1.0),
    (0.5, 0.1, 0.0, 0.1),
    (0.5, 0.0, 0.0, 0.0),
])
def test_leaky_min_zero(x0, alpha, value, deriv):
    t = dc.Tape()
    x = t.var(x0)
    y = dc.leaky_min_zero(x, alpha)
    assert y.value == value
    assert t.backward(y)[x] == deriv


def test_leak_zero_matches_min():
    xs = np.linspace(-1, 1, 41)
    for x0 in xs:
        t1, t2 = dc.Tape(), dc.Tape()
        a, b = t1.var(x0), t2.var(x0)
        ya, yb = dc.leaky_min_zero(a, 0.0), dc.minimum(b, 0.0)
        assert np.asarray(ya.value).tobytes() == np.asarray(yb.value).tobytes()
        assert np.asarray(t1.backward(ya)[a]).tobytes() == np.asarray(t2.backward(yb)[b]).tobytes()


def test_leak_alpha_out_of_range():
    with pytest.raises(ValueError):
        dc.leaky_min_zero(1.0, 1.5)


def test_backward_is_linear():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=5)

    def f(x):
        return dc.vsum(dc.sin(x) * x)

    def g(x):
        return dc.norm(x) + dc.vsum(dc.exp(x * 0.3))

    def grad(fn):
        t = dc.Tape()
        x = t.var(x0)
        return t.backward(fn(x))[x]

    combo = grad(lambda x: 2.5 * f(x) - 0.75 * g(x))
    np.testing.assert_allclose(combo, 2.5 * grad(f) - 0.75 * grad(g), rtol=1e-14, atol=1e-14)


def test_backward_foreign_output():
    t1, t2 = dc.Tape(), dc.Tape()
    y = t2.var(1.0) * 2.0
    with pytest.raises(dc.UsageError):
        t1.backward(y)


def test_fd_harness_sin():
    chk = dc.finite_difference_check(lambda t, x: dc.vsum(dc.sin(x)), [1.0], 1e-5)
    assert chk.max_error < 1e-6
    assert not chk.intentional_bias


def test_fd_harness_composition():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 4))

    def f(t, x):
        y = A @ x
        return dc.norm(y) * dc.vsum(dc.cos(x)) + dc.vsum(dc.sqrt(x * x + 1.0))

    assert dc.finite_difference_check(f, rng.normal(size=4)) < 1e-4


def test_fd_harness_flags_leak():
    chk = dc.finite_difference_check(lambda t, x: dc.vsum(dc.leaky_min_zero(x, 0.1)), [0.5])
    assert chk.intentional_bias
    assert chk.ad_grad[0] == pytest.approx(0.1)
    assert chk.fd_grad[0] == pytest.approx(0.0)


def test_fd_harness_non_finite():
    with pytest.raises(dc.NumericalError, match=r"\(1,\)"), np.errstate(invalid="ignore"):
        dc.finite_difference_check(lambda t, x: dc.vsum(dc.sqrt(x)), [1.0, 0.0], h=1e-3)


def test_norm_at_zero_has_zero_gradient():
    t = dc.Tape()
    x = t.var(np.zeros(3))
    g = t.backward(dc.norm(x))[x]
    assert np.all(g == 0)


def test_clear_resets_tape():
    t = dc.Tape()
    x = t.var(2.0)
    t.backward(x * x)
    t.clear()
    assert len(t) == 0
