import numpy as np
import pytest

from apdlr.imex import IMEXTableau, ars111, ars222, get_tableau, imex_integrate


@pytest.mark.parametrize("make", [ars111, ars222])
def test_tableau_structure(make):
    tab = make()
    assert tab.stiffly_accurate
    assert tab.A_expl[0].sum() == 0 and tab.A_impl[0, 0] == 0
    assert np.isclose(tab.w_expl.sum(), 1.0) and np.isclose(tab.w_impl.sum(), 1.0)
    assert np.allclose(tab.c_expl, tab.c_impl)


def test_ars222_abscissae():
    g = 1 - np.sqrt(2) / 2
    assert np.allclose(ars222().c_expl, [0.0, g, 1.0])


def test_get_tableau_names():
    assert get_tableau("backward-euler").name == "ars111"
    tab = ars222()
    assert get_tableau(tab) is tab
    with pytest.raises(ValueError, match="unknown stepper"):
        get_tableau("rk4")


def test_tableau_rejects_implicit_explicit_part():
    with pytest.raises(ValueError):
        IMEXTableau("bad", np.eye(2), np.ones(2) / 2, np.eye(2), np.ones(2) / 2)


def scalar_step(tab, y, t, h, a, b):
    # y' = a y + sin(t) explicit, b y implicit
    return imex_integrate(y, t, h, lambda tt, u: a * u + np.sin(tt),
                          lambda u: b * u, lambda rhs, c: rhs / (1 - c * b), tab)


def exact(t, a, b):
    lam = a + b
    # y' = lam y + sin t, y(0) = 1
    part = -(lam * np.sin(t) + np.cos(t)) / (lam**2 + 1)
    return (1 + 1 / (lam**2 + 1)) * np.exp(lam * t) + part


@pytest.mark.parametrize("make, order", [(ars111, 1), (ars222, 2)])
def test_order_of_accuracy(make, order):
    a, b, T = -0.7, -1.3, 1.0
    errs = []
    for N in (20, 40, 80, 160):
        h = T / N
        y, t = 1.0, 0.0
        for _ in range(N):
            y = scalar_step(make(), y, t, h, a, b)
            t += h
        errs.append(abs(y - exact(T, a, b)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - order) < 0.15)


def test_forward_backward_euler_formula():
    # y1 = (y0 + h E(t0, y0)) / (1 - h b)
    y0, h, a, b = 2.0, 0.1, 0.5, -4.0
    y1 = scalar_step(ars111(), y0, 0.3, h, a, b)
    assert y1 == pytest.approx((y0 + h * (a * y0 + np.sin(0.3))) / (1 - h * b))


@pytest.mark.parametrize("make", [ars111, ars222])
def test_stiff_limit_projects_onto_equilibrium(make):
    # y' = E + (phi - y)/delta: as delta -> 0 the step returns phi
    phi = 3.0
    delta = 1e-12
    y = imex_integrate(np.array([1.0]), 0.0, 0.1, lambda t, u: np.ones_like(u),
                       lambda u: -u / delta, lambda rhs, c: rhs / (1 + c / delta), make())
    assert abs(y[0]) < 1e-9
    y = imex_integrate(np.array([1.0]), 0.0, 0.1, lambda t, u: phi / delta * np.ones_like(u),
                       lambda u: -u / delta, lambda rhs, c: rhs / (1 + c / delta), make())
    assert y[0] == pytest.approx(phi, rel=1e-9)
