import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magicecho import analysis as an

KHZ = 2 * math.pi * 1e3


def sigmoid_data(A, B, C, w, noise, seed):
    rng = np.random.default_rng(seed)
    t = an.sigmoid(w, A, B, C)
    return list(zip(w, t * (1 + noise * rng.standard_normal(w.size))))


@given(st.floats(1e-6, 1e-3), st.floats(-5e6, 5e6), st.floats(1e-7, 1e-5), st.floats(0, 1e6))
def test_sigmoid_dual_form_identity(A, B, C, w):
    if abs(C * (w + B)) > 500:
        return
    a = an.sigmoid(w, A, B, C)
    b = an.sigmoid_rate_form(w, A, B, C)
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("noise,seed", [(0.01, 1), (0.02, 2), (0.03, 3)])
def test_sigmoid_recovery(noise, seed):
    A, B, C = 56e-6, -60 * KHZ, 1.0 / (12 * KHZ)
    w = np.linspace(10, 140, 14) * KHZ
    fit = an.fit_sigmoid(sigmoid_data(A, B, C, w, noise, seed), seed=0)
    assert fit.A == pytest.approx(A, rel=0.05)
    assert fit.B == pytest.approx(B, rel=0.05)
    assert fit.C == pytest.approx(C, rel=0.05)
    assert fit(np.array([1e12]))[0] == pytest.approx(fit.A)


def test_sigmoid_plateau_bound_and_permutation():
    A, B, C = 60e-6, -50 * KHZ, 1 / (10 * KHZ)
    w = np.linspace(10, 150, 12) * KHZ
    data = sigmoid_data(A, B, C, w, 0.0, 0)
    fit = an.fit_sigmoid(data)
    tmax = max(t for _, t in data)
    assert tmax <= fit.A * (1 + 1e-9) <= 1.2 * tmax
    shuffled = [data[i] for i in np.random.default_rng(5).permutation(len(data))]
    fit2 = an.fit_sigmoid(shuffled)
    assert (fit.A, fit.B, fit.C) == (fit2.A, fit2.B, fit2.C)


def test_sigmoid_errors():
    with pytest.raises(an.FitError):
        an.fit_sigmoid([(1, 1), (2, 1), (3, 1)])
    with pytest.raises(an.FitError):
        an.fit_sigmoid([(1, 5e-5), (2, 5e-5), (3, 5e-5), (4, 5e-5)])


def test_rate_algebra():
    assert an.decompose_rates(30e-6, 60e-6) == pytest.approx(60e-6, rel=1e-12)
    assert an.combine_rates(math.inf, 61e-6) == 61e-6
    assert an.combine_rates(4e-5, 4e-5) == pytest.approx(2e-5)
    assert an.decompose_rates(60e-6 * (1 - 1e-9), 60e-6) > 1e-2
    with pytest.raises(an.FitError):
        an.decompose_rates(60e-6, 60e-6)
    with pytest.raises(an.FitError):
        an.combine_rates(-1.0, 1.0)


@given(st.floats(1e-7, 1e-3), st.floats(1.01, 100.0))
def test_decompose_combine_round_trip(t_m, ratio):
    tau = t_m * ratio
    t_ns = an.decompose_rates(t_m, tau)
    assert an.combine_rates(t_ns, tau) == pytest.approx(t_m, rel=1e-12)
    assert 1 / t_m == pytest.approx(1 / t_ns + 1 / tau, rel=1e-12)


def test_decompose_table_exclusion_and_growth():
    tau = 60e-6
    kappa, pref = 1 / (20 * KHZ), 5e-6
    w = np.linspace(10, 120, 12) * KHZ
    rows = [(wi, an.combine_rates(pref * math.exp(kappa * wi), tau)) for wi in w]
    dec = an.decompose_table(rows, tau)
    for r in dec.rows:
        assert 1 / r.t_m == pytest.approx(1 / r.t_ns + 1 / tau, rel=1e-12)
        assert r.excluded == (r.t_m > 0.8 * tau)
    assert any(r.excluded for r in dec.rows)
    assert dec.kappa == pytest.approx(kappa, rel=1e-9)
    assert dec.growth.r2 == pytest.approx(1.0)


@pytest.mark.parametrize("widths", [(60, 120, 240)])
def test_plateau_converges_to_tau_d(widths):
    tau = 60e-6
    kappa, pref = 1 / (15 * KHZ), 4e-6
    errs = []
    for top in widths:
        w = np.linspace(5, top, 16) * KHZ
        rows = [(wi, an.combine_rates(pref * math.exp(kappa * wi), tau)) for wi in w]
        errs.append(abs(an.fit_sigmoid(rows).A - tau) / tau)
    assert errs[-1] < 1e-3
    assert errs[0] >= errs[1] >= errs[2]


def test_exp_decay_exact_and_noisy():
    t = np.linspace(0, 200e-6, 32)
    T0 = 50e-6
    fit = an.fit_exp_decay(t, np.exp(-t / T0))
    assert fit.method == "lsq" and fit.time == pytest.approx(T0, rel=1e-3)
    rng = np.random.default_rng(4)
    amp = np.exp(-t / T0) * (1 + 0.05 * rng.standard_normal(t.size))
    amp[0] = 1.0
    assert an.fit_exp_decay(t, amp).time == pytest.approx(T0, rel=0.10)


def test_exp_decay_censored_and_fallback():
    t = np.linspace(0, 1e-4, 16)
    cen = an.fit_exp_decay(t, np.ones_like(t))
    assert cen.censored and math.isinf(cen.time) and cen.lower_bound == t[-1]
    # a step down is nothing like an exponential: crossing fallback
    step = np.where(t < 6e-5, 1.0, 0.0)
    fit = an.fit_exp_decay(t, step)
    assert fit.method == "crossing"
    assert 5e-5 < fit.time < 7e-5
    with pytest.raises(an.FitError):
        an.fit_exp_decay(t[:5], np.ones(5))
    with pytest.raises(an.FitError):
        an.fit_exp_decay(t, 0.5 * np.ones_like(t))


def test_first_crossing_interpolates():
    t = np.array([0.0, 1.0, 2.0])
    a = np.array([1.0, 0.5, 0.0])
    assert an.first_crossing(t, a) == pytest.approx(1 + (0.5 - math.exp(-1)) / 0.5)


def test_growth_fit_cases():
    w = np.linspace(1, 10, 8) * KHZ
    kappa = 1 / (5 * KHZ)
    exact = an.fit_exp_growth([(x, 1e-6 * math.exp(kappa * x)) for x in w])
    assert exact.r2 == pytest.approx(1.0) and exact.kappa == pytest.approx(kappa)
    assert exact.prefactor == pytest.approx(1e-6)
    rng = np.random.default_rng(11)
    noisy = an.fit_exp_growth([(x, 1e-6 * math.exp(kappa * x) * (1 + 0.03 * rng.standard_normal())) for x in w])
    assert noisy.kappa == pytest.approx(kappa, rel=0.02)
    flat = an.fit_exp_growth([(x, 3e-5) for x in w])
    assert flat.kappa == 0.0
    with pytest.raises(an.FitError):
        an.fit_exp_growth([(1.0, 1.0), (2.0, 2.0)])


def test_read_decay_table(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("phi_deg,omega1_khz,t_m_us\n0,40,30\n0,20,20\n20,40,35\n")
    g = an.read_decay_table(p)
    assert list(g) == [0.0, 20.0]
    assert g[0.0][0] == (pytest.approx(20 * KHZ), pytest.approx(20e-6))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(an.FitError):
        an.read_decay_table(bad)
