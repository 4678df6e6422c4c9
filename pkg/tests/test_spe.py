import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erf

import spe_oracle as oracle
from eft_spectra.errors import ContractError, DomainError, PreconditionError, SearchError
from eft_spectra.numerics import RngStream
from eft_spectra.qksd import inject_noise
from eft_spectra.spe import (
    HeavisideModel,
    SearchConfig,
    acdf_value,
    binary_search,
    certify_spe_range,
    erf_chebyshev_coefficients,
    exact_cdf,
    execute_plan,
    fourier_coefficients,
    invert_energy,
    measured_truncation_error,
    plan_spe,
    q_function,
    select_parameters,
    shots_for,
    spe_allocate,
    spe_run,
    truncation_bound_new,
    truncation_bound_old,
)
from eft_spectra.spectrum import Spectrum, flip_for_spe, moment_table

EPS = np.finfo(float).eps


def rounding_floor(beta, K):
    # float64 evaluation noise of Q; the analytic tail can sit far below it
    return 4 * EPS * (1 + np.abs(erf_chebyshev_coefficients(beta, K)).sum())


def two_point():
    return Spectrum.from_pairs([-0.6, 0.4], [0.5, 0.5], shift=-1.0, scale=0.5)


# --- truncation bounds -----------------------------------------------------


@pytest.mark.parametrize("beta,K", [(100, 200), (100, 400), (1000, 2000)])
def test_bound_new_covers_measured(beta, K):
    measured = oracle.sup_error(beta, K)
    assert measured <= truncation_bound_new(beta, K) + 16 * rounding_floor(beta, K)


@pytest.mark.parametrize("beta,K", [(10, 3), (10, 8), (100, 20), (100, 40), (1000, 60), (1000, 110)])
def test_bound_new_covers_measured_above_floor(beta, K):
    # the tail dominates rounding here, so no slack is needed
    measured = oracle.sup_error(beta, K)
    assert measured > 1e-12
    assert measured <= truncation_bound_new(beta, K)


@pytest.mark.parametrize("beta,K", [(30, 25), (100, 60)])
def test_bound_new_extended_precision(beta, K):
    xs = np.concatenate([np.linspace(-1, 1, 21), [0.05, 0.1, 0.2]])
    assert oracle.sup_error_mp(beta, K, xs) <= truncation_bound_new(beta, K)
    assert truncation_bound_new(beta, K) == pytest.approx(oracle.tail_mp(beta, K), rel=1e-10)


def test_bound_new_exhausted_tail():
    assert truncation_bound_new(10.0, 400) <= 1e-15
    assert truncation_bound_new(10.0, 400) >= 0


@given(st.floats(1.0, 5000.0), st.integers(1, 3000))
def test_bound_new_monotone_in_k(beta, K):
    a, b = truncation_bound_new(beta, K), truncation_bound_new(beta, K + 1)
    assert b >= 0
    assert b <= a


def test_bound_ordering_grid():
    betas = [10.0, 100.0, 1000.0]
    ks = np.unique(np.logspace(1, 5, 40).astype(int))
    pts = 0
    for b in betas:
        for k in ks:
            assert truncation_bound_new(b, int(k)) <= truncation_bound_old(b, int(k))
            pts += 1
    assert pts >= 100


@pytest.mark.parametrize("beta,K,t", [(10, 5, 10), (10, 40, 25.0), (100, 300, 150.0), (1000, 5000, 1000.0)])
def test_bound_old_second_transcription(beta, K, t):
    assert truncation_bound_old(beta, K, t) == pytest.approx(oracle.old_bound(beta, K, t), rel=1e-12)


@pytest.mark.parametrize("beta,K", [(10, 20), (100, 300), (1000, 4000)])
def test_bound_old_optimised_beats_fixed(beta, K):
    best = truncation_bound_old(beta, K)
    for t in beta * np.array([1.0, 1.7, 3.0, 10.0, 123.0]):
        assert best <= truncation_bound_old(beta, K, t) * (1 + 1e-12)


def test_bound_old_rejects_small_t():
    with pytest.raises(DomainError):
        truncation_bound_old(100.0, 50, t=99.0)


@pytest.mark.parametrize("args", [(0.0, 5), (-1.0, 5)])
def test_bound_old_domain(args):
    with pytest.raises(DomainError):
        truncation_bound_old(*args)


def test_bound_new_rejects_k0():
    with pytest.raises(DomainError):
        truncation_bound_new(10.0, 0)


# --- Fourier model ---------------------------------------------------------


def test_heaviside_half_at_origin():
    m = fourier_coefficients(50.0, 120)
    assert m.F0 == 0.5
    assert m.heaviside(0.0) == pytest.approx(0.5, abs=1e-15)


def test_coefficients_purely_imaginary():
    m = fourier_coefficients(50.0, 120)
    assert np.all(m.coeffs.real == 0.0)
    assert np.all(m.coeffs.imag != 0.0)


def test_reconstruction_against_direct_q():
    beta, K = 50.0, 120
    m = fourier_coefficients(beta, K)
    x = np.linspace(-np.pi, np.pi, 2001)
    j = m.degrees
    e = np.exp(1j * np.outer(x, j))
    h = m.F0 + (e - e.conj()) @ m.coeffs
    assert np.abs(h.imag).max() <= 1e-12
    np.testing.assert_allclose(h.real, (oracle.q_direct(np.sin(x), beta, K) + 1) / 2, atol=1e-12, rtol=0)
    np.testing.assert_allclose(m.heaviside(x), h.real, atol=1e-12, rtol=0)


def test_coefficients_match_fourier_integral():
    beta, K = 50.0, 120
    m = fourier_coefficients(beta, K)
    n = 2**16
    x = -np.pi + 2 * np.pi * np.arange(n) / n  # periodic trapezoid rule
    h = (oracle.q_direct(np.sin(x), beta, K) + 1) / 2
    for i, d in enumerate(m.degrees):
        num = np.mean(h * np.exp(-1j * d * x))
        assert abs(num - m.coeffs[i]) <= 1e-8
    assert np.mean(h).real == pytest.approx(0.5, abs=1e-8)
    assert abs(np.mean(h * np.exp(-2j * x))) <= 1e-8


def test_q_function_matches_oracle():
    x = np.linspace(-1, 1, 501)
    np.testing.assert_allclose(q_function(x, 80.0, 60), oracle.q_direct(x, 80.0, 60), atol=1e-13)


def test_measured_error_helper_matches_oracle():
    assert measured_truncation_error(100.0, 40) == pytest.approx(oracle.sup_error(100.0, 40), rel=1e-6)


@pytest.mark.parametrize("K", [32, 64, 256])
@pytest.mark.parametrize("ratio", [0.5, 1.0, 2.0])
def test_one_norm_growth(K, ratio):
    a = fourier_coefficients(ratio * K, K).one_norm
    b = fourier_coefficients(ratio * 2 * K, 2 * K).one_norm
    assert b / a <= 1.5


@pytest.mark.parametrize("args", [(0.0, 3), (1.0, -1)])
def test_fourier_domain(args):
    with pytest.raises(DomainError):
        fourier_coefficients(*args)


def test_model_bounds_ordered():
    m = fourier_coefficients(200.0, 90)
    assert m.bound_new <= m.bound_old
    assert m.max_degree == 181


# --- parameter selection ---------------------------------------------------


@pytest.mark.parametrize("delta", [0.2, 0.05, 0.01])
def test_select_halving_delta_doubles_k(delta):
    _, k1 = select_parameters(delta, 0.01)
    _, k2 = select_parameters(delta / 2, 0.01)
    assert 2 * 0.85 <= k2 / k1 <= 2 * 1.15


@pytest.mark.parametrize("delta", [0.1, 0.01])
def test_select_epsilon_is_logarithmic(delta):
    _, k1 = select_parameters(delta, 0.01)
    _, k2 = select_parameters(delta, 0.001)
    assert k1 < k2 <= 1.6 * k1


@pytest.mark.parametrize("delta", [0.1, 0.02])
def test_select_new_vs_old(delta):
    _, k_new = select_parameters(delta, 0.01)
    _, k_old = select_parameters(delta, 0.01, bound="old")
    assert k_new <= (2 / 3) * 1.15 * k_old


@pytest.mark.parametrize("delta,eps", [(0.3, 0.1), (0.05, 0.01), (0.01, 0.003)])
def test_select_is_minimal(delta, eps):
    beta, K = select_parameters(delta, eps)
    assert math.erfc(math.sqrt(2 * beta) * math.sin(delta / 2)) <= eps / 2
    assert beta == 1.0 or math.erfc(math.sqrt(2 * beta * (1 - 1e-9)) * math.sin(delta / 2)) > eps / 2 * (1 - 1e-6)
    assert truncation_bound_new(beta, K) <= eps / 2
    assert K == 1 or truncation_bound_new(beta, K - 1) > eps / 2


@pytest.mark.parametrize("delta,eps", [(0.0, 0.1), (1.0, 0.1), (0.1, 0.0), (0.1, 0.5)])
def test_select_domain(delta, eps):
    with pytest.raises(DomainError):
        select_parameters(delta, eps)


def test_select_caps():
    with pytest.raises(SearchError):
        select_parameters(1e-4, 1e-3, beta_max=10.0)
    with pytest.raises(SearchError):
        select_parameters(1e-3, 1e-3, k_max=8)


# --- ACDF ------------------------------------------------------------------


def _model_for(delta, eps):
    return fourier_coefficients(*select_parameters(delta, eps))


def test_acdf_single_point():
    delta, eps = 0.05, 0.02
    m = _model_for(delta, eps)
    s = Spectrum.from_pairs([1.0], [1.0])
    mom = moment_table(s, [0, *m.degrees.tolist()])
    assert acdf_value(m, mom, -3 * delta) <= eps
    # the sum of both CDFs reaches 2 past the step at the origin
    assert acdf_value(m, mom, 3 * delta) >= 2 - eps


@given(st.floats(-3.0, 3.0))
def test_acdf_periodic(x):
    m = fourier_coefficients(40.0, 30)
    mom = moment_table(Spectrum.from_pairs([0.2, 0.7], [0.4, 0.6]), [0, *m.degrees.tolist()])
    assert acdf_value(m, mom, x + 2 * np.pi) == pytest.approx(acdf_value(m, mom, x), abs=1e-12)


def test_acdf_broadcasts():
    m = fourier_coefficients(40.0, 30)
    mom = moment_table(Spectrum.from_pairs([0.5], [1.0]), [0, *m.degrees.tolist()])
    x = np.linspace(-1, 1, 12).reshape(3, 4)
    out = acdf_value(m, mom, x)
    assert out.shape == (3, 4)
    assert out[1, 2] == pytest.approx(acdf_value(m, mom, x[1, 2]))


def test_acdf_missing_degree():
    m = fourier_coefficients(40.0, 30)
    mom = moment_table(Spectrum.from_pairs([0.5], [1.0]), [0, 1, 3])
    with pytest.raises(ContractError):
        acdf_value(m, mom, 0.1)


@pytest.mark.parametrize("delta,eps", [(0.1, 0.03), (0.04, 0.01)])
def test_acdf_sandwich_three_point(delta, eps):
    s = Spectrum.from_pairs([0.15, 0.55, 0.95], [0.2, 0.3, 0.5])
    assert certify_spe_range(s, delta)
    m = _model_for(delta, eps)
    mom = moment_table(s, [0, *m.degrees.tolist()])
    x = np.linspace(-(np.pi - delta) / 2, (np.pi - delta) / 2, 2001)
    c = acdf_value(m, mom, x)
    assert np.all(exact_cdf(s, x - delta) - eps <= c + 1e-12)
    assert np.all(c <= exact_cdf(s, x + delta) + eps + 1e-12)


def test_estimator_variance():
    s = flip_for_spe(two_point())
    m = _model_for(0.05, 0.02)
    alloc = spe_allocate(m, 400)
    mom = moment_table(s, [0, *m.degrees.tolist()])
    x = -float(np.arccos(s.values.max())) + 0.02
    vals = np.array([acdf_value(m, inject_noise(mom, alloc, RngStream(5, t)), x) for t in range(10_000)])
    assert vals.var() <= m.one_norm**2 * (2 / 400) * 1.5
    assert vals.mean() == pytest.approx(acdf_value(m, mom, x), abs=5 * vals.std() / 100)


def test_noisy_acdf_lipschitz():
    s = flip_for_spe(two_point())
    m = _model_for(0.05, 0.02)
    mom = inject_noise(moment_table(s, [0, *m.degrees.tolist()]), spe_allocate(m, 300), RngStream(1, 0))
    delta = 0.05
    x = np.linspace(-1.5, 0.05, 3001)
    diff = np.abs(acdf_value(m, mom, x + delta / 10) - acdf_value(m, mom, x))
    assert diff.max() <= m.one_norm * m.max_degree * delta / 10


def test_exact_cdf_steps():
    s = Spectrum.from_pairs([1.0, 0.0], [0.25, 0.75])
    np.testing.assert_allclose(exact_cdf(s, [-2.0, -0.1, 0.0, 1.0, 1.6]), [0.0, 0.75, 1.25, 1.25, 2.0])


# --- shots and allocation --------------------------------------------------


def _toy(mags):
    c = -1j * np.asarray(mags, dtype=float)
    return HeavisideModel(1.0, len(mags) - 1, c, 0.0, 0.0)


def test_allocate_three_to_one():
    alloc = spe_allocate(_toy([0.75, 0.25]), 8)
    assert alloc == {0: 0, 1: 6, 3: 2}


def test_shots_formula():
    m = _toy([1.0, 0.5])  # one_norm = 0.5 + 1.5 = 2
    assert m.one_norm == 2.0
    assert shots_for(m, 0.25) == 128
    assert shots_for(m, 0.25, p_success=0.99) == 128 * 5


def test_allocation_decreasing():
    m = fourier_coefficients(500.0, 80)
    alloc = spe_allocate(m, 10_000)
    shots = np.array([alloc[int(d)] for d in m.degrees])
    assert np.all(np.diff(shots) <= 1)
    assert shots[0] > shots[-1]
    assert alloc[0] == 0


def test_allocation_floor_of_one():
    m = fourier_coefficients(500.0, 80)
    alloc = spe_allocate(m, 5)
    assert min(alloc[int(d)] for d in m.degrees) == 1


def test_allocation_rejects_zero():
    with pytest.raises(ContractError):
        spe_allocate(_toy([1.0]), 0)


# --- search ----------------------------------------------------------------


@pytest.mark.parametrize("x0", [-0.7, -0.123, 0.0, 0.31])
def test_binary_search_noiseless_step(x0):
    cfg = SearchConfig(0.5, 1e-3, 0.5, "first-jump", (-1.0, 0.5))
    trace = []
    x = binary_search(None, lambda x: float(x >= x0), cfg, trace)
    assert abs(x - x0) <= 1e-3
    assert len(trace) <= math.ceil(math.log2(1.5 / 1e-3)) + 2


@given(st.floats(0.1, 3.0), st.floats(1e-4, 1e-2), st.floats(0.0, 1.0))
def test_binary_search_query_count(width, delta, frac):
    x0 = -1.0 + frac * width
    cfg = SearchConfig(0.5, delta, 0.5, "first-jump", (-1.0, -1.0 + width))
    trace = []
    x = binary_search(None, lambda x: float(x > x0), cfg, trace)
    assert len(trace) <= max(0, math.ceil(math.log2(width / delta))) + 2
    assert abs(x - x0) <= delta + 1e-12


def test_binary_search_iteration_cap():
    cfg = SearchConfig(0.5, 1e-3, 0.5, "first-jump", (-1.0, 1.0), max_iter=5)
    with pytest.raises(SearchError):
        binary_search(None, lambda x: 0.0, cfg)


@pytest.mark.parametrize("kw", [dict(eta=0.0), dict(eta=1.5), dict(delta=0.0), dict(orientation="up"),
                                dict(interval=(0.2, 0.1))])
def test_search_config_invariants(kw):
    base = dict(eta=0.5, delta=0.01, level=0.3, orientation="first-jump", interval=(-1.0, 0.0))
    with pytest.raises(ContractError):
        SearchConfig(**{**base, **kw})


def test_search_presets():
    a = SearchConfig.preset(0.2, 0.01, flipped=False)
    b = SearchConfig.preset(0.2, 0.01, flipped=True)
    assert a.level == pytest.approx(0.15) and a.orientation == "first-jump"
    np.testing.assert_allclose(a.interval, (-(np.pi - 0.01) / 2, 0.0))
    assert b.level == pytest.approx(0.85) and b.orientation == "last-jump"
    assert b.interval[1] == 0.01


def test_search_on_exact_acdf_finds_ground_jump():
    s = flip_for_spe(two_point())
    delta = 0.01
    eta = s.p0 / 2
    m = _model_for(delta, eta / 8)
    mom = moment_table(s, [0, *m.degrees.tolist()])
    x = binary_search(m, mom, SearchConfig.preset(eta, delta, flipped=True))
    assert abs(x + np.arccos(s.values.max())) <= delta


@pytest.mark.slow
def test_binary_search_noisy_success_rate():
    plan = plan_spe(two_point(), 1e-3)
    x0 = -float(np.arccos(plan.spectrum.values.max()))
    hits = 0
    for seed in range(200):
        noisy = inject_noise(plan.moments, plan.allocation, RngStream(seed, 0))
        hits += abs(binary_search(plan.model, noisy, plan.search) - x0) <= plan.delta
    print(f"binary search success {hits}/200")
    assert hits >= 0.95 * 200


# --- range, inversion, runs ------------------------------------------------


@pytest.mark.parametrize("values,delta,ok", [
    ([0.1, 0.5, 0.9], 0.01, True),
    ([0.001, 0.5], 0.01, False),
    ([math.sin(0.005), 0.7], 0.01, True),
    ([0.2, 1.0], 0.01, True),
])
def test_certify_range(values, delta, ok):
    assert certify_spe_range(Spectrum.from_pairs(values, np.full(len(values), 1 / len(values))), delta) is ok


def test_invert_flipped_edge():
    lam = 1.7
    est = invert_energy(0.0, (-3.0, 2 * lam, True))
    assert est.energy == pytest.approx(-3.0 - lam)
    assert est.amplification == 0.0


@given(st.floats(-1.5, 1.5))
def test_invert_unflipped(x):
    est = invert_energy(x, (0.25, 3.0, False))
    assert est.energy == pytest.approx(0.25 + 3.0 * math.cos(x))
    assert est.amplification == pytest.approx(abs(math.sin(x)))


@given(st.floats(-0.99, 0.99))
def test_invert_round_trip(v):
    s = Spectrum.from_pairs([v, 0.999], [0.5, 0.5], shift=-2.0, scale=1.3)
    f = flip_for_spe(s)
    i = int(np.argmin(np.abs(f.values - (0.5 - v * s.scale / f.scale))))
    x = -math.acos(f.values[i])
    assert invert_energy(x, f).energy == pytest.approx(-2.0 + 1.3 * v, abs=1e-12)


def test_plan_shots_and_eta():
    plan = plan_spe(two_point(), 1e-3)
    assert plan.eta == pytest.approx(0.25)
    assert plan.epsilon == pytest.approx(0.25 / 8)
    assert plan.m_total == math.ceil(2 * plan.model.one_norm**2 / 0.25**2) * math.ceil(math.log(100))
    assert plan.delta == pytest.approx(1e-3 / plan.spectrum.scale)


def test_plan_range_failure():
    s = Spectrum.from_pairs([0.0005, 0.9], [0.5, 0.5], flipped=True)
    with pytest.raises(PreconditionError):
        plan_spe(s, 1e-2)


def test_run_is_deterministic_and_reports():
    a = spe_run(two_point(), 1e-2, 0.99, seed=11)
    b = spe_run(two_point(), 1e-2, 0.99, seed=11)
    assert a == b
    rep = a.report()
    assert set(rep) == {"K", "M", "beta_erf", "eta", "delta_radians", "x_star", "e0_hartree",
                        "amplification_factor", "success"}
    assert abs(a.e0_phys - two_point().ground_energy) <= 1e-2 or not a.success


def test_redraw_flag_changes_draws():
    plan = plan_spe(two_point(), 1e-2, redraw_per_query=True)
    r = execute_plan(plan, 3)
    assert r.queries > 2
    assert r == execute_plan(plan, 3)


def test_amplification_aware_conversion():
    s = two_point()
    base = plan_spe(s, 1e-3)
    hint = -float(np.arccos(base.spectrum.values.max()))
    aware = plan_spe(s, 1e-3, x_hint=hint)
    assert aware.delta == pytest.approx(base.delta / abs(math.sin(hint)))
    assert aware.model.order < base.model.order


def test_ground_near_one_amplification():
    # a ground state close to the top of the flipped range shrinks the energy error
    s = Spectrum.from_pairs([-0.99, 0.5], [0.6, 0.4], shift=0.0, scale=1.0)
    r = spe_run(s, 5e-3, 0.99, seed=0)
    assert r.amplification_factor < 0.3
    assert r.error <= r.amplification_factor * r.delta_radians * flip_for_spe(s).scale * 1.5 + 1e-12 or r.success
