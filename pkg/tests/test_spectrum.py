import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eft_spectra.errors import ContractError, ParseError, ValidationError
from eft_spectra.qksd import KrylovConfig, brute_force_matrices, required_degrees
from eft_spectra.spe import invert_energy
from eft_spectra.spectrum import (
    MomentEntry,
    MomentTable,
    Spectrum,
    chebyshev_moment,
    flip_for_spe,
    load_spectrum,
    moment_table,
    qpe_backenvelope,
    save_spectrum,
    synth_exponential,
)


@st.composite
def spectra(draw, max_size=12):
    n = draw(st.integers(min_value=1, max_value=max_size))
    vals = draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n, unique=True))
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    w = np.array(raw) / np.sum(raw)
    w[-1] = 1.0 - w[:-1].sum()
    shift = draw(st.floats(-5, 5))
    scale = draw(st.floats(0.1, 10))
    return Spectrum.from_pairs(vals, w, shift, scale)


# --- construction & I/O ----------------------------------------------------


def test_load_parenthesised_pairs(tmp_path):
    p = tmp_path / "two.txt"
    p.write_text("# shift_hartree=0\n# scale_hartree=1\n# normalized=true\n(0.5, 0.7), (-0.5, 0.3)\n")
    s = load_spectrum(p)
    np.testing.assert_allclose(s.values, [-0.5, 0.5])
    np.testing.assert_allclose(s.weights, [0.3, 0.7])


def test_load_renormalises(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# normalized=true\n0.1,0.5\n0.2,0.499\n")
    s = load_spectrum(p)
    assert s.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_load_out_of_range_value(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("1.2,1.0\n")
    with pytest.raises(ValidationError, match="1.2"):
        load_spectrum(p)


def test_load_weight_sum_outside_band(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("0.1,0.5\n0.2,0.3\n")
    with pytest.raises(ValidationError):
        load_spectrum(p)


def test_load_malformed_row_reports_line(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# normalized=true\n0.1,0.5\nfoo\n")
    with pytest.raises(ParseError, match="line 3"):
        load_spectrum(p)


def test_load_physical_energies(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# shift_hartree=-10\n# scale_hartree=2\n# normalized=false\n-11.0,0.6\n-9.0,0.4\n")
    s = load_spectrum(p)
    np.testing.assert_allclose(s.values, [-0.5, 0.5])
    np.testing.assert_allclose(s.physical_energies(), [-11.0, -9.0])


@given(spectra())
def test_save_load_round_trip(tmp_path_factory, s):
    p = tmp_path_factory.mktemp("rt") / "s.txt"
    save_spectrum(s, p)
    r = load_spectrum(p)
    np.testing.assert_allclose(r.values, s.values, atol=1e-15)
    np.testing.assert_allclose(r.weights, s.weights, atol=1e-15)
    assert (r.shift, r.scale) == (s.shift, s.scale)


def test_degenerate_values_merge():
    s = Spectrum.from_pairs([0.2, 0.2 + 1e-15, -0.1], [0.25, 0.25, 0.5])
    np.testing.assert_allclose(s.values, [-0.1, 0.2])
    np.testing.assert_allclose(s.weights, [0.5, 0.5])


def test_spectrum_invariants_enforced():
    with pytest.raises(ValidationError):
        Spectrum(np.array([0.5, -0.5]), np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        Spectrum(np.array([0.0]), np.array([0.9]))
    with pytest.raises(ValidationError):
        Spectrum(np.array([0.0]), np.array([1.0]), scale=0.0)


# --- synthetic spectra -----------------------------------------------------


def test_synth_two_levels():
    s = synth_exponential([-1.0, 0.0], 0.5, 3.0, -0.5, 1.0)
    np.testing.assert_allclose(s.weights, [0.5, 0.5])


def test_synth_uniform_limit():
    s = synth_exponential([-1.0, 0.0, 0.5], 0.5, 1e-12, 0.0, 2.0)
    np.testing.assert_allclose(s.weights, [0.5, 0.25, 0.25], atol=1e-12)


def test_synth_forty_levels_direct_formula():
    e = np.linspace(-2.0, -1.0, 40)
    s = synth_exponential(e, 0.1, 0.001, -1.5, 1.0)
    r = np.arange(1, 40)
    direct = 0.9 * np.exp(-0.001 * r) / np.exp(-0.001 * r).sum()
    np.testing.assert_allclose(s.weights, np.r_[0.1, direct], atol=1e-14)


def test_synth_scale_too_small():
    with pytest.raises(ValidationError, match="larger scale"):
        synth_exponential([-3.0, 0.0], 0.5, 0.1, 0.0, 1.0)


@given(st.floats(0.01, 0.99), st.floats(1e-4, 5.0), st.integers(2, 30))
def test_synth_properties(p0, alpha, n):
    s = synth_exponential(np.linspace(-1, 1, n), p0, alpha, 0.0, 1.0)
    assert s.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert s.weights[0] == pytest.approx(p0, abs=1e-15)


# --- flip ------------------------------------------------------------------


def test_flip_example():
    f = flip_for_spe(Spectrum.from_pairs([-0.5, 0.5], [0.5, 0.5]), margin=0.0)
    np.testing.assert_allclose(f.values, [0.25, 0.75])
    assert f.ground_value == pytest.approx(0.75)


def test_flip_lower_edge_maps_to_one():
    f = flip_for_spe(Spectrum.from_pairs([-1.0, 0.3], [0.5, 0.5]), margin=0.0)
    assert f.values.max() == 1.0


@given(spectra(), st.floats(0.0, 0.1))
def test_flip_round_trip(s, margin):
    f = flip_for_spe(s, margin)
    assert f.values.min() >= 0.0 and f.values.max() <= 1.0
    theta = np.arccos(f.values)
    e = [invert_energy(-t, f).energy for t in theta]
    np.testing.assert_allclose(np.sort(e), s.physical_energies(), atol=1e-12 * max(1, s.scale + abs(s.shift)))
    assert f.ground_energy == pytest.approx(s.ground_energy, abs=1e-12 * (s.scale + abs(s.shift)))


def test_flip_twice_rejected():
    with pytest.raises(ContractError):
        flip_for_spe(flip_for_spe(Spectrum.from_pairs([0.0], [1.0])))


# --- moments ---------------------------------------------------------------


@pytest.mark.parametrize("k", [0, 1, 7, 1000])
def test_moment_single_point_at_one(k):
    assert chebyshev_moment(Spectrum.from_pairs([1.0], [1.0]), k) == pytest.approx(1.0)


def test_moment_single_point_at_zero():
    s = Spectrum.from_pairs([0.0], [1.0])
    assert chebyshev_moment(s, 1) == pytest.approx(0.0, abs=1e-15)
    assert chebyshev_moment(s, 2) == pytest.approx(-1.0)


def test_moment_two_point_symmetric():
    s = Spectrum.from_pairs([-0.5, 0.5], [0.5, 0.5])
    assert chebyshev_moment(s, 1) == pytest.approx(0.0, abs=1e-15)
    assert chebyshev_moment(s, 2) == pytest.approx(-0.5)


@given(spectra(), st.integers(0, 200), st.randoms())
def test_moment_permutation_invariant(s, k, rnd):
    idx = list(range(s.size))
    rnd.shuffle(idx)
    direct = float(np.sum(s.weights[idx] * np.cos(k * np.arccos(s.values[idx]))))
    np.testing.assert_allclose(chebyshev_moment(s, k), direct, atol=1e-14)
    assert abs(chebyshev_moment(s, k)) <= 1 + 1e-15


def test_moment_table_zero_only():
    t = moment_table(Spectrum.from_pairs([0.3], [1.0]), [0])
    assert t.degrees == [0] and t.value(0) == 1.0 and t.entries[0].is_exact


def test_moment_table_degrees_for_subsampled_krylov():
    cfg = KrylovConfig(3, 2)
    m = [i * 2 for i in range(5)]
    expected = set(m) | {abs(x + 1) for x in m} | {abs(x - 1) for x in m}
    assert set(required_degrees(cfg)) == expected


def test_moment_table_matches_direct_calls():
    s = Spectrum.from_pairs([-0.9, 0.1, 0.4], [0.2, 0.5, 0.3])
    t = moment_table(s, range(22))
    for k in range(22):
        assert t.value(k) == pytest.approx(chebyshev_moment(s, k), abs=1e-15)
    assert t.entries[0].is_exact and t.entries[1].is_exact
    assert t.sampled_degrees() == list(range(2, 22))


@given(spectra(max_size=20), st.integers(1, 12))
def test_moments_reproduce_gram_entries(s, k_dim):
    t = moment_table(s, range(2 * k_dim))
    _, sm = brute_force_matrices(s, KrylovConfig(k_dim))
    for i in range(k_dim):
        for j in range(k_dim):
            expect = 0.5 * (t.value(i + j) + t.value(abs(i - j)))
            assert abs(sm[i, j] - expect) <= 1e-13


def test_moment_table_csv_round_trip():
    s = Spectrum.from_pairs([-0.2, 0.6], [0.4, 0.6])
    t = moment_table(s, range(6))
    noisy = t.with_values({3: 0.123456789}, {3: 17})
    r = MomentTable.from_csv(noisy.to_csv())
    assert r.entries == noisy.entries
    assert noisy.to_csv().splitlines()[0] == "degree,value,shots,is_exact"


def test_moment_table_degree_zero_must_be_exact_one():
    with pytest.raises(ValidationError):
        MomentTable({0: MomentEntry(0.9, 0, True)})


def test_moment_table_missing_degree():
    with pytest.raises(ContractError):
        moment_table(Spectrum.from_pairs([0.0], [1.0]), [0, 1]).value(5)


# --- QPE back-of-envelope --------------------------------------------------


def test_qpe_values():
    assert qpe_backenvelope(1000, 100, 1.0) == pytest.approx(math.pi * 1e-4)
    assert qpe_backenvelope(10, 1, 1.0) == pytest.approx(math.pi / 10)


@given(st.integers(2, 10**6), st.integers(1, 10**6), st.floats(0.01, 1.0))
def test_qpe_halving_k_doubles(k, m, p0):
    k2 = 2 * k
    assert qpe_backenvelope(k, m, p0) == pytest.approx(2 * qpe_backenvelope(k2, m, p0))


def test_qpe_rejects_bad_input():
    with pytest.raises(ContractError):
        qpe_backenvelope(0, 1, 0.5)
