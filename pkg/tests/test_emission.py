from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import constants

from oracles import cap_midpoint, chain_bragg_oracle, coupling_pairwise, lattice_rate_pairsum, sphere_midpoint
from radiant.coupling import coupling_fixed
from radiant.emission import (
    ANGULAR_HEADER,
    BRAGG_HEADER,
    angular_distribution_exact,
    angular_distribution_gaussian3d,
    angular_distribution_planewave,
    angular_distribution_planewave_raw,
    beam_width,
    bragg_decompose,
    cap_probability,
    chi_3d,
    exact_intensity,
    exact_intensity_lyapunov,
    heaviside_half,
    locate_peak,
    photon_mode,
    planewave_rate,
    planewave_rate_closed_form,
    predict_1d,
    predict_3d,
    propagation_validity,
    rate_from_normalization,
    write_angular_csv,
    write_bragg_csv,
)
from radiant.geometry import AtomArray, LatticeSpec, build_lattice, spacing_from_ratio, wavevector_grid
from radiant.modes import diagonalize, label_modes, labeled_rate, uniform_state
from radiant.quadrature import AngularGrid

CHAIN20 = LatticeSpec.chain(20, spacing_from_ratio(5.0))


def chain_decomposition(spec):
    return diagonalize(coupling_fixed(build_lattice(spec)))


def test_single_atom_is_isotropic():
    d = diagonalize(coupling_fixed(AtomArray([[0.0, 0.0, 0.0]])))
    dist = angular_distribution_exact(d, uniform_state(1))
    np.testing.assert_allclose(dist.values, 1 / (4 * np.pi), rtol=1e-14)
    assert dist.total == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="no unique peak"):
        beam_width(dist)


@given(st.integers(0, 1000), st.integers(2, 12))
@settings(max_examples=15, deadline=None)
def test_exact_matches_lyapunov_route(seed, n):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-3, 3, size=(n, 3))
    if np.min(np.linalg.norm(pos[:, None] - pos[None], axis=-1)[np.triu_indices(n, 1)]) < 0.3:
        return
    k = rng.standard_normal(3)
    J = coupling_fixed(AtomArray(pos), k)
    d = diagonalize(J)
    psi = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    psi /= np.linalg.norm(psi)
    u = rng.standard_normal((50, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    a = exact_intensity(d, psi)(u)
    b = exact_intensity_lyapunov(coupling_pairwise(pos, k), pos, psi, k)(u)
    np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-13)
    assert np.all(a >= -1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_one_excitation_gives_one_photon(seed):
    rng = np.random.default_rng(seed)
    n = 8
    pos = rng.uniform(-4, 4, size=(n, 3))
    d = diagonalize(coupling_fixed(AtomArray(pos)))
    psi = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    dist = angular_distribution_exact(d, psi / np.linalg.norm(psi))
    assert dist.total == pytest.approx(1.0, abs=1e-6)


def test_twenty_chain_forward_lobe():
    d = chain_decomposition(CHAIN20)
    dist = angular_distribution_exact(d, uniform_state(20))
    assert dist.total == pytest.approx(1.0, abs=1e-6)
    width = 1 / np.sqrt(CHAIN20.spacing * 20)
    frac = cap_probability(dist, [0, 0, 1], 3 * width)
    ref = cap_midpoint(dist.func, [0, 0, 1], 3 * width, 4000, 8)
    assert frac == pytest.approx(ref, abs=1e-6)
    assert frac == pytest.approx(0.839665, abs=1e-6)
    assert np.arccos(locate_peak(dist)[2]) < 1e-6


def test_twenty_chain_departs_from_planewave_shape():
    d = chain_decomposition(CHAIN20)
    exact = angular_distribution_exact(d, uniform_state(20))
    pw = angular_distribution_planewave(CHAIN20)
    u = exact.grid.directions
    gap = np.max(np.abs(exact.func(u) - pw.func(u))) / np.max(pw.func(u))
    assert gap > 0.05
    assert exact.total == pytest.approx(1.0, abs=1e-6)
    assert pw.total == pytest.approx(1.0)


def test_planewave_single_site():
    spec = LatticeSpec.chain(1, 1.0)
    raw = angular_distribution_planewave_raw(spec)
    np.testing.assert_allclose(raw.values, 1 / (4 * np.pi))
    assert rate_from_normalization(raw) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("lam", [0.8, 1.0, 1.5, 2.5, 5.0])
def test_chain_rate_matches_pair_sum(lam):
    spec = LatticeSpec.chain(100, spacing_from_ratio(lam))
    ref = lattice_rate_pairsum(build_lattice(spec).positions, np.zeros(3))
    assert planewave_rate(spec) == pytest.approx(ref, rel=1e-8)
    assert planewave_rate_closed_form(spec) == pytest.approx(ref, rel=1e-12)


def test_chain_rate_in_directional_regime():
    spec = LatticeSpec.chain(100, spacing_from_ratio(5.0))
    pw = angular_distribution_planewave(spec)
    assert rate_from_normalization(pw) == pytest.approx(1.25, rel=0.05)


def test_chain_pattern_depends_on_theta_only():
    spec = LatticeSpec.chain(30, spacing_from_ratio(1.5))
    raw = angular_distribution_planewave_raw(spec, n=3)
    g = AngularGrid.gauss_product(64, 12)
    vals = g.evaluate(raw.func).reshape(64, 12)
    assert np.max(np.ptp(vals, axis=1)) <= 1e-12 * vals.max()


def test_cubic_rate_matches_pair_sum():
    spec = LatticeSpec.cubic(8, spacing_from_ratio(2.5))
    ref = lattice_rate_pairsum(build_lattice(spec).positions, np.zeros(3))
    assert planewave_rate(spec) == pytest.approx(ref, rel=1e-6)


def test_gaussian_peak_form_reproduces_closed_form_rate():
    spec = LatticeSpec.cubic(8, spacing_from_ratio(2.5))
    g = angular_distribution_gaussian3d(spec)
    assert g.total == pytest.approx(chi_3d(8, 2.5), rel=1e-3)


def test_bragg_directional_chain():
    b = bragg_decompose(LatticeSpec.chain(100, spacing_from_ratio(5.0)))
    ex = [p for p in b.peaks if p.exists]
    assert [p.m for p in ex] == [(0, 0, 0)]
    assert ex[0].theta == pytest.approx(0.0, abs=1e-12)
    assert ex[0].probability == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("lam", [0.8, 1.0, 1.5, 2.5])
def test_bragg_chain_against_band_oracle(lam):
    rate, probs = chain_bragg_oracle(100, lam)
    b = bragg_decompose(LatticeSpec.chain(100, spacing_from_ratio(lam)))
    assert b.rate == pytest.approx(rate, rel=1e-9)
    # windowed terms versus a hard partition of the cosine axis: they differ by the window tails
    for m, p in probs.items():
        assert b.peak((0, 0, m)).probability == pytest.approx(p, abs=5e-3)
    assert b.total_probability == pytest.approx(1.0, abs=0.02)


def test_bragg_chain_at_unit_ratio():
    b = bragg_decompose(LatticeSpec.chain(100, spacing_from_ratio(1.0)))
    p = {q.m[2]: q.probability for q in b.peaks if q.exists}
    # forward and backward cones each carry a quarter, the transverse cone a half
    assert p == pytest.approx({-2: 0.25, -1: 0.5, 0: 0.25}, abs=2e-3)
    assert b.peak((0, 0, -1)).theta == pytest.approx(np.pi / 2)


def test_bragg_unique_order_for_absorbed_photon():
    spec = LatticeSpec.cubic(8, spacing_from_ratio(4.0))
    n = (2, 0, -2)  # K = x_hat - z_hat, so k_L + K = x_hat lies on the sphere
    pred = predict_3d(spec, n=n)
    assert pred.bragg_order == (0, 0, 0)
    np.testing.assert_allclose(pred.direction, [1, 0, 0], atol=1e-12)
    with pytest.warns(RuntimeWarning, match="sites per axis"):
        b = bragg_decompose(spec, n=n)
    assert [p.m for p in b.peaks if p.exists] == [(0, 0, 0)]
    np.testing.assert_allclose(b.peak((0, 0, 0)).direction, [1, 0, 0], atol=1e-12)


def test_predict_1d_examples():
    p = predict_1d(CHAIN20)
    labels = p.labels[:, 2]
    rate = dict(zip(labels, p.rates))
    assert p.chi == 2.5
    assert rate[0] == 1.25
    assert rate[4] == 0.0 and not p.superradiant[list(labels).index(4)]
    assert p.rates.sum() == pytest.approx(20.0, abs=1e-12)
    assert p.width == pytest.approx(1 / np.sqrt(CHAIN20.spacing * 20))
    far = predict_1d(LatticeSpec.chain(20, spacing_from_ratio(0.01)))
    np.testing.assert_allclose(far.rates, 1.0, rtol=0.01)
    assert heaviside_half(0.0) == 0.5


def test_predict_3d_examples():
    p = predict_3d(LatticeSpec.cubic(10, spacing_from_ratio(2.5)))
    assert p.superradiant[0] and p.bragg_order == (0, 0, 0)
    assert p.chi == pytest.approx(10 * 1.5625 / np.sqrt(np.pi))
    assert p.width == pytest.approx(1 / (spacing_from_ratio(2.5) * 10))
    for n in [(0, 0, 0), (1, 2, -1), (-3, 0, 2)]:
        q = predict_3d(LatticeSpec.cubic(10, spacing_from_ratio(5.0)), n=n)
        if q.superradiant[0]:
            assert q.bragg_order == (0, 0, 0)
            assert np.linalg.norm(q.direction) == pytest.approx(1.0, abs=1e-9)
    dense = predict_3d(LatticeSpec.cubic(8, spacing_from_ratio(0.4)))
    assert dense.rates[0] == pytest.approx(1 + dense.chi)
    assert dense.escape_probability == pytest.approx(1 / (1 + dense.chi))


def test_photon_mode_single_atom():
    d = diagonalize(coupling_fixed(AtomArray([[0.0, 0.0, 0.0]])))
    pm = photon_mode(d, 0)
    from scipy.integrate import trapezoid

    assert trapezoid(pm.radial, pm.delta) == pytest.approx(1.0, abs=1e-6)
    assert pm.half_width() == pytest.approx(0.5, rel=1e-3)
    np.testing.assert_allclose(pm.angular.values, 1 / (4 * np.pi), rtol=1e-12)


def test_photon_mode_superradiant_width():
    d = chain_decomposition(CHAIN20)
    pm = photon_mode(d, 0)
    assert pm.half_width() == pytest.approx(d.rates[0] / 2, rel=0.10)
    assert pm.angular.grid.integrate(pm.angular.values) == pytest.approx(1.0, abs=1e-6)


def test_beam_width_scales_with_chain_length():
    w = {}
    for n in (50, 100):
        spec = LatticeSpec.chain(n, spacing_from_ratio(5.0))
        w[n] = beam_width(angular_distribution_exact(chain_decomposition(spec), uniform_state(n)))
    assert w[100] / w[50] == pytest.approx(1 / np.sqrt(2), rel=0.15)


def test_subradiant_modes_are_left_out_with_warning():
    d = diagonalize(coupling_fixed(AtomArray([[0, 0, 0], [0, 0, 1e-4]])))
    assert d.rates.min() < 1e-8
    with pytest.warns(RuntimeWarning, match="left out"):
        exact_intensity(d, uniform_state(2))


def test_propagation_validity():
    rep = propagation_validity([100.0], 1e7, 1e-4)
    assert rep.max_ratio == pytest.approx(100 * 1e7 * 1e-4 / constants.c, rel=1e-14)
    assert rep.valid
    assert not propagation_validity([0.5 * constants.c / (1e7 * 1e-4)], 1e7, 1e-4).valid
    one = propagation_validity([1.0], 1e7, 1e-4)
    assert one.max_ratio == pytest.approx(1e3 / constants.c)
    assert not propagation_validity([1.0], 1e7, 1e-4, shifts=[1e9], omega_L=1e12).valid


def test_csv_writers(tmp_path):
    d = chain_decomposition(LatticeSpec.chain(4, 2.0))
    dist = angular_distribution_exact(d, uniform_state(4))
    lines = write_angular_csv(dist, tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",".join(ANGULAR_HEADER) and len(lines) == dist.grid.size + 1
    w = np.array([float(r.split(",")[2]) for r in lines[1:]])
    assert w.sum() == pytest.approx(4 * np.pi, abs=1e-10)
    b = bragg_decompose(LatticeSpec.chain(100, spacing_from_ratio(5.0)))
    lines = write_bragg_csv(b, tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == ",".join(BRAGG_HEADER)


def test_planewave_vs_exact_rate_for_long_chain():
    spec = LatticeSpec.chain(100, spacing_from_ratio(5.0))
    d = chain_decomposition(spec)
    labels = label_modes(d, wavevector_grid(spec))
    exact = labeled_rate(d, labels, 0)
    assert planewave_rate(spec) == pytest.approx(exact, rel=0.10)
