from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from oracles import incoherent_trace_bruteforce, sphere_midpoint
from radiant.coupling import coupling_ensemble, coupling_fixed
from radiant.emission import beam_width
from radiant.ensemble import (
    coherent_norm,
    ensemble_angular,
    incoherent_purity,
    incoherent_purity_direct,
    incoherent_weight,
    lorentzian_amplitude,
    lorentzian_overlap,
    mixed_photon_state,
    multiphoton_report,
    optical_thickness,
    purity,
    slow_motion_average,
    symmetric_decay_rate,
)
from radiant.errors import RadiantError
from radiant.geometry import AtomArray, EnsembleSpec, sample_ensemble_positions
from radiant.quadrature import AngularGrid


def test_optical_thickness_examples():
    assert optical_thickness(201, 10.0) == 1.0
    assert optical_thickness(1, 3.0) == 0.0
    assert optical_thickness(50001, 50.0) == 10.0
    with pytest.raises(ValueError):
        optical_thickness(0, 1.0)


def test_incoherent_weight_limits():
    assert incoherent_weight(1.0) == 0.5
    assert incoherent_weight(1e12) < 1e-11
    s = mixed_photon_state(1, 5.0)
    assert s.eps == 1.0


def test_state_normalization():
    s = mixed_photon_state(50001, 50.0)
    assert s.J0 == pytest.approx(5.5)
    assert s.coherent_norm_on_grid() == pytest.approx(1.0, abs=1e-6)
    assert s.incoherent_trace_on_grid() == pytest.approx(1.0, abs=1e-6)


def test_coarse_detuning_grid_warns():
    with pytest.warns(RuntimeWarning, match="too coarse"):
        mixed_photon_state(201, 10.0, n_delta=11)


def test_kernel_guard():
    s = mixed_photon_state(201, 10.0, grid=AngularGrid.gauss_product(4, 4))
    assert s.kernel_matrix().shape == (16, 16)
    big = mixed_photon_state(201, 10.0, grid=AngularGrid.gauss_product(4000, 8))
    with pytest.raises(RadiantError):
        big.kernel_matrix()


@given(st.floats(0.5, 60.0))
@settings(max_examples=20, deadline=None)
def test_coherent_norm_integrates_to_one(L):
    g = AngularGrid.gauss_product(max(64, int(30 * L)), 1)
    v = g.evaluate(lambda u: coherent_norm(L) * np.exp(-0.5 * L**2 * np.sum((u - [0, 0, 1]) ** 2, axis=1)))
    assert g.integrate(v) == pytest.approx(1.0, rel=1e-9)


def test_angular_split():
    s = mixed_photon_state(50001, 50.0, chi=10.0)
    ang = ensemble_angular(s)
    assert ang.escape == pytest.approx(1 / 11)
    assert ang.total() == pytest.approx(1.0, abs=1e-6)
    assert ang.escape + ang.coherent_distribution().total == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(ang.incoherent_distribution().values, (1 / 11) / (4 * np.pi))


def test_coherent_width_halves_when_cloud_doubles():
    w = [beam_width(ensemble_angular(mixed_photon_state(1000, L, chi=10.0)).coherent_distribution())
         for L in (25.0, 50.0)]
    assert w[1] / w[0] == pytest.approx(0.5, rel=0.15)


def test_incoherent_purity_against_bruteforce():
    val, ok = incoherent_purity(3.0)
    assert ok
    assert val == pytest.approx(incoherent_trace_bruteforce(3.0, 60, 120), rel=1e-3)
    assert val == pytest.approx(incoherent_purity_direct(3.0, AngularGrid.gauss_product(40, 80)), rel=1e-6)


def test_purity_reference_point():
    s = mixed_photon_state(50001, 50.0, chi=10.0)
    rep = purity(s)
    assert rep.converged
    assert rep.formula == pytest.approx((10 / 11) ** 2)
    assert abs(rep.numeric - (10 / 11) ** 2) <= 0.04
    assert rep.incoherent_trace_sq == pytest.approx(2.0e-4, rel=0.05)
    assert rep.numeric >= rep.formula
    assert 0 < rep.numeric <= 1


def test_purity_mixed_limit():
    s = mixed_photon_state(1, 200.0)
    rep = purity(s)
    assert rep.eps == 1.0
    assert 0 < rep.numeric < 1e-4


def test_lorentzian_overlap_matches_grid():
    delta = np.linspace(-4000, 4000, 400_001)
    a, b = 0.5 + 0.1j, 3.0 - 0.2j
    num = trapezoid(lorentzian_amplitude(delta, a).conj() * lorentzian_amplitude(delta, b), delta)
    assert abs(num) == pytest.approx(abs(lorentzian_overlap(a, b)), rel=1e-3)
    assert abs(lorentzian_overlap(a, a)) == pytest.approx(1.0)


def test_multiphoton_examples():
    one = multiphoton_report(1, 9.0)
    assert one.pure_weight == pytest.approx(0.9)
    r = multiphoton_report(3, 9.0)
    assert r.pure_weight == pytest.approx(0.729)
    assert r.purity_bound == pytest.approx(0.531441)
    ideal = multiphoton_report(5, np.inf)
    assert ideal.pure_weight == 1.0 and ideal.purity_bound == 1.0
    with pytest.warns(RuntimeWarning, match="exceeds"):
        assert multiphoton_report(3, 9.0, n_atoms=10).low_excitation is False


def test_slow_motion_trivial_cases():
    est = slow_motion_average(lambda r: 2.5, lambda rng: rng.normal(size=(3, 3)), 20, seed=1)
    assert est.mean == 2.5 and est.stderr == 0.0
    one = slow_motion_average(lambda r: float(r.sum()), lambda rng: rng.normal(size=3), 1, seed=4)
    assert one.samples == 1 and np.isnan(one.stderr)


def test_slow_motion_skips_failures():
    def evaluator(r):
        if r[0] > 0:
            raise ValueError("rejected")
        return 1.0

    est = slow_motion_average(evaluator, lambda rng: rng.normal(size=1), 200, seed=3)
    assert est.failures > 0 and est.samples + est.failures == 200
    with pytest.raises(RadiantError):
        slow_motion_average(lambda r: 1 / 0, lambda rng: 0, 3)


def test_slow_motion_pair_matches_fast_motion_rate():
    L = 3.0  # k_L L >> 1, where the averaged coupling holds (corrections ~ exp(-2 L^2))

    def sampler(rng):
        return sample_ensemble_positions(EnsembleSpec(2, L), rng=rng)

    def evaluator(atoms):
        return symmetric_decay_rate(coupling_fixed(atoms))

    est = slow_motion_average(evaluator, sampler, 10_000, seed=2024)
    a = slow_motion_average(evaluator, sampler, 100, seed=7)
    b = slow_motion_average(evaluator, sampler, 100, seed=7)
    assert a.mean == b.mean
    fast = 2 * np.linalg.eigvalsh(np.asarray(coupling_ensemble(2, L)).real).max()
    assert abs(est.mean - fast) < 3 * est.stderr
