from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import coupling_pairwise, ensemble_matrix, expm_evolution
from radiant.coupling import coupling_ensemble, coupling_fixed
from radiant.geometry import AtomArray, EnsembleSpec, LatticeSpec, build_lattice, sample_ensemble_positions
from radiant.geometry import spacing_from_ratio, wavevector_grid
from radiant.modes import (
    decomposition_residuals,
    diagonalize,
    ensemble_modes,
    ensemble_spectrum,
    evolve,
    label_modes,
    labeled_rate,
    planewave_decomposition,
    prepare_coherent_spinwave,
    spinwave_state,
    sum_rule_report,
    uniform_state,
    write_mode_table,
)

CHAIN20 = LatticeSpec.chain(20, spacing_from_ratio(5.0))


def random_geometry(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    if seed % 2:
        spec = LatticeSpec.chain(n, float(rng.uniform(0.3, 8.0)))
        return build_lattice(spec)
    return sample_ensemble_positions(EnsembleSpec(n, float(rng.uniform(1.0, 6.0)), seed=seed))


def test_single_atom():
    d = diagonalize(coupling_fixed(AtomArray([[0, 0, 0]])))
    assert d.eigenvalues[0] == 0.5
    assert d.rates[0] == 1.0


def test_pair_eigenvalues_match_dense_solver():
    J = coupling_fixed(AtomArray([[0, 0, 0], [np.pi, 0, 0]]))
    d = diagonalize(J)
    ref = np.sort_complex(np.linalg.eigvals(coupling_pairwise(J.positions)))
    np.testing.assert_allclose(np.sort_complex(d.eigenvalues), ref, atol=1e-15)
    np.testing.assert_allclose(d.rates, [1.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(d.shifts, [-1 / np.pi, 1 / np.pi], atol=1e-15)
    assert sum_rule_report(d).sum_rates == pytest.approx(2.0, abs=1e-15)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_decomposition_invariants(seed):
    atoms = random_geometry(seed)
    J = coupling_fixed(atoms)
    d = diagonalize(J)
    inv_res, eig_res = decomposition_residuals(J, d)
    assert inv_res <= 1e-9
    assert eig_res <= 1e-8 * atoms.n_atoms
    rep = sum_rule_report(d)
    assert rep.rate_residual <= 1e-9 and rep.shift_residual <= 1e-9
    assert np.all(np.diff(d.rates) <= 1e-9)


def test_sorting_is_deterministic():
    J = coupling_fixed(random_geometry(3))
    a, b = diagonalize(J), diagonalize(J)
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.M, b.M)


@pytest.mark.parametrize("n,kl_L", [(201, 10.0), (2, 3.0), (50, 1.5)])
def test_ensemble_eigenstructure(n, kl_L):
    d = diagonalize(coupling_ensemble(n, kl_L))
    ref = np.sort(np.linalg.eigvalsh(ensemble_matrix(n, kl_L)))[::-1]
    np.testing.assert_allclose(d.eigenvalues.real, ref, atol=1e-12)
    chi = (n - 1) / (2 * kl_L**2)
    assert d.eigenvalues[0].real == pytest.approx((chi + 1) / 2, abs=1e-12)
    np.testing.assert_allclose(d.eigenvalues[1:].real, (1 - 1 / (2 * kl_L**2)) / 2, atol=1e-12)
    np.testing.assert_allclose(d.M[:, 1:].sum(axis=0), 0.0, atol=1e-10)
    assert sum_rule_report(d).sum_rates == pytest.approx(n, abs=1e-9 * n)
    np.testing.assert_allclose(np.sort(ensemble_spectrum(n, kl_L).real), np.sort(d.eigenvalues.real), atol=1e-12)


def test_analytic_ensemble_basis_diagonalizes():
    d = ensemble_modes(16, 4.0)
    J = ensemble_matrix(16, 4.0)
    np.testing.assert_allclose(J @ d.M, d.M * d.eigenvalues, atol=1e-13)


@pytest.mark.parametrize("spec", [LatticeSpec.chain(4, 1.0), LatticeSpec((3, 2, 4), 0.7), CHAIN20])
def test_planewave_basis_is_unitary(spec):
    d = planewave_decomposition(spec)
    np.testing.assert_allclose(d.M.conj().T @ d.M, np.eye(spec.n_atoms), atol=1e-12)
    assert d.eigenvalues is None
    zero = np.flatnonzero(np.all(d.labels == 0, axis=1))[0]
    np.testing.assert_allclose(d.M[:, zero], 1 / np.sqrt(spec.n_atoms), atol=1e-15)


def test_planewave_labels_are_identity():
    spec = LatticeSpec((2, 3, 4), 1.1)
    d = planewave_decomposition(spec)
    grid = wavevector_grid(spec)
    labels = label_modes(d, grid, build_lattice(spec).positions)
    np.testing.assert_array_equal(labels, grid.indices)


def test_labels_stable_under_small_perturbation():
    atoms = build_lattice(CHAIN20)
    d = diagonalize(coupling_fixed(atoms))
    grid = wavevector_grid(CHAIN20)
    base = label_modes(d, grid)
    rng = np.random.default_rng(7)
    X = 1e-6 * (rng.standard_normal((20, 20)) + 1j * rng.standard_normal((20, 20)))
    U, _ = np.linalg.qr(np.eye(20) + X)
    from dataclasses import replace

    pert = replace(d, M=U @ d.M)
    np.testing.assert_array_equal(label_modes(pert, grid), base)


def test_superradiant_labels_of_twenty_chain():
    d = diagonalize(coupling_fixed(build_lattice(CHAIN20)))
    labels = label_modes(d, wavevector_grid(CHAIN20))
    frac = labels[d.rates > 1.0, 2] / 20
    assert np.all(np.abs(frac) <= 0.4)
    assert labeled_rate(d, labels, 99) != labeled_rate(d, labels, 99)  # NaN for missing label


def test_spinwave_states_are_normalized():
    d = diagonalize(coupling_fixed(build_lattice(CHAIN20)))
    for n in range(20):
        c = spinwave_state(d, n).coefficients
        assert np.vdot(c, c).real == pytest.approx(1.0, abs=1e-12)
    pw = planewave_decomposition(CHAIN20)
    zero = np.flatnonzero(np.all(pw.labels == 0, axis=1))[0]
    s = spinwave_state(pw, zero)
    np.testing.assert_allclose(s.coefficients, 1 / np.sqrt(20))
    assert s.normalization == pytest.approx(1.0)


def test_uniform_overlap_of_twenty_chain():
    # Independent route: plain numpy eig on the pairwise matrix.
    atoms = build_lattice(CHAIN20)
    w, V = np.linalg.eig(coupling_pairwise(atoms.positions))
    V = V / np.linalg.norm(V, axis=0)
    ref = np.max(np.abs(uniform_state(20).coefficients @ V))
    d = diagonalize(coupling_fixed(atoms))
    ov = np.abs(uniform_state(20).coefficients @ d.M)
    assert ov.max() == pytest.approx(ref, abs=1e-10)
    # The forward (label 0) weight is shared by two modes, so no single mode dominates.
    assert ov.max() == pytest.approx(0.61968, abs=1e-5)
    labels = label_modes(d, wavevector_grid(CHAIN20))
    assert np.all(labels[np.argsort(ov)[-2:], 2] == 0)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_evolution_matches_matrix_exponential(t):
    rng = np.random.default_rng(11)
    for seed in range(5):
        J = coupling_fixed(random_geometry(seed))
        d = diagonalize(J)
        v = rng.standard_normal(J.n_atoms) + 1j * rng.standard_normal(J.n_atoms)
        np.testing.assert_allclose(evolve(d, v, t), expm_evolution(np.asarray(J), v, t), atol=1e-8)


def test_coherent_preparation():
    vac = prepare_coherent_spinwave(0.0, 1.0, 10)
    assert vac.mean_excitation == 0 and vac.valid
    p = prepare_coherent_spinwave(0.2, 1.0, 10)
    assert p.mean_excitation == pytest.approx(0.01, rel=1e-14)
    assert not prepare_coherent_spinwave(10.0, 1.0, 4).valid
    with pytest.raises(ValueError):
        prepare_coherent_spinwave(-1.0, 1.0, 4)


def test_mode_table(tmp_path):
    atoms = build_lattice(CHAIN20)
    d = diagonalize(coupling_fixed(atoms))
    labels = label_modes(d, wavevector_grid(CHAIN20))
    p = write_mode_table(d, tmp_path / "modes.csv", labels)
    lines = p.read_text().splitlines()
    assert lines[0] == "n_label,re_J,im_J,rate,shift"
    assert len(lines) == 22 and lines[-1].startswith("# sum,,,")
    assert float(lines[-1].split(",")[3]) == pytest.approx(20, abs=1e-8)


def test_defective_matrix_warns():
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        diagonalize(np.array([[0.5, 1.0], [0.0, 0.5]]))
