"""Spin-wave eigenmodes of the coupling matrix.

The coupling matrix is complex and non-Hermitian; its eigenvectors ``M`` are
not orthogonal, so both ``M`` and ``M^-1`` are carried around.  Decay rates
and shifts are ``Gamma_n = 2 Re J_n`` and ``Delta_n = 2 Im J_n``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .coupling import CouplingMatrix, ensemble_offdiagonal
from .geometry import LatticeSpec, WavevectorGrid, build_lattice, wavevector_grid
from .io import format_float, write_csv

#: Warn when 1/cond(M) drops below this.
DEFECTIVE_RCOND = 1e-6
#: Eigenvalues closer than this are treated as one degenerate block.
DEGENERACY_TOL = 1e-9
#: Low-excitation validity threshold on |alpha|^2 / N.
LOW_EXCITATION_RATIO = 0.1
# Fourier overlaps this close (relative) count as tied; mirror-symmetric chains give exact ties
LABEL_TIE_RTOL = 1e-4


@dataclass(frozen=True)
class ModeDecomposition:
    """Eigenvector matrix (columns are modes), its inverse and eigenvalues.

    ``eigenvalues`` is None for the analytic plane-wave basis, whose rates are
    supplied by the emission-module predictors.
    """

    M: np.ndarray
    M_inv: np.ndarray
    eigenvalues: np.ndarray | None
    kind: str = "numeric"
    positions: np.ndarray | None = None
    k_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    labels: np.ndarray | None = None
    condition: float = 1.0

    @property
    def n_modes(self) -> int:
        return self.M.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.M.shape[0]

    @property
    def rates(self) -> np.ndarray:
        self._require_eigenvalues()
        return 2.0 * self.eigenvalues.real

    @property
    def shifts(self) -> np.ndarray:
        self._require_eigenvalues()
        return 2.0 * self.eigenvalues.imag

    def _require_eigenvalues(self):
        if self.eigenvalues is None:
            raise ValueError("this decomposition carries no eigenvalues")

    def with_eigenvalues(self, eigenvalues) -> "ModeDecomposition":
        return replace(self, eigenvalues=np.asarray(eigenvalues, dtype=complex))

    def with_labels(self, labels) -> "ModeDecomposition":
        return replace(self, labels=np.asarray(labels, dtype=int))


@dataclass(frozen=True)
class SpinWave:
    coefficients: np.ndarray
    normalization: float = 1.0
    label: object = None

    @property
    def n_atoms(self) -> int:
        return len(self.coefficients)


def _sort_order(eigenvalues: np.ndarray, quantum: float = 1e-10) -> np.ndarray:
    rates = 2.0 * eigenvalues.real
    shifts = 2.0 * eigenvalues.imag
    key_rate = np.round(-rates / quantum)
    key_shift = np.round(shifts / quantum)
    return np.lexsort((np.arange(len(eigenvalues)), key_shift, key_rate))


def _degenerate_blocks(eigenvalues: np.ndarray, tol: float):
    """Groups of consecutive (already sorted) eigenvalues closer than tol."""
    blocks, start = [], 0
    for k in range(1, len(eigenvalues) + 1):
        if k == len(eigenvalues) or abs(eigenvalues[k] - eigenvalues[k - 1]) > tol:
            if k - start > 1:
                blocks.append(slice(start, k))
            start = k
    return blocks


def diagonalize(J, degeneracy_tol: float = DEGENERACY_TOL) -> ModeDecomposition:
    """Balance, then solve the dense non-symmetric eigenproblem.

    Modes are sorted by decreasing rate, then increasing shift, then original
    index.  Eigenvectors of (numerically) degenerate eigenvalues are
    orthonormalized within their block.  A warning is issued when the
    eigenvector matrix is close to singular (defective coupling matrix).
    """
    positions = k_dir = None
    if isinstance(J, CouplingMatrix):
        positions, k_dir = J.positions, J.k_dir
        A = np.array(J.entries)
    else:
        A = np.array(J, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("coupling matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("coupling matrix has non-finite entries")

    balanced, scale = scipy.linalg.matrix_balance(A, permute=False)
    w, V = scipy.linalg.eig(balanced)
    M = scale @ V
    M /= np.linalg.norm(M, axis=0)

    order = _sort_order(w)
    w, M = w[order], M[:, order]
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or 1.0 / cond < DEFECTIVE_RCOND:
        warnings.warn(f"eigenvector matrix is ill-conditioned (cond = {cond:.3e}); "
                      "coupling matrix may be defective", RuntimeWarning, stacklevel=2)
    for block in _degenerate_blocks(w, degeneracy_tol):
        sv = np.linalg.svd(M[:, block], compute_uv=False)
        # a rank-deficient block is a defective eigenvalue; rotating it would break J M = M diag(w)
        if sv[-1] > DEFECTIVE_RCOND * sv[0]:
            q, _ = np.linalg.qr(M[:, block])
            M[:, block] = q
    cond = float(np.linalg.cond(M))
    M_inv = np.linalg.solve(M, np.eye(M.shape[0], dtype=complex))
    kw = {} if k_dir is None else {"k_dir": k_dir}
    return ModeDecomposition(M, M_inv, w, "numeric", positions=positions, condition=cond, **kw)


@dataclass(frozen=True)
class SumRuleReport:
    n_atoms: int
    sum_rates: float
    sum_shifts: float

    @property
    def rate_residual(self) -> float:
        return abs(self.sum_rates - self.n_atoms) / self.n_atoms

    @property
    def shift_residual(self) -> float:
        return abs(self.sum_shifts) / self.n_atoms


def sum_rule_report(d: ModeDecomposition) -> SumRuleReport:
    """Trace conservation: ``sum Gamma_n = N`` and ``sum Delta_n = 0``."""
    return SumRuleReport(d.n_atoms, float(np.sum(d.rates)), float(np.sum(d.shifts)))


def decomposition_residuals(J, d: ModeDecomposition) -> tuple[float, float]:
    """Max-norm residuals ``|M M^-1 - 1|`` and ``|J M - M diag(J_n)|``."""
    A = np.asarray(J)
    inv_res = np.max(np.abs(d.M @ d.M_inv - np.eye(d.n_atoms)))
    eig_res = np.max(np.abs(A @ d.M - d.M * d.eigenvalues[None, :]))
    return float(inv_res), float(eig_res)


def planewave_decomposition(spec: LatticeSpec) -> ModeDecomposition:
    """Periodic-boundary basis ``M_jn = exp(i K_n.r_j)/sqrt(N)`` (unitary)."""
    atoms = build_lattice(spec)
    grid = wavevector_grid(spec)
    n = atoms.n_atoms
    M = np.exp(1j * atoms.positions @ grid.wavevectors.T) / np.sqrt(n)
    return ModeDecomposition(M, M.conj().T, None, "analytic-planewave",
                             positions=atoms.positions, labels=grid.indices)


def ensemble_spectrum(n: int, kl_L: float) -> np.ndarray:
    """Closed-form eigenvalues of the averaged vapor coupling.

    Rank-one update of a scaled identity: one symmetric eigenvalue followed by
    ``n - 1`` degenerate ones.
    """
    beta = ensemble_offdiagonal(kl_L)
    w = np.full(n, 0.5 - beta, dtype=complex)
    w[0] = 0.5 - beta + n * beta
    return w


def ensemble_modes(n: int, kl_L: float) -> ModeDecomposition:
    """Analytic vapor modes: a discrete Fourier basis, column 0 uniform."""
    j = np.arange(n)
    M = np.exp(2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    return ModeDecomposition(M, M.conj().T, ensemble_spectrum(n, kl_L), "analytic-ensemble")


def label_modes(d: ModeDecomposition, grid: WavevectorGrid, positions=None) -> np.ndarray:
    """Assign each mode the lattice momentum of its largest Fourier component.

    Returns an ``(n_modes, 3)`` integer array of mode indices.  Ties go to the
    smaller ``|n|``.
    """
    pos = d.positions if positions is None else np.asarray(positions, dtype=float)
    if pos is None:
        raise ValueError("mode labelling needs atom positions")
    phases = np.exp(-1j * grid.wavevectors @ pos.T) / np.sqrt(len(pos))
    cols = d.M / np.linalg.norm(d.M, axis=0)
    overlap = np.abs(phases @ cols)
    size = np.linalg.norm(grid.indices, axis=1)
    labels = np.empty((d.n_modes, 3), dtype=int)
    for k in range(d.n_modes):
        col = overlap[:, k]
        cand = np.flatnonzero(col >= col.max() * (1.0 - LABEL_TIE_RTOL))
        best = cand[np.lexsort((cand, size[cand]))[0]]
        labels[k] = grid.indices[best]
    return labels


def labeled_rate(d: ModeDecomposition, labels: np.ndarray, n) -> float:
    """Mean exact rate over the modes carrying label ``n`` (NaN if none)."""
    target = np.atleast_1d(np.asarray(n, dtype=int))
    if target.size == 1:
        target = np.array([0, 0, target[0]])
    hit = np.all(np.asarray(labels) == target, axis=1)
    return float(np.mean(d.rates[hit])) if hit.any() else float("nan")


def spinwave_state(d: ModeDecomposition, n: int) -> SpinWave:
    """Normalized single-excitation state of mode column ``n``."""
    col = d.M[:, n]
    norm = float(np.sqrt(np.vdot(col, col).real))
    label = None if d.labels is None else tuple(int(v) for v in d.labels[n])
    return SpinWave(col / norm, norm, label if label is not None else n)


def uniform_state(n_atoms: int) -> SpinWave:
    return SpinWave(np.full(n_atoms, 1.0 / np.sqrt(n_atoms), dtype=complex), 1.0, "uniform")


def planewave_state(positions, kvec, label=None) -> SpinWave:
    """``exp(i K.r_j)/sqrt(N)`` on arbitrary positions."""
    pos = np.asarray(positions, dtype=float)
    c = np.exp(1j * pos @ np.asarray(kvec, dtype=float)) / np.sqrt(len(pos))
    return SpinWave(c, 1.0, label)


def evolve(d: ModeDecomposition, v, t: float) -> np.ndarray:
    """Mean spin-wave amplitudes after time ``t`` (units of 1/Gamma_bar)."""
    c = d.M_inv @ np.asarray(v, dtype=complex)
    return d.M @ (np.exp(-d.eigenvalues * t) * c)


@dataclass(frozen=True)
class CoherentPreparation:
    amplitude: complex
    mean_excitation: float
    n_atoms: int
    valid: bool

    @property
    def excitation_ratio(self) -> float:
        return self.mean_excitation / self.n_atoms


def prepare_coherent_spinwave(omega_ab: float, duration: float, n_atoms: int,
                              threshold: float = LOW_EXCITATION_RATIO) -> CoherentPreparation:
    """Coherent spin-wave written by a short two-photon pulse.

    The state is ``exp(-i (Omega_AB T/2) b_K^+)|0>``; the low-excitation
    treatment holds while ``|alpha|^2 / N <= threshold``.
    """
    area = omega_ab * duration
    if area < 0:
        raise ValueError("Omega_AB * T must be non-negative")
    alpha = -0.5j * area
    mean = abs(alpha) ** 2
    return CoherentPreparation(alpha, mean, n_atoms, mean / n_atoms <= threshold)


def format_label(label) -> str:
    if label is None:
        return ""
    v = np.atleast_1d(np.asarray(label))
    if v.size == 3 and v[0] == 0 and v[1] == 0:
        return str(int(v[2]))
    if v.size == 1:
        return str(int(v[0]))
    return ":".join(str(int(x)) for x in v)


def mode_table_rows(d: ModeDecomposition, labels=None):
    labels = d.labels if labels is None else labels
    rows = []
    for k, w in enumerate(d.eigenvalues):
        lab = format_label(labels[k]) if labels is not None else str(k)
        rows.append((lab, w.real, w.imag, 2 * w.real, 2 * w.imag))
    return rows


def write_mode_table(d: ModeDecomposition, path, labels=None):
    """``n_label,re_J,im_J,rate,shift`` plus a commented sum footer."""
    rows = mode_table_rows(d, labels)
    footer = [f"sum,,,{format_float(np.sum(d.rates))},{format_float(np.sum(d.shifts))}"]
    return write_csv(path, ["n_label", "re_J", "im_J", "rate", "shift"], rows, footer)
