"""Photon states emitted by atomic vapors.

Fast motion (atoms move a lot during emission) averages the coupling matrix
to a rank-one update of the identity.  The symmetric spin-wave then emits
into a collimated coherent mode with weight ``1 - eps``, and an isotropic
incoherent component carries ``eps = 1/(1 + chi_en)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .emission import AngularDistribution
from .errors import RadiantError
from .quadrature import AngularGrid, integrate_adaptive

log = logging.getLogger(__name__)

#: Largest kernel materialized as a dense matrix (complex entries).
KERNEL_MEMORY_GUARD = 200_000_000
#: Relative change allowed when the purity grid is doubled.
GRID_CONVERGENCE = 0.02
#: Multiphoton low-excitation threshold on M/N.
MULTIPHOTON_RATIO = 0.1


def optical_thickness(n_atoms: int, kl_L: float) -> float:
    """``chi_en = (N - 1) / (2 (k_L L)^2)``."""
    if n_atoms < 1 or not kl_L > 0:
        raise ValueError("need N >= 1 and k_L L > 0")
    return (n_atoms - 1) / (2.0 * kl_L**2)


def incoherent_weight(chi: float) -> float:
    return 1.0 / (1.0 + chi)


def symmetric_eigenvalue(chi: float) -> float:
    """``J_0 = (chi_en + 1)/2`` in ``Gamma_bar`` units."""
    return 0.5 * (chi + 1.0)


def degenerate_eigenvalue(kl_L: float) -> float:
    return 0.5 * (1.0 - 1.0 / (2.0 * kl_L**2))


# --- angular profiles ------------------------------------------------------

def coherent_norm(kl_L: float) -> float:
    """``C`` with ``integral C exp(-L^2 |u - k|^2 / 2) dOmega = 1``."""
    L2 = kl_L**2
    return L2 / (2.0 * np.pi * -np.expm1(-2.0 * L2))


def coherent_amplitude(kl_L: float, k_dir=(0.0, 0.0, 1.0)) -> Callable:
    """Angular amplitude of the coherent mode, ``|g|^2`` integrates to one."""
    k_dir = np.asarray(k_dir, dtype=float) / np.linalg.norm(k_dir)
    c = np.sqrt(coherent_norm(kl_L))

    def g(u):
        d2 = np.sum((u - k_dir) ** 2, axis=1)
        return c * np.exp(-0.25 * kl_L**2 * d2)

    return g


def incoherent_kernel(kl_L: float) -> Callable:
    """Angular kernel ``A(u, u') = exp(-L^2 |u - u'|^2 / 4) / 4 pi`` (unit trace)."""

    def A(u, v):
        d2 = np.maximum(2.0 - 2.0 * (u @ v.T), 0.0)
        return np.exp(-0.25 * kl_L**2 * d2) / (4.0 * np.pi)

    return A


def lorentzian_amplitude(delta: np.ndarray, J: complex) -> np.ndarray:
    """``1/(i delta - J)`` normalized to unit norm on the detuning grid."""
    a = 1.0 / (1j * delta - J)
    return a / np.sqrt(trapezoid(np.abs(a) ** 2, delta))


def lorentzian_overlap(J_a: complex, J_b: complex) -> complex:
    """Continuum overlap of two normalized Lorentzian amplitudes.

    ``<a|b> = 2 sqrt(Re J_a Re J_b) / (conj(J_a) + J_b)``.
    """
    return 2.0 * np.sqrt(J_a.real * J_b.real) / (np.conj(J_a) + J_b)


# --- mixed state ---------------------------------------------------------

@dataclass(frozen=True)
class MixedPhotonState:
    """``rho = (1 - eps)|phi0><phi0| + eps rho_bar`` on a detuning x angle grid.

    The coherent profile and the radial parts are stored on their grids; the
    angular incoherent kernel is kept as a callable and materialized only on
    request.
    """

    n_atoms: int
    kl_L: float
    chi: float
    eps: float
    delta: np.ndarray
    coherent_radial: np.ndarray
    incoherent_radial: np.ndarray
    grid: AngularGrid
    coherent_angular: np.ndarray
    kernel: Callable
    k_dir: np.ndarray

    @property
    def J0(self) -> float:
        return symmetric_eigenvalue(self.chi)

    @property
    def J_incoherent(self) -> float:
        return degenerate_eigenvalue(self.kl_L)

    def coherent_norm_on_grid(self) -> float:
        ang = self.grid.integrate(np.abs(self.coherent_angular) ** 2)
        rad = trapezoid(np.abs(self.coherent_radial) ** 2, self.delta)
        return float(ang * rad)

    def incoherent_trace_on_grid(self, grid: AngularGrid | None = None) -> float:
        """Trace of ``rho_bar``; the isotropic part needs a full-sphere grid."""
        grid = AngularGrid.gauss_product(32, 8) if grid is None else grid
        diag = np.full(grid.size, 1.0 / (4.0 * np.pi))
        rad = trapezoid(np.abs(self.incoherent_radial) ** 2, self.delta)
        return float(grid.integrate(diag) * rad)

    def kernel_matrix(self) -> np.ndarray:
        """Dense angular kernel on the state grid (guarded)."""
        n = self.grid.size
        if n * n > KERNEL_MEMORY_GUARD:
            raise RadiantError(f"kernel with {n}^2 entries exceeds the memory guard")
        d = self.grid.directions
        return self.kernel(d, d)


def _coherent_grid(kl_L: float, k_dir, n_theta: int = 96, n_phi: int = 16) -> AngularGrid:
    """Forward cap reaching far into the Gaussian tail of the coherent lobe."""
    theta_max = min(np.pi, 12.0 / kl_L)
    return AngularGrid.cap(theta_max, n_theta, n_phi, k_dir)


def mixed_photon_state(n_atoms: int, kl_L: float, grid: AngularGrid | None = None,
                       n_delta: int = 2001, span: float = 40.0, k_dir=(0.0, 0.0, 1.0),
                       chi: float | None = None) -> MixedPhotonState:
    """Assemble the vapor photon state for the symmetric spin-wave.

    ``chi`` overrides the optical thickness derived from ``(N, k_L L)``.
    The radial grid spans ``[-span, span] * J_0`` with ``n_delta`` points.
    """
    chi = optical_thickness(n_atoms, kl_L) if chi is None else float(chi)
    eps = incoherent_weight(chi)
    k_dir = np.asarray(k_dir, dtype=float) / np.linalg.norm(k_dir)
    J0 = symmetric_eigenvalue(chi)
    Jn = degenerate_eigenvalue(kl_L) if kl_L**2 > 0.5 else 0.5
    delta = np.linspace(-span, span, n_delta) * J0
    if delta[1] - delta[0] > 0.5 * min(J0, Jn):
        warnings.warn("detuning grid too coarse for the Lorentzian line width",
                      RuntimeWarning, stacklevel=2)
    if grid is None:
        grid = _coherent_grid(kl_L, k_dir)
    g = coherent_amplitude(kl_L, k_dir)
    ang = grid.evaluate(g)
    ang = ang / np.sqrt(grid.integrate(ang**2))
    return MixedPhotonState(n_atoms, kl_L, chi, eps, delta,
                            lorentzian_amplitude(delta, J0), lorentzian_amplitude(delta, Jn),
                            grid, ang, incoherent_kernel(kl_L), k_dir)


@dataclass(frozen=True)
class EnsembleAngular:
    coherent: Callable
    incoherent: float
    escape: float
    coherent_weight: float
    grid: AngularGrid
    values: np.ndarray

    def total(self) -> float:
        return self.grid.integrate(self.values)

    def coherent_distribution(self) -> AngularDistribution:
        vals = self.grid.evaluate(self.coherent)
        meta = {"axisymmetric": self.grid.n_phi == 1}
        return AngularDistribution(self.grid, vals, self.grid.integrate(vals), "ensemble-coh",
                                   self.coherent, None, meta)

    def incoherent_distribution(self) -> AngularDistribution:
        inc = self.incoherent
        vals = np.full(self.grid.size, inc)
        return AngularDistribution(self.grid, vals, self.grid.integrate(vals), "ensemble-inc",
                                   lambda u: np.full(len(u), inc), None, {"axisymmetric": True})


def ensemble_angular(state: MixedPhotonState, grid: AngularGrid | None = None) -> EnsembleAngular:
    """Coherent Gaussian lobe (weight ``1 - eps``) plus isotropic ``eps / 4 pi``."""
    L = state.kl_L
    C = coherent_norm(L)
    w = 1.0 - state.eps
    k_dir = state.k_dir

    def coh(u):
        return w * C * np.exp(-0.5 * L**2 * np.sum((u - k_dir) ** 2, axis=1))

    inc = state.eps / (4.0 * np.pi)
    if grid is None:
        grid = AngularGrid.gauss_product(max(64, int(20 * L)), 1, k_dir)
    values = grid.evaluate(lambda u: coh(u) + inc)
    return EnsembleAngular(coh, inc, state.eps, w, grid, values)


# --- purity --------------------------------------------------------------

@dataclass(frozen=True)
class PurityReport:
    formula: float
    numeric: float
    incoherent_trace_sq: float
    incoherent_trace_sq_formula: float
    cross_term: float
    cross_bound: float
    eps: float
    converged: bool


def incoherent_purity(kl_L: float, n_theta: int = 64, tol: float = 1e-10) -> tuple[float, bool]:
    """``Tr(A^2) = integral integral A(u,u')^2``, using rotation invariance.

    The inner integral does not depend on ``u``, so ``Tr(A^2) = 4 pi
    integral A(z, u')^2 dOmega'``.  Doubling check returns the convergence flag.
    """
    A = incoherent_kernel(kl_L)
    z = np.array([[0.0, 0.0, 1.0]])
    grid = AngularGrid.gauss_product(n_theta, 1, (0.0, 0.0, 1.0))
    res = integrate_adaptive(lambda u: A(z, u)[0] ** 2, grid, tol=tol, axisymmetric=True,
                             relative=True)
    value = 4.0 * np.pi * res.total
    return value, res.converged


def incoherent_purity_direct(kl_L: float, grid: AngularGrid) -> float:
    """Brute-force double sum of ``A(u,u')^2`` over ``grid`` (small grids only)."""
    n = grid.size
    if n * n > KERNEL_MEMORY_GUARD:
        raise RadiantError(f"kernel with {n}^2 entries exceeds the memory guard")
    d = grid.directions
    w = grid.weights
    K = incoherent_kernel(kl_L)(d, d)
    return float(w @ (K**2) @ w)


def _cross_term(state: MixedPhotonState, grid: AngularGrid) -> float:
    """``<phi0|rho_bar|phi0>`` on ``grid``."""
    g = coherent_amplitude(state.kl_L, state.k_dir)
    d = grid.directions
    w = grid.weights
    ga = g(d)
    ga = ga / np.sqrt(np.sum(w * ga**2))
    K = state.kernel(d, d)
    ang = float((w * ga) @ K @ (w * ga))
    rad = abs(lorentzian_overlap(complex(state.J0), complex(state.J_incoherent))) ** 2
    return ang * rad


def purity(state: MixedPhotonState, n_theta: int = 48, n_phi: int = 16) -> PurityReport:
    """Closed-form and numeric ``Tr(rho^2)``.

    ``Tr(rho^2) = (1-eps)^2 + eps^2 Tr(rho_bar^2) + 2 eps (1-eps) <phi0|rho_bar|phi0>``;
    the radial factor of ``Tr(rho_bar^2)`` is one for a normalized line.
    Cross term is checked by doubling the forward-cap grid.
    """
    eps = state.eps
    tr_inc, conv_a = incoherent_purity(state.kl_L)
    coarse = _coherent_grid(state.kl_L, state.k_dir, n_theta, n_phi)
    fine = _coherent_grid(state.kl_L, state.k_dir, 2 * n_theta, 2 * n_phi)
    cross_c = _cross_term(state, coarse)
    cross = _cross_term(state, fine)
    conv_b = abs(cross - cross_c) <= GRID_CONVERGENCE * max(abs(cross), 1e-300)
    if not (conv_a and conv_b):
        warnings.warn("purity grid not converged under doubling", RuntimeWarning, stacklevel=2)
    numeric = (1.0 - eps) ** 2 + eps**2 * tr_inc + 2.0 * eps * (1.0 - eps) * cross
    bound = np.sqrt(tr_inc)
    return PurityReport((1.0 - eps) ** 2, float(numeric), float(tr_inc),
                        1.0 / (2.0 * state.kl_L**2), float(cross), float(bound),
                        eps, bool(conv_a and conv_b))


# --- multiphoton ---------------------------------------------------------

@dataclass(frozen=True)
class MultiphotonReport:
    photons: int
    eps: float
    pure_weight: float
    purity_bound: float
    low_excitation: bool | None


def multiphoton_report(photons: int, chi: float, n_atoms: int | None = None) -> MultiphotonReport:
    """Weight ``(1-eps)^M`` of the pure M-photon component and purity bound ``(1-eps)^(2M)``."""
    if photons < 1:
        raise ValueError("need at least one photon")
    eps = 0.0 if np.isinf(chi) else incoherent_weight(chi)
    ok = None
    if n_atoms is not None:
        ok = photons / n_atoms <= MULTIPHOTON_RATIO
        if not ok:
            warnings.warn(f"M/N = {photons / n_atoms:.3g} exceeds {MULTIPHOTON_RATIO}; "
                          "low-excitation treatment is doubtful", RuntimeWarning, stacklevel=2)
    w = (1.0 - eps) ** photons
    return MultiphotonReport(photons, eps, w, w * w, ok)


# --- slow motion -----------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    samples: int
    failures: int


def slow_motion_average(evaluator: Callable, sampler: Callable, samples: int,
                        seed: int = 0) -> MonteCarloEstimate:
    """Average ``evaluator(positions)`` over frozen-position draws.

    ``sampler(rng)`` returns one configuration; each sample gets its own
    generator spawned from ``seed``.  Samples whose evaluation raises are
    skipped and counted.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    children = np.random.SeedSequence(seed).spawn(samples)
    values = np.full(samples, np.nan)
    failures = 0
    for k, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        try:
            values[k] = float(evaluator(sampler(rng)))
        except (ArithmeticError, ValueError, RadiantError, np.linalg.LinAlgError) as exc:
            failures += 1
            log.debug("sample %d failed: %s", k, exc)
    ok = values[np.isfinite(values)]
    if ok.size == 0:
        raise RadiantError("every Monte-Carlo sample failed")
    stderr = float(np.std(ok, ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else float("nan")
    return MonteCarloEstimate(float(np.mean(ok)), stderr, int(ok.size), failures)


def symmetric_decay_rate(J) -> float:
    """Initial decay rate ``<s|(J + J^+)|s>`` of the symmetric spin-wave."""
    A = np.asarray(J)
    s = np.full(A.shape[0], 1.0 / np.sqrt(A.shape[0]))
    return float(np.real(s @ (A + A.conj().T) @ s))
