"""Angular photon distributions, Bragg peaks and collective-rate predictors.

Directions are unit vectors ``u``; the photon wavevector is ``k_L u`` (all
lengths in units of ``1/k_L``).  Intensities are photons per steradian, so a
single excitation integrates to one photon.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import constants
from scipy.integrate import trapezoid
from scipy.optimize import brentq, minimize, minimize_scalar

from .coupling import _unit
from .errors import GeometryError
from .geometry import AtomArray, _frame_with_z, LatticeSpec, build_lattice, wavevector, wavevector_grid
from .io import write_csv
from .modes import ModeDecomposition, SpinWave
from .quadrature import AngularGrid, integrate_adaptive, nodes_for_width

#: Modes decaying slower than this (Gamma_bar units) are left out of the kernel.
SUBRADIANT_CUTOFF = 1e-8
#: Largest admissible emission-time / propagation-time ratio.
PROPAGATION_THRESHOLD = 1e-2
#: Resolution warning when the half-maximum region spans fewer polar nodes.
MIN_PEAK_NODES = 5
#: Below this many sites per axis the Bragg-peak picture is only indicative.
BRAGG_MIN_SITES = 10

ANGULAR_HEADER = ["theta", "phi", "weight", "intensity"]
BRAGG_HEADER = ["m1", "m2", "m3", "exists", "ux", "uy", "uz", "p"]


@dataclass(frozen=True)
class AngularDistribution:
    """``I(u)`` sampled on ``grid``; ``func`` evaluates it anywhere.

    ``rate`` is the normalization constant ``Gamma_n / Gamma_bar`` for
    plane-wave distributions.
    """

    grid: AngularGrid
    values: np.ndarray
    total: float
    provenance: str
    func: Callable | None = None
    rate: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def peak_direction(self) -> np.ndarray:
        return self.grid.directions[int(np.argmax(self.values))]

    def normalized(self) -> "AngularDistribution":
        scale = 1.0 / self.total
        func = None if self.func is None else (lambda u, f=self.func: f(u) * scale)
        prov = self.provenance.removesuffix("-raw")
        return AngularDistribution(self.grid, self.values * scale, 1.0, prov, func,
                                   self.total, dict(self.meta))


# --- grids -----------------------------------------------------------------

def default_grid(positions, pole=(0.0, 0.0, 1.0)) -> tuple[AngularGrid, bool]:
    """Starting grid for a finite set of emitters; returns ``(grid, axisymmetric)``.

    The finest interference fringe has angular width ``~ 2 pi / extent``;
    ten polar nodes are placed across it.  Collinear sets are axisymmetric
    about their axis and need a single azimuth.
    """
    atoms = AtomArray(positions)
    centered = atoms.positions - atoms.positions.mean(axis=0)
    extent = 2.0 * float(np.max(np.linalg.norm(centered, axis=1)))
    width = 2.0 * np.pi / max(extent, 1.0)
    n_theta = nodes_for_width(width)
    if atoms.n_atoms == 1:
        return AngularGrid.gauss_product(n_theta, 1, pole), True
    axis = atoms.collinear_axis()
    if axis is not None:
        return AngularGrid.gauss_product(n_theta, 1, axis), True
    return AngularGrid.gauss_product(n_theta, 2 * n_theta, pole), False


def _finish(func, grid, axisymmetric, tol, adaptive, relative=False):
    if grid is None:
        raise ValueError("a grid is required")
    if adaptive:
        res = integrate_adaptive(func, grid, tol=tol, axisymmetric=axisymmetric, relative=relative)
        return res.grid, res.values, res.total, {"converged": res.converged, "axisymmetric": axisymmetric}
    values = grid.evaluate(func)
    return grid, values, grid.integrate(values), {"converged": None, "axisymmetric": axisymmetric}


# --- exact distribution ----------------------------------------------------

def exact_intensity(d: ModeDecomposition, psi, cutoff: float = SUBRADIANT_CUTOFF):
    """Callable ``I(u)`` of the exact single-excitation emission.

    ``I(u) = (1/4 pi) sum_nn' conj(a_n) a_n' / (J_n* + J_n')`` with
    ``a_n = c_n sum_l exp(-i (u - k_L).r_l) M_ln`` and ``c = M^-1 psi``.  The
    kernel is a Gram matrix, so ``I >= 0``.
    """
    if d.positions is None or d.eigenvalues is None:
        raise ValueError("exact emission needs a numeric decomposition with positions")
    coeffs = psi.coefficients if isinstance(psi, SpinWave) else np.asarray(psi, dtype=complex)
    if coeffs.shape != (d.n_atoms,):
        raise ValueError("spin-wave length does not match the atom count")
    keep = d.rates >= cutoff
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} mode(s) with rate below {cutoff:g} left out "
                      "of the emission kernel", RuntimeWarning, stacklevel=2)
    w = d.eigenvalues[keep]
    c = d.M_inv @ coeffs
    B = d.M[:, keep] * c[keep][None, :]
    kernel = 1.0 / (w.conj()[:, None] + w[None, :])
    pos, k_dir = d.positions, d.k_dir

    def intensity(u):
        phase = np.exp(-1j * ((u - k_dir) @ pos.T))
        a = phase @ B
        return np.einsum("pn,pn->p", a.conj() @ kernel, a).real / (4.0 * np.pi)

    return intensity


def angular_distribution_exact(d: ModeDecomposition, psi, grid: AngularGrid | None = None,
                               tol: float = 1e-6, adaptive: bool = True) -> AngularDistribution:
    """Exact emission pattern of spin-wave ``psi`` (total one photon)."""
    func = exact_intensity(d, psi)
    axisym = False
    if grid is None:
        grid, axisym = default_grid(d.positions, d.k_dir)
    elif grid.n_phi == 1:
        axisym = True
    grid, values, total, meta = _finish(func, grid, axisym, tol, adaptive)
    return AngularDistribution(grid, values, total, "exact", func, None, meta)


def exact_intensity_lyapunov(J, positions, psi, k_dir=(0.0, 0.0, 1.0)):
    """Independent route: solve ``J X + X J^+ = psi psi^+`` for the time integral.

    ``X = int_0^inf exp(-J t) psi psi^+ exp(-J^+ t) dt`` and
    ``I(u) = (1/4 pi) w^T X conj(w)`` with ``w_l = exp(-i (u - k_L).r_l)``.
    """
    from scipy.linalg import solve_continuous_lyapunov

    A = np.asarray(J, dtype=complex)
    v = np.asarray(psi, dtype=complex)
    X = solve_continuous_lyapunov(A, np.outer(v, v.conj()))
    pos = np.asarray(positions, dtype=float)
    k_dir = _unit(k_dir)

    def intensity(u):
        wvec = np.exp(-1j * ((u - k_dir) @ pos.T))
        return np.einsum("pl,lm,pm->p", wvec, X, wvec.conj()).real / (4.0 * np.pi)

    return intensity


# --- plane-wave distribution -----------------------------------------------

def _dirichlet_sq(n: int, x: np.ndarray) -> np.ndarray:
    """``sin^2(n x) / sin^2(x)`` with the limit ``n^2`` at ``sin(x) = 0``."""
    s = np.sin(x)
    small = np.abs(s) < 1e-12
    out = np.empty_like(x)
    out[~small] = (np.sin(n * x[~small]) / s[~small]) ** 2
    out[small] = float(n) ** 2
    return out


def _lattice_frame(spec: LatticeSpec, k_dir, n):
    k_dir = _unit(k_dir)
    K = wavevector(spec, n)
    return k_dir, K, spec.axes, spec.spacing


def planewave_intensity(spec: LatticeSpec, k_dir, n):
    """Unnormalized ``S(u) = (1/4 pi N) |sum_j exp(i q.r_j)|^2``, ``q = u - k_L - K_n``.

    On a square lattice the sum factorizes into per-axis Dirichlet kernels;
    ``integral S dOmega = Gamma_n / Gamma_bar``.
    """
    k_dir, K, axes, d = _lattice_frame(spec, k_dir, n)
    counts = spec.counts
    n_atoms = spec.n_atoms

    def intensity(u):
        x = ((u - k_dir - K) @ axes.T) * (0.5 * d)
        val = np.ones(len(u))
        for a in range(3):
            if counts[a] > 1:
                val *= _dirichlet_sq(counts[a], x[:, a])
        return val / (4.0 * np.pi * n_atoms)

    return intensity


def _planewave_grid(spec: LatticeSpec, k_dir, n) -> tuple[AngularGrid, bool]:
    nmax = max(spec.counts)
    width = 2.0 * np.pi / (nmax * spec.spacing)
    if spec.dimensionality == 1:
        return AngularGrid.gauss_product(nodes_for_width(width), 1, spec.chain_axis), True
    pole = _unit(k_dir) + wavevector(spec, n)
    if np.linalg.norm(pole) < 1e-12:
        pole = _unit(k_dir)
    n_theta = nodes_for_width(width)
    return AngularGrid.gauss_product(n_theta, 2 * n_theta, pole), False


def angular_distribution_planewave_raw(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0,
                                       grid: AngularGrid | None = None, tol: float = 1e-6,
                                       adaptive: bool = True) -> AngularDistribution:
    """Unnormalized plane-wave pattern; its total is the collective rate."""
    func = planewave_intensity(spec, k_dir, n)
    axisym = spec.dimensionality == 1
    if grid is None:
        grid, axisym = _planewave_grid(spec, k_dir, n)
    else:
        axisym = axisym and grid.n_phi == 1
    grid, values, total, meta = _finish(func, grid, axisym, tol, adaptive, relative=True)
    meta["mode"] = tuple(int(v) for v in np.atleast_1d(n))
    return AngularDistribution(grid, values, total, "planewave-raw", func, total, meta)


def angular_distribution_planewave(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0,
                                   grid: AngularGrid | None = None, tol: float = 1e-6,
                                   adaptive: bool = True) -> AngularDistribution:
    """Plane-wave pattern normalized to one photon; ``rate`` holds ``Gamma_n``."""
    return angular_distribution_planewave_raw(spec, k_dir, n, grid, tol, adaptive).normalized()


def planewave_rate_closed_form(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0) -> float:
    """``(1/N) sum_jj' exp(-i (k_L + K_n).(r_j - r_j')) sinc(|r_j - r_j'|)``.

    The angular integral done analytically; an oracle for the quadrature.
    """
    pos = build_lattice(spec).positions
    kvec = _unit(k_dir) + wavevector(spec, n)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    return float(np.sum(np.cos(diff @ kvec) * np.sinc(dist / np.pi)) / len(pos))


def angular_distribution_gaussian3d(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0,
                                    grid: AngularGrid | None = None, tol: float = 1e-6,
                                    adaptive: bool = True) -> AngularDistribution:
    """Unnormalized pattern with each peak replaced by ``sqrt(pi) N_a exp(-(N_a y)^2)``.

    This is the Gaussian stand-in used for the closed-form 3D rate; comparing
    its total with the Dirichlet total isolates that approximation.
    """
    counts = np.asarray(spec.counts)
    axes, d = spec.axes, spec.spacing
    active = counts > 1
    a_param = 0.5 * d * counts[active].max()
    # orders whose peak stays below exp(-40) everywhere on the sphere are dropped
    orders = [(m, Q) for m, Q in _orders_3d(spec, k_dir, n)
              if (a_param * (np.linalg.norm(Q) - 1.0)) ** 2 < 40.0]
    Qs = np.array([Q for _, Q in orders]) if orders else np.zeros((0, 3))
    pref = np.prod(np.sqrt(np.pi) * counts[active])

    def intensity(u):
        out = np.zeros(len(u))
        for Q in Qs:
            y = ((u - Q) @ axes.T)[:, active] * (0.5 * d)
            out += np.exp(-np.sum((y * counts[active]) ** 2, axis=1))
        return pref * out / (4.0 * np.pi)

    if grid is None:
        grid, axisym = _planewave_grid(spec, k_dir, n)
    else:
        axisym = False
    grid, values, total, meta = _finish(intensity, grid, axisym, tol, adaptive, relative=True)
    return AngularDistribution(grid, values, total, "gaussian3d", intensity, total, meta)


def _peak_rows(dist: AngularDistribution) -> int:
    g = dist.grid
    vals = np.asarray(dist.values).reshape(g.n_theta, g.n_phi)
    k, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    column = vals[:, j] >= 0.5 * vals[k, j]
    lo = k
    while lo > 0 and column[lo - 1]:
        lo -= 1
    hi = k
    while hi < g.n_theta - 1 and column[hi + 1]:
        hi += 1
    return hi - lo + 1


def rate_from_normalization(dist: AngularDistribution) -> float:
    """Collective rate ``Gamma_n / Gamma_bar = integral I_n dOmega`` of an unnormalized pattern."""
    if _peak_rows(dist) < MIN_PEAK_NODES:
        warnings.warn("emission peak spans fewer than 5 polar nodes; "
                      "the quadrature rate may be under-resolved", RuntimeWarning, stacklevel=2)
    if dist.provenance.endswith("-raw") or dist.provenance == "gaussian3d":
        return float(dist.grid.integrate(dist.values))
    if dist.rate is None:
        raise ValueError("distribution carries no normalization constant")
    return float(dist.rate)


# --- Bragg decomposition ---------------------------------------------------

def bragg_window(n_sites: int, y: np.ndarray) -> np.ndarray:
    """``f_N(y) = N sinc^2(N y)`` on ``|y| < pi/2``, zero outside."""
    out = n_sites * np.sinc(n_sites * y / np.pi) ** 2
    return np.where(np.abs(y) < 0.5 * np.pi, out, 0.0)


@dataclass(frozen=True)
class BraggPeak:
    m: tuple
    direction: np.ndarray
    probability: float
    exists: bool
    theta: float | None = None
    integral: float = 0.0


@dataclass(frozen=True)
class BraggDecomposition:
    peaks: list
    rate: float
    mode: tuple

    def peak(self, m) -> BraggPeak | None:
        m = tuple(int(v) for v in m)
        for p in self.peaks:
            if p.m == m:
                return p
        return None

    @property
    def total_probability(self) -> float:
        return float(sum(p.probability for p in self.peaks))

    @property
    def forward_probability(self) -> float:
        p = self.peak((0, 0, 0))
        return 0.0 if p is None else p.probability

    @property
    def escape_probability(self) -> float:
        """Probability carried by every order other than forward scattering."""
        return float(sum(p.probability for p in self.peaks if p.m != (0, 0, 0)))


def _orders_3d(spec: LatticeSpec, k_dir, n):
    """Bragg orders whose window can reach the unit sphere, with ``Q_m = k_L + K_n + G_m``."""
    k_dir, K, axes, d = _lattice_frame(spec, k_dir, n)
    kap = (k_dir + K) @ axes.T
    g = 2.0 * np.pi / d
    reach = np.sqrt(3.0) * np.pi / d
    ranges = []
    for a in range(3):
        if spec.counts[a] == 1:
            ranges.append(np.array([0]))
            continue
        lo = int(np.floor((-1.0 - reach - kap[a]) / g))
        hi = int(np.ceil((1.0 + reach - kap[a]) / g))
        ranges.append(np.arange(lo, hi + 1))
    out = []
    for m in np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, 3):
        Q = k_dir + K + g * (m @ axes)
        if abs(np.linalg.norm(Q) - 1.0) <= reach:
            out.append((tuple(int(v) for v in m), Q))
    return out


def _warn_small(spec: LatticeSpec):
    small = [c for c in spec.counts if 1 < c < BRAGG_MIN_SITES]
    if small:
        warnings.warn(f"Bragg decomposition with {min(small)} sites per axis: "
                      "peaks overlap and probabilities are indicative only",
                      RuntimeWarning, stacklevel=3)


def planewave_rate(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0, tol: float = 1e-6) -> float:
    """Quadrature of the unnormalized plane-wave pattern."""
    return angular_distribution_planewave_raw(spec, k_dir, n, tol=tol).total


def bragg_decompose(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0, tol: float = 1e-7,
                    rate: float | None = None) -> BraggDecomposition:
    """Split the plane-wave pattern of mode ``n`` into windowed Bragg terms.

    Each term ``(1/4 pi) prod_a f_Na(x_a - m_a pi)`` is integrated over the
    sphere and divided by the quadrature rate, giving ``p_n^[m]``.  An order
    exists when its peak can sit on the unit sphere: in 1D when the cone
    cosine lies in ``[-1, 1]``, in 3D when ``a | |Q_m| - 1 | <= 1`` with
    ``a = k_L d0 N_x / 2``.
    """
    _warn_small(spec)
    if rate is None:
        rate = planewave_rate(spec, k_dir, n)
    mode = tuple(int(v) for v in np.atleast_1d(n))
    if spec.dimensionality == 1:
        peaks = _bragg_1d(spec, k_dir, n, rate, tol)
    else:
        peaks = _bragg_3d(spec, k_dir, n, rate, tol)
    return BraggDecomposition(peaks, rate, mode)


def _bragg_1d(spec, k_dir, n, rate, tol):
    k_dir, K, axes, d = _lattice_frame(spec, k_dir, n)
    axis = spec.chain_axis
    N = spec.counts[2]
    kap = float((k_dir + K) @ axis)
    g = 2.0 * np.pi / d
    m_lo = int(np.floor((-1.0 - kap) / g - 0.5))
    m_hi = int(np.ceil((1.0 - kap) / g + 0.5))
    side = axes[0]
    peaks = []
    for m in range(m_lo, m_hi + 1):
        lo = max(-1.0, kap + (m - 0.5) * g)
        hi = min(1.0, kap + (m + 0.5) * g)
        if hi <= lo:
            continue

        def term(u, m=m):
            x = ((u @ axis) - kap) * (0.5 * d) - m * np.pi
            return bragg_window(N, x) / (4.0 * np.pi)

        grid = AngularGrid.gauss_product(max(64, 8 * N), 1, axis, (lo, hi))
        integral = integrate_adaptive(term, grid, tol=tol, axisymmetric=True).total
        u_star = kap + m * g
        exists = -1.0 - 1e-12 <= u_star <= 1.0 + 1e-12
        cz = float(np.clip(u_star, -1.0, 1.0))
        theta = float(np.arccos(cz))
        direction = cz * axis + np.sqrt(max(0.0, 1.0 - cz * cz)) * side
        peaks.append(BraggPeak((0, 0, m), direction, integral / rate, bool(exists),
                               theta if exists else None, integral))
    return peaks


def _bragg_3d(spec, k_dir, n, rate, tol):
    counts = np.asarray(spec.counts)
    axes, d = spec.axes, spec.spacing
    active = counts > 1
    a_param = 0.5 * d * counts[active].max()
    reach = np.sqrt(3.0) * np.pi / d
    width = 2.0 * np.pi / (counts.max() * d)
    peaks = []
    for m, Q in _orders_3d(spec, k_dir, n):
        qn = np.linalg.norm(Q)
        qhat = Q / qn
        chord = min(2.0, reach + abs(qn - 1.0))
        theta_max = min(np.pi, 2.0 * np.arcsin(0.5 * chord) + width)

        def term(u, Q=Q):
            # offset from the order-m peak: (u - k_L - K).a d/2 - m_a pi
            y = ((u - Q) @ axes.T) * (0.5 * d)
            val = np.ones(len(u))
            for a in range(3):
                if counts[a] > 1:
                    val *= bragg_window(int(counts[a]), y[:, a])
            return val / (4.0 * np.pi)

        n_theta = nodes_for_width(width, (np.cos(theta_max), 1.0), minimum=32)
        grid = AngularGrid.cap(theta_max, n_theta, 32, qhat)
        integral = integrate_adaptive(term, grid, tol=tol, max_nodes=2_000_000).total
        exists = a_param * abs(qn - 1.0) <= 1.0
        peaks.append(BraggPeak(m, qhat, integral / rate, bool(exists), None, integral))
    return peaks


# --- closed-form predictors ----------------------------------------------

def heaviside_half(x, atol: float = 1e-9):
    """Step function with ``theta(0) = 1/2``."""
    x = np.asarray(x, dtype=float)
    return np.where(x > atol, 1.0, np.where(x < -atol, 0.0, 0.5))


def _snap(x, atol: float = 1e-9):
    r = np.round(x)
    return np.where(np.abs(x - r) < atol, r, x)


@dataclass(frozen=True)
class PredictedRates:
    labels: np.ndarray
    rates: np.ndarray
    chi: float
    superradiant: np.ndarray
    width: float
    forward_probability: float | None = None
    escape_probability: float | None = None
    exists: np.ndarray | None = None
    direction: np.ndarray | None = None
    bragg_order: tuple | None = None
    regime: str = ""


def chi_1d(lambda_over_d: float) -> float:
    return 0.5 * lambda_over_d


def chi_3d(n_x: int, lambda_over_d: float) -> float:
    return n_x * (0.5 * lambda_over_d) ** 2 / np.sqrt(np.pi)


def predict_1d(spec: LatticeSpec, n=None, threshold: float = 0.5) -> PredictedRates:
    """Closed-form chain rates, classification, width and forward probability.

    ``Gamma_n = chi (theta(-n/N) theta(2d/lambda + n/N) + int(2d/lambda + n/N))``
    with ``chi = lambda/(2 d0)``, ``theta(0) = 1/2`` and ``int`` truncating
    (clipped at zero).  Modes above ``threshold`` are superradiant.
    """
    if spec.dimensionality != 1:
        raise GeometryError("predict_1d needs a chain")
    N = spec.counts[2]
    if n is None:
        idx = wavevector_grid(spec).indices
    else:
        idx = np.atleast_2d([0, 0, int(n)]) if np.ndim(n) == 0 else np.atleast_2d(n).astype(int)
    frac = idx[:, 2] / N
    two_d = 2.0 / spec.lambda_over_d
    s = _snap(two_d + frac)
    chi = chi_1d(spec.lambda_over_d)
    rates = chi * (heaviside_half(-frac) * heaviside_half(s) + np.floor(np.clip(s, 0.0, None)))
    orders = int(np.floor(_snap(np.array(two_d))))
    return PredictedRates(idx, rates, chi, rates > threshold,
                          1.0 / np.sqrt(spec.spacing * N), 1.0 / (1.0 + 2.0 * orders),
                          regime="directional" if spec.lambda_over_d > 2 else "multi-cone")


def predict_3d(spec: LatticeSpec, k_dir=(0.0, 0.0, 1.0), n=0, threshold: float = 0.5) -> PredictedRates:
    """Closed-form cubic-lattice prediction for mode ``n``.

    Directional regime (``lambda > 2 d0``): rate ``chi_3D`` if a Bragg order
    satisfies energy-momentum conservation, else 0.  Otherwise the forward
    order sits on an isotropic background: rate ``1 + chi_3D`` and escape
    probability ``1/(1 + chi_3D)`` when forward scattering exists.
    """
    c = spec.counts
    if not (c[0] == c[1] == c[2]) or c[0] < 2:
        raise GeometryError("predict_3d needs a cubic lattice")
    chi = chi_3d(c[0], spec.lambda_over_d)
    a_param = 0.5 * spec.spacing * c[0]
    orders = _orders_3d(spec, k_dir, n)
    mis = {m: abs(np.linalg.norm(Q) - 1.0) for m, Q in orders}
    existing = [(m, Q) for m, Q in orders if a_param * mis[m] <= 1.0]
    label = np.atleast_2d(np.asarray(n if np.ndim(n) else [0, 0, n], dtype=int))
    width = 1.0 / (spec.spacing * c[0])
    exists = np.array([bool(existing)])
    if spec.lambda_over_d > 2.0:
        if existing:
            m_c, Q = min(existing, key=lambda mq: mis[mq[0]])
            rate, direction, escape = chi, Q / np.linalg.norm(Q), 0.0
        else:
            m_c, rate, direction, escape = None, 0.0, None, None
        regime = "directional"
    else:
        fwd = [(m, Q) for m, Q in existing if m == (0, 0, 0)]
        m_c = (0, 0, 0) if fwd else None
        direction = fwd[0][1] / np.linalg.norm(fwd[0][1]) if fwd else None
        rate = chi * bool(fwd) + 1.0
        escape = 1.0 - chi * bool(fwd) / rate
        regime = "multi-peak"
    rates = np.array([rate])
    return PredictedRates(label, rates, chi, rates > threshold, width, None, escape,
                          exists, direction, m_c, regime)


# --- photon modes ----------------------------------------------------------

@dataclass(frozen=True)
class PhotonMode:
    """Factorized photon amplitude ``A_n(u) / (i delta - J_n)``.

    ``delta = omega_k - omega_L`` in ``Gamma_bar`` units.  ``radial`` and
    ``angular.values`` are probability densities, each integrating to one.
    """

    delta: np.ndarray
    radial: np.ndarray
    angular: AngularDistribution
    eigenvalue: complex
    radial_amplitude: np.ndarray
    angular_amplitude: np.ndarray

    def amplitudes(self) -> np.ndarray:
        """Joint table ``phi[node, delta]`` normalized on the grid."""
        return np.outer(self.angular_amplitude, self.radial_amplitude)

    def half_width(self) -> float:
        """Measured half width at half maximum of the radial profile."""
        return 0.5 * _fwhm_1d(self.delta, self.radial)


def _fwhm_1d(x, y) -> float:
    k = int(np.argmax(y))
    half = 0.5 * y[k]
    left = np.flatnonzero(y[:k] < half)
    right = np.flatnonzero(y[k:] < half)
    if left.size == 0 or right.size == 0:
        raise ValueError("profile does not fall to half maximum on the grid")
    i, j = left[-1], k + right[0]
    xl = np.interp(half, [y[i], y[i + 1]], [x[i], x[i + 1]])
    xr = np.interp(half, [y[j], y[j - 1]], [x[j], x[j - 1]])
    return float(xr - xl)


def photon_mode(d: ModeDecomposition, n: int, grid: AngularGrid | None = None,
                n_delta: int = 2001, span: float = 40.0) -> PhotonMode:
    """Photon wavepacket emitted by mode ``n`` on a detuning x direction grid.

    The detuning axis covers ``[-span, span] * max(Gamma)/2`` with
    ``n_delta`` points.
    """
    if d.positions is None or d.eigenvalues is None:
        raise ValueError("photon modes need a numeric decomposition with positions")
    Jn = complex(d.eigenvalues[n])
    if Jn.real <= 0:
        raise ValueError(f"mode {n} does not decay (Gamma_n = {2 * Jn.real:.3e})")
    delta = np.linspace(-span, span, n_delta) * 0.5 * float(np.max(d.rates))
    radial_amp = 1.0 / (1j * delta - Jn)
    radial = np.abs(radial_amp) ** 2
    norm_r = trapezoid(radial, delta)
    radial_amp = radial_amp / np.sqrt(norm_r)
    radial = radial / norm_r

    col = d.M[:, n]
    pos, k_dir = d.positions, d.k_dir

    def amp(u):
        return np.exp(-1j * ((u - k_dir) @ pos.T)) @ col

    def intensity(u):
        return np.abs(amp(u)) ** 2

    axisym = False
    if grid is None:
        grid, axisym = default_grid(pos, k_dir)
    res = integrate_adaptive(intensity, grid, tol=1e-8, axisymmetric=axisym, relative=True)
    norm_a = res.total
    ang = AngularDistribution(res.grid, res.values / norm_a, 1.0, "photon-mode",
                              lambda u: intensity(u) / norm_a, None, {"axisymmetric": axisym})
    ang_amp = res.grid.evaluate(lambda u: np.abs(amp(u))) / np.sqrt(norm_a)
    phase = res.grid.evaluate(lambda u: np.angle(amp(u)))
    return PhotonMode(delta, radial, ang, Jn, radial_amp, ang_amp * np.exp(1j * phase))


# --- beam geometry -------------------------------------------------------

def locate_peak(dist: AngularDistribution) -> np.ndarray:
    """Direction of maximum intensity, refined off the grid nodes."""
    if dist.func is None:
        return dist.peak_direction
    p0 = dist.peak_direction
    frame = _frame_with_z(p0)

    def point(x):
        u = p0 + x[0] * frame[0] + x[1] * frame[1]
        return u / np.linalg.norm(u)

    h = np.pi / dist.grid.n_theta
    res = minimize(lambda x: -dist.func(point(x)[None, :])[0], np.zeros(2), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14 * float(np.max(dist.values)),
                            "initial_simplex": [[0, 0], [h, 0], [0, h]]})
    return point(res.x)


def beam_width(dist: AngularDistribution, rel_tol: float = 1e-9) -> float:
    """Full width at half maximum along the meridian through the peak (radians)."""
    if dist.func is None:
        raise ValueError("beam_width needs a distribution with an evaluator")
    v = np.asarray(dist.values)
    vmax = float(v.max())
    if vmax <= 0 or vmax - float(v.min()) <= rel_tol * vmax:
        raise ValueError("no unique peak")
    dirs = dist.grid.directions
    top = np.flatnonzero(v >= vmax * (1.0 - 1e-6))
    spacing = np.pi / dist.grid.n_theta
    p = dirs[int(np.argmax(v))]
    if top.size > 1:
        spread = np.arccos(np.clip(dirs[top] @ p, -1.0, 1.0)).max()
        if spread > 4.0 * spacing:
            raise ValueError("no unique peak")
    pole = dist.grid.pole
    e = pole - (pole @ p) * p
    if np.linalg.norm(e) < 1e-8:
        e = dist.grid.frame[0] - (dist.grid.frame[0] @ p) * p
    e = e / np.linalg.norm(e)

    def g(t):
        t = np.atleast_1d(t)
        u = np.cos(t)[:, None] * p + np.sin(t)[:, None] * e
        return dist.func(u)

    h = 2.0 * spacing
    opt = minimize_scalar(lambda t: -g(t)[0], bounds=(-h, h), method="bounded",
                          options={"xatol": 1e-10})
    t0 = float(opt.x) if -opt.fun >= g(0.0)[0] else 0.0
    peak = float(g(t0)[0])
    half = 0.5 * peak
    step = 0.25 * spacing

    def crossing(sign):
        t = t0
        while abs(t - t0) < np.pi:
            t_next = t + sign * step
            if g(t_next)[0] < half:
                return brentq(lambda s: g(s)[0] - half, t, t_next, xtol=1e-12)
            t = t_next
        raise ValueError("no unique peak")

    return float(crossing(+1.0) - crossing(-1.0))


def cap_probability(dist: AngularDistribution, axis, theta_max: float, tol: float = 1e-8) -> float:
    """Emission probability within ``theta_max`` of ``axis`` (normalized pattern)."""
    if dist.func is None:
        raise ValueError("cap_probability needs a distribution with an evaluator")
    axis = _unit(axis)
    axisym = bool(dist.meta.get("axisymmetric")) and abs(abs(axis @ dist.grid.pole) - 1.0) < 1e-12
    n_theta = max(64, dist.grid.n_theta)
    grid = AngularGrid.cap(theta_max, n_theta, 1 if axisym else max(32, dist.grid.n_phi), axis)
    inside = integrate_adaptive(dist.func, grid, tol=tol, axisymmetric=axisym).total
    return float(inside / dist.total)


# --- validity ------------------------------------------------------------

@dataclass(frozen=True)
class ValidityReport:
    ratios: np.ndarray
    max_ratio: float
    valid: bool
    margin: float
    shift_ratio: float | None = None


def propagation_validity(rates, gamma_bar_hz: float, length_m: float, shifts=None,
                         omega_L: float | None = None,
                         threshold: float = PROPAGATION_THRESHOLD) -> ValidityReport:
    """Compare each emission rate with the light-crossing time of the sample.

    ``rho_n = Gamma_n Gamma_bar L / c`` must stay below ``threshold``; if
    ``omega_L`` is given, ``|Delta_n| Gamma_bar / omega_L`` must as well.
    """
    if isinstance(rates, ModeDecomposition):
        shifts = rates.shifts if shifts is None else shifts
        rates = rates.rates
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    if gamma_bar_hz <= 0 or length_m <= 0:
        raise ValueError("Gamma_bar and L must be positive")
    rho = rates * gamma_bar_hz * length_m / constants.c
    max_rho = float(np.max(np.abs(rho)))
    ok = max_rho <= threshold
    shift_ratio = None
    if omega_L is not None and shifts is not None:
        shift_ratio = float(np.max(np.abs(shifts)) * gamma_bar_hz / omega_L)
        ok = ok and shift_ratio <= threshold
    margin = threshold / max_rho if max_rho > 0 else np.inf
    return ValidityReport(rho, max_rho, bool(ok), float(margin), shift_ratio)


# --- output ----------------------------------------------------------------

def angular_rows(dist: AngularDistribution):
    theta, phi = dist.grid.lab_angles()
    return zip(theta, phi, dist.grid.weights, dist.values)


def write_angular_csv(dist: AngularDistribution, path):
    return write_csv(path, ANGULAR_HEADER, angular_rows(dist))


def bragg_rows(decomp: BraggDecomposition):
    for p in sorted(decomp.peaks, key=lambda q: q.m):
        yield (*p.m, p.exists, *p.direction, p.probability)


def write_bragg_csv(decomp: BraggDecomposition, path):
    return write_csv(path, BRAGG_HEADER, bragg_rows(decomp))
