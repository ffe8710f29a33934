"""Atom positions: square lattices, ion-crystal chains and Gaussian vapors.

All lengths are dimensionless and premultiplied by the laser wavenumber,
i.e. a stored value ``x`` means ``k_L * x`` in physical units.  A lattice
with ``lambda / d0 = 5`` therefore has ``spacing = 2*pi/5``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, NumericalError

#: Resource guard for lattice construction.
MAX_ATOMS = 200_000

#: Generator used for every sampled geometry; echoed in run manifests.
RNG_ALGORITHM = "numpy.random.PCG64"


def spacing_from_ratio(lambda_over_d: float) -> float:
    """Convert ``lambda/d0`` to the dimensionless spacing ``k_L d0``."""
    if lambda_over_d <= 0:
        raise GeometryError("lambda/d0 must be positive")
    return 2.0 * np.pi / lambda_over_d


def rng_metadata() -> dict:
    return {"algorithm": RNG_ALGORITHM, "numpy": np.__version__}


@dataclass(frozen=True)
class LatticeSpec:
    """Square lattice with ``counts[a]`` sites along ``axes[a]``.

    Parameters
    ----------
    counts : tuple of int
        Sites per axis ``(N_x, N_y, N_z)``.  A chain is ``(1, 1, N)``.
    spacing : float
        Lattice constant times ``k_L``.
    axes : (3, 3) array, optional
        Rows are the orthonormal lattice axes; identity by default.
    """

    counts: tuple[int, int, int]
    spacing: float
    axes: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != 3 or min(counts) < 1:
            raise GeometryError(f"lattice counts must be three positive integers, got {self.counts}")
        if not self.spacing > 0:
            raise GeometryError("lattice spacing must be positive")
        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (3, 3) or not np.allclose(axes @ axes.T, np.eye(3), atol=1e-12):
            raise GeometryError("lattice axes must be an orthonormal 3x3 matrix")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "axes", axes)

    @classmethod
    def chain(cls, n: int, spacing: float, axis=(0.0, 0.0, 1.0)) -> "LatticeSpec":
        """1D chain of ``n`` atoms along ``axis`` (z by default)."""
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls((1, 1, n), spacing, _frame_with_z(axis))

    @classmethod
    def cubic(cls, n_per_axis: int, spacing: float) -> "LatticeSpec":
        return cls((n_per_axis,) * 3, spacing)

    @property
    def dimensionality(self) -> int:
        return 1 if self.counts[0] == 1 and self.counts[1] == 1 else 3

    @property
    def n_atoms(self) -> int:
        return int(np.prod(self.counts))

    @property
    def chain_axis(self) -> np.ndarray:
        return self.axes[2]

    @property
    def lambda_over_d(self) -> float:
        return 2.0 * np.pi / self.spacing


@dataclass(frozen=True)
class AtomArray:
    positions: np.ndarray
    source: str = "file"

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1 and pos.size == 3:
            pos = pos[None, :]
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise GeometryError("positions must be an (N, 3) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.n_atoms

    def min_distance(self) -> float:
        if self.n_atoms < 2:
            return np.inf
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        dist[np.diag_indices_from(dist)] = np.inf
        return float(dist.min())

    def collinear_axis(self, tol: float = 1e-12) -> np.ndarray | None:
        """Unit vector of the common line through all atoms, or None."""
        if self.n_atoms < 2:
            return None
        centered = self.positions - self.positions.mean(axis=0)
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        if s[0] == 0 or s[1] > tol * s[0]:
            return None
        return vt[0]


@dataclass(frozen=True)
class WavevectorGrid:
    indices: np.ndarray  # (N, 3) integers
    wavevectors: np.ndarray  # (N, 3) in units of k_L

    def __len__(self):
        return self.indices.shape[0]


@dataclass(frozen=True)
class EnsembleSpec:
    n_atoms: int
    kl_L: float
    seed: int = 0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise GeometryError("ensemble needs at least one atom")
        if not self.kl_L > 0:
            raise GeometryError("k_L L must be positive")


def _frame_with_z(axis: np.ndarray) -> np.ndarray:
    """Orthonormal rows (e1, e2, axis)."""
    trial = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    if np.allclose(axis, [0.0, 0.0, 1.0]):
        return np.eye(3)
    e1 = trial - axis * (trial @ axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return np.vstack([e1, e2, axis])


def _axis_offsets(count: int, spacing: float) -> np.ndarray:
    return (np.arange(count) - (count - 1) / 2.0) * spacing


def build_lattice(spec: LatticeSpec, max_atoms: int = MAX_ATOMS) -> AtomArray:
    """Sites of ``spec`` centered on the origin, x-major ordering."""
    if spec.n_atoms > max_atoms:
        raise GeometryError(f"lattice has {spec.n_atoms} atoms, above the limit of {max_atoms}")
    offs = [_axis_offsets(c, spec.spacing) for c in spec.counts]
    grid = np.stack(np.meshgrid(*offs, indexing="ij"), axis=-1).reshape(-1, 3)
    return AtomArray(grid @ spec.axes, source="lattice")


def _axis_indices(count: int) -> np.ndarray:
    if count % 2 == 0:
        return np.arange(-count // 2, count // 2)
    half = (count - 1) // 2
    return np.arange(-half, half + 1)


def wavevector_grid(spec: LatticeSpec) -> WavevectorGrid:
    """Periodic-boundary spin-wave momenta ``K_n = (2 pi/d0) sum_a n_a/N_a a_hat``.

    Even counts use ``n_a = -N_a/2 .. N_a/2 - 1``; odd counts use the
    symmetric range.
    """
    ranges = [_axis_indices(c) for c in spec.counts]
    idx = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    frac = idx / np.asarray(spec.counts, dtype=float)
    kvec = (2.0 * np.pi / spec.spacing) * frac @ spec.axes
    return WavevectorGrid(idx.astype(int), kvec)


def wavevector(spec: LatticeSpec, n) -> np.ndarray:
    """Momentum of spin-wave ``n`` (scalar means the chain axis)."""
    n = _as_index(n)
    return (2.0 * np.pi / spec.spacing) * (n / np.asarray(spec.counts, dtype=float)) @ spec.axes


def _as_index(n) -> np.ndarray:
    n = np.atleast_1d(np.asarray(n, dtype=int))
    if n.size == 1:
        return np.array([0, 0, int(n[0])])
    if n.size != 3:
        raise GeometryError("mode index must be a scalar or a 3-vector")
    return n


# --- ion crystal -----------------------------------------------------------

def _coulomb_gradient_hessian(u: np.ndarray):
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, 1.0)
    inv2 = np.sign(diff) / diff**2
    inv3 = 2.0 / np.abs(diff) ** 3
    np.fill_diagonal(inv2, 0.0)
    np.fill_diagonal(inv3, 0.0)
    grad = u - inv2.sum(axis=1)
    hess = -inv3
    hess[np.diag_indices_from(hess)] = 1.0 + inv3.sum(axis=1)
    return grad, hess


def coulomb_potential(u: np.ndarray) -> float:
    """``V = sum u_i^2/2 + sum_{i<j} 1/|u_i - u_j|`` (dimensionless units)."""
    u = np.asarray(u, dtype=float)
    i, j = np.triu_indices(len(u), 1)
    return float(0.5 * np.sum(u**2) + np.sum(1.0 / np.abs(u[i] - u[j])))


def ion_chain_equilibrium(n: int, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Sorted dimensionless equilibrium positions of a linear Coulomb crystal.

    Damped Newton iteration on the analytic gradient and Hessian, started from
    a uniform guess.  Raises NumericalError if the force does not drop below
    ``tol``.
    """
    if n < 2:
        raise GeometryError("an ion chain needs at least two ions")
    # empirical length of the crystal, keeps the first Newton steps short
    u = np.linspace(-1.0, 1.0, n) * 1.1 * n**0.56
    for _ in range(max_iter):
        grad, hess = _coulomb_gradient_hessian(u)
        if np.max(np.abs(grad)) <= tol * 1e-3:
            break
        step = np.linalg.solve(hess, -grad)
        v0 = coulomb_potential(u)
        t = 1.0
        while t > 1e-8:
            trial = u + t * step
            if np.all(np.diff(trial) > 0) and coulomb_potential(trial) <= v0 + 1e-14 * abs(v0):
                break
            t *= 0.5
        u = u + t * step
    grad, hess = _coulomb_gradient_hessian(u)
    if np.max(np.abs(grad)) > tol:
        raise NumericalError(f"ion chain did not converge: residual force {np.max(np.abs(grad)):.3e}")
    try:
        np.linalg.cholesky(hess)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("ion chain stationary point is not a minimum") from exc
    return u


def solve_ion_chain_equilibrium(n: int, average_spacing: float | None = None,
                                axis=(0.0, 0.0, 1.0)) -> AtomArray:
    """Ion crystal along ``axis``, optionally rescaled to a mean spacing.

    ``average_spacing`` is ``k_L d0_av``; the rescaled chain has
    ``(z_max - z_min)/(n - 1)`` equal to it.
    """
    u = ion_chain_equilibrium(n)
    if average_spacing is not None:
        if average_spacing <= 0:
            raise GeometryError("average spacing must be positive")
        u = u * average_spacing * (n - 1) / (u[-1] - u[0])
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return AtomArray(np.outer(u, axis), source="ion-chain")


# --- vapor ---------------------------------------------------------------

def sample_ensemble_positions(spec: EnsembleSpec, rng: np.random.Generator | None = None) -> AtomArray:
    """Draw positions from ``rho(r) = exp(-(r/L)^2) / (pi^{3/2} L^3)``.

    Each Cartesian component is normal with standard deviation ``L/sqrt(2)``.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
    pos = rng.normal(0.0, spec.kl_L / np.sqrt(2.0), size=(spec.n_atoms, 3))
    return AtomArray(pos, source="sampled-ensemble")


# --- position files ------------------------------------------------------

def read_positions(path) -> AtomArray:
    """Read ``k_L x, k_L y, k_L z`` per line; ``#`` starts a comment."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as exc:
        raise GeometryError(f"cannot parse position file {path}: {exc}") from exc
    if data.shape[1] != 3:
        raise GeometryError(f"{path}: expected three columns, found {data.shape[1]}")
    return AtomArray(data, source="file")


def write_positions(atoms: AtomArray, path) -> None:
    lines = ["# k_L*x k_L*y k_L*z"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in atoms.positions]
    Path(path).write_text("\n".join(lines) + "\n")
