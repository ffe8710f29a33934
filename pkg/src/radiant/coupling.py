"""Coefficient matrix of the bosonized master equation.

Entries are in units of the single-atom rate ``Gamma_bar``; the diagonal is
1/2 and the single-atom Lamb shift is absorbed into the laser frequency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants

from .errors import GeometryError
from .geometry import AtomArray

#: Atoms closer than this (in units of 1/k_L) are rejected as coincident.
COINCIDENT_TOL = 1e-9


@dataclass(frozen=True)
class PhysicalParams:
    """Laser and transition parameters of the Lambda scheme (SI units).

    ``polarization`` is reserved for a vector-field model and is ignored.
    """

    rabi: float  # Omega_L, rad/s
    detuning: float  # Delta, rad/s
    omega_L: float  # laser angular frequency, rad/s
    dipole: float  # d_ga, C m
    k_dir: tuple = (0.0, 0.0, 1.0)
    polarization: tuple | None = None

    def __post_init__(self):
        if not self.omega_L > 0:
            raise ValueError("omega_L must be positive")


def gamma_bar(params: PhysicalParams) -> float:
    """Collective-emission base rate ``Gamma_bar`` in s^-1.

    ``(1/3 pi) (Omega_L / 2 Delta)^2 omega_L^3 d^2 / (eps0 hbar c^3)``; with
    ``hbar = 1`` this is the far-detuned rate of the Lambda scheme.  The
    resonant branch has no closed form here and ``Delta = 0`` is rejected.
    """
    if params.detuning == 0:
        raise ValueError("Delta = 0: the far-detuned rate formula does not apply")
    ratio = params.rabi / (2.0 * params.detuning)
    return (ratio**2 * params.omega_L**3 * params.dipole**2
            / (3.0 * np.pi * constants.epsilon_0 * constants.hbar * constants.c**3))


@dataclass(frozen=True)
class CouplingMatrix:
    entries: np.ndarray
    provenance: str  # "fixed" | "ensemble"
    params: dict = field(default_factory=dict)
    positions: np.ndarray | None = None
    k_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        entries = np.array(self.entries, dtype=complex)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "k_dir", _unit(self.k_dir))

    @property
    def n_atoms(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if v.shape != (3,) or norm == 0:
        raise ValueError("direction must be a nonzero 3-vector")
    return v / norm


def coupling_fixed(atoms: AtomArray, k_dir=(0.0, 0.0, 1.0)) -> CouplingMatrix:
    """Coupling matrix for atoms frozen at ``atoms.positions``.

    ``J_ij = (1/2) exp(-i k_L.(r_i - r_j)) (sin(k r)/(k r) - i cos(k r)/(k r))``
    for ``i != j`` with ``k = k_L = 1``.
    """
    k_dir = _unit(k_dir)
    pos = atoms.positions
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    n = len(pos)
    off = ~np.eye(n, dtype=bool)
    if n > 1 and dist[off].min() < COINCIDENT_TOL:
        raise GeometryError("coincident atoms: pair distance below 1e-9 / k_L")
    safe = np.where(off, dist, 1.0)
    green = (np.sin(safe) - 1j * np.cos(safe)) / safe
    J = 0.5 * np.exp(-1j * (diff @ k_dir)) * green
    J[~off] = 0.5
    return CouplingMatrix(J, "fixed", {"n_atoms": n}, positions=pos, k_dir=k_dir)


def ensemble_offdiagonal(kl_L: float) -> float:
    return 1.0 / (4.0 * kl_L**2)


def coupling_ensemble(n: int, kl_L: float, k_dir=(0.0, 0.0, 1.0)) -> CouplingMatrix:
    """Motion-averaged coupling of a Gaussian vapor (principal value dropped)."""
    if n < 1:
        raise ValueError("need at least one atom")
    if not kl_L > 0:
        raise ValueError("k_L L must be positive")
    beta = ensemble_offdiagonal(kl_L)
    J = np.full((n, n), beta, dtype=complex)
    np.fill_diagonal(J, 0.5)
    return CouplingMatrix(J, "ensemble", {"n_atoms": n, "kl_L": kl_L}, k_dir=k_dir)


def write_matrix_csv(matrix: CouplingMatrix, path) -> None:
    """Dump as ``i,j,re,im`` rows in row-major order."""
    from .io import format_float, write_text_atomic

    J = matrix.entries
    lines = ["i,j,re,im"]
    for i in range(J.shape[0]):
        for j in range(J.shape[1]):
            lines.append(f"{i},{j},{format_float(J[i, j].real)},{format_float(J[i, j].imag)}")
    write_text_atomic(Path(path), "\n".join(lines) + "\n")
