"""Product quadrature on the unit sphere.

Composite Gauss-Legendre nodes in ``cos(theta)`` times a uniform trapezoid rule in
``phi``, measured from an arbitrary pole.  Narrow beams are integrated by
putting the pole on the beam axis; caps restrict the polar range.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .geometry import _frame_with_z

#: Evaluate integrands in blocks of this many directions.
CHUNK = 16384
#: Gauss-Legendre order per panel; larger polar counts use more panels.
PANEL_ORDER = 32


@lru_cache(maxsize=64)
def _legendre(n: int):
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_legendre(n: int, lo: float, hi: float):
    """Gauss-Legendre in ``cos(theta)`` on ``[lo, hi]``, split into panels.

    Panel edges are equally spaced in ``theta`` so node density in angle is
    roughly uniform, including near the poles.  Panels also keep the rule
    cheap to build for thousands of nodes.  Returns at least ``n`` nodes
    (rounded up to whole panels).
    """
    order = min(n, PANEL_ORDER)
    panels = -(-n // order)
    x, w = _legendre(order)
    edges = np.cos(np.linspace(np.arccos(lo), np.arccos(hi), panels + 1))
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class AngularGrid:
    """Weighted directions ``(theta_k, phi_l)`` about ``pole``.

    ``n_phi == 1`` is the axisymmetric rule (a single azimuth carrying the
    full ``2 pi`` weight).
    """

    n_theta: int
    n_phi: int
    pole: np.ndarray
    cos_range: tuple[float, float]
    cos_theta: np.ndarray
    theta_weights: np.ndarray
    phi: np.ndarray

    @classmethod
    def gauss_product(cls, n_theta: int, n_phi: int, pole=(0.0, 0.0, 1.0),
                      cos_range=(-1.0, 1.0)) -> "AngularGrid":
        if n_theta < 1 or n_phi < 1:
            raise ValueError("node counts must be positive")
        lo, hi = (float(c) for c in cos_range)
        if not -1.0 <= lo < hi <= 1.0:
            raise ValueError("cos_range must satisfy -1 <= lo < hi <= 1")
        cos_t, w = composite_legendre(int(n_theta), lo, hi)
        pole = np.asarray(pole, dtype=float)
        pole = pole / np.linalg.norm(pole)
        phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        return cls(len(cos_t), n_phi, pole, (lo, hi), cos_t, w, phi)

    @classmethod
    def cap(cls, theta_max: float, n_theta: int, n_phi: int, pole=(0.0, 0.0, 1.0)) -> "AngularGrid":
        """Polar cap ``theta <= theta_max`` about ``pole``."""
        return cls.gauss_product(n_theta, n_phi, pole, (float(np.cos(theta_max)), 1.0))

    @property
    def frame(self) -> np.ndarray:
        """Rows ``(e1, e2, pole)``."""
        return _frame_with_z(self.pole)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def theta(self) -> np.ndarray:
        """Polar angle of every node (theta-major order)."""
        return np.repeat(np.arccos(np.clip(self.cos_theta, -1, 1)), self.n_phi)

    @property
    def azimuth(self) -> np.ndarray:
        return np.tile(self.phi, self.n_theta)

    @property
    def weights(self) -> np.ndarray:
        return np.repeat(self.theta_weights, self.n_phi) * (2.0 * np.pi / self.n_phi)

    @property
    def directions(self) -> np.ndarray:
        """Unit vectors, shape ``(size, 3)``, theta-major order."""
        c = np.repeat(self.cos_theta, self.n_phi)
        s = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
        ph = self.azimuth
        local = np.stack([s * np.cos(ph), s * np.sin(ph), c], axis=1)
        return local @ self.frame

    @property
    def solid_angle(self) -> float:
        lo, hi = self.cos_range
        return 2.0 * np.pi * (hi - lo)

    def refine(self, factor: int = 2, axisymmetric: bool = False) -> "AngularGrid":
        n_phi = self.n_phi if axisymmetric else self.n_phi * factor
        return AngularGrid.gauss_product(self.n_theta * factor, n_phi, self.pole, self.cos_range)

    def evaluate(self, func) -> np.ndarray:
        """``func`` maps ``(m, 3)`` unit vectors to ``(m,)`` values."""
        dirs = self.directions
        out = np.empty(len(dirs))
        for start in range(0, len(dirs), CHUNK):
            out[start:start + CHUNK] = func(dirs[start:start + CHUNK])
        return out

    def integrate(self, values) -> float:
        return float(np.sum(np.asarray(values) * self.weights))

    def lab_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Polar and azimuthal angles of the nodes in the lab frame (z pole)."""
        d = self.directions
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * np.pi)
        return theta, phi


def nodes_for_width(width: float, cos_range=(-1.0, 1.0), per_width: int = 10, minimum: int = 32) -> int:
    """Polar node count so a feature of angular ``width`` spans ``per_width`` nodes."""
    lo, hi = cos_range
    span = np.arccos(lo) - np.arccos(hi)
    if width <= 0 or not np.isfinite(width):
        return minimum
    return max(minimum, int(np.ceil(per_width * span / width)))


@dataclass(frozen=True)
class AdaptiveResult:
    grid: AngularGrid
    values: np.ndarray
    total: float
    converged: bool
    refinements: int


def integrate_adaptive(func, grid: AngularGrid, tol: float = 1e-6, axisymmetric: bool = False,
                       max_nodes: int = 4_000_000, relative: bool = False) -> AdaptiveResult:
    """Double the grid until the integral changes by less than ``tol``.

    With ``relative`` the change is measured against ``|total|``.
    """
    values = grid.evaluate(func)
    total = grid.integrate(values)
    for k in range(1, 40):
        finer = grid.refine(2, axisymmetric)
        if finer.size > max_nodes:
            warnings.warn(f"adaptive quadrature stopped at {grid.size} nodes "
                          f"before reaching tol={tol:g}", RuntimeWarning, stacklevel=2)
            return AdaptiveResult(grid, values, total, False, k - 1)
        fine_values = finer.evaluate(func)
        fine_total = finer.integrate(fine_values)
        scale = max(abs(fine_total), 1e-300) if relative else 1.0
        done = abs(fine_total - total) <= tol * scale
        grid, values, total = finer, fine_values, fine_total
        if done:
            return AdaptiveResult(grid, values, total, True, k)
    return AdaptiveResult(grid, values, total, False, 39)


def riemann_grid(n_theta: int, n_phi: int, pole=(0.0, 0.0, 1.0)):
    """Midpoint rule in ``(theta, phi)`` with ``sin(theta)`` weights.

    Independent of the Gauss product rule; used as a quadrature cross-check.
    Returns ``(directions, weights, theta)``.
    """
    th = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    ph = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    local = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    w = (np.sin(T) * (np.pi / n_theta) * (2.0 * np.pi / n_phi)).ravel()
    pole = np.asarray(pole, dtype=float)
    frame = _frame_with_z(pole / np.linalg.norm(pole))
    return local @ frame, w, T.ravel()
