"""Log-spaced tensor grid over the dual state (z, y).

The solver works in log coordinates p = ln z, q = ln y where the dual
operator has constant coefficients; uniform spacing in (p, q) is therefore
the natural discretization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, leisure_threshold


@dataclass(frozen=True)
class DualGrid:
    """Log-spaced nodes in z (shadow price) and y (wage).

    ``ny == 1`` collapses the wage axis for the retired sub-problem.
    """

    z_nodes: np.ndarray
    y_nodes: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_nodes, dtype=float)
        y = np.asarray(self.y_nodes, dtype=float)
        object.__setattr__(self, "z_nodes", z)
        object.__setattr__(self, "y_nodes", y)
        if z.ndim != 1 or y.ndim != 1:
            raise ValueError("grid nodes must be 1-d arrays")
        if len(z) < 16:
            raise ValueError("need at least 16 z nodes")
        if len(y) != 1 and len(y) < 16:
            raise ValueError("need 1 (collapsed axis) or at least 16 y nodes")
        if np.any(z <= 0.0) or np.any(y <= 0.0):
            raise ValueError("grid nodes must be positive")
        if np.any(np.diff(z) <= 0.0) or (len(y) > 1 and np.any(np.diff(y) <= 0.0)):
            raise ValueError("grid nodes must be strictly increasing")

    @property
    def nz(self) -> int:
        return len(self.z_nodes)

    @property
    def ny(self) -> int:
        return len(self.y_nodes)

    @property
    def logz(self) -> np.ndarray:
        return np.log(self.z_nodes)

    @property
    def logy(self) -> np.ndarray:
        return np.log(self.y_nodes)

    @property
    def hp(self) -> float:
        """Uniform spacing in p = ln z."""
        return float((self.logz[-1] - self.logz[0]) / (self.nz - 1))

    @property
    def hq(self) -> float:
        """Uniform spacing in q = ln y (0 for a collapsed wage axis)."""
        if self.ny == 1:
            return 0.0
        return float((self.logy[-1] - self.logy[0]) / (self.ny - 1))

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        """(nz, ny) meshes of z and y values."""
        return np.meshgrid(self.z_nodes, self.y_nodes, indexing="ij")

    @classmethod
    def from_bounds(
        cls, z_min: float, z_max: float, nz: int, y_min: float, y_max: float, ny: int
    ) -> "DualGrid":
        z = np.geomspace(z_min, z_max, nz)
        y = np.geomspace(y_min, y_max, ny) if ny > 1 else np.array([y_min])
        return cls(z, y)

    @classmethod
    def for_params(
        cls,
        params: ModelParams,
        nz: int = 128,
        ny: int = 128,
        y_min: float = 0.25,
        y_max: float = 4.0,
        z_center: float | None = None,
    ) -> "DualGrid":
        """Aspect-matched grid for the given model.

        Chooses the z-span so that hp/hq = theta1/m2, the single spacing
        ratio under which the sign-split cross stencil stays an M-matrix for
        every correlation in [-1, 1].  The z-range is centered (geometrically)
        a little below the leisure threshold at the mid wage so both the
        stopped region and the threshold fall inside.
        """
        span_q = np.log(y_max / y_min)
        hq = span_q / (ny - 1)
        th1 = abs(params.merton.theta1)
        m2 = params.wage.m2
        ratio = th1 / m2 if (m2 > 0.0 and th1 > 0.0) else 2.0
        hp = hq * ratio
        span_p = hp * (nz - 1)
        if z_center is None:
            y_mid = float(np.sqrt(y_min * y_max))
            z_center = float(leisure_threshold(y_mid, params.prefs)) / 4.0
        z_min = z_center * np.exp(-span_p / 2.0)
        z_max = z_center * np.exp(span_p / 2.0)
        return cls.from_bounds(z_min, z_max, nz, y_min, y_max, ny)

    def coarsened(self, min_nz: int = 17, min_ny: int = 17) -> "DualGrid | None":
        """Same bounds with roughly half the nodes, or None when at minimum."""
        nz2 = max(min_nz, (self.nz + 1) // 2)
        ny2 = 1 if self.ny == 1 else max(min_ny, (self.ny + 1) // 2)
        if nz2 == self.nz and ny2 == self.ny:
            return None
        return DualGrid.from_bounds(
            self.z_nodes[0], self.z_nodes[-1], nz2, self.y_nodes[0], self.y_nodes[-1], ny2
        )
