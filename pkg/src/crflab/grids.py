"""Product grid over the base bounding box and the periodic fiber cell.

Base coordinates: w = x2 + i*y2 on the square [-r, r]^2 (non-periodic, finite
differences).  Fiber coordinates: z1 = x1 + i*y1 on the unit cell [0,1)^2 of
the lattice Z + iZ (periodic, Fourier differentiation).  In reduced mode all
fields are constant along the fiber and the fiber axes collapse to size 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MIN_POINTS = 9


@dataclass(frozen=True)
class GridSpec:
    base_nx: int = 65
    base_ny: int = 65
    base_box: float = 0.85
    fiber_nx: int = 1
    fiber_ny: int = 1
    mode: str = "reduced"

    def __post_init__(self):
        if self.mode not in ("reduced", "full"):
            raise ConfigError(f"unknown grid mode {self.mode!r}")
        if self.base_nx < MIN_POINTS or self.base_ny < MIN_POINTS:
            raise ConfigError("base axes need at least %d points" % MIN_POINTS)
        if self.base_box <= 0:
            raise ConfigError("base_box must be positive")
        if self.mode == "reduced":
            if self.fiber_nx != 1 or self.fiber_ny != 1:
                raise ConfigError("reduced mode requires fiber point counts of 1")
        else:
            if self.fiber_nx < MIN_POINTS - 1 or self.fiber_ny < MIN_POINTS - 1:
                raise ConfigError("full mode needs at least %d fiber points per axis"
                                  % (MIN_POINTS - 1))

    @property
    def h_bx(self) -> float:
        return 2.0 * self.base_box / (self.base_nx - 1)

    @property
    def h_by(self) -> float:
        return 2.0 * self.base_box / (self.base_ny - 1)

    @property
    def h_fx(self) -> float:
        return 1.0 / self.fiber_nx

    @property
    def h_fy(self) -> float:
        return 1.0 / self.fiber_ny

    @property
    def shape(self) -> tuple:
        """Array shape of a field: base axes first, fiber axes last (full mode)."""
        if self.mode == "reduced":
            return (self.base_ny, self.base_nx)
        return (self.base_ny, self.base_nx, self.fiber_ny, self.fiber_nx)

    def base_axis_x(self) -> np.ndarray:
        return np.linspace(-self.base_box, self.base_box, self.base_nx)

    def base_axis_y(self) -> np.ndarray:
        return np.linspace(-self.base_box, self.base_box, self.base_ny)

    def base_points(self) -> np.ndarray:
        """Complex base coordinates w, shape (base_ny, base_nx)."""
        X, Y = np.meshgrid(self.base_axis_x(), self.base_axis_y(), indexing="xy")
        return X + 1j * Y

    def fiber_points(self) -> tuple[np.ndarray, np.ndarray]:
        """x1, y1 arrays of shape (fiber_ny, fiber_nx)."""
        fx = np.arange(self.fiber_nx) * self.h_fx
        fy = np.arange(self.fiber_ny) * self.h_fy
        FX, FY = np.meshgrid(fx, fy, indexing="xy")
        return FX, FY

    def fiber_wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Angular wavenumbers (kx, ky) for spectral fiber derivatives."""
        kx = 2.0 * np.pi * np.fft.fftfreq(self.fiber_nx, d=self.h_fx)
        ky = 2.0 * np.pi * np.fft.fftfreq(self.fiber_ny, d=self.h_fy)
        KX, KY = np.meshgrid(kx, ky, indexing="xy")
        return KX, KY

    def broadcast_base(self, arr: np.ndarray) -> np.ndarray:
        """View a (base_ny, base_nx) array so it broadcasts against full fields."""
        if self.mode == "reduced":
            return arr
        return arr[:, :, None, None]

    def fiber_cell_volume(self) -> float:
        return self.h_fx * self.h_fy
