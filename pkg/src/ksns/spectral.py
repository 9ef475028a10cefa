"""Periodic-box spectral substrate.

Fields are plain numpy arrays indexed ``f[i, j]`` with ``i`` along x and
``j`` along y.  Scalar fields have shape ``(N, N)``, vector fields
``(2, N, N)``.  Spectral coefficients use the ``rfft2`` layout
``(N, N // 2 + 1)`` with numpy's default (unnormalized forward) convention.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


class Grid:
    """Uniform grid on the square torus ``[0, L)^2``.

    Args:
        points_per_side: Even number of points per axis, at least 16.
        box_length: Side length ``L`` of the box.
    """

    def __init__(self, points_per_side: int, box_length: float):
        if int(points_per_side) != points_per_side or points_per_side < 16 or points_per_side % 2:
            raise ConfigError(
                f"points_per_side must be an even integer >= 16, got {points_per_side!r}"
            )
        if not np.isfinite(box_length) or box_length <= 0:
            raise ConfigError(f"box_length must be positive, got {box_length!r}")
        n = int(points_per_side)
        self.N = n
        self.L = float(box_length)
        self.h = self.L / n
        self.shape = (n, n)
        self.spectral_shape = (n, n // 2 + 1)

        # integer mode indices {-N/2, ..., N/2-1} along axis 0, {0, ..., N/2} along the rfft axis
        self.index_x = np.fft.fftfreq(n, d=1.0 / n)
        self.index_y = np.fft.rfftfreq(n, d=1.0 / n)
        self.k0 = 2.0 * np.pi / self.L
        kx = self.k0 * self.index_x[:, None]
        ky = self.k0 * self.index_y[None, :]
        self.kx = np.broadcast_to(kx, self.spectral_shape).copy()
        self.ky = np.broadcast_to(ky, self.spectral_shape).copy()
        self.k2 = self.kx**2 + self.ky**2

        # odd derivatives drop the Nyquist mode so that real fields stay real
        nyq = n // 2
        self.dkx = np.where(np.abs(self.index_x[:, None]) == nyq, 0.0, kx) * np.ones(self.spectral_shape)
        self.dky = np.where(self.index_y[None, :] == nyq, 0.0, ky) * np.ones(self.spectral_shape)
        self.dk2 = self.dkx**2 + self.dky**2

        self.dealias_mask = (np.abs(self.index_x[:, None]) <= n / 3.0) & (
            self.index_y[None, :] <= n / 3.0
        )

        self.inv_k2 = np.zeros(self.spectral_shape)
        nz = self.k2 > 0
        self.inv_k2[nz] = 1.0 / self.k2[nz]
        self.inv_dk2 = np.zeros(self.spectral_shape)
        nz = self.dk2 > 0
        self.inv_dk2[nz] = 1.0 / self.dk2[nz]

        # Parseval weights for the half spectrum: interior columns count twice
        w = np.full(self.spectral_shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        self._parseval = w * (self.L**2 / float(n) ** 4)

        x = self.h * np.arange(n)
        self.x, self.y = np.meshgrid(x, x, indexing="ij")

    def __repr__(self) -> str:
        return f"Grid(N={self.N}, L={self.L!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and other.N == self.N and other.L == self.L

    def __hash__(self) -> int:
        return hash((self.N, self.L))

    # -- transforms -------------------------------------------------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(f, axes=(-2, -1))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(fh, s=self.shape, axes=(-2, -1))

    # -- quadrature -------------------------------------------------------
    def integrate(self, f: np.ndarray) -> float:
        """Uniform-grid quadrature, ``mean(f) * L^2``."""
        return float(np.mean(f, axis=(-2, -1)) * self.L**2)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """L^2 inner product of two scalar or two vector fields."""
        return float(np.sum(a * b) * self.h**2)

    def inner_hat(self, ah: np.ndarray, bh: np.ndarray) -> float:
        """L^2 inner product evaluated from rfft coefficients (Parseval)."""
        return float(np.sum(self._parseval * (ah * np.conj(bh)).real))

    def norm_hat2(self, ah: np.ndarray) -> float:
        """Squared L^2 norm from rfft coefficients."""
        return float(np.sum(self._parseval * (ah.real**2 + ah.imag**2)))

    # -- differential operators (spectral space) ----------------------------
    def gradient_hat(self, fh: np.ndarray) -> np.ndarray:
        return np.stack([1j * self.dkx * fh, 1j * self.dky * fh])

    def divergence_hat(self, vh: np.ndarray) -> np.ndarray:
        return 1j * (self.dkx * vh[0] + self.dky * vh[1])

    def project_hat(self, vh: np.ndarray) -> np.ndarray:
        """Leray projection ``v - k (k.v) / |k|^2``; the mean mode passes through."""
        kdotv = (self.dkx * vh[0] + self.dky * vh[1]) * self.inv_dk2
        return np.stack([vh[0] - self.dkx * kdotv, vh[1] - self.dky * kdotv])

    def dealias(self, fh: np.ndarray) -> np.ndarray:
        return fh * self.dealias_mask

    # -- differential operators (physical space) ----------------------------
    def gradient(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(self.gradient_hat(self.fft(f)))

    def divergence(self, v: np.ndarray) -> np.ndarray:
        return self.ifft(self.divergence_hat(self.fft(v)))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(-self.k2 * self.fft(f))

    def curl(self, v: np.ndarray) -> np.ndarray:
        """Scalar vorticity ``dv_y/dx - dv_x/dy``."""
        vh = self.fft(v)
        return self.ifft(1j * (self.dkx * vh[1] - self.dky * vh[0]))

    def leray_project(self, v: np.ndarray) -> np.ndarray:
        return self.ifft(self.project_hat(self.fft(v)))

    def solve_chemical_hat(self, nh: np.ndarray) -> np.ndarray:
        return nh * self.inv_k2

    def solve_chemical(self, n: np.ndarray) -> np.ndarray:
        """Zero-mean solution of ``-Δc = n - mean(n)``."""
        return self.ifft(self.solve_chemical_hat(self.fft(n)))

    def centered_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates measured from the box center ``(L/2, L/2)``."""
        return self.x - self.L / 2, self.y - self.L / 2

    def divergence_ratio(self, v: np.ndarray) -> float:
        """``max|div v| / max|v|`` (0 for the zero field)."""
        vmax = float(np.max(np.abs(v)))
        if vmax == 0.0:
            return 0.0
        return float(np.max(np.abs(self.divergence(v)))) / vmax


def make_grid(points_per_side: int, box_length: float) -> Grid:
    return Grid(points_per_side, box_length)
