"""Simulation state, initial-data recipes and the solution-space norms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .spectral import Grid

EPSILON_MAX = 2.0 / 129.0
S_CAP = 8.0


@dataclass(frozen=True)
class ExponentSet:
    """Integrability exponents of the local solution space.

    ``p = 2 - eps``, ``q = 2(2 - eps)/(2 + eps)``, ``r = 2 + eps`` and
    ``s = pq/(p - q) = 4/eps - 2``.
    """

    epsilon: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.epsilon < EPSILON_MAX):
            raise ConfigError(
                f"epsilon must lie in (0, 2/129) = (0, {EPSILON_MAX:.6g}), got {self.epsilon!r}",
                field="exponents.epsilon",
            )

    @property
    def p(self) -> float:
        return 2.0 - self.epsilon

    @property
    def q(self) -> float:
        return 2.0 * (2.0 - self.epsilon) / (2.0 + self.epsilon)

    @property
    def r(self) -> float:
        return 2.0 + self.epsilon

    @property
    def s(self) -> float:
        return 4.0 / self.epsilon - 2.0


class State:
    """Snapshot ``(n, u)`` at one time.

    The spectral coefficients are canonical; physical fields are derived
    from them on demand and cached.  Treat instances as immutable.
    """

    __slots__ = ("grid", "time", "density_hat", "velocity_hat", "_n", "_u")

    def __init__(self, grid: Grid, time: float, density_hat: np.ndarray, velocity_hat: np.ndarray):
        self.grid = grid
        self.time = float(time)
        self.density_hat = density_hat
        self.velocity_hat = velocity_hat
        self._n = None
        self._u = None

    @classmethod
    def from_physical(cls, grid: Grid, time: float, density: np.ndarray, velocity: np.ndarray) -> "State":
        return cls(grid, time, grid.fft(np.asarray(density, float)), grid.fft(np.asarray(velocity, float)))

    @property
    def density(self) -> np.ndarray:
        if self._n is None:
            self._n = self.grid.ifft(self.density_hat)
        return self._n

    @property
    def velocity(self) -> np.ndarray:
        if self._u is None:
            self._u = self.grid.ifft(self.velocity_hat)
        return self._u

    @property
    def chemical(self) -> np.ndarray:
        return self.grid.ifft(self.grid.solve_chemical_hat(self.density_hat))

    def mass(self) -> float:
        return self.grid.integrate(self.density)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.density)) and np.all(np.isfinite(self.velocity)))

    def positivity_violation(self, rel_tol: float = 1e-10) -> float | None:
        """Most negative density value if it falls below ``-rel_tol * max n``."""
        n = self.density
        nmin = float(np.min(n))
        if nmin < -rel_tol * max(float(np.max(n)), 0.0):
            return nmin
        return None

    def replace(self, **kw) -> "State":
        args = dict(grid=self.grid, time=self.time, density_hat=self.density_hat, velocity_hat=self.velocity_hat)
        args.update(kw)
        return State(**args)

    def __repr__(self) -> str:
        return f"State(t={self.time:.6g}, grid={self.grid!r})"


# -- initial-data recipes ----------------------------------------------------


@dataclass(frozen=True)
class GaussianDensity:
    mass: float
    width: float
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.mass >= 0:
            raise ConfigError(f"gaussian_density mass must be >= 0, got {self.mass!r}")
        if not self.width > 0:
            raise ConfigError(f"gaussian_density width must be > 0, got {self.width!r}")


@dataclass(frozen=True)
class UniformDensity:
    mass: float

    def __post_init__(self):
        if not self.mass >= 0:
            raise ConfigError(f"uniform_density mass must be >= 0, got {self.mass!r}")


@dataclass(frozen=True)
class TaylorGreenVelocity:
    amplitude: float
    mode: int = 1


@dataclass(frozen=True)
class ZeroVelocity:
    pass


@dataclass(frozen=True)
class RecipeSum:
    parts: tuple = field(default_factory=tuple)


RECIPE_KINDS = {
    "gaussian_density": GaussianDensity,
    "uniform_density": UniformDensity,
    "taylor_green_velocity": TaylorGreenVelocity,
    "zero_velocity": ZeroVelocity,
}


def gaussian_bump(grid: Grid, mass: float, width: float, center=None) -> np.ndarray:
    """Gaussian of the given width, normalized to ``mass`` by grid quadrature.

    Distances use the nearest periodic image of ``center``.
    """
    cx, cy = (grid.L / 2, grid.L / 2) if center is None else center
    dx = (grid.x - cx + grid.L / 2) % grid.L - grid.L / 2
    dy = (grid.y - cy + grid.L / 2) % grid.L - grid.L / 2
    g = np.exp(-(dx**2 + dy**2) / (2.0 * width**2))
    return mass * g / grid.integrate(g)


def taylor_green(grid: Grid, amplitude: float, mode: int = 1) -> np.ndarray:
    """``a (sin kx cos ky, -cos kx sin ky)`` with ``k = mode * 2π/L``."""
    k = mode * grid.k0
    return amplitude * np.stack(
        [np.sin(k * grid.x) * np.cos(k * grid.y), -np.cos(k * grid.x) * np.sin(k * grid.y)]
    )


def _render(recipe, grid: Grid, n: np.ndarray, u: np.ndarray) -> None:
    if isinstance(recipe, RecipeSum):
        for part in recipe.parts:
            _render(part, grid, n, u)
    elif isinstance(recipe, (list, tuple)):
        for part in recipe:
            _render(part, grid, n, u)
    elif isinstance(recipe, GaussianDensity):
        n += gaussian_bump(grid, recipe.mass, recipe.width, recipe.center)
    elif isinstance(recipe, UniformDensity):
        n += recipe.mass / grid.L**2
    elif isinstance(recipe, TaylorGreenVelocity):
        u += taylor_green(grid, recipe.amplitude, recipe.mode)
    elif isinstance(recipe, ZeroVelocity):
        pass
    else:
        raise ConfigError(f"unknown initial-data recipe {recipe!r}")


def make_initial_state(recipe, grid: Grid) -> State:
    """Build the ``t = 0`` state from a recipe (or a sequence of recipes, summed)."""
    n = np.zeros(grid.shape)
    u = np.zeros((2,) + grid.shape)
    _render(recipe, grid, n, u)
    uh = grid.project_hat(grid.fft(u))
    return State(grid, 0.0, grid.fft(n), uh)


# -- norms -------------------------------------------------------------------


def lp_norm(grid: Grid, f: np.ndarray, p: float) -> float:
    """Discrete L^p norm of a scalar field or of the Euclidean magnitude of a
    vector/tensor field (leading axes are components).

    Evaluated as ``max|f| * (∫(|f|/max|f|)^p)^{1/p}`` so that large ``p`` do
    not overflow.
    """
    f = np.asarray(f, float)
    if f.ndim == 2:
        mag = np.abs(f)
    else:
        comps = f.reshape(-1, *grid.shape)
        scale = float(np.max(np.abs(comps)))
        if scale == 0.0 or not np.isfinite(scale):
            return scale
        mag = scale * np.sqrt(np.sum((comps / scale) ** 2, axis=0))
    fmax = float(np.max(mag))
    if np.isinf(p):
        return fmax
    if fmax == 0.0 or not np.isfinite(fmax):
        return fmax
    return fmax * grid.integrate((mag / fmax) ** p) ** (1.0 / p)


class XNorms(NamedTuple):
    density_p: float
    velocity_s: float
    grad_velocity_r: float
    velocity_scap: float

    def density_part(self) -> float:
        return self.density_p

    def velocity_part(self, capped: bool = True) -> float:
        return (self.velocity_scap if capped else self.velocity_s) + self.grad_velocity_r


def velocity_gradient(grid: Grid, velocity_hat: np.ndarray) -> np.ndarray:
    """Tensor ``∂_i u_j`` with shape ``(2, 2, N, N)``."""
    return np.stack([grid.ifft(grid.gradient_hat(velocity_hat[j])) for j in range(2)], axis=1)


def x_norms(state: State, exps: ExponentSet, s_cap: float = S_CAP) -> XNorms:
    """``(‖n‖_p, ‖u‖_s, ‖∇u‖_r)`` plus the capped ``‖u‖_{s_cap}`` surrogate."""
    g = state.grid
    grad_u = velocity_gradient(g, state.velocity_hat)
    return XNorms(
        lp_norm(g, state.density, exps.p),
        lp_norm(g, state.velocity, exps.s),
        lp_norm(g, grad_u, exps.r),
        lp_norm(g, state.velocity, s_cap),
    )

