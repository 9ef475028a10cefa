"""Truncated Wiener forcing ``f(u) dW`` with an affine coefficient family.

``f_j(u) = sigma_j * P(gamma * psi_j + lam * u)`` where ``psi_j`` are unit-L^2,
divergence-free Fourier eigenmodes of the Stokes operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StreamError
from .fields import lp_norm
from .semigroup import DIV_FREE_TOL
from .spectral import Grid


def eigenmode_wavevectors(count: int) -> list[tuple[int, int, str]]:
    """The ``count`` lowest real divergence-free modes, as ``(a, b, 'cos'|'sin')``.

    Wavevectors are taken from a half plane and ordered by ``|k|^2``, then
    ``a``, then ``b``; each contributes a cosine and a sine mode.
    """
    out: list[tuple[int, int, str]] = []
    radius = 1
    while True:
        vecs = [
            (a, b)
            for a in range(-radius, radius + 1)
            for b in range(0, radius + 1)
            if (b > 0 or a > 0)
        ]
        vecs.sort(key=lambda ab: (ab[0] ** 2 + ab[1] ** 2, ab[0], ab[1]))
        out = [(a, b, kind) for a, b in vecs for kind in ("cos", "sin")]
        # only trust the ordering inside the inscribed disk
        trusted = [m for m in out if m[0] ** 2 + m[1] ** 2 <= radius**2]
        if len(trusted) >= count:
            return trusted[:count]
        radius += 1


def eigenmode(grid: Grid, a: int, b: int, kind: str = "cos") -> np.ndarray:
    """Unit-L^2 field ``k^⊥/|k| * cos(k.x)`` (or ``sin``) for ``k = (a, b) 2π/L``."""
    kx, ky = a * grid.k0, b * grid.k0
    phase = kx * grid.x + ky * grid.y
    profile = np.cos(phase) if kind == "cos" else np.sin(phase)
    kn = np.hypot(kx, ky)
    field_ = np.stack([-ky / kn * profile, kx / kn * profile])
    return field_ * (np.sqrt(2.0) / grid.L)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model on one grid.

    Attributes:
        sigmas: Mode amplitudes ``sigma_j`` (length ``J``).
        shapes_hat: rfft coefficients of the ``psi_j``, shape ``(J, 2, N, N//2+1)``.
        gamma: Additive weight.
        lam: Multiplicative weight.
        trace_bound: Upper bound that ``sum sigma_j^2`` must respect.
    """

    grid: Grid
    sigmas: np.ndarray
    shapes_hat: np.ndarray
    gamma: float = 1.0
    lam: float = 0.0
    trace_bound: float = np.inf
    modes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if np.any(np.asarray(self.sigmas) <= 0):
            raise ValueError("all sigma_j must be positive")
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be nonnegative")
        if np.sum(np.asarray(self.sigmas) ** 2) > self.trace_bound:
            raise ValueError("sum of sigma_j^2 exceeds the configured trace bound")

    @property
    def J(self) -> int:
        return len(self.sigmas)

    @property
    def trace(self) -> float:
        return float(np.sum(self.sigmas**2))

    def shape(self, j: int) -> np.ndarray:
        return self.grid.ifft(self.shapes_hat[j])

    def growth_constant(self, p: float = 2.0) -> float:
        """Bound ``K`` with ``‖(Σ_j |f_j(u)|^2)^{1/2}‖_p <= K (1 + ‖u‖_p)`` for ``p >= 2``."""
        if self.J == 0:
            return 0.0
        psi_max = max(lp_norm(self.grid, self.shape(j), p) for j in range(self.J))
        return np.sqrt(self.trace) * max(self.gamma * psi_max, self.lam)

    def lipschitz_constant(self) -> float:
        return np.sqrt(self.trace) * self.lam if self.J else 0.0


def make_noise_spec(
    grid: Grid,
    J: int = 16,
    sigma0: float = 0.1,
    spectrum_exponent: float = 1.0,
    gamma: float = 1.0,
    lam: float = 0.0,
    trace_bound: float = np.inf,
) -> NoiseSpec:
    """Default spectrum ``sigma_j = sigma0 * j^{-exponent}`` over the ``J`` lowest eigenmodes."""
    modes = tuple(eigenmode_wavevectors(J)) if J > 0 else ()
    sigmas = sigma0 * np.arange(1, J + 1, dtype=float) ** (-spectrum_exponent)
    if J:
        shapes = np.stack([grid.project_hat(grid.fft(eigenmode(grid, a, b, kind))) for a, b, kind in modes])
    else:
        shapes = np.zeros((0, 2) + grid.spectral_shape, complex)
    return NoiseSpec(grid, sigmas, shapes, gamma, lam, trace_bound, modes)


def single_mode_spec(grid: Grid, a: int, b: int, sigma: float, gamma: float = 1.0, lam: float = 0.0) -> NoiseSpec:
    shape = grid.project_hat(grid.fft(eigenmode(grid, a, b, "cos")))[None]
    return NoiseSpec(grid, np.array([float(sigma)]), shape, gamma, lam, modes=((a, b, "cos"),))


def null_spec(grid: Grid) -> NoiseSpec:
    return make_noise_spec(grid, J=0)


# -- increment streams -------------------------------------------------------


class WienerPath:
    """Reproducible stream of Brownian increments for ``J`` scalar motions.

    Backed by a PCG64 generator seeded by ``seed``; its state can be
    exported and restored bit-exactly.
    """

    def __init__(self, seed: int, J: int):
        self.seed = int(seed)
        self.J = int(J)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self.steps_taken = 0

    def sample_increments(self, dt: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        self.steps_taken += 1
        return np.sqrt(dt) * self._rng.standard_normal(self.J)

    def get_state(self) -> dict:
        return {"seed": self.seed, "J": self.J, "steps": self.steps_taken, "bit_generator": self._rng.bit_generator.state}

    def set_state(self, state: dict) -> None:
        try:
            bg = state["bit_generator"]
            if bg.get("bit_generator") != "PCG64":
                raise StreamError(f"unsupported bit generator {bg.get('bit_generator')!r}")
            self._rng.bit_generator.state = bg
            self.J = int(state["J"])
            self.steps_taken = int(state["steps"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StreamError(f"corrupted Wiener stream state: {exc}") from exc

    @classmethod
    def from_state(cls, state: dict) -> "WienerPath":
        path = cls(state.get("seed", 0), state.get("J", 0))
        path.set_state(state)
        return path


class PrescribedIncrements:
    """Replays a fixed ``(steps, J)`` array of increments, each exactly once."""

    def __init__(self, increments: np.ndarray, dt: float | None = None):
        self.increments = np.asarray(increments, float)
        self.J = self.increments.shape[1] if self.increments.ndim == 2 else 0
        self.dt = dt
        self.steps_taken = 0

    def sample_increments(self, dt: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        if self.dt is not None and not np.isclose(dt, self.dt, rtol=1e-12, atol=0):
            raise StreamError(f"stream was built for dt={self.dt}, asked for dt={dt}")
        if self.steps_taken >= len(self.increments):
            raise StreamError("increment stream exhausted")
        out = self.increments[self.steps_taken]
        self.steps_taken += 1
        return out


def brownian_increments(seed: int, J: int, dt: float, steps: int) -> np.ndarray:
    """``(steps, J)`` independent ``Normal(0, dt)`` increments."""
    path = WienerPath(seed, J)
    return np.array([path.sample_increments(dt) for _ in range(steps)]).reshape(steps, J)


def coarsen_increments(increments: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum consecutive groups of ``factor`` fine increments (coupled refinement)."""
    inc = np.asarray(increments)
    steps = inc.shape[0] // factor
    return inc[: steps * factor].reshape(steps, factor, -1).sum(axis=1)


# -- coefficients ------------------------------------------------------------


def coefficient_hat(spec: NoiseSpec, velocity_hat: np.ndarray, j: int) -> np.ndarray:
    if not 0 <= j < spec.J:
        raise IndexError(f"noise index {j} out of range for J={spec.J}")
    g = spec.grid
    return spec.sigmas[j] * g.project_hat(spec.gamma * spec.shapes_hat[j] + spec.lam * velocity_hat)


def apply_coefficient(spec: NoiseSpec, u: np.ndarray, j: int) -> np.ndarray:
    """Physical-space ``f_j(u) = sigma_j P(gamma psi_j + lam u)``."""
    return spec.grid.ifft(coefficient_hat(spec, spec.grid.fft(u), j))


def forcing_hat(spec: NoiseSpec, velocity_hat: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """``Σ_j f_j(u) ΔW_j`` in spectral space."""
    g = spec.grid
    if spec.J == 0:
        return np.zeros_like(velocity_hat)
    w = spec.sigmas * np.asarray(dW)
    additive = np.tensordot(w, spec.shapes_hat, axes=(0, 0))
    return g.project_hat(spec.gamma * additive + (spec.lam * float(np.sum(w))) * velocity_hat)


def noise_energy_terms(spec: NoiseSpec, velocity_hat: np.ndarray, dW: np.ndarray) -> tuple[float, float]:
    """``(Σ_j ‖f_j(u)‖_2^2, Σ_j (u, f_j(u)) ΔW_j)`` via Parseval.

    Uses that each ``psi_j`` is divergence-free, so with ``a_j = (psi_j, Pu)``:
    ``‖f_j‖² = sigma_j² (gamma² ‖psi_j‖² + 2 gamma lam a_j + lam² ‖Pu‖²)`` and
    ``(u, f_j) = sigma_j (gamma a_j + lam ‖Pu‖²)``.
    """
    if spec.J == 0:
        return 0.0, 0.0
    g = spec.grid
    pu = g.project_hat(velocity_hat)
    w = g._parseval
    shapes = spec.shapes_hat
    a = np.sum(w * (shapes * np.conj(pu)).real, axis=(1, 2, 3))
    psi_sq = np.sum(w * (shapes.real**2 + shapes.imag**2), axis=(1, 2, 3))
    pu_sq = g.norm_hat2(pu)
    gam, lam = spec.gamma, spec.lam
    sig = spec.sigmas
    trace_term = float(np.sum(sig**2 * (gam**2 * psi_sq + 2.0 * gam * lam * a + lam**2 * pu_sq)))
    martingale = float(np.sum(sig * np.asarray(dW, float) * (gam * a + lam * pu_sq)))
    return trace_term, martingale


@dataclass(frozen=True)
class HypothesisReport:
    K_growth: float
    K_lipschitz: float
    growth_bound: float
    lipschitz_bound: float
    passed: bool


def verify_hypotheses(spec: NoiseSpec, samples, p: float = 2.0, rel_tol: float = 1e-9) -> HypothesisReport:
    """Measure growth and Lipschitz ratios of ``f`` over sample velocities.

    Growth: ``max ‖(Σ_j |f_j(u)|^2)^{1/2}‖_p / (1 + ‖u‖_p)``; Lipschitz:
    ``max ‖(Σ_j |f_j(u1) - f_j(u2)|^2)^{1/2}‖_p / ‖u1 - u2‖_p`` over pairs.
    Passes when both are within the constants of :meth:`NoiseSpec.growth_constant`
    and :meth:`NoiseSpec.lipschitz_constant`.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("verify_hypotheses needs at least one sample")
    g = spec.grid
    kg_bound = spec.growth_constant(p)
    kl_bound = spec.lipschitz_constant()
    if spec.J == 0:
        return HypothesisReport(0.0, 0.0, kg_bound, kl_bound, True)

    def stacked(u):
        return np.stack([apply_coefficient(spec, u, j) for j in range(spec.J)])

    fs = [stacked(u) for u in samples]
    growth = max(lp_norm(g, f, p) / (1.0 + lp_norm(g, u, p)) for f, u in zip(fs, samples))
    lip = 0.0
    for a in range(len(samples)):
        for b in range(a + 1, len(samples)):
            du = lp_norm(g, samples[a] - samples[b], p)
            if du > 0:
                lip = max(lip, lp_norm(g, fs[a] - fs[b], p) / du)
    passed = growth <= kg_bound * (1 + rel_tol) and lip <= kl_bound * (1 + rel_tol) + 1e-14
    return HypothesisReport(growth, lip, kg_bound, kl_bound, passed)


def stochastic_convolution_step(
    Z: np.ndarray, u: np.ndarray, spec: NoiseSpec, path, dt: float, tol: float = DIV_FREE_TOL
) -> np.ndarray:
    """One exponential-Euler step of ``dZ = -AZ dt + P f(u) dW``:
    ``Z+ = exp(-dt A)(Z + Σ_j f_j(u) ΔW_j)``."""
    g = spec.grid
    if g.divergence_ratio(Z) > tol:
        raise ContractError("stochastic convolution state must be divergence-free")
    Zh = g.fft(Z)
    if spec.J:
        dW = path.sample_increments(dt)
        Zh = Zh + forcing_hat(spec, g.fft(u), dW)
    return g.ifft(g.project_hat(np.exp(-g.k2 * dt) * Zh))
