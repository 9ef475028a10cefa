"""Scalar diagnostics and inequality checkers.

Entropy-type integrands use the convention ``0 ln 0 = 0``; density values
below ``TINY`` (including negative round-off) contribute nothing.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy.signal import fftconvolve

from .fields import ExponentSet, State, x_norms
from .spectral import Grid

TINY = 1e-300


@dataclass(frozen=True)
class GammaParams:
    delta: float = 0.1
    mass: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    @property
    def eta(self) -> float:
        return min(1.0, self.delta / self.mass)


def gamma_fn(n, params: GammaParams):
    """``ln n`` above ``eta``; its second-order Taylor polynomial at ``eta`` below.

    Negative arguments are evaluated at 0.
    """
    eta = params.eta
    n = np.maximum(np.asarray(n, float), 0.0)
    below = math.log(eta) + (n - eta) / eta - 0.5 * ((n - eta) / eta) ** 2
    safe = np.where(n >= eta, n, eta)
    return np.where(n >= eta, np.log(safe), below)


def gamma_prime(n, params: GammaParams):
    eta = params.eta
    n = np.maximum(np.asarray(n, float), 0.0)
    safe = np.where(n >= eta, n, eta)
    return np.where(n >= eta, 1.0 / safe, 2.0 / eta - n / eta**2)


def _xlogx(n: np.ndarray) -> np.ndarray:
    pos = n > TINY
    return np.where(pos, n * np.log(np.where(pos, n, 1.0)), 0.0)


def entropy(grid: Grid, n: np.ndarray) -> float:
    return grid.integrate(_xlogx(n))


def entropy_positive(grid: Grid, n: np.ndarray) -> float:
    return grid.integrate(np.where(n > 1.0, _xlogx(n), 0.0))


def entropy_negative(grid: Grid, n: np.ndarray) -> float:
    """``∫ n ln⁻ n`` (a nonnegative number)."""
    return grid.integrate(np.where(n < 1.0, -_xlogx(n), 0.0))


def potential_energy(state: State) -> float:
    """``∫ n c`` with the zero-mean chemical."""
    return state.grid.inner_hat(state.density_hat, state.grid.solve_chemical_hat(state.density_hat))


def kinetic_energy(state: State) -> float:
    return 0.5 * state.grid.norm_hat2(state.velocity_hat)


def velocity_gradient_sq(state: State) -> float:
    """``‖∇u‖_2²``."""
    g = state.grid
    return float(np.sum(g._parseval * g.dk2 * (np.abs(state.velocity_hat[0]) ** 2 + np.abs(state.velocity_hat[1]) ** 2)))


def enstrophy(state: State) -> float:
    g = state.grid
    uh = state.velocity_hat
    wh = 1j * (g.dkx * uh[1] - g.dky * uh[0])
    return 0.5 * g.norm_hat2(wh)


def free_energy(state: State) -> float:
    """``∫ (n ln n - n c / 2 + |u|²/2)``."""
    val = entropy(state.grid, state.density) - 0.5 * potential_energy(state) + kinetic_energy(state)
    if not math.isfinite(val):
        raise FloatingPointError("free energy is not finite")
    return val


def modified_energy(state: State, params: GammaParams) -> float:
    """``∫ (n Γ(n) - n c / 2 + |u|²/2)``."""
    g = state.grid
    n = np.maximum(state.density, 0.0)
    val = g.integrate(n * gamma_fn(n, params)) - 0.5 * potential_energy(state) + kinetic_energy(state)
    if not math.isfinite(val):
        raise FloatingPointError("modified energy is not finite")
    return val


def dissipations(state: State, params: GammaParams) -> tuple[float, float]:
    """``(G, Ḡ_Γ)``.

    ``G = ∫ n |∇ ln n - ∇c|² + ‖∇u‖²``; ``Ḡ_Γ`` keeps the first integrand on
    ``{n >= eta}`` and adds ``(2/3) ∫_{n<eta} (4/eta - 3n/eta²) |∇n|²``.
    The term ``n |∇ ln n - ∇c|²`` is evaluated as ``|∇n/√n - √n ∇c|²``.
    """
    g = state.grid
    n = state.density
    grad_n = g.ifft(g.gradient_hat(state.density_hat))
    grad_c = g.ifft(g.gradient_hat(g.solve_chemical_hat(state.density_hat)))
    pos = n > TINY
    sq = np.sqrt(np.where(pos, n, 1.0))
    w = grad_n / sq - sq * grad_c
    chem = np.where(pos, w[0] ** 2 + w[1] ** 2, 0.0)
    fluid = velocity_gradient_sq(state)
    G = g.integrate(chem) + fluid

    eta = params.eta
    upper = n >= eta
    nc = np.maximum(n, 0.0)
    lower_int = (4.0 / eta - 3.0 * nc / eta**2) * (grad_n[0] ** 2 + grad_n[1] ** 2)
    Gbar = g.integrate(np.where(upper, chem, (2.0 / 3.0) * lower_int)) + fluid
    return G, Gbar


def log_weight(grid: Grid) -> np.ndarray:
    xc, yc = grid.centered_coordinates()
    return np.log1p(xc**2 + yc**2)


def log_moment(grid: Grid, n: np.ndarray) -> float:
    """``∫ n ln(1 + |x - x_center|²)``."""
    return grid.integrate(n * log_weight(grid))


# -- diagnostics rows ------------------------------------------------------------


@dataclass
class DiagnosticsRow:
    time: float
    mass: float
    density_p: float
    velocity_s: float
    velocity_scap: float
    grad_velocity_r: float
    entropy_signed: float
    entropy_pos: float
    free_energy: float
    modified_energy: float
    dissipation: float
    dissipation_gamma: float
    log_moment: float
    kinetic: float
    enstrophy: float
    min_density: float
    max_density: float
    balance_residual: float = math.nan

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> tuple:
        return astuple(self)


def compute_diagnostics(state: State, exps: ExponentSet, params: GammaParams) -> DiagnosticsRow:
    g = state.grid
    n = state.density
    xn = x_norms(state, exps)
    G, Gbar = dissipations(state, params)
    ent = entropy(g, n)
    pot = potential_energy(state)
    kin = kinetic_energy(state)
    return DiagnosticsRow(
        time=state.time,
        mass=g.integrate(n),
        density_p=xn.density_p,
        velocity_s=xn.velocity_s,
        velocity_scap=xn.velocity_scap,
        grad_velocity_r=xn.grad_velocity_r,
        entropy_signed=ent,
        entropy_pos=entropy_positive(g, n),
        free_energy=ent - 0.5 * pot + kin,
        modified_energy=modified_energy(state, params),
        dissipation=G,
        dissipation_gamma=Gbar,
        log_moment=log_moment(g, n),
        kinetic=kin,
        enstrophy=enstrophy(state),
        min_density=float(np.min(n)),
        max_density=float(np.max(n)),
    )


def energy_balance_residual(row_k: DiagnosticsRow, row_k1: DiagnosticsRow, noise_terms, dt: float) -> float:
    """``ΔJ + G dt - ½ Σ_j‖f_j(u)‖² dt - Σ_j (u, f_j(u)) ΔW_j`` for one step.

    ``noise_terms`` is ``(Σ_j ‖f_j(u_k)‖², Σ_j (u_k, f_j(u_k)) ΔW_j)``.
    """
    return step_residual(row_k.free_energy, row_k1.free_energy, row_k.dissipation, noise_terms, dt)


def step_residual(j_k: float, j_k1: float, g_k: float, noise_terms, dt: float) -> float:
    """Same residual from the raw scalars ``J_k``, ``J_{k+1}`` and ``G_k``."""
    trace, martingale = noise_terms
    return (j_k1 - j_k) + g_k * dt - 0.5 * trace * dt - martingale


# -- free-space (R^2) kernel quadrature ------------------------------------------------

_LOG_CELL_OFFSET = 0.5 * (math.log(2.0) - 3.0 + math.pi / 2.0)


def _offsets(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(-(grid.N - 1), grid.N) * grid.h
    return np.meshgrid(idx, idx, indexing="ij")


def log_kernel(grid: Grid) -> np.ndarray:
    """``(1/2π) ln(1/|x|)`` on the offset lattice; the origin holds the cell average."""
    X, Y = _offsets(grid)
    r2 = X**2 + Y**2
    c = grid.N - 1
    r2[c, c] = 1.0
    K = -np.log(r2) / (4.0 * np.pi)
    K[c, c] = -(math.log(grid.h / 2.0) + _LOG_CELL_OFFSET) / (2.0 * np.pi)
    return K


def log_gradient_kernel(grid: Grid) -> np.ndarray:
    """``∇ (1/2π) ln(1/|x|) = -x / (2π|x|²)``; zero at the origin by symmetry."""
    X, Y = _offsets(grid)
    r2 = X**2 + Y**2
    c = grid.N - 1
    r2[c, c] = 1.0
    K = -np.stack([X, Y]) / (2.0 * np.pi * r2)
    K[:, c, c] = 0.0
    return K


def free_space_potential(grid: Grid, n: np.ndarray) -> np.ndarray:
    """``(1/2π) ∫ ln(1/|x-y|) n(y) dy`` at the grid points, ``n`` extended by zero."""
    return fftconvolve(n, log_kernel(grid), mode="same") * grid.h**2


def free_space_gradient(grid: Grid, n: np.ndarray) -> np.ndarray:
    K = log_gradient_kernel(grid)
    return np.stack([fftconvolve(n, K[i], mode="same") for i in range(2)]) * grid.h**2


def outside_central_half(grid: Grid, n: np.ndarray) -> float:
    """Fraction of ``∫|n|`` lying outside the central square of side ``L/2``."""
    xc, yc = grid.centered_coordinates()
    outside = (np.abs(xc) > grid.L / 4) | (np.abs(yc) > grid.L / 4)
    total = grid.integrate(np.abs(n))
    if total == 0:
        return 0.0
    return grid.integrate(np.where(outside, np.abs(n), 0.0)) / total


# -- lemma checkers ---------------------------------------------------------------------


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    passed: bool


def check_negative_entropy(grid: Grid, n: np.ndarray) -> InequalityCheck:
    """``∫ n ln⁻ n <= 2 ∫ n ln(1+|x|²) + ln π ∫ n + 1/e``."""
    lhs = entropy_negative(grid, n)
    rhs = 2.0 * log_moment(grid, n) + math.log(math.pi) * grid.integrate(n) + 1.0 / math.e
    return InequalityCheck(lhs, rhs, lhs <= rhs + 1e-9)


@dataclass(frozen=True)
class LogHLSCheck:
    lhs: float
    bound_term: float
    defect: float
    valid: bool


def check_log_hls(grid: Grid, n: np.ndarray, support_tol: float = 1e-6) -> LogHLSCheck:
    """Defect ``(M/4π) ∫ n ln n - (1/2π) ∬ n(x) ln(1/|x-y|) n(y)``.

    The interaction is computed by free-space kernel quadrature, never with
    the periodic solver.  ``valid`` is False when more than ``support_tol``
    of the mass lies outside the central half of the box.
    """
    mass = grid.integrate(n)
    lhs = grid.integrate(n * free_space_potential(grid, n))
    bound = mass / (4.0 * math.pi) * entropy(grid, n)
    valid = outside_central_half(grid, n) <= support_tol
    return LogHLSCheck(lhs, bound, bound - lhs, valid)


def check_nash(grid: Grid, g: np.ndarray) -> float:
    """``‖g‖_2⁴ / (‖∇g‖_2² ‖g‖_1²)``."""
    l1 = grid.integrate(np.abs(g))
    gh = grid.fft(g)
    l2sq = grid.norm_hat2(gh)
    grad_sq = float(np.sum(grid._parseval * grid.dk2 * np.abs(gh) ** 2))
    if l1 == 0 or grad_sq == 0:
        raise ValueError("Nash ratio is undefined for a zero or constant field")
    return l2sq**2 / (grad_sq * l1**2)


def gradient_estimate_constant(q: float) -> float:
    """Explicit constant ``C_q`` of the ``L^∞`` bound on ``∇(-Δ)^{-1} f``."""
    if not q > 2:
        raise ValueError(f"gradient estimate needs q > 2, got {q!r}")
    if math.isinf(q):
        return math.sqrt(2.0 * math.pi) * 2.0
    base = q / (q - 1.0)
    return (
        math.sqrt(2.0 * math.pi)
        * math.sqrt((q - 1.0) / (q - 2.0))
        * (base ** ((q - 2.0) / (2.0 * (q - 1.0))) + base ** (-q / (2.0 * (q - 1.0))))
    )


def check_gradient_estimate(grid: Grid, f: np.ndarray, q: float) -> InequalityCheck:
    """``‖∇(-Δ)^{-1} f‖_∞ <= C_q ‖f‖_1^{(q-2)/(2(q-1))} ‖f‖_q^{q/(2(q-1))}``."""
    from .fields import lp_norm

    C = gradient_estimate_constant(q)
    grad = free_space_gradient(grid, f)
    lhs = float(np.max(np.hypot(grad[0], grad[1])))
    a = (q - 2.0) / (2.0 * (q - 1.0))
    b = q / (2.0 * (q - 1.0))
    rhs = C * lp_norm(grid, f, 1.0) ** a * lp_norm(grid, f, q) ** b
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1 + 1e-6))
