"""Time integration of the mild formulation.

Two integrators share the same nonlinear terms:

* ``exponential_euler_step``: ``y+ = e^{dt L}(y + dt N(y) + Σ_j f_j ΔW_j)``.
* ``picard_local_solve``: whole-trajectory fixed-point iteration of the
  Duhamel maps with the nonlinearity frozen on each step interval and the
  semigroup integrated exactly over it,
  ``y_{k+1} = e^{dt L} y_k + φ(dt L) N(y_k) + e^{dt L} Σ_j f_j(u_k) ΔW_j``.

Both converge to the same mild solution at first order but are distinct
discretizations, which is what makes the uniqueness probe meaningful.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError
from .fields import ExponentSet, State, XNorms, lp_norm, velocity_gradient, x_norms
from .noise import NoiseSpec, forcing_hat, noise_energy_terms, null_spec
from .semigroup import PropagatorCache
from .spectral import Grid

log = logging.getLogger(__name__)

SCHEMES = ("exponential_euler", "picard")


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    scheme: str = "exponential_euler"
    picard_tol: float = 1e-10
    picard_max_iters: int = 50
    picard_window: int = 10
    cutoff_level: float = math.inf
    stop_at_cutoff: bool = True
    blowup_norm_cap: float = math.inf
    entropy_cap: float = math.inf
    chemotaxis: bool = True
    transport: bool = True
    advection: bool = True
    coupling: bool = True
    positivity_tol: float = 1e-10
    clamp_negative: bool = False
    capped_velocity_norm: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt!r}", field="stepper.dt")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}", field="stepper.scheme")
        if not self.picard_tol > 0:
            raise ConfigError("picard_tol must be positive", field="stepper.tol")
        if int(self.picard_max_iters) < 1:
            raise ConfigError("picard_max_iters must be >= 1", field="stepper.max_iters")
        if not self.cutoff_level > 0:
            raise ConfigError("cutoff level m must be positive", field="stepper.m")
        if not self.entropy_cap > 0:
            raise ConfigError("entropy cap R must be positive", field="stepper.R")

    def linear_only(self) -> "StepperConfig":
        return replace(self, chemotaxis=False, transport=False, advection=False, coupling=False)


@dataclass(frozen=True)
class StoppingEvent:
    kind: str  # "norm_cap" | "entropy_cap" | "nonfinite"
    time: float
    triggering_value: float
    triggering_norm: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "time": self.time,
            "triggering_value": self.triggering_value,
            "triggering_norm": self.triggering_norm,
        }


@dataclass
class StepInfo:
    dW: np.ndarray
    noise_trace: float  # Σ_j ‖f_j(u)‖²
    martingale: float  # Σ_j (u, f_j(u)) ΔW_j
    thetas: tuple[float, float, float]  # (transport, chemotaxis, advection)


# -- cutoff ------------------------------------------------------------------


def theta_cutoff(r: float, m: float) -> float:
    """C^2 switch: 1 on ``[0, m]``, 0 on ``[2m, ∞)``, quintic smoothstep between.

    ``|θ'| <= 15/(8m)``.
    """
    if math.isinf(m):
        return 1.0
    x = r / m - 1.0
    if x <= 0.0:
        return 1.0
    if x >= 1.0:
        return 0.0
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def running_max(a: XNorms | None, b: XNorms) -> XNorms:
    if a is None:
        return b
    return XNorms(*(max(x, y) for x, y in zip(a, b)))


def cutoff_factors(norms: XNorms, cfg: StepperConfig) -> tuple[float, float, float]:
    """``(θ_transport, θ_chemotaxis, θ_advection)`` from running X-norms."""
    m = cfg.cutoff_level
    n_part = norms.density_part()
    u_part = norms.velocity_part(cfg.capped_velocity_norm)
    return theta_cutoff(n_part + u_part, m), theta_cutoff(n_part, m), theta_cutoff(u_part, m)


# -- nonlinear terms -----------------------------------------------------------


def nonlinear_terms(
    grid: Grid, nh: np.ndarray, uh: np.ndarray, cfg: StepperConfig, thetas=(1.0, 1.0, 1.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Spectral right-hand sides ``N_n = -θ_c ∇·(n∇c) - θ_t ∇·(nu)`` and
    ``N_u = P(-θ_a (u·∇)u + θ_c n∇c)``, products dealiased."""
    th_t, th_c, th_a = thetas
    use_chemo = cfg.chemotaxis and th_c != 0.0
    use_coupling = cfg.coupling and th_c != 0.0
    use_transport = cfg.transport and th_t != 0.0
    use_adv = cfg.advection and th_a != 0.0
    Nn = np.zeros_like(nh)
    Nu = np.zeros_like(uh)
    if not (use_chemo or use_coupling or use_transport or use_adv):
        return Nn, Nu

    n = grid.ifft(nh)
    if use_chemo or use_coupling:
        grad_c = grid.ifft(grid.gradient_hat(grid.solve_chemical_hat(nh)))
        flux_h = grid.dealias(grid.fft(n * grad_c))
        if use_chemo:
            Nn -= th_c * grid.divergence_hat(flux_h)
        if use_coupling:
            Nu += th_c * flux_h
    if use_transport or use_adv:
        u = grid.ifft(uh)
    if use_transport:
        Nn -= th_t * grid.divergence_hat(grid.dealias(grid.fft(n * u)))
    if use_adv:
        grad_u = velocity_gradient(grid, uh)  # grad_u[i, j] = ∂_i u_j
        adv = u[0] * grad_u[0] + u[1] * grad_u[1]
        Nu -= th_a * grid.dealias(grid.fft(adv))
    return Nn, grid.project_hat(Nu)


# -- stopping ------------------------------------------------------------------


def entropy_energy(state: State) -> float:
    """``∫ n ln⁺ n + ‖u‖_2²``, the quantity capped by R."""
    n = state.density
    g = state.grid
    pos = np.where(n > 1.0, n * np.log(np.where(n > 1.0, n, 1.0)), 0.0)
    return g.integrate(pos) + g.norm_hat2(state.velocity_hat)


def detect_stopping(
    state: State, exps: ExponentSet, cfg: StepperConfig, running: XNorms | None = None
) -> StoppingEvent | None:
    """First violated cap, checked in the order nonfinite, norm, entropy.

    Norm caps: the running X-norms ``‖n‖_X ∨ ‖u‖_X >= m`` when
    ``cfg.stop_at_cutoff`` (τ_m-type), and ``‖n‖_∞ >= blowup_norm_cap``.
    Entropy cap: ``∫ n ln⁺ n + ‖u‖_2² > R`` (T_R-type).
    """
    t = state.time
    if not state.is_finite():
        return StoppingEvent("nonfinite", t, math.nan, "state")
    norms = running if running is not None else x_norms(state, exps)
    if not all(math.isfinite(v) for v in norms):
        return StoppingEvent("nonfinite", t, math.nan, "x_norms")
    if cfg.stop_at_cutoff and math.isfinite(cfg.cutoff_level):
        n_part = norms.density_part()
        u_part = norms.velocity_part(cfg.capped_velocity_norm)
        if max(n_part, u_part) >= cfg.cutoff_level:
            if n_part >= u_part:
                return StoppingEvent("norm_cap", t, n_part, "density_Lp")
            return StoppingEvent("norm_cap", t, u_part, "velocity_X")
    if math.isfinite(cfg.blowup_norm_cap):
        nmax = float(np.max(np.abs(state.density)))
        if nmax >= cfg.blowup_norm_cap:
            return StoppingEvent("norm_cap", t, nmax, "density_Linf")
    if math.isfinite(cfg.entropy_cap):
        val = entropy_energy(state)
        if not math.isfinite(val):
            return StoppingEvent("nonfinite", t, val, "entropy_energy")
        if val > cfg.entropy_cap:
            return StoppingEvent("entropy_cap", t, val, "entropy_pos_plus_kinetic")
    return None


# -- exponential Euler -----------------------------------------------------------


def _clamp(grid: Grid, nh: np.ndarray) -> np.ndarray:
    n = grid.ifft(nh)
    if np.min(n) >= 0:
        return nh
    mass = grid.integrate(n)
    n = np.maximum(n, 0.0)
    kept = grid.integrate(n)
    if kept > 0:
        n *= mass / kept
    return grid.fft(n)


def exponential_euler_step(
    state: State,
    cfg: StepperConfig,
    noise_spec: NoiseSpec | None = None,
    path=None,
    norms: XNorms | None = None,
    prop: PropagatorCache | None = None,
) -> tuple[State, StepInfo]:
    """Advance one step of size ``cfg.dt``.

    ``norms`` are the running X-norms used by the cutoff (defaults to the
    instantaneous norms when the cutoff is active).
    """
    g = state.grid
    dt = cfg.dt
    if prop is None or not prop.matches(g, dt):
        prop = PropagatorCache(g, dt)
    spec = noise_spec if noise_spec is not None else null_spec(g)

    if math.isinf(cfg.cutoff_level):
        thetas = (1.0, 1.0, 1.0)
    else:
        if norms is None:
            norms = x_norms(state, ExponentSet())
        thetas = cutoff_factors(norms, cfg)

    nh, uh = state.density_hat, state.velocity_hat
    Nn, Nu = nonlinear_terms(g, nh, uh, cfg, thetas)

    if spec.J:
        dW = path.sample_increments(dt)
        trace, mart = noise_energy_terms(spec, uh, dW)
        forcing = forcing_hat(spec, uh, dW)
    else:
        dW = np.zeros(0)
        trace, mart = 0.0, 0.0
        forcing = 0.0

    nh_new = prop.heat * (nh + dt * Nn)
    uh_new = g.project_hat(prop.heat * (uh + dt * Nu + forcing))
    if cfg.clamp_negative:
        nh_new = _clamp(g, nh_new)
    new = State(g, state.time + dt, nh_new, uh_new)
    return new, StepInfo(dW, trace, mart, thetas)


# -- Picard fixed point ------------------------------------------------------------


@dataclass
class PicardResult:
    trajectory: list
    iterations: int
    contraction_ratios: list
    distances: list
    converged: bool
    increments: np.ndarray = field(repr=False, default=None)


def _x_distance(grid: Grid, exps: ExponentSet, a: State, b: State, capped: bool = True) -> float:
    dn = grid.ifft(a.density_hat - b.density_hat)
    duh = a.velocity_hat - b.velocity_hat
    du = grid.ifft(duh)
    s = 8.0 if capped else exps.s
    return (
        lp_norm(grid, dn, exps.p)
        + lp_norm(grid, du, s)
        + lp_norm(grid, velocity_gradient(grid, duh), exps.r)
    )


def picard_local_solve(
    state0: State,
    horizon: float,
    cfg: StepperConfig,
    noise_spec: NoiseSpec | None = None,
    path=None,
    exps: ExponentSet | None = None,
    increments: np.ndarray | None = None,
    running: XNorms | None = None,
) -> PicardResult:
    """Solve the discretized Duhamel fixed point on ``[t0, t0 + horizon]``.

    The Brownian increments are drawn once (or taken from ``increments``)
    and held fixed across iterations.  The iteration starts from the linear
    stochastic evolution of ``state0`` and stops when the X-norm surrogate distance
    between successive iterates, ``sup_t(‖Δn‖_p + ‖Δu‖_{s_cap} + ‖∇Δu‖_r)``,
    drops below ``cfg.picard_tol``.  Non-convergence is reported, not raised.
    """
    g = state0.grid
    exps = exps or ExponentSet()
    dt = cfg.dt
    steps = int(round(horizon / dt))
    if steps < 1 or not math.isclose(steps * dt, horizon, rel_tol=1e-9, abs_tol=1e-14):
        raise ValueError(f"horizon {horizon} is not a positive multiple of dt={dt}")
    spec = noise_spec if noise_spec is not None else null_spec(g)
    prop = PropagatorCache(g, dt)
    if spec.J:
        if increments is None:
            increments = np.array([path.sample_increments(dt) for _ in range(steps)])
        increments = np.asarray(increments).reshape(steps, spec.J)
    else:
        increments = np.zeros((steps, 0))
    use_cutoff = not math.isinf(cfg.cutoff_level)

    # initial iterate: linear stochastic flow, a fixed point when the nonlinearity is off
    traj = [state0]
    for k in range(steps):
        prev = traj[-1]
        forcing = forcing_hat(spec, prev.velocity_hat, increments[k]) if spec.J else 0.0
        uh = g.project_hat(prop.heat * (prev.velocity_hat + forcing))
        traj.append(State(g, prev.time + dt, prop.heat * prev.density_hat, uh))

    ratios: list[float] = []
    distances: list[float] = []
    converged = False
    it = 0
    for it in range(1, int(cfg.picard_max_iters) + 1):
        new = [state0]
        sup = running
        for k in range(steps):
            old = traj[k]
            if use_cutoff:
                sup = running_max(sup, x_norms(old, exps))
                thetas = cutoff_factors(sup, cfg)
            else:
                thetas = (1.0, 1.0, 1.0)
            Nn, Nu = nonlinear_terms(g, old.density_hat, old.velocity_hat, cfg, thetas)
            forcing = forcing_hat(spec, old.velocity_hat, increments[k]) if spec.J else 0.0
            cur = new[-1]
            nh = prop.heat * cur.density_hat + prop.phi * Nn
            uh = g.project_hat(prop.heat * (cur.velocity_hat + forcing) + prop.phi * Nu)
            if cfg.clamp_negative:
                nh = _clamp(g, nh)
            new.append(State(g, cur.time + dt, nh, uh))
        dist = max(_x_distance(g, exps, a, b) for a, b in zip(new, traj))
        if distances and distances[-1] > 0:
            ratios.append(dist / distances[-1])
        distances.append(dist)
        traj = new
        if dist < cfg.picard_tol:
            converged = True
            break
    if not converged:
        log.info("Picard iteration did not converge in %d iterations (last ratio %s)", it, ratios[-1:] or None)
    return PicardResult(traj, it, ratios, distances, converged, increments)


# -- driver ------------------------------------------------------------------------


@dataclass
class StepRecord:
    """Emitted by :meth:`Simulation.steps` after every step."""

    prev: State
    state: State
    info: StepInfo
    event: StoppingEvent | None


class Simulation:
    """One simulation path: stepper state, running X-norm suprema, events.

    Args:
        grid: Spatial grid.
        cfg: Stepper configuration.
        noise_spec: Forcing model (``None`` for deterministic runs).
        path: Increment source with ``sample_increments(dt)``.
        exps: Exponents of the X-norms.
    """

    def __init__(self, grid: Grid, cfg: StepperConfig, noise_spec=None, path=None, exps=None):
        self.grid = grid
        self.cfg = cfg
        self.noise_spec = noise_spec if noise_spec is not None else null_spec(grid)
        if self.noise_spec.J and path is None:
            raise ValueError("a noisy simulation needs an increment source")
        self.path = path
        self.exps = exps or ExponentSet()
        self.prop = PropagatorCache(grid, cfg.dt)
        self.running: XNorms | None = None
        self.positivity_events: list[tuple[float, float]] = []
        self.event: StoppingEvent | None = None
        self.steps_taken = 0
        self.picard_failures = 0

    def start(self, state: State) -> StoppingEvent | None:
        if self.running is None:
            self.running = x_norms(state, self.exps)
        self.event = detect_stopping(state, self.exps, self.cfg, self.running)
        return self.event

    def step(self, state: State) -> StepRecord:
        if self.running is None:
            self.start(state)
        new, info = exponential_euler_step(state, self.cfg, self.noise_spec, self.path, self.running, self.prop)
        self._after(new)
        return StepRecord(state, new, info, self.event)

    def _after(self, new: State) -> None:
        self.steps_taken += 1
        if new.is_finite():
            self.running = running_max(self.running, x_norms(new, self.exps))
            viol = new.positivity_violation(self.cfg.positivity_tol)
            if viol is not None:
                self.positivity_events.append((new.time, viol))
        self.event = detect_stopping(new, self.exps, self.cfg, self.running)

    def _picard_window(self, state: State, steps: int) -> Iterator[StepRecord]:
        res = picard_local_solve(
            state, steps * self.cfg.dt, self.cfg, self.noise_spec, self.path, self.exps, running=self.running
        )
        if not res.converged:
            self.picard_failures += 1
            log.warning("Picard window at t=%.6g did not converge", state.time)
        for k in range(steps):
            prev, new = res.trajectory[k], res.trajectory[k + 1]
            dW = res.increments[k]
            if self.noise_spec.J:
                trace, mart = noise_energy_terms(self.noise_spec, prev.velocity_hat, dW)
            else:
                trace, mart = 0.0, 0.0
            self._after(new)
            yield StepRecord(prev, new, StepInfo(dW, trace, mart, (1.0, 1.0, 1.0)), self.event)
            if self.event is not None:
                return

    def steps(self, state: State, n_steps: int) -> Iterator[StepRecord]:
        """Yield one record per step until ``n_steps`` or a stopping event."""
        if self.start(state) is not None:
            return
        done = 0
        while done < n_steps:
            if self.cfg.scheme == "picard":
                chunk = min(self.cfg.picard_window, n_steps - done)
                for rec in self._picard_window(state, chunk):
                    state = rec.state
                    done += 1
                    yield rec
                    if rec.event is not None:
                        return
            else:
                rec = self.step(state)
                state = rec.state
                done += 1
                yield rec
                if rec.event is not None:
                    return

    def run(self, state: State, t_final: float, callback: Callable[[StepRecord], None] | None = None) -> State:
        n_steps = steps_for(t_final - state.time, self.cfg.dt)
        for rec in self.steps(state, n_steps):
            state = rec.state
            if callback is not None:
                callback(rec)
        return state


def steps_for(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 0 or abs(n * dt - duration) > 1e-9 * max(1.0, abs(duration)):
        raise ConfigError(f"duration {duration} is not a nonnegative multiple of dt={dt}")
    return n
