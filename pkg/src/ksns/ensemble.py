"""Monte-Carlo ensembles of independent paths and the pathwise uniqueness probe.

Seed splitting rule: path ``i`` of an ensemble with master seed ``s`` uses
the 64-bit integer ``SeedSequence([s, i]).generate_state(1, uint64)[0]`` as
its Wiener seed.  Results are assembled sorted by path index and summed with
``math.fsum``, so statistics do not depend on the worker count.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import RunConfig
from .errors import ConfigError
from .fields import ExponentSet, lp_norm
from .functionals import dissipations, entropy_positive, free_energy, modified_energy
from .noise import PrescribedIncrements, brownian_increments, coarsen_increments
from .stepper import Simulation, steps_for

log = logging.getLogger(__name__)

WORKERS_ENV = "KSNS_WORKERS"


def path_seed(master_seed: int, index: int) -> int:
    """Documented seed-splitting rule (see module docstring)."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def resolve_workers(configured: int | None = None) -> int:
    """Worker count: the ``KSNS_WORKERS`` environment variable wins over the config."""
    env = os.environ.get(WORKERS_ENV)
    if env is not None and env.strip():
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        return n
    return max(1, int(configured or 1))


# -- per-path results --------------------------------------------------------------


@dataclass
class PathResult:
    index: int
    seed: int
    stopped: bool
    event: dict | None
    stop_time: float
    # suprema over [0, T] (or the alive window) and over [0, T/2]
    sup_abs_J: float
    sup_abs_E: float
    sup_entropy_pos: float
    sup_kinetic: float
    sup_abs_J_half: float
    int_G: float
    int_Gbar: float
    martingale: float

    def quantity(self, name: str) -> float:
        return getattr(self, name)


_PATH_COLUMNS = ("time", "free_energy", "modified_energy", "entropy_pos", "velocity_l2_sq", "dissipation", "dissipation_gamma", "martingale")


def run_path(cfg: RunConfig, index: int, output_dir: str | None = None) -> PathResult:
    """Run path ``index`` of the ensemble, optionally writing a per-path CSV.

    All quantities are sampled at every step.  Integrals use the left
    endpoint rule, matching the stepper's quadrature.
    """
    seed = path_seed(cfg.ensemble.master_seed, index)
    grid = cfg.make_grid()
    exps = cfg.exponent_set()
    scfg = cfg.stepper_config()
    spec = cfg.noise_spec(grid)
    sim = Simulation(grid, scfg, spec, cfg.wiener_path(seed), exps)
    state = cfg.initial_state(grid)
    params = cfg.gamma_params(state.mass())
    T = cfg.stepper.t_final
    dt = scfg.dt
    n_steps = steps_for(T, dt)
    half_steps = n_steps // 2

    writer = None
    fh = None
    if output_dir is not None:
        fh = open(Path(output_dir) / f"path_{index:05d}.csv", "w", encoding="utf-8", newline="")
        writer = csv.writer(fh)
        writer.writerow(_PATH_COLUMNS)

    def sample(st):
        J = free_energy(st)
        E = modified_energy(st, params)
        G, Gbar = dissipations(st, params)
        ent = entropy_positive(grid, st.density)
        kin = grid.norm_hat2(st.velocity_hat)
        return J, E, ent, kin, G, Gbar

    J, E, ent, kin, G, Gbar = sample(state)
    sups = [abs(J), abs(E), ent, kin]
    sup_J_half = abs(J)
    int_G_terms, int_Gbar_terms, mart_terms = [], [], []
    if writer is not None:
        writer.writerow([repr(x) for x in (state.time, J, E, ent, kin, G, Gbar, 0.0)])
    event = None
    step = 0
    try:
        for rec in sim.steps(state, n_steps):
            step += 1
            int_G_terms.append(G * dt)
            int_Gbar_terms.append(Gbar * dt)
            mart_terms.append(rec.info.martingale)
            event = rec.event
            if event is not None and not rec.state.is_finite():
                break
            J, E, ent, kin, G, Gbar = sample(rec.state)
            sups = [max(a, b) for a, b in zip(sups, (abs(J), abs(E), ent, kin))]
            if step <= half_steps:
                sup_J_half = max(sup_J_half, abs(J))
            if writer is not None:
                writer.writerow([repr(x) for x in (rec.state.time, J, E, ent, kin, G, Gbar, math.fsum(mart_terms))])
            if event is not None:
                break
        # also covers initial data that already violates a cap
        event = sim.event
    finally:
        if fh is not None:
            fh.close()
    return PathResult(
        index=index,
        seed=seed,
        stopped=event is not None,
        event=event.to_dict() if event is not None else None,
        stop_time=event.time if event is not None else math.inf,
        sup_abs_J=sups[0],
        sup_abs_E=sups[1],
        sup_entropy_pos=sups[2],
        sup_kinetic=sups[3],
        sup_abs_J_half=sup_J_half,
        int_G=math.fsum(int_G_terms),
        int_Gbar=math.fsum(int_Gbar_terms),
        martingale=math.fsum(mart_terms),
    )


def _run_path_args(args):
    return run_path(*args)


# -- statistics ----------------------------------------------------------------------


@dataclass
class MomentEstimate:
    count: int
    mean: float
    stderr: float
    ci_low: float
    ci_high: float

    @property
    def finite(self) -> bool:
        return self.count > 0 and math.isfinite(self.mean) and math.isfinite(self.stderr)


def estimate(values) -> MomentEstimate:
    """Sample mean, standard error and a 95% Student-t interval (compensated sums)."""
    v = [float(x) for x in values]
    n = len(v)
    if n == 0:
        return MomentEstimate(0, math.nan, math.nan, math.nan, math.nan)
    mean = math.fsum(v) / n
    if n == 1:
        return MomentEstimate(1, mean, math.nan, math.nan, math.nan)
    var = math.fsum((x - mean) ** 2 for x in v) / (n - 1)
    se = math.sqrt(var / n)
    half = float(stats.t.ppf(0.975, n - 1)) * se
    return MomentEstimate(n, mean, se, mean - half, mean + half)


_BASE_QUANTITIES = ("sup_entropy_pos", "sup_kinetic", "int_G", "int_Gbar", "martingale")
_POWERED = ("sup_abs_J", "sup_abs_E", "sup_abs_J_half")


@dataclass
class EnsembleStats:
    """Ensemble summary; ``moments[name]`` has ``alive`` and ``stopped_at_cap`` estimates.

    Names are ``sup_abs_J^k``, ``sup_abs_E^k`` and ``sup_abs_J_half^k`` for each
    requested ``k`` (suprema over ``[0, T]`` and ``[0, T/2]``), plus
    ``sup_entropy_pos``, ``sup_kinetic``, ``int_G``, ``int_Gbar`` and
    ``martingale``.  "stopped_at_cap" uses every path, stopped paths
    contributing their values up to the stopping time; "alive" uses only
    paths that reached ``T``.
    """

    path_count: int
    master_seed: int
    t_final: float
    k_moments: list
    paths: list
    stop_counts: dict
    moments: dict
    failed: bool
    failure_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "path_count": self.path_count,
            "master_seed": self.master_seed,
            "t_final": self.t_final,
            "k_moments": list(self.k_moments),
            "failed": self.failed,
            "failure_reason": self.failure_reason,
            "stop_counts": dict(self.stop_counts),
            "moments": {
                name: {kind: asdict(est) for kind, est in by_kind.items()} for name, by_kind in self.moments.items()
            },
            "paths": [asdict(p) for p in self.paths],
        }

    @property
    def stopped_paths(self) -> list:
        return [p for p in self.paths if p.stopped]


def summarize(paths: list, cfg: RunConfig, k_moments) -> EnsembleStats:
    paths = sorted(paths, key=lambda p: p.index)
    T = cfg.stepper.t_final
    alive = [p for p in paths if not p.stopped]
    counts: dict = {}
    for p in paths:
        if p.stopped:
            counts[p.event["kind"]] = counts.get(p.event["kind"], 0) + 1

    moments = {}

    def add(name, fn):
        moments[name] = {
            "alive": estimate(fn(p) for p in alive),
            "stopped_at_cap": estimate(fn(p) for p in paths),
        }

    for base in _POWERED:
        for k in k_moments:
            add(f"{base}^{k}", lambda p, base=base, k=k: p.quantity(base) ** k)
    for name in _BASE_QUANTITIES:
        add(name, lambda p, name=name: p.quantity(name))

    failed = bool(paths) and all(p.stopped and p.stop_time < T / 2 for p in paths)
    reason = "every path stopped before T/2" if failed else ""
    return EnsembleStats(len(paths), cfg.ensemble.master_seed, T, list(k_moments), paths, counts, moments, failed, reason)


def run_ensemble(
    cfg: RunConfig,
    K: int | None = None,
    k_moments=None,
    workers: int | None = None,
    output_dir=None,
) -> EnsembleStats:
    """Run ``K`` independent paths and estimate moments with 95% intervals.

    Args:
        cfg: Run configuration; its ensemble block supplies defaults.
        K: Number of paths (at least 2).
        k_moments: Moment orders for the supremum quantities.
        workers: Process count; ``KSNS_WORKERS`` overrides it.
        output_dir: If given, each path writes ``paths/path_XXXXX.csv`` there.
    """
    K = cfg.ensemble.K if K is None else int(K)
    if K < 2:
        raise ValueError(f"an ensemble needs K >= 2 paths, got {K}")
    k_moments = list(cfg.ensemble.k_moments if k_moments is None else k_moments)
    if not k_moments or any(int(k) != k or k < 1 for k in k_moments):
        raise ValueError(f"moment orders must be integers >= 1, got {k_moments!r}")
    workers = resolve_workers(cfg.ensemble.workers if workers is None else workers)
    path_dir = None
    if output_dir is not None:
        path_dir = Path(output_dir) / "paths"
        path_dir.mkdir(parents=True, exist_ok=True)
        path_dir = str(path_dir)
    jobs = [(cfg, i, path_dir) for i in range(K)]
    if workers == 1:
        results = [run_path(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_path_args, jobs))
    ensemble = summarize(results, cfg, k_moments)
    if ensemble.failed:
        log.warning("ensemble failed: %s", ensemble.failure_reason)
    return ensemble


# -- uniqueness probe ------------------------------------------------------------------


@dataclass
class ProbeResult:
    max_distance: float
    times: np.ndarray
    distances: np.ndarray
    alive_until: float
    picard_converged: bool
    notes: list = field(default_factory=list)


def _distance(grid, exps: ExponentSet, a, b) -> float:
    return lp_norm(grid, a.density - b.density, exps.p) + lp_norm(grid, a.velocity - b.velocity, 2.0)


def uniqueness_probe(cfg: RunConfig, seed: int | None = None, increments=None) -> ProbeResult:
    """Run the exponential-Euler and Picard integrators on one Brownian path.

    Reports ``max_t (‖n1 - n2‖_p + ‖u1 - u2‖_2)`` over the common alive window.

    Args:
        cfg: Configuration; its stepper block sets ``dt``, ``tol`` and the
            Picard window.
        seed: Wiener seed (defaults to the configured noise seed).
        increments: Use these ``(steps, J)`` increments instead of sampling.
    """
    grid = cfg.make_grid()
    exps = cfg.exponent_set()
    base = cfg.stepper_config()
    spec = cfg.noise_spec(grid)
    dt = base.dt
    n_steps = steps_for(cfg.stepper.t_final, dt)
    if spec.J:
        if increments is None:
            s = cfg.noise.seed if seed is None else seed
            increments = brownian_increments(s, spec.J, dt, n_steps)
        increments = np.asarray(increments, float)
        if increments.shape != (n_steps, spec.J):
            raise ValueError(f"increments must have shape {(n_steps, spec.J)}, got {increments.shape}")
    state = cfg.initial_state(grid)

    trajectories = []
    converged = True
    alive = []
    for scheme in ("exponential_euler", "picard"):
        scfg = replace(base, scheme=scheme)
        path = PrescribedIncrements(increments) if spec.J else None
        sim = Simulation(grid, scfg, spec, path, exps)
        traj = [state]
        end = cfg.stepper.t_final
        for rec in sim.steps(state, n_steps):
            if rec.event is not None:
                end = rec.event.time
                if rec.state.is_finite():
                    traj.append(rec.state)
                break
            traj.append(rec.state)
        if sim.event is not None:
            end = sim.event.time
        trajectories.append(traj)
        alive.append(end)
        if scheme == "picard":
            converged = sim.picard_failures == 0
    common = min(len(t) for t in trajectories)
    times, dists = [], []
    for a, b in zip(trajectories[0][:common], trajectories[1][:common]):
        times.append(a.time)
        dists.append(_distance(grid, exps, a, b))
    notes = []
    if common < n_steps + 1:
        notes.append(f"common alive window ends at t={trajectories[0][common - 1].time:.6g}")
    return ProbeResult(float(max(dists)), np.array(times), np.array(dists), min(alive), converged, notes)


def probe_refinement(cfg: RunConfig, dts, seed: int | None = None) -> list[ProbeResult]:
    """Uniqueness probe at several ``dt`` on one coupled Brownian path.

    Increments are drawn at the finest ``dt`` and summed for the coarser
    ones; every coarse ``dt`` must be an integer multiple of the finest.
    """
    dts = sorted((float(d) for d in dts), reverse=True)
    fine = dts[-1]
    T = cfg.stepper.t_final
    grid = cfg.make_grid()
    J = cfg.noise_spec(grid).J
    fine_inc = None
    if J:
        s = cfg.noise.seed if seed is None else seed
        fine_inc = brownian_increments(s, J, fine, steps_for(T, fine))
    out = []
    for dt in dts:
        factor = int(round(dt / fine))
        if abs(factor * fine - dt) > 1e-12 * dt:
            raise ValueError(f"dt={dt} is not an integer multiple of {fine}")
        inc = None
        if J:
            inc = coarsen_increments(fine_inc, factor) if factor > 1 else fine_inc
        out.append(uniqueness_probe(cfg.with_updates(stepper={"dt": dt}), increments=inc))
    return out
