"""Verification suites: each returns a list of :class:`Check` with measured values.

The suites back both ``ksns verify <suite>`` and the acceptance tests, so
every tolerance is an explicit keyword argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .ensemble import estimate, path_seed, probe_refinement, run_ensemble
from .fields import (
    ExponentSet,
    GaussianDensity,
    TaylorGreenVelocity,
    UniformDensity,
    gaussian_bump,
    lp_norm,
    make_initial_state,
    x_norms,
)
from .functionals import (
    GammaParams,
    check_gradient_estimate,
    check_log_hls,
    check_nash,
    check_negative_entropy,
    compute_diagnostics,
    energy_balance_residual,
)
from .noise import (
    PrescribedIncrements,
    WienerPath,
    brownian_increments,
    make_noise_spec,
    single_mode_spec,
    stochastic_convolution_step,
)
from .semigroup import heat_propagate, stokes_propagate, verify_decay_exponent
from .spectral import Grid
from .stepper import (
    Simulation,
    StepperConfig,
    cutoff_factors,
    exponential_euler_step,
    nonlinear_terms,
    picard_local_solve,
)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{tag} {self.name}: value={self.value:.6g} threshold={self.threshold:.6g}{extra}"


def _le(name, value, threshold, detail=""):
    return Check(name, bool(value <= threshold), float(value), float(threshold), detail)


def _ge(name, value, threshold, detail=""):
    return Check(name, bool(value >= threshold), float(value), float(threshold), detail)


# -- conservation and structure ------------------------------------------------------


def conservation_suite(N: int = 64, t_final: float = 1.0, dt: float = 1e-3, mass_tol=1e-10, div_tol=1e-10, law_tol=1e-12, seed: int = 0):
    """Mass drift and divergence along a noisy run, plus exact operator laws."""
    L = 4.0 * math.pi
    g = Grid(N, L)
    state = make_initial_state([GaussianDensity(4 * math.pi, 1.0), UniformDensity(0.5 * L**2), TaylorGreenVelocity(0.3)], g)
    spec = make_noise_spec(g, J=16, sigma0=0.1, lam=0.2)
    sim = Simulation(g, StepperConfig(dt=dt), spec, WienerPath(seed, spec.J))
    m0 = state.mass()
    drift = 0.0
    div = g.divergence_ratio(state.velocity)
    steps = int(round(t_final / dt))
    for rec in sim.steps(state, steps):
        drift = max(drift, abs(rec.state.mass() - m0) / m0)
        div = max(div, g.divergence_ratio(rec.state.velocity))
    checks = [
        _le("mass drift (relative, max over steps)", drift, mass_tol),
        _le("velocity divergence (relative, max over steps)", div, div_tol),
    ]

    rng = np.random.default_rng(seed)
    v = rng.standard_normal((2, N, N))
    pv = g.leray_project(v)
    checks.append(_le("Leray idempotence |P(Pv) - Pv| / |Pv|", _rel(g.leray_project(pv), pv), law_tol))
    f = rng.standard_normal((N, N))
    s, t = 0.1, 0.25
    checks.append(
        _le("heat semigroup law e^{(s+t)Δ} = e^{sΔ}e^{tΔ}", _rel(heat_propagate(g, heat_propagate(g, f, t), s), heat_propagate(g, f, s + t)), law_tol)
    )
    checks.append(_le("heat semigroup identity at t = 0", _rel(heat_propagate(g, f, 0.0), f), law_tol))
    checks.append(
        _le("Stokes semigroup law", _rel(stokes_propagate(g, stokes_propagate(g, pv, t), s), stokes_propagate(g, pv, s + t)), law_tol)
    )
    return checks


def _rel(a, b) -> float:
    den = float(np.sqrt(np.sum(np.asarray(b) ** 2)))
    return float(np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2))) / (den if den > 0 else 1.0)


# -- semigroup decay ------------------------------------------------------------------


def semigroup_suite(N: int = 256, slope_tol: float = 0.05):
    """Fitted ``L^q -> L^p`` decay slopes for (q, p) in {(1,2), (1,inf), (2,inf)}."""
    g = Grid(N, 16.0 * math.pi)
    windows = {
        (1.0, 2.0): np.geomspace(2.0, 16.0, 8),
        (1.0, math.inf): np.geomspace(2.0, 16.0, 8),
        (2.0, math.inf): np.geomspace(0.5, 8.0, 8),
    }
    checks = []
    for (q, p), times in windows.items():
        fit = verify_decay_exponent(g, q, p, times)
        name = f"decay slope L^{q:g} -> L^{p:g} (expected {fit.expected:g})"
        ok = fit.valid and fit.relative_error <= slope_tol
        checks.append(Check(name, ok, fit.relative_error, slope_tol, f"slope={fit.slope:.5f}" + ("" if fit.valid else f"; {fit.reason}")))
    return checks


# -- lemma verifiers ---------------------------------------------------------------------


def negative_entropy_family(g: Grid) -> list[np.ndarray]:
    c = g.L / 2
    fam = [
        gaussian_bump(g, 1.0, 1.0),
        gaussian_bump(g, 10.0, 1.0),
        gaussian_bump(g, 0.01, 1.0),
        gaussian_bump(g, 1.0, 0.5),
        gaussian_bump(g, 1.0, 3.0),
        gaussian_bump(g, 2.0, 6.0),  # wide and low: n << 1 everywhere
        gaussian_bump(g, 1.0, 1.0, (c + 4.0, c)),
        gaussian_bump(g, 1.0, 1.0, (c - 3.0, c)) + gaussian_bump(g, 1.0, 1.0, (c + 3.0, c + 2.0)),
        gaussian_bump(g, 5.0, 0.7) + 1e-3,
        np.zeros(g.shape),
    ]
    return fam


def nash_sweep_family(g: Grid, count: int = 30, seed: int = 0) -> list[np.ndarray]:
    """Random Gaussian mixtures plus a few non-Gaussian radial profiles."""
    rng = np.random.default_rng(seed)
    c = g.L / 2
    fam = []
    for _ in range(count):
        f = np.zeros(g.shape)
        for _ in range(int(rng.integers(1, 5))):
            center = (c + rng.uniform(-4, 4), c + rng.uniform(-4, 4))
            f += gaussian_bump(g, rng.uniform(0.2, 2.0), rng.uniform(0.5, 2.0), center)
        fam.append(f)
    xc, yc = g.centered_coordinates()
    r = np.hypot(xc, yc)
    fam += [
        np.maximum(1 - (r / 3) ** 2, 0) ** 2,
        np.maximum(1 - (r / 3) ** 2, 0) ** 3,
        np.exp(-((r / 2) ** 4)),
        1 / np.cosh(r),
        np.exp(-(xc**2) / 2 - yc**2 / 8),
    ]
    return fam


def lemmas_suite(nash_tol: float = 0.005, hls_rel: float = 0.25, hls_floor: float = 0.5):
    checks = []
    g = Grid(256, 16.0 * math.pi)
    fam = negative_entropy_family(g)
    results = [check_negative_entropy(g, n) for n in fam]
    worst = max(r.lhs - r.rhs for r in results)
    checks.append(
        Check(
            f"negative-entropy inequality on {len(fam)} fields",
            all(r.passed for r in results),
            worst,
            1e-9,
            "value = max(lhs - rhs)",
        )
    )

    gn = Grid(256, 32.0)
    std = np.exp(-(np.hypot(*gn.centered_coordinates()) ** 2) / 2)
    target = 1.0 / (4.0 * math.pi)
    ratio = check_nash(gn, std)
    checks.append(_le("Nash ratio of the standard Gaussian vs 1/(4π) (relative)", abs(ratio - target) / target, nash_tol, f"ratio={ratio:.8f}"))
    sweep = max(check_nash(gn, f) for f in nash_sweep_family(gn))
    checks.append(_le("Nash ratio over sweep family / Gaussian value", sweep / target, 2.0))

    gg = Grid(128, 24.0)
    for q in (3.0, 4.0, 8.0):
        worst_ratio = 0.0
        ok = True
        for mass, width in ((2 * math.pi, 1.0), (1.0, 0.5), (5.0, 2.0)):
            r = check_gradient_estimate(gg, gaussian_bump(gg, mass, width), q)
            ok &= r.passed
            worst_ratio = max(worst_ratio, r.lhs / r.rhs)
        checks.append(Check(f"gradient estimate with explicit C_q at q={q:g}", bool(ok), worst_ratio, 1.0 + 1e-6, "value = max lhs/rhs"))

    gh = Grid(384, 24.0)
    defects = []
    valid = True
    for lam in (1, 2, 4, 8):
        res = check_log_hls(gh, gaussian_bump(gh, 1.0, 1.0 / lam))
        defects.append(res.defect)
        valid &= res.valid
    spread = max(defects) - min(defects)
    bound = hls_rel * abs(float(np.mean(defects))) + hls_floor
    checks.append(
        Check(
            "log-HLS defect spread over scaling family λ ∈ {1,2,4,8}",
            bool(valid and spread <= bound),
            spread,
            bound,
            "defects=" + ", ".join(f"{d:.5f}" for d in defects) + ("" if valid else "; support check failed"),
        )
    )
    return checks


# -- energy balance -------------------------------------------------------------------


def energy_config_state(N: int = 64):
    g = Grid(N, 4.0 * math.pi)
    state = make_initial_state(
        [GaussianDensity(4 * math.pi, 1.0), UniformDensity(1e-3 * g.L**2), TaylorGreenVelocity(0.2)], g
    )
    return g, state


def balance_trajectory(dt: float, t_final: float = 0.1, N: int = 64, delta: float = 0.1):
    """Per-step residuals, ΔJ and modified-entropy slack along a deterministic run."""
    g, state = energy_config_state(N)
    params = GammaParams(delta, state.mass())
    exps = ExponentSet()
    sim = Simulation(g, StepperConfig(dt=dt), None)
    prev = compute_diagnostics(state, exps, params)
    res, dj, slack = [], [], []
    for rec in sim.steps(state, int(round(t_final / dt))):
        row = compute_diagnostics(rec.state, exps, params)
        res.append(energy_balance_residual(prev, row, (rec.info.noise_trace, rec.info.martingale), dt))
        dj.append(row.free_energy - prev.free_energy)
        slack.append(row.modified_energy - prev.modified_energy + prev.dissipation_gamma * dt - delta * dt)
        prev = row
    return np.array(res), np.array(dj), np.array(slack)


def balance_suite(dts=(4e-4, 2e-4, 1e-4), t_final: float = 0.1, order_factor: float = 2.0):
    checks = []
    maxres = []
    for dt in dts:
        res, dj, slack = balance_trajectory(dt, t_final)
        tol = float(np.max(np.abs(res)))
        maxres.append(tol)
        checks.append(_le(f"free energy non-increasing at dt={dt:g} (max ΔJ vs residual tol)", float(np.max(dj)), tol))
        checks.append(
            _le(f"modified-entropy inequality at dt={dt:g} (max ΔE+Ḡdt-δdt vs residual tol)", float(np.max(slack)), tol)
        )
    for a, b, dta, dtb in zip(maxres, maxres[1:], dts, dts[1:]):
        checks.append(_ge(f"energy residual shrink factor dt={dta:g} -> {dtb:g}", a / b, order_factor, f"residuals {a:.3e} -> {b:.3e}"))
    return checks


# -- dichotomy around the critical mass -----------------------------------------------------


def dichotomy_run(mass: float, dt: float, t_final: float, N: int = 128, linf_cap: float = 400.0):
    g = Grid(N, 16.0 * math.pi)
    state = make_initial_state([GaussianDensity(mass, 1.0)], g)
    sim = Simulation(g, StepperConfig(dt=dt, blowup_norm_cap=linf_cap), None)
    n4_0 = lp_norm(g, state.density, 4.0)
    times, linf = [0.0], [float(np.max(state.density))]
    last = state
    for rec in sim.steps(state, int(round(t_final / dt))):
        last = rec.state
        times.append(last.time)
        linf.append(float(np.max(np.abs(last.density))) if last.is_finite() else math.inf)
    n4_ratio = lp_norm(g, last.density, 4.0) / n4_0 if last.is_finite() else math.inf
    return np.array(times), np.array(linf), sim.event, n4_ratio


def dichotomy_suite(dt: float = 1e-3, sub_t_final: float = 5.0, time_tol: float = 0.2):
    checks = []
    times, linf, event, _ = dichotomy_run(4 * math.pi, dt, sub_t_final)
    ref = linf[int(np.argmin(np.abs(times - 0.1)))]
    checks.append(Check("subcritical M=4π: no stopping event up to T=5", event is None, 0.0 if event is None else event.time, 0.0, str(event.kind) if event else ""))
    checks.append(_le("subcritical M=4π: sup ‖n‖_∞ / ‖n(0.1)‖_∞", float(np.max(linf)) / ref, 5.0))

    _, _, ev1, n4_1 = dichotomy_run(16 * math.pi, dt, 1.0)
    _, _, ev2, n4_2 = dichotomy_run(16 * math.pi, dt / 2, 1.0)
    t1 = ev1.time if ev1 else math.inf
    t2 = ev2.time if ev2 else math.inf
    checks.append(_le("supercritical M=16π: stopping time before t=1", t1, 1.0 - 1e-12, ev1.kind if ev1 else "no event"))
    checks.append(_ge("supercritical M=16π: ‖n‖_4 growth factor at the event", min(n4_1, n4_2), 10.0))
    change = abs(t1 - t2) / t1 if math.isfinite(t1) and math.isfinite(t2) else math.inf
    checks.append(_le("supercritical M=16π: event-time change under dt halving", change, time_tol, f"t={t1:.5f} vs {t2:.5f}"))
    return checks


# -- stochastic -------------------------------------------------------------------------------


def ito_isometry_samples(K: int = 64, times=(0.1, 0.5, 1.0), dt: float = 1e-3, sigma: float = 1.0, master_seed: int = 0):
    """Sampled ``‖Z(t)‖²`` of a single-mode additive stochastic convolution."""
    g = Grid(16, 2.0 * math.pi)
    spec = single_mode_spec(g, 1, 0, sigma)
    idx = {int(round(t / dt)): t for t in times}
    samples = {t: [] for t in times}
    for i in range(K):
        path = WienerPath(path_seed(master_seed, i), 1)
        Z = np.zeros((2,) + g.shape)
        u = np.zeros_like(Z)
        for k in range(1, max(idx) + 1):
            Z = stochastic_convolution_step(Z, u, spec, path, dt)
            if k in idx:
                samples[idx[k]].append(g.norm_hat2(g.fft(Z)))
    kappa = float((g.k0) ** 2)
    exact = {t: sigma**2 * (1 - math.exp(-2 * kappa * t)) / (2 * kappa) for t in times}
    return samples, exact


def subcritical_noise_config(K: int = 64, t_final: float = 1.0, dt: float = 1e-3) -> RunConfig:
    return RunConfig().with_updates(
        grid={"N": 64, "L": 8 * math.pi},
        initial=[{"kind": "gaussian_density", "mass": 4 * math.pi, "width": 1.0}],
        noise={"J": 16, "sigma0": 0.1, "lambda": 0.2, "gamma": 1.0},
        stepper={"t_final": t_final, "dt": dt, "linf_cap": 400.0},
        ensemble={"K": K, "k_moments": [1, 2]},
    )


def stochastic_suite(K: int = 64, n_se: float = 3.0, ensemble_cfg: RunConfig | None = None, workers=None):
    checks = []
    samples, exact = ito_isometry_samples(K)
    for t, vals in samples.items():
        est = estimate(vals)
        z = abs(est.mean - exact[t]) / est.stderr
        checks.append(_le(f"Itô isometry at t={t:g} (|mean - exact| in standard errors)", z, n_se, f"mean={est.mean:.5f} exact={exact[t]:.5f}"))

    cfg = ensemble_cfg or subcritical_noise_config(K)
    ens = run_ensemble(cfg, K=K, workers=workers)
    mart = ens.moments["martingale"]["stopped_at_cap"]
    checks.append(_le("martingale term ensemble mean (in standard errors)", abs(mart.mean) / mart.stderr, n_se, f"mean={mart.mean:.3e}"))
    checks.append(_le("subcritical multiplicative noise: stopping events", float(sum(ens.stop_counts.values())), 0.0))
    J_T = ens.moments["sup_abs_J^1"]["alive"]
    J_half = ens.moments["sup_abs_J_half^1"]["alive"]
    G_int = ens.moments["int_G"]["alive"]
    finite = J_T.finite and J_half.finite and G_int.finite
    checks.append(Check("E[sup|J|] and E[∫G dt] finite", bool(finite), J_T.mean, math.inf, f"E sup|J|={J_T.mean:.5g}, E∫G={G_int.mean:.5g}"))
    checks.append(_ge("E[sup_{t<=T}|J|] monotone in T (value at T minus value at T/2)", J_T.mean - J_half.mean, 0.0))
    return checks, ens


# -- fixed point ------------------------------------------------------------------------------


def small_data_config(t_final: float = 0.2, dt: float = 2e-3, noise: bool = True) -> RunConfig:
    L = 2 * math.pi
    return RunConfig().with_updates(
        grid={"N": 32, "L": L},
        initial=[
            {"kind": "gaussian_density", "mass": 1.0, "width": 0.8},
            {"kind": "uniform_density", "mass": 0.5 * L**2},
            {"kind": "taylor_green_velocity", "amplitude": 0.1},
        ],
        noise={"enabled": noise, "J": 4, "sigma0": 0.1, "lambda": 0.2},
        stepper={"t_final": t_final, "dt": dt, "tol": 1e-11, "picard_window": int(round(t_final / dt))},
    )


def fixed_point_suite(dts=(2e-3, 1e-3, 5e-4), seed: int = 3, shrink: float = 2.0):
    checks = []
    cfg = small_data_config(dt=dts[0])
    g = cfg.make_grid()
    exps = cfg.exponent_set()
    spec = cfg.noise_spec(g)
    state = cfg.initial_state(g)
    scfg = replace(cfg.stepper_config(), scheme="picard")
    T = cfg.stepper.t_final
    inc = brownian_increments(seed, spec.J, scfg.dt, int(round(T / scfg.dt)))
    res = picard_local_solve(state, T, scfg, spec, exps=exps, increments=inc)
    r = np.array(res.contraction_ratios)
    d = np.array(res.distances)
    checks.append(Check("Picard converged", res.converged, float(res.iterations), float(scfg.picard_max_iters)))
    checks.append(_le("Picard contraction ratios (max)", float(np.max(r)), 1.0 - 1e-12))
    checks.append(Check("Picard iterate distances strictly decreasing", bool(np.all(np.diff(d) < 0)), float(np.max(np.diff(d))), 0.0))
    checks.append(_le("Picard ratio trend (last / first)", float(r[-1] / r[0]), 1.0))

    linear = cfg.with_updates(initial=[{"kind": "uniform_density", "mass": 1.0}, {"kind": "taylor_green_velocity", "amplitude": 0.1}])
    lin_scfg = cfg.stepper_config().linear_only()
    lin_probe = _linear_probe(linear, lin_scfg, seed)
    checks.append(_le("linearized system: Picard vs exponential Euler distance", lin_probe, 1e-10))

    probes = probe_refinement(cfg, dts, seed=seed)
    dists = [p.max_distance for p in probes]
    C = dists[0] / dts[0]
    for p, dt in zip(probes[1:], dts[1:]):
        checks.append(_le(f"Picard vs exponential Euler at dt={dt:g} within max(tol, C dt)", p.max_distance, max(scfg.picard_tol, C * dt), f"C={C:.4g} from dt={dts[0]:g}"))
    for a, b, dta, dtb in zip(dists, dists[1:], dts, dts[1:]):
        checks.append(_ge(f"uniqueness probe shrink factor dt={dta:g} -> {dtb:g}", a / b, shrink, f"{a:.4e} -> {b:.4e}"))
    checks.append(Check("both schemes alive over the whole window", all(p.alive_until >= T - 1e-12 for p in probes), min(p.alive_until for p in probes), T))
    return checks


def _linear_probe(cfg: RunConfig, lin_scfg: StepperConfig, seed: int) -> float:
    g = cfg.make_grid()
    exps = cfg.exponent_set()
    spec = cfg.noise_spec(g)
    state = cfg.initial_state(g)
    T = cfg.stepper.t_final
    n = int(round(T / lin_scfg.dt))
    inc = brownian_increments(seed, spec.J, lin_scfg.dt, n)
    sim = Simulation(g, lin_scfg, spec, PrescribedIncrements(inc), exps)
    ee = [state] + [rec.state for rec in sim.steps(state, n)]
    res = picard_local_solve(state, T, replace(lin_scfg, scheme="picard"), spec, exps=exps, increments=inc)
    return max(
        lp_norm(g, a.density - b.density, exps.p) + lp_norm(g, a.velocity - b.velocity, 2.0)
        for a, b in zip(ee, res.trajectory)
    )


# -- cutoff -----------------------------------------------------------------------------------


def cutoff_suite(m: float = 1.0, seed: int = 0):
    """One step from a state whose X-norms exceed 2m: only linear and noise parts act."""
    checks = []
    g = Grid(32, 2 * math.pi)
    exps = ExponentSet()
    state = make_initial_state([GaussianDensity(20.0, 0.5), TaylorGreenVelocity(3.0)], g)
    norms = x_norms(state, exps)
    n_part, u_part = norms.density_part(), norms.velocity_part()
    checks.append(_ge("manufactured state: min X-norm part / 2m", min(n_part, u_part) / (2 * m), 1.0))
    spec = make_noise_spec(g, J=8, sigma0=0.1, lam=0.2)
    cfg = StepperConfig(dt=1e-3, cutoff_level=m, stop_at_cutoff=False)
    thetas = cutoff_factors(norms, cfg)
    Nn, Nu = nonlinear_terms(g, state.density_hat, state.velocity_hat, cfg, thetas)
    checks.append(_le("cutoff factors θ (max)", max(thetas), 0.0))
    checks.append(_le("nonlinear increments (max |coefficient|)", float(max(np.max(np.abs(Nn)), np.max(np.abs(Nu)))), 0.0))
    inc = brownian_increments(seed, spec.J, cfg.dt, 1)
    a, _ = exponential_euler_step(state, cfg, spec, PrescribedIncrements(inc), norms)
    b, _ = exponential_euler_step(state, cfg.linear_only(), spec, PrescribedIncrements(inc))
    same = np.array_equal(a.density_hat, b.density_hat) and np.array_equal(a.velocity_hat, b.velocity_hat)
    diff = float(max(np.max(np.abs(a.density_hat - b.density_hat)), np.max(np.abs(a.velocity_hat - b.velocity_hat))))
    checks.append(Check("cut-off step equals the linear + stochastic step exactly", bool(same), diff, 0.0))
    return checks


SUITES = {
    "conservation": conservation_suite,
    "semigroup": semigroup_suite,
    "lemmas": lemmas_suite,
    "balance": balance_suite,
    "dichotomy": dichotomy_suite,
    "stochastic": lambda: stochastic_suite()[0],
    "fixedpoint": fixed_point_suite,
    "cutoff": cutoff_suite,
}
