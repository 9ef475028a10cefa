"""Seed splitting, moment estimates, ensembles and the uniqueness probe."""

import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ksns.config import RunConfig
from ksns.ensemble import (
    WORKERS_ENV,
    estimate,
    path_seed,
    probe_refinement,
    resolve_workers,
    run_ensemble,
    summarize,
    uniqueness_probe,
)


def tiny_config(noise=True, t_final=0.01, **stepper):
    st_ = {"dt": 1e-3, "t_final": t_final}
    st_.update(stepper)
    return RunConfig().with_updates(
        grid={"N": 16, "L": 2 * math.pi},
        initial=[
            {"kind": "gaussian_density", "mass": 1.0, "width": 0.8},
            {"kind": "uniform_density", "mass": 0.5 * (2 * math.pi) ** 2},
            {"kind": "taylor_green_velocity", "amplitude": 0.1},
        ],
        noise={"enabled": noise, "J": 4, "sigma0": 0.1, "lambda": 0.2},
        stepper=st_,
        ensemble={"K": 4, "master_seed": 9},
    )


class TestSeeds:
    def test_rule(self):
        expected = int(np.random.SeedSequence([5, 2]).generate_state(1, np.uint64)[0])
        assert path_seed(5, 2) == expected

    def test_distinct(self):
        seeds = {path_seed(0, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert path_seed(1, 0) != path_seed(0, 1)

    def test_workers_env_override(self, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "3")
        assert resolve_workers(1) == 3
        monkeypatch.delenv(WORKERS_ENV)
        assert resolve_workers(2) == 2
        assert resolve_workers(None) == 1

    @pytest.mark.parametrize("bad", ["0", "two", "-1"])
    def test_workers_env_invalid(self, monkeypatch, bad):
        monkeypatch.setenv(WORKERS_ENV, bad)
        with pytest.raises(ValueError):
            resolve_workers(1)


class TestEstimate:
    def test_known_sample(self):
        vals = [1.0, 2.0, 3.0, 4.0]
        est = estimate(vals)
        se = math.sqrt(np.var(vals, ddof=1) / 4)
        assert est.mean == 2.5 and est.stderr == pytest.approx(se)
        half = stats.t.ppf(0.975, 3) * se
        assert (est.ci_low, est.ci_high) == pytest.approx((2.5 - half, 2.5 + half))

    def test_constant_sample(self):
        est = estimate([0.7] * 5)
        assert est.stderr == 0.0 and est.ci_low == est.ci_high == pytest.approx(0.7)

    def test_degenerate(self):
        assert estimate([]).count == 0 and not estimate([]).finite
        assert math.isnan(estimate([1.0]).stderr)

    @settings(max_examples=50)
    @given(vals=st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40), seed=st.integers(0, 1000))
    def test_order_invariant(self, vals, seed):
        shuffled = list(vals)
        random.Random(seed).shuffle(shuffled)
        a, b = estimate(vals), estimate(shuffled)
        assert a.mean == b.mean
        assert a.stderr == pytest.approx(b.stderr, rel=1e-12, abs=1e-12)


class TestEnsemble:
    def test_noise_off_identical_paths(self):
        ens = run_ensemble(tiny_config(noise=False), K=4)
        ref = ens.paths[0]
        for p in ens.paths[1:]:
            assert (p.sup_abs_J, p.int_G, p.martingale) == (ref.sup_abs_J, ref.int_G, ref.martingale)
        for by_kind in ens.moments.values():
            assert by_kind["stopped_at_cap"].stderr == 0.0

    def test_worker_count_independent(self, monkeypatch):
        monkeypatch.delenv(WORKERS_ENV, raising=False)
        cfg = tiny_config()
        a = run_ensemble(cfg, K=3, workers=1)
        b = run_ensemble(cfg, K=3, workers=2)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_permutation_invariant_summary(self):
        cfg = tiny_config()
        ens = run_ensemble(cfg, K=4)
        shuffled = list(reversed(ens.paths))
        again = summarize(shuffled, cfg, [1, 2])
        assert again.to_dict() == ens.to_dict()

    def test_moment_names(self):
        ens = run_ensemble(tiny_config(), K=2, k_moments=[1, 3])
        for name in ("sup_abs_J^1", "sup_abs_J^3", "sup_abs_E^3", "sup_abs_J_half^1", "int_G", "int_Gbar", "martingale"):
            assert {"alive", "stopped_at_cap"} == set(ens.moments[name])
        assert not ens.failed and ens.stop_counts == {}

    def test_paths_differ_with_noise(self):
        ens = run_ensemble(tiny_config(), K=3)
        assert len({p.martingale for p in ens.paths}) == 3
        assert [p.index for p in ens.paths] == [0, 1, 2]

    def test_early_stops_declare_failure(self):
        ens = run_ensemble(tiny_config(linf_cap=0.6), K=2)
        assert ens.failed and "T/2" in ens.failure_reason
        assert ens.stop_counts == {"norm_cap": 2}
        assert ens.moments["int_G"]["alive"].count == 0

    def test_per_path_files(self, tmp_path):
        run_ensemble(tiny_config(), K=2, output_dir=tmp_path)
        files = sorted((tmp_path / "paths").glob("path_*.csv"))
        assert [f.name for f in files] == ["path_00000.csv", "path_00001.csv"]
        lines = files[0].read_text().splitlines()
        assert lines[0].startswith("time,free_energy") and len(lines) == 12

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            run_ensemble(tiny_config(), K=1)
        with pytest.raises(ValueError):
            run_ensemble(tiny_config(), K=2, k_moments=[0])

    def test_supremum_over_half_horizon_bounded(self):
        ens = run_ensemble(tiny_config(t_final=0.02), K=2)
        for p in ens.paths:
            assert p.sup_abs_J_half <= p.sup_abs_J


class TestUniquenessProbe:
    def test_linear_system_schemes_agree(self):
        cfg = tiny_config(noise=False, t_final=0.02).with_updates(
            initial=[{"kind": "uniform_density", "mass": 1.0}, {"kind": "taylor_green_velocity", "amplitude": 0.1}],
        )
        res = uniqueness_probe(cfg)
        # uniform density and Taylor-Green make every nonlinear term vanish
        assert res.max_distance <= 1e-10
        assert res.picard_converged

    def test_first_order_refinement(self):
        cfg = tiny_config(t_final=0.02, picard_window=20, tol=1e-12)
        probes = probe_refinement(cfg, [2e-3, 1e-3], seed=4)
        assert probes[0].max_distance / probes[1].max_distance >= 1.9
        assert all(p.alive_until == pytest.approx(0.02) for p in probes)

    def test_common_window_when_stopped(self):
        res = uniqueness_probe(tiny_config(linf_cap=0.6), seed=0)
        assert res.alive_until == 0.0
        assert res.notes and "common alive window" in res.notes[0]

    def test_increment_shape_checked(self):
        with pytest.raises(ValueError, match="shape"):
            uniqueness_probe(tiny_config(), increments=np.zeros((3, 4)))
