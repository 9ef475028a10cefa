"""Diagnostics files, binary checkpoints and the single-path runner."""

import math
import struct

import numpy as np
import pytest

from ksns.config import RunConfig, parse_config
from ksns.errors import ConfigError
from ksns.fields import XNorms
from ksns.functionals import DiagnosticsRow
from ksns.io import (
    CHECKPOINT_MAGIC,
    Checkpoint,
    CheckpointError,
    DiagnosticsWriter,
    decode_checkpoint,
    encode_checkpoint,
    format_value,
    read_checkpoint,
    read_diagnostics,
    write_checkpoint,
)
from ksns.noise import WienerPath
from ksns.runner import CONFIG_FILE, DIAGNOSTICS_FILE, FINAL_CHECKPOINT, METADATA_FILE, checkpoint_name, execute, resume


def small_config(**stepper):
    base = {"dt": 1e-3, "t_final": 0.02, "checkpoint_every": 10}
    base.update(stepper)
    return RunConfig().with_updates(
        grid={"N": 16, "L": 2 * math.pi},
        initial=[
            {"kind": "gaussian_density", "mass": 2.0, "width": 0.8},
            {"kind": "uniform_density", "mass": 0.5 * (2 * math.pi) ** 2},
            {"kind": "taylor_green_velocity", "amplitude": 0.2},
        ],
        noise={"J": 4, "sigma0": 0.1, "lambda": 0.2, "seed": 3},
        stepper=base,
        output={"cadence": 2},
    )


def _row(t):
    return DiagnosticsRow(*([t] + [float(i) for i in range(1, 17)]))


class TestDiagnosticsFile:
    def test_format_value(self):
        assert format_value(0.1) == "0.10000000000000001"
        assert float(format_value(1 / 3)) == 1 / 3
        assert format_value(math.nan) == "nan"
        assert format_value(-math.inf) == "-inf"
        assert format_value(True) == "1"

    def test_write_read_with_footer(self, tmp_path):
        path = tmp_path / "d.csv"
        with DiagnosticsWriter(path) as w:
            w.write_row(_row(0.0))
            w.write_row(_row(0.5))
            w.write_footer({"event": None, "steps": 2})
        d = read_diagnostics(path)
        assert d.columns == DiagnosticsRow.columns()
        assert d.data.shape == (2, len(d.columns))
        assert d.column("time").tolist() == [0.0, 0.5]
        assert d.footer == {"event": None, "steps": 2}

    def test_append_drops_footer(self, tmp_path):
        path = tmp_path / "d.csv"
        with DiagnosticsWriter(path) as w:
            w.write_row(_row(0.0))
            w.write_footer({"steps": 1})
        with DiagnosticsWriter(path, append=True) as w:
            w.write_row(_row(1.0))
        d = read_diagnostics(path)
        assert d.footer is None and d.data.shape[0] == 2

    def test_append_rejects_other_schema(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="schema"):
            DiagnosticsWriter(path, append=True)

    def test_each_row_flushed(self, tmp_path):
        path = tmp_path / "d.csv"
        w = DiagnosticsWriter(path)
        w.write_row(_row(0.25))
        assert read_diagnostics(path).data.shape[0] == 1
        w.close()


class TestCheckpoint:
    def _checkpoint(self, with_rng=True):
        cfg = small_config()
        state = cfg.initial_state()
        rng = None
        if with_rng:
            path = WienerPath(2**63 + 5, 4)
            path.sample_increments(0.1)
            rng = path.get_state()
        return Checkpoint(state, 7, cfg.hash(), cfg.dump(), XNorms(1.0, 2.0, 3.0, 4.0), rng, 3)

    @pytest.mark.parametrize("with_rng", [True, False])
    def test_round_trip(self, with_rng):
        ck = self._checkpoint(with_rng)
        blob = encode_checkpoint(ck)
        back = decode_checkpoint(blob)
        assert back.step == 7 and back.positivity_count == 3
        assert back.config_hash == ck.config_hash and back.config_text == ck.config_text
        assert back.running == ck.running
        assert np.array_equal(back.state.density_hat, ck.state.density_hat)
        assert np.array_equal(back.state.velocity_hat, ck.state.velocity_hat)
        assert back.rng_state == ck.rng_state
        assert encode_checkpoint(back) == blob

    def test_restored_stream_continues(self):
        ck = self._checkpoint()
        back = decode_checkpoint(encode_checkpoint(ck))
        a, b = WienerPath.from_state(ck.rng_state), WienerPath.from_state(back.rng_state)
        assert np.array_equal(a.sample_increments(0.01), b.sample_increments(0.01))

    def test_header_layout(self):
        blob = encode_checkpoint(self._checkpoint())
        assert blob[:8] == CHECKPOINT_MAGIC
        version, N, L, t, step, pos = struct.unpack_from("<IIddQQ", blob, 8)
        assert (version, N, step, pos) == (1, 16, 7, 3)
        assert L == pytest.approx(2 * math.pi) and t == 0.0

    def test_bit_flip_detected(self):
        blob = bytearray(encode_checkpoint(self._checkpoint()))
        blob[len(blob) // 2] ^= 0x01
        with pytest.raises(CheckpointError, match="checksum"):
            decode_checkpoint(bytes(blob))

    def test_truncation_detected(self):
        blob = encode_checkpoint(self._checkpoint())
        with pytest.raises(CheckpointError):
            decode_checkpoint(blob[:-100])

    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"NOTACKPT" + bytes(100))

    def test_atomic_write(self, tmp_path):
        ck = self._checkpoint()
        write_checkpoint(tmp_path / "a.ckpt", ck)
        assert not list(tmp_path.glob("*.tmp"))
        assert read_checkpoint(tmp_path / "a.ckpt").step == 7


class TestRunner:
    def test_zero_horizon(self, tmp_path):
        cfg = small_config(t_final=0.0)
        res = execute(cfg, tmp_path)
        d = read_diagnostics(tmp_path / DIAGNOSTICS_FILE)
        assert d.data.shape[0] == 0
        assert d.footer["steps"] == 0
        ck = read_checkpoint(tmp_path / FINAL_CHECKPOINT)
        assert ck.step == 0
        assert np.array_equal(ck.state.density_hat, cfg.initial_state().density_hat)
        assert res.event is None

    def test_outputs_and_mass(self, tmp_path):
        cfg = small_config()
        res = execute(cfg, tmp_path)
        assert (tmp_path / CONFIG_FILE).exists() and (tmp_path / METADATA_FILE).exists()
        assert (tmp_path / checkpoint_name(10)).exists() and (tmp_path / checkpoint_name(20)).exists()
        d = read_diagnostics(tmp_path / DIAGNOSTICS_FILE)
        assert d.data.shape[0] == 10
        mass = d.column("mass")
        assert np.max(np.abs(mass - mass[0])) <= 1e-10 * mass[0]
        assert np.all(np.isfinite(d.column("balance_residual")))
        assert res.steps == 20
        assert parse_config((tmp_path / CONFIG_FILE).read_text()) == cfg

    def test_resume_bit_identical(self, tmp_path):
        cfg = small_config()
        full, part = tmp_path / "full", tmp_path / "part"
        execute(cfg, full)
        execute(cfg, part)
        # discard everything after step 10 and continue from its checkpoint
        (part / FINAL_CHECKPOINT).unlink()
        resume(part / checkpoint_name(10))
        assert (part / FINAL_CHECKPOINT).read_bytes() == (full / FINAL_CHECKPOINT).read_bytes()
        assert (part / DIAGNOSTICS_FILE).read_text() == (full / DIAGNOSTICS_FILE).read_text()

    def test_resume_rejects_tampered_config(self, tmp_path):
        cfg = small_config()
        execute(cfg, tmp_path)
        ck = read_checkpoint(tmp_path / checkpoint_name(10))
        ck.config_text = ck.config_text.replace("cadence: 2", "cadence: 3")
        write_checkpoint(tmp_path / "bad.ckpt", ck)
        with pytest.raises(ConfigError, match="hash"):
            resume(tmp_path / "bad.ckpt")

    def test_stopping_event_recorded(self, tmp_path):
        cfg = small_config(linf_cap=50.0, t_final=0.05).with_updates(
            grid={"N": 32}, initial=[{"kind": "gaussian_density", "mass": 40.0, "width": 0.4}]
        )
        assert float(np.max(cfg.initial_state().density)) < 50.0
        res = execute(cfg, tmp_path)
        assert res.event is not None and res.event.kind == "norm_cap"
        assert 0 < res.event.time < 0.05
        d = read_diagnostics(tmp_path / DIAGNOSTICS_FILE)
        assert d.footer["event"]["kind"] == "norm_cap"
        assert d.column("time")[-1] == pytest.approx(res.event.time)

    def test_initial_state_over_cap(self, tmp_path):
        res = execute(small_config(linf_cap=0.6), tmp_path)
        assert res.event is not None and res.event.time == 0.0 and res.steps == 0
        assert read_diagnostics(tmp_path / DIAGNOSTICS_FILE).footer["event"]["kind"] == "norm_cap"

    def test_picard_checkpoint_alignment(self, tmp_path):
        cfg = small_config(scheme="picard", picard_window=4, checkpoint_every=10)
        with pytest.raises(ConfigError, match="picard_window"):
            execute(cfg, tmp_path)

    def test_npz_snapshots(self, tmp_path):
        cfg = small_config(t_final=0.004).with_updates(output={"formats": ["csv", "npz"]})
        execute(cfg, tmp_path)
        snaps = sorted((tmp_path / "snapshots").glob("*.npz"))
        assert len(snaps) == 2
        with np.load(snaps[0]) as z:
            assert set(z.files) == {"time", "x", "y", "n", "c", "u", "v"}

    def test_keep_rows_without_files(self, tmp_path):
        res = execute(small_config(), tmp_path / "none", keep_rows=True, write_outputs=False)
        assert len(res.rows) == 10 and res.output_dir is None
        assert not (tmp_path / "none").exists()
