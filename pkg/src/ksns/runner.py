"""Single-path driver: diagnostics cadence, checkpoints and resume."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import RunConfig, parse_config
from .errors import ConfigError
from .fields import State
from .functionals import compute_diagnostics, dissipations, free_energy, step_residual
from .io import (
    DIAGNOSTICS_SCHEMA,
    Checkpoint,
    DiagnosticsWriter,
    read_checkpoint,
    write_checkpoint,
    write_snapshot,
)
from .noise import WienerPath
from .stepper import Simulation, StoppingEvent, steps_for

log = logging.getLogger(__name__)

DIAGNOSTICS_FILE = "diagnostics.csv"
CONFIG_FILE = "config.yaml"
METADATA_FILE = "run.json"
FINAL_CHECKPOINT = "final.ckpt"


@dataclass
class RunResult:
    state: State
    event: StoppingEvent | None
    steps: int
    rows: list = field(default_factory=list)
    positivity_events: list = field(default_factory=list)
    output_dir: Path | None = None


def checkpoint_name(step: int) -> str:
    return f"checkpoint_{step:08d}.ckpt"


def _build(cfg: RunConfig, path=None):
    grid = cfg.make_grid()
    exps = cfg.exponent_set()
    scfg = cfg.stepper_config()
    spec = cfg.noise_spec(grid)
    if path is None:
        path = cfg.wiener_path()
    sim = Simulation(grid, scfg, spec, path, exps)
    # η is fixed by the configured initial mass so resumed runs see the same value
    params = cfg.gamma_params(cfg.initial_state(grid).mass())
    return grid, exps, scfg, spec, sim, params


def _archive(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.dump(), encoding="utf-8")
    meta = {"diagnostics_schema": DIAGNOSTICS_SCHEMA, "config_sha256": cfg.hash().hex(), "version": __version__}
    (out / METADATA_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def execute(
    cfg: RunConfig,
    output_dir=None,
    *,
    start: Checkpoint | None = None,
    path=None,
    keep_rows: bool = False,
    write_outputs: bool = True,
) -> RunResult:
    """Run one path to ``cfg.stepper.t_final`` or the first stopping event.

    Args:
        cfg: Resolved configuration.
        output_dir: Overrides ``cfg.output.directory``.
        start: Continue from this checkpoint instead of the initial data.
        path: Increment source (defaults to the configured Wiener stream).
        keep_rows: Also return the diagnostics rows in memory.
        write_outputs: Skip all file output when False.
    """
    out = Path(output_dir if output_dir is not None else cfg.output.directory)
    grid, exps, scfg, spec, sim, params = _build(cfg, path)
    if start is not None:
        state = start.state
        step0 = start.step
        pos0 = start.positivity_count
        sim.running = start.running
        sim.steps_taken = step0
        if start.rng_state is not None:
            if sim.path is None:
                raise ConfigError("checkpoint carries a Wiener stream but the config has noise disabled")
            sim.path.set_state(start.rng_state)
    else:
        state = cfg.initial_state(grid)
        step0 = 0
        pos0 = 0
    t_final = cfg.stepper.t_final
    n_steps = steps_for(t_final - state.time, scfg.dt) if t_final > state.time else 0
    cadence = cfg.output.cadence
    ck_every = cfg.stepper.checkpoint_every
    if scfg.scheme == "picard" and ck_every and ck_every % scfg.picard_window:
        raise ConfigError(
            "checkpoint_every must be a multiple of picard_window for the picard scheme",
            field="stepper.checkpoint_every",
        )

    writer = None
    if write_outputs:
        _archive(cfg, out)
        diag_path = out / DIAGNOSTICS_FILE
        resuming = start is not None and diag_path.exists()
        if resuming:
            _truncate_after(diag_path, state.time)
        writer = DiagnosticsWriter(diag_path, append=resuming)
        if "npz" in cfg.output.formats:
            (out / "snapshots").mkdir(exist_ok=True)

    def save(name: str, st: State, step: int) -> None:
        rng = sim.path.get_state() if isinstance(sim.path, WienerPath) else None
        ck = Checkpoint(st, step, cfg.hash(), cfg.dump(), sim.running, rng, pos0 + len(sim.positivity_events))
        write_checkpoint(out / name, ck)

    rows = []
    step = step0
    if n_steps == 0:
        sim.start(state)
    event = None
    try:
        for rec in sim.steps(state, n_steps):
            step += 1
            state = rec.state
            event = rec.event
            tick = step % cadence == 0 or event is not None
            if tick and state.is_finite():
                row = compute_diagnostics(state, exps, params)
                prev = rec.prev
                row.balance_residual = step_residual(
                    free_energy(prev),
                    row.free_energy,
                    dissipations(prev, params)[0],
                    (rec.info.noise_trace, rec.info.martingale),
                    scfg.dt,
                )
                if writer is not None:
                    writer.write_row(row)
                    if "npz" in cfg.output.formats:
                        write_snapshot(out / "snapshots" / f"snap_{step:08d}.npz", state)
                if keep_rows:
                    rows.append(row)
            if write_outputs and ck_every and step % ck_every == 0 and state.is_finite():
                save(checkpoint_name(step), state, step)
        # also covers a state that violates a cap before the first step
        event = sim.event
        if write_outputs:
            save(FINAL_CHECKPOINT, state, step)
            writer.write_footer(
                {
                    "event": event.to_dict() if event is not None else None,
                    "steps": step,
                    "time": state.time,
                    "positivity_events": pos0 + len(sim.positivity_events),
                }
            )
    finally:
        if writer is not None:
            writer.close()
    if event is not None:
        log.info("stopping event %s at t=%.6g", event.kind, event.time)
    return RunResult(state, event, step, rows, sim.positivity_events, out if write_outputs else None)


def _truncate_after(path: Path, time: float) -> None:
    """Drop diagnostics rows later than ``time`` (and any footer)."""
    lines = path.read_text(encoding="utf-8").splitlines()
    keep = [lines[0]]
    for ln in lines[1:]:
        if not ln or ln.startswith("#"):
            continue
        if float(ln.split(",", 1)[0]) <= time:
            keep.append(ln)
    path.write_text("\n".join(keep) + "\n", encoding="utf-8")


def resume(checkpoint_path, output_dir=None) -> RunResult:
    ck = read_checkpoint(checkpoint_path)
    cfg = parse_config(ck.config_text)
    if cfg.hash() != ck.config_hash:
        raise ConfigError("embedded config does not match the checkpoint's config hash")
    out = output_dir if output_dir is not None else Path(checkpoint_path).parent
    return execute(cfg, out, start=ck)

