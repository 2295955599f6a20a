"""End-to-end simulations: the spline saturation solver coupled either to the
direct Galerkin pressure solve or to the collocation network.

Both drivers share one loop shape. Step ``n`` (counted from 0) first refreshes
the pressure when ``n % cadence == 0`` and then advances the saturation once,
so ``steps`` saturation updates use ``ceil(steps / cadence)`` pressure
updates.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crvpinn
from .config import SimConfig, write_config
from .fileio import (Snapshot, resolve_output_dir, write_loss_history, write_snapshot,
                     write_timings)
from .pressure_direct import assemble_pressure_system, solve_pressure_direct
from .projection import Projector, TensorQuad, TensorSplineField, eval_grid
from .reservoir import Reservoir
from .saturation import SaturationState, SaturationStepper, total_gas_mass
from .spline import QuadratureRule, SplineSpace1D, build_space, gauss_rule

log = logging.getLogger(__name__)

PHASES = ("saturation-integration", "projection", "pressure-integration",
          "pressure-solve", "pressure-train", "exchange", "io")


class SimulationError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TimingRecord:
    phase: str
    step: int
    seconds: float

    def __post_init__(self):
        if self.seconds < 0:
            raise ValueError("negative duration")


class Timer:
    """Collects :class:`TimingRecord` entries."""

    def __init__(self):
        self.records: list[TimingRecord] = []

    @contextmanager
    def __call__(self, phase: str, step: int):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.records.append(TimingRecord(phase, step, time.perf_counter() - t0))

    def total(self, phase: str) -> float:
        return sum(r.seconds for r in self.records if r.phase == phase)


@dataclass
class Trajectory:
    config: SimConfig
    solver: str
    snapshots: list[Snapshot] = field(default_factory=list)
    timings: list[TimingRecord] = field(default_factory=list)
    gas_volume: list[float] = field(default_factory=list)   # int S_g dA (m^2) after each step
    saturation: SaturationState | None = None
    pressure: TensorSplineField | None = None
    pressure_updates: int = 0
    saturation_steps: int = 0
    pretrain_loss: np.ndarray | None = None
    update_losses: list[np.ndarray] = field(default_factory=list)
    mlp: crvpinn.MlpParams | None = None
    output_dir: Path | None = None


# -- exchange between the lattice and the spline space -------------------------

def sample_saturation_at_collocation(s_g: TensorSplineField,
                                     grid: crvpinn.CollocationGrid) -> np.ndarray:
    """Spline saturation at every lattice point ``[i, j] = (i h, j h)``, clamped to [0, 1]."""
    c = grid.coords
    return np.clip(eval_grid(s_g, c, c), 0.0, 1.0)


def project_pinn_to_splines(mlp: crvpinn.MlpParams, spaces: tuple[SplineSpace1D, SplineSpace1D],
                            quad: QuadratureRule | None = None, scale: float = 1.0,
                            projector: Projector | None = None) -> TensorSplineField:
    """L2 projection of ``scale * cutoff * net`` onto the splines, boundary coefficients 0.

    The network is evaluated directly at the quadrature points, so no
    lattice interpolation is involved.
    """
    projector = projector or Projector(spaces[0], spaces[1], quad)
    tq = projector.tq
    values = crvpinn.evaluate(mlp, tq.X, tq.Y, scale)
    field_ = projector.project_values(values)
    coeffs = field_.coeffs
    coeffs[0, :] = coeffs[-1, :] = coeffs[:, 0] = coeffs[:, -1] = 0.0
    return field_


# -- comparison ----------------------------------------------------------------

@dataclass
class ErrorReport:
    relative: np.ndarray
    max: float
    mean: float
    l2: float                 # ||a - b|| / ||b|| over the sample points
    frac_under_5: float
    frac_under_20: float

    def summary(self) -> str:
        return (f"max {self.max:.4g}  mean {self.mean:.4g}  l2 {self.l2:.4g}  "
                f"<5%: {self.frac_under_5:.3f}  <20%: {self.frac_under_20:.3f}")


FLOOR = 1e-3


def relative_error_report(a, b, floor: float = FLOOR) -> ErrorReport:
    """Pointwise ``|a - b| / max(floor * ||b||_inf, |b|)`` with summary statistics."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    bmax = float(np.max(np.abs(b))) if b.size else 0.0
    denom = np.maximum(np.abs(b), floor * bmax)
    diff = np.abs(a - b)
    # b == 0 everywhere: fall back to absolute differences
    rel = np.divide(diff, denom, out=diff.copy(), where=denom > 0)
    bnorm = float(np.linalg.norm(b))
    l2 = float(np.linalg.norm(a - b)) / bnorm if bnorm > 0 else float(np.linalg.norm(a - b))
    return ErrorReport(rel, float(rel.max()), float(rel.mean()), l2,
                       float(np.mean(rel < 0.05)), float(np.mean(rel < 0.20)))


def compare_pressures(p_a: TensorSplineField, p_b: TensorSplineField, xs, ys=None,
                      floor: float = FLOOR) -> ErrorReport:
    """Relative error of ``p_a`` against ``p_b`` on the tensor grid ``xs x ys``."""
    ys = xs if ys is None else ys
    return relative_error_report(eval_grid(p_a, xs, ys), eval_grid(p_b, xs, ys), floor)


# -- shared plumbing -----------------------------------------------------------

class _Run:
    """State shared by both drivers: spaces, stepper, snapshots, timings."""

    def __init__(self, config: SimConfig, solver: str, reservoir: Reservoir | None = None):
        self.config = config
        self.reservoir = reservoir or config.build_reservoir()
        self.space = build_space(config.n_elements, config.degree)
        self.stepper = SaturationStepper(self.reservoir, self.space, self.space)
        self.state = SaturationState(TensorSplineField.zeros(self.space, self.space))
        self.timer = Timer()
        self.traj = Trajectory(config, solver, timings=self.timer.records)
        self.mass_tq = TensorQuad(self.space, self.space, gauss_rule(config.degree + 2))
        self.sample = np.linspace(0.0, 1.0, config.sample_n)
        out = config.output_dir
        self.out = resolve_output_dir(out) if out is not None else None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            write_config(config, self.out / "config.ini")
        self.traj.output_dir = self.out
        self.p: TensorSplineField | None = None

    def advance(self, n: int):
        """One explicit saturation step under the current pressure."""
        with self.timer("saturation-integration", n):
            rhs, n_bad = self.stepper.load(self.state.s_g, self.p, self.reservoir.tau)
        with self.timer("projection", n):
            coeffs = self.stepper.projector.solve(rhs)
            coeffs[0, :] = coeffs[-1, :] = coeffs[:, 0] = coeffs[:, -1] = 0.0
        s = self.state
        self.state = SaturationState(TensorSplineField(self.space, self.space, coeffs),
                                     s.step_index + 1, s.time + self.reservoir.tau, n_bad)
        lx, ly = self.reservoir.domain.length_x, self.reservoir.domain.length_y
        self.traj.gas_volume.append(total_gas_mass(self.state, tq=self.mass_tq) * lx * ly)
        self.traj.saturation_steps += 1

    def check_cfl(self, n: int):
        cfl = self.stepper.cfl_number(self.p, self.reservoir.tau)
        if cfl > self.stepper.cfl_warn:
            warnings.warn(f"step {n}: explicit saturation step has CFL number {cfl:.3g} "
                          f"(> {self.stepper.cfl_warn}); results may be unstable", stacklevel=3)

    def snapshot(self, step: int):
        c = self.config
        extent = (c.domain.length_x, c.domain.length_y)
        with self.timer("io", step):
            sat = np.clip(eval_grid(self.state.s_g, self.sample, self.sample), 0.0, 1.0).T
            snaps = [Snapshot(step, self.state.time, "saturation", sat, extent)]
            if self.p is not None:
                pres = eval_grid(self.p, self.sample, self.sample).T
                snaps.append(Snapshot(step, self.state.time, "pressure", pres, extent))
            self.traj.snapshots.extend(snaps)
            if self.out is not None:
                for snap in snaps:
                    write_snapshot(snap, self.out)

    def wants_snapshot(self, step: int) -> bool:
        return step % self.config.snapshot_every == 0 or step == self.config.steps

    def finish(self):
        self.traj.saturation = self.state
        self.traj.pressure = self.p
        if self.out is not None:
            write_timings(self.timer.records, self.out / "timings.csv")
        return self.traj

    def loop(self, refresh):
        c = self.config
        if c.steps == 0:
            self.snapshot(0)
            return
        for n in range(c.steps):
            try:
                if n % c.cadence == 0:
                    refresh(n)
                    self.traj.pressure_updates += 1
                    self.check_cfl(n)
                if n == 0:
                    self.snapshot(0)
                self.advance(n)
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(f"step {n}: {type(exc).__name__}: {exc}", n) from exc
            if self.wants_snapshot(n + 1):
                self.snapshot(n + 1)


# -- drivers -------------------------------------------------------------------

def run_direct(config: SimConfig, reservoir: Reservoir | None = None) -> Trajectory:
    """Saturation steps with the Galerkin pressure solve every ``cadence`` steps."""
    run = _Run(config, "direct", reservoir)
    tq = TensorQuad(run.space, run.space)

    def refresh(n):
        with run.timer("pressure-integration", n):
            system = assemble_pressure_system(run.state.s_g, run.reservoir, tq=tq)
        with run.timer("pressure-solve", n):
            run.p = solve_pressure_direct(system)

    run.loop(refresh)
    return run.finish()


def run_hybrid(config: SimConfig, reservoir: Reservoir | None = None,
               checkpoint=None) -> Trajectory:
    """Saturation steps with the collocation network as pressure solver.

    The network is pretrained once on the initial saturation (skipped when a
    ``checkpoint`` is given), then retrained for ``update_epochs`` at the start
    of every cadence block and projected onto the splines.
    """
    run = _Run(config, "hybrid", reservoir)
    c = config
    grid = crvpinn.CollocationGrid(c.collocation_n)
    p_projector = Projector(run.space, run.space)
    traj = run.traj

    with run.timer("exchange", 0):
        s0 = sample_saturation_at_collocation(run.state.s_g, grid)
    with run.timer("pressure-integration", 0):
        problem0 = crvpinn.pressure_problem(s0, run.reservoir, grid)
    u_scale = problem0.u_scale

    if checkpoint is not None:
        mlp, adam = crvpinn.load_checkpoint(checkpoint)
    else:
        mlp = crvpinn.init_mlp(c.widths, c.seed, c.activation, c.input_scale)
        adam = crvpinn.AdamState.for_params(mlp)
        with run.timer("pressure-train", 0):
            mlp, adam, hist = _train(run, mlp, adam, problem0, c.pretrain_epochs, 0)
        traj.pretrain_loss = hist
    state = {"mlp": mlp, "adam": adam}

    def refresh(n):
        with run.timer("exchange", n):
            s_grid = sample_saturation_at_collocation(run.state.s_g, grid)
        with run.timer("pressure-integration", n):
            problem = crvpinn.pressure_problem(s_grid, run.reservoir, grid, u_scale)
        with run.timer("pressure-train", n):
            state["mlp"], state["adam"], hist = _train(run, state["mlp"], state["adam"],
                                                       problem, c.update_epochs, n)
        traj.update_losses.append(hist)
        with run.timer("exchange", n):
            run.p = project_pinn_to_splines(state["mlp"], (run.space, run.space),
                                            scale=problem.pressure_unit, projector=p_projector)

    run.loop(refresh)
    traj.mlp = state["mlp"]
    if run.out is not None:
        with run.timer("io", c.steps):
            write_loss_history(traj.pretrain_loss, traj.update_losses, run.out / "loss_history.csv")
            crvpinn.save_checkpoint(run.out / "checkpoint.txt", state["mlp"], state["adam"])
    return run.finish()


def _train(run: _Run, mlp, adam, problem, epochs, step):
    try:
        return crvpinn.train(mlp, adam, problem, epochs, run.config.lr)
    except crvpinn.TrainingDiverged as exc:
        if run.out is not None and exc.mlp is not None:
            path = run.out / "checkpoint_diverged.txt"
            crvpinn.save_checkpoint(path, exc.mlp, exc.adam)
            log.error("training diverged; last finite state saved to %s", path)
        raise SimulationError(f"step {step}: {exc}", step) from exc


def pretrain(config: SimConfig, path, reservoir: Reservoir | None = None):
    """Train on the initial saturation only and write a checkpoint."""
    reservoir = reservoir or config.build_reservoir()
    space = build_space(config.n_elements, config.degree)
    grid = crvpinn.CollocationGrid(config.collocation_n)
    s0 = sample_saturation_at_collocation(TensorSplineField.zeros(space, space), grid)
    problem = crvpinn.pressure_problem(s0, reservoir, grid)
    mlp = crvpinn.init_mlp(config.widths, config.seed, config.activation, config.input_scale)
    adam = crvpinn.AdamState.for_params(mlp)
    mlp, adam, hist = crvpinn.train(mlp, adam, problem, config.pretrain_epochs, config.lr)
    crvpinn.save_checkpoint(path, mlp, adam)
    return mlp, adam, hist


def expected_pressure_updates(steps: int, cadence: int) -> int:
    return math.ceil(steps / cadence)
