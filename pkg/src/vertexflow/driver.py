"""Time stepping: fixed-point (Picard) linearization, state management,
bound monitoring and per-step balance accounting.

Each time step freezes the upwind mobilities and the capillary-pressure
linearization at the previous iterate, assembles and solves the block
system, and repeats until both nodal increments drop below the tolerance
in the max norm.  Pressure increments are nondimensionalized by a
configurable scale before the test (physical pressures are O(1e6) Pa, far
above a raw 1e-5 threshold).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .assembly import (
    apply_dirichlet,
    assemble_system,
    lumped_masses,
    stiffness_coeffs,
    upwind_pattern,
)
from .errors import ConfigError, PicardDivergenceError
from .physics import fractional_flow
from .solver import SolverConfig, solve_block

logger = logging.getLogger(__name__)

#: Slack allowed on the saturation bounds by the monitor.
BOUND_EPS = 1e-12

#: Once the fixed-point residual falls below this multiple of the tolerance,
#: the upwind branch selections are locked for the rest of the step.  Without
#: the lock, pairs whose potentials sit at a tie keep flipping branch with
#: sub-tolerance state wobbles and the iteration enters a limit cycle; the
#: locked pattern comes from a state within this distance of the result, so
#: it differs from the self-consistent one only on tie-level gaps.
_FREEZE_FACTOR = 10.0

#: Depth of the multisecant acceleration history.
_ACCEL_DEPTH = 6


@dataclass
class SimState:
    """Nodal state at one time level."""

    t: float
    n: int
    S: np.ndarray
    P: np.ndarray

    @property
    def s_o(self):
        """Non-wetting saturation 1 - s."""
        return 1.0 - self.S

    def p_o(self, model):
        """Non-wetting pressure p + p_c(s)."""
        return self.P + np.asarray(model.capillary_pressure(self.S))


@dataclass
class PicardConfig:
    tol: float = 1e-5
    max_iter: int = 50
    pressure_scale: float | None = None  # None: max(1, ||P_prev||_inf)

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError(f"fixed-point tolerance must be > 0, got {self.tol}")


@dataclass
class TimeConfig:
    tau: float
    t_end: float
    output_stride: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau <= self.t_end:
            raise ConfigError(f"need 0 < tau <= t_end, got tau={self.tau}, t_end={self.t_end}")

    @property
    def num_steps(self):
        return int(np.ceil(self.t_end / self.tau - 1e-9))


@dataclass
class StepRecord:
    """Per-step diagnostics emitted by the driver."""

    n: int
    t: float
    picard_iterations: int
    gmres_iterations: int
    s_min: float
    s_max: float
    mass_residual: float


def _accelerate(g, residual, history):
    """Multisecant extrapolation of the next iterate from recent residuals.

    Solves a small least-squares problem over the stored (dx, dresidual)
    pairs and corrects the plain update g; falls back to g whenever the
    correction is ill-conditioned or disproportionate to the residual.
    """
    if not history:
        return g
    dX = np.stack([p[0] for p in history], axis=1)
    dF = np.stack([p[1] for p in history], axis=1)
    norms = np.linalg.norm(dF, axis=0)
    norms[norms == 0.0] = 1.0
    gamma, *_ = np.linalg.lstsq(dF / norms, residual, rcond=1e-12)
    gamma = gamma / norms
    update = (dX + dF) @ gamma
    if not np.all(np.isfinite(update)):
        return g
    if np.linalg.norm(update) > 20.0 * np.linalg.norm(residual):
        return g
    return g - update


class Simulation:
    """Owns the discrete problem and advances it in time.

    Sources are either a WellField (physical cases) or a callable
    ``sources(t) -> (g_w, g_o)`` returning nodal source densities
    (manufactured cases).  ``dirichlet(t) -> (nodes, s_values, p_values)``
    optionally pins boundary values each step.
    """

    def __init__(self, mesh, model, fluids, phi, perm_elem=None, wells=None,
                 sources=None, dirichlet=None, picard=None, solver=None):
        self.mesh = mesh
        self.model = model
        self.fluids = fluids
        self.phi = float(phi)
        self.wells = wells
        self.sources = sources
        self.dirichlet = dirichlet
        self.picard = picard or PicardConfig()
        self.solver = solver or SolverConfig()
        self.masses = lumped_masses(mesh)
        self.perm_elem = (
            np.ones(mesh.num_elements) if perm_elem is None
            else np.asarray(perm_elem, dtype=float)
        )
        self.coeffs = stiffness_coeffs(mesh, self.perm_elem)
        self.step_records = []

    def initialize(self, s0, p0):
        """Initial state: nodal interpolant of s0, constant (or interpolated) p0."""
        if callable(s0):
            S = np.array([float(s0(*v)) for v in self.mesh.vertices])
        else:
            S = np.full(self.mesh.num_nodes, float(s0))
        if callable(p0):
            P = np.array([float(p0(*v)) for v in self.mesh.vertices])
        else:
            P = np.full(self.mesh.num_nodes, float(p0))
        return SimState(t=0.0, n=0, S=S, P=P)

    def picard_step(self, state, tau):
        """Advance one time step; returns (new_state, iterations).

        Each iteration assembles the linearized block system at the current
        iterate and solves it.  Convergence is declared when the solver
        output differs from the iterate by less than the tolerance in the
        max norm (pressure scaled).  Two convergence aids that leave the
        fixed points untouched:

        - iterates are extrapolated from the recent residual history
          (multisecant mixing with a conservative safeguard), and
        - the upwind branch selections are locked once the residual is
          within _FREEZE_FACTOR of the tolerance, which removes the branch
          flip-flopping that otherwise cycles at potential ties.

        The returned state is always a solver output, with the constrained
        node's saturation recomputed from its displaced transport row (the
        two determinations agree up to linear-solve noise; the transport row
        keeps the value inside the physical bounds).
        """
        s_prev = state.S
        p_scale = self.picard.pressure_scale
        if p_scale is None:
            p_scale = max(1.0, float(np.max(np.abs(state.P))))

        t_new = state.t + tau
        sources = self.sources(t_new) if callable(self.sources) else None
        dirichlet = self.dirichlet(t_new) if self.dirichlet is not None else None

        x = np.concatenate([state.S, state.P / p_scale])
        M = self.mesh.num_nodes
        frozen = None
        history = []
        x_last = None
        g_last = None
        increments = []
        gmres_total = 0

        for k in range(1, self.picard.max_iter + 1):
            s_it = x[:M]
            p_it = x[M:] * p_scale
            pattern = frozen
            system = assemble_system(
                self.mesh, self.masses, self.coeffs, self.model, self.fluids,
                self.wells, s_prev, s_it, p_it, tau, self.phi,
                sources=sources, pattern=pattern,
            )
            if dirichlet is not None:
                system = apply_dirichlet(system, *dirichlet)
            s_new, p_new, report = solve_block(system, rtol=self.solver.rtol, config=self.solver)
            gmres_total += report.iterations
            if system.has_mean_constraint:
                s_new = s_new.copy()
                flux = float((system.ksp_last_regular @ p_new)[0])
                s_new[M - 1] = (system.fs_last_regular - flux) / system.kss_last_regular

            ds = float(np.max(np.abs(s_new - s_it)))
            dp = float(np.max(np.abs(p_new - p_it))) / p_scale
            increments.append((ds, dp))
            if max(ds, dp) < self.picard.tol:
                new_state = SimState(t=t_new, n=state.n + 1, S=s_new, P=p_new)
                self._record_step(state, new_state, k, gmres_total)
                return new_state, k
            if frozen is None and max(ds, dp) < _FREEZE_FACTOR * self.picard.tol:
                frozen = upwind_pattern(self.coeffs, self.model, s_it, p_it)

            g = np.concatenate([s_new, p_new / p_scale])
            if x_last is not None:
                history.append((x - x_last, (g - x) - (g_last - x_last)))
                if len(history) > _ACCEL_DEPTH:
                    history.pop(0)
            x_last, g_last = x, g
            x = _accelerate(g, g - x, history)

        raise PicardDivergenceError(
            f"fixed-point iteration exceeded {self.picard.max_iter} iterations "
            f"at step {state.n + 1} (t={t_new:g} s)",
            diagnostics={
                "step": state.n + 1,
                "t": t_new,
                "increments": increments,
                "tol": self.picard.tol,
            },
        )

    def _record_step(self, old_state, new_state, picard_iters, gmres_iters):
        s_min = float(new_state.S.min())
        s_max = float(new_state.S.max())
        record = StepRecord(
            n=new_state.n, t=new_state.t,
            picard_iterations=picard_iters, gmres_iterations=gmres_iters,
            s_min=s_min, s_max=s_max,
            mass_residual=self.mass_identity_residual(new_state, old_state),
        )
        self.step_records.append(record)
        logger.info(
            "step %4d  t=%10.4g  picard=%2d  gmres=%3d  s in [%.6f, %.6f]",
            record.n, record.t, picard_iters, gmres_iters, s_min, s_max,
        )

    def mass_identity_residual(self, state_new, state_old):
        """|sum_i m_i phi (S_i^n - S_i^{n-1}) / tau  -  sum_i m_i g_i|.

        g_i is the wetting source density actually used by the step (well
        fractional flows lagged at the previous saturation, or the
        manufactured source at the new time).
        """
        tau = state_new.t - state_old.t
        accum = float(self.masses @ (self.phi * (state_new.S - state_old.S) / tau))
        if callable(self.sources):
            g_w, _ = self.sources(state_new.t)
        elif self.wells is not None:
            fw_in = fractional_flow(self.model, self.fluids, "w", self.wells.s_in)
            fw_prev = np.asarray(fractional_flow(self.model, self.fluids, "w", state_old.S))
            g_w = fw_in * self.wells.qbar - fw_prev * self.wells.qund
        else:
            g_w = np.zeros(self.mesh.num_nodes)
        return abs(accum - float(self.masses @ g_w))

    def max_principle_monitor(self, state):
        """Nodal extrema and a flag for excursions beyond the residual bounds."""
        s_min = float(state.S.min())
        s_max = float(state.S.max())
        lo = self.model.s_rw - BOUND_EPS
        hi = 1.0 - self.model.s_ro + BOUND_EPS
        violated = s_min < lo or s_max > hi
        if violated:
            logger.warning(
                "maximum principle violated: s in [%.16g, %.16g] vs [%g, %g]",
                s_min, s_max, self.model.s_rw, 1.0 - self.model.s_ro,
            )
        return s_min, s_max, violated

    def advance(self, state, time_cfg, callbacks=()):
        """Run picard_step until t_end, invoking callbacks on the output stride.

        Callbacks receive (simulation, state, previous_state); they are also
        invoked for the final step regardless of stride.  Divergence aborts
        the run with the underlying error.
        """
        num_steps = time_cfg.num_steps
        for step in range(1, num_steps + 1):
            prev = state
            state, _ = self.picard_step(state, time_cfg.tau)
            if step % time_cfg.output_stride == 0 or step == num_steps:
                for callback in callbacks:
                    callback(self, state, prev)
        return state
