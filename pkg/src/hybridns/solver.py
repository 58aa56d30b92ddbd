"""Outer drivers: linear Stokes solve, Picard fixed point for stationary
Navier-Stokes, theta-scheme transient stepping."""

from dataclasses import dataclass, field

import numpy as np

from . import condense, diagnostics
from .errors import InvalidArgumentError, PicardDivergenceError
from .forms import Discretization, State, cell_tensors
from .spaces import build_dofmap


@dataclass
class BCs:
    """Boundary conditions by tag plus the pressure constraint.

    dirichlet: tag -> g(points)->(N,2), prescribed facet velocity.
    slip:      tags of impermeable axis-aligned walls (normal component of
               the facet velocity constrained to zero, zero tangential
               traction).
    neumann:   tag -> traction h(points)->(N,2) or None for homogeneous.
    pressure:  ('mean', c) to enforce int p dx = c with a multiplier,
               ('pin', point, value) to fix the facet-pressure DOF nearest
               the point, or None.
    """

    dirichlet: dict = field(default_factory=dict)
    slip: tuple = ()
    neumann: dict = field(default_factory=dict)
    pressure: tuple = None


@dataclass
class SolverConfig:
    """Driver settings: solve mode, fixed-point tolerance and iteration cap,
    theta schedule as (number of steps, theta) pairs."""

    mode: str = "stokes"
    tol: float = 1e-6
    max_iters: int = 100
    theta_schedule: tuple = ()
    relaxation: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidArgumentError("tol must be > 0")
        for _, theta in self.theta_schedule:
            if not 0.0 <= theta <= 1.0:
                raise InvalidArgumentError(f"theta={theta} outside [0, 1]")

    def theta_for_step(self, step):
        """theta of the 1-based step, per the (count, theta) schedule; the
        last entry covers all remaining steps."""
        seen = 0
        theta = None
        for count, th in self.theta_schedule:
            seen += count
            theta = th
            if step <= seen:
                return th
        return theta


class Problem:
    """One discretized boundary-value problem: mesh + spaces + boundary data,
    with the tabulations shared across repeated solves."""

    def __init__(self, mesh, spec, bcs, degree=None):
        self.mesh = mesh
        self.spec = spec
        self.bcs = bcs
        self.dofmap = build_dofmap(mesh, spec, dirichlet=bcs.dirichlet,
                                   slip=bcs.slip)
        self.disc = Discretization(self.dofmap, degree)
        self.neumann_tags = tuple(bcs.neumann.keys())
        self.neumann_loads = {t: fn for t, fn in bcs.neumann.items()
                              if fn is not None}
        self.pin = None
        self.pin_value = 0.0
        self.mean_target = None
        if bcs.pressure is not None:
            kind = bcs.pressure[0]
            if kind == "pin":
                self.pin = self.dofmap.pbar_dof_near(bcs.pressure[1])
                self.pin_value = float(bcs.pressure[2])
            elif kind == "mean":
                self.mean_target = float(bcs.pressure[1])
            else:
                raise InvalidArgumentError(f"unknown pressure constraint {kind!r}")
        if self.mean_target is None and self.pin is None and not self.neumann_tags:
            raise InvalidArgumentError(
                "enclosed flow needs a pressure constraint (mean or pin)")

    def pin_point(self):
        if self.pin is None:
            return None
        return tuple(self.dofmap.pbar_coords[self.pin - self.dofmap.n_ubar])

    def _solve(self, locals_, t=0.0):
        if self.mean_target is not None:
            locals_ = condense.mean_pressure_constraint(
                locals_, self.disc, self.mean_target)
        return condense.solve_cycle(self.disc, locals_, self.pin,
                                    self.pin_value, t=t)

    def solve_stokes(self, params, forcing=None, t=0.0):
        locals_ = cell_tensors(self.disc, params, mode="stokes",
                               forcing=forcing,
                               neumann_loads=self.neumann_loads)
        state, _ = self._solve(locals_, t=t)
        return state

    def solve_stationary(self, params, stopping, forcing=None, initial=None,
                         max_iters=100, relaxation=1.0):
        """Picard fixed point: each iteration freezes the advective velocity,
        mass flux, and upwind switch at the previous iterate. Default initial
        iterate is the Stokes solution of the same data."""
        state = initial if initial is not None else self.solve_stokes(params, forcing)
        metric = stopping.metric(self, state)
        history = [metric]
        for it in range(1, max_iters + 1):
            locals_ = cell_tensors(self.disc, params, mode="ns", frozen=state,
                                   forcing=forcing,
                                   neumann_loads=self.neumann_loads,
                                   neumann_tags=self.neumann_tags)
            new_state, _ = self._solve(locals_)
            if relaxation != 1.0:
                new_state = _blend_states(new_state, state, relaxation)
            new_metric = stopping.metric(self, new_state)
            history.append(new_metric)
            if not np.isfinite(new_metric):
                raise PicardDivergenceError(
                    f"fixed point diverged at iteration {it}", history=history)
            denom = new_metric + metric
            if denom < 1e-300 or abs(new_metric - metric) / denom <= stopping.tol:
                return new_state, {"iterations": it, "history": history,
                                   "converged": True}
            state, metric = new_state, new_metric
        raise PicardDivergenceError(
            f"fixed point did not converge in {max_iters} iterations",
            history=history)

    def step(self, state_n, params, forcing_n=None, forcing_np1=None,
             nu_prev=None, mode="transient"):
        """One theta-scheme step. nu_prev is the viscosity in effect when
        state_n was produced; the frozen mass flux and upwind switch use it so
        the discrete conservation identities hold exactly across viscosity
        changes."""
        theta = params.theta
        forcing = [(1.0 - theta, forcing_n), (theta, forcing_np1)]
        locals_ = cell_tensors(self.disc, params, mode=mode, frozen=state_n,
                               nu_frozen=nu_prev, old=state_n, forcing=forcing,
                               neumann_loads=self.neumann_loads,
                               neumann_tags=self.neumann_tags)
        state, _ = self._solve(locals_, t=state_n.t + params.dt)
        return state


def _blend_states(new, old, w):
    return State(u=w * new.u + (1 - w) * old.u,
                 p=w * new.p + (1 - w) * old.p,
                 ubar=w * new.ubar + (1 - w) * old.ubar,
                 pbar=w * new.pbar + (1 - w) * old.pbar,
                 t=new.t)


@dataclass
class ErrorStopping:
    """Relative change of the L2 velocity error against an exact solution."""

    exact_u: object
    tol: float = 1e-4

    def metric(self, problem, state):
        return diagnostics.l2_error_velocity(problem.disc, state.u, self.exact_u)


@dataclass
class NormStopping:
    """Relative change of the L2 norm of the velocity."""

    tol: float = 1e-6

    def metric(self, problem, state):
        return diagnostics.l2_norm_velocity(problem.disc, state.u)


def solve_stokes(mesh, spec, params, forcing, bcs, degree=None):
    """Assemble and solve the stationary Stokes problem."""
    if params.nu <= 0:
        raise InvalidArgumentError("Stokes solve requires nu > 0")
    return Problem(mesh, spec, bcs, degree).solve_stokes(params, forcing)


def solve_stationary_ns(mesh, spec, params, bcs, stopping, forcing=None,
                        initial=None, max_iters=100, relaxation=1.0,
                        degree=None):
    """Stationary Navier-Stokes by Picard iteration; returns (state, info)."""
    problem = Problem(mesh, spec, bcs, degree)
    return problem.solve_stationary(params, stopping, forcing=forcing,
                                    initial=initial, max_iters=max_iters,
                                    relaxation=relaxation)


def step_transient(problem, state_n, params, forcing_n=None, forcing_np1=None,
                   nu_prev=None, mode="transient"):
    """Advance one theta step; exactly one linear solve."""
    return problem.step(state_n, params, forcing_n=forcing_n,
                        forcing_np1=forcing_np1, nu_prev=nu_prev, mode=mode)
