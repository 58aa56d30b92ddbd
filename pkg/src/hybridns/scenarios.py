"""Benchmark scenario runners and their configuration.

Four scenarios: manufactured Stokes flow on the unit square, Kovasznay flow,
backward-facing step, and the randomly forced inviscid box ('chaotic').
Each writes report.csv (one row per run) and report.json (full histories).
"""

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import diagnostics
from .diagnostics import Report
from .errors import ConfigError, PicardDivergenceError
from .forms import CellVectorField, Params, State
from .mesh import build_rect_mesh, tag_boundary, cell_sizes
from .solver import BCs, ErrorStopping, NormStopping, Problem
from .spaces import SpaceSpec, cell_lattice_points
from . import basis as basis_mod

SCENARIOS = ("stokes-mms", "kovasznay", "backstep", "chaotic", "custom")


@dataclass
class ScenarioConfig:
    """Sweep settings; unset order/parameter fields fall back to the
    scenario's published defaults."""

    scenario: str
    resolutions: tuple = ()
    k: int = 1
    kbar: int = None
    m: int = None
    mbar: int = None
    nu: float = None
    re: tuple = ()
    alpha: float = None
    beta: float = None
    chi: float = 0.5
    theta: float = 0.5
    dt: float = 0.2
    steps: int = 30
    seeds: tuple = (0,)
    tol: float = None
    max_iters: int = 200
    relaxation: float = 1.0
    out: str = "out"
    dump_fields: bool = False
    nx: int = None
    ny: int = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; "
                              f"expected one of {SCENARIOS}")
        if self.k < 1:
            raise ConfigError("order k must be >= 1")
        self.resolutions = tuple(int(n) for n in self.resolutions)
        self.re = tuple(float(r) for r in self.re)
        self.seeds = tuple(int(s) for s in self.seeds)
        if any(n < 1 for n in self.resolutions):
            raise ConfigError("resolutions must be positive")

    def spec(self):
        k = self.k
        return SpaceSpec(k,
                         self.kbar if self.kbar is not None else k,
                         self.m if self.m is not None else k,
                         self.mbar if self.mbar is not None else
                         (self.m if self.m is not None else k))

    def params(self, nu, theta=None, dt=None):
        alpha = self.alpha if self.alpha is not None else 6.0 * self.k**2
        beta = self.beta if self.beta is not None else 1e-4
        return Params(nu=nu, alpha=alpha, beta=beta, chi=self.chi,
                      theta=self.theta if theta is None else theta,
                      dt=self.dt if dt is None else dt)


# ---------------------------------------------------------------------------
# Exact solutions and loads.

def stokes_mms_velocity(x):
    X, Y = x[:, 0], x[:, 1]
    ux = X**2 * (1 - X) ** 2 * (2 * Y - 6 * Y**2 + 4 * Y**3)
    uy = -(Y**2) * (1 - Y) ** 2 * (2 * X - 6 * X**2 + 4 * X**3)
    return np.column_stack([ux, uy])


def stokes_mms_pressure(x):
    return x[:, 0] * (1 - x[:, 0])


def stokes_mms_forcing(nu=1.0):
    """f = grad p - nu laplace u for the manufactured solution (closed form,
    the velocity being solenoidal)."""

    def f(x):
        X, Y = x[:, 0], x[:, 1]
        lap_ux = ((2 - 12 * X + 12 * X**2) * (2 * Y - 6 * Y**2 + 4 * Y**3)
                  + (X**2 - 2 * X**3 + X**4) * (-12 + 24 * Y))
        lap_uy = -((Y**2 - 2 * Y**3 + Y**4) * (-12 + 24 * X)
                   + (2 - 12 * Y + 12 * Y**2) * (2 * X - 6 * X**2 + 4 * X**3))
        return np.column_stack([(1 - 2 * X) - nu * lap_ux, -nu * lap_uy])

    return f


def kovasznay_lambda(re):
    return re / 2.0 - math.sqrt(re**2 / 4.0 + 4.0 * math.pi**2)


def kovasznay_exact(re):
    lam = kovasznay_lambda(re)

    def velocity(x):
        X, Y = x[:, 0], x[:, 1]
        ux = 1.0 - np.exp(lam * X) * np.cos(2 * np.pi * Y)
        uy = lam / (2 * np.pi) * np.exp(lam * X) * np.sin(2 * np.pi * Y)
        return np.column_stack([ux, uy])

    def pressure(x):
        return 0.5 * (1.0 - np.exp(2 * lam * x[:, 0]))

    return velocity, pressure


def backstep_inflow(x):
    """Parabolic profile on the upper half of the inlet, peak velocity 1."""
    y = x[:, 1]
    ux = np.where(y >= 0.5, 16.0 * (y - 0.5) * (1.0 - y), 0.0)
    return np.column_stack([ux, np.zeros_like(ux)])


def _zero_velocity(x):
    return np.zeros((x.shape[0], 2))


# ---------------------------------------------------------------------------


def _common_row(config, run_id, problem, params, re=None, seed=None, nx=None,
                ny=None, steps=None):
    spec = problem.spec
    return {
        "scenario": config.scenario, "run_id": run_id,
        "nx": nx, "ny": ny,
        "k": spec.k, "kbar": spec.kbar, "m": spec.m, "mbar": spec.mbar,
        "nu": params.nu, "re": re, "alpha": params.alpha, "beta": params.beta,
        "chi": params.chi, "theta": params.theta, "dt": params.dt,
        "steps": steps, "seed": seed,
        "h_max": float(np.max(cell_sizes(problem.mesh))),
        "dof_facet": int(np.count_nonzero(problem.dofmap.free_mask(problem.pin))),
        "pin_info": repr(problem.pin_point()) if problem.pin is not None else "mean",
    }


def _dump_field(path, problem, state):
    pts = cell_lattice_points(problem.mesh, problem.spec.k)
    tab = basis_mod.eval_basis(problem.dofmap.basis_p, problem.dofmap.basis_u.nodes)
    p_at = np.einsum("cj,jn->cn", state.p, tab)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u_x", "u_y", "p"])
        C, n, _ = pts.shape
        for c in range(C):
            for i in range(n):
                w.writerow([pts[c, i, 0], pts[c, i, 1],
                            state.u[c, i, 0], state.u[c, i, 1], p_at[c, i]])


def _maybe_dump(config, outdir, run_id, problem, state):
    if config.dump_fields:
        _dump_field(Path(outdir) / f"field_{run_id}.csv", problem, state)


def run_stokes_mms(config):
    """Manufactured Stokes flow on the unit square: Dirichlet velocity, the
    mean pressure fixed to 1/6 with a multiplier."""
    resolutions = config.resolutions or (8, 16, 32, 64)
    nu = config.nu if config.nu is not None else 1.0
    spec = config.spec()
    report = Report(meta={"scenario": config.scenario,
                          "config": asdict(config)})
    outdir = _prepare_out(config)
    forcing = stokes_mms_forcing(nu)
    for i, n in enumerate(resolutions):
        mesh = build_rect_mesh(n, n)
        bcs = BCs(dirichlet={t: _zero_velocity
                             for t in ("left", "right", "bottom", "top")},
                  pressure=("mean", 1.0 / 6.0))
        problem = Problem(mesh, spec, bcs)
        params = config.params(nu)
        state = problem.solve_stokes(params, forcing)
        run_id = f"{config.scenario}-{i:03d}"
        row = _common_row(config, run_id, problem, params, nx=n, ny=n)
        row.update(
            l2_u=diagnostics.l2_error_velocity(problem.disc, state.u,
                                               stokes_mms_velocity),
            l2_p=diagnostics.l2_error_pressure(problem.disc, state.p,
                                               stokes_mms_pressure),
            e_div=diagnostics.divergence_error(problem.disc, state.u),
            mass_residual_max=float(np.max(np.abs(
                diagnostics.local_mass_residual(problem.disc, state, params)))),
            kinetic_energy=diagnostics.kinetic_energy(problem.disc, state.u),
            iterations=1, converged=True,
        )
        report.add_row(**row)
        _maybe_dump(config, outdir, run_id, problem, state)
    _write(report, outdir)
    return report


def run_custom(config):
    """Free-parameter variant of the manufactured Stokes run (nu, orders,
    beta and resolutions all taken from the config)."""
    return run_stokes_mms(config)


def run_kovasznay(config):
    """Kovasznay flow on (-0.5,1)x(-0.5,1.5): exact Dirichlet velocity on the
    whole boundary, facet pressure pinned in the lower-left corner, Picard
    iteration with the error-based stopping criterion."""
    resolutions = config.resolutions or (8, 16, 32, 64)
    res = config.re or (40.0,)
    spec = config.spec()
    tol = config.tol if config.tol is not None else 1e-4
    report = Report(meta={"scenario": config.scenario, "config": asdict(config)})
    outdir = _prepare_out(config)
    idx = 0
    for re in res:
        nu = 1.0 / re
        exact_u, exact_p = kovasznay_exact(re)
        pin_value = float(exact_p(np.array([[-0.5, -0.5]]))[0])
        for n in resolutions:
            mesh = build_rect_mesh(n, n, bbox=(-0.5, 1.0, -0.5, 1.5))
            bcs = BCs(dirichlet={t: exact_u
                                 for t in ("left", "right", "bottom", "top")},
                      pressure=("pin", (-0.5, -0.5), pin_value))
            problem = Problem(mesh, spec, bcs)
            params = config.params(nu)
            state, info = problem.solve_stationary(
                params, ErrorStopping(exact_u, tol),
                max_iters=config.max_iters, relaxation=config.relaxation)
            run_id = f"{config.scenario}-{idx:03d}"
            idx += 1
            row = _common_row(config, run_id, problem, params, re=re, nx=n, ny=n)
            row.update(
                l2_u=diagnostics.l2_error_velocity(problem.disc, state.u, exact_u),
                l2_p=diagnostics.l2_error_pressure(problem.disc, state.p, exact_p),
                l2_p_meanfree=diagnostics.l2_error_pressure(
                    problem.disc, state.p, exact_p, mean_match=True),
                e_div=diagnostics.divergence_error(problem.disc, state.u),
                mass_residual_max=float(np.max(np.abs(
                    diagnostics.local_mass_residual(problem.disc, state, params)))),
                iterations=info["iterations"], converged=info["converged"],
                history={"error": info["history"]},
            )
            report.add_row(**row)
            _maybe_dump(config, outdir, run_id, problem, state)
    _write(report, outdir)
    return report


def _backstep_problem(config, spec):
    nx = config.nx if config.nx is not None else 300
    ny = config.ny if config.ny is not None else 30
    mesh = build_rect_mesh(nx, ny, bbox=(0.0, 15.0, 0.0, 1.0))
    tol = 1e-9
    mesh = tag_boundary(mesh, {
        "inflow": lambda p: abs(p[0]) < tol and p[1] > 0.5,
        "stepwall": lambda p: abs(p[0]) < tol,
        "outflow": lambda p: abs(p[0] - 15.0) < tol,
        "bottom": lambda p: abs(p[1]) < tol,
        "top": lambda p: abs(p[1] - 1.0) < tol,
    })
    bcs = BCs(dirichlet={"inflow": backstep_inflow,
                         "stepwall": _zero_velocity,
                         "bottom": _zero_velocity,
                         "top": _zero_velocity},
              neumann={"outflow": None},
              pressure=("pin", (0.0, 0.0), 0.0))
    return Problem(mesh, spec, bcs), nx, ny


def run_backstep(config):
    """Backward-facing step on (0,15)x(0,1): parabolic inflow on the upper
    half of the inlet, homogeneous traction outflow, walls elsewhere. The
    step height is S = 1/2 and Re = U D / nu with U = 2/3 the peak inflow
    velocity and D = 1, so nu = 2/(3 Re). Reattachment and top-wall bubble
    positions are reported in step heights (x/S = 2x)."""
    res = config.re or tuple(float(r) for r in range(100, 900, 100))
    spec = config.spec()
    tol = config.tol if config.tol is not None else 1e-6
    report = Report(meta={"scenario": config.scenario, "config": asdict(config)})
    outdir = _prepare_out(config)
    problem, nx, ny = _backstep_problem(config, spec)
    for i, re in enumerate(res):
        nu = 2.0 / (3.0 * re)
        params = config.params(nu)
        try:
            state, info = problem.solve_stationary(
                params, NormStopping(tol), max_iters=config.max_iters,
                relaxation=config.relaxation)
        except PicardDivergenceError:
            # Known-risky at high Re: retry damped.
            state, info = problem.solve_stationary(
                params, NormStopping(tol), max_iters=2 * config.max_iters,
                relaxation=0.7)
        x_r = diagnostics.reattachment_length(problem.disc, state, "bottom")
        bubble = diagnostics.top_wall_bubble(problem.disc, state, "top")
        run_id = f"{config.scenario}-{i:03d}"
        row = _common_row(config, run_id, problem, params, re=re, nx=nx, ny=ny)
        row.update(
            e_div=diagnostics.divergence_error(problem.disc, state.u),
            mass_residual_max=float(np.max(np.abs(
                diagnostics.local_mass_residual(problem.disc, state, params)))),
            kinetic_energy=diagnostics.kinetic_energy(problem.disc, state.u),
            reattachment_x_over_s=(2.0 * x_r) if x_r is not None else "",
            bubble_start_x_over_s=(2.0 * bubble[0]) if bubble else "",
            bubble_end_x_over_s=(2.0 * bubble[1]) if bubble else "",
            iterations=info["iterations"], converged=info["converged"],
            history={"norm": info["history"]},
        )
        report.add_row(**row)
        _maybe_dump(config, outdir, run_id, problem, state)
    _write(report, outdir)
    return report


def random_vertex_forcing(mesh, rng):
    """Uniform random components in [-1, 1] at mesh vertices, interpolated
    with the linear cell basis; components drawn independently."""
    vals = rng.uniform(-1.0, 1.0, size=(mesh.num_vertices, 2))
    return CellVectorField(order=1, coeffs=vals[mesh.cells])


def run_chaotic(config, collect_states=False):
    """Randomly forced inviscid flow in the unit square with free-slip walls.

    Protocol: zero initial velocity; random nodal forcing in the first step
    only; nu = 1e-5 in the first step, zero afterwards; backward Euler for
    the first 5 steps, theta = 1/2 after. The facet pressure is pinned at the
    node nearest the domain center."""
    n_vertices = config.resolutions[0] if config.resolutions else 32
    n = n_vertices - 1
    steps = config.steps
    spec = config.spec()
    report = Report(meta={"scenario": config.scenario, "config": asdict(config)})
    outdir = _prepare_out(config)
    mesh = build_rect_mesh(n, n)
    bcs = BCs(slip=("left", "right", "bottom", "top"),
              pressure=("pin", (0.5, 0.5), 0.0))
    problem = Problem(mesh, spec, bcs)
    all_states = []
    for i, seed in enumerate(config.seeds):
        rng = np.random.default_rng(seed)
        forcing = random_vertex_forcing(mesh, rng)
        state = State.zeros(problem.dofmap)
        ke = [diagnostics.kinetic_energy(problem.disc, state.u)]
        thetas = []
        mom_res = []
        mass_res = []
        states = [state]
        nu_prev = 1e-5
        for step in range(1, steps + 1):
            nu_step = 1e-5 if step == 1 else 0.0
            theta = 1.0 if step <= 5 else 0.5
            f_np1 = forcing if step == 1 else None
            params = config.params(nu_step, theta=theta, dt=config.dt)
            new_state = problem.step(state, params, forcing_n=None,
                                     forcing_np1=f_np1, nu_prev=nu_prev)
            fl = [(1.0 - theta, None), (theta, f_np1)]
            r = diagnostics.local_momentum_residual(
                problem.disc, state, new_state, params, forcing=fl,
                nu_prev=nu_prev)
            mom_res.append(float(np.max(np.abs(r))))
            mass_res.append(float(np.max(np.abs(diagnostics.local_mass_residual(
                problem.disc, new_state, params)))))
            ke.append(diagnostics.kinetic_energy(problem.disc, new_state.u))
            thetas.append(theta)
            nu_prev = nu_step
            state = new_state
            if collect_states:
                states.append(state)
        ke = np.array(ke)
        # Relative KE change per step; monotone decay expected once theta=1/2.
        rel = (ke[1:] - ke[:-1]) / np.where(ke[:-1] > 0, ke[:-1], 1.0)
        cn_steps = [j for j, th in enumerate(thetas) if th == 0.5]
        monotone = bool(all(ke[j + 1] <= ke[j] + 1e-12 for j in cn_steps))
        run_id = f"{config.scenario}-{i:03d}"
        row = _common_row(config, run_id, problem, config.params(0.0),
                          seed=seed, nx=n, ny=n, steps=steps)
        row.update(
            kinetic_energy=float(ke[-1]),
            mass_residual_max=float(np.max(mass_res)),
            momentum_residual_max=float(np.max(mom_res)),
            e_div=diagnostics.divergence_error(problem.disc, state.u),
            iterations=steps, converged=monotone,
            history={"kinetic_energy": ke.tolist(),
                     "relative_change": rel.tolist(),
                     "theta": thetas,
                     "momentum_residual": mom_res,
                     "mass_residual": mass_res},
        )
        report.add_row(**row)
        _maybe_dump(config, outdir, run_id, problem, state)
        if collect_states:
            all_states.append(states)
    _write(report, outdir)
    if collect_states:
        return report, problem, all_states
    return report


def _prepare_out(config):
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _write(report, outdir):
    report.write_csv(Path(outdir) / "report.csv")
    report.write_json(Path(outdir) / "report.json")


RUNNERS = {
    "stokes-mms": run_stokes_mms,
    "kovasznay": run_kovasznay,
    "backstep": run_backstep,
    "chaotic": run_chaotic,
    "custom": run_custom,
}


def run_scenario(config):
    return RUNNERS[config.scenario](config)
