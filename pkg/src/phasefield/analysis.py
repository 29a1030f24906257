"""Diagnostics and experiment drivers.

Radius extraction, the time-delay bookkeeping of convex splitting, scheme
equivalence checks, the CG/PCG benchmark and a generic run loop producing
one :class:`StepRecord` per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import energies as en
from . import steppers_ac as ac
from . import steppers_ch as ch
from .config import RunConfig
from .errors import ConfigurationError, SolverError
from .fem import FemSpace
from .mesh import generate_uniform
from .solvers import (
    LbfgsConfig,
    NewtonConfig,
    cg,
    lanczos_extremes,
    pcg_step_operator,
)


@dataclass
class StepRecord:
    n: int
    t: float
    energy: float
    lumped_energy: float | None
    mass: float
    max_norm: float
    radius: float | None
    newton_iters: int | None
    linear_iters: int | None
    lbfgs_iters: int | None
    energy_law_residual: float | None


@dataclass(frozen=True)
class DelayModel:
    """Per-step delay factors of a convex splitting run.

    ``kind='first'`` uses ``eps^2 / (k + eps^2)`` (CSS versus FIS);
    ``kind='mcn'`` uses ``2 eps^2 / (k + 2 eps^2)`` (CSS-MCN versus MCN).
    """
    epsilon: float
    steps: tuple
    kind: str = "first"

    def __post_init__(self):
        if self.kind not in ("first", "mcn"):
            raise ConfigurationError(f"unknown delay kind {self.kind!r}")

    @property
    def factors(self) -> np.ndarray:
        e2 = self.epsilon**2 * (1.0 if self.kind == "first" else 2.0)
        k = np.asarray(self.steps, dtype=float)
        return e2 / (k + e2)

    @property
    def effective_steps(self) -> np.ndarray:
        return self.factors * np.asarray(self.steps, dtype=float)

    @property
    def times(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.steps, dtype=float))

    @property
    def delayed_times(self) -> np.ndarray:
        """``t'_n = sum_{i <= n} delta_i k_i``."""
        return np.cumsum(self.effective_steps)


# ----------------------------------------------------------------------
# radius


def radius_along_axis(space: FemSpace, u, center=(0.0, 0.0)) -> float | None:
    """Zero crossing of ``u`` on the ray ``y = cy, x > cx`` nearest the center.

    Linear interpolation between the two nodes bracketing the sign change;
    ``None`` when ``u`` does not change sign along the ray.
    """
    nodes = space.mesh.nodes
    cx, cy = center
    scale = space.mesh.h
    on = np.flatnonzero((np.abs(nodes[:, 1] - cy) <= 1e-9 * max(scale, 1.0))
                        & (nodes[:, 0] >= cx - 1e-12))
    if len(on) < 2:
        return None
    on = on[np.argsort(nodes[on, 0])]
    x = nodes[on, 0] - cx
    v = np.asarray(u, dtype=float)[on]
    for i in range(len(v) - 1):
        a, b = v[i], v[i + 1]
        if a == 0.0 and i > 0:
            return float(x[i])
        if a * b < 0.0:
            return float(x[i] + (x[i + 1] - x[i]) * a / (a - b))
    return None


def sharp_interface_reference(t: float, R0: float = 0.6) -> float | None:
    """Radius ``sqrt(R0^2 - 2t)`` of a circle under curve-shortening flow."""
    s = R0 * R0 - 2.0 * t
    return math.sqrt(s) if s > 0.0 else None


def vanishing_time(times, radii) -> float:
    """Extrapolate ``R^2 = a - 2 b t`` (least squares) to ``R = 0``."""
    t = np.asarray(times, dtype=float)
    r2 = np.asarray(radii, dtype=float) ** 2
    slope, intercept = np.polyfit(t, r2, 1)
    return float(-intercept / slope)


# ----------------------------------------------------------------------
# monitors


def energy_violations(records, tol: float = 1e-10) -> list[int]:
    """Step indices where the energy increased by more than ``tol`` (relative)."""
    out = []
    for prev, cur in zip(records, records[1:]):
        if cur.energy > prev.energy + tol * max(1.0, abs(prev.energy)):
            out.append(cur.n)
    return out


def mcn_identity_residual_ac(space: FemSpace, eps: float, k: float, u_old, u_new) -> float:
    """``J(u^n) + ||u^n - u^{n-1}||^2 / k - J(u^{n-1})``."""
    d = np.asarray(u_new) - np.asarray(u_old)
    return (en.physical_energy_ac(space, eps, u_new) + float(d @ (space.M @ d)) / k
            - en.physical_energy_ac(space, eps, u_old))


def energy_law_residual_ac(space, eps, k, u_old, u_new, factor=0.5, lumped=False):
    """``J(u^n) + factor ||u^n - u^{n-1}||^2 / k - J(u^{n-1})``; nonpositive when the law holds."""
    d = np.asarray(u_new) - np.asarray(u_old)
    if lumped:
        J = lambda v: en.lumped_energy_ac(space, eps, v)  # noqa: E731
        dist = float(space.ML @ (d * d))
    else:
        J = lambda v: en.physical_energy_ac(space, eps, v)  # noqa: E731
        dist = float(d @ (space.M @ d))
    return J(u_new) + factor * dist / k - J(u_old)


def energy_law_residual_ch(space, eps, k, u_old, u_new, factor=0.5):
    th = space.project(np.asarray(u_new) - np.asarray(u_old))
    return (en.physical_energy_ch(space, eps, u_new) + factor * space.hminus1_norm_sq(th) / k
            - en.physical_energy_ch(space, eps, u_old))


# ----------------------------------------------------------------------
# experiments


def initial_field(space: FemSpace, cfg: RunConfig) -> np.ndarray:
    x, y = space.mesh.nodes.T
    if cfg.initial == "circle":
        d = np.hypot(x - cfg.center[0], y - cfg.center[1]) - cfg.radius
        return np.tanh(d / (math.sqrt(2.0) * cfg.epsilon))
    if cfg.initial == "random":
        rng = np.random.default_rng(cfg.seed)
        return rng.uniform(-cfg.amplitude, cfg.amplitude, space.n)
    data = np.loadtxt(cfg.init_file, delimiter=",", ndmin=2,
                      skiprows=_header_rows(cfg.init_file))
    u = data[:, -1]
    if len(u) != space.n:
        raise ConfigurationError(
            f"init_file has {len(u)} values, mesh has {space.n} nodes")
    return u


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(t) for t in first.split(",")]
        return 0
    except ValueError:
        return 1


def build_stepper(cfg: RunConfig):
    newton_cfg = NewtonConfig(tol=cfg.newton_tol)
    lbfgs_cfg = LbfgsConfig(tol=cfg.lbfgs_tol)
    k = cfg.k[0] if len(cfg.k) == 1 else tuple(cfg.k)
    if cfg.equation == "allen-cahn":
        scheme = ac.SchemeConfigAC(cfg.scheme, cfg.epsilon, k, S=cfg.S, delta=cfg.delta,
                                   newton=newton_cfg, lbfgs=lbfgs_cfg,
                                   linear_solver=cfg.linear_solver)
        return scheme, ac.advance
    scheme = ch.SchemeConfigCH(cfg.scheme, cfg.epsilon, k, delta=cfg.delta,
                               newton=newton_cfg, lbfgs=lbfgs_cfg)
    return scheme, ch.advance


class ExperimentResult(NamedTuple):
    records: list
    snapshots: dict
    failure: str | None
    space: FemSpace


def _law_factor(scheme: str) -> float:
    return 1.0 if scheme.startswith("mcn") else 0.5


def _record(space, cfg, state, prev_u, k, center):
    eps = cfg.epsilon
    u = state.u
    info = state.info
    is_ac = cfg.equation == "allen-cahn"
    if prev_u is None:
        law = None
    elif is_ac:
        law = energy_law_residual_ac(space, eps, k, prev_u, u, _law_factor(cfg.scheme),
                                     lumped=cfg.scheme.startswith("fis_lumped"))
    else:
        law = energy_law_residual_ch(space, eps, k, prev_u, u, _law_factor(cfg.scheme))
    return StepRecord(
        n=state.n, t=state.t,
        energy=(en.physical_energy_ac if is_ac else en.physical_energy_ch)(space, eps, u),
        lumped_energy=en.lumped_energy_ac(space, eps, u) if is_ac else None,
        mass=space.mean(u),
        max_norm=float(np.max(np.abs(u))),
        radius=radius_along_axis(space, u, center),
        newton_iters=info.get("newton_iters"),
        linear_iters=info.get("linear_iters"),
        lbfgs_iters=info.get("lbfgs_iters"),
        energy_law_residual=law,
    )


def run_experiment(cfg: RunConfig, space: FemSpace | None = None,
                   progress: Callable | None = None) -> ExperimentResult:
    """Run ``cfg``; on a solver failure return the partial history."""
    if space is None:
        space = FemSpace(generate_uniform(cfg.nx, cfg.ny, cfg.domain))
    scheme, step = build_stepper(cfg)
    u0 = initial_field(space, cfg)
    state = ac.AcState(u0) if cfg.equation == "allen-cahn" else ch.ChState.initial(space, u0)
    center = cfg.center
    records = [_record(space, cfg, state, None, None, center)]
    snapshots = {}
    pending = sorted(cfg.snapshot_times)
    if pending and pending[0] <= 0.0:
        snapshots[0.0] = u0.copy()
        pending = [t for t in pending if t > 0.0]
    failure = None
    for n in range(1, cfg.steps + 1):
        k = scheme.step_size(n)
        try:
            new = step(space, scheme, state)
        except SolverError as exc:
            failure = f"step {n}: {exc}"
            break
        records.append(_record(space, cfg, new, state.u, k, center))
        while pending and new.t >= pending[0] - 1e-12:
            snapshots[pending.pop(0)] = new.u.copy()
        state = new
        if progress is not None:
            progress(records[-1])
    return ExperimentResult(records, snapshots, failure, space)


# ----------------------------------------------------------------------
# equivalences


def _ac_state(u):
    return ac.AcState(np.asarray(u, dtype=float))


def _pair_css_fis(space, eps, k, u, tol):
    nc = NewtonConfig(tol=tol)
    a = ac.step_css(space, ac.SchemeConfigAC("css", eps, k, newton=nc), _ac_state(u))
    b = ac.step_fis(space, ac.SchemeConfigAC("fis", eps, ac.css_equivalent_step(eps, k),
                                             newton=nc), _ac_state(u))
    return a.u, b.u


def _pair_lumped(space, eps, k, u, tol):
    nc = NewtonConfig(tol=tol)
    a = ac.step_css_lumped(space, ac.SchemeConfigAC("css_lumped", eps, k, newton=nc),
                           _ac_state(u))
    b = ac.step_fis_lumped(space, ac.SchemeConfigAC(
        "fis_lumped", eps, ac.css_equivalent_step(eps, k), newton=nc), _ac_state(u))
    return a.u, b.u


def _pair_css_mcn(space, eps, k, u, tol):
    nc = NewtonConfig(tol=tol)
    a = ac.step_css_mcn(space, ac.SchemeConfigAC("css_mcn", eps, k, newton=nc), _ac_state(u))
    b = ac.step_mcn(space, ac.SchemeConfigAC("mcn", eps, ac.css_mcn_equivalent_step(eps, k),
                                             newton=nc), _ac_state(u))
    return a.u, b.u


def _pair_convexified(space, eps, k, u, tol):
    nc = NewtonConfig(tol=tol)
    a = ac.step_convexified_fis(space, ac.SchemeConfigAC(
        "convexified_fis", eps, k, delta=k, newton=nc), _ac_state(u))
    b = ac.step_css(space, ac.SchemeConfigAC("css", eps, k, newton=nc), _ac_state(u))
    return a.u, b.u


def _pair_css2(space, eps, k, u, tol):
    nc = NewtonConfig(tol=tol)
    first = ac.step_mcn(space, ac.SchemeConfigAC("mcn", eps, k, newton=nc), _ac_state(u))
    a = ac.step_css2(space, ac.SchemeConfigAC("css2", eps, k, newton=nc), first)
    b = ac.step_convex_ac2_mcn(space, ac.SchemeConfigAC(
        "convex_ac2_mcn", eps, k, delta=0.5 * k * k, newton=nc), first)
    return a.u, b.u


def _pair_css_ch(space, eps, k, u, tol):
    nc = NewtonConfig(tol=tol)
    st = ch.ChState.initial(space, u)
    a = ch.step_css_ch(space, ch.SchemeConfigCH("css", eps, k, newton=nc), st)
    b = ch.step_perturbed_fis_ch(space, ch.SchemeConfigCH(
        "perturbed_fis", eps, k, delta=k, newton=nc), st)
    return a.u, b.u


EQUIVALENCE_PAIRS = {
    "css~fis": _pair_css_fis,
    "css_lumped~fis_lumped": _pair_lumped,
    "css_mcn~mcn": _pair_css_mcn,
    "convexified_fis~css": _pair_convexified,
    "css2~convex_ac2_mcn": _pair_css2,
    "css_ch~perturbed_fis_ch": _pair_css_ch,
}


class EquivalenceReport(NamedTuple):
    max_diff: dict
    threshold: float

    @property
    def passed(self) -> dict:
        return {name: d <= self.threshold for name, d in self.max_diff.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


def equivalence_report(space: FemSpace, eps: float, pairs=None, trials: int = 3,
                       steps=None, seed: int = 0, threshold: float = 1e-9,
                       newton_tol: float = 1e-12, states=None) -> EquivalenceReport:
    """Largest nodal discrepancy of each scheme pair over random states and step sizes.

    ``steps`` defaults to ``(eps^2, 10 eps^2, 100 eps^2)``; CH pairs use
    ``(eps^3, 10 eps^3, 100 eps^3)``.  States are ``trials`` seeded uniform
    fields on ``[-1, 1]`` unless ``states`` is given.
    """
    names = list(EQUIVALENCE_PAIRS) if pairs is None else list(pairs)
    rng = np.random.default_rng(seed)
    if states is None:
        states = [rng.uniform(-1.0, 1.0, space.n) for _ in range(trials)]
    out = {}
    for name in names:
        fn = EQUIVALENCE_PAIRS[name]
        scale = eps**3 if name.endswith("_ch") else eps**2
        ks = steps if steps is not None else (scale, 10 * scale, 100 * scale)
        worst = 0.0
        for u in states:
            for k in ks:
                a, b = fn(space, eps, k, u, newton_tol)
                worst = max(worst, float(np.max(np.abs(a - b))))
        out[name] = worst
    return EquivalenceReport(out, threshold)


def css_trajectory_equivalence(space: FemSpace, eps: float, steps, u0,
                               newton_tol: float = 1e-12) -> float:
    """Max nodal gap between a CSS run and an FIS run with the delayed steps ``k'``."""
    nc = NewtonConfig(tol=newton_tol)
    delay = DelayModel(eps, tuple(steps))
    css_cfg = ac.SchemeConfigAC("css", eps, tuple(steps), newton=nc)
    fis_cfg = ac.SchemeConfigAC("fis", eps, tuple(delay.effective_steps), newton=nc)
    a = b = _ac_state(u0)
    worst = 0.0
    for _ in steps:
        a = ac.step_css(space, css_cfg, a)
        b = ac.step_fis(space, fis_cfg, b)
        worst = max(worst, float(np.max(np.abs(a.u - b.u))))
    return worst


# ----------------------------------------------------------------------
# CG / PCG benchmark


class BenchRow(NamedTuple):
    dof: int
    cg_iters: int
    pcg_iters: int
    lanczos_min: float
    lanczos_max: float


def tanh_circle(space: FemSpace, eps: float, radius: float, center=(0.0, 0.0)) -> np.ndarray:
    x, y = space.mesh.nodes.T
    return np.tanh((np.hypot(x - center[0], y - center[1]) - radius) / (math.sqrt(2.0) * eps))


def precond_benchmark(levels, eps: float, k: float, rect=(0.0, 0.0, 1.0, 1.0),
                      state: Callable | None = None, tol: float = 1e-8, seed: int = 0,
                      lanczos_steps: int = 60) -> list[BenchRow]:
    """CG and PCG iteration counts for the lumped Newton linearization.

    For each ``nx`` in ``levels`` the operator
    ``A + diag(ML / k + ML (3u^2 - 1) / eps^2)`` is built at ``state(space)``
    (default: tanh circle of radius 0.17 centered at the origin), and the
    system with a seeded random right-hand side is solved from zero to a
    relative residual ``tol``.  The Lanczos columns bound the spectrum of
    the preconditioned operator.
    """
    state = state or (lambda sp_: tanh_circle(sp_, eps, 0.17))
    rows = []
    for nx in levels:
        space = FemSpace(generate_uniform(nx, nx, rect))
        u = np.clip(state(space), -1.0, 1.0)
        L, pre = pcg_step_operator(space, eps, k, u)
        b = np.random.default_rng(seed).standard_normal(space.n)
        plain = cg(L, b, tol=tol, maxit=10 * space.n)
        prec = cg(L, b, tol=tol, maxit=10 * space.n, precond=pre)
        lo, hi = lanczos_extremes(lambda v: L @ v, pre, space.n,
                                  steps=min(lanczos_steps, space.n), seed=seed)
        rows.append(BenchRow(space.n, plain.iterations, prec.iterations, lo, hi))
    return rows


def format_bench_table(rows) -> str:
    lines = [f"{'DOF':>8} {'CG':>6} {'PCG':>6} {'lambda_min':>12} {'lambda_max':>12}"]
    for r in rows:
        lines.append(f"{r.dof:>8d} {r.cg_iters:>6d} {r.pcg_iters:>6d} "
                     f"{r.lanczos_min:>12.6f} {r.lanczos_max:>12.6f}")
    return "\n".join(lines)


# ----------------------------------------------------------------------
# multi-start


class MultiStartResult(NamedTuple):
    energies: list          # step energies, index 0 is the uprev start
    solutions: list
    distinct: int
    uprev_is_lowest: bool


def multistart_step(space: FemSpace, eps: float, k: float, uprev, restarts: int = 10,
                    seed: int = 0, variant: str = en.AC_FIS, lbfgs: LbfgsConfig | None = None,
                    distinct_tol: float = 1e-3, amplitude: float = 0.1) -> MultiStartResult:
    """Minimize one AC step energy from ``uprev`` and from seeded random starts.

    The random starts are uniform on ``[-amplitude, amplitude]``.
    """
    rng = np.random.default_rng(seed)
    starts = [np.asarray(uprev, dtype=float)] + [
        rng.uniform(-amplitude, amplitude, space.n) for _ in range(restarts)]
    energies, sols = [], []
    for x0 in starts:
        res = ac.minimize_step(space, eps, k, uprev, variant, x0=x0, lbfgs=lbfgs)
        energies.append(res.energy)
        sols.append(res.x)
    reps = []
    for x in sols:
        if all(np.max(np.abs(x - r)) > distinct_tol for r in reps):
            reps.append(x)
    lowest = energies[0] <= min(energies) + 1e-10 * max(1.0, abs(energies[0]))
    return MultiStartResult(energies, sols, len(reps), lowest)


__all__ = [
    "StepRecord", "DelayModel", "radius_along_axis", "sharp_interface_reference",
    "vanishing_time", "energy_violations", "run_experiment", "equivalence_report",
    "css_trajectory_equivalence", "precond_benchmark", "format_bench_table",
    "multistart_step", "EQUIVALENCE_PAIRS", "ExperimentResult", "BenchRow",
    "initial_field", "tanh_circle", "mcn_identity_residual_ac",
    "energy_law_residual_ac", "energy_law_residual_ch",
]

