"""Time steppers for the Allen-Cahn equation ``u_t - Delta u + eps^-2 f(u) = 0``.

Every step function has the signature ``step(space, cfg, state) -> AcState``
and advances by ``cfg.step_size(state.n + 1)``.  Implicit schemes are
solved by Newton on the assembled residual of the variational scheme; when
Newton stalls (nonconvex steps) and the scheme has a step energy, the
solver falls back to L-BFGS minimization followed by a Newton polish.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energies as en
from . import potentials as pot
from .errors import ConfigurationError, IndefiniteOperatorError, SolverError
from .fem import FemSpace
from .mesh import check_delaunay
from .solvers import (
    LbfgsConfig,
    NewtonConfig,
    cg,
    symmetric_direct_solver,
    lbfgs_minimize,
    make_preconditioner,
    newton,
)

SCHEMES = (
    "fis", "fis_energymin", "css", "semi_implicit", "stab_semi_implicit",
    "fis_lumped", "fis_lumped_energymin", "css_lumped", "scn", "scn_energymin",
    "mcn", "mcn_energymin", "css_mcn", "bdf2", "css2", "convex_ac2_mcn",
    "convexified_fis",
)
TWO_STEP = ("bdf2", "css2", "convex_ac2_mcn")


@dataclass(frozen=True)
class SchemeConfigAC:
    scheme: str
    epsilon: float
    k: float | tuple = 1e-3
    S: float = 1.0
    delta: float | None = None
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    linear_solver: str = "auto"
    fallback: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scheme", self.scheme.lower())
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown Allen-Cahn scheme {self.scheme!r}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        ks = np.atleast_1d(np.asarray(self.k, dtype=float))
        if ks.size == 0 or np.any(ks <= 0):
            raise ConfigurationError("time steps must be positive")
        if self.S <= 0:
            raise ConfigurationError("stabilization constant S must be positive")
        if self.delta is not None and self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")
        if self.linear_solver not in ("auto", "direct", "cg", "pcg"):
            raise ConfigurationError(f"unknown linear solver {self.linear_solver!r}")
        if self.scheme == "bdf2" and ks.size > 1 and not np.allclose(ks, ks[0]):
            raise ConfigurationError("BDF2 requires a uniform step size")

    def step_size(self, n: int) -> float:
        """Size of step ``n`` (1-based); a schedule repeats its last entry."""
        if np.ndim(self.k) == 0:
            return float(self.k)
        ks = tuple(self.k)
        return float(ks[min(n, len(ks)) - 1])


@dataclass
class AcState:
    u: np.ndarray
    t: float = 0.0
    n: int = 0
    u_prevprev: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def _advance(state, u_new, k, info):
    return AcState(u=u_new, t=state.t + k, n=state.n + 1, u_prevprev=state.u, info=info)


def _linear_solver(space, cfg, k, lumped):
    # "auto": PCG for lumped Jacobians while gamma = k/eps^2 < 1, else direct
    kind = cfg.linear_solver
    if kind == "auto":
        kind = "pcg" if lumped and k < cfg.epsilon**2 else "direct"
    if kind == "direct":
        return symmetric_direct_solver

    use_pcg = kind == "pcg" and lumped and k < cfg.epsilon**2
    pre = make_preconditioner(space, cfg.epsilon, k) if use_pcg else None

    def solve(J, rhs):
        try:
            res = cg(J, rhs, tol=1e-12, precond=pre, maxit=5 * len(rhs))
        except IndefiniteOperatorError:
            return symmetric_direct_solver(J, rhs)
        if not res.converged:
            return symmetric_direct_solver(J, rhs)
        return res.solution, res.iterations

    return solve


def _solve_step(space, cfg, k, residual, jacobian, uprev, lumped=False, energy_ctx=None,
                u0=None):
    """Newton on ``residual``, falling back to energy minimization."""
    norm = lambda r: space.dual_norm(r, lumped)  # noqa: E731
    solve = _linear_solver(space, cfg, k, lumped)
    start = uprev if u0 is None else u0
    try:
        out = newton(residual, jacobian, start, cfg.newton, norm=norm, linear_solve=solve)
        return out.u, {"newton_iters": out.iterations, "linear_iters": out.linear_iterations,
                       "residual": out.residual_norms[-1]}
    except SolverError as exc:
        if not (cfg.fallback and energy_ctx is not None):
            raise
        first = exc
    lb = lbfgs_minimize(
        lambda x: en.step_energy(energy_ctx, x),
        lambda x: en.step_residual(energy_ctx, x),
        uprev, replace(cfg.lbfgs, rtol=max(cfg.lbfgs.rtol, 1e-6)),
        metric_solve=lambda r: space.riesz(r, lumped),
    )
    try:
        out = newton(residual, jacobian, lb.x, cfg.newton, norm=norm, linear_solve=solve)
    except SolverError as exc:
        raise SolverError(
            f"Newton failed ({first}); polish after L-BFGS failed ({exc})",
            iterate=exc.iterate, residual=exc.residual,
        ) from exc
    return out.u, {"newton_iters": out.iterations, "linear_iters": out.linear_iterations,
                   "residual": out.residual_norms[-1], "lbfgs_iters": lb.iterations,
                   "fallback": True}


# ----------------------------------------------------------------------
# first-order schemes


def step_fis(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    M, A = space.M, space.A

    def residual(u):
        return M @ (u - u1) / k + A @ u + space.load(pot.f, u) / eps**2

    def jacobian(u):
        return M / k + A + space.weighted_mass(pot.df, u) / eps**2

    ctx = en.EnergyContext(space, eps, k, u1, en.AC_FIS)
    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, energy_ctx=ctx)
    return _advance(state, u, k, info)


def step_convexified_fis(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    """FIS for ``(1 + delta/eps^2) u_t - Delta u + eps^-2 f(u) = 0``."""
    if cfg.delta is None:
        raise ConfigurationError("convexified_fis needs delta")
    eps, k, u1, delta = cfg.epsilon, cfg.step_size(state.n + 1), state.u, cfg.delta
    M, A = space.M, space.A
    c = (1.0 + delta / eps**2) / k

    def residual(u):
        return c * (M @ (u - u1)) + A @ u + space.load(pot.f, u) / eps**2

    def jacobian(u):
        return c * M + A + space.weighted_mass(pot.df, u) / eps**2

    ctx = en.EnergyContext(space, eps, k, u1, en.AC_CONVEXIFIED, delta=delta)
    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, energy_ctx=ctx)
    return _advance(state, u, k, info)


def step_css(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    M, A = space.M, space.A
    cube = lambda a: a**3  # noqa: E731
    Mu1 = M @ u1

    def residual(u):
        return M @ (u - u1) / k + A @ u + (space.load(cube, u) - Mu1) / eps**2

    def jacobian(u):
        return M / k + A + space.weighted_mass(lambda a: 3 * a * a, u) / eps**2

    ctx = en.EnergyContext(space, eps, k, u1, en.AC_CSS)
    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, energy_ctx=ctx)
    return _advance(state, u, k, info)


def step_semi_implicit(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    lhs = (space.M / k + space.A).tocsc()
    rhs = space.M @ u1 / k - space.load(pot.f, u1) / eps**2
    return _advance(state, spla.spsolve(lhs, rhs), k, {"newton_iters": 0})


def step_stab_semi_implicit(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    c = 1.0 / k + cfg.S / eps**2
    lhs = (c * space.M + space.A).tocsc()
    rhs = c * (space.M @ u1) - space.load(pot.f, u1) / eps**2
    return _advance(state, spla.spsolve(lhs, rhs), k, {"newton_iters": 0})


def _warn_delaunay(space):
    if not check_delaunay(space.mesh).all_passed:
        warnings.warn("mesh violates the Delaunay condition; the discrete maximum "
                      "principle is not guaranteed", RuntimeWarning, stacklevel=3)


def step_fis_lumped(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    _warn_delaunay(space)
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    ML, A = space.ML, space.A

    def residual(u):
        return ML * (u - u1) / k + A @ u + ML * pot.f(u) / eps**2

    def jacobian(u):
        return A + sp.diags(ML / k + ML * pot.df(u) / eps**2)

    ctx = en.EnergyContext(space, eps, k, u1, en.AC_FIS_LUMPED)
    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, lumped=True, energy_ctx=ctx)
    return _advance(state, u, k, info)


def step_css_lumped(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    _warn_delaunay(space)
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    ML, A = space.ML, space.A

    def residual(u):
        return ML * (u - u1) / k + A @ u + ML * (u**3 - u1) / eps**2

    def jacobian(u):
        return A + sp.diags(ML / k + 3 * ML * u * u / eps**2)

    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, lumped=True)
    return _advance(state, u, k, info)


# ----------------------------------------------------------------------
# Crank-Nicolson family


def step_scn(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    M, A = space.M, space.A
    fixed = 0.5 * (A @ u1) + space.load(pot.f, u1) / (2 * eps**2)

    def residual(u):
        return M @ (u - u1) / k + 0.5 * (A @ u) + space.load(pot.f, u) / (2 * eps**2) + fixed

    def jacobian(u):
        return M / k + 0.5 * A + space.weighted_mass(pot.df, u) / (2 * eps**2)

    ctx = en.EnergyContext(space, eps, k, u1, en.AC_SCN)
    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, energy_ctx=ctx)
    return _advance(state, u, k, info)


def step_mcn(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    M, A = space.M, space.A
    Au1 = A @ u1

    def residual(u):
        return (M @ (u - u1) / k + 0.5 * (A @ u + Au1)
                + space.load(pot.secant_f, u, u1) / eps**2)

    def jacobian(u):
        return M / k + 0.5 * A + space.weighted_mass(pot.dsecant_f, u, u1) / eps**2

    ctx = en.EnergyContext(space, eps, k, u1, en.AC_MCN)
    u, info = _solve_step(space, cfg, k, residual, jacobian, u1, energy_ctx=ctx)
    return _advance(state, u, k, info)


def step_css_mcn(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    """Convex-splitting Crank-Nicolson: ``g_plus(u; u1) - g_minus(u1; u1)``."""
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    M, A = space.M, space.A
    Au1 = A @ u1
    explicit = space.load(lambda b: pot.g_minus(b, b), u1)

    def residual(u):
        return (M @ (u - u1) / k + 0.5 * (A @ u + Au1)
                + (space.load(pot.g_plus, u, u1) - explicit) / eps**2)

    def jacobian(u):
        return M / k + 0.5 * A + space.weighted_mass(pot.dg_plus, u, u1) / eps**2

    u, info = _solve_step(space, cfg, k, residual, jacobian, u1)
    return _advance(state, u, k, info)


def _bootstrap(space, cfg, state):
    """First step of a two-step scheme: one modified Crank-Nicolson step."""
    return step_mcn(space, replace(cfg, scheme="mcn"), state)


def step_bdf2(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    if state.u_prevprev is None:
        return _bootstrap(space, cfg, state)
    eps, k, S = cfg.epsilon, cfg.step_size(state.n + 1), cfg.S
    u1, u2 = state.u, state.u_prevprev
    M = space.M
    lhs = (1.5 / k * M + space.A + S / eps**2 * M).tocsc()
    rhs = (M @ (4 * u1 - u2) / (2 * k)
           - space.load(lambda a, b: 2 * pot.f(a) - pot.f(b), u1, u2) / eps**2
           + S / eps**2 * (M @ (2 * u1 - u2)))
    return _advance(state, spla.spsolve(lhs, rhs), k, {"newton_iters": 0})


def step_css2(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    """Second-order convex splitting.

    Nonlinear term ``eps^-2 (g_plus(u; u1) - (3 u1 - u2)/2, v)``.
    """
    if state.u_prevprev is None:
        return _bootstrap(space, cfg, state)
    eps, k = cfg.epsilon, cfg.step_size(state.n + 1)
    u1, u2 = state.u, state.u_prevprev
    M, A = space.M, space.A
    fixed = 0.5 * (A @ u1) - 0.5 * (M @ (3 * u1 - u2)) / eps**2

    def residual(u):
        return M @ (u - u1) / k + 0.5 * (A @ u) + space.load(pot.g_plus, u, u1) / eps**2 + fixed

    def jacobian(u):
        return M / k + 0.5 * A + space.weighted_mass(pot.dg_plus, u, u1) / eps**2

    u, info = _solve_step(space, cfg, k, residual, jacobian, u1)
    return _advance(state, u, k, info)


def step_convex_ac2_mcn(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    """Modified Crank-Nicolson for ``u_t + (delta/eps^2) u_tt - Delta u + eps^-2 f(u) = 0``.

    ``cfg.delta`` defaults to ``k^2 / 2``.
    """
    if state.u_prevprev is None:
        return _bootstrap(space, cfg, state)
    eps, k = cfg.epsilon, cfg.step_size(state.n + 1)
    delta = 0.5 * k * k if cfg.delta is None else cfg.delta
    u1, u2 = state.u, state.u_prevprev
    M, A = space.M, space.A
    c2 = delta / (eps**2 * k * k)
    Au1 = A @ u1

    def residual(u):
        return (M @ (u - u1) / k + c2 * (M @ (u - 2 * u1 + u2)) + 0.5 * (A @ u + Au1)
                + space.load(pot.secant_f, u, u1) / eps**2)

    def jacobian(u):
        return (1.0 / k + c2) * M + 0.5 * A + space.weighted_mass(pot.dsecant_f, u, u1) / eps**2

    u, info = _solve_step(space, cfg, k, residual, jacobian, u1)
    return _advance(state, u, k, info)


# ----------------------------------------------------------------------
# energy minimization


_ENERGYMIN_VARIANTS = (en.AC_FIS, en.AC_SCN, en.AC_MCN, en.AC_FIS_LUMPED, en.AC_CONVEXIFIED)


def minimize_step(space: FemSpace, eps: float, k: float, uprev, variant: str,
                  x0=None, lbfgs: LbfgsConfig | None = None, delta: float = 0.0):
    """L-BFGS minimization of a step energy started from ``x0`` (default ``uprev``)."""
    if variant not in _ENERGYMIN_VARIANTS:
        raise ConfigurationError(f"no Allen-Cahn step energy {variant!r}")
    ctx = en.EnergyContext(space, eps, k, np.asarray(uprev, dtype=float), variant, delta=delta)
    start = ctx.uprev if x0 is None else np.asarray(x0, dtype=float)
    return lbfgs_minimize(
        lambda x: en.step_energy(ctx, x),
        lambda x: en.step_residual(ctx, x),
        start, lbfgs,
        metric_solve=lambda r: space.riesz(r, ctx.lumped),
    )


def step_energymin(space: FemSpace, cfg: SchemeConfigAC, state: AcState,
                   variant: str = en.AC_FIS, x0=None) -> AcState:
    """``u^n = argmin E_n(u; u^{n-1})`` by L-BFGS from ``uprev`` (or ``x0``)."""
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    res = minimize_step(space, eps, k, u1, variant, x0=x0, lbfgs=cfg.lbfgs)
    ctx = en.EnergyContext(space, eps, k, u1, variant)
    e_prev = en.step_energy(ctx, u1)
    info = {"lbfgs_iters": res.iterations, "step_energy": res.energy,
            "grad_norm": res.grad_norm, "lbfgs_converged": res.converged,
            "descent": res.energy <= e_prev}
    return _advance(state, res.x, k, info)


_DISPATCH = {
    "fis": step_fis,
    "css": step_css,
    "semi_implicit": step_semi_implicit,
    "stab_semi_implicit": step_stab_semi_implicit,
    "fis_lumped": step_fis_lumped,
    "css_lumped": step_css_lumped,
    "scn": step_scn,
    "mcn": step_mcn,
    "css_mcn": step_css_mcn,
    "bdf2": step_bdf2,
    "css2": step_css2,
    "convex_ac2_mcn": step_convex_ac2_mcn,
    "convexified_fis": step_convexified_fis,
    "fis_energymin": lambda s, c, st: step_energymin(s, c, st, en.AC_FIS),
    "scn_energymin": lambda s, c, st: step_energymin(s, c, st, en.AC_SCN),
    "mcn_energymin": lambda s, c, st: step_energymin(s, c, st, en.AC_MCN),
    "fis_lumped_energymin": lambda s, c, st: step_energymin(s, c, st, en.AC_FIS_LUMPED),
}


def advance(space: FemSpace, cfg: SchemeConfigAC, state: AcState) -> AcState:
    return _DISPATCH[cfg.scheme](space, cfg, state)


def css_equivalent_step(eps: float, k: float) -> float:
    """FIS step reproducing a CSS step of size ``k``: ``eps^2 k / (k + eps^2)``."""
    return eps**2 * k / (k + eps**2)


def css_mcn_equivalent_step(eps: float, k: float) -> float:
    """MCN step reproducing a CSS-MCN step of size ``k``: ``2 eps^2 k / (k + 2 eps^2)``."""
    return 2 * eps**2 * k / (k + 2 * eps**2)


def recast_gamma(eps, k, u, uprev, S=0.0):
    """Nodal coefficient ``gamma_n`` recasting (stabilized) semi-implicit as FIS."""
    u = np.asarray(u, dtype=float)
    uprev = np.asarray(uprev, dtype=float)
    return k / eps**2 * (1.0 + S - u * u - u * uprev - uprev * uprev)
