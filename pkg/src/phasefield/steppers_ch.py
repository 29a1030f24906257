"""Time steppers for the Cahn-Hilliard equation in mixed form.

The scheme for the increment ``theta = u^n - u^{n-1}`` reads

    (theta / k, eta) + (grad w, grad eta) = 0
    (w, v) = eps (grad ubar, grad v) + eps^-1 (phi(u^n, u^{n-1}), v)

with a scheme-dependent gradient argument ``ubar`` and nonlinearity
``phi``.  Eliminating ``w`` leaves ``N(u) - M z / k = lambda M 1`` with
``z = Delta_h^{-1} theta`` and a scalar multiplier ``lambda`` (the mean of
``w``).  Newton is applied to the sparse system in ``(theta, z, lambda, mu)``
so that no inverse Laplacian is ever formed densely and indefinite
(nonconvex) steps are still solvable.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energies as en
from . import potentials as pot
from .errors import ConfigurationError, SolverError
from .fem import FemSpace
from .solvers import LbfgsConfig, NewtonConfig, lbfgs_minimize, newton

SCHEMES = (
    "fis", "css", "mcn", "convexified_fis", "perturbed_fis",
    "fis_energymin", "mcn_energymin", "convexified_energymin",
)


@dataclass(frozen=True)
class SchemeConfigCH:
    scheme: str
    epsilon: float
    k: float | tuple = 1e-4
    delta: float | None = None
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    fallback: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scheme", self.scheme.lower())
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown Cahn-Hilliard scheme {self.scheme!r}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        ks = np.atleast_1d(np.asarray(self.k, dtype=float))
        if ks.size == 0 or np.any(ks <= 0):
            raise ConfigurationError("time steps must be positive")
        if self.delta is not None and self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")

    def step_size(self, n: int) -> float:
        if np.ndim(self.k) == 0:
            return float(self.k)
        ks = tuple(self.k)
        return float(ks[min(n, len(ks)) - 1])


@dataclass
class ChState:
    u: np.ndarray
    w: np.ndarray | None = None
    t: float = 0.0
    n: int = 0
    initial_mass: float | None = None
    info: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, space: FemSpace, u0) -> "ChState":
        u0 = np.asarray(u0, dtype=float)
        return cls(u=u0, initial_mass=space.mean(u0))


def _advance(space, state, u, w, k, info):
    mass = state.initial_mass if state.initial_mass is not None else space.mean(state.u)
    return ChState(u=u, w=w, t=state.t + k, n=state.n + 1, initial_mass=mass, info=info)


# ----------------------------------------------------------------------
# reduced Newton in (theta, z, lambda, mu)


@dataclass(frozen=True)
class _Scheme:
    """``N(u)`` and its Jacobian ``K(u)``; ``c`` multiplies ``M z``."""
    N: callable
    K: callable
    c: float
    variant: str | None = None
    delta: float = 0.0


def _mixed_matrix(space, K, c):
    m = sp.csr_matrix(space.mass_ones[:, None])
    return sp.bmat(
        [[K, -c * space.M, m, None],
         [space.M, space.A, None, m],
         [m.T, None, None, None],
         [None, m.T, None, None]],
        format="csc",
    )


def _solve_reduced(space, scheme, u1, cfg, theta0=None):
    n = space.n
    m = space.mass_ones

    def unpack(X):
        return X[:n], X[n:2 * n], X[2 * n], X[2 * n + 1]

    def residual(X):
        th, z, lam, mu = unpack(X)
        r1 = scheme.N(u1 + th) - scheme.c * (space.M @ z) + lam * m
        r2 = space.M @ th + space.A @ z + mu * m
        return np.concatenate([r1, r2, [m @ th, m @ z]])

    def jacobian(X):
        return _mixed_matrix(space, scheme.K(u1 + unpack(X)[0]), scheme.c)

    def norm(r):
        return (space.dual_norm(r[:n]) + space.dual_norm(r[n:2 * n])
                + abs(r[2 * n]) + abs(r[2 * n + 1]))

    th = np.zeros(n) if theta0 is None else space.project(theta0)
    z = space.inverse_laplacian(th, check=False)
    r1 = scheme.N(u1 + th) - scheme.c * (space.M @ z)
    X0 = np.concatenate([th, z, [-r1.sum() / space.volume, 0.0]])
    out = newton(residual, jacobian, X0, cfg, norm=norm)
    th, z, lam, _ = unpack(out.u)
    # w = z / k + mean(w); lambda carries minus that mean
    w = scheme.c * z - lam
    return th, w, out


def _fis_scheme(space, eps, k, u1, delta=0.0):
    def N(u):
        r = eps * (space.A @ u) + space.load(pot.f, u) / eps
        if delta:
            r = r + delta / (k * eps) * (space.M @ (u - u1))
        return r

    def K(u):
        J = eps * space.A + space.weighted_mass(pot.df, u) / eps
        return J + delta / (k * eps) * space.M if delta else J

    variant = en.CH_CONVEXIFIED if delta else en.CH_FIS
    return _Scheme(N, K, 1.0 / k, variant, delta)


def _css_scheme(space, eps, k, u1):
    Mu1 = space.M @ u1

    def N(u):
        return eps * (space.A @ u) + (space.load(lambda a: a**3, u) - Mu1) / eps

    def K(u):
        return eps * space.A + space.weighted_mass(lambda a: 3 * a * a, u) / eps

    # CSS is the convexified FIS with delta = k
    return _Scheme(N, K, 1.0 / k, en.CH_CONVEXIFIED, k)


def _mcn_scheme(space, eps, k, u1):
    Au1 = space.A @ u1

    def N(u):
        return 0.5 * eps * (space.A @ u + Au1) + space.load(pot.secant_f, u, u1) / eps

    def K(u):
        return 0.5 * eps * space.A + space.weighted_mass(pot.dsecant_f, u, u1) / eps

    return _Scheme(N, K, 1.0 / k, en.CH_MCN)


def _energy_metric(space, eps, k):
    """Riesz map of the step Hessian with ``f'`` frozen at 2 (SPD on zero-mean)."""
    K = eps * space.A + (2.0 / eps) * space.M
    lu = spla.splu(_mixed_matrix(space, K, 1.0 / k))
    n = space.n

    def solve(r):
        r = space.project_dual(np.asarray(r, dtype=float))
        return lu.solve(np.concatenate([r, np.zeros(n + 2)]))[:n]

    return solve


def _minimize(space, eps, k, u1, variant, delta, lbfgs, theta0=None):
    ctx = en.EnergyContext(space, eps, k, u1, variant, delta=delta)
    start = np.zeros(space.n) if theta0 is None else space.project(theta0)
    return lbfgs_minimize(
        lambda th: en.step_energy(ctx, th),
        lambda th: space.project_dual(en.step_residual(ctx, th)),
        start, lbfgs,
        metric_solve=_energy_metric(space, eps, k),
        project=space.project,
    )


def _run(space, cfg, state, scheme):
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    try:
        th, w, out = _solve_reduced(space, scheme, u1, cfg.newton)
        info = {"newton_iters": out.iterations, "residual": out.residual_norms[-1]}
    except SolverError as exc:
        if not (cfg.fallback and scheme.variant is not None):
            raise
        lb = _minimize(space, eps, k, u1, scheme.variant, scheme.delta,
                       replace(cfg.lbfgs, rtol=max(cfg.lbfgs.rtol, 1e-6)))
        try:
            th, w, out = _solve_reduced(space, scheme, u1, cfg.newton, theta0=lb.x)
        except SolverError as exc2:
            raise SolverError(f"Newton failed ({exc}); polish after L-BFGS failed ({exc2})",
                              iterate=exc2.iterate, residual=exc2.residual) from exc2
        info = {"newton_iters": out.iterations, "residual": out.residual_norms[-1],
                "lbfgs_iters": lb.iterations, "fallback": True}
    info["theta_mean"] = space.mean(th)
    return _advance(space, state, u1 + th, w, k, info)


def step_fis_ch(space: FemSpace, cfg: SchemeConfigCH, state: ChState) -> ChState:
    k = cfg.step_size(state.n + 1)
    return _run(space, cfg, state, _fis_scheme(space, cfg.epsilon, k, state.u))


def step_css_ch(space: FemSpace, cfg: SchemeConfigCH, state: ChState) -> ChState:
    k = cfg.step_size(state.n + 1)
    return _run(space, cfg, state, _css_scheme(space, cfg.epsilon, k, state.u))


def step_mcn_ch(space: FemSpace, cfg: SchemeConfigCH, state: ChState) -> ChState:
    k = cfg.step_size(state.n + 1)
    return _run(space, cfg, state, _mcn_scheme(space, cfg.epsilon, k, state.u))


def step_convexified_fis_ch(space: FemSpace, cfg: SchemeConfigCH, state: ChState) -> ChState:
    """FIS with the extra ``delta / (k eps) (theta, v)`` term in the potential equation."""
    if cfg.delta is None:
        raise ConfigurationError("convexified_fis needs delta")
    k = cfg.step_size(state.n + 1)
    return _run(space, cfg, state, _fis_scheme(space, cfg.epsilon, k, state.u, cfg.delta))


def step_perturbed_fis_ch(space: FemSpace, cfg: SchemeConfigCH, state: ChState) -> ChState:
    """FIS of ``(1 - (delta/eps) Delta) u_t + Delta(eps Delta u - eps^-1 f(u)) = 0``.

    Solved as the full coupled system in ``(u, w)``; ``delta`` defaults to
    ``k``.  The returned ``w`` is the physical potential
    ``-eps Delta u + eps^-1 f(u)``.
    """
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    delta = k if cfg.delta is None else cfg.delta
    M, A, n = space.M, space.A, space.n
    flux = M / k + delta / (eps * k) * A

    def residual(X):
        u, w = X[:n], X[n:]
        r1 = flux @ (u - u1) + A @ w
        r2 = M @ w - eps * (A @ u) - space.load(pot.f, u) / eps
        return np.concatenate([r1, r2])

    def jacobian(X):
        K = eps * A + space.weighted_mass(pot.df, X[:n]) / eps
        return sp.bmat([[flux, A], [-K, M]], format="csc")

    def norm(r):
        return space.dual_norm(r[:n]) + space.dual_norm(r[n:])

    w0 = space.mass_solve(eps * (A @ u1) + space.load(pot.f, u1) / eps)
    out = newton(residual, jacobian, np.concatenate([u1, w0]), cfg.newton, norm=norm)
    u, w = out.u[:n], out.u[n:]
    info = {"newton_iters": out.iterations, "residual": out.residual_norms[-1]}
    return _advance(space, state, u, w, k, info)


def step_energymin_ch(space: FemSpace, cfg: SchemeConfigCH, state: ChState,
                      variant: str = en.CH_FIS, theta0=None) -> ChState:
    """``theta = argmin E_n(theta)`` over zero-mean fields; ``u^n = u^{n-1} + theta``.

    ``info['energy_law']`` records whether
    ``J(u^n) + ||grad Delta_h^{-1} theta||^2 / (2k) <= J(u^{n-1})``.
    """
    if variant not in en.CH_VARIANTS:
        raise ConfigurationError(f"no Cahn-Hilliard step energy {variant!r}")
    eps, k, u1 = cfg.epsilon, cfg.step_size(state.n + 1), state.u
    delta = 0.0
    if variant == en.CH_CONVEXIFIED:
        if cfg.delta is None:
            raise ConfigurationError("the convexified variant needs delta")
        delta = cfg.delta
    res = _minimize(space, eps, k, u1, variant, delta, cfg.lbfgs, theta0)
    th = res.x
    u = u1 + th
    w = space.mass_solve(eps * (space.A @ u) + space.load(pot.f, u) / eps)
    lhs = en.physical_energy_ch(space, eps, u) + space.hminus1_norm_sq(th) / (2 * k)
    info = {"lbfgs_iters": res.iterations, "step_energy": res.energy,
            "grad_norm": res.grad_norm, "lbfgs_converged": res.converged,
            "energy_law": lhs <= en.physical_energy_ch(space, eps, u1) + 1e-12,
            "theta_mean": space.mean(th)}
    return _advance(space, state, u, w, k, info)


def minimize_step_ch(space: FemSpace, eps: float, k: float, uprev, variant: str,
                     theta0=None, lbfgs: LbfgsConfig | None = None, delta: float = 0.0):
    """L-BFGS on a CH step energy; returns the :class:`LbfgsResult` for ``theta``."""
    return _minimize(space, eps, k, np.asarray(uprev, dtype=float), variant, delta,
                     lbfgs, theta0)


_DISPATCH = {
    "fis": step_fis_ch,
    "css": step_css_ch,
    "mcn": step_mcn_ch,
    "convexified_fis": step_convexified_fis_ch,
    "perturbed_fis": step_perturbed_fis_ch,
    "fis_energymin": lambda s, c, st: step_energymin_ch(s, c, st, en.CH_FIS),
    "mcn_energymin": lambda s, c, st: step_energymin_ch(s, c, st, en.CH_MCN),
    "convexified_energymin": lambda s, c, st: step_energymin_ch(s, c, st, en.CH_CONVEXIFIED),
}


def advance(space: FemSpace, cfg: SchemeConfigCH, state: ChState) -> ChState:
    return _DISPATCH[cfg.scheme](space, cfg, state)


def mcn_energy_identity_residual(space: FemSpace, eps: float, k: float, u_old, u_new) -> float:
    """``J(u^n) + ||grad Delta_h^{-1}(u^n - u^{n-1})||^2 / k - J(u^{n-1})``."""
    th = space.project(np.asarray(u_new) - np.asarray(u_old))
    return (en.physical_energy_ch(space, eps, u_new) + space.hminus1_norm_sq(th) / k
            - en.physical_energy_ch(space, eps, u_old))
