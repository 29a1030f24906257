"""Linear and nonlinear solvers used by the time steppers.

* :func:`cg` - conjugate gradients with optional preconditioner and
  zero-mean projection.
* :func:`pcg_step_operator` - Newton linearization of the lumped fully
  implicit Allen-Cahn step together with the shifted Poisson
  preconditioner ``B = ((1 - gamma)/k * ML + A)^{-1}``, ``gamma = k/eps^2``.
* :func:`newton` - damped Newton with residual backtracking.
* :func:`lbfgs_minimize` - L-BFGS with Armijo backtracking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConfigurationError,
    IndefiniteOperatorError,
    LineSearchError,
    NonconvexStepError,
    SolverError,
)

__all__ = [
    "LinearSolveResult",
    "NewtonConfig",
    "NewtonResult",
    "LbfgsConfig",
    "LbfgsResult",
    "Preconditioner",
    "cg",
    "pcg_step_operator",
    "direct_solver",
    "symmetric_direct_solver",
    "newton",
    "lbfgs_minimize",
    "lanczos_extremes",
]


def _as_apply(op):
    if callable(op):
        return op
    return lambda x: op @ x


@dataclass
class LinearSolveResult:
    solution: np.ndarray
    iterations: int
    final_residual: float
    converged: bool


def cg(apply_A, b, tol=1e-10, maxit=None, precond=None, project=None, x0=None,
       raise_on_fail=False) -> LinearSolveResult:
    """Preconditioned conjugate gradients.

    The stopping test is on the relative preconditioned residual
    ``sqrt(r^T B r) / sqrt(b^T B b)`` (the Euclidean one when ``precond`` is
    None).  ``project`` is applied to every preconditioned residual, which
    confines the iterates to a subspace such as the zero-mean fields of a
    pure Neumann problem; ``b`` must then be consistent (orthogonal to the
    kernel).
    """
    apply_A = _as_apply(apply_A)
    apply_B = _as_apply(precond) if precond is not None else (lambda r: r)
    proj = project if project is not None else (lambda v: v)
    b = np.asarray(b, dtype=float)
    n = b.size
    maxit = 10 * n if maxit is None else maxit

    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = proj(apply_B(r))
    rz = float(r @ z)
    bb = float(b @ proj(apply_B(b)))
    if bb <= 0.0:
        return LinearSolveResult(np.zeros(n), 0, 0.0, True)
    res = np.sqrt(max(rz, 0.0) / bb)
    if res <= tol:
        return LinearSolveResult(x, 0, res, True)
    p = z.copy()
    for it in range(1, maxit + 1):
        Ap = apply_A(p)
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise IndefiniteOperatorError(
                f"nonpositive curvature p^T A p = {curv:.3e} at iteration {it}",
                iterate=x, residual=res,
            )
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        z = proj(apply_B(r))
        rz_new = float(r @ z)
        res = np.sqrt(max(rz_new, 0.0) / bb)
        if res <= tol:
            return LinearSolveResult(x, it, res, True)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if raise_on_fail:
        raise SolverError(f"CG did not converge in {maxit} iterations", iterate=x, residual=res)
    return LinearSolveResult(x, maxit, res, False)


@dataclass
class Preconditioner:
    """Exact application of ``((1 - gamma)/k * ML + A)^{-1}``."""

    gamma: float
    k: float
    matrix: sp.csc_matrix
    _lu: object = field(repr=False, default=None)

    def __post_init__(self):
        if self._lu is None:
            self._lu = spla.splu(self.matrix.tocsc())

    def __call__(self, r):
        return self._lu.solve(np.asarray(r, dtype=float))

    @property
    def kappa_bound(self) -> float:
        return (1.0 + 2.0 * self.gamma) / (1.0 - self.gamma)


_PRECOND_CACHE: dict = {}


def make_preconditioner(space, eps, k) -> Preconditioner:
    gamma = k / eps**2
    if gamma >= 1.0:
        raise ConfigurationError(
            f"gamma = k/eps^2 = {gamma:.3g} >= 1: the shifted Poisson preconditioner is not"
            " positive definite; use an energy-minimization stepper instead"
        )
    key = (id(space), float(k), float(gamma))
    hit = _PRECOND_CACHE.get(key)
    if hit is not None and hit[0] is space:
        return hit[1]
    B = (sp.diags((1.0 - gamma) / k * space.ML) + space.A).tocsc()
    pre = Preconditioner(gamma=gamma, k=k, matrix=B)
    if len(_PRECOND_CACHE) > 16:
        _PRECOND_CACHE.clear()
    _PRECOND_CACHE[key] = (space, pre)
    return pre


def pcg_step_operator(space, eps, k, u_state):
    """Jacobian of the lumped FIS step at ``u_state`` and its preconditioner.

    ``L = ML/k + A + eps^-2 ML diag(3u^2 - 1)``.  For ``|u| <= 1`` the
    generalized spectrum of ``(L, B^{-1})`` lies in
    ``[1, (1 + 2 gamma)/(1 - gamma)]``.
    """
    u = np.asarray(u_state, dtype=float)
    diag = space.ML / k + space.ML * (3.0 * u * u - 1.0) / eps**2
    L = (space.A + sp.diags(diag)).tocsr()
    return L, make_preconditioner(space, eps, k)


def direct_solver(matrix, rhs):
    """Sparse LU solve; returns ``(solution, 0)``.

    COLAMD keeps the fill bounded when partial pivoting kicks in, which
    the bordered mixed systems need at small time steps.
    """
    lu = spla.splu(sp.csc_matrix(matrix), permc_spec="COLAMD")
    return lu.solve(np.asarray(rhs, dtype=float)), 0


def symmetric_direct_solver(matrix, rhs):
    """Sparse LU with symmetric pivoting preference, for symmetric matrices."""
    lu = spla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A",
                   options={"SymmetricMode": True})
    return lu.solve(np.asarray(rhs, dtype=float)), 0


def lanczos_extremes(apply_A, apply_B, n, steps=50, seed=0):
    """Extreme Ritz values of ``B A`` (``A``, ``B`` symmetric, ``B`` SPD).

    Runs ``steps`` of the preconditioned Lanczos process in the
    ``B^{-1}`` inner product with full reorthogonalization.
    """
    apply_A = _as_apply(apply_A)
    apply_B = _as_apply(apply_B)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(n)
    z = apply_B(r)
    beta = np.sqrt(r @ z)
    V, Z = [], []
    alphas, betas = [], []
    v_prev = np.zeros(n)
    z_prev = np.zeros(n)
    beta_prev = 0.0
    for _ in range(min(steps, n)):
        v = r / beta
        zq = z / beta
        V.append(v)
        Z.append(zq)
        w = apply_A(zq) - beta_prev * v_prev
        alpha = float(w @ zq)
        w = w - alpha * v
        # reorthogonalize in the B-inner product
        for vj, zj in zip(V, Z):
            w = w - (w @ zj) * vj
        z_new = apply_B(w)
        beta_new = np.sqrt(max(float(w @ z_new), 0.0))
        alphas.append(alpha)
        if beta_new < 1e-12 * abs(alpha):
            break
        betas.append(beta_new)
        v_prev, z_prev, beta_prev = v, zq, beta_new
        r, z, beta = w, z_new, beta_new
    m = len(alphas)
    T = np.diag(alphas) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
    ev = np.linalg.eigvalsh(T)
    return float(ev[0]), float(ev[-1])


# ----------------------------------------------------------------------
# Newton


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    step_tol: float = 1e-14
    max_iter: int = 50
    max_halvings: int = 30

    def __post_init__(self):
        if self.tol <= 0 or self.step_tol <= 0 or self.max_iter < 1:
            raise ConfigurationError("Newton tolerances and max_iter must be positive")


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual_norms: list
    linear_iterations: int
    converged: bool


def newton(residual: Callable, jacobian: Callable, u0, cfg: NewtonConfig | None = None,
           norm: Callable | None = None, linear_solve: Callable | None = None) -> NewtonResult:
    """Damped Newton iteration for ``residual(u) = 0``.

    ``jacobian(u)`` returns whatever ``linear_solve(J, rhs) -> (du, iters)``
    accepts (a sparse matrix for the default direct solver).  The step is
    halved until ``norm(residual)`` decreases, at most ``cfg.max_halvings``
    times, otherwise :class:`NonconvexStepError` is raised with the last
    iterate.  Convergence: ``norm(r) <= tol`` or a full step whose max-norm
    is below ``step_tol * max(1, |u|_inf)``.
    """
    cfg = cfg or NewtonConfig()
    norm = norm or (lambda r: float(np.linalg.norm(r)))
    linear_solve = linear_solve or direct_solver
    u = np.array(u0, dtype=float)
    r = residual(u)
    rn = norm(r)
    history = [rn]
    lin_total = 0
    if rn <= cfg.tol:
        return NewtonResult(u, 0, history, 0, True)
    for it in range(1, cfg.max_iter + 1):
        du, lin_it = linear_solve(jacobian(u), -r)
        lin_total += lin_it
        if not np.all(np.isfinite(du)):
            raise NonconvexStepError("singular Newton system", iterate=u, residual=rn)
        small_step = np.max(np.abs(du)) <= cfg.step_tol * max(1.0, np.max(np.abs(u)))
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            u_try = u + t * du
            r_try = residual(u_try)
            rn_try = norm(r_try)
            if rn_try < rn or (small_step and t == 1.0):
                break
            t *= 0.5
        else:
            if np.max(np.abs(du)) <= 1e-11 * max(1.0, np.max(np.abs(u))):
                # residual at its roundoff floor; the correction is negligible
                return NewtonResult(u, it, history, lin_total, True)
            raise NonconvexStepError(
                f"residual did not decrease after {cfg.max_halvings} halvings "
                f"(iteration {it}, |r| = {rn:.3e})",
                iterate=u, residual=rn,
            )
        u, r, rn = u_try, r_try, rn_try
        history.append(rn)
        if rn <= cfg.tol or small_step:
            return NewtonResult(u, it, history, lin_total, True)
    raise SolverError(
        f"Newton did not converge in {cfg.max_iter} iterations (|r| = {rn:.3e})",
        iterate=u, residual=rn,
    )


# ----------------------------------------------------------------------
# L-BFGS


@dataclass
class LbfgsConfig:
    memory: int = 10
    tol: float = 1e-8
    rtol: float = 0.0
    max_iter: int = 5000
    c1: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if self.memory < 1:
            raise ConfigurationError("L-BFGS memory must be >= 1")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigurationError("L-BFGS tolerance and max_iter must be positive")


@dataclass
class LbfgsResult:
    x: np.ndarray
    energy: float
    energies: list
    grad_norm: float
    iterations: int
    converged: bool


def lbfgs_minimize(fun: Callable, grad: Callable, x0, cfg: LbfgsConfig | None = None,
                   metric_solve: Callable | None = None, project: Callable | None = None,
                   raise_on_fail: bool = False) -> LbfgsResult:
    """Minimize ``fun`` by L-BFGS with an Armijo backtracking line search.

    ``grad`` returns the assembled (dual) gradient.  ``metric_solve`` maps a
    dual vector to its Riesz representative in the chosen inner product
    (default: identity); it serves as the initial inverse Hessian and
    defines the stopping norm ``sqrt(g^T metric_solve(g))``.  ``project``
    restricts iterates to a subspace (applied to search directions).
    """
    cfg = cfg or LbfgsConfig()
    H0 = metric_solve or (lambda g: g)
    proj = project or (lambda v: v)
    x = np.array(x0, dtype=float)
    fx = float(fun(x))
    g = grad(x)
    Hg = proj(H0(g))
    gnorm = np.sqrt(max(float(g @ Hg), 0.0))
    target = max(cfg.tol, cfg.rtol * gnorm)
    energies = [fx]
    S, Y, RHO = [], [], []
    it = 0
    while gnorm > target and it < cfg.max_iter:
        it += 1
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        d = proj(H0(q))
        if S:
            s, y = S[-1], Y[-1]
            d *= (s @ y) / (y @ proj(H0(y)))
        for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * (y @ d)
            d += (a - b) * s
        d = -proj(d)
        slope = float(g @ d)
        if slope >= 0.0:
            # lost descent: restart from steepest descent in the metric
            S.clear(), Y.clear(), RHO.clear()
            d = -Hg
            slope = float(g @ d)
        t = 1.0
        if not S:
            # first step: scale so the step is at most unit size
            t = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        # Armijo, or the approximate Wolfe test once energy differences
        # reach roundoff (Hager & Zhang)
        noise = 1e-13 * max(abs(fx), 1.0)
        g_new = None
        for _ in range(cfg.max_backtracks):
            x_new = x + t * d
            f_new = float(fun(x_new))
            if f_new <= fx + cfg.c1 * t * slope:
                break
            if f_new <= fx + noise:
                g_new = grad(x_new)
                if float(g_new @ d) <= (1.0 - 2.0 * cfg.c1) * -slope:
                    break
                g_new = None
            t *= 0.5
        else:
            if raise_on_fail:
                raise LineSearchError(
                    f"line search failed at iteration {it}", iterate=x, residual=gnorm
                )
            break
        if g_new is None:
            g_new = grad(x_new)
        s = x_new - x
        if np.max(np.abs(s)) <= 1e-15 * max(np.max(np.abs(x)), 1.0):
            x, fx, g = x_new, f_new, g_new
            Hg = proj(H0(g))
            gnorm = np.sqrt(max(float(g @ Hg), 0.0))
            energies.append(fx)
            break
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
            if len(S) > cfg.memory:
                S.pop(0), Y.pop(0), RHO.pop(0)
        x, fx, g = x_new, f_new, g_new
        Hg = proj(H0(g))
        gnorm = np.sqrt(max(float(g @ Hg), 0.0))
        energies.append(fx)
    converged = gnorm <= target
    if raise_on_fail and not converged:
        raise SolverError(
            f"L-BFGS stopped after {it} iterations with |g| = {gnorm:.3e}",
            iterate=x, residual=gnorm,
        )
    return LbfgsResult(x, fx, energies, gnorm, it, converged)
