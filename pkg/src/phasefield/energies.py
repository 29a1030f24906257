"""Free energies and per-step discrete energies with their derivatives.

Each implicit step of a gradient-flow scheme is the stationarity condition
of a step energy ``E_n(. ; u^{n-1})``.  The Allen-Cahn variants are
functions of the new state ``u``; the Cahn-Hilliard variants are functions
of the zero-mean increment ``theta = u - u^{n-1}``.

Three derivative levels are exposed:

``step_residual``  assembled first variation ``r_i = E'(u)(phi_i)``
``step_gradient``  its Riesz representative (``M^{-1} r``, or ``ML^{-1} r``
                   for the lumped variant; zero-mean for CH variants)
``step_hessvec``   assembled second variation applied to a direction
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import potentials as pot
from .errors import ConfigurationError
from .fem import FemSpace

AC_FIS = "AC_FIS"
AC_FIS_LUMPED = "AC_FIS_LUMPED"
AC_CSS = "AC_CSS"
AC_SCN = "AC_SCN"
AC_MCN = "AC_MCN"
AC_CONVEXIFIED = "AC_CONVEXIFIED"
CH_FIS = "CH_FIS"
CH_MCN = "CH_MCN"
CH_CONVEXIFIED = "CH_CONVEXIFIED"

AC_VARIANTS = (AC_FIS, AC_FIS_LUMPED, AC_CSS, AC_SCN, AC_MCN, AC_CONVEXIFIED)
CH_VARIANTS = (CH_FIS, CH_MCN, CH_CONVEXIFIED)
VARIANTS = AC_VARIANTS + CH_VARIANTS


@dataclass(frozen=True, eq=False)
class EnergyContext:
    space: FemSpace
    epsilon: float
    k: float
    uprev: np.ndarray
    variant: str
    delta: float = 0.0

    def __post_init__(self):
        if self.epsilon <= 0 or self.k <= 0:
            raise ConfigurationError("epsilon and k must be positive")
        if self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown energy variant {self.variant!r}")
        if len(self.uprev) != self.space.n:
            raise ConfigurationError("uprev does not match the space dimension")

    @property
    def is_ch(self) -> bool:
        return self.variant in CH_VARIANTS

    @property
    def lumped(self) -> bool:
        return self.variant == AC_FIS_LUMPED


# ----------------------------------------------------------------------
# physical energies


def gradient_energy(space: FemSpace, u) -> float:
    """``(1/2) ||grad u||^2``."""
    return 0.5 * float(u @ (space.A @ u))


def well_energy(space: FemSpace, u) -> float:
    """``int F(u)``, exact quadrature."""
    return space.integrate(pot.F, u)


def physical_energy_ac(space: FemSpace, eps: float, u) -> float:
    return gradient_energy(space, u) + well_energy(space, u) / eps**2


def physical_energy_ch(space: FemSpace, eps: float, u) -> float:
    return eps * gradient_energy(space, u) + well_energy(space, u) / eps


def lumped_energy_ac(space: FemSpace, eps: float, u) -> float:
    return gradient_energy(space, u) + float(space.ML @ pot.F(u)) / eps**2


# ----------------------------------------------------------------------
# step energies


def _l2sq(space, v):
    return float(v @ (space.M @ v))


def step_energy(ctx: EnergyContext, x) -> float:
    """Discrete step energy; ``x`` is ``u`` (AC) or ``theta`` (CH)."""
    S, eps, k, u1 = ctx.space, ctx.epsilon, ctx.k, ctx.uprev
    x = np.asarray(x, dtype=float)
    v = ctx.variant
    if v == AC_FIS:
        return physical_energy_ac(S, eps, x) + _l2sq(S, x - u1) / (2 * k)
    if v == AC_CONVEXIFIED:
        coef = 1.0 / (2 * k) + ctx.delta / (2 * k * eps**2)
        return physical_energy_ac(S, eps, x) + coef * _l2sq(S, x - u1)
    if v == AC_FIS_LUMPED:
        d = x - u1
        return lumped_energy_ac(S, eps, x) + float(S.ML @ (d * d)) / (2 * k)
    if v == AC_CSS:
        wells = S.integrate(
            lambda a, b: pot.F_plus(a) - pot.F_minus(b) - b * (a - b), x, u1
        )
        return gradient_energy(S, x) + wells / eps**2 + _l2sq(S, x - u1) / (2 * k)
    if v == AC_SCN:
        mid = 0.5 * (x + u1)
        wells = S.integrate(lambda a, b: pot.F(a) + pot.f(b) * a, x, u1)
        return gradient_energy(S, mid) + _l2sq(S, x - u1) / (4 * k) + wells / (4 * eps**2)
    if v == AC_MCN:
        mid = 0.5 * (x + u1)
        wells = S.integrate(pot.G_check, x, u1)
        return gradient_energy(S, mid) + _l2sq(S, x - u1) / (4 * k) + wells / (2 * eps**2)

    # Cahn-Hilliard: x is the zero-mean increment
    u = u1 + x
    hm1 = S.hminus1_norm_sq(x)
    if v == CH_FIS:
        return physical_energy_ch(S, eps, u) + hm1 / (2 * k)
    if v == CH_CONVEXIFIED:
        return (physical_energy_ch(S, eps, u) + hm1 / (2 * k)
                + ctx.delta / (2 * k * eps) * _l2sq(S, x))
    if v == CH_MCN:
        mid = 0.5 * (u + u1)
        wells = S.integrate(pot.G_check, u, u1)
        return eps * gradient_energy(S, mid) + hm1 / (4 * k) + wells / (2 * eps)
    raise ConfigurationError(v)


def step_residual(ctx: EnergyContext, x) -> np.ndarray:
    """Assembled first variation ``E'(x)(phi_i)``."""
    S, eps, k, u1 = ctx.space, ctx.epsilon, ctx.k, ctx.uprev
    x = np.asarray(x, dtype=float)
    v = ctx.variant
    if v in (AC_FIS, AC_CONVEXIFIED):
        coef = 1.0 / k + (ctx.delta / (k * eps**2) if v == AC_CONVEXIFIED else 0.0)
        return S.A @ x + S.load(pot.f, x) / eps**2 + coef * (S.M @ (x - u1))
    if v == AC_FIS_LUMPED:
        return S.A @ x + S.ML * pot.f(x) / eps**2 + S.ML * (x - u1) / k
    if v == AC_CSS:
        return (S.A @ x + (S.load(lambda a: a**3, x) - S.M @ u1) / eps**2
                + S.M @ (x - u1) / k)
    if v == AC_SCN:
        return (0.25 * (S.A @ (x + u1)) + S.M @ (x - u1) / (2 * k)
                + (S.load(pot.f, x) + S.load(pot.f, u1)) / (4 * eps**2))
    if v == AC_MCN:
        return (0.25 * (S.A @ (x + u1)) + S.M @ (x - u1) / (2 * k)
                + S.load(pot.secant_f, x, u1) / (2 * eps**2))

    u = u1 + x
    z = S.inverse_laplacian(x, check=False)
    if v in (CH_FIS, CH_CONVEXIFIED):
        r = eps * (S.A @ u) + S.load(pot.f, u) / eps - S.M @ z / k
        if v == CH_CONVEXIFIED:
            r = r + ctx.delta / (k * eps) * (S.M @ x)
        return r
    if v == CH_MCN:
        return (0.25 * eps * (S.A @ (u + u1)) + S.load(pot.secant_f, u, u1) / (2 * eps)
                - S.M @ z / (2 * k))
    raise ConfigurationError(v)


def step_gradient(ctx: EnergyContext, x) -> np.ndarray:
    """Riesz representative of the first variation."""
    r = step_residual(ctx, x)
    if ctx.is_ch:
        return ctx.space.mass_solve(r) - r.sum() / ctx.space.volume
    return ctx.space.riesz(r, lumped=ctx.lumped)


def step_hessian(ctx: EnergyContext, x):
    """Assembled second variation: a sparse matrix (AC) or LinearOperator (CH).

    For CH variants the operator acts on zero-mean directions; other
    directions are projected first.
    """
    S, eps, k, u1 = ctx.space, ctx.epsilon, ctx.k, ctx.uprev
    x = np.asarray(x, dtype=float)
    v = ctx.variant
    if v in (AC_FIS, AC_CONVEXIFIED):
        coef = 1.0 / k + (ctx.delta / (k * eps**2) if v == AC_CONVEXIFIED else 0.0)
        return (S.A + S.weighted_mass(pot.df, x) / eps**2 + coef * S.M).tocsr()
    if v == AC_FIS_LUMPED:
        return (S.A + sp.diags(S.ML * (pot.df(x) / eps**2 + 1.0 / k))).tocsr()
    if v == AC_CSS:
        return (S.A + S.weighted_mass(lambda a: 3 * a * a, x) / eps**2 + S.M / k).tocsr()
    if v == AC_SCN:
        return (0.25 * S.A + S.M / (2 * k) + S.weighted_mass(pot.df, x) / (4 * eps**2)).tocsr()
    if v == AC_MCN:
        return (0.25 * S.A + S.M / (2 * k)
                + S.weighted_mass(pot.dsecant_f, x, u1) / (2 * eps**2)).tocsr()

    u = u1 + x
    if v in (CH_FIS, CH_CONVEXIFIED):
        local = eps * S.A + S.weighted_mass(pot.df, u) / eps
        if v == CH_CONVEXIFIED:
            local = local + ctx.delta / (k * eps) * S.M
        c = 1.0 / k
    elif v == CH_MCN:
        local = 0.25 * eps * S.A + S.weighted_mass(pot.dsecant_f, u, u1) / (2 * eps)
        c = 1.0 / (2 * k)
    else:
        raise ConfigurationError(v)
    local = local.tocsr()

    def matvec(d):
        d = S.project(np.asarray(d, dtype=float).ravel())
        return local @ d - c * (S.M @ S.inverse_laplacian(d, check=False))

    return spla.LinearOperator((S.n, S.n), matvec=matvec, dtype=float)


def step_hessvec(ctx: EnergyContext, x, d) -> np.ndarray:
    return step_hessian(ctx, x) @ np.asarray(d, dtype=float)


# ----------------------------------------------------------------------
# convexity


class CertificateReport(NamedTuple):
    min_value: float
    positive: bool
    nonnegative: bool
    values: list


def _min_generalized_eig(H, W):
    H = 0.5 * (H + H.T)
    return float(sla.eigh(H, W, eigvals_only=True, subset_by_index=[0, 0])[0])


def convexity_certificate(ctx: EnergyContext, trials: int = 5, seed: int = 0,
                          tol: float = 1e-9) -> CertificateReport:
    """Smallest value of ``E''(x)(v, v)`` over unit ``v`` at sampled states.

    Trial 0 uses the state ``u = 0`` (where ``3u^2 - 1`` is most negative);
    later trials draw nodal values uniformly in ``[-1, 1]``.  For each state
    the minimum over directions is computed exactly by a dense generalized
    eigensolve against the mass matrix (zero-mean directions for CH).  This
    is meant for small meshes.
    """
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    S = ctx.space
    rng = np.random.default_rng(seed)
    Mdense = S.M.toarray()
    if ctx.is_ch:
        Q = sla.null_space(S.mass_ones[None, :])
        W = Q.T @ Mdense @ Q
    values = []
    for t in range(trials):
        u = np.zeros(S.n) if t == 0 else rng.uniform(-1.0, 1.0, S.n)
        if ctx.is_ch:
            x = u - ctx.uprev
            x = S.project(x)
            H = step_hessian(ctx, x)
            HQ = np.column_stack([H @ Q[:, j] for j in range(Q.shape[1])])
            values.append(_min_generalized_eig(Q.T @ HQ, W))
        else:
            H = step_hessian(ctx, u).toarray()
            values.append(_min_generalized_eig(H, Mdense))
    m = min(values)
    scale = max(1.0, 1.0 / ctx.k)
    return CertificateReport(m, m > 0.0, m >= -tol * scale, values)
