"""The double-well potential ``F(u) = (u^2 - 1)^2 / 4`` and its splittings.

All functions are elementwise and accept scalars or arrays.
"""
import numpy as np


def F(u):
    u = np.asarray(u, dtype=float)
    return 0.25 * (u * u - 1.0) ** 2


def f(u):
    """``F'(u) = u^3 - u``."""
    u = np.asarray(u, dtype=float)
    return u * u * u - u


def df(u):
    u = np.asarray(u, dtype=float)
    return 3.0 * u * u - 1.0


def F_plus(u):
    """Convex part ``(u^4 + 1) / 4``."""
    u = np.asarray(u, dtype=float)
    return 0.25 * (u**4 + 1.0)


def F_minus(u):
    """Concave part (subtracted) ``u^2 / 2``."""
    u = np.asarray(u, dtype=float)
    return 0.5 * u * u


def css_splits(u, uprev):
    """Implicit convex and explicit concave derivatives ``(u^3, uprev)``."""
    u = np.asarray(u, dtype=float)
    return u**3, np.asarray(uprev, dtype=float) * np.ones_like(u)


def secant_f(a, b):
    """Difference quotient ``(F(a) - F(b)) / (a - b)`` in factored form.

    Equals ``f(a)`` when ``a == b``; the factored form avoids cancellation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.25 * (a + b) * (a * a + b * b - 2.0)


def dsecant_f(a, b):
    """Partial derivative of :func:`secant_f` in its first argument."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.25 * (3.0 * a * a + 2.0 * a * b + b * b) - 0.5


def g_plus(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.25 * (a**3 + b * a * a + b * b * a + b**3)


def dg_plus(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.25 * (3.0 * a * a + 2.0 * a * b + b * b)


def g_minus(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * (a + b)


def cn_split_g(a, b):
    """``(g_plus(a; b), g_minus(a; b))``; their difference is ``secant_f(a, b)``."""
    return g_plus(a, b), g_minus(a, b)


def G_plus(a, b):
    """Antiderivative of ``g_plus`` in ``a`` (vanishing at ``a = 0``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.25 * (0.25 * a**4 + b * a**3 / 3.0 + 0.5 * b * b * a * a + b**3 * a)


def G_minus(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.25 * a * a + 0.5 * a * b


def G_check(a, b):
    return G_plus(a, b) - G_minus(a, b)
