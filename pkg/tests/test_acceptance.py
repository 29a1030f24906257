"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``PASS``/``FAIL`` line that is printed in the
terminal summary (and immediately with ``-s``).
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from phasefield import analysis as an
from phasefield import energies as en
from phasefield import steppers_ac as ac
from phasefield import steppers_ch as ch
from phasefield.fem import FemSpace
from phasefield.mesh import check_delaunay, generate_uniform
from phasefield.solvers import LbfgsConfig, NewtonConfig, cg, symmetric_direct_solver

TIGHT = NewtonConfig(tol=1e-12)


def report(number, title, checks):
    """Record one line for criterion ``number``; ``checks`` maps label -> (ok, detail)."""
    ok = all(c[0] for c in checks.values())
    parts = "; ".join(f"{label} {'ok' if good else 'FAILED'} ({detail})"
                      for label, (good, detail) in checks.items())
    line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} | {parts}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def _trajectory(space, step_a, step_b, state_a, state_b, n=10):
    worst = 0.0
    for _ in range(n):
        state_a, state_b = step_a(state_a), step_b(state_b)
        worst = max(worst, float(np.abs(state_a.u - state_b.u).max()))
    return worst


# ----------------------------------------------------------------------


def test_criterion_1_scheme_equivalences():
    eps = 0.02
    ks = (eps**2, 10 * eps**2, 100 * eps**2)
    ac_space = FemSpace(generate_uniform(64, 64, (-1, -1, 1, 1)))
    ch_space = FemSpace(generate_uniform(64, 64, (0, 0, 1, 1)))
    u_ac = an.tanh_circle(ac_space, eps, 0.6)
    u_ch = an.tanh_circle(ch_space, eps, 0.17, (0.5, 0.5))

    def cfg(scheme, k, **kw):
        return ac.SchemeConfigAC(scheme, eps, k, newton=TIGHT, **kw)

    def ac_pair(a, ka, b, kb, **kw):
        return lambda st: ac.advance(ac_space, cfg(a, ka, **kw), st), \
            lambda st: ac.advance(ac_space, cfg(b, kb, **kw), st)

    worst, started = {}, time.perf_counter()
    for k in ks:
        pairs = {
            "css/fis": ac_pair("css", k, "fis", ac.css_equivalent_step(eps, k)),
            "lumped": ac_pair("css_lumped", k, "fis_lumped", ac.css_equivalent_step(eps, k)),
            "css_mcn/mcn": ac_pair("css_mcn", k, "mcn", ac.css_mcn_equivalent_step(eps, k)),
            "convexified/css": ac_pair("convexified_fis", k, "css", k, delta=k),
            "css2/convex_mcn2": ac_pair("css2", k, "convex_ac2_mcn", k, delta=k * k / 2),
        }
        for name, (fa, fb) in pairs.items():
            d = _trajectory(ac_space, fa, fb, ac.AcState(u_ac), ac.AcState(u_ac))
            worst[name] = max(worst.get(name, 0.0), d)
    for k in (eps**3, 10 * eps**3, 100 * eps**3):
        fa = lambda st: ch.step_css_ch(ch_space, ch.SchemeConfigCH("css", eps, k, newton=TIGHT), st)
        fb = lambda st: ch.step_perturbed_fis_ch(
            ch_space, ch.SchemeConfigCH("perturbed_fis", eps, k, delta=k, newton=TIGHT), st)
        st = ch.ChState.initial(ch_space, u_ch)
        worst["css_ch/perturbed"] = max(worst.get("css_ch/perturbed", 0.0),
                                        _trajectory(ch_space, fa, fb, st, st))
    elapsed = time.perf_counter() - started
    checks = {name: (d <= 1e-9, f"{d:.1e}") for name, d in worst.items()}
    checks["runtime"] = (elapsed < 120, f"{elapsed:.0f} s")
    assert report(1, "equivalences", checks)


def test_criterion_2_energy_laws():
    eps = 0.05
    ac_space = FemSpace(generate_uniform(32, 32, (-1, -1, 1, 1)))
    ch_space = FemSpace(generate_uniform(32, 32, (0, 0, 1, 1)))
    u_ac = an.tanh_circle(ac_space, eps, 0.6)
    u_ch = an.tanh_circle(ch_space, eps, 0.3, (0.5, 0.5))
    steps = 20

    def ac_run(scheme, k):
        cfg = ac.SchemeConfigAC(scheme, eps, k, newton=TIGHT)
        out = [ac.AcState(u_ac)]
        for _ in range(steps):
            out.append(ac.advance(ac_space, cfg, out[-1]))
        return [s.u for s in out]

    def ch_run(scheme, k):
        cfg = ch.SchemeConfigCH(scheme, eps, k, newton=TIGHT)
        out = [ch.ChState.initial(ch_space, u_ch)]
        for _ in range(steps):
            out.append(ch.advance(ch_space, cfg, out[-1]))
        return [s.u for s in out]

    mcn_ac = mcn_ch = 0.0
    css_up_ac = css_up_ch = -np.inf
    for factor in (1, 10, 100):
        k = factor * 2 * eps**2
        us = ac_run("mcn", k)
        mcn_ac = max(mcn_ac, max(abs(an.mcn_identity_residual_ac(ac_space, eps, k, a, b))
                                 for a, b in zip(us, us[1:])))
        k = factor * 8 * eps**3
        us = ch_run("mcn", k)
        mcn_ch = max(mcn_ch, max(abs(ch.mcn_energy_identity_residual(ch_space, eps, k, a, b))
                                 for a, b in zip(us, us[1:])))
        E = [en.physical_energy_ac(ac_space, eps, u) for u in ac_run("css", factor * eps**2)]
        css_up_ac = max(css_up_ac, max(b - a for a, b in zip(E, E[1:])))
        E = [en.physical_energy_ch(ch_space, eps, u) for u in ch_run("css", factor * 4 * eps**3)]
        css_up_ch = max(css_up_ch, max(b - a for a, b in zip(E, E[1:])))
    fis_law = -np.inf
    for factor in (0.5, 1.0):
        k = factor * eps**2
        us = ac_run("fis", k)
        fis_law = max(fis_law, max(an.energy_law_residual_ac(ac_space, eps, k, a, b)
                                   for a, b in zip(us, us[1:])))
    checks = {
        "MCN identity AC": (mcn_ac <= 1e-8, f"{mcn_ac:.1e}"),
        "MCN identity CH": (mcn_ch <= 1e-8, f"{mcn_ch:.1e}"),
        "CSS AC monotone": (css_up_ac <= 0.0, f"max increase {css_up_ac:.1e}"),
        "CSS CH monotone": (css_up_ch <= 0.0, f"max increase {css_up_ch:.1e}"),
        "FIS law k<=eps^2": (fis_law <= 1e-12, f"max residual {fis_law:.1e}"),
    }
    assert report(2, "energy laws", checks)


def test_criterion_3_maximum_principle():
    eps = 0.01
    space = FemSpace(generate_uniform(16, 16, (-1, -1, 1, 1)))
    delaunay = check_delaunay(space.mesh).all_passed
    rng = np.random.default_rng(2024)
    fields = [rng.uniform(-1, 1, space.n) for _ in range(100)]
    worst = 0.0
    for scheme in ("fis_lumped", "css_lumped"):
        for k in (eps**2, 10 * eps**2):
            cfg = ac.SchemeConfigAC(scheme, eps, k)
            for u0 in fields:
                st = ac.AcState(u0)
                for _ in range(50):
                    st = ac.advance(space, cfg, st)
                    worst = max(worst, float(np.abs(st.u).max()))
    checks = {"Delaunay mesh": (delaunay, "16x16"),
              "max |u|": (worst <= 1 + 1e-12, f"{worst:.15f}")}
    assert report(3, "maximum principle", checks)


def test_criterion_4_preconditioner():
    eps = 0.1
    k = 0.5 * eps**2          # gamma = 1/2
    rows = an.precond_benchmark((8, 16, 32, 64, 128), eps, k)
    print()
    print(an.format_bench_table(rows))
    dofs = [r.dof for r in rows]
    pcg_iters = [r.pcg_iters for r in rows]
    cg_iters = [r.cg_iters for r in rows]
    lo = min(r.lanczos_min for r in rows)
    hi = max(r.lanczos_max for r in rows)
    checks = {
        "DOF 81..16641": (dofs == [81, 289, 1089, 4225, 16641], f"{dofs}"),
        "PCG <= 12": (max(pcg_iters) <= 12, f"{pcg_iters}"),
        "PCG spread <= 4": (max(pcg_iters) - min(pcg_iters) <= 4,
                            f"{max(pcg_iters) - min(pcg_iters)}"),
        "CG increasing": (all(b > a for a, b in zip(cg_iters, cg_iters[1:])), f"{cg_iters}"),
        "spectrum in [1,4]": (lo >= 1 - 1e-6 and hi <= 4 + 1e-6, f"[{lo:.6f}, {hi:.6f}]"),
    }
    assert report(4, "preconditioner", checks)


def test_criterion_5_shrinking_circle():
    eps, k = 0.02, 5e-4
    space = FemSpace(generate_uniform(128, 128, (-1, -1, 1, 1)))
    h = space.mesh.h
    u0 = an.tanh_circle(space, eps, 0.6)

    def radii(scheme, t_stop):
        cfg = ac.SchemeConfigAC(scheme, eps, k)
        st, ts, rs = ac.AcState(u0), [0.0], [an.radius_along_axis(space, u0)]
        started = time.perf_counter()
        while st.t < t_stop - 1e-12:
            st = ac.advance(space, cfg, st)
            r = an.radius_along_axis(space, st.u)
            if r is None:
                break
            ts.append(st.t)
            rs.append(r)
        return np.array(ts), np.array(rs), time.perf_counter() - started

    t_fis, r_fis, sec_fis = radii("fis", 0.17)
    window = (t_fis >= 0.02 - 1e-12) & (t_fis <= 0.14 + 1e-12)
    ref = np.array([an.sharp_interface_reference(t) for t in t_fis[window]])
    band = float(np.abs(r_fis[window] - ref).max())
    t_vanish = an.vanishing_time(t_fis[window], r_fis[window])

    t_css, r_css, sec_css = radii("css", 0.14)
    delayed = an.DelayModel(eps, (k,) * (len(t_css) - 1)).delayed_times
    sel = (t_css[1:] >= 0.02 - 1e-12) & (t_css[1:] <= 0.14 + 1e-12)
    fis_at_delay = np.interp(delayed[sel], t_fis, r_fis)
    lag_gap = float(np.abs(r_css[1:][sel] - fis_at_delay).max())

    checks = {
        "FIS radius band": (band <= max(2 * eps, 2 * h), f"{band:.4f} <= {max(2 * eps, 2 * h):.4f}"),
        "vanishing time": (0.162 <= t_vanish <= 0.198, f"{t_vanish:.4f}"),
        "CSS at delayed times": (lag_gap <= 2 * h, f"{lag_gap:.1e} <= {2 * h:.4f}"),
        "runtime": (sec_fis + sec_css <= 300, f"FIS {sec_fis:.0f} s, CSS {sec_css:.0f} s"),
    }
    assert report(5, "shrinking circle", checks)


def test_criterion_6_energy_minimization():
    eps = 5e-3
    space = FemSpace(generate_uniform(96, 96, (-1, -1, 1, 1)))
    u0 = np.random.default_rng(0).uniform(-0.1, 0.1, space.n)

    def trace(k, steps):
        cfg = ac.SchemeConfigAC("fis_energymin", eps, k)
        st, E = ac.AcState(u0), [en.physical_energy_ac(space, eps, u0)]
        for _ in range(steps):
            st = ac.advance(space, cfg, st)
            E.append(en.physical_energy_ac(space, eps, st.u))
        return np.diff(E)

    rise_convex = float(trace(1e-5, 200).max())
    rise_nonconvex = float(trace(1e-3, 5).max())
    # restart seed differs from the initial-field seed so no restart copies uprev
    ms = an.multistart_step(space, eps, 1e-3, u0, restarts=10, seed=1,
                            lbfgs=LbfgsConfig(tol=1e-8, max_iter=5000))
    best = min(ms.energies[1:])
    checks = {
        "monotone k=1e-5": (rise_convex <= 0.0, f"max increase {rise_convex:.1e}"),
        "monotone k=1e-3": (rise_nonconvex <= 0.0, f"max increase {rise_nonconvex:.1e}"),
        ">= 2 stationary points": (ms.distinct >= 2, f"{ms.distinct} distinct"),
        "uprev start lowest": (ms.uprev_is_lowest,
                               f"uprev {ms.energies[0]:.2f}, best random {best:.2f}"),
    }
    assert report(6, "energy-minimization stepping", checks)


def test_criterion_7_oracle_suite():
    from test_fem import symbolic_element

    # finite-difference gradients of every step energy
    space = FemSpace(generate_uniform(4, 4))
    rng = np.random.default_rng(7)
    grad_err = 0.0
    for variant in en.VARIANTS:
        ctx = en.EnergyContext(space, 0.3, 0.01, rng.uniform(-1, 1, space.n), variant, delta=0.004)
        x, d = rng.uniform(-1, 1, space.n), rng.standard_normal(space.n)
        if ctx.is_ch:
            x, d = space.project(x), space.project(d)
        h = 1e-6
        fd = (en.step_energy(ctx, x + h * d) - en.step_energy(ctx, x - h * d)) / (2 * h)
        exact = en.step_residual(ctx, x) @ d
        grad_err = max(grad_err, abs(fd - exact) / max(abs(exact), 1.0))

    # symbolic element matrices
    from phasefield.mesh import Mesh
    asm_err = 0.0
    for tri in ([(0, 0), (1, 0), (0, 1)], [(0.2, 0.1), (1.3, 0.4), (0.5, 1.7)]):
        sp1 = FemSpace(Mesh.from_arrays(np.array(tri, dtype=float), np.array([[0, 1, 2]])))
        K, Mm = symbolic_element(tri)
        asm_err = max(asm_err, np.abs(sp1.A.toarray() - K).max(), np.abs(sp1.M.toarray() - Mm).max())

    # sparse solvers versus dense solves on a 169-node mesh
    small = FemSpace(generate_uniform(12, 12, (-1, -1, 1, 1)))
    assert small.n <= 200
    b = rng.standard_normal(small.n)
    J = (small.M / 1e-3 + small.A).tocsc()
    dense = np.linalg.solve(J.toarray(), b)
    x_direct, _ = symmetric_direct_solver(J, b)
    x_cg = cg(lambda v: J @ v, b, tol=1e-13).solution
    theta = small.project(b)
    lap = small.inverse_laplacian(theta)
    m = small.mass_ones
    bordered = np.block([[small.A.toarray(), m[:, None]], [m[None, :], np.zeros((1, 1))]])
    lap_dense = np.linalg.solve(bordered, np.append(-(small.M @ theta), 0.0))[:-1]
    solve_err = max(np.abs(x_direct - dense).max(), np.abs(x_cg - dense).max(),
                    np.abs(lap - lap_dense).max())

    # mass conservation for every CH scheme
    ch_space = FemSpace(generate_uniform(8, 8, (0, 0, 1, 1)))
    u0 = rng.uniform(-0.6, 0.6, ch_space.n)
    mass_err = 0.0
    for scheme in ch.SCHEMES:
        cfg = ch.SchemeConfigCH(scheme, 0.1, 2e-3, delta=1e-3)
        st = ch.ChState.initial(ch_space, u0)
        for _ in range(5):
            st = ch.advance(ch_space, cfg, st)
            mass_err = max(mass_err, abs(ch_space.mean(st.u) - st.initial_mass))

    # convexity certificates at half and twice each bound
    bounds = {en.AC_FIS: lambda e: e**2, en.CH_FIS: lambda e: 4 * e**3,
              en.AC_MCN: lambda e: 2 * e**2, en.CH_MCN: lambda e: 8 * e**3}
    cert_space = FemSpace(generate_uniform(6, 6))
    flips = []
    for variant, bound in bounds.items():
        k0 = bound(0.1)
        below = en.convexity_certificate(
            en.EnergyContext(cert_space, 0.1, 0.5 * k0, np.zeros(cert_space.n), variant), trials=3)
        above = en.convexity_certificate(
            en.EnergyContext(cert_space, 0.1, 2.0 * k0, np.zeros(cert_space.n), variant), trials=3)
        flips.append(below.positive and not above.nonnegative)

    checks = {
        "FD gradients": (grad_err <= 1e-6, f"{grad_err:.1e}"),
        "symbolic assembly": (asm_err <= 1e-12, f"{asm_err:.1e}"),
        "dense solves": (solve_err <= 1e-8, f"{solve_err:.1e}"),
        "CH mass": (mass_err <= 1e-10, f"{mass_err:.1e}"),
        "certificates": (all(flips), f"{sum(flips)}/{len(flips)} flip at the bound"),
    }
    assert report(7, "oracle suite", checks)
