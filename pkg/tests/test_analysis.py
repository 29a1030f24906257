import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from phasefield import analysis as an
from phasefield import steppers_ac as ac
from phasefield.config import parse_config
from phasefield.errors import ConfigurationError, SolverError
from phasefield.fem import FemSpace
from phasefield.mesh import generate_uniform


@pytest.fixture(scope="module")
def disk():
    return FemSpace(generate_uniform(40, 40, (-1, -1, 1, 1)))


def test_radius_of_initial_profile(disk):
    u = an.tanh_circle(disk, 0.05, 0.6)
    assert abs(an.radius_along_axis(disk, u) - 0.6) <= disk.mesh.h


def test_radius_of_smaller_profile(disk):
    x, y = disk.mesh.nodes.T
    u = np.tanh((np.hypot(x, y) - 0.4) / (math.sqrt(2) * 0.03))
    assert abs(an.radius_along_axis(disk, u) - 0.4) <= disk.mesh.h


def test_radius_is_exact_for_linear_data(disk):
    x, _ = disk.mesh.nodes.T
    assert an.radius_along_axis(disk, x - 0.33) == pytest.approx(0.33, abs=1e-14)


def test_no_interface_gives_none(disk):
    assert an.radius_along_axis(disk, disk.ones) is None
    assert an.radius_along_axis(disk, -disk.ones) is None


def test_sharp_interface_reference_values():
    assert an.sharp_interface_reference(0.0) == pytest.approx(0.6)
    assert an.sharp_interface_reference(0.1) == pytest.approx(0.4)
    assert an.sharp_interface_reference(0.18) is None
    assert an.sharp_interface_reference(0.3) is None


def test_sharp_interface_reference_solves_curvature_ode():
    ts = np.linspace(0.0, 0.16, 9)
    sol = solve_ivp(lambda t, r: -1.0 / r, (0, 0.16), [0.6], t_eval=ts, rtol=1e-12, atol=1e-14)
    for t, r in zip(ts, sol.y[0]):
        assert an.sharp_interface_reference(t) == pytest.approx(r, rel=1e-9)


def test_vanishing_time_of_exact_curve():
    t = np.linspace(0.02, 0.14, 13)
    r = [an.sharp_interface_reference(s) for s in t]
    assert an.vanishing_time(t, r) == pytest.approx(0.18)


def test_delay_model():
    eps = 0.1
    steps = (eps**2, 10 * eps**2, 0.5 * eps**2)
    d = an.DelayModel(eps, steps)
    assert d.factors == pytest.approx([0.5, 1 / 11, 2 / 3])
    assert np.all((d.factors > 0) & (d.factors < 1))
    assert np.all(d.delayed_times < d.times)
    assert d.delayed_times[-1] == pytest.approx(sum(f * k for f, k in zip(d.factors, steps)))
    assert an.DelayModel(eps, steps, "mcn").factors[0] == pytest.approx(2 / 3)
    with pytest.raises(ConfigurationError):
        an.DelayModel(eps, steps, "bogus")


def test_css_trajectory_matches_delayed_fis():
    space = FemSpace(generate_uniform(10, 10, (-1, -1, 1, 1)))
    eps = 0.1
    u0 = an.tanh_circle(space, eps, 0.5)
    steps = [eps**2, 5 * eps**2, 0.3 * eps**2, 50 * eps**2, 2 * eps**2]
    assert an.css_trajectory_equivalence(space, eps, steps, u0) <= 1e-9


def test_equivalence_report_all_pairs():
    space = FemSpace(generate_uniform(8, 8, (-1, -1, 1, 1)))
    report = an.equivalence_report(space, 0.1, trials=2)
    assert set(report.max_diff) == set(an.EQUIVALENCE_PAIRS)
    assert report.all_passed, report.max_diff


def test_equivalence_report_flags_a_false_pair():
    space = FemSpace(generate_uniform(6, 6, (-1, -1, 1, 1)))
    report = an.equivalence_report(space, 0.1, pairs=["css~fis"], trials=1, threshold=-1.0)
    assert not report.all_passed


class _Rec:
    def __init__(self, n, energy):
        self.n, self.energy = n, energy


def test_energy_monitor_flags_exactly_the_increases():
    recs = [_Rec(i, e) for i, e in enumerate([5.0, 4.0, 4.5, 4.5, 3.0, 3.2])]
    assert an.energy_violations(recs) == [2, 5]


def _config(**over):
    base = dict(equation="allen-cahn", scheme="css", epsilon="0.1", k="0.01", nx="10",
                ny="10", steps="6", radius="0.5")
    base.update(over)
    return parse_config("\n".join(f"{k} = {v}" for k, v in base.items()))


def test_run_experiment_records():
    res = an.run_experiment(_config(snapshot_times="0, 0.02, 0.05"))
    assert res.failure is None
    assert len(res.records) == 7
    ts = [r.t for r in res.records]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert not an.energy_violations(res.records)
    assert sorted(res.snapshots) == [0.0, 0.02, 0.05]
    assert all(r.radius is not None for r in res.records)


def test_run_experiment_cahn_hilliard_mass():
    cfg = _config(equation="cahn-hilliard", scheme="mcn", k="0.0005", initial="random",
                  amplitude="0.3", seed="4", domain="0,0,1,1", center="0.5,0.5")
    res = an.run_experiment(cfg)
    m = [r.mass for r in res.records]
    assert max(abs(x - m[0]) for x in m) <= 1e-10
    assert all(abs(r.energy_law_residual) <= 1e-8 for r in res.records[1:])


def test_run_experiment_returns_partial_history_on_failure(monkeypatch):
    real = an.build_stepper

    def flaky(cfg):
        scheme, step = real(cfg)

        def step_or_fail(space, sc, state):
            if state.n == 2:
                raise SolverError("no convergence")
            return step(space, sc, state)
        return scheme, step_or_fail

    monkeypatch.setattr(an, "build_stepper", flaky)
    res = an.run_experiment(_config())
    assert res.failure == "step 3: no convergence"
    assert [r.n for r in res.records] == [0, 1, 2]


def test_random_initial_field_is_seeded():
    space = FemSpace(generate_uniform(4, 4))
    a = an.initial_field(space, _config(initial="random", seed="3"))
    b = an.initial_field(space, _config(initial="random", seed="3"))
    assert np.array_equal(a, b) and np.abs(a).max() <= 0.1


def test_fis_radius_nonincreasing_after_transient():
    eps = 0.05
    cfg = _config(scheme="fis", epsilon=str(eps), k=str(eps**2), nx="48", ny="48", steps="30",
                  radius="0.6")
    res = an.run_experiment(cfg)
    h = res.space.mesh.h
    radii = [r.radius for r in res.records[5:]]
    assert all(b <= a + h for a, b in zip(radii, radii[1:]))


def test_css2_lags_mcn_at_large_steps():
    eps = 0.02
    k = 15 * eps**2
    space = FemSpace(generate_uniform(64, 64, (-1, -1, 1, 1)))
    u0 = an.tanh_circle(space, eps, 0.6)
    radii = {}
    for scheme in ("mcn", "css2"):
        cfg = ac.SchemeConfigAC(scheme, eps, k)
        st, out = ac.AcState(u0), []
        for _ in range(24):
            st = ac.advance(space, cfg, st)
            out.append(an.radius_along_axis(space, st.u))
        radii[scheme] = out
    lag = [c - m for c, m in zip(radii["css2"][5:20], radii["mcn"][5:20])]
    assert min(lag) > 0


def test_precond_benchmark_small():
    rows = an.precond_benchmark((4, 8), 0.05, 0.5 * 0.05**2)
    assert [r.dof for r in rows] == [25, 81]
    for r in rows:
        assert 1 - 1e-6 <= r.lanczos_min and r.lanczos_max <= 4 + 1e-6
    assert "PCG" in an.format_bench_table(rows)


def test_multistart_distinct_and_seeded():
    space = FemSpace(generate_uniform(6, 6, (-1, -1, 1, 1)))
    eps = 0.1
    u1 = an.tanh_circle(space, eps, 0.5)
    a = an.multistart_step(space, eps, 20 * eps**2, u1, restarts=4, seed=2)
    b = an.multistart_step(space, eps, 20 * eps**2, u1, restarts=4, seed=2)
    assert a.energies == b.energies
    assert len(a.energies) == 5 and a.distinct >= 1
    convex = an.multistart_step(space, eps, 0.5 * eps**2, u1, restarts=4, seed=2)
    assert convex.distinct == 1 and convex.uprev_is_lowest
