import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from circlekam.errors import GridError, UnsupportedOperation, WindingCapError
from circlekam.model import (
    GridSpec,
    LagrangianSpec,
    OneForm,
    check_grid,
    discrete_lagrangian,
    eval_lagrangian,
    flow_step,
    twist_lagrangian,
)

FREE = LagrangianSpec.free()
PEND = LagrangianSpec.pendulum()
reals = st.floats(-3, 3, allow_nan=False)
unit = st.floats(0, 1, allow_nan=False, exclude_max=True)


def bump_density(n, center=0.3, width=0.2):
    x = np.arange(n) / n
    d = np.abs((x - center + 0.5) % 1.0 - 0.5)
    g = np.where(d < width, 1 + np.cos(np.pi * d / width), 0.0)
    return g / g.mean()


class TestEvaluation:
    def test_free_kinetic(self):
        assert eval_lagrangian(FREE, 0.3, 1.0, 0.0) == 0.5

    def test_pendulum_rest_at_top(self):
        assert eval_lagrangian(PEND, 0.0, 0.0, 0.0) == -1.0

    def test_pendulum_moving(self):
        assert eval_lagrangian(PEND, 0.25, 2.0, 0.5) == pytest.approx(2.0, abs=1e-15)

    def test_genfun_rejected(self):
        with pytest.raises(UnsupportedOperation):
            eval_lagrangian(LagrangianSpec.standard_map(1.0), 0.0, 0.0, 0.0)
        with pytest.raises(UnsupportedOperation):
            twist_lagrangian(LagrangianSpec.standard_map(1.0), OneForm(1.0), 0.0, 0.0, 0.0)

    def test_twist_uniform(self):
        assert twist_lagrangian(FREE, OneForm(1.0), 0.1, 1.0, 0.0) == pytest.approx(-0.5)

    def test_twist_zero_class_is_plain(self):
        for x, v in [(0.1, 0.7), (0.8, -2.0)]:
            assert twist_lagrangian(PEND, OneForm(0.0), x, v, 0.3) == eval_lagrangian(PEND, x, v, 0.3)

    def test_twist_completing_square(self):
        assert twist_lagrangian(FREE, OneForm(0.5), 0.77, 0.5, 0.0) == pytest.approx(-0.125)


class TestDiscreteLagrangian:
    def test_half_turn(self):
        assert discrete_lagrangian(FREE, None, 0.0, 0.5, 0, 0.0, 1.0) == 0.125

    def test_full_loop(self):
        assert discrete_lagrangian(FREE, None, 0.0, 0.0, 1, 0.0, 1.0) == 0.5

    def test_genfun_integrable_rest(self):
        assert discrete_lagrangian(LagrangianSpec.standard_map(0.0), None, 0.2, 0.2, 0, 0.0, 1.0) == 0.0

    def test_genfun_formula(self):
        k = 1.3
        spec = LagrangianSpec.standard_map(k)
        x, x2, m, c = 0.2, 0.7, 1, 0.4
        got = discrete_lagrangian(spec, OneForm(c), x, x2, m, 0.0, 1.0)
        d = x2 + m - x
        assert got == pytest.approx(d * d / 2 + k / (4 * math.pi**2) * math.cos(2 * math.pi * x) - c * d, abs=1e-14)

    def test_genfun_needs_unit_step(self):
        with pytest.raises(UnsupportedOperation):
            discrete_lagrangian(LagrangianSpec.standard_map(1.0), None, 0.1, 0.2, 0, 0.0, 0.5)

    def test_winding_cap(self):
        with pytest.raises(WindingCapError):
            discrete_lagrangian(FREE, None, 0.0, 0.0, 3, 0.0, 1.0)
        discrete_lagrangian(FREE, None, 0.0, 0.0, 3, 0.0, 1.0, winding_cap=3)

    def test_midpoint_rule(self):
        dt = 0.25
        got = discrete_lagrangian(PEND, None, 0.1, 0.3, 0, 0.5, dt)
        v = 0.2 / dt
        assert got == pytest.approx(dt * (v * v / 2 - math.cos(2 * math.pi * 0.2)), abs=1e-15)

    def test_density_form_pairing_is_integral(self):
        g = bump_density(64)
        form = OneForm(0.7, g)
        x, x2 = 0.15, 0.45
        ref, _ = quad(lambda s: float(form.density_at(s)), x, x2, points=np.arange(10, 29) / 64, limit=200)
        got = discrete_lagrangian(FREE, form, x, x2, 0, 0.0, 1.0)
        assert got == pytest.approx(0.5 * 0.3**2 - 0.7 * ref, abs=1e-12)


class TestFlow:
    def test_free_motion(self):
        x, v = flow_step(FREE, None, 0.2, 0.5, 0.0, 0.1)
        assert x == pytest.approx(0.25, abs=1e-15)
        assert v == pytest.approx(0.5, abs=1e-15)

    def test_top_equilibrium(self):
        x, v = flow_step(PEND, None, 0.0, 0.0, 0.0, 0.01)
        assert abs(x) < 1e-4 and abs(v) < 1e-4

    def test_bottom_equilibrium(self):
        x, v = 0.5, 0.0
        for s in range(200):
            x, v = flow_step(PEND, None, x, v, s * 0.05, 0.05)
        assert x == pytest.approx(0.5, abs=1e-12)
        assert abs(v) < 1e-12

    def test_energy_nearly_conserved(self):
        x, v = 0.3, 1.0
        e0 = v * v / 2 + math.cos(2 * math.pi * x)
        for s in range(400):
            x, v = flow_step(PEND, None, x, v, s * 0.01, 0.01)
        assert v * v / 2 + math.cos(2 * math.pi * x) == pytest.approx(e0, abs=1e-3)

    def test_uniform_form_does_not_change_flow(self):
        a = flow_step(PEND, None, 0.3, 0.4, 0.0, 0.05)
        b = flow_step(PEND, OneForm(0.8), 0.3, 0.4, 0.0, 0.05)
        assert a[0] == pytest.approx(b[0], abs=1e-13) and a[1] == pytest.approx(b[1], abs=1e-13)

    def test_genfun_rejected(self):
        with pytest.raises(UnsupportedOperation):
            flow_step(LagrangianSpec.standard_map(1.0), None, 0.0, 0.0, 0.0, 1.0)


class TestProperties:
    @given(unit, reals, unit)
    def test_periodicity(self, x, v, t):
        spec = LagrangianSpec.mechanical([(1, 1, 0.7, 0.2), (2, 0, 0.1, -0.3)])
        base = eval_lagrangian(spec, x, v, t)
        assert eval_lagrangian(spec, x + 1, v, t) == pytest.approx(base, abs=1e-12)
        assert eval_lagrangian(spec, x, v, t + 1) == pytest.approx(base, abs=1e-12)

    def test_periodicity_on_grid_exact(self):
        x = np.arange(64) / 64
        base = eval_lagrangian(PEND, x, 0.3, 0.0)
        assert np.allclose(eval_lagrangian(PEND, x + 1, 0.3, 0.0), base, rtol=0, atol=1e-12)
        assert np.array_equal(eval_lagrangian(PEND, x, 0.3, 1.0), base)

    @given(unit, reals, st.floats(0.01, 1.0))
    def test_convex_in_velocity(self, x, v, eps):
        f = lambda w: eval_lagrangian(PEND, x, w, 0.0)
        second = (f(v + eps) - 2 * f(v) + f(v - eps)) / (eps * eps)
        assert second >= 1 - 1e-8

    @given(st.lists(st.floats(-0.45, 0.45), min_size=2, max_size=12), unit, st.floats(-2, 2))
    def test_exact_form_invisible_on_closed_loops(self, steps, x0, c):
        # c g dx - c dx has class zero: it is exact, so it telescopes on closed loops
        steps = np.asarray(steps) - np.mean(steps)
        X = x0 + np.concatenate(([0.0], np.cumsum(steps)))
        X[-1] = X[0]
        exact = (OneForm(c, bump_density(64)), OneForm(-c))
        total = 0.0
        plain = 0.0
        for a, b in zip(X[:-1], X[1:]):
            m = int(math.floor(b)) - int(math.floor(a))
            total += discrete_lagrangian(PEND, exact, a % 1, b % 1, m, 0.0, 0.5, winding_cap=10)
            plain += discrete_lagrangian(PEND, None, a % 1, b % 1, m, 0.0, 0.5, winding_cap=10)
        assert total == pytest.approx(plain, abs=1e-12)

    @given(unit, unit, st.integers(-2, 2))
    def test_free_symmetry(self, x, x2, m):
        a = discrete_lagrangian(FREE, None, x, x2, m, 0.0, 1.0)
        b = discrete_lagrangian(FREE, None, x2, x, -m, 0.0, 1.0)
        assert a == pytest.approx(b, rel=1e-14, abs=1e-15)


class TestOneForm:
    def test_unit_mass_required(self):
        with pytest.raises(ValueError):
            OneForm(1.0, np.full(32, 2.0))

    def test_negative_density_rejected(self):
        g = np.ones(32)
        g[0], g[1] = -1.0, 3.0
        with pytest.raises(ValueError):
            OneForm(1.0, g)

    def test_ramp_order(self):
        with pytest.raises(ValueError):
            OneForm(1.0, ramp=(1.0, 1.0))

    def test_ramp_profile(self):
        f = OneForm(1.0, ramp=(2.0, 3.0))
        assert f.profile(2.0) == 0.0 and f.profile(3.0) == 1.0 and f.profile(2.5) == 0.5
        s = np.linspace(1.5, 3.5, 101)
        assert np.all(np.diff(f.profile(s)) >= 0)

    @given(st.floats(-3, 3))
    def test_cumulative_lifts(self, x):
        f = OneForm(1.0, bump_density(64))
        assert f.cumulative(x + 1) == pytest.approx(f.cumulative(x) + 1, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_cumulative_is_integral(self, a, b):
        f = OneForm(1.0, bump_density(32))
        ref, _ = quad(lambda s: float(f.density_at(s)), a, b, points=np.arange(33) / 32, limit=200)
        assert f.cumulative(b) - f.cumulative(a) == pytest.approx(ref, abs=1e-10)


class TestGrid:
    def test_bounds(self):
        with pytest.raises(GridError):
            GridSpec(8)
        with pytest.raises(GridError):
            GridSpec(16, 0)
        with pytest.raises(GridError):
            GridSpec(16, 1, 0)

    def test_windings_order(self):
        assert list(GridSpec(16, 1, 2).windings()) == [0, -1, 1, -2, 2]

    def test_snap(self):
        g = GridSpec(16)
        assert g.snap(0.5) == 8 and g.snap(0.99) == 0 and g.snap(-0.0625) == 15

    def test_genfun_needs_single_substep(self):
        with pytest.raises(GridError):
            check_grid(LagrangianSpec.standard_map(2.0), GridSpec(32, 2))

    def test_convexity_threshold(self):
        strong = LagrangianSpec.pendulum(50.0)
        with pytest.raises(GridError):
            check_grid(strong, GridSpec(32, 1))
        check_grid(strong, GridSpec(32, 32))
