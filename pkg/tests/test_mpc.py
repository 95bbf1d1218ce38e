import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lodempc.gp import JITTER, condition
from lodempc.linearize import NonlinearSystem
from lodempc.lodegp import Hyperparameters, build_lodegp_model
from lodempc.mpc import (
    BoxConstraints,
    ConstraintMode,
    ControllerState,
    MpcConfig,
    PlantDomainError,
    assemble_dataset,
    make_endpoint,
    make_init_point,
    make_soft_constraints,
    mpc_step,
    run_closed_loop,
)

from conftest import P, reference_model


class TestBox:
    def test_invalid(self):
        with pytest.raises(ValueError):
            BoxConstraints([1.0], [0.0])

    def test_band(self):
        b = BoxConstraints.band([0.5, 2e-4], 0.1)
        np.testing.assert_allclose(b.z_min, [0.45, 1.8e-4])
        np.testing.assert_allclose(b.z_max, [0.55, 2.2e-4])


class TestConfig:
    def test_endpoint_needs_time(self, lin1, box):
        with pytest.raises(ValueError):
            MpcConfig(np.zeros(3), box, use_endpoint=True)
        with pytest.raises(ValueError):
            MpcConfig(np.zeros(3), box, t_ref=-1.0, use_endpoint=True)

    def test_bad_dt(self, box):
        with pytest.raises(ValueError):
            MpcConfig(np.zeros(3), box, dt=0.0)

    def test_constraint_times(self, configs):
        np.testing.assert_allclose(configs["A"].constraint_times(), np.arange(1.0, 11.0))


class TestSoftConstraints:
    def test_physical_states(self):
        d = make_soft_constraints(BoxConstraints([0.0], [0.6]), [1.0])
        assert d.values[0, 0] == pytest.approx(0.3) and d.noise[0, 0] == pytest.approx(0.15)

    def test_physical_input(self):
        d = make_soft_constraints(BoxConstraints([0.0], [2e-4]), [1.0])
        assert d.values[0, 0] == pytest.approx(1e-4) and d.noise[0, 0] == pytest.approx(5e-5)

    def test_degenerate_box_is_a_pin(self, model):
        z = model.mean_shift + np.array([0.01, 0.0, 0.0])
        d = make_soft_constraints(BoxConstraints(z, z), [2.0])
        assert np.all(d.noise == 0)
        post = condition(model, d)
        assert np.max(np.abs(post.mean([2.0])[0] - z)) < 1e-4

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0, 1e3)), min_size=1, max_size=4),
           st.lists(st.floats(0, 20), min_size=1, max_size=5))
    def test_formulas(self, bounds, times):
        lo = np.array([a for a, _ in bounds])
        hi = lo + np.array([w for _, w in bounds])
        d = make_soft_constraints(BoxConstraints(lo, hi), times)
        assert len(d) == len(times)
        for p in d:
            np.testing.assert_array_equal(p.z, (hi + lo) / 2)
            np.testing.assert_array_equal(p.noise_var, (hi - lo) / 4)


class TestInitAndEndpoint:
    def test_init_point(self, lin0):
        d = make_init_point(0.0, lin0.x_e, lin0.u_e)
        assert len(d) == 1
        np.testing.assert_allclose(d.values[0], [0.26095, 0.13048, 4e-5], atol=1e-5)
        np.testing.assert_array_equal(d.noise[0], [1e-8, 1e-8, 1e-8])

    def test_init_at_prior_mean(self, model):
        post = condition(model, make_init_point(0.0, model.mean_shift[:2], model.mean_shift[2:]))
        np.testing.assert_allclose(post.mean([0.0, 7.0, -3.0]), np.tile(model.mean_shift, (3, 1)), atol=1e-15)

    def test_endpoint(self, lin1):
        z = np.concatenate([lin1.x_e, lin1.u_e])
        d = make_endpoint(100.0, z)
        assert d.times[0] == 100.0 and np.all(d.noise == 0)
        np.testing.assert_allclose(d.values[0], [0.58716, 0.29358, 6e-5], atol=1e-5)

    def test_endpoint_at_prior_mean_is_inert(self, model):
        # a lone endpoint at the prior mean has zero residual, so nothing moves
        post = condition(model, make_endpoint(40.0, model.mean_shift))
        grid = np.linspace(-20, 100, 13)
        np.testing.assert_array_equal(post.mean(grid), np.tile(model.mean_shift, (13, 1)))

    def test_endpoint_coexists_with_soft_point(self, model, lin0, box):
        # the endpoint sits on a soft-constraint time; its jitter-level noise wins
        z_end = model.mean_shift
        d = (make_init_point(0.0, lin0.x_e, lin0.u_e) | make_soft_constraints(box, [40.0])
             | make_endpoint(40.0, z_end))
        assert len(d) == 3 and list(d.times) == [0.0, 40.0, 40.0]
        post = condition(model, d)
        assert np.max(np.abs(post.mean([40.0])[0] - z_end)) < 1e-4

    def test_endpoint_pin_tightens_with_time_to_go(self, model, lin0, box):
        # an endpoint close to the init pin fights the ODE; the miss shrinks as it moves away
        miss = []
        for T in (10.0, 20.0, 40.0):
            d = make_init_point(0.0, lin0.x_e, lin0.u_e) | make_endpoint(T, model.mean_shift)
            miss.append(np.max(np.abs(condition(model, d).mean([T])[0] - model.mean_shift)))
        assert miss[0] > miss[1] > miss[2]


class TestAssemble:
    def test_counts(self, model, configs, lin0):
        for name, n in (("A", 11), ("B", 12), ("C", 11)):
            st_ = ControllerState(model, configs[name], u_prev=lin0.u_e)
            assert len(assemble_dataset(st_, lin0.x_e)) == n

    def test_endpoint_dropped_after_reference(self, model, configs, lin0):
        st_ = ControllerState(model, configs["B"], t=150.0, u_prev=lin0.u_e)
        assert len(assemble_dataset(st_, lin0.x_e)) == 11

    def test_relative_times(self, model, configs, lin0):
        st_ = ControllerState(model, configs["B"], t=30.0, u_prev=lin0.u_e)
        d = assemble_dataset(st_, lin0.x_e)
        assert d.times[0] == 0.0 and d.times[-1] == 70.0

    def test_band_mode(self, model, configs, lin0, lin1):
        d = assemble_dataset(ControllerState(model, configs["C"], u_prev=lin0.u_e), lin0.x_e)
        z_ref = np.concatenate([lin1.x_e, lin1.u_e])
        np.testing.assert_allclose(d.values[1], z_ref)
        np.testing.assert_allclose(d.noise[1], 0.2 * z_ref / 4)


class TestStep:
    def test_hold_phase(self, model, configs, lin1):
        st_ = ControllerState(model, configs["B"], t=120.0, u_prev=lin1.u_e)
        u = mpc_step(st_, lin1.x_e)
        assert np.array_equal(u, lin1.u_e)
        assert st_.t == 121.0

    def test_hold_phase_exact_for_any_state(self, model, configs, lin1):
        st_ = ControllerState(model, configs["B"], t=100.0, u_prev=np.array([0.0]))
        assert np.array_equal(mpc_step(st_, [0.1, 0.4]), configs["B"].z_ref[2:])

    def test_first_step_model_b(self, model, configs, lin0):
        st_ = ControllerState(model, configs["B"], u_prev=lin0.u_e)
        u = mpc_step(st_, lin0.x_e)
        assert u[0] > lin0.u_e[0]
        assert 0.0 <= u[0] <= P.u1_max
        np.testing.assert_array_equal(st_.u_prev, u)

    def test_init_pin_at_zero(self, model, configs, lin0):
        st_ = ControllerState(model, configs["A"], u_prev=lin0.u_e)
        post = condition(model, assemble_dataset(st_, lin0.x_e))
        z0 = np.concatenate([lin0.x_e, lin0.u_e])
        # the 1e-8 pin variance is a standard deviation of 1e-4, larger than u itself,
        # so the input is held only to that level
        assert np.max(np.abs(post.mean([0.0])[0] - z0)) <= 1e-4
        np.testing.assert_allclose(post.mean([0.0])[0, :2], lin0.x_e, atol=1e-6)

    def test_clamping_logged(self, model, configs, lin0, caplog):
        cfg = dataclasses.replace(configs["B"], t_ref=3.0)
        st_ = ControllerState(model, cfg, u_prev=lin0.u_e)
        with caplog.at_level(logging.WARNING, logger="lodempc.mpc"):
            u = mpc_step(st_, lin0.x_e)
        assert u[0] == P.u1_max and st_.u_raw[0] > P.u1_max
        assert st_.clamp_count == 1 and "clamped" in caplog.text

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0, 500))
    def test_shift_invariance(self, shift):
        m = reference_model()
        box = BoxConstraints([0.0, 0.0, 0.0], [0.6, 0.6, P.u1_max])
        cfg = MpcConfig(m.mean_shift, box, t_ref=100.0, use_endpoint=True)
        x = np.array([0.3, 0.15])
        st_ = ControllerState(m, cfg, t=20.0, u_prev=np.array([5e-5]))
        data = assemble_dataset(st_, x)
        u_rel = condition(m, data).mean([cfg.dt])[0, 2]
        u_abs = condition(m, data.shifted(20.0 + shift)).mean([20.0 + shift + cfg.dt])[0, 2]
        assert abs(u_rel - u_abs) <= 1e-10 * max(1.0, abs(u_rel)) + 1e-16


class TestClosedLoop:
    def test_equilibrium_invariance(self, plant, lin0):
        # a degenerate box at the equilibrium pins every point to the prior mean,
        # so all residuals vanish and the controller always returns u_e
        z = np.concatenate([lin0.x_e, lin0.u_e])
        m = build_lodegp_model(lin0, Hyperparameters(0.04, 20.0))
        cfg = MpcConfig(z, BoxConstraints(z, z))
        tr = run_closed_loop(plant, ControllerState(m, cfg, u_prev=lin0.u_e), lin0.x_e, 200.0)
        assert len(tr) == 201
        assert np.all(tr.u == lin0.u_e)
        assert np.max(np.abs(tr.x - lin0.x_e)) < 1e-9

    def test_timestamps(self, plant, model, configs, lin0):
        cfg = dataclasses.replace(configs["C"], dt=2.5)
        tr = run_closed_loop(plant, ControllerState(model, cfg, u_prev=lin0.u_e), lin0.x_e, 20.0)
        assert len(tr) == 9
        np.testing.assert_allclose(np.diff(tr.t), 2.5)
        assert tr.u.shape == (9, 1) and tr.u_raw.shape == (9, 1)

    def test_domain_error_keeps_trace(self, model, configs, lin0):
        # the right-hand side breaks down once tank 1 rises a little
        def rhs(x, u):
            if x[0] > lin0.x_e[0] + 1e-3:
                return np.array([np.nan, np.nan])
            return np.array([1e-4, 0.0]) + 0 * u[0]
        up = NonlinearSystem(2, 1, rhs)
        with pytest.raises(PlantDomainError) as ei:
            run_closed_loop(up, ControllerState(model, configs["A"], u_prev=lin0.u_e), lin0.x_e, 50.0)
        tr = ei.value.trace
        assert 1 <= len(tr) < 51
        np.testing.assert_array_equal(tr.x[0], lin0.x_e)

    def test_out_of_domain_state(self, model, configs, lin0):
        class Leaky(NonlinearSystem):
            def clip(self, x):
                return np.asarray(x, float)
        up = Leaky(2, 1, lambda x, u: np.array([1e-3, 0.0]) + 0 * u[0],
                   state_lower=np.zeros(2), state_upper=np.array([0.2625, 1.0]))
        with pytest.raises(PlantDomainError) as ei:
            run_closed_loop(up, ControllerState(model, configs["A"], u_prev=lin0.u_e), lin0.x_e, 10.0)
        assert len(ei.value.trace) == 2
