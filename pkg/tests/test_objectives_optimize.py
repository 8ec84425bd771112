import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twrn.model import ChannelState, ObservationBatch, SystemConfig, draw_channel, make_stream, simulate_batch
from twrn.objectives import (
    SingularPointError,
    cleaned,
    gradient_for,
    ml_gradient,
    ml_objective,
    msev_gradient,
    objective_for,
    sample_envelope_variance,
)
from twrn.optimize import (
    DivergedError,
    GridSpec,
    SolverConfig,
    analytic_gradient,
    finite_difference_gradient,
    grid_search,
    multiscale_grid_search,
    steepest_descent,
)

CFG = SystemConfig(n=60)


def random_batch(seed, cfg=CFG, noiseless=False):
    ch = draw_channel(make_stream(seed, role="channel"))
    return ch, simulate_batch(cfg, ch, make_stream(seed), noiseless=noiseless)


def rel_err(g, ref):
    g, ref = np.asarray(g), np.asarray(ref)
    return np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-300)


class TestObjectives:
    def test_cleaned_shapes(self):
        _, batch = random_batch(0)
        assert cleaned(batch, 0.3).shape == (60,)
        assert cleaned(batch, np.array([0.1, 0.2j, 1])).shape == (3, 60)

    def test_vectorised_matches_scalar(self):
        _, batch = random_batch(1)
        us = np.array([0.1 + 0.2j, -1.0, 2j])
        for fn in (sample_envelope_variance, ml_objective):
            vec = fn(batch, us)
            assert np.allclose(vec, [fn(batch, u) for u in us], rtol=1e-14)

    def test_envelope_variance_definition(self):
        _, batch = random_batch(2)
        u = 0.4 - 0.7j
        env = np.abs(batch.z - batch.amplification * u * batch.t1)
        expected = np.sum((env - env.mean()) ** 2) / (batch.n - 1)
        assert sample_envelope_variance(batch, u) == pytest.approx(expected, rel=1e-13)

    def test_zero_at_truth_when_noiseless(self):
        ch, batch = random_batch(3, noiseless=True)
        assert sample_envelope_variance(batch, ch.a) < 1e-28

    def test_identical_samples_zero(self):
        batch = simulate_batch(CFG, ChannelState(1, 1), make_stream(0)).transformed(
            z=np.full(60, 1 + 1j), t1=np.full(60, 1 + 0j))
        assert sample_envelope_variance(batch, 0) == 0.0

    def test_needs_two_samples(self):
        short = ObservationBatch(t1=[1 + 0j], t2=[1 + 0j], z=[0.5j], config=SystemConfig(n=2))
        with pytest.raises(ValueError):
            sample_envelope_variance(short, 0)

    def test_ml_at_zero(self):
        _, batch = random_batch(4)
        assert ml_objective(batch, 0) == pytest.approx((batch.n - 1) * sample_envelope_variance(batch, 0) / CFG.sigma2)

    def test_ml_noiseless_at_truth(self):
        ch, batch = random_batch(5, noiseless=True)
        amp2 = batch.amplification ** 2
        assert ml_objective(batch, ch.a) == pytest.approx(batch.n * math.log(amp2 * abs(ch.a) + 1), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_ml_decomposition(self, re, im):
        _, batch = random_batch(6)
        u = complex(re, im)
        n, growth = batch.n, batch.amplification ** 2 * abs(u) + 1
        g = sample_envelope_variance(batch, u) / CFG.sigma2
        expected = n * g / growth * ((n - 1) / n) + n * math.log(growth)
        assert ml_objective(batch, u) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.floats(-2, 2), st.floats(-2, 2))
    def test_rotation_invariance(self, theta, re, im):
        _, batch = random_batch(7)
        rot = np.exp(1j * theta)
        turned = batch.transformed(z=batch.z * rot, t1=batch.t1 * rot)
        u = complex(re, im)
        assert sample_envelope_variance(turned, u) == pytest.approx(sample_envelope_variance(batch, u), rel=1e-9)

    def test_dispatch(self):
        assert objective_for("msev") is sample_envelope_variance
        assert objective_for("ML") is ml_objective
        with pytest.raises(ValueError):
            gradient_for("LS")


class TestGradients:
    @pytest.mark.parametrize("method", ["ML", "MSEV"])
    def test_against_finite_differences(self, method):
        rng = np.random.default_rng(11)
        f = objective_for(method)
        for seed in range(15):
            _, batch = random_batch(100 + seed)
            u = complex(*rng.normal(0, 1, 2))
            fd = finite_difference_gradient(lambda x: f(batch, x), u, 1e-6)
            assert rel_err(analytic_gradient(method, batch, u), fd) < 1e-5

    def test_msev_zero_at_noiseless_truth(self):
        ch, batch = random_batch(8, noiseless=True)
        assert np.hypot(*msev_gradient(batch, ch.a)) < 1e-9

    def test_conjugation_equivariance(self):
        _, batch = random_batch(9)
        mirrored = batch.transformed(z=np.conj(batch.z), t1=np.conj(batch.t1), t2=np.conj(batch.t2))
        u = 0.3 + 0.8j
        g_re, g_im = msev_gradient(batch, u)
        m_re, m_im = msev_gradient(mirrored, np.conj(u))
        assert m_re == pytest.approx(g_re, rel=1e-12)
        assert m_im == pytest.approx(-g_im, rel=1e-12)

    def test_ml_singular_point(self):
        _, batch = random_batch(10)
        with pytest.raises(SingularPointError, match="perturbed"):
            ml_gradient(batch, 0)
        with pytest.raises(SingularPointError):
            analytic_gradient("ML", batch, 0)
        g = ml_gradient(batch, 0, singular="subgradient")
        # Only the smooth spread term survives: its gradient divided by sigma^2.
        s_re, s_im = msev_gradient(batch, 0)
        assert g[0] == pytest.approx((batch.n - 1) * s_re / CFG.sigma2, rel=1e-12)
        assert g[1] == pytest.approx((batch.n - 1) * s_im / CFG.sigma2, rel=1e-12)

    def test_zero_residual_contributes_nothing(self):
        cfg = SystemConfig(n=3)
        batch = simulate_batch(cfg, ChannelState(1, 1), make_stream(0))
        amp = batch.amplification
        u = 0.5 + 0.5j
        z = batch.z.copy()
        z[0] = amp * u * batch.t1[0]
        batch = batch.transformed(z=z)
        g = msev_gradient(batch, u)
        assert all(math.isfinite(x) for x in g)


def bowl(c):
    return (lambda u: abs(u - c) ** 2, lambda u: (2 * (u - c).real, 2 * (u - c).imag))


class TestSteepestDescent:
    @pytest.mark.parametrize("start", [0j, 10 - 4j, -3j])
    def test_quadratic_bowl(self, start):
        f, g = bowl(1.5 - 0.5j)
        u, stats = steepest_descent(f, g, start)
        assert abs(u - (1.5 - 0.5j)) < 1e-8
        assert stats.converged and stats.iterations <= 500

    def test_armijo_monotone_trace(self):
        ch, batch = random_batch(12)
        f = lambda u: ml_objective(batch, u)  # noqa: E731
        g = lambda u: ml_gradient(batch, u, singular="subgradient")  # noqa: E731
        _, stats = steepest_descent(f, g, 0.1 + 0.1j)
        trace = np.array(stats.objective_trace)
        assert np.all(np.diff(trace) <= 0)
        assert stats.line_search_steps >= stats.iterations

    def test_accepted_steps_satisfy_armijo(self):
        _, batch = random_batch(13)
        cfg = SolverConfig()
        visited = []

        def f(u):
            return sample_envelope_variance(batch, u)

        def g(u):
            visited.append(u)
            return msev_gradient(batch, u)

        steepest_descent(f, g, 0j, cfg)
        for u, nxt in zip(visited, visited[1:]):
            gr = complex(*msev_gradient(batch, u))
            t = abs(nxt - u) / abs(gr)
            assert f(nxt) <= f(u) - cfg.backtrack_alpha * t * abs(gr) ** 2 + 1e-15

    def test_msev_noiseless_recovers_truth(self):
        ch, batch = random_batch(14, noiseless=True)
        start = np.sum(np.conj(batch.t1) * batch.z) / (batch.n * batch.amplification * CFG.p1)
        u, stats = steepest_descent(lambda x: sample_envelope_variance(batch, x),
                                    lambda x: msev_gradient(batch, x), start)
        assert abs(u - ch.a) < 1e-6

    def test_budget_exhaustion_reported(self):
        f, g = bowl(3 + 3j)
        _, stats = steepest_descent(f, g, 0j, SolverConfig(max_iterations=1, initial_step=0.1))
        assert not stats.converged and stats.iterations == 1

    def test_diverged(self):
        with pytest.raises(DivergedError) as info:
            steepest_descent(lambda u: math.nan, lambda u: (0.0, 0.0), 1j)
        assert info.value.last_iterate == 1j
        with pytest.raises(DivergedError):
            steepest_descent(lambda u: 0.0, lambda u: (math.inf, 0.0), 1j)

    def test_stall_reported_as_converged(self):
        # A kink at the minimum: the gradient never vanishes but no step helps.
        f = lambda u: abs(u.real) + abs(u.imag)  # noqa: E731
        g = lambda u: (math.copysign(1.0, u.real), math.copysign(1.0, u.imag))  # noqa: E731
        u, stats = steepest_descent(f, g, 0.25 + 0.25j)
        assert stats.converged and stats.stalled
        assert abs(u) < 1e-12

    @pytest.mark.parametrize("kwargs", [{"grad_tolerance": 0}, {"max_iterations": 0}, {"backtrack_alpha": 0.5},
                                        {"backtrack_beta": 1.0}, {"gradient": "bfgs"}, {"initializer": "zero"}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)

    def test_config_round_trip(self):
        for cfg in (SolverConfig(), SolverConfig(initializer=1 - 2j, max_iterations=9)):
            assert SolverConfig.from_dict(cfg.to_dict()) == cfg


class TestGridSearch:
    def test_exact_on_lattice(self):
        c = 0.25 - 0.5j
        grid = GridSpec(center=c, half_width=0.05, step=1e-3)
        assert grid_search(lambda u: np.abs(u - c) ** 2, grid) == c

    def test_constant_tie_break(self):
        grid = GridSpec(center=0.01 + 0.02j, half_width=0.04, step=0.01)
        best = grid_search(lambda u: np.zeros(np.shape(u)), grid)
        assert abs(best) < 1e-15

    def test_tie_break_phase(self):
        # Two symmetric minima with equal modulus: the smaller phase in [0, 2 pi) wins.
        grid = GridSpec(center=0j, half_width=1.0, step=0.25)
        best = grid_search(lambda u: np.minimum(np.abs(u - 0.5j), np.abs(u + 0.5j)), grid)
        assert best == pytest.approx(0.5j)

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(center=0j, half_width=0.003, step=1e-3)
        with pytest.raises(ValueError):
            GridSpec(center=0j, half_width=-1.0)
        g = GridSpec.around(2 + 0j)
        assert g.half_width == 6.0 and g.step == 1e-3
        assert GridSpec.from_dict(g.to_dict()) == g

    def test_multiscale_equals_exhaustive_on_smooth_objective(self):
        _, batch = random_batch(15, SystemConfig(n=40, sigma2=0.01))
        f = lambda u: sample_envelope_variance(batch, u)  # noqa: E731
        grid = GridSpec(center=0j, half_width=0.3, step=1e-3)
        coarse = GridSpec(center=0j, half_width=3.0, step=0.01)
        guess = grid_search(f, coarse)
        local = GridSpec(center=guess, half_width=0.03, step=1e-3)
        assert multiscale_grid_search(f, local, coarse_step=0.005) == grid_search(f, local)
        assert grid.points_per_axis == 601

    def test_noiseless_msev_grid_within_one_step(self):
        ch, batch = random_batch(16, noiseless=True)
        grid = GridSpec.around(ch.a + 0.3)
        best = multiscale_grid_search(lambda u: sample_envelope_variance(batch, u), grid)
        assert abs(best.real - ch.a.real) <= 1e-3 and abs(best.imag - ch.a.imag) <= 1e-3

    def test_result_on_fine_lattice(self):
        _, batch = random_batch(17)
        grid = GridSpec(center=0.1234 + 0.5678j, half_width=1.0, step=1e-3)
        best = multiscale_grid_search(lambda u: sample_envelope_variance(batch, u), grid)
        k = (best - grid.center) / grid.step
        assert abs(k.real - round(k.real)) < 1e-6 and abs(k.imag - round(k.imag)) < 1e-6

    def test_descent_never_much_worse_than_grid(self):
        cfg = SystemConfig(n=100).with_snr_db(15)
        for seed in range(5):
            ch, batch = random_batch(200 + seed, cfg)
            f = lambda u: sample_envelope_variance(batch, u)  # noqa: E731
            start = np.sum(np.conj(batch.t1) * batch.z) / (batch.n * batch.amplification * cfg.p1)
            u_sd, _ = steepest_descent(f, lambda x: msev_gradient(batch, x), start)
            u_grid = multiscale_grid_search(f, GridSpec.around(start))
            lipschitz = np.hypot(*finite_difference_gradient(f, u_grid)) + 1e-9
            assert abs(u_sd - u_grid) <= 2e-3 * math.sqrt(2)
            assert f(u_grid) <= f(u_sd) + lipschitz * 1e-3 * math.sqrt(2)
