import json
import math

import numpy as np
import pytest

from twrn.estimators import (
    ML,
    MSEV,
    EstimateReport,
    MissingPilotsError,
    estimate,
    estimate_by_grid,
    ml_objective,
    msev_objective,
    recover_nuisance,
    resolve_phase_from_pilots,
    residual_view,
    sample_average_initializer,
    sample_envelope_variance,
)
from twrn.model import ChannelState, ObservationBatch, SystemConfig, draw_channel, make_stream, simulate_batch
from twrn.optimize import SolverConfig

TWO_PI = 2 * math.pi


def angle_gap(x, y):
    return abs((x - y + math.pi) % TWO_PI - math.pi)


def noiseless(seed, cfg=SystemConfig(), pilots=0):
    ch = draw_channel(make_stream(seed, role="channel"))
    return ch, simulate_batch(cfg, ch, make_stream(seed), pilot_count=pilots, noiseless=True)


class TestInitializer:
    def test_exact_when_b_zero(self):
        cfg = SystemConfig(n=40)
        ch = ChannelState(h=0.7 - 0.2j, g=0j)
        batch = simulate_batch(cfg, ch, make_stream(0), noiseless=True)
        assert sample_average_initializer(batch) == pytest.approx(ch.a, abs=1e-14)

    def test_exact_with_cancelling_cross_term(self):
        cfg = SystemConfig(n=4)
        ch = ChannelState(h=1.1 + 0.3j, g=-0.4 + 0.9j)
        q = np.exp(1j * np.pi / 4)
        t1 = np.array([q, q, q, q])
        t2 = np.array([q, -q, q, -q])  # sum conj(t1) t2 = 0
        amp = cfg.amplification()
        batch = ObservationBatch(t1=t1, t2=t2, z=amp * (ch.a * t1 + ch.b * t2), config=cfg)
        assert sample_average_initializer(batch) == pytest.approx(ch.a, abs=1e-14)

    def test_unbiased_monte_carlo(self):
        cfg = SystemConfig(n=20).with_snr_db(10)
        ch = ChannelState(h=0.8 + 0.5j, g=0.6 - 0.9j)
        vals = np.array([sample_average_initializer(simulate_batch(cfg, ch, make_stream(3, j)))
                         for j in range(10_000)])
        se = np.std(vals) / math.sqrt(len(vals))
        assert abs(vals.mean() - ch.a) < 3 * se * math.sqrt(2)


class TestResidualsAndNuisance:
    def test_residual_view(self):
        _, batch = noiseless(1)
        view = residual_view(batch, 0.2 + 0.1j)
        assert np.array_equal(view.envelopes, np.abs(view.cleaned))
        assert view.candidate == 0.2 + 0.1j

    def test_noiseless_nuisance_exact(self):
        ch, batch = noiseless(2)
        b_mag, psi = recover_nuisance(batch, ch.a)
        assert b_mag == pytest.approx(abs(ch.b), rel=1e-12)
        expected = np.mod(np.angle(batch.t2) + ch.phi_b, TWO_PI)
        assert max(angle_gap(p, e) for p, e in zip(psi, expected)) < 1e-12

    def test_psi_range(self):
        _, batch = noiseless(3)
        _, psi = recover_nuisance(batch, 0.5)
        assert np.all((psi >= 0) & (psi < TWO_PI))

    def test_msev_objective_is_envelope_variance(self):
        _, batch = noiseless(4)
        for u in (0.1, -0.3 + 2j):
            assert msev_objective(batch, u) == sample_envelope_variance(batch, u)


class TestEstimate:
    @pytest.mark.parametrize("seed", range(5))
    def test_msev_noiseless_exact(self, seed):
        # The default gradient tolerance (1e-8) alone leaves |a_hat - a| ~ 1e-8
        # on this quadratic basin; a tighter tolerance exposes the exact fixed point.
        ch, batch = noiseless(seed, pilots=4)
        rep = estimate(batch, MSEV, SolverConfig(grad_tolerance=1e-12))
        assert abs(rep.a_hat - ch.a) < 1e-9
        assert rep.b_mag_hat == pytest.approx(abs(ch.b), abs=1e-9)
        assert angle_gap(rep.phi_b_hat, ch.phi_b % TWO_PI) < 1e-8

    @pytest.mark.parametrize("seed", range(3))
    def test_ml_noiseless_exact_at_vanishing_noise(self, seed):
        # The log barrier shifts the ML minimiser by O(sigma^2) even without
        # noise, so exactness is checked in the sigma^2 -> 0 limit.
        ch, batch = noiseless(seed, SystemConfig(sigma2=1e-12))
        rep = estimate(batch, ML)
        assert abs(rep.a_hat - ch.a) < 1e-9
        assert rep.b_mag_hat == pytest.approx(abs(ch.b), abs=1e-9)

    def test_ml_biased_at_finite_noise_level(self):
        ch, batch = noiseless(0, SystemConfig(sigma2=0.1))
        assert abs(estimate(batch, ML).a_hat - ch.a) > 1e-3

    def test_finite_difference_mode_agrees(self):
        cfg = SystemConfig().with_snr_db(15)
        ch = draw_channel(make_stream(5, role="channel"))
        batch = simulate_batch(cfg, ch, make_stream(5))
        for method in (ML, MSEV):
            a = estimate(batch, method).a_hat
            b = estimate(batch, method, SolverConfig(gradient="finite_difference")).a_hat
            assert abs(a - b) < 1e-5

    def test_objective_not_above_start_or_truth(self):
        cfg = SystemConfig().with_snr_db(10)
        for seed in range(10):
            ch = draw_channel(make_stream(seed, role="channel"))
            batch = simulate_batch(cfg, ch, make_stream(seed))
            start = sample_average_initializer(batch)
            for method, f in ((ML, ml_objective), (MSEV, msev_objective)):
                rep = estimate(batch, method)
                assert rep.optimizer_stats.converged
                assert rep.objective_value <= f(batch, start) + 1e-12
                assert rep.objective_value <= f(batch, ch.a) * (1 + 1e-9) + 1e-12

    def test_nuisance_coupling_bitwise(self):
        cfg = SystemConfig().with_snr_db(12)
        ch = draw_channel(make_stream(7, role="channel"))
        rep = estimate(simulate_batch(cfg, ch, make_stream(7)), MSEV)
        batch = simulate_batch(cfg, ch, make_stream(7))
        b_mag, psi = recover_nuisance(batch, rep.a_hat)
        assert b_mag == rep.b_mag_hat
        assert psi.tobytes() == rep.psi_hat.tobytes()
        zt = batch.z - batch.amplification * rep.a_hat * batch.t1
        assert np.allclose(psi, np.mod(np.angle(zt), TWO_PI), atol=0)

    def test_provided_initializer(self):
        ch, batch = noiseless(8)
        rep = estimate(batch, MSEV, SolverConfig(initializer=ch.a))
        assert rep.optimizer_stats.iterations == 0
        assert rep.a_hat == ch.a

    def test_unknown_method(self):
        _, batch = noiseless(0)
        with pytest.raises(ValueError):
            estimate(batch, "LS")

    def test_nonconvergence_is_reported(self):
        cfg = SystemConfig().with_snr_db(5)
        batch = simulate_batch(cfg, draw_channel(make_stream(1)), make_stream(1))
        rep = estimate(batch, ML, SolverConfig(max_iterations=1))
        assert rep.optimizer_stats.converged is False

    def test_msev_beats_ml_on_average_at_15db(self):
        cfg = SystemConfig(p1=4, p2=4, pr=4).with_snr_db(15)
        err = {ML: [], MSEV: []}
        for r in range(100):
            ch = draw_channel(make_stream(0, r, role="channel"))
            batch = simulate_batch(cfg, ch, make_stream(0, r, 0))
            for method in err:
                err[method].append(abs(estimate(batch, method).a_hat - ch.a) ** 2)
        assert np.mean(err[MSEV]) < np.mean(err[ML])


class TestPilots:
    def test_single_pilot_noiseless(self):
        ch, batch = noiseless(9, pilots=1)
        rep = estimate(batch, MSEV, SolverConfig(grad_tolerance=1e-12))
        assert angle_gap(resolve_phase_from_pilots(rep, batch), ch.phi_b) < 1e-9

    def test_missing_pilots(self):
        _, batch = noiseless(10)
        rep = estimate(batch, MSEV)
        assert rep.phi_b_hat is None
        with pytest.raises(MissingPilotsError):
            resolve_phase_from_pilots(rep, batch)

    def test_range(self):
        ch, batch = noiseless(11, pilots=4)
        phi = resolve_phase_from_pilots(estimate(batch, MSEV), batch)
        assert 0 <= phi < TWO_PI

    @staticmethod
    def _mean_pilot_error(channel, pilots, trials=1000):
        cfg = SystemConfig(n=100).with_snr_db(20)
        errors = []
        for j in range(trials):
            batch = simulate_batch(cfg, channel, make_stream(j), pilot_count=pilots)
            errors.append(angle_gap(estimate(batch, MSEV).phi_b_hat, channel.phi_b))
        # Small-noise prediction: per-pilot phase error ~ N(0, s^2) with
        # s^2 = sigma^2 (A^2|a|+1) / (2 A^2 |b|^2 P2), averaged over the pilots.
        s = math.sqrt(cfg.effective_noise(channel.a) / (2 * cfg.amplification() ** 2 * abs(channel.b) ** 2 * cfg.p2))
        return float(np.mean(errors)), math.sqrt(2 / math.pi) * s / math.sqrt(pilots)

    def test_monte_carlo_matches_small_noise_prediction(self):
        measured, predicted = self._mean_pilot_error(ChannelState(1 + 0j, 1 + 0j), 4)
        assert 0.95 < measured / predicted < 1.15

    def test_more_pilots_shrink_error(self):
        four, _ = self._mean_pilot_error(ChannelState(1 + 0j, 1 + 0j), 4, trials=400)
        sixteen, _ = self._mean_pilot_error(ChannelState(1 + 0j, 1 + 0j), 16, trials=400)
        assert sixteen / four == pytest.approx(0.5, rel=0.15)

    def test_mean_error_below_005_at_20db(self):
        measured, predicted = self._mean_pilot_error(ChannelState(1 + 0j, 1.5 + 0j), 4)
        assert predicted < 0.05 and measured < 0.05


class TestGridEstimate:
    def test_noiseless_within_one_step(self):
        ch, batch = noiseless(12)
        rep = estimate_by_grid(batch, MSEV)
        assert abs(rep.a_hat.real - ch.a.real) <= 1e-3 + 1e-12
        assert abs(rep.a_hat.imag - ch.a.imag) <= 1e-3 + 1e-12

    def test_coarser_step(self):
        ch, batch = noiseless(13)
        rep = estimate_by_grid(batch, MSEV, step=5e-3, coarse_step=5e-2)
        assert abs(rep.a_hat - ch.a) <= 5e-3 * math.sqrt(2)


class TestSerialization:
    def test_json_and_csv(self):
        ch, batch = noiseless(14, pilots=2)
        rep = estimate(batch, MSEV)
        data = json.loads(rep.to_json())
        assert complex(*data["a_hat"]) == rep.a_hat
        assert len(data["psi_hat"]) == batch.n
        assert data["optimizer_stats"]["converged"] is True
        row = rep.csv_row()
        assert set(row) == set(EstimateReport.CSV_FIELDS)
        assert float(row["re_a_hat"]) == rep.a_hat.real
