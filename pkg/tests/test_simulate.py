import numpy as np
import pytest

from conftest import TIER1, TIER2, small_params
from fxmm.errors import InsufficientDataError, NoDataError, ValidationError
from fxmm.flow import SizeLadder, TierIntensity, trade_probability
from fxmm.hjb import StrategyTable
from fxmm.simulate import (FrontierResult, FrontierRow, SimConfig, SimMetrics,
                           apply_perturbation, fraction_below_curve,
                           frontier_spline, max_expected_pnl, perturb_strategy,
                           risk_neutralization_time, simulate, volume_shares)


def flat_strategy(params, quote=0.0, hedge=0.0):
    nq = params.grid_points
    n_tiers = len(params.tiers)
    n_sizes = len(params.ladder.sizes)
    return StrategyTable(
        params.q_grid, np.asarray(params.ladder.sizes, dtype=float),
        np.full((n_tiers, n_sizes, nq), quote),
        np.full((n_tiers, n_sizes, nq), quote),
        np.full(nq, hedge))


def zero_flow_params(**overrides):
    tiers = [TierIntensity(TIER1, (0.0, 0.0, 0.0)),
             TierIntensity(TIER2, (0.0, 0.0, 0.0))]
    return small_params(tiers=tiers, **overrides)


class TestTrivialPaths:
    def test_no_flow_no_hedge(self):
        params = zero_flow_params()
        cfg = SimConfig(params=params, strategy=flat_strategy(params),
                        horizon_days=0.05, n_paths=4, seed=1)
        rec, metrics = simulate(cfg)
        assert np.all(rec.pnl == 0.0)
        assert np.all(rec.q_final == 0.0)
        assert np.all(rec.cash_final == 0.0)
        with pytest.raises(NoDataError):
            volume_shares(metrics)

    def test_constant_hedge_quadrature(self):
        # no arrivals, no vol, no impact: cash is minus the hedge notional and
        # its execution cost integrated over the horizon, exactly
        params = zero_flow_params(sigma=1e-12, impact_k=0.0)
        v = 120.0
        cfg = SimConfig(params=params, strategy=flat_strategy(params, hedge=v),
                        horizon_days=0.01, n_paths=2, seed=2)
        rec, _ = simulate(cfg)
        horizon = cfg.n_steps * cfg.step_days
        cost_rate = params.cost.rate(v)
        expected = -(v + cost_rate * 1e-4) * horizon
        assert rec.cash_final[0] == pytest.approx(expected, rel=1e-9)
        assert rec.q_final[0] == pytest.approx(v * horizon, rel=1e-12)

    def test_hedge_clamped_at_bound(self):
        params = zero_flow_params(impact_k=0.0)
        cfg = SimConfig(params=params, strategy=flat_strategy(params, hedge=50000.0),
                        horizon_days=0.01, n_paths=1, seed=3)
        rec, _ = simulate(cfg)
        assert rec.q_final[0] == pytest.approx(params.q_bound)


class TestArrivals:
    def test_poisson_counts_within_3se(self):
        params = small_params(q_bound=250.0, grid_points=501)
        d0 = 0.1
        cfg = SimConfig(params=params, strategy=flat_strategy(params, quote=d0),
                        horizon_days=0.01, n_paths=300, seed=4, compute_acf=False)
        rec, _ = simulate(cfg)
        counts = rec.fill_counts.sum(axis=0)
        n_sizes = len(params.ladder.sizes)
        for tn, tier in enumerate(params.tiers):
            f = trade_probability(d0, tier.shape)
            for side in range(2):
                for k in range(n_sizes):
                    c = (tn * 2 + side) * n_sizes + k
                    mu = tier.lambda_by_size[k] * f * 0.01 * cfg.n_paths
                    assert abs(counts[c] - mu) <= 3.0 * np.sqrt(mu), (
                        f"combo {c}: {counts[c]} vs {mu}")

    def test_turnover_saturates_at_total_intensity(self):
        # quoting far through mid fills nearly every prospective client, so
        # realized turnover matches the candidate-flow cap to sampling noise
        params = small_params(q_bound=250.0, grid_points=501)
        cfg = SimConfig(params=params, strategy=flat_strategy(params, quote=-5.0),
                        horizon_days=0.02, n_paths=30, seed=5, compute_acf=False)
        rec, metrics = simulate(cfg)
        max_turnover = sum(2.0 * z * lam for t in params.tiers
                           for z, lam in zip(params.ladder.sizes, t.lambda_by_size))
        scale = cfg.n_paths * 0.02
        var = sum(2.0 * z * z * lam for t in params.tiers
                  for z, lam in zip(params.ladder.sizes, t.lambda_by_size)) / scale
        assert abs(metrics.client_turnover - max_turnover) <= 4.0 * np.sqrt(var)

    def test_turnover_below_cap_at_moderate_quotes(self, small_solution,
                                                   small_strategy):
        params, _, _ = small_solution
        cfg = SimConfig(params=params, strategy=small_strategy,
                        horizon_days=0.2, n_paths=20, seed=15, compute_acf=False)
        _, metrics = simulate(cfg)
        max_turnover = sum(2.0 * z * lam for t in params.tiers
                           for z, lam in zip(params.ladder.sizes, t.lambda_by_size))
        assert metrics.client_turnover < max_turnover

    def test_inventory_bound_respected(self):
        params = small_params()  # tight 25 M EUR bound
        cfg = SimConfig(params=params, strategy=flat_strategy(params, quote=-5.0),
                        horizon_days=0.05, n_paths=20, seed=6, compute_acf=False)
        rec, _ = simulate(cfg)
        assert np.all(np.abs(rec.q_final) <= params.q_bound + 1e-9)


class TestAccounting:
    def test_identity_per_path(self, small_solution, small_strategy):
        params, _, _ = small_solution
        cfg = SimConfig(params=params, strategy=small_strategy,
                        horizon_days=0.2, n_paths=50, seed=7, compute_acf=False)
        rec, _ = simulate(cfg)
        lhs = rec.pnl
        rhs = rec.margin - rec.cost + rec.reval
        err = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))
        assert err.max() <= 1e-8

    def test_event_log_reconstructs_margin(self, small_solution, small_strategy):
        params, _, _ = small_solution
        cfg = SimConfig(params=params, strategy=small_strategy,
                        horizon_days=0.05, n_paths=5, seed=8,
                        compute_acf=False, event_log=True)
        rec, _, log = simulate(cfg)
        for i in range(cfg.n_paths):
            sel = log.path == i
            margin = float(np.sum(log.size[sel] * log.price_rel[sel]
                                  * log.quote_bps[sel] * 1e-4)) * 1e4
            assert margin == pytest.approx(rec.margin[i], rel=1e-10, abs=1e-10)

    def test_wealth_includes_inventory_value(self, small_solution, small_strategy):
        params, _, _ = small_solution
        cfg = SimConfig(params=params, strategy=small_strategy,
                        horizon_days=0.1, n_paths=10, seed=9, compute_acf=False)
        rec, _ = simulate(cfg)
        recon = 1e4 * (rec.cash_final + rec.q_final * rec.price_final)
        assert np.allclose(recon, rec.pnl, rtol=1e-12, atol=1e-9)


class TestDeterminism:
    def test_same_seed_same_metrics(self, small_solution, small_strategy):
        params, _, _ = small_solution
        def run():
            cfg = SimConfig(params=params, strategy=small_strategy,
                            horizon_days=0.1, n_paths=20, seed=123)
            return simulate(cfg)
        rec1, m1 = run()
        rec2, m2 = run()
        assert np.array_equal(rec1.pnl, rec2.pnl)
        assert np.array_equal(rec1.client_volume, rec2.client_volume)
        from fxmm.dataio import metrics_to_payload
        assert metrics_to_payload(m1) == metrics_to_payload(m2)
        assert np.array_equal(m1.inventory_acf, m2.inventory_acf)

    def test_different_seed_differs(self, small_solution, small_strategy):
        params, _, _ = small_solution
        cfg1 = SimConfig(params=params, strategy=small_strategy,
                         horizon_days=0.1, n_paths=5, seed=1, compute_acf=False)
        cfg2 = SimConfig(params=params, strategy=small_strategy,
                         horizon_days=0.1, n_paths=5, seed=2, compute_acf=False)
        assert not np.array_equal(simulate(cfg1)[0].pnl, simulate(cfg2)[0].pnl)


class TestConfigValidation:
    def test_zero_paths(self, small_solution, small_strategy):
        params, _, _ = small_solution
        with pytest.raises(ValidationError):
            SimConfig(params=params, strategy=small_strategy, n_paths=0)

    def test_step_too_coarse(self, small_solution, small_strategy):
        params, _, _ = small_solution
        with pytest.raises(ValidationError):
            SimConfig(params=params, strategy=small_strategy, step_days=1e-3)

    def test_grid_mismatch(self, small_solution, small_strategy):
        params, _, _ = small_solution
        other = small_params(q_bound=50.0, grid_points=101)
        with pytest.raises(ValidationError):
            SimConfig(params=other, strategy=small_strategy)

    def test_initial_inventory_bound(self, small_solution, small_strategy):
        params, _, _ = small_solution
        with pytest.raises(ValidationError):
            SimConfig(params=params, strategy=small_strategy,
                      initial_inventory=26.0)


class TestRiskNeutralizationTime:
    def test_white_noise_is_one_lag(self):
        rng = np.random.default_rng(10)
        series = rng.normal(size=(20, 5000))
        step = 1e-3
        tau = risk_neutralization_time(series, step)
        minutes = step * 24 * 60
        assert 0 < tau < 2.0 * minutes
        tau_fine = risk_neutralization_time(series, step / 10)
        assert tau_fine == pytest.approx(tau / 10)

    def test_ou_integral_matches_rate(self):
        # AR(1) sampling of a mean-reverting process with rate kappa per day
        rng = np.random.default_rng(11)
        kappa, dt = 2.0, 0.005
        rho = np.exp(-kappa * dt)
        n, paths = 40000, 10
        series = np.empty((paths, n))
        for i in range(paths):
            x = np.empty(n)
            x[0] = rng.normal()
            eps = rng.normal(size=n) * np.sqrt(1 - rho ** 2)
            for t in range(1, n):
                x[t] = rho * x[t - 1] + eps[t]
            series[i] = x
        tau = risk_neutralization_time(series, dt)
        assert tau == pytest.approx((1.0 / kappa) * 24 * 60, rel=0.10)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            risk_neutralization_time(np.zeros((3, 50)), 1e-3)
        with pytest.raises(InsufficientDataError):
            risk_neutralization_time(np.zeros((3, 500)), 1e-3)  # flat paths


class TestPerturbation:
    def test_identity(self, small_strategy):
        s = small_strategy
        out = apply_perturbation(s, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0)
        assert out.allclose(s)

    def test_uniform_shift_widens_spread(self, small_strategy):
        s = small_strategy
        out = apply_perturbation(s, [0.05, 0.05], [0.05, 0.05], 1.0, 1.0)
        spread_change = (out.bid + out.ask) - (s.bid + s.ask)
        assert np.nanmax(np.abs(spread_change - 0.1)) <= 1e-12

    def test_band_doubling(self, small_strategy):
        s = small_strategy
        qm, qp = s.band
        out = apply_perturbation(s, [0, 0], [0, 0], 2.0, 1.0)
        assert out.band == (2 * qm, 2 * qp)
        inside = (s.q_grid >= 2 * qm) & (s.q_grid <= 2 * qp)
        assert np.all(out.hedge[inside] == 0.0)
        assert np.any(out.hedge[~inside] != 0.0)

    def test_slope_scaling(self, small_strategy):
        s = small_strategy
        out = apply_perturbation(s, [0, 0], [0, 0], 1.0, 0.5)
        assert out.band == s.band
        assert np.allclose(out.hedge, 0.5 * s.hedge)

    def test_random_perturbation_seeded(self, small_strategy):
        a = perturb_strategy(small_strategy, 42)
        b = perturb_strategy(small_strategy, 42)
        assert a.allclose(b)
        c = perturb_strategy(small_strategy, 43)
        assert not a.allclose(c)

    def test_zero_magnitudes_random_is_identity(self, small_strategy):
        out = perturb_strategy(small_strategy, 42, quote_shift_bps=0.0,
                               band_scale_range=(1.0, 1.0),
                               slope_scale_range=(1.0, 1.0))
        assert out.allclose(small_strategy)


class TestFrontierHelpers:
    def test_ceiling_formula(self):
        from fxmm.hamiltonians import client_hamiltonian
        params = small_params()
        manual = 0.0
        for tier in params.tiers:
            h0 = client_hamiltonian(0.0, tier.shape)[0]
            manual += sum(2 * z * lam * h0 for z, lam in
                          zip(params.ladder.sizes, tier.lambda_by_size))
        assert max_expected_pnl(params, 0.05) == pytest.approx(0.05 * manual)

    def test_fraction_below(self):
        rows = [FrontierRow(1e-3, "optimal", 1.0, 1.0),
                FrontierRow(1e-2, "optimal", 2.0, 2.0),
                FrontierRow(1e-1, "optimal", 3.0, 2.5),
                FrontierRow(1e-3, "perturbed", 1.5, 1.0),   # below
                FrontierRow(1e-3, "perturbed", 2.5, 2.1),   # below
                FrontierRow(1e-3, "perturbed", 2.0, 5.0)]   # above
        res = FrontierResult(rows=rows, ceiling=10.0)
        assert fraction_below_curve(res) == pytest.approx(2 / 3)

    def test_spline_linear_extension(self):
        rows = [FrontierRow(1e-3, "optimal", 1.0, 1.0),
                FrontierRow(1e-2, "optimal", 2.0, 2.0),
                FrontierRow(1e-1, "optimal", 3.0, 3.0)]
        curve = frontier_spline(FrontierResult(rows=rows, ceiling=0.0))
        assert curve(2.0) == pytest.approx(2.0)
        assert curve(4.0) == pytest.approx(4.0, abs=0.2)

    def test_volume_shares_sum_to_one(self, small_solution, small_strategy):
        params, _, _ = small_solution
        cfg = SimConfig(params=params, strategy=small_strategy,
                        horizon_days=0.2, n_paths=20, seed=12, compute_acf=False)
        _, metrics = simulate(cfg)
        shares = volume_shares(metrics)
        assert sum(shares["tier_shares"]) + shares["external_share"] == pytest.approx(1.0)
        assert shares["client_share"] == pytest.approx(1 - shares["external_share"])
