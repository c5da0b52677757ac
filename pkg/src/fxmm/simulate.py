"""Monte Carlo evaluation of a dealer following a strategy table.

Each path runs on a fixed time step. Per step and per (tier, side, size)
combination a trade fills with probability ``lam * f(quote) * step``; fills
that would push inventory past the bound are skipped. The hedge rate is read
from the table at the nearest inventory node and applied continuously; the
reference price carries the permanent impact of hedging plus a lognormal
increment.

Prospective-client arrivals do not depend on the dealer's state, so the
kernel draws the gap to the next candidate per combination geometrically and
thins it with the fill probability at the prevailing quote. This reproduces
the per-step Bernoulli law exactly while doing RNG work only at candidate
events.

Cash is tracked relative to the initial mid so that P&L comes out directly in
bps * M EUR, the same unit as the value function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.fft import next_fast_len, rfft, irfft
from scipy.interpolate import CubicSpline

from .errors import InsufficientDataError, NoDataError, ValidationError
from .flow import trade_probability
from .hjb import ModelParams, StrategyTable, solve_hjb, extract_strategy

MINUTES_PER_DAY = 24.0 * 60.0


@dataclass
class SimConfig:
    params: ModelParams
    strategy: StrategyTable
    horizon_days: float = 10.0
    step_days: float = 1e-5
    n_paths: int = 1000
    seed: int = 0
    initial_inventory: float = 0.0
    initial_price: float = 1.0
    record_step_days: float = 2e-4
    burn_in_fraction: float = 0.1
    compute_acf: bool = True
    max_acf_lags: int = 20000
    event_log: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("n_paths must be at least 1")
        if self.step_days <= 0 or self.horizon_days < self.step_days:
            raise ValidationError("need 0 < step_days <= horizon_days")
        if abs(self.initial_inventory) > self.params.q_bound:
            raise ValidationError("initial inventory outside the bound")
        if self.initial_price <= 0:
            raise ValidationError("initial price must be positive")
        if (self.strategy.q_grid.shape != self.params.q_grid.shape
                or not np.allclose(self.strategy.q_grid, self.params.q_grid)):
            raise ValidationError("strategy grid does not match params grid")
        if (self.strategy.sizes.size != len(self.params.ladder.sizes)
                or not np.allclose(self.strategy.sizes, self.params.ladder.sizes)):
            raise ValidationError("strategy sizes do not match the ladder")
        max_lam = max((l for t in self.params.tiers for l in t.lambda_by_size),
                      default=0.0)
        if max_lam * self.step_days >= 0.1:
            raise ValidationError(
                f"step {self.step_days} too coarse: per-step arrival probability "
                f"{max_lam * self.step_days:.3f} >= 0.1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon_days / self.step_days)))

    @property
    def record_stride(self) -> int:
        return max(1, int(round(self.record_step_days / self.step_days)))


@dataclass
class PathRecords:
    """Terminal per-path records; wealth components are in bps * M EUR.

    ``reval_noise`` is the Brownian part of the inventory revaluation. Its
    conditional expectation is exactly zero at every step, so
    ``pnl - reval_noise`` is an unbiased, much lower-variance estimator of the
    expected P&L (a control variate for strategy comparisons).
    """

    pnl: np.ndarray
    margin: np.ndarray
    cost: np.ndarray
    reval: np.ndarray
    reval_noise: np.ndarray
    cash_final: np.ndarray
    q_final: np.ndarray
    price_final: np.ndarray
    external_volume: np.ndarray  # M EUR per path
    client_volume: np.ndarray  # (n_paths, n_combos) M EUR
    fill_counts: np.ndarray  # (n_paths, n_combos)


@dataclass
class SimMetrics:
    mean_pnl: float
    std_pnl: float
    turnover_by_tier: list  # M EUR / day
    external_turnover: float  # M EUR / day
    tau_r_minutes: float | None
    inventory_acf: np.ndarray | None
    acf_lag_days: float
    n_paths: int
    seed: int
    horizon_days: float
    gamma: float

    @property
    def client_turnover(self) -> float:
        return float(sum(self.turnover_by_tier))


@dataclass
class EventLog:
    """Flat arrays of client fills across paths (optional, large)."""

    path: np.ndarray
    time_days: np.ndarray
    tier: np.ndarray
    side: np.ndarray  # 0 bid, 1 ask
    size: np.ndarray
    quote_bps: np.ndarray
    price_rel: np.ndarray


@njit(cache=True)
def _geometric(rng, p):
    # steps until next success of a per-step Bernoulli(p), support {1, 2, ...}
    u = rng.random()
    one_minus = 1.0 - u
    if one_minus <= 0.0:
        return 1
    return int(np.log(one_minus) / np.log1p(-p)) + 1


@njit(cache=True)
def _run_path(rng, n_steps, step, q0, q_bound, dq, lam_step, accept_f, quote_bps,
              z_combo, sgn_combo, v_table, eta, phi, sigma_sqrt_step,
              half_var_step, k_rel, record_stride, q_rec, fills, vols,
              log_on, log_step, log_combo, log_quote, log_price):
    nc = lam_step.size
    nq = v_table.size
    next_c = np.empty(nc, dtype=np.int64)
    for c in range(nc):
        if lam_step[c] <= 0.0:
            next_c[c] = n_steps
        else:
            next_c[c] = _geometric(rng, lam_step[c]) - 1
    min_next = n_steps
    for c in range(nc):
        if next_c[c] < min_next:
            min_next = next_c[c]

    q = q0
    s = 1.0
    cash = 0.0
    margin = 0.0
    cost = 0.0
    reval = 0.0
    reval_noise = 0.0  # pure Brownian revaluation, an exact zero-mean martingale
    ext = 0.0
    rec_i = 0
    n_logged = 0
    err = 0

    for t in range(n_steps):
        if t % record_stride == 0 and rec_i < q_rec.size:
            q_rec[rec_i] = q
            rec_i += 1
        if t == min_next:
            node = int(round((q + q_bound) / dq))
            if node < 0:
                node = 0
            elif node > nq - 1:
                node = nq - 1
            for c in range(nc):
                if next_c[c] == t:
                    pf = accept_f[c, node]
                    if pf > 0.0 and rng.random() < pf:
                        z = z_combo[c]
                        sg = sgn_combo[c]
                        qn = q + sg * z
                        if -q_bound <= qn <= q_bound:
                            d = quote_bps[c, node]
                            cash -= sg * z * s * (1.0 - sg * d * 1e-4)
                            margin += z * s * d * 1e-4
                            q = qn
                            fills[c] += 1.0
                            vols[c] += z
                            if log_on:
                                if n_logged < log_step.size:
                                    log_step[n_logged] = t
                                    log_combo[n_logged] = c
                                    log_quote[n_logged] = d
                                    log_price[n_logged] = s
                                    n_logged += 1
                                else:
                                    err = 1
                    if lam_step[c] > 0.0:
                        next_c[c] = t + _geometric(rng, lam_step[c])
            min_next = n_steps
            for c in range(nc):
                if next_c[c] < min_next:
                    min_next = next_c[c]
        # hedge at the (post-fill) inventory
        node = int(round((q + q_bound) / dq))
        if node < 0:
            node = 0
        elif node > nq - 1:
            node = nq - 1
        v = v_table[node]
        if v != 0.0:
            qn = q + v * step
            if qn > q_bound:
                v = (q_bound - q) / step
                qn = q_bound
            elif qn < -q_bound:
                v = (-q_bound - q) / step
                qn = -q_bound
            lc = (eta * v * v + phi * abs(v)) * 1e-4 * s * step
            cash -= v * s * step + lc
            cost += lc
            ext += abs(v) * step
            q = qn
            if k_rel != 0.0 and v != 0.0:
                s_old = s
                s = s * (1.0 + k_rel * v * step)
                reval += q * (s - s_old)
        if sigma_sqrt_step != 0.0:
            s_old = s
            s = s * np.exp(sigma_sqrt_step * rng.standard_normal() - half_var_step)
            reval += q * (s - s_old)
            reval_noise += q * (s - s_old)
            if not (s > 0.0 and np.isfinite(s)):
                err = 2
                break
    wealth = cash + q * s
    return wealth, cash, margin, cost, reval, reval_noise, q, s, ext, n_logged, err


def _build_tables(params: ModelParams, strategy: StrategyTable, step: float):
    n_tiers = len(params.tiers)
    n_sizes = len(params.ladder.sizes)
    nq = strategy.q_grid.size
    nc = n_tiers * 2 * n_sizes
    lam_step = np.zeros(nc)
    accept = np.zeros((nc, nq))
    quote = np.zeros((nc, nq))
    z_combo = np.zeros(nc)
    sgn = np.zeros(nc)
    tier_of = np.zeros(nc, dtype=np.int64)
    side_of = np.zeros(nc, dtype=np.int64)
    for tn, tier in enumerate(params.tiers):
        for side, surface in ((0, strategy.bid), (1, strategy.ask)):
            for k in range(n_sizes):
                c = (tn * 2 + side) * n_sizes + k
                lam_step[c] = tier.lambda_by_size[k] * step
                qk = surface[tn, k]
                ok = np.isfinite(qk)
                accept[c, ok] = trade_probability(qk[ok], tier.shape)
                quote[c, ok] = qk[ok]
                z_combo[c] = params.ladder.sizes[k]
                sgn[c] = 1.0 if side == 0 else -1.0
                tier_of[c] = tn
                side_of[c] = side
    return lam_step, accept, quote, z_combo, sgn, tier_of, side_of


def _acf_unbiased(x: np.ndarray, max_lags: int):
    """Per-path autocorrelation with 1/(n-h) normalization; None if flat."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    c0 = float(np.dot(x, x))
    if c0 <= 0.0 or n < 2:
        return None
    lags = min(max_lags, n - 1)
    nfft = next_fast_len(2 * n)
    f = rfft(x, nfft)
    acov = irfft(f * np.conj(f), nfft)[: lags + 1]
    acov /= (n - np.arange(lags + 1))
    return acov / acov[0]


def integrate_acf(rho: np.ndarray, lag_days: float) -> float:
    """One-sided Riemann integral of the ACF up to its first non-positive lag."""
    stop = rho.size
    nonpos = np.nonzero(rho[1:] <= 0.0)[0]
    if nonpos.size:
        stop = int(nonpos[0]) + 1
    return float(np.sum(rho[:stop])) * lag_days * MINUTES_PER_DAY


def risk_neutralization_time(inventory: np.ndarray, record_step_days: float,
                             max_lags: int = 20000) -> float:
    """Integral of the inventory autocorrelation function, in minutes.

    ``inventory`` holds stationary-segment samples (burn-in already removed),
    one row per path (a single series is also accepted). The ACF is estimated
    per path, averaged across paths, then integrated up to the first
    non-positive lag.
    """
    arr = np.atleast_2d(np.asarray(inventory, dtype=float))
    if arr.shape[1] < 100:
        raise InsufficientDataError(
            f"stationary segment has {arr.shape[1]} samples; need at least 100")
    acc = None
    n_ok = 0
    for row in arr:
        rho = _acf_unbiased(row, max_lags)
        if rho is None:
            continue
        acc = rho if acc is None else acc + rho
        n_ok += 1
    if acc is None:
        raise InsufficientDataError("all inventory paths are constant")
    return integrate_acf(acc / n_ok, record_step_days)


def simulate(config: SimConfig):
    """Run all paths; returns ``(PathRecords, SimMetrics)`` (and an EventLog
    as third element when ``config.event_log`` is set)."""
    params = config.params
    step = config.step_days
    n_steps = config.n_steps
    stride = config.record_stride
    n_rec = 1 + (n_steps - 1) // stride
    tables = _build_tables(params, config.strategy, step)
    lam_step, accept, quote, z_combo, sgn, tier_of, side_of = tables
    nc = lam_step.size
    n_paths = config.n_paths

    rec = PathRecords(
        pnl=np.empty(n_paths), margin=np.empty(n_paths), cost=np.empty(n_paths),
        reval=np.empty(n_paths), reval_noise=np.empty(n_paths),
        cash_final=np.empty(n_paths),
        q_final=np.empty(n_paths), price_final=np.empty(n_paths),
        external_volume=np.empty(n_paths),
        client_volume=np.empty((n_paths, nc)), fill_counts=np.empty((n_paths, nc)))

    log_cap = 0
    if config.event_log:
        expected = float(lam_step.sum()) * n_steps
        log_cap = int(expected + 10.0 * math.sqrt(expected + 1.0) + 1000)
    logs = []

    burn_records = int(round(config.burn_in_fraction * n_rec))
    seg_len = n_rec - burn_records
    want_acf = config.compute_acf and seg_len >= 2
    acf_sum = None
    acf_paths = 0

    q_rec = np.empty(n_rec)
    seeds = np.random.SeedSequence(config.seed).spawn(n_paths)
    sig_rel = params.sigma * 1e-4
    for i in range(n_paths):
        rng = np.random.default_rng(seeds[i])
        fills = np.zeros(nc)
        vols = np.zeros(nc)
        log_step = np.empty(log_cap, dtype=np.int64)
        log_combo = np.empty(log_cap, dtype=np.int64)
        log_quote = np.empty(log_cap)
        log_price = np.empty(log_cap)
        out = _run_path(
            rng, n_steps, step, config.initial_inventory, params.q_bound,
            params.dq, lam_step, accept, quote, z_combo, sgn,
            config.strategy.hedge, params.cost.eta, params.cost.phi,
            sig_rel * math.sqrt(step), 0.5 * sig_rel * sig_rel * step,
            params.impact_k * 1e-4, stride, q_rec, fills, vols,
            config.event_log, log_step, log_combo, log_quote, log_price)
        wealth, cash, margin, cost, reval, rnoise, q_f, s_f, ext, n_logged, err = out
        if err == 1:
            raise ValidationError("event log buffer overflow; raise the capacity")
        if err == 2:
            raise ValidationError(f"price became non-positive on path {i}")
        rec.pnl[i] = 1e4 * wealth
        rec.cash_final[i] = cash
        rec.margin[i] = 1e4 * margin
        rec.cost[i] = 1e4 * cost
        rec.reval[i] = 1e4 * reval
        rec.reval_noise[i] = 1e4 * rnoise
        rec.q_final[i] = q_f
        rec.price_final[i] = s_f
        rec.external_volume[i] = ext
        rec.client_volume[i] = vols
        rec.fill_counts[i] = fills
        if config.event_log:
            logs.append((np.full(n_logged, i), log_step[:n_logged].copy(),
                         log_combo[:n_logged].copy(), log_quote[:n_logged].copy(),
                         log_price[:n_logged].copy()))
        if want_acf:
            rho = _acf_unbiased(q_rec[burn_records:], config.max_acf_lags)
            if rho is not None:
                acf_sum = rho if acf_sum is None else acf_sum + rho
                acf_paths += 1

    lag_days = stride * step
    tau = None
    acf_mean = None
    if acf_paths:
        acf_mean = acf_sum / acf_paths
        tau = integrate_acf(acf_mean, lag_days)

    horizon = n_steps * step
    n_tiers = len(params.tiers)
    turnover = []
    for tn in range(n_tiers):
        mask = tier_of == tn
        turnover.append(float(rec.client_volume[:, mask].sum()) / (n_paths * horizon))
    metrics = SimMetrics(
        mean_pnl=float(np.mean(rec.pnl)),
        std_pnl=float(np.std(rec.pnl, ddof=1)) if n_paths > 1 else 0.0,
        turnover_by_tier=turnover,
        external_turnover=float(rec.external_volume.sum()) / (n_paths * horizon),
        tau_r_minutes=tau, inventory_acf=acf_mean, acf_lag_days=lag_days,
        n_paths=n_paths, seed=config.seed, horizon_days=horizon,
        gamma=params.gamma)
    if config.event_log:
        n_sizes = len(params.ladder.sizes)
        path_ids = np.concatenate([l[0] for l in logs]) if logs else np.empty(0, dtype=np.int64)
        steps_ = np.concatenate([l[1] for l in logs]) if logs else np.empty(0, dtype=np.int64)
        combos = np.concatenate([l[2] for l in logs]) if logs else np.empty(0, dtype=np.int64)
        quotes_ = np.concatenate([l[3] for l in logs]) if logs else np.empty(0)
        prices = np.concatenate([l[4] for l in logs]) if logs else np.empty(0)
        log = EventLog(path=path_ids, time_days=steps_ * step,
                       tier=combos // (2 * n_sizes),
                       side=(combos // n_sizes) % 2,
                       size=z_combo[combos] if combos.size else np.empty(0),
                       quote_bps=quotes_, price_rel=prices)
        return rec, metrics, log
    return rec, metrics


def volume_shares(metrics: SimMetrics) -> dict:
    """Traded-volume split between client tiers and external hedging.

    Shares are fractions of total traded volume (client plus external) and sum
    to one; the externalization ratio is external over client volume.
    """
    client = metrics.client_turnover
    ext = metrics.external_turnover
    total = client + ext
    if total <= 0:
        raise NoDataError("no traded volume")
    return {
        "tier_shares": [t / total for t in metrics.turnover_by_tier],
        "external_share": ext / total,
        "client_share": client / total,
        "externalization_ratio": ext / client if client > 0 else math.inf,
    }


# ---------------------------------------------------------------------------
# strategy perturbation and the risk/reward frontier
# ---------------------------------------------------------------------------

def apply_perturbation(strategy: StrategyTable, bid_shift, ask_shift,
                       band_scale: float, slope_scale: float) -> StrategyTable:
    """Deterministic core of ``perturb_strategy``.

    Quote surfaces shift additively per tier and side. The hedge curve is
    rebuilt by moving each outside-band branch to the rescaled band edge
    (rounded to nodes) and scaling its amplitude; with unit scales and zero
    shifts the table is reproduced exactly.
    """
    if band_scale < 0 or slope_scale < 0:
        raise ValidationError("perturbation scales must be nonnegative")
    bid_shift = np.asarray(bid_shift, dtype=float).reshape(-1, 1, 1)
    ask_shift = np.asarray(ask_shift, dtype=float).reshape(-1, 1, 1)
    q = strategy.q_grid
    v = strategy.hedge
    nq = q.size
    center = int(np.argmin(np.abs(q)))
    qm, qp = strategy.band
    i_lo = int(np.argmin(np.abs(q - qm)))
    i_hi = int(np.argmin(np.abs(q - qp)))
    new_hi = center + int(round(band_scale * (i_hi - center)))
    new_lo = center - int(round(band_scale * (center - i_lo)))
    new_hi = min(max(new_hi, center), nq - 1)
    new_lo = max(min(new_lo, center), 0)

    def branch_value(src_edge: int, j: int, direction: int) -> float:
        # v on the source branch, j nodes beyond its band edge; linear tail
        idx = src_edge + direction * j
        if 0 <= idx <= nq - 1:
            return v[idx]
        if direction > 0:
            tail = (v[nq - 1] - v[nq - 2])
            return v[nq - 1] + tail * (idx - (nq - 1))
        tail = (v[0] - v[1])
        return v[0] + tail * (0 - idx)

    new_v = np.zeros(nq)
    for i in range(new_hi + 1, nq):
        new_v[i] = slope_scale * branch_value(i_hi, i - new_hi, +1)
    for i in range(new_lo - 1, -1, -1):
        new_v[i] = slope_scale * branch_value(i_lo, new_lo - i, -1)
    return StrategyTable(
        q_grid=q.copy(), sizes=strategy.sizes.copy(),
        bid=strategy.bid + bid_shift, ask=strategy.ask + ask_shift,
        hedge=new_v, time_days=strategy.time_days)


def perturb_strategy(strategy: StrategyTable, seed,
                     quote_shift_bps: float = 0.1,
                     band_scale_range=(0.5, 2.0),
                     slope_scale_range=(0.5, 2.0)) -> StrategyTable:
    """Randomly shifted quotes plus rescaled band width and hedge slope.

    Shifts are drawn independently per tier and side, uniform in
    ``+-quote_shift_bps``; the band and slope factors are uniform over their
    ranges. Mirror symmetry is deliberately not preserved.
    """
    if quote_shift_bps < 0:
        raise ValidationError("quote shift magnitude must be nonnegative")
    rng = np.random.default_rng(seed)
    n_tiers = strategy.n_tiers
    bid_shift = rng.uniform(-quote_shift_bps, quote_shift_bps, size=n_tiers)
    ask_shift = rng.uniform(-quote_shift_bps, quote_shift_bps, size=n_tiers)
    band_scale = rng.uniform(*band_scale_range)
    slope_scale = rng.uniform(*slope_scale_range)
    return apply_perturbation(strategy, bid_shift, ask_shift, band_scale, slope_scale)


@dataclass
class FrontierRow:
    gamma: float
    kind: str  # "optimal" or "perturbed"
    std_pnl: float
    mean_pnl: float


@dataclass
class FrontierResult:
    rows: list
    ceiling: float  # highest achievable expected P&L with unconstrained risk

    def optimal_points(self):
        pts = [(r.std_pnl, r.mean_pnl) for r in self.rows if r.kind == "optimal"]
        return sorted(pts)


def max_expected_pnl(params: ModelParams, horizon_days: float) -> float:
    """Expected P&L ceiling: flat-book optimal quoting with no risk penalty."""
    from .hamiltonians import client_hamiltonian

    rate = 0.0
    for tier in params.tiers:
        h0 = client_hamiltonian(0.0, tier.shape)[0]
        rate += sum(2.0 * z * lam * h0
                    for z, lam in zip(params.ladder.sizes, tier.lambda_by_size))
    return horizon_days * rate


def frontier_spline(result: FrontierResult):
    """Natural cubic spline through the optimal points, linear beyond them."""
    pts = result.optimal_points()
    if len(pts) < 2:
        raise ValidationError("need at least two optimal points for the frontier")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    spl = CubicSpline(xs, ys, bc_type="natural")

    def curve(x):
        x = np.asarray(x, dtype=float)
        lo, hi = xs[0], xs[-1]
        inside = spl(np.clip(x, lo, hi))
        left = ys[0] + spl(lo, 1) * (x - lo)
        right = ys[-1] + spl(hi, 1) * (x - hi)
        out = np.where(x < lo, left, np.where(x > hi, right, inside))
        return float(out) if out.ndim == 0 else out

    return curve


def fraction_below_curve(result: FrontierResult) -> float:
    curve = frontier_spline(result)
    pert = [(r.std_pnl, r.mean_pnl) for r in result.rows if r.kind == "perturbed"]
    if not pert:
        return 1.0
    below = sum(1 for x, y in pert if y <= curve(x))
    return below / len(pert)


def efficient_frontier(params: ModelParams, gammas, n_perturbations: int = 20,
                       n_paths: int = 1000, horizon_days: float = 0.05,
                       step_days: float = 1e-5, seed: int = 0,
                       quote_shift_bps: float = 0.1, scale_range=(0.5, 2.0),
                       dt: float = 1e-4, progress=None) -> FrontierResult:
    """Risk/reward frontier over a risk-aversion sweep.

    For every gamma: solve, simulate the optimal strategy, then simulate
    ``n_perturbations`` randomly perturbed variants. Deterministic in the
    seed; per-run seeds are spawned so results do not depend on run order.
    """
    gammas = list(gammas)
    if not gammas:
        raise ValidationError("need at least one gamma")
    root = np.random.SeedSequence(seed)
    per_gamma = root.spawn(len(gammas))
    rows = []
    for gi, gamma in enumerate(gammas):
        p = ModelParams(
            sigma=params.sigma, impact_k=params.impact_k, gamma=gamma,
            horizon_days=params.horizon_days, tiers=params.tiers,
            ladder=params.ladder, cost=params.cost, q_bound=params.q_bound,
            grid_points=params.grid_points)
        vf, _ = solve_hjb(p, dt=dt)
        table = extract_strategy(vf, p)
        children = per_gamma[gi].spawn(n_perturbations + 1)
        # common random numbers across the strategies of one gamma: candidate
        # arrivals are strategy-independent, so paired runs share the exact
        # same client stream and price shocks and the comparison is low-noise
        sim_seed = children[0].generate_state(1)[0]
        def run(strategy):
            cfg = SimConfig(params=p, strategy=strategy,
                            horizon_days=horizon_days, step_days=step_days,
                            n_paths=n_paths, seed=sim_seed, compute_acf=False)
            rec, m = simulate(cfg)
            # the Brownian revaluation averages to zero by construction, so
            # removing it is an unbiased control variate for the mean; the
            # risk axis keeps the raw P&L dispersion
            mean_cv = float(np.mean(rec.pnl - rec.reval_noise))
            return mean_cv, m.std_pnl
        mean_cv, std = run(table)
        rows.append(FrontierRow(gamma, "optimal", std, mean_cv))
        if progress:
            progress(f"gamma={gamma:g} optimal: mean={mean_cv:.1f} std={std:.1f}")
        for j in range(n_perturbations):
            pert = perturb_strategy(table, children[1 + j],
                                    quote_shift_bps=quote_shift_bps,
                                    band_scale_range=scale_range,
                                    slope_scale_range=scale_range)
            mean_cv, std = run(pert)
            rows.append(FrontierRow(gamma, "perturbed", std, mean_cv))
    return FrontierResult(rows=rows, ceiling=max_expected_pnl(params, horizon_days))
