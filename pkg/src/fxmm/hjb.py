"""Backward solver for the dealer's pricing/hedging Hamilton-Jacobi equation.

State is the inventory q on a uniform grid; the running reward collects the
optimized client margins per tier and ladder size (jump terms), the hedging
gain net of execution costs (gradient term), and the quadratic inventory
penalty. Time stepping is implicit Euler with the per-stage nonlinear system
solved by policy iteration: controls are frozen from the current iterate,
which makes each stage a banded linear solve with an M-matrix, so the scheme
stays monotone and unconditionally stable.

Boundary handling: trades whose destination would leave the inventory range
are not admitted, so their jump terms are dropped from the sum (intensity
zero). Every matrix row still sums to one, so adding a constant to the
terminal condition shifts the whole solution by exactly that constant.
Dropped trades are reported as unavailable quotes by ``extract_strategy``
and never execute in the simulator. The lost flow makes the value function
dip in a layer near the edges; the layer's influence decays into the
interior but does not vanish, which is visible in otherwise q-independent
configurations.

Hedging is restricted to risk reduction: the rate may only point the
inventory toward zero. With linear permanent impact the unconstrained
problem rewards trading in the direction of the book (buy while long to mark
the book up) once risk aversion is weak enough to stop dominating the impact
term; a hedging desk does not run that trade, and allowing it corrupts the
low-risk-aversion solves. Wherever the value function is concave and
decreasing in |q| the constraint never binds.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import SolverNumericsError, ValidationError
from .flow import SizeLadder, TierIntensity, default_tiers
from .hamiltonians import ExecutionCost, client_hamiltonian, exec_hamiltonian

DEFAULT_DT = 1e-4  # days


@dataclass
class ModelParams:
    """Market and control parameters on the solver grid.

    Units: sigma in bps/sqrt(day), impact_k in bps per M EUR externalized,
    gamma in 1/(bps * M EUR), horizon in days, inventory bound in M EUR.
    """

    sigma: float = 50.0
    impact_k: float = 5e-3
    gamma: float = 2e-3
    horizon_days: float = 0.05
    tiers: list = field(default_factory=default_tiers)
    ladder: SizeLadder = field(default_factory=SizeLadder)
    cost: ExecutionCost = field(default_factory=ExecutionCost)
    q_bound: float = 250.0
    grid_points: int = 501

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")
        if self.horizon_days <= 0:
            raise ValidationError("horizon must be positive")
        if self.q_bound <= 0:
            raise ValidationError("q_bound must be positive")
        if self.grid_points < 3 or self.grid_points % 2 == 0:
            raise ValidationError("grid_points must be an odd integer >= 3")
        if not self.tiers:
            raise ValidationError("need at least one tier")
        k = len(self.ladder)
        for i, tier in enumerate(self.tiers, start=1):
            if len(tier.lambda_by_size) != k:
                raise ValidationError(f"tier {i} has {len(tier.lambda_by_size)} "
                                      f"scales for a {k}-size ladder")
            if tier.shape.beta <= 0:
                raise ValidationError(f"tier {i} needs beta > 0")
        dq = self.dq
        for z in self.ladder.sizes:
            steps = z / dq
            if abs(steps - round(steps)) > 1e-9:
                raise ValidationError(
                    f"grid spacing {dq} M EUR does not divide ladder size {z}; "
                    "choose grid_points so that sizes land on nodes")

    @property
    def dq(self) -> float:
        return 2.0 * self.q_bound / (self.grid_points - 1)

    @property
    def q_grid(self) -> np.ndarray:
        return np.linspace(-self.q_bound, self.q_bound, self.grid_points)

    def size_offsets(self) -> np.ndarray:
        return np.array([int(round(z / self.dq)) for z in self.ladder.sizes])


def default_params(**overrides) -> ModelParams:
    return ModelParams(**overrides)


@dataclass
class ValueFunction:
    """theta(t, q) in bps * M EUR on the time x inventory grid."""

    q_grid: np.ndarray
    t_grid: np.ndarray  # ascending, t_grid[-1] = horizon
    theta: np.ndarray  # shape (len(t_grid), len(q_grid))

    @property
    def dt(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def time_index(self, t: float) -> int:
        if t < -1e-12 or t > self.t_grid[-1] + 1e-12:
            raise ValidationError(f"time {t} outside [0, {self.t_grid[-1]}]")
        return int(np.argmin(np.abs(self.t_grid - t)))


@dataclass
class StrategyTable:
    """Per-node controls: quote ladders per tier/size and the hedge rate.

    Quotes are NaN at nodes where the trade would leave the inventory range.
    The pure-internalization band is derived from the hedge curve: it is the
    maximal run of exactly-zero hedge rates around flat inventory.
    """

    q_grid: np.ndarray
    sizes: np.ndarray
    bid: np.ndarray  # (n_tiers, n_sizes, n_nodes), bps
    ask: np.ndarray  # (n_tiers, n_sizes, n_nodes), bps
    hedge: np.ndarray  # (n_nodes,), M EUR / day
    time_days: float = 0.0

    @property
    def n_tiers(self) -> int:
        return self.bid.shape[0]

    @property
    def band(self):
        """(q_minus, q_plus) endpoints of the zero-hedge band around q = 0."""
        center = int(np.argmin(np.abs(self.q_grid)))
        if self.hedge[center] != 0.0:
            return (float(self.q_grid[center]), float(self.q_grid[center]))
        lo = center
        while lo > 0 and self.hedge[lo - 1] == 0.0:
            lo -= 1
        hi = center
        while hi < self.q_grid.size - 1 and self.hedge[hi + 1] == 0.0:
            hi += 1
        return (float(self.q_grid[lo]), float(self.q_grid[hi]))

    def allclose(self, other: "StrategyTable", atol=0.0, rtol=0.0) -> bool:
        def eq(a, b):
            if atol == 0.0 and rtol == 0.0:
                return np.array_equal(a, b, equal_nan=True)
            both_nan = np.isnan(a) & np.isnan(b)
            close = np.isclose(a, b, atol=atol, rtol=rtol)
            return bool(np.all(both_nan | close))
        return (eq(self.q_grid, other.q_grid) and eq(self.sizes, other.sizes)
                and eq(self.bid, other.bid) and eq(self.ask, other.ask)
                and eq(self.hedge, other.hedge))


@dataclass
class SolveReport:
    dt: float
    n_steps: int
    stage_iterations_total: int
    stage_iterations_max: int
    residual_theta_per_day: float
    residual_quotes_bps: float
    residual_hedge: float
    stationary: bool
    band: tuple
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "dt_days": self.dt,
            "n_steps": self.n_steps,
            "stage_iterations_total": self.stage_iterations_total,
            "stage_iterations_max": self.stage_iterations_max,
            "stationarity_residual_theta_per_day": self.residual_theta_per_day,
            "stationarity_residual_quotes_bps": self.residual_quotes_bps,
            "stationarity_residual_hedge_meur_per_day": self.residual_hedge,
            "stationary": self.stationary,
            "band_meur": list(self.band),
            "wall_time_s": self.wall_time_s,
        }


class _Stage:
    """Precomputed geometry and scratch space for the per-stage solves."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.q = params.q_grid
        self.nq = self.q.size
        self.dq = params.dq
        self.offsets = params.size_offsets()
        self.sizes = np.asarray(params.ladder.sizes)
        self.lams = np.array([t.lambda_by_size for t in params.tiers])
        self.shapes = [t.shape for t in params.tiers]
        self.idx = np.arange(self.nq)
        self.bw = max(int(self.offsets.max()), 1)
        self.penalty = 0.5 * params.gamma * params.sigma ** 2 * self.q ** 2
        self.kq = params.impact_k * self.q

    def hedge_controls(self, y):
        """Upwind hedge rate and its frozen-control reward constant."""
        cost = self.params.cost
        d_up = np.empty(self.nq)
        d_up[:-1] = (y[1:] - y[:-1]) / self.dq
        d_up[-1] = -np.inf  # no outward branch at the top node
        d_dn = np.empty(self.nq)
        d_dn[1:] = (y[1:] - y[:-1]) / self.dq
        d_dn[0] = np.inf
        p_up = d_up + self.kq
        p_dn = d_dn + self.kq
        gain_up = np.where(self.q <= 0, np.maximum(0.0, p_up - cost.phi), 0.0)
        gain_dn = np.where(self.q >= 0, np.maximum(0.0, -p_dn - cost.phi), 0.0)
        v = np.zeros(self.nq)
        up = (gain_up > 0.0) & (gain_dn == 0.0)
        dn = (gain_dn > 0.0) & (gain_up == 0.0)
        # both branches active would be a sign conflict; leave v = 0 there
        v[up] = gain_up[up] / (2.0 * cost.eta)
        v[dn] = -gain_dn[dn] / (2.0 * cost.eta)
        return v

    def solve(self, y_prev, tol_scale, dt, max_iter=50):
        """One implicit Euler stage via policy iteration; returns (y, iters)."""
        nq, u = self.nq, self.bw
        y = y_prev
        cost = self.params.cost
        for it in range(1, max_iter + 1):
            ab = np.zeros((2 * u + 1, nq))
            ab[u, :] = 1.0
            b = y_prev - dt * self.penalty
            for t, shape in enumerate(self.shapes):
                for k in range(self.sizes.size):
                    lam = self.lams[t, k]
                    if lam == 0.0:
                        continue
                    z = self.sizes[k]
                    off = int(self.offsets[k])
                    if off >= nq:
                        continue  # size never fits inside the range
                    # buys: admissible only where q + z stays in range
                    p = (y[:nq - off] - y[off:]) / z
                    _, h_p, delta = client_hamiltonian(p, shape)
                    coef = dt * lam * (-h_p)
                    ab[u, :nq - off] += coef
                    ab[u - off, off:] -= coef
                    b[:nq - off] += dt * lam * z * (-h_p) * delta
                    # sells: admissible only where q - z stays in range
                    p = (y[off:] - y[:nq - off]) / z
                    _, h_p, delta = client_hamiltonian(p, shape)
                    coef = dt * lam * (-h_p)
                    ab[u, off:] += coef
                    ab[u + off, :nq - off] -= coef
                    b[off:] += dt * lam * z * (-h_p) * delta
            v = self.hedge_controls(y)
            pos = v > 0.0
            neg = v < 0.0
            w = dt * np.abs(v) / self.dq
            ab[u, :] += w
            if pos.any():
                np.add.at(ab, (np.full(pos.sum(), u - 1), self.idx[pos] + 1), -w[pos])
            if neg.any():
                np.add.at(ab, (np.full(neg.sum(), u + 1), self.idx[neg] - 1), -w[neg])
            b += dt * (v * self.kq - cost.rate(v))
            y_new = solve_banded((u, u), ab, b, overwrite_ab=True, overwrite_b=True,
                                 check_finite=False)
            if not np.all(np.isfinite(y_new)):
                raise SolverNumericsError(
                    f"non-finite value function in stage solve (iteration {it})")
            change = float(np.max(np.abs(y_new - y)))
            y = y_new
            if change <= tol_scale * max(float(np.max(np.abs(y))), 1e-3):
                return y, it
        raise SolverNumericsError(
            f"policy iteration did not converge within {max_iter} iterations "
            f"(last change {change:.3e})")


def solve_hjb(params: ModelParams, dt: float = DEFAULT_DT,
              stationarity_tol: float = 1e-3, terminal: np.ndarray | None = None,
              policy_tol: float = 1e-10, max_policy_iter: int = 50):
    """Integrate the value function backward from the horizon to t = 0.

    Returns ``(ValueFunction, SolveReport)``. The report carries the
    stationarity residuals between the two earliest time levels; the solve is
    flagged stationary when the quote residual is below ``stationarity_tol``
    (bps).
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    t0 = _time.perf_counter()
    n_steps = max(1, int(round(params.horizon_days / dt)))
    dt_eff = params.horizon_days / n_steps
    stage = _Stage(params)
    nq = stage.nq
    theta = np.empty((n_steps + 1, nq))
    if terminal is None:
        theta[n_steps] = 0.0
    else:
        terminal = np.asarray(terminal, dtype=float)
        if terminal.shape != (nq,):
            raise ValidationError("terminal condition shape mismatch")
        theta[n_steps] = terminal
    iters_total = 0
    iters_max = 0
    for m in range(n_steps - 1, -1, -1):
        theta[m], its = stage.solve(theta[m + 1], policy_tol, dt_eff,
                                    max_iter=max_policy_iter)
        iters_total += its
        iters_max = max(iters_max, its)
    t_grid = np.linspace(0.0, params.horizon_days, n_steps + 1)
    vf = ValueFunction(stage.q.copy(), t_grid, theta)
    res_theta = float(np.max(np.abs(theta[1] - theta[0]))) / dt_eff
    s0 = extract_strategy(vf, params, t=t_grid[0])
    s1 = extract_strategy(vf, params, t=t_grid[1])
    dq_quotes = np.concatenate([(s0.bid - s1.bid).ravel(), (s0.ask - s1.ask).ravel()])
    res_quotes = float(np.nanmax(np.abs(dq_quotes))) if dq_quotes.size else 0.0
    res_hedge = float(np.max(np.abs(s0.hedge - s1.hedge)))
    report = SolveReport(
        dt=dt_eff, n_steps=n_steps,
        stage_iterations_total=iters_total, stage_iterations_max=iters_max,
        residual_theta_per_day=res_theta, residual_quotes_bps=res_quotes,
        residual_hedge=res_hedge, stationary=res_quotes <= stationarity_tol,
        band=s0.band, wall_time_s=_time.perf_counter() - t0)
    return vf, report


def _gradient_plus_impact(vf: ValueFunction, params: ModelParams, m: int):
    """Central-difference d theta/dq plus k*q, one-sided at the edges."""
    y = vf.theta[m]
    dq = float(vf.q_grid[1] - vf.q_grid[0])
    grad = np.gradient(y, dq)
    return grad + params.impact_k * vf.q_grid


def extract_strategy(vf: ValueFunction, params: ModelParams, t: float = 0.0) -> StrategyTable:
    """Read the optimal quote ladders and hedge rate off the value function.

    Quotes for (node, size) pairs whose fill would leave the inventory range
    are marked NaN (unavailable).
    """
    m = vf.time_index(t)
    y = vf.theta[m]
    nq = y.size
    sizes = np.asarray(params.ladder.sizes)
    offsets = params.size_offsets()
    n_tiers = len(params.tiers)
    bid = np.full((n_tiers, sizes.size, nq), np.nan)
    ask = np.full((n_tiers, sizes.size, nq), np.nan)
    idx = np.arange(nq)
    for k, (z, off) in enumerate(zip(sizes, offsets)):
        up_ok = idx + off <= nq - 1
        dn_ok = idx - off >= 0
        p_b = (y[up_ok] - y[idx[up_ok] + off]) / z
        p_a = (y[dn_ok] - y[idx[dn_ok] - off]) / z
        for tn, tier in enumerate(params.tiers):
            bid[tn, k, up_ok] = client_hamiltonian(p_b, tier.shape)[2]
            ask[tn, k, dn_ok] = client_hamiltonian(p_a, tier.shape)[2]
    p_v = _gradient_plus_impact(vf, params, m)
    _, hedge = exec_hamiltonian(p_v, params.cost)
    # hedging only reduces risk; see the module docstring
    q = vf.q_grid
    hedge = np.where(q > 0, np.minimum(hedge, 0.0),
                     np.where(q < 0, np.maximum(hedge, 0.0), hedge))
    return StrategyTable(vf.q_grid.copy(), sizes.astype(float), bid, ask, hedge,
                         time_days=float(vf.t_grid[m]))


def internalization_band(vf: ValueFunction, params: ModelParams, t: float = 0.0):
    """Maximal inventory interval around zero where the optimal hedge is zero.

    Nodes qualify when the marginal value of inventory (including permanent
    impact) sits inside the execution-cost dead zone. Returns ``(q-, q+)``;
    a single-node band at q = 0 is reported if no neighbourhood qualifies.
    """
    m = vf.time_index(t)
    p_v = _gradient_plus_impact(vf, params, m)
    ok = np.abs(p_v) <= params.cost.phi
    center = int(np.argmin(np.abs(vf.q_grid)))
    if not ok[center]:
        return (float(vf.q_grid[center]), float(vf.q_grid[center]))
    lo = center
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = center
    while hi < vf.q_grid.size - 1 and ok[hi + 1]:
        hi += 1
    return (float(vf.q_grid[lo]), float(vf.q_grid[hi]))
