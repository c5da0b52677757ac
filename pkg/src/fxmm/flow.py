"""Client flow model: trade/quote observations, logistic intensity fits, tiering.

The arrival rate of client trades for a given size bucket is modelled as
``lam * f(delta)`` where ``f(delta) = 1 / (1 + exp(alpha + beta * delta))``
is the probability that a prospective client trades when quoted a mark-up
``delta`` (bps) and ``lam`` (per day) is the flow of prospective clients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateInputError,
    FitConvergenceError,
    NoDataError,
    UndefinedLikelihoodError,
    ValidationError,
)

DEFAULT_SIZES = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
DEFAULT_LAMBDA_WEIGHTS = (0.4, 0.25, 0.19, 0.1, 0.05, 0.01)
DEFAULT_LAMBDA_SCALE = 1800.0

_SIDES = ("bid", "ask")


def _side_code(side: str) -> int:
    try:
        return _SIDES.index(side)
    except ValueError:
        raise ValidationError(f"side must be 'bid' or 'ask', got {side!r}") from None


@dataclass(frozen=True)
class SizeLadder:
    """Ordered notional sizes (M EUR) for which quotes are streamed."""

    sizes: tuple = DEFAULT_SIZES

    def __post_init__(self):
        sizes = tuple(float(z) for z in self.sizes)
        if len(sizes) < 1:
            raise ValidationError("ladder needs at least one size")
        if any(z <= 0 for z in sizes):
            raise ValidationError("ladder sizes must be positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValidationError("ladder sizes must be strictly increasing")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return len(self.sizes)

    def bucket(self, size: float) -> int:
        """1-based index of the ladder size closest to ``size`` (ties go low)."""
        return bucket_trade(size, self)


def bucket_trade(size, ladder: SizeLadder = SizeLadder()) -> int:
    """Map a trade notional to the closest ladder bucket (1-based).

    Midpoint ties resolve to the lower index.
    """
    if np.any(np.asarray(size) <= 0):
        raise ValidationError("trade size must be positive")
    z = np.asarray(ladder.sizes)
    d = np.abs(z[..., :] - np.asarray(size)[..., None])
    k = np.argmin(d, axis=-1) + 1
    return int(k) if np.isscalar(size) or np.ndim(size) == 0 else k


@dataclass(frozen=True)
class QuoteObservation:
    client_id: str
    side: str  # "bid" or "ask"
    size_bucket: int  # 1-based index into the ladder
    quote: float  # bps vs reference mid, may be negative
    duration: float  # days

    def __post_init__(self):
        _side_code(self.side)
        if self.duration <= 0:
            raise ValidationError("quote duration must be positive")
        if self.size_bucket < 1:
            raise ValidationError("size_bucket is 1-based")


@dataclass(frozen=True)
class TradeObservation:
    client_id: str
    side: str  # dealer viewpoint: bid = dealer buys
    size: float  # M EUR
    quote: float  # bps at execution

    def __post_init__(self):
        _side_code(self.side)
        if self.size <= 0:
            raise ValidationError("trade size must be positive")


@dataclass(frozen=True)
class IntensityShape:
    """Logistic response parameters: alpha dimensionless, beta in 1/bps."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or not np.isfinite(self.beta):
            raise ValidationError("shape parameters must be finite")
        if self.beta < 0:
            raise ValidationError("beta must be nonnegative")


def _logistic(x):
    """1 / (1 + exp(x)) without overflow at either tail."""
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, t / (1.0 + t), 1.0 / (1.0 + t))


def trade_probability(delta, shape: IntensityShape):
    """f(delta) = 1 / (1 + exp(alpha + beta * delta)), in (0, 1)."""
    x = shape.alpha + shape.beta * np.asarray(delta, dtype=float)
    out = _logistic(x)
    return float(out) if np.ndim(delta) == 0 else out


@dataclass(frozen=True)
class TierIntensity:
    """Arrival model of one tier: shared shape plus one scale per ladder size."""

    shape: IntensityShape
    lambda_by_size: tuple  # per day, aligned with the ladder

    def __post_init__(self):
        lams = tuple(float(x) for x in self.lambda_by_size)
        if any(l < 0 for l in lams):
            raise ValidationError("lambda scales must be nonnegative")
        object.__setattr__(self, "lambda_by_size", lams)

    def intensity(self, bucket: int, delta):
        """Trade arrival rate (per day) for a ladder bucket at quote ``delta``."""
        return self.lambda_by_size[bucket - 1] * trade_probability(delta, self.shape)


def default_tiers(
    scale: float = DEFAULT_LAMBDA_SCALE,
    weights: Sequence[float] = DEFAULT_LAMBDA_WEIGHTS,
) -> list:
    """Built-in two-tier reference parameter set."""
    lams = tuple(scale * w for w in weights)
    return [
        TierIntensity(IntensityShape(-0.3, 5.0), lams),
        TierIntensity(IntensityShape(-1.9, 15.0), lams),
    ]


@dataclass
class TierAssignment:
    membership: dict  # client_id -> tier index in 1..N
    tiers: list  # TierIntensity per tier, pooled refits

    def __post_init__(self):
        n = len(self.tiers)
        for cid, t in self.membership.items():
            if not 1 <= t <= n:
                raise ValidationError(f"client {cid!r} assigned to invalid tier {t}")

    def members(self, tier: int) -> list:
        return sorted(c for c, t in self.membership.items() if t == tier)


class FlowData:
    """Column-oriented store of trade and quote observations.

    Keeps everything in numpy arrays so that likelihoods over 1e5+ rows stay
    cheap; the dataclass observations above are the record-level API.
    """

    def __init__(self, ladder, clients, trade_cols, quote_cols):
        self.ladder = ladder
        self.clients = list(clients)
        (self.trade_client, self.trade_side, self.trade_size,
         self.trade_quote, self.trade_bucket) = trade_cols
        (self.quote_client, self.quote_side, self.quote_bucket,
         self.quote_quote, self.quote_duration) = quote_cols

    @property
    def n_trades(self):
        return self.trade_quote.size

    @property
    def n_quotes(self):
        return self.quote_quote.size

    @classmethod
    def from_observations(cls, trades, quotes, ladder: SizeLadder = SizeLadder()):
        trades = list(trades)
        quotes = list(quotes)
        ids = sorted({o.client_id for o in trades} | {o.client_id for o in quotes})
        idx = {c: i for i, c in enumerate(ids)}
        t_client = np.array([idx[o.client_id] for o in trades], dtype=np.int32)
        t_side = np.array([_side_code(o.side) for o in trades], dtype=np.int8)
        t_size = np.array([o.size for o in trades], dtype=float)
        t_quote = np.array([o.quote for o in trades], dtype=float)
        if trades:
            z = np.asarray(ladder.sizes)
            t_bucket = (np.abs(t_size[:, None] - z[None, :]).argmin(axis=1) + 1).astype(np.int32)
        else:
            t_bucket = np.empty(0, dtype=np.int32)
        q_client = np.array([idx[o.client_id] for o in quotes], dtype=np.int32)
        q_side = np.array([_side_code(o.side) for o in quotes], dtype=np.int8)
        q_bucket = np.array([o.size_bucket for o in quotes], dtype=np.int32)
        if quotes and (q_bucket.max(initial=1) > len(ladder)):
            raise ValidationError("quote size_bucket exceeds ladder length")
        q_quote = np.array([o.quote for o in quotes], dtype=float)
        q_dur = np.array([o.duration for o in quotes], dtype=float)
        return cls(ladder, ids,
                   (t_client, t_side, t_size, t_quote, t_bucket),
                   (q_client, q_side, q_bucket, q_quote, q_dur))

    def subset_clients(self, client_ids) -> "FlowData":
        keep = {c for c in client_ids}
        sel = np.array([c in keep for c in self.clients])
        tm = sel[self.trade_client]
        qm = sel[self.quote_client]
        return FlowData(
            self.ladder, self.clients,
            (self.trade_client[tm], self.trade_side[tm], self.trade_size[tm],
             self.trade_quote[tm], self.trade_bucket[tm]),
            (self.quote_client[qm], self.quote_side[qm], self.quote_bucket[qm],
             self.quote_quote[qm], self.quote_duration[qm]),
        )

    def client_ids_present(self) -> list:
        present = set(np.unique(self.trade_client)) | set(np.unique(self.quote_client))
        return [self.clients[i] for i in sorted(present)]

    def _mask(self, arr_bucket, arr_side, bucket, side):
        m = np.ones(arr_bucket.shape, dtype=bool)
        if bucket is not None:
            m &= arr_bucket == bucket
        if side is not None:
            m &= arr_side == _side_code(side)
        return m

    def trade_deltas(self, bucket=None, side=None):
        return self.trade_quote[self._mask(self.trade_bucket, self.trade_side, bucket, side)]

    def quote_arrays(self, bucket=None, side=None):
        m = self._mask(self.quote_bucket, self.quote_side, bucket, side)
        return self.quote_quote[m], self.quote_duration[m]


def _as_flow_data(trades, quotes, ladder):
    if isinstance(trades, FlowData):
        return trades
    return FlowData.from_observations(trades, quotes, ladder)


def log_likelihood(trades, quotes, lam, alpha, beta, bucket,
                   ladder: SizeLadder = SizeLadder(), side=None) -> float:
    """Raw-list log-likelihood of (lam, alpha, beta) for one size bucket.

    ``sum_i log(lam * f(d_i)) - sum_j lam * f(d_j) * tau_j`` over the selected
    side(s); ``side=None`` pools bid and ask. The additive constant that does
    not depend on the parameters is dropped.
    """
    data = _as_flow_data(trades, quotes, ladder)
    td = data.trade_deltas(bucket, side)
    qd, qtau = data.quote_arrays(bucket, side)
    if td.size and lam <= 0:
        raise UndefinedLikelihoodError("lam must be positive when trades are present")
    # beta < 0 is outside the model class but the likelihood still evaluates
    log_f_t = -np.logaddexp(0.0, alpha + beta * td)
    f_q = _logistic(alpha + beta * qd)
    ll = 0.0
    if td.size:
        ll += td.size * math.log(lam) + float(np.sum(log_f_t))
    ll -= lam * float(np.sum(f_q * qtau))
    return ll


def _profile_negll_and_grad(x, t_deltas_k, q_deltas_k, q_taus_k, n_scale):
    """Negative profile log-likelihood over (alpha, log beta), joint over buckets.

    lam is profiled out analytically per bucket: lam_k = N_k / sum_j f(d_j) tau_j.
    """
    alpha, b = x
    beta = math.exp(b)
    nll = 0.0
    g_alpha = 0.0
    g_beta = 0.0
    for td, qd, qtau in zip(t_deltas_k, q_deltas_k, q_taus_k):
        f_q = _logistic(alpha + beta * qd)
        c = float(np.sum(f_q * qtau))
        n_k = td.size
        if n_k == 0:
            continue
        xt = alpha + beta * td
        log_f_t = -np.logaddexp(0.0, xt)
        f_t = np.exp(log_f_t)
        ll_k = n_k * (math.log(n_k) - math.log(c) - 1.0) + float(np.sum(log_f_t))
        nll -= ll_k
        lam_k = n_k / c
        w_q = f_q * (1.0 - f_q) * qtau
        g_alpha -= -float(np.sum(1.0 - f_t)) + lam_k * float(np.sum(w_q))
        g_beta -= -float(np.sum(td * (1.0 - f_t))) + lam_k * float(np.sum(qd * w_q))
    return nll / n_scale, np.array([g_alpha, g_beta * beta]) / n_scale


def _fit_shape(t_deltas_k, q_deltas_k, q_taus_k, gtol=1e-7, x0=(0.0, 0.0)):
    n_trades = sum(td.size for td in t_deltas_k)
    n_scale = max(1, n_trades)
    res = minimize(
        _profile_negll_and_grad, np.asarray(x0, dtype=float),
        args=(t_deltas_k, q_deltas_k, q_taus_k, n_scale),
        jac=True, method="L-BFGS-B",
        options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-12},
    )
    _, grad = _profile_negll_and_grad(res.x, t_deltas_k, q_deltas_k, q_taus_k, n_scale)
    if not np.all(np.abs(grad) <= gtol):
        raise FitConvergenceError(
            f"MLE gradient {np.abs(grad).max():.3e} above tolerance {gtol:.1e} "
            f"after {res.nit} iterations"
        )
    alpha, b = res.x
    return IntensityShape(float(alpha), float(math.exp(b)))


def _analytic_lambda(n_trades, q_deltas, q_taus, shape):
    c = float(np.sum(trade_probability(q_deltas, shape) * q_taus))
    if c <= 0:
        raise NoDataError("no quote duration in bucket")
    return n_trades / c


def fit_mle(trades, quotes, bucket, ladder: SizeLadder = SizeLadder(),
            pooled_sides: bool = True, side=None, gtol=1e-7):
    """Maximum-likelihood fit of (lam, alpha, beta) for one size bucket.

    With ``pooled_sides`` (the default) bid and ask observations are
    concatenated and share one parameter set; pass ``pooled_sides=False``
    together with ``side`` for a per-side diagnostic fit. ``lam`` always
    equals its analytic profile value at the fitted shape.
    """
    data = _as_flow_data(trades, quotes, ladder)
    sel_side = None if pooled_sides else side
    if not pooled_sides and side is None:
        raise ValidationError("per-side fit requires side='bid' or 'ask'")
    td = data.trade_deltas(bucket, sel_side)
    qd, qtau = data.quote_arrays(bucket, sel_side)
    if td.size == 0 or qd.size == 0:
        raise NoDataError(f"bucket {bucket}: need at least one trade and one quote")
    shape = _fit_shape([td], [qd], [qtau], gtol=gtol)
    lam = _analytic_lambda(td.size, qd, qtau, shape)
    return lam, shape


def fit_tier(trades, quotes, ladder: SizeLadder = SizeLadder(), gtol=1e-7) -> TierIntensity:
    """Joint fit of one shape shared across all size buckets plus per-size scales.

    Buckets with trades but no quoted duration are rejected; buckets with no
    trades get a zero scale.
    """
    data = _as_flow_data(trades, quotes, ladder)
    k_count = len(data.ladder)
    t_list, q_list, tau_list = [], [], []
    for k in range(1, k_count + 1):
        td = data.trade_deltas(k, None)
        qd, qtau = data.quote_arrays(k, None)
        if td.size and not qd.size:
            raise NoDataError(f"bucket {k} has trades but no quotes")
        t_list.append(td)
        q_list.append(qd)
        tau_list.append(qtau)
    if not any(td.size for td in t_list):
        raise NoDataError("no trades in any bucket")
    if not any(qd.size for qd in q_list):
        raise NoDataError("no quotes in any bucket")
    shape = _fit_shape(t_list, q_list, tau_list, gtol=gtol)
    lams = []
    for td, qd, qtau in zip(t_list, q_list, tau_list):
        lams.append(_analytic_lambda(td.size, qd, qtau, shape) if qd.size else 0.0)
    return TierIntensity(shape, tuple(lams))


def fit_client_shapes(data: FlowData, gtol=1e-7, min_trades: int = 1):
    """Per-client joint shape fits; returns (shapes dict, failures dict)."""
    shapes, failures = {}, {}
    for cid in data.client_ids_present():
        sub = data.subset_clients([cid])
        if sub.n_trades < min_trades:
            failures[cid] = f"only {sub.n_trades} trades"
            continue
        try:
            tier = fit_tier(sub, None, sub.ladder, gtol=gtol)
        except (NoDataError, FitConvergenceError) as exc:
            failures[cid] = str(exc)
            continue
        shapes[cid] = tier.shape
    return shapes, failures


# ---------------------------------------------------------------------------
# k-means tiering
# ---------------------------------------------------------------------------

def _kmeans_once(pts, n_clusters, rng, max_iter=200):
    n = pts.shape[0]
    # k-means++ seeding
    centers = np.empty((n_clusters, pts.shape[1]))
    centers[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for j in range(1, n_clusters):
        total = d2.sum()
        if total <= 0:
            centers[j] = pts[rng.integers(n)]
        else:
            centers[j] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centers[j]) ** 2, axis=1))
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = dist.argmin(axis=1)
        for j in range(n_clusters):
            if not np.any(new_labels == j):
                # revive an empty cluster at the point farthest from its center
                far = dist[np.arange(n), new_labels].argmax()
                new_labels[far] = j
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(n_clusters):
            centers[j] = pts[labels == j].mean(axis=0)
    inertia = float(np.sum((pts - centers[labels]) ** 2))
    return labels, centers, inertia


def cluster_shapes(shapes: Mapping[str, IntensityShape], n_tiers: int,
                   seed: int = 0, restarts: int = 20) -> dict:
    """k-means on z-scored (alpha, beta) points; returns client -> tier in 1..N.

    Tiers are relabelled so that tier 1 has the lowest centroid beta (least
    price-sensitive clients first). Deterministic given the seed.
    """
    if n_tiers < 1:
        raise ValidationError("need at least one tier")
    ids = sorted(shapes)
    if len(ids) < n_tiers:
        raise DegenerateInputError(f"{len(ids)} clients for {n_tiers} tiers")
    raw = np.array([[shapes[c].alpha, shapes[c].beta] for c in ids])
    if np.unique(raw, axis=0).shape[0] < n_tiers:
        raise DegenerateInputError("fewer distinct (alpha, beta) points than tiers")
    mu = raw.mean(axis=0)
    sd = raw.std(axis=0)
    sd[sd == 0] = 1.0
    pts = (raw - mu) / sd
    best = None
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        labels, centers, inertia = _kmeans_once(pts, n_tiers, rng)
        if best is None or inertia < best[2] - 1e-12:
            best = (labels, centers, inertia)
    labels, centers, _ = best
    raw_centers = centers * sd + mu
    order = np.lexsort((raw_centers[:, 0], raw_centers[:, 1]))
    relabel = {int(old): rank + 1 for rank, old in enumerate(order)}
    return {cid: relabel[int(lab)] for cid, lab in zip(ids, labels)}


def kmeans_tiers(shapes: Mapping[str, IntensityShape], n_tiers: int,
                 data: FlowData, seed: int = 0, restarts: int = 20,
                 gtol=1e-7) -> TierAssignment:
    """Cluster clients by fitted shape, then refit each tier on pooled data."""
    membership = cluster_shapes(shapes, n_tiers, seed=seed, restarts=restarts)
    tiers = []
    for t in range(1, n_tiers + 1):
        members = [c for c, lab in membership.items() if lab == t]
        sub = data.subset_clients(members)
        tiers.append(fit_tier(sub, None, sub.ladder, gtol=gtol))
    return TierAssignment(membership, tiers)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def simulate_flow_data(tier: TierIntensity, ladder: SizeLadder, rng,
                       client_id: str = "c0", quote_interval_days: float = 1e-3,
                       total_days: float = 10.0, quote_loc: float = 0.15,
                       quote_scale: float = 0.25, size_jitter: float = 0.3) -> FlowData:
    """Draw quotes and thinned Poisson trades from a known tier model.

    Each side of each bucket streams quotes over ``total_days`` in intervals of
    ``quote_interval_days`` with levels drawn around ``quote_loc``; trades
    arrive within an interval at rate ``lam_k * f(delta)``.
    """
    n_obs = int(round(total_days / quote_interval_days))
    t_size, t_quote, t_side = [], [], []
    q_quote, q_side, q_bucket = [], [], []
    for side in (0, 1):
        for k, (z, lam) in enumerate(zip(ladder.sizes, tier.lambda_by_size), start=1):
            deltas = rng.normal(quote_loc, quote_scale, size=n_obs)
            counts = rng.poisson(lam * trade_probability(deltas, tier.shape)
                                 * quote_interval_days)
            q_quote.append(deltas)
            q_side.append(np.full(n_obs, side, dtype=np.int8))
            q_bucket.append(np.full(n_obs, k, dtype=np.int32))
            n_tr = int(counts.sum())
            if n_tr:
                t_quote.append(np.repeat(deltas, counts))
                t_size.append(z + rng.uniform(-size_jitter, size_jitter, size=n_tr))
                t_side.append(np.full(n_tr, side, dtype=np.int8))
    t_quote = np.concatenate(t_quote) if t_quote else np.empty(0)
    t_size = np.concatenate(t_size) if t_size else np.empty(0)
    t_side = np.concatenate(t_side) if t_side else np.empty(0, dtype=np.int8)
    q_quote = np.concatenate(q_quote)
    q_side = np.concatenate(q_side)
    q_bucket = np.concatenate(q_bucket)
    z = np.asarray(ladder.sizes)
    t_bucket = (np.abs(t_size[:, None] - z[None, :]).argmin(axis=1) + 1).astype(np.int32)
    zeros_t = np.zeros(t_quote.size, dtype=np.int32)
    zeros_q = np.zeros(q_quote.size, dtype=np.int32)
    return FlowData(
        ladder, [client_id],
        (zeros_t, t_side, t_size, t_quote, t_bucket),
        (zeros_q, q_side, q_bucket, q_quote,
         np.full(q_quote.size, quote_interval_days)),
    )


def merge_flow_data(parts: Iterable[FlowData]) -> FlowData:
    """Concatenate per-client datasets that share a ladder."""
    parts = list(parts)
    if not parts:
        raise NoDataError("nothing to merge")
    ladder = parts[0].ladder
    ids = []
    for p in parts:
        if p.ladder.sizes != ladder.sizes:
            raise ValidationError("cannot merge data with different ladders")
        ids.extend(p.clients)
    ids = sorted(set(ids))
    idx = {c: i for i, c in enumerate(ids)}
    def cat(attr, dtype=None):
        return np.concatenate([getattr(p, attr) for p in parts]).astype(
            dtype if dtype else getattr(parts[0], attr).dtype)
    t_client = np.concatenate([
        np.array([idx[p.clients[i]] for i in p.trade_client], dtype=np.int32)
        for p in parts])
    q_client = np.concatenate([
        np.array([idx[p.clients[i]] for i in p.quote_client], dtype=np.int32)
        for p in parts])
    return FlowData(
        ladder, ids,
        (t_client, cat("trade_side"), cat("trade_size"), cat("trade_quote"),
         cat("trade_bucket")),
        (q_client, cat("quote_side"), cat("quote_bucket"), cat("quote_quote"),
         cat("quote_duration")),
    )
