"""File formats: trade/quote CSVs, fitted-tier JSON, strategy CSV, reports.

Strategy tables round-trip bit-exactly: floats are written with 17
significant digits and unavailable quotes as empty fields.
"""

from __future__ import annotations

import csv
import json
import re
from datetime import datetime, timezone

import numpy as np

from .errors import ParseError, ValidationError
from .flow import FlowData, IntensityShape, SizeLadder, TierIntensity
from .hjb import StrategyTable
from .simulate import EventLog, FrontierResult, SimMetrics, volume_shares

TRADE_COLUMNS = ["client_id", "timestamp_utc", "side", "size_meur", "quote_bps"]
QUOTE_COLUMNS = ["client_id", "side", "size_bucket", "quote_bps", "duration_days"]


def _fmt(x: float) -> str:
    if np.isnan(x):
        return ""
    return format(float(x), ".17g")


def _parse_timestamp(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc)
    return ts


def load_flow_data(trades_path, quotes_path, ladder: SizeLadder = SizeLadder(),
                   liquid_hours=(6.0, 20.0)) -> FlowData:
    """Read the trade and quote CSVs into a column store.

    Trades outside the liquid UTC window are dropped; quotes carry explicit
    durations and are not filtered. Malformed rows raise ``ParseError`` with
    the file and line number.
    """
    sides = {"bid": 0, "ask": 1}
    t_client, t_side, t_size, t_quote = [], [], [], []
    lo, hi = liquid_hours
    with open(trades_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRADE_COLUMNS:
            raise ParseError(trades_path, 1,
                             f"expected header {','.join(TRADE_COLUMNS)}")
        for row in reader:
            line = reader.line_num
            try:
                side = sides[row["side"].strip().lower()]
                size = float(row["size_meur"])
                quote = float(row["quote_bps"])
                ts = _parse_timestamp(row["timestamp_utc"].strip())
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(trades_path, line, f"bad trade row: {exc}") from None
            if size <= 0:
                raise ParseError(trades_path, line, f"trade size {size} not positive")
            hour = ts.hour + ts.minute / 60.0 + ts.second / 3600.0
            if not lo <= hour < hi:
                continue
            t_client.append(row["client_id"].strip())
            t_side.append(side)
            t_size.append(size)
            t_quote.append(quote)

    q_client, q_side, q_bucket, q_quote, q_dur = [], [], [], [], []
    with open(quotes_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != QUOTE_COLUMNS:
            raise ParseError(quotes_path, 1,
                             f"expected header {','.join(QUOTE_COLUMNS)}")
        for row in reader:
            line = reader.line_num
            try:
                side = sides[row["side"].strip().lower()]
                bucket = int(row["size_bucket"])
                quote = float(row["quote_bps"])
                dur = float(row["duration_days"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(quotes_path, line, f"bad quote row: {exc}") from None
            if not 1 <= bucket <= len(ladder):
                raise ParseError(quotes_path, line,
                                 f"size_bucket {bucket} outside 1..{len(ladder)}")
            if dur <= 0:
                raise ParseError(quotes_path, line, f"duration {dur} not positive")
            q_client.append(row["client_id"].strip())
            q_side.append(side)
            q_bucket.append(bucket)
            q_quote.append(quote)
            q_dur.append(dur)

    ids = sorted(set(t_client) | set(q_client))
    idx = {c: i for i, c in enumerate(ids)}
    z = np.asarray(ladder.sizes)
    t_size_arr = np.asarray(t_size, dtype=float)
    if t_size_arr.size:
        t_bucket = (np.abs(t_size_arr[:, None] - z[None, :]).argmin(axis=1) + 1)
    else:
        t_bucket = np.empty(0)
    return FlowData(
        ladder, ids,
        (np.array([idx[c] for c in t_client], dtype=np.int32),
         np.array(t_side, dtype=np.int8), t_size_arr,
         np.asarray(t_quote, dtype=float), t_bucket.astype(np.int32)),
        (np.array([idx[c] for c in q_client], dtype=np.int32),
         np.array(q_side, dtype=np.int8), np.array(q_bucket, dtype=np.int32),
         np.asarray(q_quote, dtype=float), np.asarray(q_dur, dtype=float)))


def write_trades_csv(path, rows):
    """rows: iterable of (client_id, timestamp_iso, side, size_meur, quote_bps)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRADE_COLUMNS)
        w.writerows(rows)


def write_quotes_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUOTE_COLUMNS)
        w.writerows(rows)


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def tiers_to_payload(tiers, membership=None) -> dict:
    out = []
    for i, tier in enumerate(tiers, start=1):
        members = sorted(c for c, t in (membership or {}).items() if t == i)
        out.append({
            "alpha": tier.shape.alpha,
            "beta": tier.shape.beta,
            "lambda_by_size": list(tier.lambda_by_size),
            "member_client_ids": members,
        })
    return {"tiers": out}


def tiers_from_payload(payload: dict):
    tiers, membership = [], {}
    for i, rec in enumerate(payload["tiers"], start=1):
        tiers.append(TierIntensity(IntensityShape(rec["alpha"], rec["beta"]),
                                   tuple(rec["lambda_by_size"])))
        for cid in rec.get("member_client_ids", []):
            membership[cid] = i
    return tiers, membership


def client_shapes_to_payload(shapes: dict, failures: dict) -> dict:
    return {
        "clients": {cid: {"alpha": s.alpha, "beta": s.beta}
                    for cid, s in shapes.items()},
        "failures": dict(failures),
    }


def client_shapes_from_payload(payload: dict) -> dict:
    return {cid: IntensityShape(rec["alpha"], rec["beta"])
            for cid, rec in payload["clients"].items()}


def write_strategy_csv(path, table: StrategyTable):
    n_tiers = table.n_tiers
    header = ["q_meur", "v_meur_per_day"]
    for n in range(1, n_tiers + 1):
        for z in table.sizes:
            header += [f"bid_t{n}_z{z:g}", f"ask_t{n}_z{z:g}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, q in enumerate(table.q_grid):
            row = [_fmt(q), _fmt(table.hedge[i])]
            for n in range(n_tiers):
                for k in range(table.sizes.size):
                    row += [_fmt(table.bid[n, k, i]), _fmt(table.ask[n, k, i])]
            w.writerow(row)


_QUOTE_COL = re.compile(r"^(bid|ask)_t(\d+)_z([0-9.eE+-]+)$")


def read_strategy_csv(path) -> StrategyTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["q_meur", "v_meur_per_day"]:
            raise ParseError(path, 1, "not a strategy table")
        cols = []
        for name in header[2:]:
            m = _QUOTE_COL.match(name)
            if not m:
                raise ParseError(path, 1, f"unexpected column {name!r}")
            cols.append((m.group(1), int(m.group(2)), float(m.group(3))))
        rows = list(reader)
    n_tiers = max(c[1] for c in cols)
    sizes = sorted({c[2] for c in cols})
    size_idx = {z: k for k, z in enumerate(sizes)}
    nq = len(rows)
    q = np.empty(nq)
    v = np.empty(nq)
    bid = np.full((n_tiers, len(sizes), nq), np.nan)
    ask = np.full((n_tiers, len(sizes), nq), np.nan)

    def val(s):
        return float(s) if s else np.nan

    for i, row in enumerate(rows):
        if len(row) != 2 + len(cols):
            raise ParseError(path, i + 2, f"expected {2 + len(cols)} fields")
        q[i] = float(row[0])
        v[i] = float(row[1])
        for (side, n, z), cell in zip(cols, row[2:]):
            target = bid if side == "bid" else ask
            target[n - 1, size_idx[z], i] = val(cell)
    return StrategyTable(q, np.asarray(sizes, dtype=float), bid, ask, v)


def metrics_to_payload(metrics: SimMetrics) -> dict:
    shares = volume_shares(metrics)
    tau = metrics.tau_r_minutes
    return {
        "gamma": metrics.gamma,
        "mean_pnl": metrics.mean_pnl,
        "std_pnl": metrics.std_pnl,
        "turnover_by_tier": list(metrics.turnover_by_tier),
        "external_turnover": metrics.external_turnover,
        "external_share": shares["external_share"],
        "client_share": shares["client_share"],
        "externalization_ratio": shares["externalization_ratio"],
        "tau_R_minutes": tau,
        "n_paths": metrics.n_paths,
        "seed": int(metrics.seed),
        "horizon_days": metrics.horizon_days,
    }


def write_frontier_csv(path, result: FrontierResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "kind", "std_pnl", "mean_pnl"])
        for r in result.rows:
            w.writerow([_fmt(r.gamma), r.kind, _fmt(r.std_pnl), _fmt(r.mean_pnl)])


def write_event_log_csv(path, log: EventLog):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time_days", "tier", "side", "size_meur",
                    "quote_bps", "price_rel"])
        for i in range(log.path.size):
            w.writerow([int(log.path[i]), _fmt(log.time_days[i]),
                        int(log.tier[i]) + 1, "bid" if log.side[i] == 0 else "ask",
                        _fmt(log.size[i]), _fmt(log.quote_bps[i]),
                        _fmt(log.price_rel[i])])
