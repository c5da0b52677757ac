"""Optimized margin and hedging-gain functions used by the solver.

Two convex conjugates drive the control problem:

* the client Hamiltonian ``H(p) = sup_delta f(delta) * (delta - p)`` for a
  logistic fill probability ``f``; its maximizer is the optimal quote map.
* the hedging Hamiltonian ``sup_v (v * p - L(v))`` for the execution cost
  ``L(v) = eta * v^2 + phi * |v|``, which has a piecewise quadratic closed
  form with a dead zone ``|p| <= phi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnboundedHamiltonianError, ValidationError
from .flow import IntensityShape


@dataclass(frozen=True)
class ExecutionCost:
    """Quadratic-plus-proportional cost of hedging at rate v (M EUR/day).

    ``rate(v) = eta * v**2 + phi * abs(v)`` in bps * M EUR / day.
    """

    eta: float = 1e-5  # bps * day / M EUR
    phi: float = 0.1  # bps

    def __post_init__(self):
        if self.eta <= 0:
            raise ValidationError("eta must be positive")
        if self.phi < 0:
            raise ValidationError("phi must be nonnegative")

    def rate(self, v):
        v = np.asarray(v, dtype=float)
        out = self.eta * v * v + self.phi * np.abs(v)
        return float(out) if out.ndim == 0 else out


def lambertw_exp(y):
    """Principal-branch Lambert W evaluated at exp(y), for real y.

    Solves ``w + log(w) = y`` by guarded Newton iterations; safe for the whole
    double range of y (no overflow for large y, returns exp(y) when that is
    already exact to machine precision).
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    w = np.empty_like(y)
    tiny = y < -36.0  # W(e^y) = e^y to full double precision
    big = y >= 0.5
    mid = ~tiny & ~big
    w[tiny] = np.exp(y[tiny])
    if np.any(big):
        yb = y[big]
        w[big] = yb - np.log(yb)
    if np.any(mid):
        x = np.exp(y[mid])
        w[mid] = x / (1.0 + x)  # lower bound of W, keeps Newton monotone
    active = ~tiny
    if np.any(active):
        wa = w[active]
        ya = y[active]
        for _ in range(6):
            wa = wa * (1.0 + ya - np.log(wa)) / (1.0 + wa)
        w[active] = wa
    return float(w[0]) if scalar else w


def exec_hamiltonian(p, cost: ExecutionCost):
    """Hedging-gain conjugate and its derivative at marginal value p (bps).

    Returns ``(value, derivative)`` where the value is
    ``max(0, |p| - phi)**2 / (4 * eta)`` (bps * M EUR / day) and the
    derivative is the optimal hedge rate in M EUR / day; it vanishes exactly
    on the dead zone ``|p| <= phi``.
    """
    p = np.asarray(p, dtype=float)
    excess = np.maximum(0.0, np.abs(p) - cost.phi)
    value = excess * excess / (4.0 * cost.eta)
    deriv = np.sign(p) * excess / (2.0 * cost.eta)
    if p.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def client_hamiltonian(p, shape: IntensityShape):
    """Value, derivative and maximizing quote of the client margin conjugate.

    For logistic fill probability the first-order condition
    ``delta = p + 1 / (beta * (1 - f(delta)))`` reduces to a Lambert W
    equation, giving exactly

        w = W(exp(-(1 + alpha + beta * p)))
        H(p) = w / beta, H'(p) = -w / (1 + w), delta*(p) = p + (1 + w) / beta.

    Returns ``(H, H', delta*)``.
    """
    if shape.beta <= 0:
        raise UnboundedHamiltonianError("client Hamiltonian is unbounded for beta <= 0")
    p = np.asarray(p, dtype=float)
    w = lambertw_exp(-(1.0 + shape.alpha + shape.beta * p))
    value = w / shape.beta
    fill = w / (1.0 + w)  # equals f(delta*)
    delta = p + (1.0 + w) / shape.beta
    if p.ndim == 0:
        return float(value), float(-fill), float(delta)
    return value, -fill, delta


def optimal_quote(p, shape: IntensityShape):
    """Quote (bps) that maximizes f(delta) * (delta - p); always above p."""
    return client_hamiltonian(p, shape)[2]
