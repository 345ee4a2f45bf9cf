"""Regime-switching counting processes driven by state-dependent intensities.

Two interchangeable constructions are provided:

* thinning: candidates from a Poisson clock at the dominating rate
  ``B_c = sum_k b^{c,k}`` are accepted for pair (c, k) with probability
  ``lambda^{c,k}(tau, Y_tau-) / B_c``;
* dominating: every candidate fires, the pair is chosen with probability
  ``b^{c,k} / B_c`` and the path carries the log likelihood ratio
  ``-int (lambda - b) H dt + sum log(lambda / b)`` back to the target law.

With a single uniform per candidate partitioning [0, 1] in ascending target
order, the two constructions consume identical noise and coincide when
lambda == b.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BoundViolationError, ModelError
from .model_core import CoefficientSet, ModelSpec
from .rng import RandomStream

BOUND_RTOL = 1e-12


@dataclass(frozen=True)
class SwitchEvent:
    time: float
    source: int
    target: int
    y_before: np.ndarray
    y_after: np.ndarray

    def __post_init__(self):
        if self.source == self.target:
            raise ModelError("a switch event must change the regime")


@dataclass
class LikelihoodWeight:
    log_weight: float = 0.0

    @property
    def weight(self) -> float:
        return float(np.exp(self.log_weight))

    def __add__(self, other: "LikelihoodWeight") -> "LikelihoodWeight":
        return LikelihoodWeight(self.log_weight + other.log_weight)


def _regime_count(coeffs: CoefficientSet, K: Optional[int]) -> int:
    if K is not None:
        return int(K)
    labels = [k for pair in list(coeffs.bounds) + list(coeffs.lam) for k in pair]
    return max(labels) if labels else 1


def _drivers(rng):
    if isinstance(rng, RandomStream):
        return rng.driver("switch_clock"), rng.driver("switch_select")
    return rng, rng


def check_bound(pair, t, lam, bound):
    """Raise when any intensity value exceeds its declared dominating rate."""
    over = lam > bound * (1 + BOUND_RTOL) + 1e-300
    if np.any(over):
        k = int(np.argmax(over))
        tk = float(np.broadcast_to(t, lam.shape)[k])
        raise BoundViolationError(pair, tk, float(lam[k]), float(bound))


def pair_rates(spec: ModelSpec, t, y, c, rates: str = "lambda", check: bool = True) -> dict:
    """Per-target rates out of the current regime for each state.

    Returns ``{k: (n,) array}`` over all regime labels k (zero where k == c or
    the pair is inactive). ``rates`` selects the intensities or the bounds.
    ``check`` enforces lambda <= b, which only thinning needs: the dominating
    construction stays a valid change of measure when lambda exceeds b.
    """
    co = spec.coeffs
    n = y.shape[0]
    out = {}
    for k in spec.regimes.labels:
        vals = np.zeros(n)
        for i in spec.regimes.labels:
            if i == k:
                continue
            pair = (i, k)
            b = co.bound(pair)
            if b == 0:
                continue
            mask = c == i
            if not mask.any():
                continue
            if rates == "bound":
                vals[mask] = b
            else:
                lam = co.lam_of(pair, t[mask], y[mask])
                if check:
                    check_bound(pair, t[mask], lam, b)
                vals[mask] = lam
        out[k] = vals
    return out


def draw_clock(total_rate: np.ndarray, t: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """t + Exp(total_rate), or +inf where the rate is zero."""
    out = np.full(t.shape[0], np.inf)
    live = total_rate > 0
    if live.any():
        out[live] = t[live] + gen.exponential(1.0, size=int(live.sum())) / total_rate[live]
    return out


def select_targets(spec: ModelSpec, t, y, c, u, construction: str):
    """Resolve switch candidates at (t, y, c) with uniforms u.

    Returns ``(target, log_ratio)``: target regime (0 = rejected candidate) and
    the jump part of the log likelihood ratio (0 under thinning).
    """
    B = spec.total_bound()[c]
    lam = pair_rates(spec, t, y, c, "lambda", check=construction == "thinning")
    select = lam if construction == "thinning" else pair_rates(spec, t, y, c, "bound")
    target = np.zeros(c.shape[0], dtype=int)
    edge = np.zeros(c.shape[0])
    for k in spec.regimes.labels:
        lo = edge
        edge = edge + select[k] / np.where(B > 0, B, 1.0)
        hit = (target == 0) & (u >= lo) & (u < edge)
        target[hit] = k
    log_ratio = np.zeros(c.shape[0])
    if construction == "dominating":
        # the last partition edge may round below 1
        fell = (target == 0) & (B > 0)
        if fell.any():
            for k in reversed(list(spec.regimes.labels)):
                m = fell & (select[k] > 0)
                target[m] = k
                fell &= ~m
        fired = target > 0
        lam_sel = np.array([lam[k][n] for n, k in enumerate(target)]) if fired.any() else np.zeros(0)
        b_sel = np.array([select[k][n] for n, k in enumerate(target)]) if fired.any() else np.zeros(0)
        with np.errstate(divide="ignore"):
            log_ratio[fired] = np.log(lam_sel[fired] / b_sel[fired])
    return target, log_ratio


# -- single-path operations ----------------------------------------------------


def _single_spec(coeffs: CoefficientSet, K: int) -> ModelSpec:
    from .model_core import LevySpec, RegimeSet

    return ModelSpec(RegimeSet(K), LevySpec(), coeffs, horizon=np.inf, y0=np.zeros(coeffs.d), c0=1,
                     start=-np.inf)


def next_switch_thinning(coeffs: CoefficientSet, t: float, horizon: float, current: int,
                         y_provider: Callable[[float], np.ndarray], rng, K: Optional[int] = None
                         ) -> Optional[SwitchEvent]:
    """First accepted switch out of ``current`` in (t, horizon], or None."""
    K = _regime_count(coeffs, K)
    spec = _single_spec(coeffs, K)
    clock, select = _drivers(rng)
    B = spec.total_bound()[current]
    if B <= 0:
        return None
    s = float(t)
    while True:
        s += clock.exponential(1.0) / B
        if s > horizon:
            return None
        y = np.asarray(y_provider(s), dtype=float).reshape(1, -1)
        target, _ = select_targets(spec, np.array([s]), y, np.array([current]),
                                   np.array([select.random()]), "thinning")
        k = int(target[0])
        if k:
            rho = coeffs.rho_of((current, k), np.array([s]), y)[0]
            return SwitchEvent(s, current, k, y[0].copy(), y[0] + rho)


def next_switch_dominating(coeffs: CoefficientSet, t: float, horizon: float, current: int,
                           y_provider: Callable[[float], np.ndarray], rng, K: Optional[int] = None,
                           grid_dt: Optional[float] = None):
    """Next dominating-clock switch and the log-weight accumulated up to it.

    The continuous part ``-int (lambda - b) du`` is integrated with
    left-endpoint quadrature on a grid of step ``grid_dt`` (default: 1000
    cells over the window) up to the event or the horizon.
    """
    K = _regime_count(coeffs, K)
    spec = _single_spec(coeffs, K)
    clock, select = _drivers(rng)
    B = spec.total_bound()[current]
    end = horizon
    s = np.inf
    if B > 0:
        s = float(t) + clock.exponential(1.0) / B
        end = min(s, horizon)
    step = grid_dt or max((end - t) / 1000.0, 1e-12)
    log_w = 0.0
    u0 = float(t)
    while u0 < end:
        u1 = min(u0 + step, end)
        y = np.asarray(y_provider(u0), dtype=float).reshape(1, -1)
        lam = pair_rates(spec, np.array([u0]), y, np.array([current]), "lambda", check=False)
        log_w -= (sum(float(v[0]) for v in lam.values()) - B) * (u1 - u0)
        u0 = u1
    if s > horizon:
        return None, LikelihoodWeight(log_w)
    y = np.asarray(y_provider(s), dtype=float).reshape(1, -1)
    target, ratio = select_targets(spec, np.array([s]), y, np.array([current]),
                                   np.array([select.random()]), "dominating")
    k = int(target[0])
    rho = coeffs.rho_of((current, k), np.array([s]), y)[0]
    return SwitchEvent(s, current, k, y[0].copy(), y[0] + rho), LikelihoodWeight(log_w + float(ratio[0]))


def explicit_log_weight(spec: ModelSpec, events, grid, y_grid, c_grid, horizon=None) -> float:
    """Log of the explicit product form of the density for one recorded path.

    ``prod_pairs exp(-int (lambda - b) H du) prod_jumps (lambda / b)``, with the
    time integral evaluated exactly between events using the left grid value
    of Y (piecewise-constant coefficients).
    """
    grid = np.asarray(grid, dtype=float)
    horizon = grid[-1] if horizon is None else horizon
    times = sorted(set(grid.tolist()) | {e.time for e in events if e.time <= horizon})
    log_w = 0.0
    regime = int(c_grid[0])
    ev = sorted(events, key=lambda e: e.time)
    k_ev = 0
    for a, b in zip(times[:-1], times[1:]):
        while k_ev < len(ev) and ev[k_ev].time <= a:
            e = ev[k_ev]
            y = np.asarray(e.y_before, dtype=float).reshape(1, -1)
            lam = spec.coeffs.lam_of((e.source, e.target), np.array([e.time]), y)[0]
            log_w += np.log(lam / spec.coeffs.bound((e.source, e.target)))
            regime = e.target
            k_ev += 1
        g = np.searchsorted(grid, a, side="right") - 1
        y = np.asarray(y_grid[g], dtype=float).reshape(1, -1)
        B = spec.total_bound()[regime]
        lam = sum(spec.coeffs.lam_of(p, np.array([a]), y)[0] for p in spec.coeffs.active_pairs(regime, spec.K))
        log_w -= (lam - B) * (b - a)
    return float(log_w)


def compensated_switch_martingale(path, i: int, j: int, spec: Optional[ModelSpec] = None) -> np.ndarray:
    """M^{i,j} at the path's record times.

    Without ``spec`` the compensator recorded by the simulator (its own
    sub-step quadrature) is used. With ``spec`` the compensator
    ``int lambda^{i,j}(u, Y_u-) H^i_u- du`` is recomputed from the event log,
    holding Y at its latest recorded value between grid and event times.
    """
    times = np.asarray(path.times, dtype=float)
    H = np.array([[sum(1 for e in path.switch_events if e.source == i and e.target == j and e.time <= t)]
                  for t in times], dtype=float).reshape(-1)
    if spec is None:
        return H - np.asarray(path.compensators)[:, i - 1, j - 1]
    if spec.coeffs.bound((i, j)) == 0:
        return H
    knots = sorted(set(times.tolist()) | {e.time for e in path.switch_events})
    events = sorted(path.switch_events, key=lambda e: e.time)
    comp = np.zeros(len(times))
    acc = 0.0
    regime = int(path.c[0])
    y_cur = np.asarray(path.y[0], dtype=float)
    k_ev = 0
    g_next = 1
    for a, b in zip(knots[:-1], knots[1:]):
        while k_ev < len(events) and events[k_ev].time <= a:
            regime = events[k_ev].target
            y_cur = np.asarray(events[k_ev].y_after, dtype=float)
            k_ev += 1
        gi = np.searchsorted(times, a, side="right") - 1
        if times[gi] == a and not any(e.time == a for e in events):
            y_cur = np.asarray(path.y[gi], dtype=float)
        if regime == i:
            acc += float(spec.coeffs.lam_of((i, j), np.array([a]), y_cur.reshape(1, -1))[0]) * (b - a)
        while g_next < len(times) and times[g_next] <= b:
            comp[g_next] = acc
            g_next += 1
    return H - comp
