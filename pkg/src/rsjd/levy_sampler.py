"""Sampling the Poisson random measure's contribution over a time step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SamplerContractError
from .model_core import LevySpec, ModelSpec, QuadratureConfig, integrate_nodes


@dataclass
class LevyIncrement:
    big_jumps: list = field(default_factory=list)
    small_jump_sum: np.ndarray = None
    compensator_drift: np.ndarray = None


def _band(levy: LevySpec, big: bool, quad=QuadratureConfig()):
    x, w, exact = levy.nodes(quad)
    if len(w) == 0:
        return x, w, exact
    norm = np.linalg.norm(x, axis=1)
    keep = norm > levy.truncation if big else norm <= levy.truncation
    return x[keep], w[keep], exact


def band_rate(levy: LevySpec, big: bool, quad=QuadratureConfig()) -> float:
    """nu({|x| > a}) (big) or nu({|x| <= a}) for the event part."""
    _, w, _ = _band(levy, big, quad)
    return float(w.sum())


def _band_marks(levy: LevySpec, big: bool, rng, size: int) -> np.ndarray:
    part = levy.jump_part
    if size == 0:
        return np.zeros((0, levy.dim))
    norm = np.linalg.norm(part.atoms, axis=1)
    keep = (norm > levy.truncation) if big else (norm <= levy.truncation)
    keep &= part.masses > 0
    p = part.masses[keep] / part.masses[keep].sum()
    return part.atoms[keep][rng.choice(int(keep.sum()), size=size, p=p)]


def _band_events(levy: LevySpec, big: bool, dt: float, rng) -> np.ndarray:
    """Marks of the jumps in one band over a step of length dt.

    Atomic measures draw the band count directly. Sampled measures draw
    Poisson(total rate * dt) marks from the full law and keep those in the
    band, which is an exact Poisson(band rate * dt) count without integrating
    the band mass.
    """
    part = levy.jump_part
    if part.atoms is not None:
        rate = band_rate(levy, big)
        count = int(rng.poisson(rate * dt)) if rate > 0 else 0
        return _band_marks(levy, big, rng, count)
    count = int(rng.poisson(part.rate * dt))
    if count == 0:
        return np.zeros((0, levy.dim))
    draw = np.asarray(part.sampler(rng, count), dtype=float).reshape(count, levy.dim)
    norm = np.linalg.norm(draw, axis=1)
    return draw[norm > levy.truncation] if big else draw[norm <= levy.truncation]


def sample_big_jumps(levy: LevySpec, t0: float, dt: float, rng, mark_sampler=None) -> list:
    """Big jumps (|x| > a) on (t0, t0 + dt] as a time-sorted list of (time, mark).

    ``mark_sampler(rng, size)`` overrides the normalised restriction of nu to
    the big band; its marks are checked against the band.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if levy.jump_part is None:
        return []
    if mark_sampler is None:
        marks = _band_events(levy, True, dt, rng)
        count = marks.shape[0]
    else:
        rate = band_rate(levy, big=True)
        count = int(rng.poisson(rate * dt)) if rate > 0 else 0
        marks = np.asarray(mark_sampler(rng, count), dtype=float).reshape(count, levy.dim)
        bad = np.linalg.norm(marks, axis=1) <= levy.truncation
        if bad.any():
            raise SamplerContractError(f"big-jump mark {marks[bad][0].tolist()} inside |x| <= a")
    if count == 0:
        return []
    times = np.sort(t0 + dt * (1.0 - rng.random(count)))
    return [(float(s), marks[k]) for k, s in enumerate(times)]


def small_band_mean(levy: LevySpec) -> np.ndarray:
    """int_{|x|<=a} x nu(dx) over the event part."""
    x, w, _ = _band(levy, big=False)
    if len(w) == 0:
        return np.zeros(levy.dim)
    return w @ x


def sample_small_component(levy: LevySpec, dt: float, rng):
    """(small_jump_sum, compensator_drift) for one step of length dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    total = np.zeros(levy.dim)
    drift = np.zeros(levy.dim)
    if levy.jump_part is not None:
        total += _band_events(levy, False, dt, rng).sum(axis=0)
        drift = small_band_mean(levy)
    if levy.kind == "truncated_infinite_activity":
        total += rng.multivariate_normal(np.zeros(levy.dim), dt * levy.small_variance, method="cholesky")
    return total, drift


def sample_increment(levy: LevySpec, t0: float, dt: float, rng) -> LevyIncrement:
    small, drift = sample_small_component(levy, dt, rng)
    return LevyIncrement(sample_big_jumps(levy, t0, dt, rng), small, drift)


# -- vectorised helpers for the path simulator -------------------------------


def next_arrival(levy: LevySpec, t: np.ndarray, rng) -> np.ndarray:
    """Next event time of the compound Poisson part after each t."""
    rate = levy.rate
    if rate <= 0:
        return np.full(t.shape[0], np.inf)
    return t + rng.exponential(1.0 / rate, size=t.shape[0])


def small_band_compensator(spec: ModelSpec, t, y, c, nodes, quad=QuadratureConfig()) -> np.ndarray:
    """int_{|x|<=a} F(t, y, c, x) nu(dx) for each state, (n, d)."""
    x, w, exact = nodes
    n = y.shape[0]
    if len(w) == 0:
        return np.zeros((n, spec.d))
    small = np.linalg.norm(x, axis=1) <= spec.levy.truncation
    if not small.any():
        return np.zeros((n, spec.d))
    xs, ws = x[small], w[small]
    out = np.zeros((n, spec.d))
    for k in range(len(ws)):
        out += ws[k] * spec.coeffs.jump_F(t, y, c, xs[k])
    return out
