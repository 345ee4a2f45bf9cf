"""Hybrid Euler / event-driven simulation of regime-switching jump-diffusions.

Paths are simulated in fixed-size blocks, vectorised over the paths of a
block. Within each Euler step every path advances from its current time to
its next event (Levy arrival or switching candidate) or the step end,
whichever comes first; the continuous part uses coefficients frozen at the
left end of that sub-interval, and events are applied exactly at their
sampled times using the pre-event state.

Block ``b`` always draws from ``RandomStream(master_seed, b)``; blocks are
reduced in index order, so results do not depend on the number of worker
threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ModelError, PathDivergedError, ReplayError
from .levy_sampler import next_arrival, small_band_compensator
from .model_core import ModelSpec, QuadratureConfig, jacobian_x_at_zero
from .rng import RandomStream
from .switching_engine import SwitchEvent, check_bound, draw_clock, select_targets


@dataclass
class SimulationConfig:
    dt: float
    construction: str = "thinning"
    record_grid: Optional[Sequence[float]] = None
    master_seed: int = 0
    path_count: int = 1
    block_size: int = 16384
    threads: int = 1
    retain_paths: bool = True
    extremes: Optional[str] = None
    record_noise: bool = False
    record_compensators: bool = True
    divergence_threshold: float = 1e12
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)

    def validate(self, spec: ModelSpec):
        if not (0 < self.dt <= spec.horizon - spec.start):
            raise ModelError("dt must satisfy 0 < dt <= T - r")
        if self.construction not in ("thinning", "dominating"):
            raise ModelError(f"unknown construction {self.construction!r}")
        if self.path_count < 1 or self.block_size < 1:
            raise ModelError("path_count and block_size must be positive")
        if self.extremes not in (None, "grid", "steps", "bridge"):
            raise ModelError(f"unknown extremes mode {self.extremes!r}")
        grid = self.grid(spec)
        if grid[0] < spec.start - 1e-12 or grid[-1] > spec.horizon + 1e-12:
            raise ModelError("record grid must lie within [r, T]")

    def grid(self, spec: ModelSpec) -> np.ndarray:
        if self.record_grid is None:
            return np.array([spec.start, spec.horizon])
        return np.unique(np.asarray(self.record_grid, dtype=float))


def step_boundaries(spec: ModelSpec, cfg: SimulationConfig) -> np.ndarray:
    n_steps = max(1, int(math.ceil((spec.horizon - spec.start) / cfg.dt - 1e-9)))
    steps = spec.start + cfg.dt * np.arange(1, n_steps + 1)
    steps[-1] = spec.horizon
    steps = steps[steps <= spec.horizon]
    return np.unique(np.concatenate([steps, cfg.grid(spec)[cfg.grid(spec) > spec.start]]))


# ---------------------------------------------------------------------------
# Records


@dataclass
class PathRecord:
    times: np.ndarray
    y: np.ndarray
    c: np.ndarray
    residence: np.ndarray
    switch_events: list
    levy_events: list
    H_counters: np.ndarray
    log_weight: float
    seed: tuple
    compensators: Optional[np.ndarray] = None
    integrals: Optional[np.ndarray] = None
    log_weight_grid: Optional[np.ndarray] = None
    diverged: bool = False
    zero_weight: bool = False


@dataclass
class PathBatch:
    """All paths of one block, arrays indexed ``[path, grid, ...]``."""

    times: np.ndarray
    y: np.ndarray
    c: np.ndarray
    residence: np.ndarray
    log_weight: np.ndarray
    H: np.ndarray
    compensators: Optional[np.ndarray]
    integrals: Optional[np.ndarray]
    y_max: Optional[np.ndarray]
    y_min: Optional[np.ndarray]
    noise: Optional[dict]
    switch_events: dict
    levy_events: dict
    diverged: np.ndarray
    zero_weight: np.ndarray
    master_seed: int
    block: int
    offset: int
    K: int

    @property
    def size(self) -> int:
        return self.y.shape[0]

    def path(self, k: int) -> PathRecord:
        sw = self.switch_events
        sel = np.nonzero(sw["path"] == k)[0]
        events = [SwitchEvent(float(sw["time"][i]), int(sw["source"][i]), int(sw["target"][i]),
                              sw["y_before"][i].copy(), sw["y_after"][i].copy()) for i in sel]
        lv = self.levy_events
        lsel = np.nonzero(lv["path"] == k)[0]
        levy = [(float(lv["time"][i]), lv["mark"][i].copy(), lv["dy"][i].copy()) for i in lsel]
        return PathRecord(
            times=self.times, y=self.y[k], c=self.c[k], residence=self.residence[k],
            switch_events=events, levy_events=levy, H_counters=self.H[k, -1],
            log_weight=float(self.log_weight[k, -1]), seed=(self.master_seed, self.offset + k),
            compensators=None if self.compensators is None else self.compensators[k],
            integrals=None if self.integrals is None else self.integrals[k],
            log_weight_grid=self.log_weight[k], diverged=bool(self.diverged[k]),
            zero_weight=bool(self.zero_weight[k]),
        )


class _EventLog:
    def __init__(self):
        self.chunks = {}

    def add(self, **cols):
        for k, v in cols.items():
            self.chunks.setdefault(k, []).append(np.asarray(v))

    def finish(self, shapes: dict) -> dict:
        out = {}
        for k, trail in shapes.items():
            parts = self.chunks.get(k)
            if parts:
                out[k] = np.concatenate(parts, axis=0)
            else:
                dtype = int if k in ("path", "source", "target", "regime") else float
                out[k] = np.zeros((0,) + trail, dtype=dtype)
        return out


# ---------------------------------------------------------------------------
# Block simulation


def simulate_block(spec: ModelSpec, cfg: SimulationConfig, stream: RandomStream, n: int,
                   integrands: Sequence[Callable] = (), offset: int = 0) -> PathBatch:
    """Simulate ``n`` paths driven by ``stream``."""
    cfg.validate(spec)
    co = spec.coeffs
    d, p, K = spec.d, co.p, spec.K
    nx = spec.levy.dim
    grid = cfg.grid(spec)
    G = grid.size
    boundaries = step_boundaries(spec, cfg)
    record_at = {float(g): k for k, g in enumerate(grid)}
    nodes = spec.levy.nodes(cfg.quad)
    has_levy = spec.levy.rate > 0
    has_small_gauss = spec.levy.kind == "truncated_infinite_activity" and np.any(spec.levy.small_variance)
    dominating = cfg.construction == "dominating"
    Btot = spec.total_bound()
    pairs = [pr for pr in spec.regimes.pairs() if co.bound(pr) > 0]

    g_w = stream.driver("brownian")
    g_lc = stream.driver("levy_clock")
    g_lm = stream.driver("levy_marks")
    g_sc = stream.driver("switch_clock")
    g_ss = stream.driver("switch_select")
    g_sm = stream.driver("small_jumps")
    g_br = stream.driver("bridge")

    t = np.full(n, spec.start)
    y = np.tile(spec.y0, (n, 1))
    c = np.full(n, spec.c0, dtype=int)
    logw = np.zeros(n)
    last_switch = np.full(n, spec.start)
    H = np.zeros((n, K + 1, K + 1))
    comp = np.zeros((n, K + 1, K + 1))
    alive = np.ones(n, dtype=bool)
    zero_w = np.zeros(n, dtype=bool)
    next_levy = next_arrival(spec.levy, t, g_lc) if has_levy else np.full(n, np.inf)
    next_sw = draw_clock(Btot[c], t, g_sc)

    out_y = np.zeros((n, G, d))
    out_c = np.zeros((n, G), dtype=int)
    out_r = np.zeros((n, G))
    out_w = np.zeros((n, G))
    out_H = np.zeros((n, G, K, K))
    out_comp = np.zeros((n, G, K, K)) if cfg.record_compensators else None
    integ = None
    out_int = None
    ext = cfg.extremes
    ymax = y.copy() if ext else None
    ymin = y.copy() if ext else None
    out_max = np.zeros((n, G, d)) if ext else None
    out_min = np.zeros((n, G, d)) if ext else None
    noise = None
    if cfg.record_noise:
        noise = {"W": np.zeros((n, K + 1, p)), "occupation": np.zeros((n, K + 1)),
                 "marks_small": np.zeros((n, K + 1, nx)), "marks_big": np.zeros((n, K + 1, nx))}
        out_noise = {k: np.zeros((n, G) + v.shape[1:]) for k, v in noise.items()}
    sw_log, lv_log = _EventLog(), _EventLog()

    def record(gk):
        out_y[:, gk] = y
        out_c[:, gk] = c
        out_r[:, gk] = t - last_switch
        out_w[:, gk] = logw
        out_H[:, gk] = H[:, 1:, 1:]
        if out_comp is not None:
            out_comp[:, gk] = comp[:, 1:, 1:]
        if out_int is not None:
            out_int[:, gk] = integ
        if ext:
            if ext == "grid":
                np.maximum(ymax, y, out=ymax)
                np.minimum(ymin, y, out=ymin)
            out_max[:, gk] = ymax
            out_min[:, gk] = ymin
        if noise is not None:
            for k, v in noise.items():
                out_noise[k][:, gk] = v

    if spec.start in record_at:
        if integrands:
            integ = np.zeros((n, 0))
        record(record_at[spec.start])

    for t_end in boundaries:
        idx = np.nonzero(alive & (t < t_end))[0]
        while idx.size:
            tn = t[idx]
            yi = y[idx]
            ci = c[idx]
            tnext = np.minimum(np.minimum(next_levy[idx], next_sw[idx]), t_end)
            delta = tnext - tn

            # left-endpoint accumulations
            if integrands:
                vals = np.concatenate([np.asarray(f(tn, yi, ci), dtype=float).reshape(idx.size, -1)
                                       for f in integrands], axis=1)
                if integ is None or integ.shape[1] != vals.shape[1]:
                    integ = np.zeros((n, vals.shape[1]))
                    out_int = np.zeros((n, G, vals.shape[1]))
                integ[idx] += vals * delta[:, None]
            if pairs and (cfg.record_compensators or dominating):
                lam_sum = np.zeros(idx.size)
                for (i, j) in pairs:
                    m = ci == i
                    if not m.any():
                        continue
                    lam = co.lam_of((i, j), tn[m], yi[m])
                    if not dominating:
                        check_bound((i, j), tn[m], lam, co.bound((i, j)))
                    rows = idx[m]
                    comp[rows, i, j] += lam * delta[m]
                    lam_sum[m] += lam
                if dominating:
                    logw[idx] -= (lam_sum - Btot[ci]) * delta
            if noise is not None:
                noise["occupation"][idx, ci] += delta

            # continuous part
            mu = np.asarray(co.mu(tn, yi, ci), dtype=float).reshape(idx.size, d)
            sig = np.asarray(co.sigma(tn, yi, ci), dtype=float).reshape(idx.size, d, p)
            drift = mu
            if has_levy:
                drift = mu - small_band_compensator(spec, tn, yi, ci, nodes, cfg.quad)
            dW = g_w.standard_normal((idx.size, p)) * np.sqrt(delta)[:, None]
            ynew = yi + drift * delta[:, None] + np.einsum("ndp,np->nd", sig, dW)
            if has_small_gauss:
                J = jacobian_x_at_zero(spec, tn, yi, ci)
                L = np.linalg.cholesky(spec.levy.small_variance + 1e-300 * np.eye(nx))
                gsum = (g_sm.standard_normal((idx.size, nx)) @ L.T) * np.sqrt(delta)[:, None]
                ynew += np.einsum("ndk,nk->nd", J, gsum)
            if noise is not None:
                noise["W"][idx, ci] += dW
            if ext == "steps":
                ymax[idx] = np.maximum(ymax[idx], ynew)
                ymin[idx] = np.minimum(ymin[idx], ynew)
            elif ext == "bridge":
                var = np.einsum("ndp,ndp->nd", sig, sig) * delta[:, None]
                gap = (ynew - yi) ** 2
                e1 = -2.0 * var * np.log1p(-g_br.random((idx.size, d)))
                e2 = -2.0 * var * np.log1p(-g_br.random((idx.size, d)))
                top = 0.5 * (yi + ynew + np.sqrt(gap + e1))
                bot = 0.5 * (yi + ynew - np.sqrt(gap + e2))
                ymax[idx] = np.maximum(ymax[idx], top)
                ymin[idx] = np.minimum(ymin[idx], bot)
            y[idx] = ynew
            t[idx] = tnext

            # events: Levy before switching on (measure-zero) ties
            is_lv = next_levy[idx] == tnext
            is_sw = (~is_lv) & (next_sw[idx] == tnext)
            if is_lv.any():
                rows = idx[is_lv]
                tt = t[rows]
                yb = y[rows].copy()
                cr = c[rows]
                marks = spec.levy.sample_marks(g_lm, rows.size)
                dy = co.jump_F(tt, yb, cr, marks)
                y[rows] = yb + dy
                lv_log.add(path=rows, time=tt, mark=marks, dy=dy, y_before=yb, regime=cr)
                if noise is not None:
                    small = np.linalg.norm(marks, axis=1) <= 1.0
                    np.add.at(noise["marks_small"], (rows[small], cr[small]), marks[small])
                    np.add.at(noise["marks_big"], (rows[~small], cr[~small]), marks[~small])
                next_levy[rows] = next_arrival(spec.levy, tt, g_lc)
                if ext in ("steps", "bridge"):
                    ymax[rows] = np.maximum(ymax[rows], y[rows])
                    ymin[rows] = np.minimum(ymin[rows], y[rows])
            if is_sw.any():
                rows = idx[is_sw]
                tt = t[rows]
                yb = y[rows].copy()
                cr = c[rows].copy()
                u = g_ss.random(rows.size)
                target, log_ratio = select_targets(spec, tt, yb, cr, u, cfg.construction)
                fired = target > 0
                if dominating:
                    logw[rows] += log_ratio
                    zero_w[rows[np.isneginf(log_ratio)]] = True
                if fired.any():
                    fr = rows[fired]
                    src, dst = cr[fired], target[fired]
                    ya = yb[fired].copy()
                    for (i, j) in {(int(a), int(b)) for a, b in zip(src, dst)}:
                        m = (src == i) & (dst == j)
                        ya[m] = yb[fired][m] + co.rho_of((i, j), tt[fired][m], yb[fired][m])
                    y[fr] = ya
                    c[fr] = dst
                    H[fr, src, dst] += 1
                    last_switch[fr] = tt[fired]
                    sw_log.add(path=fr, time=tt[fired], source=src, target=dst, y_before=yb[fired], y_after=ya)
                    if ext in ("steps", "bridge"):
                        ymax[fr] = np.maximum(ymax[fr], ya)
                        ymin[fr] = np.minimum(ymin[fr], ya)
                next_sw[rows] = draw_clock(Btot[c[rows]], tt, g_sc)

            bad = ~np.all(np.isfinite(y[idx]) & (np.abs(y[idx]) <= cfg.divergence_threshold), axis=1)
            if bad.any():
                alive[idx[bad]] = False
            idx = idx[alive[idx] & (t[idx] < t_end)]
        if float(t_end) in record_at:
            record(record_at[float(t_end)])

    return PathBatch(
        times=grid, y=out_y, c=out_c, residence=out_r, log_weight=out_w, H=out_H,
        compensators=out_comp, integrals=out_int, y_max=out_max, y_min=out_min,
        noise=None if noise is None else out_noise,
        switch_events=sw_log.finish({"path": (), "time": (), "source": (), "target": (),
                                     "y_before": (d,), "y_after": (d,)}),
        levy_events=lv_log.finish({"path": (), "time": (), "mark": (nx,), "dy": (d,), "y_before": (d,),
                                   "regime": ()}),
        diverged=~alive, zero_weight=zero_w, master_seed=stream.master_seed, block=stream.block,
        offset=offset, K=K,
    )


def simulate_path(spec: ModelSpec, cfg: SimulationConfig, stream: RandomStream,
                  integrands: Sequence[Callable] = ()) -> PathRecord:
    """One path driven by ``stream``; the ensemble's first path uses block 0."""
    batch = simulate_block(spec, cfg, stream, 1, integrands, offset=stream.block * cfg.block_size)
    rec = batch.path(0)
    if rec.diverged:
        raise PathDivergedError("path left the finite range", last_state=(rec.y[-1], rec.c[-1]))
    return rec


# ---------------------------------------------------------------------------
# Ensembles


@dataclass
class EnsembleSummary:
    times: np.ndarray
    path_count: int
    weight_sum: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    regime_freq: np.ndarray
    ess: np.ndarray
    diverged: int
    zero_weight: int
    batches: Optional[list] = None

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(), "path_count": self.path_count,
            "weight_sum": self.weight_sum.tolist(), "mean": self.mean.tolist(), "var": self.var.tolist(),
            "regime_freq": self.regime_freq.tolist(), "ess": self.ess.tolist(),
            "diverged": self.diverged, "zero_weight": self.zero_weight,
        }


def block_layout(cfg: SimulationConfig) -> list[tuple[int, int, int]]:
    """(block index, offset, size) for every block of the ensemble."""
    out = []
    for b, off in enumerate(range(0, cfg.path_count, cfg.block_size)):
        out.append((b, off, min(cfg.block_size, cfg.path_count - off)))
    return out


def _partial_sums(batch: PathBatch, K: int):
    ok = ~batch.diverged
    w = np.where(ok[:, None], np.exp(batch.log_weight), 0.0)
    y = np.where(ok[:, None, None], batch.y, 0.0)
    s0 = w.sum(axis=0)
    s1 = np.einsum("ng,ngd->gd", w, y)
    s2 = np.einsum("ng,ngd->gd", w, y * y)
    freq = np.stack([np.sum(w * (batch.c == k), axis=0) for k in range(1, K + 1)], axis=1)
    return s0, s1, s2, freq, (w * w).sum(axis=0), int(batch.diverged.sum()), int(batch.zero_weight.sum())


def run_blocks(spec: ModelSpec, cfg: SimulationConfig, integrands: Sequence[Callable] = (),
               consume: Optional[Callable] = None) -> list:
    """Simulate every block, returning ``consume(batch)`` per block in index order."""
    cfg.validate(spec)
    layout = block_layout(cfg)

    def work(item):
        b, off, size = item
        batch = simulate_block(spec, cfg, RandomStream(cfg.master_seed, b), size, integrands, offset=off)
        return consume(batch) if consume is not None else batch

    if cfg.threads <= 1 or len(layout) == 1:
        return [work(item) for item in layout]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(work, layout))


def simulate_ensemble(spec: ModelSpec, cfg: SimulationConfig, integrands: Sequence[Callable] = ()
                      ) -> EnsembleSummary:
    """Run ``cfg.path_count`` paths and summarise weighted moments on the record grid."""
    K = spec.K

    def consume(batch):
        return _partial_sums(batch, K), (batch if cfg.retain_paths else None)

    results = run_blocks(spec, cfg, integrands, consume)
    grid = cfg.grid(spec)
    G, d = grid.size, spec.d
    s0, s1, s2 = np.zeros(G), np.zeros((G, d)), np.zeros((G, d))
    freq, sw2 = np.zeros((G, K)), np.zeros(G)
    div = zw = 0
    for (a0, a1, a2, fr, w2, dv, z), _ in results:
        s0 += a0
        s1 += a1
        s2 += a2
        freq += fr
        sw2 += w2
        div += dv
        zw += z
    if div == cfg.path_count:
        raise PathDivergedError("every path of the ensemble diverged")
    safe = np.where(s0 > 0, s0, 1.0)
    mean = s1 / safe[:, None]
    var = np.maximum(s2 / safe[:, None] - mean**2, 0.0)
    return EnsembleSummary(
        times=grid, path_count=cfg.path_count, weight_sum=s0, mean=mean, var=var,
        regime_freq=freq / safe[:, None], ess=s0**2 / np.where(sw2 > 0, sw2, 1.0), diverged=div,
        zero_weight=zw, batches=[b for _, b in results] if cfg.retain_paths else None,
    )


def concat_field(batches: Sequence[PathBatch], name: str) -> np.ndarray:
    return np.concatenate([getattr(b, name) for b in batches], axis=0)


# ---------------------------------------------------------------------------
# Closed-form replay for the exponential Levy model


def closed_form_exp_levy(batch: PathBatch, sigma: Sequence[float], rho_matrix, J_values: Sequence[float],
                         y0: float, small_mark_mean: float, rate: float = 0.0, coord: int = 0) -> np.ndarray:
    """Closed-form exponential-Levy values at the record times on recorded noise.

    ``log Y_t = log y0 + sum_c [occ_c (rate + J(sigma_c)) + sigma_c (W_c + X_c - occ_c m)]
    + sum_ij rho_ij H_ij`` where ``X_c`` is the sum of Levy marks seen in
    regime c and ``m = int_{|x|<=1} x nu(dx)``. Returns an (n, G) array.
    """
    if batch.noise is None:
        raise ReplayError("batch was simulated without record_noise")
    K = batch.K
    sig = np.concatenate([[0.0], np.asarray(sigma, dtype=float)])
    Jv = np.concatenate([[0.0], np.asarray(J_values, dtype=float)])
    rho = np.asarray(rho_matrix, dtype=float).reshape(K, K)
    occ = batch.noise["occupation"]
    W = batch.noise["W"][..., 0]
    X = batch.noise["marks_small"][..., 0] + batch.noise["marks_big"][..., 0]
    expo = np.einsum("ngk,k->ng", occ, rate + Jv) + np.einsum("ngk,k->ng", W + X - occ * small_mark_mean, sig)
    expo += np.einsum("ngij,ij->ng", batch.H, rho)
    return y0 * np.exp(expo)
