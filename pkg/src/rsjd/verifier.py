"""Statistical checks of simulated ensembles against the martingale-problem,
semimartingale, moment, uniqueness and Markov statements for the model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import expm

from .errors import DegenerateWeightsError
from .model_core import ModelSpec, TestFunction, characteristic_drifts, generator_suite_terms
from .path_simulator import PathBatch, SimulationConfig, concat_field, run_blocks

N_SE = 3.0


@dataclass
class TestReport:
    name: str
    statistic: float
    se: float
    threshold: float
    passed: bool
    sample_size: int
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    __test__ = False

    def as_row(self) -> dict:
        return {"test": self.name, "statistic": self.statistic, "se": self.se, "threshold": self.threshold,
                "pass": self.passed, "sample_size": self.sample_size}


def weighted_mean_se(x: np.ndarray, w: Optional[np.ndarray] = None):
    """Mean and standard error along axis 0 (self-normalised when weighted)."""
    x = np.asarray(x, dtype=float)
    if w is None:
        n = x.shape[0]
        return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(n)
    w = np.asarray(w, dtype=float).reshape((-1,) + (1,) * (x.ndim - 1))
    sw = w.sum()
    m = (w * x).sum(axis=0) / sw
    se = np.sqrt((w**2 * (x - m) ** 2).sum(axis=0)) / sw
    return m, se


def _weights(batches, g=-1):
    lw = concat_field(batches, "log_weight")[:, g]
    ok = ~concat_field(batches, "diverged")
    return np.where(ok, np.exp(lw), 0.0)


def effective_sample_size(w: np.ndarray) -> float:
    return float(w.sum() ** 2 / np.sum(w * w)) if np.any(w) else 0.0


# ---------------------------------------------------------------------------
# Dynkin / martingale-problem test


def _generator_integrand(spec, suite, nodes, negative_control):
    def integrand(t, y, c):
        cols = []
        for terms in generator_suite_terms(spec, suite, t, y, c, nodes=nodes):
            total = terms["drift"] + terms["diffusion"] + terms["levy"] + terms["switch"]
            cols.append(total)
            if negative_control:
                cols.append(total - 2.0 * terms["switch"])
        return np.stack(cols, axis=1)

    return integrand


def dynkin_statistics(spec: ModelSpec, suite: Sequence[TestFunction], cfg: SimulationConfig,
                      negative_control: bool = False, on_batch: Optional[Callable] = None):
    """Per-path M^f at each record time: f(Y_t, C_t) - f(Y_r, C_r) - int A f du.

    Returns ``(M, w)`` with M of shape (n, G, len(suite)) (and the negative
    control columns appended as a second array when requested).
    """
    nodes = spec.levy.nodes(cfg.quad)
    integrand = _generator_integrand(spec, suite, nodes, negative_control)
    width = 2 if negative_control else 1

    def consume(batch: PathBatch):
        if on_batch is not None:
            on_batch(batch)
        n, G = batch.size, batch.times.size
        vals = np.empty((n, G, len(suite)))
        y0 = np.tile(spec.y0, (n, 1))
        c0 = np.full(n, spec.c0)
        t0 = np.full(n, spec.start)
        for k, f in enumerate(suite):
            base = f(t0, y0, c0)
            for g in range(G):
                tg = np.full(n, batch.times[g])
                vals[:, g, k] = f(tg, batch.y[:, g], batch.c[:, g]) - base
        integ = batch.integrals if batch.integrals is not None else np.zeros((n, G, width * len(suite)))
        M = vals - integ[:, :, 0::width]
        neg = vals - integ[:, :, 1::width] if negative_control else None
        w = np.where(batch.diverged, 0.0, np.exp(batch.log_weight[:, -1]))
        return M, neg, w

    out = run_blocks(spec, cfg, [integrand], consume)
    M = np.concatenate([o[0] for o in out])
    neg = np.concatenate([o[1] for o in out]) if negative_control else None
    w = np.concatenate([o[2] for o in out])
    return M, neg, w


def dynkin_test(spec: ModelSpec, suite: Sequence[TestFunction], cfg: SimulationConfig,
                times: Optional[Sequence[float]] = None, bias_allowance="pilot", negative_control: bool = False,
                on_batch: Optional[Callable] = None) -> list[TestReport]:
    """|mean M^f_t| <= 3 SE + beta(dt) for each test function f and time t.

    ``bias_allowance="pilot"`` estimates the Euler bias beta(dt) as
    ``|mean_{2dt} - mean_{dt}|`` from a second ensemble at twice the step
    (same path count, different seed); a number is used as given.
    With ``negative_control`` a second family of reports evaluates the same
    paths against a generator whose switching compensator has the wrong sign;
    those reports are expected to fail.
    """
    start = time.perf_counter()
    grid = cfg.grid(spec)
    times = grid[grid > spec.start] if times is None else np.asarray(times, dtype=float)
    cfg = replace(cfg, record_grid=sorted(set(grid.tolist()) | set(times.tolist()) | {spec.start}))
    grid = cfg.grid(spec)
    construction_weighted = cfg.construction == "dominating"
    M, neg, w = dynkin_statistics(spec, suite, cfg, negative_control, on_batch)
    ww = w if construction_weighted else None
    mean, se = weighted_mean_se(M, ww)

    beta = np.zeros_like(mean)
    pilot_info = None
    if bias_allowance == "pilot":
        coarse = replace(cfg, dt=min(2 * cfg.dt, spec.horizon - spec.start), master_seed=cfg.master_seed + 7919)
        Mp, _, wp = dynkin_statistics(spec, suite, coarse, False, on_batch)
        mp, sep = weighted_mean_se(Mp, wp if construction_weighted else None)
        beta = np.abs(mp - mean)
        pilot_info = {"pilot_mean": mp.tolist(), "pilot_se": sep.tolist(), "pilot_dt": coarse.dt}
    elif bias_allowance:
        beta = np.full_like(mean, float(bias_allowance))
    elapsed = time.perf_counter() - start

    reports = []
    for t in times:
        g = int(np.searchsorted(grid, t))
        for k, f in enumerate(suite):
            thr = N_SE * se[g, k] + beta[g, k]
            stat = float(mean[g, k])
            reports.append(TestReport(
                f"dynkin[{spec.name}|{f.name}|t={t:g}]", stat, float(se[g, k]), float(thr),
                bool(abs(stat) <= thr), M.shape[0], elapsed,
                {"beta": float(beta[g, k]), "dt": cfg.dt, **({"pilot": pilot_info} if pilot_info else {})},
            ))
    if negative_control:
        nmean, nse = weighted_mean_se(neg, ww)
        for t in times:
            g = int(np.searchsorted(grid, t))
            for k, f in enumerate(suite):
                thr = N_SE * nse[g, k] + beta[g, k]
                stat = float(nmean[g, k])
                reports.append(TestReport(
                    f"dynkin_negative_control[{spec.name}|{f.name}|t={t:g}]", stat, float(nse[g, k]), float(thr),
                    bool(abs(stat) <= thr), M.shape[0], elapsed, {"negative_control": True},
                ))
    return reports


# ---------------------------------------------------------------------------
# Canonical decomposition residual


def characteristics_residual_test(spec: ModelSpec, cfg: SimulationConfig, negative_control: bool = False,
                                  on_batch: Optional[Callable] = None) -> list[TestReport]:
    """mean[Y_t - Y_r - int b(u, Y_u-, C_u-) du] = 0 within 3 SE per component and record time.

    The negative control drops the rho*lambda part of the special drift.
    """
    start = time.perf_counter()
    nodes = spec.levy.nodes(cfg.quad)

    def integrand(t, y, c):
        _, b = characteristic_drifts(spec, t, y, c, nodes=nodes, quad=cfg.quad,
                                     include_switch=not negative_control)
        return b

    def consume(batch):
        if on_batch is not None:
            on_batch(batch)
        res = batch.y - spec.y0[None, None, :] - batch.integrals
        return res, np.where(batch.diverged, 0.0, np.exp(batch.log_weight[:, -1]))

    out = run_blocks(spec, cfg, [integrand], consume)
    R = np.concatenate([o[0] for o in out])
    w = np.concatenate([o[1] for o in out])
    mean, se = weighted_mean_se(R, w if cfg.construction == "dominating" else None)
    elapsed = time.perf_counter() - start
    grid = cfg.grid(spec)
    label = "residual_negative_control" if negative_control else "residual"
    reports = []
    for g in range(1, grid.size):
        for k in range(spec.d):
            thr = N_SE * se[g, k]
            stat = float(mean[g, k])
            reports.append(TestReport(f"{label}[{spec.name}|y{k}|t={grid[g]:g}]", stat, float(se[g, k]),
                                      float(thr), bool(abs(stat) <= thr or (se[g, k] == 0 and stat == 0)),
                                      R.shape[0], elapsed, {"negative_control": negative_control}))
    return reports


# ---------------------------------------------------------------------------
# Uniqueness in law: thinning vs dominating + Doleans-Dade weights


def _sub_cdfs(order_vals, y, c, w, K):
    """Weighted sub-distribution functions P(Y <= v, C = k) at the pooled sorted values."""
    total = w.sum()
    out = np.empty((K, order_vals.size))
    idx = np.argsort(y, kind="stable")
    ys = y[idx]
    pos = np.searchsorted(ys, order_vals, side="right")
    for k in range(1, K + 1):
        cw = np.concatenate([[0.0], np.cumsum((w * (c == k))[idx])])
        out[k - 1] = cw[pos] / total
    return out


def weighted_cdf_distance(y1, c1, w1, y2, c2, w2, K):
    """Per-regime sup distance between weighted sub-distribution functions."""
    pooled = np.unique(np.concatenate([y1, y2]))
    F1 = _sub_cdfs(pooled, y1, c1, w1, K)
    F2 = _sub_cdfs(pooled, y2, c2, w2, K)
    return np.max(np.abs(F1 - F2), axis=1), pooled, F1, F2


def bootstrap_critical_values(y1, c1, w1, y2, c2, w2, K, alpha, n_boot, rng):
    """Per-regime (1 - alpha) quantiles of the centred bootstrap distance."""
    pooled = np.unique(np.concatenate([y1, y2]))
    F1 = _sub_cdfs(pooled, y1, c1, w1, K)
    F2 = _sub_cdfs(pooled, y2, c2, w2, K)
    n1, n2 = y1.size, y2.size
    draws = np.empty((n_boot, K))
    for b in range(n_boot):
        m1 = rng.multinomial(n1, np.full(n1, 1.0 / n1)).astype(float)
        m2 = rng.multinomial(n2, np.full(n2, 1.0 / n2)).astype(float)
        G1 = _sub_cdfs(pooled, y1, c1, w1 * m1, K)
        G2 = _sub_cdfs(pooled, y2, c2, w2 * m2, K)
        draws[b] = np.max(np.abs((G1 - F1) - (G2 - F2)), axis=1)
    return np.quantile(draws, 1.0 - alpha, axis=0), draws


def uniqueness_two_construction_test(spec: ModelSpec, cfg: SimulationConfig, alpha: float = 0.01,
                                     n_boot: int = 200, coord: int = 0, negative_control: bool = False,
                                     on_batch: Optional[Callable] = None, samples=None) -> TestReport:
    """Weighted law of (Y_T, C_T) under the dominating construction vs the thinning law.

    For each terminal regime k the statistic is the sup distance between the
    sub-distribution functions P(Y_T <= v, C_T = k) of the two ensembles;
    critical values are centred-bootstrap quantiles at level alpha / K
    (Bonferroni over regimes). ``negative_control`` doubles the log-weights.
    ``samples`` lets a caller reuse previously simulated ensembles.
    """
    start = time.perf_counter()
    K = spec.K
    if samples is None:
        samples = uniqueness_samples(spec, cfg, coord, on_batch)
    (y1, c1), (y2, c2, lw2) = samples
    w1 = np.ones_like(y1)
    lw = 2.0 * lw2 if negative_control else lw2
    w2 = np.exp(lw)
    ess = effective_sample_size(w2)
    if ess < 100:
        raise DegenerateWeightsError(ess)
    dist, *_ = weighted_cdf_distance(y1, c1, w1, y2, c2, w2, K)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.master_seed, 4242])))
    crit, _ = bootstrap_critical_values(y1, c1, w1, y2, c2, w2, K, alpha / K, n_boot, rng)
    passed = bool(np.all(dist < crit))
    worst = int(np.argmax(dist / crit))
    name = "uniqueness_negative_control" if negative_control else "uniqueness"
    return TestReport(f"{name}[{spec.name}]", float(dist[worst]), float(crit[worst]), float(crit[worst]), passed,
                      y1.size + y2.size, time.perf_counter() - start,
                      {"distance": dist.tolist(), "critical": crit.tolist(), "ess": ess, "alpha": alpha,
                       "negative_control": negative_control})


def uniqueness_samples(spec, cfg, coord=0, on_batch=None):
    def terminal(batch):
        if on_batch is not None:
            on_batch(batch)
        ok = ~batch.diverged
        return batch.y[ok, -1, coord], batch.c[ok, -1], batch.log_weight[ok, -1]

    thin = run_blocks(spec, replace(cfg, construction="thinning"), (), terminal)
    dom = run_blocks(spec, replace(cfg, construction="dominating", master_seed=cfg.master_seed + 104729), (),
                     terminal)
    y1 = np.concatenate([o[0] for o in thin])
    c1 = np.concatenate([o[1] for o in thin])
    y2 = np.concatenate([o[0] for o in dom])
    c2 = np.concatenate([o[1] for o in dom])
    lw2 = np.concatenate([o[2] for o in dom])
    return (y1, c1), (y2, c2, lw2)


# ---------------------------------------------------------------------------
# Moments of the running supremum


def fit_exponential_envelope(times, values):
    """Least-squares fit of log values = log A + B t with B >= 0."""
    t = np.asarray(times, dtype=float)
    v = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
    if t.size == 1:
        return float(np.exp(v[0])), 0.0
    B, logA = np.polyfit(t, v, 1)
    if B < 0:
        B, logA = 0.0, float(v.mean())
    return float(np.exp(logA)), float(B)


def sup_moment_samples(spec, cfg, m: int = 1, one_sided: bool = False, coord: Optional[int] = None,
                       on_batch=None):
    """Per-path sup_{s<=t} |Y_s|^{2m} (or (sup_s Y_s)^{2m} when one_sided) at each record time."""

    def consume(batch):
        if on_batch is not None:
            on_batch(batch)
        hi = batch.y_max if coord is None else batch.y_max[..., coord:coord + 1]
        lo = batch.y_min if coord is None else batch.y_min[..., coord:coord + 1]
        if one_sided:
            s = np.max(np.maximum(hi, 0.0), axis=2) ** (2 * m)
        else:
            s = np.sum(np.maximum(np.abs(hi), np.abs(lo)) ** 2, axis=2) ** m
        w = np.where(batch.diverged, 0.0, np.exp(batch.log_weight[:, -1]))
        return s, w, int(batch.diverged.sum())

    out = run_blocks(spec, cfg, (), consume)
    return (np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out]),
            sum(o[2] for o in out))


def moment_growth_test(spec: ModelSpec, cfg: SimulationConfig, m: int = 1,
                       path_counts: Sequence[int] = (1000, 10000, 100000), one_sided: bool = False,
                       reference: Optional[float] = None, drift_tol: float = 0.10, coord: Optional[int] = None,
                       on_batch=None) -> TestReport:
    """Finiteness check for E sup_{t<=T} |Y_t|^{2m}.

    One ensemble of ``max(path_counts)`` paths is simulated; estimates use its
    nested prefixes. Passes iff the relative change between the last two
    prefix estimates is below ``drift_tol``, ``1 + estimate`` lies under the
    exponential envelope A e^{Bt} fitted to it (inflated by ``drift_tol``) at
    every record time, no path diverged, and (when given) the terminal estimate is
    within 3 SE of ``reference``. The supremum is taken over the Euler
    sub-steps, or over Brownian-bridge extremes when ``cfg.extremes ==
    "bridge"``.
    """
    start = time.perf_counter()
    counts = sorted(int(n) for n in path_counts)
    ext = cfg.extremes or "steps"
    cfg = replace(cfg, path_count=counts[-1], extremes=ext)
    S, w, diverged = sup_moment_samples(spec, cfg, m, one_sided, coord, on_batch)
    weighted = cfg.construction == "dominating"
    estimates, ses = [], []
    for n in counts:
        mu, se = weighted_mean_se(S[:n], w[:n] if weighted else None)
        estimates.append(mu)
        ses.append(se)
    est, se = estimates[-1], ses[-1]
    rel_drift = float(abs(est[-1] - estimates[-2][-1]) / max(abs(est[-1]), 1e-300)) if len(counts) > 1 else 0.0
    grid = cfg.grid(spec)
    later = grid > spec.start
    # Gronwall shape: 1 + E sup|Y|^{2m} <= A e^{Bt}
    A, B = fit_exponential_envelope(grid[later], 1.0 + est[later])
    envelope = A * np.exp(B * grid[later]) * (1.0 + drift_tol)
    under = bool(np.all(1.0 + est[later] <= envelope))
    ok = rel_drift < drift_tol and under and diverged == 0
    details = {"estimates": [e.tolist() for e in estimates], "se": [s.tolist() for s in ses],
               "path_counts": counts, "relative_drift": rel_drift, "envelope_A": A, "envelope_B": B,
               "under_envelope": under, "diverged": diverged, "extremes": ext}
    stat, thr, s_err = rel_drift, drift_tol, float(se[-1])
    if reference is not None:
        dev = float(est[-1] - reference)
        details["reference"] = reference
        details["deviation"] = dev
        ok = ok and abs(dev) <= N_SE * se[-1]
        stat, thr = dev, N_SE * float(se[-1])
    label = "sup_moment_one_sided" if one_sided else f"sup_moment_2m={2 * m}"
    return TestReport(f"{label}[{spec.name}]", float(stat), s_err, float(thr), bool(ok), counts[-1],
                      time.perf_counter() - start, details)


# ---------------------------------------------------------------------------
# Markov property (optional suite)


def markov_property_test(spec: ModelSpec, cfg: SimulationConfig, t_mid: float, lag: float, ahead: float,
                         residence_bins: Optional[Sequence[float]] = None, y_bins: Optional[Sequence[float]] = None,
                         min_count: int = 500, alpha: float = 0.01, label: str = "", on_batch=None,
                         batches=None) -> TestReport:
    """Conditional independence of a future functional from a past feature given the binned present.

    Present: C at ``t_mid`` (plus residence-time bins and Y bins when given).
    Past feature: whether C at ``t_mid - lag`` equals C at ``t_mid``.
    Future functional: whether C at ``t_mid + ahead`` equals C at ``t_mid``.
    Each bin holding at least ``min_count`` paths with a non-degenerate 2x2
    table gets a chi-square test; the Bonferroni-adjusted minimum p-value is
    compared with ``alpha``. Sparse bins are reported as skipped.
    """
    start = time.perf_counter()
    times = [t_mid - lag, t_mid, t_mid + ahead]
    cfg = replace(cfg, record_grid=sorted(set(cfg.grid(spec).tolist()) | set(times) | {spec.start}))
    grid = cfg.grid(spec)
    gp, gm, gf = (int(np.searchsorted(grid, t)) for t in times)

    if batches is None:
        def keep(batch):
            if on_batch is not None:
                on_batch(batch)
            return batch
        batches = run_blocks(spec, cfg, (), keep)
    c = concat_field(batches, "c")
    y = concat_field(batches, "y")
    res = concat_field(batches, "residence")
    ok = ~concat_field(batches, "diverged")
    present = c[:, gm].astype(np.int64)
    if residence_bins is not None:
        present = present * 1000 + np.digitize(res[:, gm], residence_bins)
    if y_bins is not None:
        present = present * 1000 + np.digitize(y[:, gm, 0], y_bins)
    past = (c[:, gp] == c[:, gm]).astype(int)
    future = (c[:, gf] == c[:, gm]).astype(int)

    tested, skipped, pvals = [], [], []
    for key in np.unique(present[ok]):
        sel = ok & (present == key)
        if sel.sum() < min_count:
            skipped.append(int(key))
            continue
        table = np.array([[np.sum(sel & (past == a) & (future == b)) for b in (0, 1)] for a in (0, 1)])
        if np.any(table.sum(axis=0) == 0) or np.any(table.sum(axis=1) == 0):
            skipped.append(int(key))
            continue
        _, p, _, _ = stats.chi2_contingency(table, correction=False)
        tested.append(int(key))
        pvals.append(float(p))
    n_tests = max(len(pvals), 1)
    adj = min(1.0, min(pvals) * n_tests) if pvals else 1.0
    return TestReport(f"markov{label}[{spec.name}]", adj, float("nan"), alpha, bool(adj >= alpha), int(ok.sum()),
                      time.perf_counter() - start,
                      {"bins_tested": tested, "bins_skipped": skipped, "p_values": pvals})


# ---------------------------------------------------------------------------
# Regime marginals against a Markov-chain oracle


def markov_chain_marginals(Q: np.ndarray, c0: int, times: Sequence[float], start: float = 0.0) -> np.ndarray:
    """P(C_t = k | C_start = c0) from the matrix exponential of the rate matrix Q."""
    Q = np.asarray(Q, dtype=float)
    e = np.zeros(Q.shape[0])
    e[c0 - 1] = 1.0
    return np.array([e @ expm(Q * (t - start)) for t in times])


def constant_rate_matrix(spec: ModelSpec) -> np.ndarray:
    K = spec.K
    Q = np.zeros((K, K))
    probe_t = np.array([spec.start])
    probe_y = spec.y0.reshape(1, -1)
    for (i, j) in spec.regimes.pairs():
        Q[i - 1, j - 1] = float(spec.coeffs.lam_of((i, j), probe_t, probe_y)[0])
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def regime_marginal_test(spec: ModelSpec, cfg: SimulationConfig, times: Sequence[float], oracle: np.ndarray,
                         regime: int = 1, on_batch=None, batches=None) -> list[TestReport]:
    """Empirical P(C_t = regime) within 3 SE of oracle values at each time."""
    start = time.perf_counter()
    cfg = replace(cfg, record_grid=sorted(set(cfg.grid(spec).tolist()) | set(times) | {spec.start}))
    grid = cfg.grid(spec)
    if batches is None:
        def keep(batch):
            if on_batch is not None:
                on_batch(batch)
            return batch
        batches = run_blocks(spec, cfg, (), keep)
    c = concat_field(batches, "c")
    w = _weights(batches) if cfg.construction == "dominating" else None
    reports = []
    for t, target in zip(times, oracle):
        g = int(np.searchsorted(grid, t))
        mean, se = weighted_mean_se((c[:, g] == regime).astype(float), w)
        thr = N_SE * float(se)
        reports.append(TestReport(f"regime_marginal[{spec.name}|c={regime}|t={t:g}]", float(mean - target), float(se),
                                  thr, bool(abs(mean - target) <= thr), c.shape[0], time.perf_counter() - start,
                                  {"empirical": float(mean), "oracle": float(target)}))
    return reports


def two_sample_frequency_test(name: str, p1, se1, p2, se2) -> TestReport:
    diff = float(p1 - p2)
    se = float(np.hypot(se1, se2))
    return TestReport(name, diff, se, N_SE * se, bool(abs(diff) <= N_SE * se), 0, 0.0,
                      {"p1": float(p1), "p2": float(p2)})


# ---------------------------------------------------------------------------
# Structural invariants


@dataclass
class InvariantTally:
    paths: int = 0
    common_jump_times: int = 0
    duplicate_switch_times: int = 0
    regime_range: int = 0
    regime_consistency: int = 0
    event_chain: int = 0
    rho_exactness: int = 0
    levy_exactness: int = 0
    residence: int = 0
    residence_reset: int = 0
    weight_neutrality: int = 0

    @property
    def violations(self) -> int:
        return sum(v for k, v in self.__dict__.items() if k != "paths")

    def merge(self, other: "InvariantTally"):
        for k, v in other.__dict__.items():
            setattr(self, k, getattr(self, k) + v)
        return self


def check_path_invariants(spec: ModelSpec, batch: PathBatch, construction: str = "thinning",
                          residence_tol: float = 1e-9) -> InvariantTally:
    """Count violations of the structural path properties over a batch."""
    tally = InvariantTally(paths=batch.size)
    K = spec.K
    sw, lv = batch.switch_events, batch.levy_events
    # no common jump times (per path)
    if sw["time"].size:
        key_sw = np.stack([sw["path"].astype(float), sw["time"]], axis=1)
        uniq = np.unique(key_sw, axis=0)
        tally.duplicate_switch_times += key_sw.shape[0] - uniq.shape[0]
        if lv["time"].size:
            key_lv = np.unique(np.stack([lv["path"].astype(float), lv["time"]], axis=1), axis=0)
            both = np.concatenate([uniq, key_lv])
            tally.common_jump_times += both.shape[0] - np.unique(both, axis=0).shape[0]
    # regimes in range; sum_i H^i = 1 is equivalent to C in 1..K
    tally.regime_range += int(np.sum((batch.c < 1) | (batch.c > K)))
    # C_t = c0 + sum (j - i) H^{ij}_t
    labels = np.arange(1, K + 1)
    jumps = labels[None, :] - labels[:, None]
    implied = spec.c0 + np.einsum("ngij,ij->ng", batch.H, jumps)
    tally.regime_consistency += int(np.sum(implied != batch.c))
    if sw["time"].size:
        order = np.lexsort((sw["time"], sw["path"]))
        p, s, tg = sw["path"][order], sw["source"][order], sw["target"][order]
        first = np.ones(p.size, dtype=bool)
        first[1:] = p[1:] != p[:-1]
        prev_target = np.concatenate([[spec.c0], tg[:-1]])
        expected_source = np.where(first, spec.c0, prev_target)
        tally.event_chain += int(np.sum(s != expected_source) + np.sum(s == tg))
        # rho exactness
        for (i, j) in {(int(a), int(b)) for a, b in zip(sw["source"], sw["target"])}:
            m = (sw["source"] == i) & (sw["target"] == j)
            rho = spec.coeffs.rho_of((i, j), sw["time"][m], sw["y_before"][m])
            tally.rho_exactness += int(np.sum(np.any(sw["y_before"][m] + rho != sw["y_after"][m], axis=1)))
            rc = spec.residence_coordinate
            if rc is not None:
                tally.residence_reset += int(np.sum(sw["y_after"][m][:, rc] != 0.0))
    if lv["time"].size:
        F = spec.coeffs.jump_F(lv["time"], lv["y_before"], lv["regime"], lv["mark"])
        tally.levy_exactness += int(np.sum(np.any(F != lv["dy"], axis=1)))
    # residence process equals time since the latest switch
    last = np.full((batch.size, batch.times.size), spec.start)
    if sw["time"].size:
        for g, tg_ in enumerate(batch.times):
            m = sw["time"] <= tg_
            if m.any():
                np.maximum.at(last[:, g], sw["path"][m], sw["time"][m])
    tally.residence += int(np.sum(np.abs(batch.residence - (batch.times[None, :] - last)) > residence_tol))
    rc = spec.residence_coordinate
    if rc is not None:
        live = ~batch.diverged
        tally.residence += int(np.sum(np.abs(batch.y[live][:, :, rc] - batch.residence[live]) > residence_tol))
    if construction == "thinning":
        tally.weight_neutrality += int(np.sum(batch.log_weight != 0.0))
    return tally
