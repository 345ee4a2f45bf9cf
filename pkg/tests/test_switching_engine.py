import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import mean_se
from rsjd.errors import BoundViolationError, ModelError
from rsjd.model_core import (CoefficientSet, LevySpec, ModelSpec, RegimeSet, constant_diffusion, constant_drift,
                             constant_rate, constant_shift, sinusoidal_rate)
from rsjd.path_simulator import PathRecord, SimulationConfig, simulate_block
from rsjd.presets import jump_diffusion_sin, pure_switching
from rsjd.rng import RandomStream
from rsjd.switching_engine import (LikelihoodWeight, SwitchEvent, compensated_switch_martingale,
                                   explicit_log_weight, next_switch_dominating, next_switch_thinning,
                                   select_targets)

ZERO = lambda s: np.zeros(1)


def coeffs(lam, bounds, rho=None):
    return CoefficientSet(1, 1, constant_drift(0.0, 2, 1), constant_diffusion(0.0, 2, 1, 1), None,
                          rho or {}, {k: constant_rate(v) for k, v in lam.items()}, bounds)


def spec_of(co, horizon=1.0):
    return ModelSpec(RegimeSet(2), LevySpec(), co, horizon, [0.0], 1)


def gen(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@pytest.fixture(scope="module")
def thinned_times():
    co = coeffs({(1, 2): 1.0}, {(1, 2): 4.0})
    g = gen(11)
    return np.array([next_switch_thinning(co, 0.0, np.inf, 1, ZERO, g, K=2).time for _ in range(100_000)])


def test_switch_event_must_change_regime():
    with pytest.raises(ModelError):
        SwitchEvent(0.1, 1, 1, np.zeros(1), np.zeros(1))


def test_no_active_pairs_never_switches():
    co = coeffs({}, {})
    g = gen(0)
    assert all(next_switch_thinning(co, 0.0, 10.0, 1, ZERO, g, K=2) is None for _ in range(100))
    ev, w = next_switch_dominating(co, 0.0, 10.0, 1, ZERO, g, K=2)
    assert ev is None and w.log_weight == 0.0


def test_full_acceptance_is_exponential_clock():
    co = coeffs({(1, 2): 2.0}, {(1, 2): 2.0})
    g = gen(1)
    x = [next_switch_thinning(co, 0.0, np.inf, 1, ZERO, g, K=2).time for _ in range(100_000)]
    m, se = mean_se(x)
    assert abs(m - 0.5) <= 3 * se


def test_thinned_rate_is_lambda(thinned_times):
    m, se = mean_se(thinned_times)
    assert abs(m - 1.0) <= 3 * se
    # direct exponential(1) draws as the reference
    ref = gen(12).exponential(1.0, thinned_times.size)
    assert stats.ks_2samp(thinned_times, ref).pvalue > 0.01


def test_thinning_ks_against_exponential(thinned_times):
    n = thinned_times.size
    D = stats.kstest(thinned_times, "expon", args=(0.0, 1.0)).statistic
    # asymptotic 1% critical value
    assert D < 1.628 / np.sqrt(n)


def test_thinning_event_applies_shift_exactly():
    co = coeffs({(1, 2): 3.0}, {(1, 2): 3.0}, rho={(1, 2): constant_shift(0.25)})
    ev = next_switch_thinning(co, 0.0, np.inf, 1, lambda s: np.array([s]), gen(2), K=2)
    assert ev.source == 1 and ev.target == 2
    assert ev.y_before[0] == ev.time and ev.y_after[0] - ev.y_before[0] == 0.25


def test_bound_violation_identifies_pair():
    co = CoefficientSet(1, 1, constant_drift(0.0, 2, 1), constant_diffusion(0.0, 2, 1, 1), None, {},
                        {(1, 2): sinusoidal_rate(2.0, 1.0)}, {(1, 2): 2.5})
    with pytest.raises(BoundViolationError) as err:
        for _ in range(1000):
            next_switch_thinning(co, 0.0, 50.0, 1, lambda s: np.array([np.pi / 2]), gen(3), K=2)
    assert err.value.pair == (1, 2) and err.value.value == 3.0 and err.value.bound == 2.5


def test_dominating_weight_is_zero_when_lambda_equals_bound():
    co = coeffs({(1, 2): 1.5, (2, 1): 0.5}, {(1, 2): 1.5, (2, 1): 0.5})
    g = gen(4)
    total = LikelihoodWeight()
    t, cur = 0.0, 1
    while True:
        ev, w = next_switch_dominating(co, t, 5.0, cur, ZERO, g, K=2)
        assert w.log_weight == 0.0
        total = total + w
        if ev is None:
            break
        t, cur = ev.time, ev.target
    assert total.weight == 1.0


@pytest.mark.parametrize("lam", [0.0, 0.25, 0.6, 1.0])
def test_dominating_no_switch_log_weight(lam):
    T = 2.0
    co = coeffs({(1, 2): lam}, {(1, 2): 1.0})
    spec = spec_of(co, T)
    g = gen(5)
    for _ in range(200):
        ev, w = next_switch_dominating(co, 0.0, T, 1, ZERO, g, K=2)
        if ev is None:
            break
    assert ev is None
    assert w.log_weight == pytest.approx(-(lam - 1.0) * T, rel=1e-12)
    # explicit product form on a fine grid
    grid = np.linspace(0.0, T, 101)
    assert explicit_log_weight(spec, [], grid, np.zeros((101, 1)), np.ones(101, int)) == pytest.approx(
        -(lam - 1.0) * T, rel=1e-12)


def test_dominating_one_switch_log_weight():
    co = coeffs({(1, 2): 2.0, (2, 1): 1.0}, {(1, 2): 1.0, (2, 1): 1.0})
    spec = spec_of(co, 1.0)
    tau = 0.37
    ev = SwitchEvent(tau, 1, 2, np.zeros(1), np.zeros(1))
    grid = np.linspace(0.0, 1.0, 11)
    c_grid = np.where(grid < tau, 1, 2)
    got = explicit_log_weight(spec, [ev], grid, np.zeros((11, 1)), c_grid)
    assert got == pytest.approx(-(2.0 - 1.0) * tau + np.log(2.0), rel=1e-12)
    # the engine's own accumulation up to its first event
    g = gen(6)
    e1, w1 = next_switch_dominating(co, 0.0, np.inf, 1, ZERO, g, K=2)
    assert w1.log_weight == pytest.approx(-(2.0 - 1.0) * e1.time + np.log(2.0), rel=1e-9)


def test_simulated_dominating_weight_matches_explicit_form():
    spec = jump_diffusion_sin(bound=2.0, horizon=1.0)
    grid = np.linspace(0.0, 1.0, 201)
    cfg = SimulationConfig(dt=0.005, construction="dominating", record_grid=grid, master_seed=9)
    batch = simulate_block(spec, cfg, RandomStream(9, 0), 30)
    for k in range(batch.size):
        rec = batch.path(k)
        # explicit form freezes Y at grid values, the simulator at sub-step values
        ref = explicit_log_weight(spec, rec.switch_events, grid, rec.y, rec.c)
        assert rec.log_weight == pytest.approx(ref, abs=0.05)
        jumps = sum(np.log((1 + 0.5 * np.sin(e.y_before[0])) / 2.0) for e in rec.switch_events)
        assert np.isfinite(rec.log_weight) and np.isfinite(jumps)


def test_martingale_hand_example():
    co = CoefficientSet(1, 1, constant_drift(0.0, 2, 1), constant_diffusion(0.0, 2, 1, 1), None, {},
                        {(1, 2): constant_rate(2.0)}, {(1, 2): 2.0})
    spec = spec_of(co, 1.0)
    times = np.array([0.0, 1.0])
    rec = PathRecord(times, np.zeros((2, 1)), np.array([1, 2]), np.array([0.0, 0.7]),
                     [SwitchEvent(0.3, 1, 2, np.zeros(1), np.zeros(1))], [], np.array([[0, 1], [0, 0]]), 0.0, (0, 0))
    M = compensated_switch_martingale(rec, 1, 2, spec)
    assert M[-1] == pytest.approx(0.4, abs=1e-14)
    assert compensated_switch_martingale(rec, 2, 1, spec).tolist() == [0.0, 0.0]


def test_martingale_zero_mean_constant_rate():
    spec = pure_switching(1.0, 1.0, horizon=1.0)
    cfg = SimulationConfig(dt=0.05, master_seed=21)
    batch = simulate_block(spec, cfg, RandomStream(21, 0), 100_000)
    M = batch.H[:, -1, 0, 1] - batch.compensators[:, -1, 0, 1]
    m, se = mean_se(M)
    assert abs(m) <= 3 * se
    # recorded compensator agrees with the recomputed one
    for k in range(5):
        rec = batch.path(k)
        assert compensated_switch_martingale(rec, 1, 2)[-1] == pytest.approx(
            compensated_switch_martingale(rec, 1, 2, spec)[-1], abs=1e-12)


def test_uniform_partition_ascending_targets():
    K = 3
    co = CoefficientSet(1, 1, constant_drift(0.0, K, 1), constant_diffusion(0.0, K, 1, 1), None, {},
                        {(1, 2): constant_rate(1.0), (1, 3): constant_rate(2.0)}, {(1, 2): 2.0, (1, 3): 2.0})
    spec = ModelSpec(RegimeSet(K), LevySpec(), co, 1.0, [0.0], 1)
    u = np.array([0.0, 0.2499, 0.25, 0.7499, 0.75, 0.9999])
    n = u.size
    tgt, _ = select_targets(spec, np.zeros(n), np.zeros((n, 1)), np.ones(n, int), u, "thinning")
    assert tgt.tolist() == [2, 2, 3, 3, 0, 0]
    tgt, lr = select_targets(spec, np.zeros(n), np.zeros((n, 1)), np.ones(n, int), u, "dominating")
    assert tgt.tolist() == [2, 2, 2, 3, 3, 3]
    assert np.allclose(lr, np.log([0.5, 0.5, 0.5, 1.0, 1.0, 1.0]))


@settings(max_examples=25)
@given(st.floats(0.05, 4.0), st.floats(0.05, 4.0), st.integers(0, 2**31))
def test_no_duplicate_switch_times_and_h_identities(l12, l21, seed):
    spec = pure_switching(l12, l21, horizon=2.0)
    grid = np.linspace(0.0, 2.0, 9)
    batch = simulate_block(spec, SimulationConfig(dt=0.1, record_grid=grid, master_seed=seed),
                           RandomStream(seed, 0), 50)
    sw = batch.switch_events
    for k in range(batch.size):
        ts = sw["time"][sw["path"] == k]
        assert np.unique(ts).size == ts.size
    # H non-decreasing, integer; C moves exactly with H
    assert np.all(np.diff(batch.H, axis=1) >= 0)
    assert np.all(batch.H == np.round(batch.H))
    net = batch.H[..., 0, 1] - batch.H[..., 1, 0]
    assert np.array_equal(batch.c, 1 + net)
