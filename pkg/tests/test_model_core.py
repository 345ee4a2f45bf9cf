import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from rsjd.errors import ModelError, ModelEvaluationError, QuadratureError
from rsjd.model_core import (CoefficientSet, LevySpec, ModelSpec, QuadratureConfig, RegimeSet, TestFunction,
                             additive_jump, bump, compute_characteristics, constant_diffusion, constant_drift,
                             constant_function, constant_rate, constant_shift, coordinate_power, evaluate_generator,
                             gaussian, generator_terms, indicator_regime, linear_drift, sinusoidal_rate,
                             standard_suite, truncation_h, validate_model)
from rsjd.presets import brownian_switching, jump_diffusion_sin


def make_spec(mu=0.0, sigma=1.0, K=2, d=1, p=1, lam=None, bounds=None, rho=None, levy=None, F=None):
    lam = lam or {}
    coeffs = CoefficientSet(d, p, constant_drift(mu, K, d) if not callable(mu) else mu,
                            constant_diffusion(sigma, K, d, p), F, rho or {}, lam,
                            bounds if bounds is not None else {}, )
    return ModelSpec(RegimeSet(K), levy or LevySpec(), coeffs, 1.0, np.zeros(d), 1)


# -- types -----------------------------------------------------------------------


def test_regime_set_labels():
    rs = RegimeSet(3)
    assert list(rs.labels) == [1, 2, 3]
    assert 2 in rs and 0 not in rs and 4 not in rs
    with pytest.raises(ModelError):
        RegimeSet(0)


def test_model_spec_rejects_bad_times_and_regime():
    co = make_spec().coeffs
    with pytest.raises(ModelError):
        ModelSpec(RegimeSet(2), LevySpec(), co, 1.0, [0.0], 1, start=1.0)
    with pytest.raises(ModelError):
        ModelSpec(RegimeSet(2), LevySpec(), co, 1.0, [0.0], 3)


def test_levy_spec_validation():
    with pytest.raises(ModelError):
        LevySpec(truncation=0.0)
    with pytest.raises(ModelError):
        LevySpec("compound_poisson", atoms=[[1.0]], masses=[-1.0])
    with pytest.raises(ModelError):
        LevySpec("truncated_infinite_activity", epsilon=2.0, truncation=1.0)
    lv = LevySpec("compound_poisson", atoms=[[0.5], [2.0]], masses=[3.0, 1.0])
    assert lv.rate == 4.0
    # int (|x|^2 ^ 1) nu = 3 * 0.25 + 1 * 1
    assert lv.integrability() == pytest.approx(1.75)


def test_bound_and_intensity_validation_in_coefficients():
    with pytest.raises(ModelError):
        make_spec(lam={(1, 2): constant_rate(1.0)}, bounds={})


# -- generator examples ---------------------------------------------------------


def test_generator_constant_function_is_zero():
    spec = jump_diffusion_sin()
    ev = evaluate_generator(spec, constant_function(2.5), 0.3, [0.7], 2)
    assert (ev.total, ev.drift_term, ev.diffusion_term, ev.levy_jump_term, ev.switch_term) == (0, 0, 0, 0, 0)


def test_generator_linear_function_returns_drift():
    spec = make_spec(mu=[[0.7], [-1.3]], sigma=2.0)
    v = coordinate_power(0, 1)
    for c, theta in [(1, 0.7), (2, -1.3)]:
        ev = evaluate_generator(spec, v, 0.0, [0.4], c)
        assert ev.total == pytest.approx(theta, abs=1e-15)
        assert ev.drift_term == pytest.approx(theta, abs=1e-15)
        assert ev.diffusion_term == 0 and ev.levy_jump_term == 0 and ev.switch_term == 0


def test_generator_quadratic_with_switch_shift():
    # v = y^2, sigma = 1, rho^{12} = 1, lambda^{12} = 2 at (y=0, c=1): 1 + (1 - 0) * 2 = 3
    spec = make_spec(mu=0.0, sigma=1.0, lam={(1, 2): constant_rate(2.0)}, bounds={(1, 2): 2.0},
                     rho={(1, 2): constant_shift(1.0)})
    ev = evaluate_generator(spec, coordinate_power(0, 2), 0.0, [0.0], 1)
    assert ev.total == pytest.approx(3.0, abs=1e-14)
    assert ev.diffusion_term == pytest.approx(1.0)
    assert ev.switch_term == pytest.approx(2.0)


def _symbolic_generator(expr_by_regime, mu, sig, atoms, masses, a, scale, lam, rho, y0, c):
    """Independent scalar oracle: the generator written out term by term with sympy derivatives."""
    y = sp.symbols("y")
    e = expr_by_regime[c]
    d1, d2 = sp.diff(e, y), sp.diff(e, y, 2)
    val = lambda ex, at: float(ex.subs(y, at))
    total = val(d1, y0) * mu[c] + 0.5 * sig[c] ** 2 * val(d2, y0)
    for x, m in zip(atoms, masses):
        jump = scale[c] * x
        total += m * (val(e, y0 + jump) - val(e, y0) - (val(d1, y0) * jump if abs(x) <= a else 0.0))
    for (i, j), rate in lam.items():
        if i == c:
            total += (val(expr_by_regime[j], y0 + rho[(i, j)]) - val(e, y0)) * rate
    return total


def test_generator_against_symbolic_oracle():
    y = sp.symbols("y")
    exprs = {1: sp.exp(-y**2) * (1 + y), 2: sp.sin(y) + y**3 / 5}
    mu, sig, scale = {1: 0.3, 2: -0.8}, {1: 0.6, 2: 1.1}, {1: 1.0, 2: 0.5}
    atoms, masses = [0.4, -1.5], [2.0, 0.7]
    lam = {(1, 2): 1.7, (2, 1): 0.4}
    rho = {(1, 2): 0.25, (2, 1): -0.6}
    levy = LevySpec("compound_poisson", atoms=[[v] for v in atoms], masses=masses, truncation=1.0)
    spec = make_spec(mu=[[mu[1]], [mu[2]]], sigma=[[[sig[1]]], [[sig[2]]]], levy=levy,
                     F=additive_jump([scale[1], scale[2]], 2, 1),
                     lam={k: constant_rate(v) for k, v in lam.items()}, bounds=dict(lam),
                     rho={k: constant_shift(v) for k, v in rho.items()})
    fs = {c: sp.lambdify(y, e, "numpy") for c, e in exprs.items()}

    def value(t, yy, cc):
        return np.where(cc == 1, fs[1](yy[:, 0]), fs[2](yy[:, 0]))

    v = TestFunction(value, name="sym")  # derivatives by finite differences
    for c in (1, 2):
        for y0 in (-0.9, 0.0, 1.3):
            want = _symbolic_generator(exprs, mu, sig, atoms, masses, 1.0, scale, lam, rho, y0, c)
            got = evaluate_generator(spec, v, 0.0, [y0], c).total
            assert got == pytest.approx(want, rel=1e-6, abs=1e-7)


def test_switch_term_mass_for_regime_indicator():
    spec = jump_diffusion_sin()
    for y0 in (-2.0, 0.0, 0.9):
        ev = evaluate_generator(spec, indicator_regime(2), 0.0, [y0], 1)
        assert ev.switch_term == 1.0 + 0.5 * np.sin(y0)


def test_levy_term_zero_without_levy():
    spec = brownian_switching()
    ev = evaluate_generator(spec, gaussian(0.3, 0.8), 0.1, [0.2], 1)
    assert ev.levy_jump_term == 0.0


def test_generator_total_is_sum_of_terms():
    spec = jump_diffusion_sin()
    for f in standard_suite(1, 2):
        ev = evaluate_generator(spec, f, 0.0, [0.3], 2)
        assert ev.total == ev.drift_term + ev.diffusion_term + ev.levy_jump_term + ev.switch_term


def test_generator_rejects_bad_regime_and_nonfinite():
    spec = make_spec()
    with pytest.raises(ModelError):
        evaluate_generator(spec, constant_function(), 0.0, [0.0], 5)
    bad = make_spec(mu=lambda t, y, c: np.full_like(y, np.nan))
    with pytest.raises(ModelEvaluationError):
        evaluate_generator(bad, coordinate_power(0, 1), 0.0, [0.0], 1)


def test_sampled_levy_measure_reports_quadrature_error():
    levy = LevySpec("compound_poisson", total_rate=2.0, sampler=lambda g, n: g.normal(0.0, 1.0, (n, 1)))
    spec = make_spec(levy=levy, F=additive_jump(1.0, 2, 1))
    ev = evaluate_generator(spec, gaussian(0.0, 1.0), 0.0, [0.1], 1, QuadratureConfig(mc_samples=2000))
    assert ev.quadrature_se > 0
    with pytest.raises(QuadratureError):
        evaluate_generator(spec, gaussian(0.0, 1.0), 0.0, [0.1], 1, QuadratureConfig(mc_samples=50, tol=1e-6))


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.integers(1, 2))
def test_generator_linearity(alpha, beta, y0, c):
    spec = jump_diffusion_sin()
    v, w = bump(0.2, 1.5, [1.0, 0.3]), gaussian(-0.4, 0.9, [0.5, 2.0])
    lhs = evaluate_generator(spec, v.scaled(alpha) + w.scaled(beta), 0.0, [y0], c)
    ev, ew = evaluate_generator(spec, v, 0.0, [y0], c), evaluate_generator(spec, w, 0.0, [y0], c)
    for name in ("drift_term", "diffusion_term", "levy_jump_term", "switch_term"):
        want = alpha * getattr(ev, name) + beta * getattr(ew, name)
        assert getattr(lhs, name) == pytest.approx(want, rel=1e-9, abs=1e-12)


@given(st.floats(-10, 10), st.integers(1, 2))
def test_constant_annihilation_any_state(y0, c):
    for spec in (jump_diffusion_sin(), brownian_switching()):
        assert evaluate_generator(spec, constant_function(-4.0), 0.5, [y0], c).total == 0.0


# -- finite differences ------------------------------------------------------------


def _fd_normwise_error(f, y, c, h=1e-4):
    """max |FD - analytic| over the probes divided by max |analytic| (gradient and Hessian jointly)."""
    t = np.zeros(y.shape[0])
    fd = f.finite_difference(step=h, scaled=False)
    exact = np.concatenate([f.gradient(t, y, c).ravel(), f.hessian(t, y, c).ravel()])
    approx = np.concatenate([fd.gradient(t, y, c).ravel(), fd.hessian(t, y, c).ravel()])
    return np.max(np.abs(approx - exact)) / np.max(np.abs(exact))


@pytest.mark.parametrize("d", [1, 2])
def test_fd_matches_analytic_suite(d):
    rng = np.random.default_rng(3)
    y = np.vstack([rng.uniform(-10, 10, (20000, d)) / np.sqrt(d), rng.uniform(-3, 3, (20000, d))])
    c = rng.integers(1, 3, y.shape[0])
    for f in standard_suite(d, 2):
        assert _fd_normwise_error(f, y, c) <= 1e-6, f.name


def test_fd_scaled_step_default():
    f = gaussian(0.0, 1.0)
    y = np.array([[0.3], [5.0]])
    t, c = np.zeros(2), np.ones(2, dtype=int)
    g = f.gradient(t, y, c)
    assert np.allclose(f.finite_difference(1e-4, scaled=True).gradient(t, y, c), g, rtol=1e-5, atol=1e-12)  # scaled step 5e-4 at y = 5


def test_bump_is_compactly_supported():
    f = bump([0.0], [1.0])
    y = np.array([[-1.0], [1.0], [1.5], [0.0]])
    v = f(np.zeros(4), y, np.ones(4, dtype=int))
    assert v[0] == v[1] == v[2] == 0.0
    assert v[3] == pytest.approx(np.exp(-1.0))


# -- characteristics -----------------------------------------------------------------


def test_characteristics_indicators_coincide_for_identity_jump():
    levy = LevySpec("compound_poisson", atoms=[[0.4], [-1.7], [2.5]], masses=[1.0, 2.0, 0.5], truncation=1.0)
    spec = make_spec(mu=[[0.3], [0.1]], levy=levy, F=additive_jump(1.0, 2, 1))
    ch = compute_characteristics(spec, 0.0, [0.2], 1)
    assert ch.b_tilde == pytest.approx([0.3], abs=0)


def test_characteristics_switch_atom_and_special_drift():
    spec = make_spec(mu=[[0.5], [0.5]], sigma=0.0, lam={(1, 2): constant_rate(3.0)}, bounds={(1, 2): 3.0},
                     rho={(1, 2): constant_shift(2.0)})
    ch = compute_characteristics(spec, 0.0, [0.0], 1)
    assert len(ch.nu_bar.switch_atoms) == 1
    atom = ch.nu_bar.switch_atoms[0]
    assert atom.mass == 3.0 and atom.z1.tolist() == [2.0] and atom.z2 == 1
    assert ch.special_drift == pytest.approx([0.5 + 6.0])


def test_diffusion_matrix_diag():
    co = CoefficientSet(2, 2, constant_drift(0.0, 1, 2), constant_diffusion([[1.0, 0.0], [0.0, 2.0]], 1, 2, 2))
    spec = ModelSpec(RegimeSet(1), LevySpec(), co, 1.0, [0.0, 0.0], 1)
    ch = compute_characteristics(spec, 0.0, [0.0, 0.0], 1)
    assert np.array_equal(ch.diffusion_matrix, np.diag([1.0, 4.0]))


@given(st.floats(-5, 5), st.floats(0, 1), st.integers(1, 2))
def test_nu_bar_switch_mass_equals_total_intensity(y0, t, c):
    spec = jump_diffusion_sin()
    ch = compute_characteristics(spec, t, [y0], c)
    assert ch.nu_bar.switch_mass == pytest.approx(1.0 + 0.5 * np.sin(y0), rel=1e-15)
    a = ch.diffusion_matrix
    assert np.allclose(a, a.T) and np.all(np.linalg.eigvalsh(a) >= -1e-15)


def test_truncation_function():
    z1, z2 = truncation_h([0.3], 0)
    assert z1.tolist() == [0.3] and z2 == 0
    z1, z2 = truncation_h([0.3], 1)
    assert z1.tolist() == [0.0] and z2 == 0


# -- validation probes --------------------------------------------------------------


def test_validate_constant_coefficients():
    spec = make_spec(mu=0.0, sigma=1.0, K=1)
    rep = validate_model(spec, 200, (0.0, 1.0, -3.0, 3.0))
    assert rep.C_LG == pytest.approx(1.0)
    assert rep.worst["LG"]["y"] == pytest.approx([0.0])
    assert not rep.superlinear["LG"]
    assert rep.passed


def test_validate_flags_superlinear_drift():
    spec = make_spec(mu=lambda t, y, c: y**2, sigma=0.0, K=1)
    rep = validate_model(spec, 200, (0.0, 1.0, -10.0, 10.0))
    # y^4 / (1 + y^2) at the corner y = 10
    assert rep.C_LG == pytest.approx(10000.0 / 101.0, rel=1e-12)
    assert rep.superlinear["LG"]


def test_validate_bound_check():
    ok = make_spec(lam={(1, 2): sinusoidal_rate(2.0, 1.0)}, bounds={(1, 2): 3.0})
    assert validate_model(ok, 400, (0.0, 1.0, -4.0, 4.0)).bound_violations == []
    bad = make_spec(lam={(1, 2): sinusoidal_rate(2.0, 1.0)}, bounds={(1, 2): 2.5})
    viol = validate_model(bad, 400, (0.0, 1.0, -4.0, 4.0)).bound_violations
    assert viol
    assert not validate_model(bad, 400, (0.0, 1.0, -4.0, 4.0)).passed


def test_validate_reports_nonfinite_point():
    spec = make_spec(mu=lambda t, y, c: np.where(y > 1, np.inf, 0.0), K=1)
    with pytest.raises(ModelEvaluationError):
        validate_model(spec, 50, (0.0, 1.0, -2.0, 2.0))


def test_validate_linear_model_constants_finite():
    A = [[[-1.0]], [[-2.0]]]
    spec = make_spec(mu=linear_drift(A, [[0.0], [0.0]], 2, 1))
    rep = validate_model(spec, 300, (0.0, 1.0, -5.0, 5.0))
    assert np.isfinite(rep.C_LG) and np.isfinite(rep.C_Lip) and not rep.superlinear["LG"]
