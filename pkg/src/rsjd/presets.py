"""Ready-made models: exponential Levy with regimes, semi-Markov switching,
and the small reference models used by the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import HazardDomainError, PresetError
from .model_core import (CoefficientSet, LevySpec, ModelSpec, QuadratureConfig, RegimeSet, additive_jump,
                         constant_diffusion, constant_drift, constant_rate, constant_shift, integrate_nodes,
                         linear_drift, sinusoidal_rate)


# ---------------------------------------------------------------------------
# Exponential Levy with regimes


def evaluate_J(u: float, levy: LevySpec, quad: QuadratureConfig = QuadratureConfig(),
               convention: str = "martingale") -> float:
    """Exponent J(u) of the closed-form exponential-Levy solution.

    ``convention="martingale"`` returns
    ``-u^2/2 - int (e^{ux} - 1 - ux 1{|x|<=1}) nu(dx)``, the value for which
    ``y0 exp(t J(sigma) + sigma Z_t)`` solves the SDE with fully compensated
    jumps. ``convention="printed"`` returns the variant
    ``-u^2/2 + int (e^{ux} - 1 + ux 1{|x|<1}) nu(dx)``, kept only so the
    replay test can show it does not reproduce the SDE.
    """
    x, w, exact = levy.nodes(quad)
    base = -0.5 * u * u
    if len(w) == 0 or u == 0:
        return float(base) if u != 0 else 0.0
    x = x[:, 0]
    if convention == "martingale":
        vals = np.exp(u * x) - 1.0 - u * x * (np.abs(x) <= 1.0)
        total, _ = integrate_nodes(vals, w, exact, quad)
        return float(base - total)
    if convention == "printed":
        vals = np.exp(u * x) - 1.0 + u * x * (np.abs(x) < 1.0)
        total, _ = integrate_nodes(vals, w, exact, quad)
        return float(base + total)
    raise ValueError(f"unknown convention {convention!r}")


def small_mark_mean(levy: LevySpec, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """int_{|x|<=1} x nu(dx) (the Levy-Ito compensator at level 1)."""
    x, w, _ = levy.nodes(quad)
    if len(w) == 0:
        return 0.0
    return float(np.sum(w * x[:, 0] * (np.abs(x[:, 0]) <= 1.0)))


def big_jump_compensator(levy: LevySpec, sigma: float, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """int_{|x|>a} (e^{sigma x} - 1) nu(dx)."""
    x, w, _ = levy.nodes(quad)
    if len(w) == 0:
        return 0.0
    big = np.abs(x[:, 0]) > levy.truncation
    return float(np.sum(w[big] * (np.exp(sigma * x[big, 0]) - 1.0)))


def exponential_moment_ok(levy: LevySpec, sigma: float, quad: QuadratureConfig = QuadratureConfig()) -> bool:
    """Finite int_{|x|>1} e^{2 sigma x} nu(dx) (checkable for node-represented measures)."""
    x, w, _ = levy.nodes(quad)
    if len(w) == 0:
        return True
    big = np.abs(x[:, 0]) > 1
    with np.errstate(over="ignore"):
        return bool(np.isfinite(np.sum(w[big] * np.exp(2 * sigma * x[big, 0]))))


@dataclass
class ExpLevyPreset:
    sigma: list
    rho_matrix: Optional[list] = None
    lam_matrix: Optional[list] = None
    levy: LevySpec = field(default_factory=LevySpec)
    rate: float = 0.0
    y0: float = 1.0
    c0: int = 1
    horizon: float = 1.0
    start: float = 0.0

    @property
    def K(self) -> int:
        return len(self.sigma)


def _matrix(values, K, name):
    if values is None:
        return np.zeros((K, K))
    arr = np.asarray(values, dtype=float)
    if arr.shape != (K, K):
        raise PresetError(f"{name} must be {K}x{K}")
    return arr


def _check_levy_1d(levy: LevySpec):
    if levy.kind != "none" and levy.dim != 1:
        raise PresetError("exponential-Levy presets need a one-dimensional Levy measure")
    if levy.kind == "truncated_infinite_activity":
        raise PresetError("exponential-Levy presets need a compound Poisson (or no) Levy part")


def build_exp_levy(preset: ExpLevyPreset, quad: QuadratureConfig = QuadratureConfig()) -> ModelSpec:
    """Model dY = Y_-(rate dt + sigma(C) dW + int (e^{sigma x} - 1) dPi~ + sum (e^rho - 1) dN).

    All Levy jumps are compensated, so the big-band compensator
    ``int_{|x|>a} (e^{sigma x} - 1) nu`` enters the drift.
    """
    K = preset.K
    sig = np.asarray(preset.sigma, dtype=float)
    if np.any(sig < 0):
        raise PresetError("sigma(i) must be non-negative")
    _check_levy_1d(preset.levy)
    rho = _matrix(preset.rho_matrix, K, "rho_matrix")
    lam = _matrix(preset.lam_matrix, K, "lam_matrix")
    if np.any(lam < 0):
        raise PresetError("switching intensities must be non-negative")
    for i in range(K):
        if not exponential_moment_ok(preset.levy, sig[i], quad):
            raise PresetError(f"exponential moment condition fails for regime {i + 1}")
    sig_t = np.concatenate([[0.0], sig])
    big = np.concatenate([[0.0], [big_jump_compensator(preset.levy, s, quad) for s in sig]])
    drift = preset.rate - big

    def mu(t, y, c):
        return y * drift[c][:, None]

    def sigma(t, y, c):
        return (y * sig_t[c][:, None])[:, :, None]

    def F(t, y, c, x):
        return y * np.expm1(sig_t[c][:, None] * x)

    rho_f, lam_f, bounds = {}, {}, {}
    for i in range(K):
        for j in range(K):
            if i == j:
                continue
            pair = (i + 1, j + 1)
            factor = np.expm1(rho[i, j])
            rho_f[pair] = (lambda f: (lambda t, y: y * f))(factor)
            if lam[i, j] > 0:
                lam_f[pair] = constant_rate(lam[i, j])
                bounds[pair] = float(lam[i, j])
    coeffs = CoefficientSet(1, 1, mu, sigma, F, rho_f, lam_f, bounds)
    return ModelSpec(RegimeSet(K), preset.levy, coeffs, preset.horizon, [preset.y0], preset.c0, preset.start,
                     name="exp_levy")


def closed_form_exp_levy_path(preset: ExpLevyPreset, batch, quad: QuadratureConfig = QuadratureConfig(),
                              convention: str = "martingale") -> np.ndarray:
    """Closed-form exponential-Levy values at the record times for every path of ``batch``."""
    from .path_simulator import closed_form_exp_levy

    J = [evaluate_J(s, preset.levy, quad, convention) for s in preset.sigma]
    return closed_form_exp_levy(batch, preset.sigma, _matrix(preset.rho_matrix, preset.K, "rho_matrix"), J,
                                preset.y0, small_mark_mean(preset.levy, quad), preset.rate)


# ---------------------------------------------------------------------------
# Semi-Markov switching


def exponential_holding(rate: float):
    return stats.expon(scale=1.0 / rate)


def gamma_holding(shape: float, rate: float):
    return stats.gamma(shape, scale=1.0 / rate)


@dataclass
class SemiMarkovPreset:
    """Semi-Markov kernel Q_ij(t) = P_ij F_ij(t) with holding laws given as
    frozen scipy distributions (``pdf``/``cdf``) keyed by pair, and hazard caps."""

    P: list
    holding: dict
    caps: dict
    sigma: list
    levy: LevySpec = field(default_factory=LevySpec)
    rate: float = 0.0
    s0: float = 1.0
    c0: int = 1
    horizon: float = 1.0
    start: float = 0.0

    @property
    def K(self) -> int:
        return len(self.sigma)


def hazard_function(preset: SemiMarkovPreset, i: int, j: int):
    """z -> P_ij f_ij(z) / (1 - sum_m Q_im(z)) (vectorised)."""
    P = np.asarray(preset.P, dtype=float)
    K = preset.K
    outs = [(m, preset.holding[(i, m)]) for m in range(1, K + 1) if m != i and P[i - 1, m - 1] > 0]
    law = preset.holding.get((i, j))
    pij = P[i - 1, j - 1]

    def hazard(z):
        z = np.asarray(z, dtype=float)
        # sum_m P_im (1 - F_im) equals 1 - sum_m Q_im but keeps precision in the tail
        denom = sum(P[i - 1, m - 1] * dist.sf(z) for m, dist in outs)
        if np.any(denom <= 0):
            k = int(np.argmin(denom))
            raise HazardDomainError(f"survival of regime {i} vanishes at residence {np.ravel(z)[k]!r}")
        if law is None or pij == 0:
            return np.zeros_like(z)
        return pij * law.pdf(z) / denom

    return hazard


def _check_semi_markov(preset: SemiMarkovPreset):
    P = np.asarray(preset.P, dtype=float)
    K = preset.K
    if P.shape != (K, K):
        raise PresetError("P must be K x K")
    if np.any(np.diag(P) != 0) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
        raise PresetError("P must be stochastic with zero diagonal")
    if np.any(np.asarray(preset.sigma) < 0):
        raise PresetError("sigma(i) must be non-negative")
    zs = np.linspace(0.0, preset.horizon - preset.start, 2001)
    for i in range(1, K + 1):
        for j in range(1, K + 1):
            if i == j or P[i - 1, j - 1] == 0:
                continue
            if (i, j) not in preset.holding:
                raise PresetError(f"missing holding law for {(i, j)}")
            cap = preset.caps.get((i, j))
            if cap is None or not np.isfinite(cap):
                raise PresetError(f"missing finite hazard cap for {(i, j)}")
            h = hazard_function(preset, i, j)(zs)
            if np.max(h) > cap * (1 + 1e-9):
                raise PresetError(f"hazard {(i, j)} reaches {np.max(h):.4g} above its cap {cap}")


def build_semi_markov(preset: SemiMarkovPreset, quad: QuadratureConfig = QuadratureConfig()) -> ModelSpec:
    """State (S, R): S exponential-Levy without regime jumps, R residence time
    (unit drift, reset by -R at each switch), intensities lambda_ij(R)."""
    _check_semi_markov(preset)
    _check_levy_1d(preset.levy)
    K = preset.K
    P = np.asarray(preset.P, dtype=float)
    sig_t = np.concatenate([[0.0], np.asarray(preset.sigma, dtype=float)])
    big = np.concatenate([[0.0], [big_jump_compensator(preset.levy, s, quad) for s in preset.sigma]])
    drift = preset.rate - big

    def mu(t, y, c):
        return np.stack([y[:, 0] * drift[c], np.ones(y.shape[0])], axis=1)

    def sigma(t, y, c):
        return np.stack([y[:, 0] * sig_t[c], np.zeros(y.shape[0])], axis=1)[:, :, None]

    def F(t, y, c, x):
        return np.stack([y[:, 0] * np.expm1(sig_t[c] * x[:, 0]), np.zeros(y.shape[0])], axis=1)

    def reset(t, y):
        return np.stack([np.zeros(y.shape[0]), -y[:, 1]], axis=1)

    rho_f, lam_f, bounds = {}, {}, {}
    for i in range(1, K + 1):
        for j in range(1, K + 1):
            if i == j:
                continue
            rho_f[(i, j)] = reset
            if P[i - 1, j - 1] > 0:
                h = hazard_function(preset, i, j)
                lam_f[(i, j)] = (lambda hz: (lambda t, y: hz(y[:, 1])))(h)
                bounds[(i, j)] = float(preset.caps[(i, j)])
    coeffs = CoefficientSet(2, 1, mu, sigma, F, rho_f, lam_f, bounds)
    return ModelSpec(RegimeSet(K), preset.levy, coeffs, preset.horizon, [preset.s0, 0.0], preset.c0,
                     preset.start, name="semi_markov", residence_coordinate=1)


def two_state_semi_markov(holding: str = "exponential", theta: float = 2.0, shape: float = 2.0,
                          sigma=(0.2, 0.3), horizon: float = 1.0, rate: float = 0.0,
                          levy: LevySpec = LevySpec()) -> SemiMarkovPreset:
    """K=2 alternating semi-Markov chain with exponential or gamma holding times.

    Hazard caps: theta for exponential, rate theta for gamma with shape >= 1
    (the gamma hazard increases to its rate).
    """
    if holding == "exponential":
        law, cap = exponential_holding(theta), theta
    elif holding == "gamma":
        if shape < 1:
            raise PresetError("gamma holding with shape < 1 has an unbounded hazard")
        law, cap = gamma_holding(shape, theta), theta
    else:
        raise PresetError(f"unknown holding law {holding!r}")
    return SemiMarkovPreset(P=[[0.0, 1.0], [1.0, 0.0]], holding={(1, 2): law, (2, 1): law},
                            caps={(1, 2): cap, (2, 1): cap}, sigma=list(sigma), levy=levy, rate=rate,
                            horizon=horizon)


# ---------------------------------------------------------------------------
# Reference models used by the acceptance suite


def pure_switching(lam12: float = 1.0, lam21: float = 1.0, horizon: float = 1.0, y0: float = 0.0,
                   c0: int = 1) -> ModelSpec:
    """Y frozen, C a two-state Markov chain."""
    K, d = 2, 1
    coeffs = CoefficientSet(
        d, 1, constant_drift(0.0, K, d), constant_diffusion(0.0, K, d, 1), None,
        {}, {(1, 2): constant_rate(lam12), (2, 1): constant_rate(lam21)}, {(1, 2): lam12, (2, 1): lam21},
    )
    return ModelSpec(RegimeSet(K), LevySpec(), coeffs, horizon, [y0], c0, name="pure_switching")


def brownian_switching(sigma=(1.0, 0.5), mu=(0.2, -0.3), lam12: float = 1.0, lam21: float = 2.0,
                       rho: float = 0.5, horizon: float = 1.0, y0: float = 0.0) -> ModelSpec:
    """Regime-dependent Brownian motion with drift, constant switching rates and switch jumps rho."""
    K, d = 2, 1
    coeffs = CoefficientSet(
        d, 1, constant_drift([[m] for m in mu], K, d), constant_diffusion([[[s]] for s in sigma], K, d, 1),
        None, {(1, 2): constant_shift(rho), (2, 1): constant_shift(rho)},
        {(1, 2): constant_rate(lam12), (2, 1): constant_rate(lam21)}, {(1, 2): lam12, (2, 1): lam21},
    )
    return ModelSpec(RegimeSet(K), LevySpec(), coeffs, horizon, [y0], 1, name="brownian_switching")


def jump_diffusion_sin(bound: float = 2.0, horizon: float = 1.0, y0: float = 0.0,
                       atoms=(0.5, -1.5), masses=(1.0, 0.5), truncation: float = 1.0,
                       kappa=(0.5, 1.0), sigma=(0.5, 0.8), rho=(0.3, -0.3)) -> ModelSpec:
    """Mean-reverting compound-Poisson jump-diffusion with lambda(y) = 1 + sin(y)/2 <= bound."""
    K, d = 2, 1
    levy = LevySpec("compound_poisson", dim=1, truncation=truncation,
                    atoms=np.asarray(atoms, dtype=float).reshape(-1, 1), masses=masses)
    A = [[[-k]] for k in kappa]
    coeffs = CoefficientSet(
        d, 1, linear_drift(A, [[0.0]] * K, K, d), constant_diffusion([[[s]] for s in sigma], K, d, 1),
        additive_jump(1.0, K, d), {(1, 2): constant_shift(rho[0]), (2, 1): constant_shift(rho[1])},
        {(1, 2): sinusoidal_rate(1.0, 0.5), (2, 1): sinusoidal_rate(1.0, 0.5)}, {(1, 2): bound, (2, 1): bound},
    )
    return ModelSpec(RegimeSet(K), levy, coeffs, horizon, [y0], 1, name="jump_diffusion_sin")


# ---------------------------------------------------------------------------
# Registry for the configuration loader


def _levy_from_params(params: dict) -> LevySpec:
    if not params or params.get("kind", "none") == "none":
        return LevySpec(truncation=float(params.get("truncation", 1.0)) if params else 1.0)
    atoms = np.asarray(params["atoms"], dtype=float).reshape(-1, 1)
    return LevySpec("compound_poisson", dim=1, truncation=float(params.get("truncation", 1.0)),
                    atoms=atoms, masses=params["masses"])


def _exp_levy_from_params(p: dict) -> ModelSpec:
    return build_exp_levy(ExpLevyPreset(
        sigma=p.get("sigma", [0.2]), rho_matrix=p.get("rho_matrix"), lam_matrix=p.get("lam_matrix"),
        levy=_levy_from_params(p.get("levy", {})), rate=p.get("rate", 0.0), y0=p.get("y0", 1.0),
        c0=p.get("c0", 1), horizon=p.get("horizon", 1.0)))


def _semi_markov_from_params(p: dict) -> ModelSpec:
    pre = two_state_semi_markov(p.get("holding", "exponential"), p.get("theta", 2.0), p.get("shape", 2.0),
                                tuple(p.get("sigma", (0.2, 0.3))), p.get("horizon", 1.0), p.get("rate", 0.0),
                                _levy_from_params(p.get("levy", {})))
    return build_semi_markov(pre)


PRESETS = {
    "exp_levy": (_exp_levy_from_params, "generalized exponential Levy model with Markov regimes"),
    "semi_markov": (_semi_markov_from_params, "two-state semi-Markov switching with residence coordinate R"),
    "pure_switching": (lambda p: pure_switching(**p), "two-state Markov chain, Y frozen"),
    "brownian_switching": (lambda p: brownian_switching(**p), "Brownian motion with regime switching and rho jumps"),
    "jump_diffusion_sin": (lambda p: jump_diffusion_sin(**p),
                           "compound-Poisson jump-diffusion with lambda(y) = 1 + sin(y)/2"),
}


def build_preset(name: str, params: Optional[dict] = None) -> ModelSpec:
    if name not in PRESETS:
        raise PresetError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name][0](dict(params or {}))
