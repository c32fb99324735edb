"""Synthetic data generators for the three simulation studies.

Covariates for the regression studies are Clayton-copula dependent with
normal, log-normal, and exponential marginals. The causal study uses a
structural-equation longitudinal cohort (an HIV-treatment-style process:
a CD4-count-like marker l1, a percentage marker l2 on the 0-1 scale, a
z-score marker l3, a growth-type outcome y, monotone treatment a, and
censoring c), with truncated-normal shocks whose out-of-range draws are
replaced by uniform draws near the violated bound.

All generation is driven by counter-based streams from :mod:`.rng`, so a
panel is bitwise reproducible given (seed, n, horizon, rule).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import norm_quantile
from .models import Dataset

__all__ = [
    "LINEAR_COEFFICIENTS",
    "LongitudinalPanel",
    "MarginalSpec",
    "STUDY_MARGINALS",
    "clayton_sample",
    "gen_forecast_study",
    "gen_linear_study",
    "panel_from_csv",
    "panel_to_csv",
    "simulate_longitudinal",
    "transform_marginals",
    "truncated_normal",
]

# Mean-function coefficients and noise levels of the two regression studies.
LINEAR_COEFFICIENTS = np.array([0.0, 0.0, 1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 0.5, 0.0])
LINEAR_NOISE_SD = math.exp(2.0)
FORECAST_NOISE_SD = math.exp(1.5)

# Truncation bounds and uniform tail-replacement intervals (a1, a2, b1, b2)
# per variable. Replacement intervals straddle the violated bound. For the
# z-score variables the lower interval is (-10, -3): reading the lower tail
# as straddling the bound the same way the other variables do is what
# reproduces the published counterfactual means (see the truth oracle
# acceptance test).
_TRUNC_L1 = (0.0, 10000.0, 0.0, 50.0, 5000.0, 10000.0)
_TRUNC_L2 = (0.06, 0.8, 0.03, 0.09, 0.7, 0.8)
_TRUNC_Z = (-5.0, 5.0, -10.0, -3.0, 3.0, 10.0)


@dataclass(frozen=True)
class MarginalSpec:
    """One covariate marginal: normal(mu, sd), lognormal(mu, sd) or exponential(rate)."""

    kind: str
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "lognormal", "exponential"):
            raise ValueError(f"unknown marginal kind {self.kind!r}")
        if self.kind in ("normal", "lognormal") and self.b <= 0:
            raise ValueError("scale must be positive")
        if self.kind == "exponential" and self.a <= 0:
            raise ValueError("rate must be positive")


STUDY_MARGINALS = (
    MarginalSpec("normal", 0.0, 1.0),
    MarginalSpec("normal", 0.0, 1.0),
    MarginalSpec("normal", 0.0, 1.0),
    MarginalSpec("normal", 0.0, 1.0),
    MarginalSpec("lognormal", 0.0, 0.5),
    MarginalSpec("lognormal", 0.0, 0.5),
    MarginalSpec("lognormal", 0.0, 0.5),
    MarginalSpec("exponential", 1.0),
    MarginalSpec("exponential", 1.0),
    MarginalSpec("exponential", 1.0),
)


def clayton_sample(n: int, d: int, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Clayton-copula dependent uniforms via the gamma frailty construction.

    Draw V ~ Gamma(1/theta, 1) and independent E_j ~ Exp(1), then
    U_j = (1 + E_j / V)^(-1/theta). Kendall's tau is theta / (theta + 2).
    """
    if theta <= 0.0:
        raise ValueError("the copula parameter must be positive")
    frailty = rng.gamma(1.0 / theta, 1.0, size=n)
    shocks = rng.exponential(1.0, size=(n, d))
    u = (1.0 + shocks / frailty[:, None]) ** (-1.0 / theta)
    return np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def transform_marginals(U: np.ndarray, specs) -> np.ndarray:
    """Columnwise inverse-CDF transform of copula uniforms."""
    U = np.asarray(U, dtype=float)
    specs = tuple(specs)
    if U.ndim != 2 or U.shape[1] != len(specs):
        raise ValueError("one marginal spec per column required")
    out = np.empty_like(U)
    for j, spec in enumerate(specs):
        if spec.kind == "normal":
            out[:, j] = spec.a + spec.b * norm_quantile(U[:, j])
        elif spec.kind == "lognormal":
            out[:, j] = np.exp(spec.a + spec.b * norm_quantile(U[:, j]))
        else:
            out[:, j] = -np.log1p(-U[:, j]) / spec.a
    return out


def _study_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    return transform_marginals(clayton_sample(n, 10, 1.0, rng), STUDY_MARGINALS)


def gen_linear_study(n: int, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    """Ten dependent covariates, a linear mean in seven of them, heavy noise.

    Returns the dataset and the true mean vector for MSE bookkeeping.
    """
    X = _study_covariates(n, rng)
    mu = X @ LINEAR_COEFFICIENTS
    y = mu + rng.normal(0.0, LINEAR_NOISE_SD, size=n)
    names = tuple(f"x{j}" for j in range(1, 11))
    return Dataset(y, X, names), mu


def gen_forecast_study(n: int, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    """Same covariate law, but the mean has an interaction and a square."""
    X = _study_covariates(n, rng)
    mu = -5.0 + 0.5 * X[:, 1] + 1.5 * X[:, 5] + 1.5 * X[:, 8] + X[:, 5] * X[:, 8] + X[:, 1] ** 2
    y = mu + rng.normal(0.0, FORECAST_NOISE_SD, size=n)
    names = tuple(f"x{j}" for j in range(1, 11))
    return Dataset(y, X, names), mu


def truncated_normal(mu, sd, bounds, tails, rng: np.random.Generator) -> np.ndarray:
    """Normal draw with uniform tail replacement.

    Draw z ~ N(mu, sd); where z < a it is replaced by a U(a1, a2) draw and
    where z > b by a U(b1, b2) draw. With sd = 0 and mu inside [a, b] this
    returns mu exactly.
    """
    a, b = bounds
    a1, a2, b1, b2 = tails
    if a1 > a2 or b1 > b2:
        raise ValueError("tail intervals must be ordered")
    scalar = np.ndim(mu) == 0 and np.ndim(sd) == 0
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    z = rng.normal(mu, sd)
    lo = z < a
    hi = z > b
    n_lo = int(lo.sum())
    n_hi = int(hi.sum())
    if n_lo:
        z[lo] = rng.uniform(a1, a2, n_lo)
    if n_hi:
        z[hi] = rng.uniform(b1, b2, n_hi)
    return float(z[0]) if scalar else z


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class LongitudinalPanel:
    """Per-subject trajectories of a longitudinal treatment cohort.

    v is n x 3 baseline data; l1, l2, l3, a, c, y are n x (horizon+1).
    c is the absorbing censoring flag: once it is 1 the subject's y at
    that time and every later record are unobserved (kept here as latent
    values; exports drop them). Under an intervention c is identically 0
    and a follows the rule.
    """

    v: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    l3: np.ndarray
    a: np.ndarray
    c: np.ndarray
    y: np.ndarray
    horizon: int
    subject_ids: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def uncensored_through(self, t: int) -> np.ndarray:
        return (self.c[:, : t + 1] == 0).all(axis=1)


def simulate_longitudinal(
    n: int,
    horizon: int,
    rng: np.random.Generator,
    intervention=None,
) -> LongitudinalPanel:
    """Generate the cohort, observationally or under a treatment rule.

    Variables are drawn in temporal order: baselines v1, v2, v3, then
    l1, l2, l3, a, c, y at t = 0, then l1, l2, l3, a, c, y per follow-up
    time. Treatment is observationally monotone (it continues once
    started) and is never active at baseline; interventions therefore
    apply from t = 1 on, keep a = 0 at t = 0, and force c = 0 throughout.
    That baseline convention is the one that reproduces the published
    counterfactual means; it is recorded in ``meta``.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    T = horizon

    v1 = (rng.random(n) < 4392.0 / 5826.0).astype(float)
    v2 = (rng.random(n) < np.where(v1 == 1.0, 2222.0 / 4392.0, 758.0 / 1434.0)).astype(float)
    v3 = rng.uniform(1.0, 5.0, n)

    l1 = np.empty((n, T + 1))
    l2 = np.empty((n, T + 1))
    l3 = np.empty((n, T + 1))
    a = np.zeros((n, T + 1))
    c = np.zeros((n, T + 1))
    y = np.empty((n, T + 1))

    l1[:, 0] = truncated_normal(
        np.where(v1 == 1.0, 650.0, 720.0),
        np.where(v1 == 1.0, 350.0, 400.0),
        _TRUNC_L1[:2], _TRUNC_L1[2:], rng,
    )
    l1_anchor = (l1[:, 0] - 671.7468) / (10.0 * 352.2788) + 1.0
    l2[:, 0] = truncated_normal(
        0.16 + 0.05 * (l1[:, 0] - 650.0) / 650.0, 0.07,
        _TRUNC_L2[:2], _TRUNC_L2[2:], rng,
    )
    l2_anchor = (l2[:, 0] - 0.1648594) / (10.0 * 0.06980332) + 1.0
    l3[:, 0] = truncated_normal(
        np.where(v1 == 1.0, -1.65, -2.05)
        + 0.1 * v3
        + 0.05 * (l1[:, 0] - 650.0) / 650.0
        + 0.05 * (l2[:, 0] - 16.0) / 16.0,
        1.0, _TRUNC_Z[:2], _TRUNC_Z[2:], rng,
    )
    # Treatment and censoring are structurally absent at baseline, under
    # interventions included.
    a[:, 0] = 0.0
    c[:, 0] = 0.0
    y[:, 0] = truncated_normal(
        -2.6 + 0.1 * (v3 > 2.0) + 0.3 * (v1 == 0.0) + (l3[:, 0] + 1.45),
        1.1, _TRUNC_Z[:2], _TRUNC_Z[2:], rng,
    )

    for t in range(1, T + 1):
        growth = 13.0 if t <= 4 else 4.0
        l1[:, t] = truncated_normal(
            growth * math.log(t * (1034.0 - 662.0) / 8.0)
            + l1[:, t - 1] + 2.0 * l2[:, t - 1] + 2.0 * l3[:, t - 1] + 2.5 * a[:, t - 1],
            50.0, _TRUNC_L1[:2], _TRUNC_L1[2:], rng,
        )
        d1 = l1[:, t] - l1[:, t - 1]
        l2[:, t] = truncated_normal(
            l2[:, t - 1] + 0.0003 * d1 + 0.0005 * l3[:, t - 1]
            + 0.0005 * a[:, t - 1] * l1_anchor,
            0.02, _TRUNC_L2[:2], _TRUNC_L2[2:], rng,
        )
        d2 = l2[:, t] - l2[:, t - 1]
        l3[:, t] = truncated_normal(
            l3[:, t - 1] + 0.0017 * d1 + 0.2 * d2 + 0.005 * a[:, t - 1] * l2_anchor,
            0.5, _TRUNC_Z[:2], _TRUNC_Z[2:], rng,
        )
        d3 = l3[:, t] - l3[:, t - 1]

        if intervention is None:
            p_start = _sigmoid(
                -2.4 + 0.015 * (750.0 - l1[:, t]) + 5.0 * (0.2 - l2[:, t])
                - 0.8 * l3[:, t] + 0.8 * t
            )
            a[:, t] = np.where(a[:, t - 1] == 1.0, 1.0,
                               (rng.random(n) < p_start).astype(float))
            p_cens = _sigmoid(
                -6.0 + 0.01 * (750.0 - l1[:, t]) + 1.0 * (0.2 - l2[:, t])
                - 0.65 * l3[:, t] - a[:, t]
            )
            c[:, t] = np.maximum(c[:, t - 1], (rng.random(n) < p_cens).astype(float))
        else:
            a[:, t] = intervention.assign(l1[:, t], l2[:, t], l3[:, t], a[:, t - 1])
            c[:, t] = 0.0

        growth_y = (
            y[:, t - 1]
            + 0.00005 * d1 - 0.000001 * (d1 * np.sqrt(l1_anchor)) ** 2
            + 0.01 * d2 - 0.0001 * (d2 * np.sqrt(l2_anchor)) ** 2
            + 0.07 * (d3 * (l3[:, 0] + 1.5135)) - 0.001 * (d3 * (l3[:, 0] + 1.5135)) ** 2
            + 0.005 * a[:, t] + 0.075 * a[:, t - 1] + 0.05 * a[:, t] * a[:, t - 1]
        )
        y[:, t] = truncated_normal(growth_y, 0.01, _TRUNC_Z[:2], _TRUNC_Z[2:], rng)

    meta = {
        "intervention": getattr(intervention, "name", None),
        "baseline_treatment": "a0 = 0 under every regime; rules apply from t = 1",
    }
    return LongitudinalPanel(
        v=np.column_stack([v1, v2, v3]),
        l1=l1, l2=l2, l3=l3, a=a, c=c, y=y,
        horizon=T,
        subject_ids=np.arange(n, dtype=np.int64),
        meta=meta,
    )


_PANEL_HEADER = ["subject", "t", "v1", "v2", "v3", "l1", "l2", "l3", "a", "c", "y"]


def panel_to_csv(panel: LongitudinalPanel, path) -> None:
    """Long-format export: one row per observed subject-time.

    Rows stop at the first censoring time; the censoring row keeps its
    measured covariates but an empty outcome.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PANEL_HEADER)
        for i in range(panel.n):
            for t in range(panel.horizon + 1):
                censored = panel.c[i, t] == 1.0
                row = [int(panel.subject_ids[i]), t,
                       repr(float(panel.v[i, 0])), repr(float(panel.v[i, 1])),
                       repr(float(panel.v[i, 2])),
                       repr(float(panel.l1[i, t])), repr(float(panel.l2[i, t])),
                       repr(float(panel.l3[i, t])),
                       repr(float(panel.a[i, t])), int(panel.c[i, t]),
                       "" if censored else repr(float(panel.y[i, t]))]
                writer.writerow(row)
                if censored:
                    break


def panel_from_csv(path) -> LongitudinalPanel:
    """Rebuild a panel from the long-format export; unobserved cells become NaN."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _PANEL_HEADER:
        raise ValueError(f"{path}: expected header {_PANEL_HEADER}")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    subjects = sorted({int(r[0]) for r in body})
    horizon = max(int(r[1]) for r in body)
    index = {s: i for i, s in enumerate(subjects)}
    n = len(subjects)
    v = np.full((n, 3), np.nan)
    shape = (n, horizon + 1)
    l1 = np.full(shape, np.nan); l2 = np.full(shape, np.nan); l3 = np.full(shape, np.nan)
    a = np.full(shape, np.nan); c = np.ones(shape); y = np.full(shape, np.nan)
    for r in body:
        i, t = index[int(r[0])], int(r[1])
        v[i] = [float(r[2]), float(r[3]), float(r[4])]
        l1[i, t], l2[i, t], l3[i, t] = float(r[5]), float(r[6]), float(r[7])
        a[i, t], c[i, t] = float(r[8]), float(r[9])
        if r[10] != "":
            y[i, t] = float(r[10])
    return LongitudinalPanel(
        v=v, l1=l1, l2=l2, l3=l3, a=a, c=c, y=y,
        horizon=horizon,
        subject_ids=np.array(subjects, dtype=np.int64),
        meta={"source": str(path)},
    )
