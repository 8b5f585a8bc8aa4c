"""Shapiro-Wilk, one-way ANOVA, Tukey HSD and Pearson regression."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from ..errors import StatsError
from .special import (
    f_sf,
    studentized_range_ppf,
    studentized_range_sf,
    t_ppf_two_sided,
    t_sf_two_sided,
)

P_FLOOR = 1e-12


def _digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, default=lambda v: np.asarray(v).tolist()).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class TestResult:
    test: str
    statistic: float
    p_value: float
    extras: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "extras": self.extras,
            "warnings": list(self.warnings),
            "provenance": self.provenance,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _poly(coefs, x: float) -> float:
    return sum(c * x**i for i, c in enumerate(coefs))


# Royston's polynomial approximations
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_G = (-2.273, 0.459)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)


def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    """Antisymmetric weights a_1..a_n for sorted data."""
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mm = float(m @ m)
    u = 1.0 / math.sqrt(n)
    a = m / math.sqrt(mm)
    an = a[-1] + _poly(_C1, u)
    if n > 5:
        an1 = a[-2] + _poly(_C2, u)
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an**2 - 2 * an1**2)
        a = m / math.sqrt(phi)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an**2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = an, -an
    return a


def shapiro_wilk(sample) -> TestResult:
    """W statistic with Royston's normalizing transform for the p-value (3 <= n <= 5000)."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if not 3 <= n <= 5000:
        raise StatsError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    ss = float(np.sum((x - x.mean()) ** 2))
    if ss <= 0 or x[-1] == x[0]:
        raise StatsError("zero variance")
    a = shapiro_wilk_coefficients(n)
    w = min(1.0, float(a @ x) ** 2 / ss)
    if n == 3:
        p = max(0.0, 6 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75))))
    else:
        y = math.log1p(-w) if w < 1 else -math.inf
        if n <= 11:
            gamma = _poly(_G, n)
            if y >= gamma:
                p = 0.0
            else:
                y = -math.log(gamma - y)
                mu, sigma = _poly(_C3, n), math.exp(_poly(_C4, n))
                p = float(1 - ndtr((y - mu) / sigma))
        else:
            ln = math.log(n)
            mu, sigma = _poly(_C5, ln), math.exp(_poly(_C6, ln))
            p = 1.0 if math.isinf(y) else float(1 - ndtr((y - mu) / sigma))
    return TestResult(
        "shapiro_wilk", w, min(1.0, max(0.0, p)), {"W": w, "n": n},
        provenance={"test": "shapiro_wilk", "inputs_digest": _digest(x), "params": {}},
    )


def _groups(groups) -> list[np.ndarray]:
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2:
        raise StatsError("need at least two groups")
    if any(len(g) < 2 for g in groups):
        raise StatsError("each group needs at least two values")
    allv = np.concatenate(groups)
    if np.all(allv == allv[0]):
        raise StatsError("zero total variance")
    return groups


def _anova_parts(groups):
    n = np.array([len(g) for g in groups])
    means = np.array([g.mean() for g in groups])
    grand = np.concatenate(groups).mean()
    ss_between = float(np.sum(n * (means - grand) ** 2))
    ss_within = float(sum(np.sum((g - g.mean()) ** 2) for g in groups))
    df_b, df_w = len(groups) - 1, int(n.sum()) - len(groups)
    return n, means, ss_between, ss_within, df_b, df_w


def one_way_anova(groups) -> TestResult:
    """F = MS_between / MS_within with p from the F(k-1, N-k) survival function."""
    groups = _groups(groups)
    n, means, ssb, ssw, df_b, df_w = _anova_parts(groups)
    msb, msw = ssb / df_b, ssw / df_w
    warnings = []
    if msw == 0:
        f, p = math.inf, 0.0
        warnings.append("degenerate: zero within-group variance")
    else:
        f = msb / msw
        p = f_sf(f, df_b, df_w)
    extras = {
        "F": f, "df_between": df_b, "df_within": df_w,
        "ss_between": ssb, "ss_within": ssw, "ms_within": msw,
        "group_means": means.tolist(), "group_sizes": n.tolist(),
        "degenerate": msw == 0,
    }
    return TestResult(
        "one_way_anova", f, p, extras, warnings,
        {"test": "one_way_anova", "inputs_digest": _digest([g.tolist() for g in groups]), "params": {}},
    )


def tukey_hsd(groups, alpha: float = 0.05, labels=None) -> TestResult:
    """Tukey-Kramer pairwise comparisons; plain t intervals are reported alongside."""
    groups = _groups(groups)
    labels = list(labels) if labels is not None else [str(i) for i in range(len(groups))]
    n, means, _, ssw, _, df_w = _anova_parts(groups)
    k = len(groups)
    msw = ssw / df_w
    q_crit = studentized_range_ppf(1 - alpha, k, df_w)
    t_crit = t_ppf_two_sided(alpha, df_w)
    pairs = []
    for i, j in itertools.combinations(range(k), 2):
        diff = float(means[i] - means[j])
        se = math.sqrt(msw / 2 * (1 / n[i] + 1 / n[j]))
        se_t = math.sqrt(msw * (1 / n[i] + 1 / n[j]))
        if se == 0:
            q, p, t_p = (0.0, 1.0, 1.0) if diff == 0 else (math.inf, 0.0, 0.0)
        else:
            q = abs(diff) / se
            p = min(1.0, max(0.0, studentized_range_sf(q, k, df_w)))
            t_p = t_sf_two_sided(diff / se_t, df_w)
        pairs.append({
            "group_a": labels[i], "group_b": labels[j], "mean_diff": diff, "q": q, "p": p,
            "ci_low": diff - q_crit * se, "ci_high": diff + q_crit * se,
            "t_ci_low": diff - t_crit * se_t, "t_ci_high": diff + t_crit * se_t, "t_p": t_p,
            "reject": p < alpha,
        })
    extras = {
        "alpha": alpha, "k": k, "df_within": df_w, "ms_within": msw, "q_crit": q_crit,
        "t_crit": t_crit, "pairs": pairs,
        "ci_kinds": {"ci": "Tukey-Kramer simultaneous", "t_ci": "unadjusted pairwise t"},
    }
    stat = max(pr["q"] for pr in pairs)
    return TestResult(
        "tukey_hsd", stat, min(pr["p"] for pr in pairs), extras, [],
        {"test": "tukey_hsd", "inputs_digest": _digest([g.tolist() for g in groups]), "params": {"alpha": alpha}},
    )


def pearson_regression(x, y) -> TestResult:
    """Least-squares line, Pearson R and its two-sided t-test p-value."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("x and y must be 1-D and the same length")
    n = len(x)
    if n < 3:
        raise StatsError("regression needs at least three points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    if sxx == 0:
        raise StatsError("zero variance in x")
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    warnings = []
    if syy == 0:
        r, p = 0.0, 1.0
        warnings.append("zero variance in y: correlation undefined, reported as 0")
    else:
        r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
        df = n - 2
        if abs(r) == 1.0:
            p = 0.0
        else:
            p = t_sf_two_sided(r * math.sqrt(df / (1 - r * r)), df)
    extras = {"slope": slope, "intercept": intercept, "R": r, "n": n, "p_below_floor": p < P_FLOOR}
    return TestResult(
        "pearson_regression", r, p, extras, warnings,
        {"test": "pearson_regression", "inputs_digest": _digest([x.tolist(), y.tolist()]), "params": {}},
    )


def compare_conditions(groups: dict[str, list[float]], alpha: float = 0.05) -> dict:
    """Normality checks, ANOVA and Tukey over named conditions, as plain dicts."""
    names = list(groups)
    vals = [groups[k] for k in names]
    out = {"conditions": names, "normality": {}, "warnings": []}
    for name, v in groups.items():
        try:
            res = shapiro_wilk(v)
            out["normality"][name] = res.to_dict()
            if res.p_value < alpha:
                out["warnings"].append(f"{name}: Shapiro-Wilk p={res.p_value:.3g} < {alpha}; ANOVA kept")
        except StatsError as exc:
            out["normality"][name] = {"error": str(exc)}
    try:
        out["anova"] = one_way_anova(vals).to_dict()
        out["tukey"] = tukey_hsd(vals, alpha, names).to_dict()
    except StatsError as exc:
        out["anova"] = out["tukey"] = {"error": str(exc)}
    return out
