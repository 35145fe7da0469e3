"""Asymptotic inference for least-squares coefficient estimates.

Student-t and F probabilities come from the regularized incomplete beta
function, so no distribution tables or objects are needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaincinv, ndtri

__all__ = [
    "DegreesOfFreedomError",
    "IdentifiabilityError",
    "InferenceReport",
    "estimate_sigma2",
    "coefficient_covariance",
    "t_two_sided_pvalue",
    "t_quantile",
    "f_survival",
    "t_test",
    "confidence_interval",
    "f_test",
    "fit_indicators",
    "significance_stars",
    "infer",
]

CONDITION_LIMIT = 1e12


class DegreesOfFreedomError(ValueError):
    """Fewer observations than estimated coefficients."""


class IdentifiabilityError(ValueError):
    """The information matrix is singular or nearly so."""

    def __init__(self, message, flagged=()):
        super().__init__(message)
        self.flagged = tuple(flagged)


def t_two_sided_pvalue(t, dof) -> float:
    """``P(|T| >= |t|)`` for a Student-t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise DegreesOfFreedomError("degrees of freedom must be positive")
    t = float(t)
    if math.isinf(dof):
        return float(math.erfc(abs(t) / math.sqrt(2.0)))
    return float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


def t_quantile(prob, dof) -> float:
    """Quantile of the Student-t distribution at ``prob`` in (0, 1)."""
    if not 0 < prob < 1:
        raise ValueError("prob must be in (0, 1)")
    if math.isinf(dof):
        return float(ndtri(prob))
    tail = 2.0 * min(prob, 1.0 - prob)
    x = float(betaincinv(dof / 2.0, 0.5, tail))
    mag = math.sqrt(dof * (1.0 - x) / x) if x > 0 else math.inf
    return math.copysign(mag, prob - 0.5) if prob != 0.5 else 0.0


def f_survival(f, d1, d2) -> float:
    """``P(F >= f)`` for an F distribution with ``(d1, d2)`` degrees of freedom."""
    if d1 <= 0 or d2 <= 0:
        raise DegreesOfFreedomError("F degrees of freedom must be positive")
    if f <= 0:
        return 1.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def estimate_sigma2(residuals, k: int) -> float:
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if n <= k:
        raise DegreesOfFreedomError(f"need more observations ({n}) than coefficients ({k})")
    return float(r @ r) / (n - k)


def _null_space_flags(JtJ, names=None, limit=CONDITION_LIMIT):
    w, V = np.linalg.eigh(JtJ)
    top = max(float(w.max()), 0.0)
    weak = w <= top / limit if top > 0 else np.ones_like(w, dtype=bool)
    flagged = np.any(np.abs(V[:, weak]) > 1e-6, axis=1)
    return flagged if names is None else [n for n, f in zip(names, flagged) if f]


def coefficient_covariance(J, sigma2: float, names=None) -> np.ndarray:
    """``sigma2 * inv(J.T J)``; raises :class:`IdentifiabilityError` when the
    condition number of ``J.T J`` exceeds 1e12."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    JtJ = J.T @ J
    cond = np.linalg.cond(JtJ) if JtJ.size else 0.0
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        names = names or [f"theta{i}" for i in range(JtJ.shape[0])]
        flagged = _null_space_flags(JtJ, names)
        raise IdentifiabilityError(f"information matrix is singular (condition {cond:.3g}); "
                                   f"not identified: {flagged}", flagged)
    cov = sigma2 * np.linalg.inv(JtJ)
    return 0.5 * (cov + cov.T)


def t_test(estimate, null_value, variance, dof, alpha: float = 0.1):
    """Two-sided t-test; returns ``(t_stat, p_value, reject)``."""
    if not variance > 0:
        raise ValueError("t-test needs a positive variance")
    t = (estimate - null_value) / math.sqrt(variance)
    p = t_two_sided_pvalue(t, dof)
    return t, p, p < alpha


def confidence_interval(estimate, variance, alpha: float, dof):
    """``estimate +/- t_{1 - alpha/2} * se`` (elementwise for arrays)."""
    est = np.asarray(estimate, dtype=float)
    var = np.asarray(variance, dtype=float)
    if np.any(var <= 0):
        raise ValueError("confidence interval needs positive variances")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    half = 0.0 if alpha == 1 else t_quantile(1.0 - alpha / 2.0, dof) * np.sqrt(var)
    return est - half, est + half


def f_test(rss_restricted, rss_full, k_restricted, k_full, n):
    """Nested-model F statistic and its p-value."""
    if not k_full > k_restricted:
        raise ValueError("the full model needs more coefficients than the restricted one")
    if not n > k_full:
        raise DegreesOfFreedomError("need n > k_full")
    if not rss_full > 0:
        raise ValueError("rss of the full model must be positive")
    d1, d2 = k_full - k_restricted, n - k_full
    f = ((rss_restricted - rss_full) / d1) / (rss_full / d2)
    return f, f_survival(f, d1, d2)


def fit_indicators(residuals, counts, k: int, rss_null: float):
    """``(rmse, nrmse, adjusted pseudo R2)`` with
    ``adj = 1 - (rss - k) / rss_null``."""
    r = np.asarray(residuals, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if not rss_null > 0:
        raise ValueError("rss_null must be positive")
    mean = float(np.mean(counts))
    if mean == 0:
        raise ValueError("NRMSE is undefined for zero mean counts")
    rss = float(r @ r)
    rmse = math.sqrt(rss / r.size)
    return rmse, rmse / mean, 1.0 - (rss - k) / rss_null


def significance_stars(p) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


@dataclass(frozen=True, eq=False)
class InferenceReport:
    """Inference on every coefficient; entries of fixed or unidentified
    coefficients are NaN."""

    names: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    covariance: np.ndarray
    estimated: np.ndarray
    identified: np.ndarray
    sigma2: float
    rss: float
    rss_null: float
    f_stat: float
    f_p_value: float
    rmse: float
    nrmse: float
    adjusted_pseudo_r2: float
    n: int
    k: int
    alpha: float

    def rejects(self, name: str) -> bool:
        return bool(self.p_values[self.names.index(name)] < self.alpha)

    def to_dict(self) -> dict:
        rows = []
        for i, name in enumerate(self.names):
            rows.append({
                "coefficient": name,
                "estimate": float(self.estimates[i]),
                "std_error": float(self.std_errors[i]),
                "t_stat": float(self.t_stats[i]),
                "p_value": float(self.p_values[i]),
                "ci_low": float(self.ci_low[i]),
                "ci_high": float(self.ci_high[i]),
                "significance": significance_stars(self.p_values[i]),
                "estimated": bool(self.estimated[i]),
                "identified": bool(self.identified[i]),
            })
        return {
            "coefficients": rows,
            "alpha": self.alpha,
            "n": self.n,
            "k": self.k,
            "sigma2": self.sigma2,
            "rss": self.rss,
            "rss_null": self.rss_null,
            "f_stat": self.f_stat,
            "f_p_value": self.f_p_value,
            "rmse": self.rmse,
            "nrmse": self.nrmse,
            "adjusted_pseudo_r2": self.adjusted_pseudo_r2,
            "covariance": self.covariance.tolist(),
        }

    def table(self) -> str:
        lines = [f"{'coefficient':<14}{'estimate':>12}{'t-stat':>10}{'p-value':>10}"]
        for i, name in enumerate(self.names):
            lines.append(f"{name:<14}{self.estimates[i]:>12.4g}{self.t_stats[i]:>10.3g}"
                         f"{self.p_values[i]:>10.3g} {significance_stars(self.p_values[i])}")
        lines.append(f"n={self.n} k={self.k} rmse={self.rmse:.4g} nrmse={self.nrmse:.4g} "
                     f"adj.pseudo-R2={self.adjusted_pseudo_r2:.4g} F={self.f_stat:.4g} (p={self.f_p_value:.3g})")
        return "\n".join(lines)


def infer(result, alpha: float = 0.1) -> InferenceReport:
    """Inference at an estimation result's coefficients.

    The Jacobian is taken at the equilibrium travel times of the result. The
    restricted model of the F-test sets every coefficient to zero.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    model = result.model()
    names = tuple(result.names)
    theta = np.asarray(result.theta, dtype=float)
    estimated = result.free.copy()
    for name in result.non_identifiable:
        estimated[names.index(name)] = False
    d = model.derivatives(theta, estimated)
    J, residual = d.jacobian, d.residual
    n, k = result.counts.n, int(estimated.sum())
    sigma2 = estimate_sigma2(residual, k)
    rss = float(residual @ residual)
    rss_null = model.objective(np.zeros_like(theta))

    cols = np.flatnonzero(estimated)
    identified = estimated.copy()
    cov_full = np.full((theta.size, theta.size), np.nan)
    if k:
        flags = _null_space_flags(J.T @ J) if np.linalg.cond(J.T @ J) > CONDITION_LIMIT else np.zeros(k, bool)
        identified[cols[flags]] = False
        keep = cols[~flags]
        if keep.size:
            sub = np.flatnonzero(~flags)
            cov = coefficient_covariance(J[:, sub], sigma2)
            cov_full[np.ix_(keep, keep)] = cov

    var = np.diag(cov_full)
    se = np.sqrt(np.where(var > 0, var, np.nan))
    dof = n - k
    t_stats = np.full(theta.size, np.nan)
    p_values = np.full(theta.size, np.nan)
    low = np.full(theta.size, np.nan)
    high = np.full(theta.size, np.nan)
    for i in np.flatnonzero(identified & (var > 0)):
        t_stats[i], p_values[i], _ = t_test(theta[i], 0.0, var[i], dof, alpha)
        low[i], high[i] = confidence_interval(theta[i], var[i], alpha, dof)

    if k and rss > 0:
        f_stat, f_p = f_test(rss_null, rss, 0, k, n)
    else:
        f_stat, f_p = math.nan, math.nan
    rmse, nrmse, adj = fit_indicators(residual, result.counts.values, k, rss_null) if rss_null > 0 else (
        math.sqrt(rss / n), math.nan, math.nan)
    return InferenceReport(names=names, estimates=theta.copy(), std_errors=se, t_stats=t_stats, p_values=p_values,
                           ci_low=low, ci_high=high, covariance=cov_full, estimated=estimated,
                           identified=identified, sigma2=sigma2, rss=rss, rss_null=rss_null, f_stat=f_stat,
                           f_p_value=f_p, rmse=rmse, nrmse=nrmse, adjusted_pseudo_r2=adj, n=n, k=k,
                           alpha=alpha)
