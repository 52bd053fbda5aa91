"""Event-study models.

Piecewise-linear treatment/control trajectories with a level shift at the
anchor week:

    y ~ 1 + A + t + hinge(t) + jump(t) + A*t + A*hinge + A*jump + controls

with a random intercept per socialization set.  hinge(t) = t * 1(t > 0)
bends the slope after the anchor; jump(t) = 1(t > 0) shifts the level.

The mixed model is fit by REML with the variance ratio lam = tau^2 /
sigma^2 profiled out: for a single grouping factor the inverse covariance
has a rank-one correction per group, so each candidate lam costs only the
per-group sufficient statistics.  lam is minimized on a log grid refined
by golden-section search, with the lam = 0 boundary (plain OLS) always
considered.  A cluster-robust OLS path is available as a check.

Reported effects are linear contrasts of the interaction terms:

    value shift  = (t+ - t-) b_At + hinge(t+) b_Ah + b_Aj   (t+- = +-8)
    slope change = b_Ah
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .errors import ModelError
from .panel import fitting_table, split_panel, panel_metrics, PeriodSplit

BASE_TERMS = ("intercept", "A", "t", "hinge", "jump", "A_t", "A_hinge", "A_jump")
DEFAULT_CONTROLS = ("log1p_size", "anchor_week")
T_PRE = -8
T_POST = 8
DEFAULT_ALPHA = 0.01

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_LOG_LAM_LO, _LOG_LAM_HI = -12.0, 8.0
_MAX_ITER = 200
_TOL = 1e-8


def hinge(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > 0, t, 0.0)


def jump(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return (t > 0).astype(np.float64)


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    z: float
    p: float


@dataclass
class FitResult:
    names: tuple[str, ...]
    beta: np.ndarray
    cov: np.ndarray
    sigma2: float
    tau2: float
    lam: float
    n_obs: int
    n_groups: int
    method: str
    criterion: float
    control_means: dict[str, float]

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def se(self, name: str) -> float:
        i = self.names.index(name)
        return float(np.sqrt(self.cov[i, i]))

    def contrast(self, weights: Mapping[str, float]) -> Estimate:
        c = np.zeros(len(self.names))
        for name, w in weights.items():
            c[self.names.index(name)] = w
        est = float(c @ self.beta)
        var = float(c @ self.cov @ c)
        se = math.sqrt(max(var, 0.0))
        if se == 0.0:
            return Estimate(est, 0.0, float("nan"), float("nan"))
        z = est / se
        return Estimate(est, se, z, 2.0 * float(stats.norm.sf(abs(z))))

    def predict(self, a: float, t: float) -> float:
        """Mean response at (A, t) with controls held at fitting-table means."""
        h = t if t > 0 else 0.0
        j = 1.0 if t > 0 else 0.0
        row = {
            "intercept": 1.0,
            "A": a,
            "t": t,
            "hinge": h,
            "jump": j,
            "A_t": a * t,
            "A_hinge": a * h,
            "A_jump": a * j,
        }
        x = np.array(
            [row.get(n, self.control_means.get(n, 0.0)) for n in self.names]
        )
        return float(x @ self.beta)


def build_design(
    table: pd.DataFrame, controls: Sequence[str] = DEFAULT_CONTROLS
) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple[str, ...], dict[str, float]]:
    """Design matrix, response, group codes, names, control means."""
    t = table["t"].to_numpy(dtype=np.float64)
    a = table["treated"].to_numpy(dtype=np.float64)
    h, j = hinge(t), jump(t)
    cols = [np.ones(len(t)), a, t, h, j, a * t, a * h, a * j]
    names = list(BASE_TERMS)
    means: dict[str, float] = {}
    for c in controls:
        v = table[c].to_numpy(dtype=np.float64)
        cols.append(v)
        names.append(c)
        means[c] = float(v.mean())
    X = np.column_stack(cols)
    y = table["y"].to_numpy(dtype=np.float64)
    groups = pd.factorize(table["set_id"], sort=True)[0]
    return X, y, groups, tuple(names), means


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    _, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = d[0] * max(X.shape) * np.finfo(np.float64).eps if d.size else 0.0
    rank = int((d > tol).sum())
    if rank < X.shape[1]:
        bad = [names[i] for i in piv[rank:]]
        raise ModelError(f"design is rank deficient; dependent columns: {bad}")


@dataclass
class _Suffstats:
    XtX: np.ndarray
    Xty: np.ndarray
    yty: float
    S: np.ndarray  # (G, p) per-group column sums of X
    tg: np.ndarray  # (G,) per-group sums of y
    ng: np.ndarray  # (G,) group sizes
    n: int
    p: int

    @classmethod
    def build(cls, X: np.ndarray, y: np.ndarray, groups: np.ndarray) -> "_Suffstats":
        n, p = X.shape
        G = int(groups.max()) + 1 if n else 0
        S = np.zeros((G, p))
        np.add.at(S, groups, X)
        tg = np.bincount(groups, weights=y, minlength=G)
        ng = np.bincount(groups, minlength=G).astype(np.float64)
        return cls(X.T @ X, X.T @ y, float(y @ y), S, tg, ng, n, p)

    def solve(self, lam: float) -> tuple[np.ndarray, np.ndarray, float, float]:
        """GLS normal equations at variance ratio lam.

        Returns (beta, M = X'V^-1 X, quad = r'V^-1 r, logdet M).
        """
        c = lam / (1.0 + lam * self.ng)
        M = self.XtX - self.S.T @ (c[:, None] * self.S)
        b = self.Xty - self.S.T @ (c * self.tg)
        try:
            cho = linalg.cho_factor(M)
        except linalg.LinAlgError as exc:
            raise ModelError(f"normal equations not positive definite: {exc}") from exc
        beta = linalg.cho_solve(cho, b)
        quad = self.yty - float((c * self.tg) @ self.tg) - float(beta @ b)
        logdet = 2.0 * float(np.log(np.diag(cho[0])).sum())
        return beta, M, quad, logdet

    def criterion(self, lam: float) -> float:
        """-2 restricted log-likelihood up to an additive constant."""
        _, _, quad, logdet = self.solve(lam)
        dof = self.n - self.p
        if quad <= 0.0:
            raise ModelError("zero residual variance in REML profile")
        sigma2 = quad / dof
        return dof * math.log(sigma2) + float(np.log1p(lam * self.ng).sum()) + logdet


def _profile_lambda(ss: _Suffstats) -> float:
    """Minimize the REML criterion over log lam; 0 competes as a boundary."""
    grid = np.linspace(_LOG_LAM_LO, _LOG_LAM_HI, 41)
    vals = [ss.criterion(math.exp(u)) for u in grid]
    k = int(np.argmin(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]

    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = ss.criterion(math.exp(x1))
    f2 = ss.criterion(math.exp(x2))
    for _ in range(_MAX_ITER):
        if b - a < _TOL:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = ss.criterion(math.exp(x1))
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = ss.criterion(math.exp(x2))
    u_best = x1 if f1 <= f2 else x2
    best = min(f1, f2)
    if ss.criterion(0.0) <= best:
        return 0.0
    return math.exp(u_best)


def fit_mixed(
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    names: Sequence[str],
    method: str = "reml",
    control_means: Mapping[str, float] | None = None,
) -> FitResult:
    """Random-intercept fit (REML) or cluster-robust OLS on the same design."""
    if method not in ("reml", "ols_cluster"):
        raise ValueError(f"unknown method {method!r}")
    n, p = X.shape
    if n <= p:
        raise ModelError(f"too few rows ({n}) for {p} parameters")
    _check_rank(X, names)
    ss = _Suffstats.build(X, y, groups)
    G = len(ss.ng)

    if method == "reml":
        lam = _profile_lambda(ss)
        beta, M, quad, _ = ss.solve(lam)
        if quad <= 0.0:
            raise ModelError("zero residual variance")
        sigma2 = quad / (n - p)
        cov = sigma2 * linalg.inv(M)
        crit = ss.criterion(lam)
        return FitResult(
            names=tuple(names),
            beta=beta,
            cov=cov,
            sigma2=sigma2,
            tau2=lam * sigma2,
            lam=lam,
            n_obs=n,
            n_groups=G,
            method=method,
            criterion=crit,
            control_means=dict(control_means or {}),
        )

    beta, M, quad, _ = ss.solve(0.0)
    if quad <= 0.0:
        raise ModelError("zero residual variance")
    resid = y - X @ beta
    U = np.zeros((G, p))
    np.add.at(U, groups, X * resid[:, None])
    meat = U.T @ U
    bread = linalg.inv(M)
    if G > 1:
        cr1 = (G / (G - 1.0)) * ((n - 1.0) / (n - p))
    else:
        cr1 = 1.0
    cov = cr1 * bread @ meat @ bread
    return FitResult(
        names=tuple(names),
        beta=beta,
        cov=cov,
        sigma2=quad / (n - p),
        tau2=0.0,
        lam=0.0,
        n_obs=n,
        n_groups=G,
        method=method,
        criterion=float("nan"),
        control_means=dict(control_means or {}),
    )


def value_did(fit: FitResult, t_pre: int = T_PRE, t_post: int = T_POST) -> Estimate:
    """Difference-of-differences of fitted means between t_post and t_pre."""
    w = {
        "A_t": float(t_post - t_pre),
        "A_hinge": float(max(t_post, 0) - max(t_pre, 0)),
        "A_jump": float((1 if t_post > 0 else 0) - (1 if t_pre > 0 else 0)),
    }
    return fit.contrast(w)


def slope_did(fit: FitResult) -> Estimate:
    """Treated-vs-control change in post-anchor slope."""
    return fit.contrast({"A_hinge": 1.0})


def correct_significance(
    pvalues: Sequence[float], alpha: float = DEFAULT_ALPHA, family_size: int | None = None
) -> np.ndarray:
    """Bonferroni: significant iff p < alpha / family size (strict)."""
    p = np.asarray(pvalues, dtype=np.float64)
    m = family_size if family_size is not None else len(p)
    if m <= 0:
        raise ValueError("family size must be positive")
    return p < (alpha / m)


def fit_metric(
    panel: pd.DataFrame,
    metric: str,
    method: str = "reml",
    controls: Sequence[str] = DEFAULT_CONTROLS,
) -> tuple[FitResult, Estimate, Estimate]:
    """One metric's fit plus its value and slope contrasts."""
    table = fitting_table(panel, metric)
    X, y, groups, names, means = build_design(table, controls)
    fit = fit_mixed(X, y, groups, names, method=method, control_means=means)
    return fit, value_did(fit), slope_did(fit)


def fit_all_metrics(
    panel: pd.DataFrame,
    metrics: Sequence[str] | None = None,
    method: str = "reml",
    controls: Sequence[str] = DEFAULT_CONTROLS,
    alpha: float = DEFAULT_ALPHA,
    family_size: int | None = None,
) -> pd.DataFrame:
    """Fit every metric; Bonferroni over the whole value+slope family."""
    wanted = list(metrics) if metrics is not None else panel_metrics(panel)
    rows = []
    for metric in wanted:
        fit, vdid, sdid = fit_metric(panel, metric, method=method, controls=controls)
        rows.append(
            {
                "metric": metric,
                "n_obs": fit.n_obs,
                "n_sets": fit.n_groups,
                "lam": fit.lam,
                "sigma2": fit.sigma2,
                "tau2": fit.tau2,
                "value_did": vdid.value,
                "value_se": vdid.se,
                "value_z": vdid.z,
                "value_p": vdid.p,
                "slope_did": sdid.value,
                "slope_se": sdid.se,
                "slope_z": sdid.z,
                "slope_p": sdid.p,
            }
        )
    out = pd.DataFrame(rows)
    if len(out):
        m = family_size if family_size is not None else 2 * len(out)
        out["family_size"] = m
        out["value_sig"] = correct_significance(out["value_p"], alpha, m)
        out["slope_sig"] = correct_significance(out["slope_p"], alpha, m)
    return out


def fit_period_split(
    panel: pd.DataFrame,
    split: PeriodSplit,
    metrics: Sequence[str] | None = None,
    method: str = "reml",
    controls: Sequence[str] = DEFAULT_CONTROLS,
    alpha: float = DEFAULT_ALPHA,
) -> dict[str, pd.DataFrame]:
    """Separate fits on anchors before and after the cutoff."""
    parts = split_panel(panel, split)
    out: dict[str, pd.DataFrame] = {}
    for period, sub in parts.items():
        if len(sub) == 0:
            raise ModelError(f"no rows in {period!r} period")
        out[period] = fit_all_metrics(
            sub, metrics=metrics, method=method, controls=controls, alpha=alpha
        )
        out[period]["period"] = period
    return out


def fit_heterogeneous(
    panel: pd.DataFrame,
    metric: str,
    attribute: str,
    values: Mapping[str, float],
    method: str = "reml",
    controls: Sequence[str] = DEFAULT_CONTROLS,
) -> tuple[dict, dict] | tuple[None, dict]:
    """Attribute-moderated trajectories among treated sets only.

    The attribute interacts with the time terms; the reported contrast is
    the value shift per a standard attribute difference (1 for binary,
    interquartile range in standard deviations for continuous).
    """
    table = fitting_table(panel[panel["treated"]], metric)
    v_raw = table["ego"].map(values)
    n_missing = int(v_raw.isna().sum())
    table = table[v_raw.notna()].copy()
    if len(table) == 0:
        raise ModelError(f"no treated rows with attribute {attribute!r}")
    v = table["ego"].map(values).to_numpy(dtype=np.float64)

    uniq = np.unique(v)
    diag = {"attribute": attribute, "metric": metric, "dropped_missing": n_missing}
    if len(uniq) < 2:
        diag["skipped"] = "attribute is constant"
        return None, diag
    binary = set(uniq) <= {0.0, 1.0}
    if binary:
        delta = 1.0
        v_model = v
    else:
        sd = v.std()
        delta = float((np.percentile(v, 75) - np.percentile(v, 25)) / sd)
        v_model = (v - v.mean()) / sd

    t = table["t"].to_numpy(dtype=np.float64)
    h, j = hinge(t), jump(t)
    cols = [np.ones(len(t)), t, h, j, v_model, v_model * t, v_model * h, v_model * j]
    names = ["intercept", "t", "hinge", "jump", "v", "v_t", "v_hinge", "v_jump"]
    means: dict[str, float] = {}
    for c in controls:
        arr = table[c].to_numpy(dtype=np.float64)
        cols.append(arr)
        names.append(c)
        means[c] = float(arr.mean())
    X = np.column_stack(cols)
    y = table["y"].to_numpy(dtype=np.float64)
    groups = pd.factorize(table["set_id"], sort=True)[0]
    fit = fit_mixed(X, y, groups, names, method=method, control_means=means)

    w = {
        "v_t": delta * float(T_POST - T_PRE),
        "v_hinge": delta * float(T_POST),
        "v_jump": delta * 1.0,
    }
    est = fit.contrast(w)
    row = {
        "metric": metric,
        "attribute": attribute,
        "binary": binary,
        "delta": delta,
        "value_did": est.value,
        "value_se": est.se,
        "value_z": est.z,
        "value_p": est.p,
        "n_obs": fit.n_obs,
        "n_sets": fit.n_groups,
        "lam": fit.lam,
    }
    return row, diag


def trajectories(fit: FitResult, t_range: tuple[int, int] = (-16, 16)) -> pd.DataFrame:
    """Fitted mean curves for both arms, controls at table means."""
    ts = list(range(t_range[0], t_range[1] + 1))
    return pd.DataFrame(
        {
            "t": ts,
            "control": [fit.predict(0.0, t) for t in ts],
            "treated": [fit.predict(1.0, t) for t in ts],
        }
    )
