"""Log-log OLS with heteroskedasticity-consistent standard errors."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .tdist import t_sf_two_sided

RANK_RTOL = 1e-10
STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))
STAR_LEGEND = "* p ≤ 0.05, ** p ≤ 0.01, *** p ≤ 0.001"
CONSTANT = "Constant"


class EstimationError(ValueError):
    pass


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "ln"  # ln | ln1p | identity
    epsilon_floor: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ln", "ln1p", "identity"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if self.epsilon_floor < 0:
            raise ValueError("epsilon_floor must be non-negative")
        if self.epsilon_floor and self.kind != "ln":
            raise ValueError("epsilon_floor only applies to the ln transform")


@dataclass
class ObservationTable:
    """Regression panel: one row per company, named numeric columns."""

    company_ids: list[str]
    columns: dict[str, np.ndarray]
    log_columns: frozenset = frozenset()
    true_beta: dict | None = None

    def __post_init__(self):
        if len(set(self.company_ids)) != len(self.company_ids):
            raise ValueError("company ids must be unique")
        n = len(self.company_ids)
        cols = {}
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"column {name!r} has {arr.shape[0]} rows, expected {n}")
            cols[name] = arr
        self.columns = cols

    @property
    def n(self) -> int:
        return len(self.company_ids)

    @classmethod
    def from_rows(cls, rows: Sequence[Mapping], id_field: str = "company") -> "ObservationTable":
        ids = [str(r[id_field]) for r in rows]
        names = [k for k in rows[0] if k != id_field] if rows else []
        return cls(ids, {k: np.array([float(r[k]) for r in rows]) for k in names})

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"column {name!r} not found")
        return self.columns[name]

    def take(self, order: Sequence[int]) -> "ObservationTable":
        order = list(order)
        return replace(
            self,
            company_ids=[self.company_ids[i] for i in order],
            columns={k: v[order] for k, v in self.columns.items()},
        )

    def with_transformed(self, name: str, new_name: str, spec: TransformSpec) -> "ObservationTable":
        values = transform_column(self.column(name), spec, row_labels=self.company_ids)
        cols = dict(self.columns)
        cols[new_name] = values
        logs = set(self.log_columns)
        if spec.kind == "ln":
            logs.add(new_name)
        return replace(self, columns=cols, log_columns=frozenset(logs))


def transform_column(values, spec: TransformSpec, row_labels: Sequence[str] | None = None) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    labels = row_labels if row_labels is not None else [str(i) for i in range(len(x))]
    bad_nan = np.flatnonzero(np.isnan(x))
    if bad_nan.size:
        raise TransformError(f"missing values in rows {[labels[i] for i in bad_nan]}")
    if spec.kind == "identity":
        return x.copy()
    if spec.kind == "ln1p":
        bad = np.flatnonzero(x <= -1)
        if bad.size:
            raise TransformError(f"ln1p needs value > -1; offending rows: {[labels[i] for i in bad]}")
        return np.log1p(x)
    if spec.epsilon_floor > 0:
        return np.log(np.maximum(x, spec.epsilon_floor))
    bad = np.flatnonzero(x <= 0)
    if bad.size:
        raise TransformError(f"ln needs value > 0; offending rows: {[labels[i] for i in bad]}")
    return np.log(x)


@dataclass(frozen=True)
class ModelSpec:
    dependent: str
    regressors: tuple[str, ...]
    intercept: bool = True
    se_flavor: str = "HC1"

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if not self.regressors:
            raise ValueError("at least one regressor required")
        if self.dependent in self.regressors:
            raise ValueError("dependent variable cannot also be a regressor")
        if self.se_flavor.upper() not in ("HC0", "HC1"):
            raise ValueError(f"unknown se flavor {self.se_flavor!r}")
        object.__setattr__(self, "se_flavor", self.se_flavor.upper())

    @property
    def names(self) -> tuple[str, ...]:
        return self.regressors + ((CONSTANT,) if self.intercept else ())


@dataclass
class FitResult:
    names: tuple[str, ...]
    beta: np.ndarray
    residuals: np.ndarray
    robust_cov: np.ndarray
    se: np.ndarray
    n: int
    k: int
    se_flavor: str
    log_log: bool = False
    dependent: str = ""
    t: np.ndarray = field(default=None)
    p: np.ndarray = field(default=None)
    stars: list[str] = field(default=None)

    @property
    def df(self) -> int:
        return self.n - self.k

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def elasticity(self, name: str, pct_change: float = 1.0) -> float:
        return elasticity_report(self.coef(name), pct_change, log_log=self.log_log)

    def to_dict(self) -> dict:
        return {
            "dependent": self.dependent,
            "names": list(self.names),
            "beta": [float(b) for b in self.beta],
            "se": [float(s) for s in self.se],
            "t": [float(v) for v in self.t] if self.t is not None else None,
            "p": [float(v) for v in self.p] if self.p is not None else None,
            "stars": list(self.stars) if self.stars is not None else None,
            "robust_cov": [[float(v) for v in row] for row in self.robust_cov],
            "n": self.n,
            "k": self.k,
            "df": self.df,
            "se_flavor": self.se_flavor,
            "log_log": self.log_log,
        }


def design_matrix(table: ObservationTable, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    try:
        y = table.column(spec.dependent)
    except KeyError:
        raise EstimationError(f"dependent column not found: {spec.dependent!r}") from None
    cols = []
    for name in spec.regressors:
        try:
            cols.append(table.column(name))
        except KeyError:
            raise EstimationError(f"regressor column not found: {name!r}") from None
    if spec.intercept:
        cols.append(np.ones(table.n))
    return np.column_stack(cols), y


def _collinear_groups(X: np.ndarray, names: Sequence[str], keep: np.ndarray, drop: np.ndarray) -> list[list[str]]:
    groups = []
    for j in drop:
        coef, *_ = np.linalg.lstsq(X[:, keep], X[:, j], rcond=None)
        scale = np.abs(X[:, keep]).max(axis=0) * np.abs(coef)
        partners = [names[keep[i]] for i in np.flatnonzero(scale > 1e-8 * max(np.abs(X[:, j]).max(), 1e-300))]
        groups.append(sorted(partners) + [names[j]])
    return groups


def _pivoted_qr(X: np.ndarray, names: Sequence[str]):
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        raise EstimationError("design matrix is zero")
    rank = int(np.sum(diag > RANK_RTOL * diag[0]))
    if rank < X.shape[1]:
        groups = _collinear_groups(X, names, piv[:rank], piv[rank:])
        desc = "; ".join(", ".join(g) for g in groups)
        raise EstimationError(f"rank deficient design (rank {rank} < {X.shape[1]}): collinear columns [{desc}]")
    return Q, R, piv


def _bread(R: np.ndarray, piv: np.ndarray) -> np.ndarray:
    """(X'X)^-1 from the pivoted R factor."""
    k = R.shape[0]
    Rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    inv_p = Rinv @ Rinv.T
    out = np.empty_like(inv_p)
    out[np.ix_(piv, piv)] = inv_p
    return out


def robust_covariance(X: np.ndarray, residuals: np.ndarray, flavor: str = "HC1",
                      names: Sequence[str] | None = None) -> np.ndarray:
    """Sandwich covariance (X'X)^-1 X' diag(e^2) X (X'X)^-1, optionally scaled by n/(n-k)."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    n, k = X.shape
    names = names or [f"x{i}" for i in range(k)]
    _, R, piv = _pivoted_qr(X, names)
    bread = _bread(R, piv)
    Xe = X * e[:, None]
    cov = bread @ (Xe.T @ Xe) @ bread
    flavor = flavor.upper()
    if flavor == "HC1":
        if n <= k:
            raise EstimationError("HC1 needs n > k")
        cov = cov * (n / (n - k))
    elif flavor != "HC0":
        raise ValueError(f"unknown flavor {flavor!r}")
    return (cov + cov.T) / 2


def classical_covariance(X: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Non-robust s^2 (X'X)^-1; used to contrast against the sandwich estimate."""
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    _, R, piv = _pivoted_qr(X, [f"x{i}" for i in range(k)])
    s2 = float(residuals @ residuals) / (n - k)
    return s2 * _bread(R, piv)


def fit_ols(table: ObservationTable, spec: ModelSpec) -> FitResult:
    """Least squares via pivoted QR, robust SEs, then t, p and stars.

    t, p and stars stay ``None`` when some standard error is exactly zero.
    """
    X, y = design_matrix(table, spec)
    n, k = X.shape
    if n <= k:
        raise EstimationError(f"need more observations than parameters (n={n}, k={k})")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise EstimationError("non-finite values in design or dependent column")
    names = spec.names
    Q, R, piv = _pivoted_qr(X, names)
    beta = np.empty(k)
    beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    cov = robust_covariance(X, resid, spec.se_flavor, names)
    log_log = spec.dependent in table.log_columns and all(r in table.log_columns for r in spec.regressors)
    fit = FitResult(
        names=names, beta=beta, residuals=resid, robust_cov=cov,
        se=np.sqrt(np.maximum(np.diag(cov), 0.0)), n=n, k=k, se_flavor=spec.se_flavor,
        log_log=log_log, dependent=spec.dependent,
    )
    if np.any(fit.se <= 0):
        # exact fit: estimates stand, but t/p are undefined
        return fit
    return t_and_p(fit)


def significance_stars(p: float) -> str:
    for level, mark in STAR_LEVELS:
        if p <= level:
            return mark
    return ""


def t_and_p(fit: FitResult) -> FitResult:
    if fit.df < 1:
        raise EstimationError("need at least one residual degree of freedom")
    if np.any(fit.se <= 0):
        zero = [fit.names[i] for i in np.flatnonzero(fit.se <= 0)]
        raise EstimationError(f"zero standard error for {zero}")
    t = fit.beta / fit.se
    p = np.array([t_sf_two_sided(float(v), fit.df) for v in t])
    return replace(fit, t=t, p=p, stars=[significance_stars(v) for v in p])


def elasticity_report(beta: float, pct_change: float, *, log_log: bool = True) -> float:
    """Percent change in the dependent for a ``pct_change`` percent move in a regressor."""
    if not log_log:
        raise EstimationError("elasticity reading requires a log-log specification")
    return beta * pct_change


def synth_generate(seed: int, n: int, beta: Sequence[float], noise: float | str = 0.0,
                   sigma: float = 1.0) -> ObservationTable:
    """Synthetic panel with regressors x1..xk, dependent y and known beta.

    ``beta`` lists slopes then the intercept (same order as fit output).
    ``noise`` is either a homoskedastic standard deviation or ``"x2"`` for
    errors whose variance grows with the square of the first regressor.
    """
    beta = np.asarray(beta, dtype=float)
    k = beta.size
    if n <= k:
        raise ValueError("need n > len(beta)")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.5, 10.0, size=(n, k - 1))
    y = X @ beta[:-1] + beta[-1]
    if noise == "x2":
        y = y + rng.normal(0.0, 1.0, n) * sigma * X[:, 0]
    elif isinstance(noise, str):
        raise ValueError(f"unknown noise rule {noise!r}")
    elif noise:
        y = y + rng.normal(0.0, float(noise), n)
    cols = {f"x{i + 1}": X[:, i] for i in range(k - 1)}
    cols["y"] = y
    truth = {f"x{i + 1}": float(beta[i]) for i in range(k - 1)}
    truth[CONSTANT] = float(beta[-1])
    return ObservationTable([f"obs{i:04d}" for i in range(n)], cols, true_beta=truth)

