"""Fits and finite-size-scaling collapse for ensemble averages.

The fitters follow the scikit-learn estimator shape: hyper-parameters go to
the constructor, ``fit(X, y, sigma=None)`` learns ``slope_``/``intercept_``
and friends, ``predict`` evaluates the model, ``score`` is R^2.  Each has a
functional wrapper returning a plain :class:`FitResult`.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin

from .exceptions import CollapseError, ConfigError
from .stats import RunningMoments


@dataclass
class FitResult:
    slope: float
    intercept: float
    covariance: np.ndarray
    residual_norm: float
    window: tuple[float, float]
    n_points: int
    r2: float = float("nan")

    @property
    def slope_err(self) -> float:
        return float(math.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def intercept_err(self) -> float:
        return float(math.sqrt(max(self.covariance[1, 1], 0.0)))

    def to_dict(self) -> dict:
        return {"slope": self.slope, "slope_err": self.slope_err,
                "intercept": self.intercept, "intercept_err": self.intercept_err,
                "covariance": np.asarray(self.covariance).tolist(),
                "residual_norm": self.residual_norm, "window": list(self.window),
                "n_points": self.n_points, "r2": self.r2}


def _wls(x, y, sigma):
    """Straight-line least squares; weights 1/sigma when all sigma > 0."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.unique(x).size < 2:
        raise ConfigError("need at least two distinct abscissae")
    if sigma is not None and np.all(np.asarray(sigma) > 0):
        sigma = np.asarray(sigma, float)
        coef, cov = np.polyfit(x, y, 1, w=1.0 / sigma, cov="unscaled")
        resid = (y - np.polyval(coef, x)) / sigma
    else:
        coef = np.polyfit(x, y, 1)
        resid = y - np.polyval(coef, x)
        dof = max(x.size - 2, 1)
        a = np.vstack([x, np.ones_like(x)]).T
        cov = np.linalg.pinv(a.T @ a) * (resid @ resid) / dof
    ss_tot = ((y - y.mean()) ** 2).sum()
    ss_res = ((y - np.polyval(coef, x)) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return coef, np.asarray(cov), float(np.linalg.norm(resid)), float(r2)


class _LineFit(BaseEstimator, RegressorMixin):
    """Shared machinery: subclasses define the window and the abscissa map.

    With ``n_bootstrap > 0`` and per-point errors, the reported covariance
    comes from refitting resampled points instead of the WLS formula.
    """

    n_bootstrap = 0
    random_state = None
    _scale = 1.0  # fitted slope = _scale * coefficient of the transformed abscissa

    def _transform(self, X):
        return np.asarray(X, float)

    def _window(self, X, y):
        raise NotImplementedError

    def _min_points(self):
        return 3

    def fit(self, X, y, sigma=None):
        X = np.asarray(X, float).ravel()
        y = np.asarray(y, float).ravel()
        if X.shape != y.shape:
            raise ConfigError("X and y must have the same length")
        lo, hi = self._window(X, y)
        keep = (X >= lo) & (X <= hi)
        if np.unique(X[keep]).size < self._min_points():
            raise ConfigError(
                f"fit window [{lo:g}, {hi:g}] holds {np.unique(X[keep]).size} "
                f"distinct points, need {self._min_points()}")
        sig = None if sigma is None else np.asarray(sigma, float).ravel()[keep]
        x = self._transform(X[keep])
        coef, cov, rn, r2 = _wls(x, y[keep], sig)
        if self.n_bootstrap and sig is not None:
            # parametric resampling of the points within their error bars
            rng = np.random.default_rng(self.random_state)
            w = 1.0 / sig if np.all(sig > 0) else None
            draws = np.array([np.polyfit(x, y[keep] + sig * rng.standard_normal(sig.size), 1, w=w)
                              for _ in range(self.n_bootstrap)])
            cov = np.cov(draws.T)
        j = np.diag([self._scale, 1.0])
        self.slope_ = float(coef[0] * self._scale)
        self.intercept_ = float(coef[1])
        self.cov_ = j @ cov @ j
        self.residual_norm_ = rn
        self.window_ = (float(lo), float(hi))
        self.n_points_ = int(keep.sum())
        self.r2_ = r2
        return self

    def predict(self, X):
        return self.slope_ / self._scale * self._transform(np.asarray(X, float)) + self.intercept_

    @property
    def result_(self) -> FitResult:
        return FitResult(self.slope_, self.intercept_, self.cov_,
                         self.residual_norm_, self.window_, self.n_points_, self.r2_)


def chord_length(ell, L):
    """``log2[(L/pi) sin(pi ell / L)]``."""
    ell = np.asarray(ell, float)
    return np.log2(L / math.pi * np.sin(math.pi * ell / L))


class LogProfileFit(_LineFit):
    """``y(l) = (c/3) log2[(L/pi) sin(pi l / L)] + b``; ``slope_`` is ``c``.

    The default window keeps ``L/8 <= l <= 7L/8``.
    """

    _scale = 3.0

    def __init__(self, L: int, window=(0.125, 0.875), n_bootstrap: int = 0,
                 random_state=None):
        self.L = L
        self.window = window
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def _window(self, X, y):
        return self.window[0] * self.L, self.window[1] * self.L

    def _min_points(self):
        return 4

    def _transform(self, X):
        return chord_length(X, self.L)


class TimeGrowthFit(_LineFit):
    """``y(t) = (c/3) log2 t + b`` over ``t_min <= t <= t_sat / 4``.

    ``t_sat`` defaults to the first time the series reaches
    ``plateau_level`` of its plateau (mean over the final quarter).
    """

    _scale = 3.0

    def __init__(self, t_min: float = 4, t_sat: float | None = None,
                 plateau_level: float = 0.95, n_bootstrap: int = 0, random_state=None):
        self.t_min = t_min
        self.t_sat = t_sat
        self.plateau_level = plateau_level
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def _window(self, X, y):
        t_sat = self.t_sat if self.t_sat is not None else estimate_saturation(
            X, y, self.plateau_level)
        self.t_sat_ = float(t_sat)
        return self.t_min, t_sat / 4.0

    def _transform(self, X):
        return np.log2(X)


class AreaLawFit(_LineFit):
    """``y(l) = a l + b`` for ``l <= max_frac * L``; ``r2_`` scores linearity."""

    def __init__(self, L: int, max_frac: float = 0.25, n_bootstrap: int = 0,
                 random_state=None):
        self.L = L
        self.max_frac = max_frac
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def _window(self, X, y):
        return -np.inf, self.max_frac * self.L

    def _min_points(self):
        return 4


def estimate_saturation(t, y, level: float = 0.95) -> float:
    """First time the series reaches ``level`` times its final-quarter mean."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    order = np.argsort(t)
    t, y = t[order], y[order]
    plateau = y[t >= t[0] + 0.75 * (t[-1] - t[0])].mean()
    if plateau <= 0:
        return float(t[-1])
    hit = np.flatnonzero(y >= level * plateau)
    return float(t[hit[0]]) if hit.size else float(t[-1])


def fit_log_profile(ell, value, stderr=None, *, L: int, window=(0.125, 0.875),
                    n_bootstrap: int = 0, random_state=None) -> FitResult:
    est = LogProfileFit(L, window, n_bootstrap=n_bootstrap, random_state=random_state)
    return est.fit(ell, value, stderr).result_


def fit_time_growth(t, value, stderr=None, *, t_min=4, t_sat=None,
                    n_bootstrap: int = 0, random_state=None) -> FitResult:
    est = TimeGrowthFit(t_min, t_sat, n_bootstrap=n_bootstrap, random_state=random_state)
    return est.fit(t, value, stderr).result_


def fit_area_law(ell, value, stderr=None, *, L: int, max_frac=0.25,
                 n_bootstrap: int = 0, random_state=None) -> FitResult:
    est = AreaLawFit(L, max_frac, n_bootstrap=n_bootstrap, random_state=random_state)
    return est.fit(ell, value, stderr).result_


# -- data collapse ------------------------------------------------------------------


@dataclass
class CollapseResult:
    p_c: float
    nu: float
    quality: float
    grid_p_c: np.ndarray = field(repr=False, default=None)
    grid_nu: np.ndarray = field(repr=False, default=None)
    landscape: np.ndarray = field(repr=False, default=None)
    trace: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"p_c": self.p_c, "nu": self.nu, "quality": self.quality,
                "grid_p_c": np.asarray(self.grid_p_c).tolist(),
                "grid_nu": np.asarray(self.grid_nu).tolist(),
                "landscape": np.where(np.isfinite(self.landscape), self.landscape,
                                      None).tolist(),
                "trace": self.trace}


def collapse_quality(L, p, y, sigma, p_c, nu, y_exponent: float = 0.0) -> float:
    """Mean squared leave-one-size-out deviation from the master curve.

    Points of each size are compared with the piecewise-linear curve through
    every other size's points, wherever that curve is defined, in units of the
    combined stderr.  ``y`` is rescaled by ``L**-y_exponent`` first.  Returns
    ``inf`` if no two sizes overlap.
    """
    L = np.asarray(L, float)
    x = (np.asarray(p, float) - p_c) * L ** (1.0 / nu)
    scale = L ** (-y_exponent)
    y = np.asarray(y, float) * scale
    s = np.zeros_like(y) if sigma is None else np.asarray(sigma, float) * scale
    weighted = sigma is not None and np.all(s > 0)
    total = 0.0
    count = 0
    sizes = np.unique(L)
    curves = {}
    for size in sizes:
        m = L == size
        o = np.argsort(x[m])
        curves[size] = (x[m][o], y[m][o], s[m][o])
    for size in sizes:
        xi, yi, si = curves[size]
        for other in sizes:
            if other == size:
                continue
            xo, yo, so = curves[other]
            inside = (xi >= xo[0]) & (xi <= xo[-1])
            if not inside.any():
                continue
            f = np.interp(xi[inside], xo, yo)
            d2 = (yi[inside] - f) ** 2
            if weighted:
                d2 = d2 / (si[inside] ** 2 + np.interp(xi[inside], xo, so) ** 2)
            total += d2.sum()
            count += int(inside.sum())
    return total / count if count else math.inf


class DataCollapse(BaseEstimator):
    """Estimate ``(p_c, nu)`` so that ``y = f((p - p_c) L^{1/nu})``.

    Grid search over ``p_c_range x nu_range`` followed by Nelder-Mead from
    the best grid point.  ``fit(X, y, sigma)`` takes ``X`` as rows ``(L, p)``.
    """

    def __init__(self, p_c_range=(0.3, 0.7), nu_range=(0.5, 3.0), grid=(41, 41),
                 refine: bool = True, y_exponent: float = 0.0):
        self.p_c_range = p_c_range
        self.nu_range = nu_range
        self.grid = grid
        self.refine = refine
        self.y_exponent = y_exponent

    def fit(self, X, y, sigma=None):
        X = np.asarray(X, float)
        Ls, ps = X[:, 0], X[:, 1]
        sizes = np.unique(Ls)
        if sizes.size < 3:
            raise CollapseError("collapse needs at least three system sizes")
        for size in sizes:
            if np.unique(ps[Ls == size]).size < 5:
                raise CollapseError(f"size {size:g} has fewer than five p values")

        def q(pc, nu):
            if nu <= 0:
                return math.inf
            return collapse_quality(Ls, ps, y, sigma, pc, nu, self.y_exponent)

        gp = np.linspace(*self.p_c_range, self.grid[0])
        gn = np.linspace(*self.nu_range, self.grid[1])
        land = np.array([[q(a, b) for b in gn] for a in gp])
        if not np.isfinite(land).any():
            raise CollapseError("rescaled curves never overlap on the search grid")
        i, j = np.unravel_index(np.nanargmin(np.where(np.isfinite(land), land, np.nan)),
                                land.shape)
        best = (float(gp[i]), float(gn[j]), float(land[i, j]))
        trace = [{"stage": "grid", "p_c": best[0], "nu": best[1], "quality": best[2]}]
        if self.refine:
            res = minimize(lambda v: q(*v), x0=np.array(best[:2]), method="Nelder-Mead",
                           options={"xatol": 1e-4, "fatol": 1e-10, "maxiter": 2000})
            if np.isfinite(res.fun) and res.fun <= best[2]:
                best = (float(res.x[0]), float(res.x[1]), float(res.fun))
            trace.append({"stage": "nelder-mead", "p_c": best[0], "nu": best[1],
                          "quality": best[2], "n_eval": int(res.nfev)})
        self.p_c_, self.nu_, self.quality_ = best
        self.landscape_ = land
        self.result_ = CollapseResult(best[0], best[1], best[2], gp, gn, land, trace)
        return self

    def transform(self, X):
        """Rescaled abscissa ``(p - p_c) L^{1/nu}`` for rows ``(L, p)``."""
        X = np.asarray(X, float)
        return (X[:, 1] - self.p_c_) * X[:, 0] ** (1.0 / self.nu_)


# -- datasets -----------------------------------------------------------------------

CSV_COLUMNS = ("L", "p", "observable", "x", "mean", "stderr", "n_traj")
CSV_VERSION = 1


@dataclass
class SweepDataset:
    """Aggregated rows ``(L, p, observable, x, mean, stderr, n_traj)``.

    ``x`` is the profile coordinate (block length or time) or NaN for
    scalar observables.  ``metadata`` is written as ``# key: value`` lines.
    """

    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            k = self._key(r)
            if k in seen:
                raise ConfigError(f"duplicate row {k}")
            seen.add(k)

    @staticmethod
    def _key(r):
        x = r.get("x", float("nan"))
        return (int(r["L"]), float(r["p"]), r["observable"],
                None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x))

    def extend(self, rows):
        keys = {self._key(r) for r in self.rows}
        for r in rows:
            k = self._key(r)
            if k in keys:
                raise ConfigError(f"duplicate row {k}")
            keys.add(k)
            self.rows.append(r)

    def select(self, observable: str, L=None, p=None) -> list[dict]:
        out = [r for r in self.rows if r["observable"] == observable
               and (L is None or int(r["L"]) == L)
               and (p is None or abs(float(r["p"]) - p) < 1e-12)]
        return sorted(out, key=lambda r: (int(r["L"]), float(r["p"]),
                                          float(r.get("x", float("nan")))))

    def arrays(self, observable: str, **kw):
        rows = self.select(observable, **kw)
        cols = {c: np.array([float(r[c]) for r in rows]) for c in
                ("L", "p", "x", "mean", "stderr", "n_traj")}
        return cols

    def sizes(self, observable=None):
        return sorted({int(r["L"]) for r in self.rows
                       if observable is None or r["observable"] == observable})

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# rbclab-sweep-csv: {CSV_VERSION}\n")
            for k, v in sorted(self.metadata.items()):
                fh.write(f"# {k}: {v}\n")
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r.get(c, "") for c in CSV_COLUMNS})

    @classmethod
    def from_csv(cls, path) -> "SweepDataset":
        meta = {}
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            elif line.strip():
                body.append(line)
        rows = []
        for r in csv.DictReader(body):
            rows.append({"L": int(r["L"]), "p": float(r["p"]),
                         "observable": r["observable"],
                         "x": float(r["x"]) if r["x"] not in ("", "nan") else float("nan"),
                         "mean": float(r["mean"]), "stderr": float(r["stderr"]),
                         "n_traj": int(r["n_traj"])})
        meta.pop("rbclab-sweep-csv", None)
        return cls(rows, meta)


def ensemble_rows(params, result) -> list[dict]:
    """SweepDataset rows for one :class:`~rbclab.circuit.EnsembleResult`."""
    rows = []
    L, p = params.lattice.L, params.p
    reqs = {r.name: r for r in params.observables}
    for name, mean in result.mean.items():
        mean = np.atleast_1d(mean)
        err = np.atleast_1d(result.stderr[name])
        req = reqs.get(name)
        times = result.times[name]
        if name.endswith("_profile"):
            ells = (np.asarray(req.region) if req is not None and req.region
                    else np.arange(1, L))
            # profiles at several times are stored flattened time-major
            mean = mean.reshape(len(times), -1)[-1]
            err = err.reshape(len(times), -1)[-1]
            xs = ells
        elif len(times) > 1:
            xs = np.asarray(times, float)
        else:
            xs = [float("nan")]
        for x, m, e in zip(xs, mean, err):
            rows.append({"L": L, "p": p, "observable": name, "x": float(x),
                         "mean": float(m), "stderr": float(e), "n_traj": result.n_traj})
    return rows


def aggregate(records, params=None) -> list[dict]:
    """Mean/stderr rows from a stream of trajectory records.

    ``records`` yields either records (with ``params`` given) or
    ``(params, record)`` pairs.  Records are grouped by ``(L, p)``; a group
    mixing different circuit parameters raises :class:`ConfigError`.
    """
    groups: dict = {}
    digests: dict = {}
    moments: dict = defaultdict(dict)
    times: dict = {}
    counts: dict = defaultdict(int)
    for item in records:
        par, rec = (params, item) if params is not None else item
        key = (par.lattice.L, par.p)
        dg = par.digest()
        if digests.setdefault(key, dg) != dg:
            raise ConfigError(f"records for L={key[0]}, p={key[1]} mix different parameters")
        groups[key] = par
        counts[key] += 1
        for name, v in rec.values.items():
            moments[key].setdefault(name, RunningMoments()).push(v)
        times[key] = rec.times
    rows = []
    for key, par in groups.items():
        res = _Agg(counts[key], {k: m.mean for k, m in moments[key].items()},
                   {k: m.stderr for k, m in moments[key].items()}, times[key])
        rows.extend(ensemble_rows(par, res))
    return rows


@dataclass
class _Agg:
    n_traj: int
    mean: dict
    stderr: dict
    times: dict


def crossing_points(dataset: SweepDataset, observable: str, scale_exponent: float = 0.0):
    """p where curves of consecutive sizes cross (linear interpolation).

    Curves are ``mean * L**-scale_exponent`` versus p.  Returns a list of
    ``(L1, L2, p_cross)``; pairs that do not cross give NaN.
    """
    sizes = dataset.sizes(observable)
    out = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        ca = dataset.arrays(observable, L=a)
        cb = dataset.arrays(observable, L=b)
        ps = np.intersect1d(np.round(ca["p"], 12), np.round(cb["p"], 12))
        if ps.size < 2:
            out.append((a, b, float("nan")))
            continue
        ya = np.interp(ps, ca["p"], ca["mean"]) * a ** -scale_exponent
        yb = np.interp(ps, cb["p"], cb["mean"]) * b ** -scale_exponent
        d = yb - ya
        hit = np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)
        if hit.size == 0:
            zero = np.flatnonzero(d == 0)
            out.append((a, b, float(ps[zero[0]]) if zero.size else float("nan")))
            continue
        k = hit[0]
        pc = ps[k] - d[k] * (ps[k + 1] - ps[k]) / (d[k + 1] - d[k])
        out.append((a, b, float(pc)))
    return out


def collapse(dataset: SweepDataset, observable: str, p_c_range=(0.3, 0.7),
             nu_range=(0.5, 3.0), grid=(41, 41), y_exponent: float = 0.0,
             p_window=None) -> CollapseResult:
    """Collapse ``observable`` rows of ``dataset``; see :class:`DataCollapse`."""
    rows = dataset.select(observable)
    if p_window is not None:
        rows = [r for r in rows if p_window[0] - 1e-12 <= r["p"] <= p_window[1] + 1e-12]
    X = np.array([[r["L"], r["p"]] for r in rows], float)
    y = np.array([r["mean"] for r in rows])
    s = np.array([r["stderr"] for r in rows])
    est = DataCollapse(p_c_range, nu_range, grid, y_exponent=y_exponent)
    return est.fit(X, y, s).result_
