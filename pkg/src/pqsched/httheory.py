"""Diffusion-limit machinery: reflected workload, optimal allocation, cost laws.

Near rho = 1 the scaled workload of any work-conserving discipline converges
to a reflected Brownian motion whose drift/variance depend only on the
arrival and service primitives -- not on the scheduling policy and not on the
classifier.  The instantaneous best a predicted-class scheduler can do with
workload w is the cheapest split of w across predicted classes:

    minimize  sum_l lambda~_l C~_l(x_l / rho~_l)
    s.t.      sum_l x_l = w,   x >= 0

whose stationarity conditions equalize mu~_l C~'_l(x_l / rho~_l) across
classes.  For quadratic C_k the optimum is linear in w and the expected
integrated cost collapses to coefficient * 1/2 * E int W(t)^2 dt; the same
coefficient machinery scores a confusion matrix before any simulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import (
    BracketFailureError,
    ConfigError,
    NonFiniteMomentError,
    NonQuadraticError,
)
from .model import (
    ConfusionMatrix,
    MixtureCost,
    PredictedClassParams,
    SystemConfig,
    derive_predicted_params,
    mixture_cost,
)

__all__ = [
    "ReflectedPath",
    "reflect",
    "Moments",
    "workload_variance_rate",
    "WorkloadPathSet",
    "bm_workload_paths",
    "Allocation",
    "kkt_solve",
    "two_class_xstar",
    "QuadraticCostCoefficients",
    "quadratic_coefficients",
    "JEstimate",
    "jstar",
    "jnaive",
    "relative_regret",
    "RankedModel",
    "rank_models",
]

KKT_TOL = 1e-10
_KKT_MAX_ITER = 200
# uniform draws are clipped into the open unit interval before the normal
# inverse CDF so a measure-zero 0.0 draw cannot produce -inf
_U_EPS = 2.0 ** -53


# ---------------------------------------------------------------------------
# reflection map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReflectedPath:
    """One-sided reflection of a discrete path at zero."""

    grid: Optional[np.ndarray]
    raw: Optional[np.ndarray]
    values: np.ndarray


def reflect(values: Sequence[float], grid: Optional[Sequence[float]] = None) -> ReflectedPath:
    """phi(x)(t) = x(t) - min(0, inf_{s<=t} x(s)), the minimal nonnegative
    version of x obtained by pushing up only when the path would go negative.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1:
        raise ConfigError("reflect expects a one-dimensional path")
    g = None if grid is None else np.asarray(grid, dtype=float)
    if g is not None and g.shape != x.shape:
        raise ConfigError("grid and values must have matching length")
    running_min = np.minimum.accumulate(x)
    out = x - np.minimum(0.0, running_min)
    return ReflectedPath(grid=g, raw=x, values=out)


def _reflect_matrix(x: np.ndarray) -> np.ndarray:
    running_min = np.minimum.accumulate(x, axis=1)
    return x - np.minimum(0.0, running_min)


# ---------------------------------------------------------------------------
# variance rate of the workload diffusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    """Second moments of the primitives: alpha_u = E[U^2] for one
    interarrival time, alpha_v[k] = E[V_k^2] for a class-k service time."""

    alpha_u: float
    alpha_v: np.ndarray

    @classmethod
    def for_config(cls, config: SystemConfig) -> "Moments":
        mu = config.service_rates
        if config.arrival_dist == "exponential":
            alpha_u = 2.0 / config.lam ** 2
        elif config.arrival_dist == "deterministic":
            alpha_u = 1.0 / config.lam ** 2
        else:
            raise ConfigError(
                f"no closed-form moments for arrival_dist={config.arrival_dist!r}")
        if config.service_dist == "exponential":
            alpha_v = 2.0 / mu ** 2
        elif config.service_dist == "deterministic":
            alpha_v = 1.0 / mu ** 2
        elif config.service_dist.startswith("lognormal"):
            sigma = _lognormal_sigma(config.service_dist)
            alpha_v = np.exp(sigma ** 2) / mu ** 2
        else:
            raise ConfigError(
                f"no closed-form moments for service_dist={config.service_dist!r}")
        return cls(alpha_u=float(alpha_u), alpha_v=np.asarray(alpha_v, dtype=float))


def _lognormal_sigma(tag: str) -> float:
    # tag format "lognormal" (sigma=1) or "lognormal:0.25"
    if ":" in tag:
        return float(tag.split(":", 1)[1])
    return 1.0


def workload_variance_rate(config: SystemConfig, moments: Optional[Moments] = None) -> float:
    """Variance rate v of the limiting workload Brownian motion.

    With m = E[V] = sum_k p_k / mu_k, per-job work variance
    c_v = sum_k p_k alpha_v[k] - m^2 and interarrival variance
    c_u = alpha_u - 1/lambda^2,

        v = lambda * c_v + lambda^3 * c_u * m^2.

    M/M/1 sanity check: lambda = mu gives v = 2 / lambda.
    """
    if moments is None:
        moments = Moments.for_config(config)
    lam = config.lam
    p = config.prevalences
    alpha_v = np.asarray(moments.alpha_v, dtype=float)
    if alpha_v.shape != (config.n_classes,):
        raise ConfigError("alpha_v must have one entry per class")
    if not (np.isfinite(moments.alpha_u) and np.all(np.isfinite(alpha_v))):
        raise NonFiniteMomentError("second moments must be finite")
    mean_work = float(p @ (1.0 / config.service_rates))
    c_v = float(p @ alpha_v) - mean_work ** 2
    c_u = moments.alpha_u - 1.0 / lam ** 2
    if c_v < -1e-12 or c_u < -1e-12:
        raise ConfigError("moments imply negative variance; check alpha_u/alpha_v")
    v = lam * max(c_v, 0.0) + lam ** 3 * max(c_u, 0.0) * mean_work ** 2
    if not np.isfinite(v):
        raise NonFiniteMomentError("variance rate overflowed")
    return float(v)


# ---------------------------------------------------------------------------
# simulated RBM workload paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkloadPathSet:
    """Monte Carlo sample of reflected workload paths on a shared grid."""

    grid: np.ndarray
    values: np.ndarray  # (n_paths, len(grid))
    variance_rate: float
    seed: int

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self):
        for row in self.values:
            yield ReflectedPath(grid=self.grid, raw=None, values=row)

    def integral_sq(self) -> np.ndarray:
        """Left-endpoint Riemann sum of W(t)^2 over the grid, per path."""
        dt = np.diff(self.grid)
        return (self.values[:, :-1] ** 2) @ dt


def bm_workload_paths(variance_rate: float, n_steps: int, horizon: float,
                      n_paths: int, seed: int) -> WorkloadPathSet:
    """Driftless reflected Brownian paths W = phi(sqrt(v) B) from zero.

    Gaussian increments come from the inverse normal CDF applied to Philox
    uniforms, so a (seed, shape) pair pins the sample exactly.
    """
    if n_steps < 100:
        raise ConfigError("need n_steps >= 100 for a usable Euler grid")
    if n_paths < 1:
        raise ConfigError("need n_paths >= 1")
    if horizon <= 0 or variance_rate < 0:
        raise ConfigError("need horizon > 0 and variance_rate >= 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    dt = horizon / n_steps
    u = rng.random((n_paths, n_steps))
    z = ndtri(np.clip(u, _U_EPS, 1.0 - _U_EPS))
    increments = np.sqrt(variance_rate * dt) * z
    x = np.empty((n_paths, n_steps + 1))
    x[:, 0] = 0.0
    np.cumsum(increments, axis=1, out=x[:, 1:])
    grid = np.linspace(0.0, horizon, n_steps + 1)
    return WorkloadPathSet(grid=grid, values=_reflect_matrix(x),
                           variance_rate=float(variance_rate), seed=int(seed))


# ---------------------------------------------------------------------------
# instantaneous optimal workload allocation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Allocation:
    """Split of total workload r across predicted classes."""

    r: float
    x: np.ndarray
    objective: float


def _allocation_objective(x: np.ndarray, params: PredictedClassParams,
                          mixes: Sequence[MixtureCost]) -> float:
    total = 0.0
    for l, mix in enumerate(mixes):
        total += params.lambda_tilde[l] * mix(x[l] / params.rho_tilde[l])
    return float(total)


def kkt_solve(r: float, params: PredictedClassParams, costs) -> Allocation:
    """Workload split equalizing marginal value mu~_l C~'_l(x_l / rho~_l).

    Pivot on class 0: for trial x_0, every other class's share follows from
    inverting its marginal at the pivot's level, and total share
    g(x_0) = x_0 + sum_{l>0} x_l(x_0) is strictly increasing.  Bisection on
    g(x_0) = r converges unconditionally on [0, r].
    """
    if r < 0:
        raise ConfigError("total workload must be nonnegative")
    K = len(params.rho_tilde)
    mixes = [mixture_cost(l, params, costs) for l in range(K)]
    if r == 0.0:
        x = np.zeros(K)
        return Allocation(r=0.0, x=x, objective=0.0)
    if K == 1:
        x = np.array([r], dtype=float)
        return Allocation(r=r, x=x, objective=_allocation_objective(x, params, mixes))

    rho = params.rho_tilde
    mu = params.mu_tilde

    def shares(x0: float) -> np.ndarray:
        level = mu[0] * mixes[0].prime(x0 / rho[0])
        x = np.empty(K)
        x[0] = x0
        for l in range(1, K):
            x[l] = rho[l] * mixes[l].prime_inv(level / mu[l])
        return x

    tol = KKT_TOL * max(1.0, r)
    lo, hi = 0.0, r
    g_hi = float(shares(hi).sum())
    if g_hi < r - tol:
        raise BracketFailureError(
            f"allocation bracket failed: g({r}) = {g_hi} < r")
    # bisect past the stated tolerance down to float resolution so the
    # objective is usable inside tight integrand comparisons
    best_x, best_res = shares(hi), abs(g_hi - r)
    for _ in range(_KKT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        x = shares(mid)
        g = float(x.sum())
        res = abs(g - r)
        if res < best_res:
            best_x, best_res = x, res
        if res <= 1e-15 * max(1.0, r):
            break
        if g < r:
            lo = mid
        else:
            hi = mid
    if best_res > tol:
        raise BracketFailureError(
            f"allocation bisection stalled at residual {best_res} > {tol}")
    return Allocation(r=r, x=best_x,
                      objective=_allocation_objective(best_x, params, mixes))


def two_class_xstar(r: float, confusion, config: SystemConfig) -> np.ndarray:
    """Closed-form split for two predicted classes with quadratic costs.

    With curvature a_l = sum_k lam p_k q_kl c_k / (sum_k lam p_k q_kl/mu_k)^2
    the balance condition a_1 x_1 = a_2 x_2 gives x_1 = r a_2 / (a_1 + a_2).
    Under a perfect classifier and lam = 1 this reduces to a_l = c_l mu_l^2 / p_l.
    """
    cfg = _with_confusion(config, confusion)
    if cfg.n_classes != 2:
        raise ConfigError("two_class_xstar needs exactly two classes")
    if not cfg.all_quadratic():
        raise NonQuadraticError("closed form requires quadratic costs")
    q = cfg.confusion.entries
    lam_p = cfg.lam * cfg.prevalences
    c = np.array([fn.coeff for fn in cfg.costs])
    a = np.empty(2)
    for l in range(2):
        num = float(lam_p @ (q[:, l] * c))
        den = float(lam_p @ (q[:, l] / cfg.service_rates))
        if den <= 0.0:
            raise ConfigError(f"predicted class {l} carries no load")
        a[l] = num / den ** 2
    x1 = r * a[1] / (a[0] + a[1])
    return np.array([x1, r - x1])


# ---------------------------------------------------------------------------
# quadratic-cost coefficients and workload-based cost estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticCostCoefficients:
    """Per-class stiffness and the resulting integrated-cost multipliers.

    beta[l]       = mu~_l c~_l / rho~_l   (mixture-aware stiffness)
    beta_naive[l] = mu~_l c_l / rho~_l    (stiffness using the label's own cost)
    jstar_coeff   = 1 / sum_l 1/beta[l]   -- optimal split
    jnaive_coeff  = sum_l beta_l s_l^2 with s_l the naive split fractions
                    s_l = (1/beta_naive[l]) / sum_m 1/beta_naive[m]

    Either coefficient times 1/2 E int W(t)^2 dt is the expected integrated
    cost of the corresponding splitting rule under quadratic delay costs.
    """

    beta: np.ndarray
    beta_naive: np.ndarray
    jstar_coeff: float
    jnaive_coeff: float


def quadratic_coefficients(config: SystemConfig,
                           params: Optional[PredictedClassParams] = None,
                           ) -> QuadraticCostCoefficients:
    if not config.all_quadratic():
        raise NonQuadraticError("coefficient formulas require power-2 costs")
    if params is None:
        params = derive_predicted_params(config)
    K = len(params.rho_tilde)
    beta = np.empty(K)
    beta_naive = np.empty(K)
    for l in range(K):
        mix = mixture_cost(l, params, config.costs)
        beta[l] = params.mu_tilde[l] * mix.coeff / params.rho_tilde[l]
        beta_naive[l] = (params.mu_tilde[l] * config.costs[l].coeff
                         / params.rho_tilde[l])
    inv = 1.0 / beta
    jstar_coeff = 1.0 / float(inv.sum())
    s = (1.0 / beta_naive)
    s = s / s.sum()
    jnaive_coeff = float((beta * s ** 2).sum())
    return QuadraticCostCoefficients(beta=beta, beta_naive=beta_naive,
                                     jstar_coeff=jstar_coeff,
                                     jnaive_coeff=jnaive_coeff)


@dataclass(frozen=True)
class JEstimate:
    """Monte Carlo estimate of an integrated workload cost."""

    per_path: np.ndarray
    mean: float
    stderr: float
    method: str


def _estimate(per_path: np.ndarray, method: str) -> JEstimate:
    n = len(per_path)
    stderr = float(per_path.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return JEstimate(per_path=per_path, mean=float(per_path.mean()),
                     stderr=stderr, method=method)


def _with_confusion(config: SystemConfig, confusion) -> SystemConfig:
    if confusion is None:
        return config
    if not isinstance(confusion, ConfusionMatrix):
        confusion = ConfusionMatrix(confusion)
    return config.with_confusion(confusion)


def jstar(confusion, config: SystemConfig, w_paths: WorkloadPathSet,
          method: str = "auto") -> JEstimate:
    """Expected integrated cost of the optimal workload split along W paths.

    method "coefficient" uses the quadratic closed form; "general" re-solves
    the allocation at every grid point (any convex costs); "auto" picks the
    closed form when available.
    """
    cfg = _with_confusion(config, confusion)
    if method not in ("auto", "coefficient", "general"):
        raise ConfigError(f"unknown jstar method {method!r}")
    if method == "auto":
        method = "coefficient" if cfg.all_quadratic() else "general"
    if method == "coefficient":
        coeff = quadratic_coefficients(cfg).jstar_coeff
        return _estimate(coeff * 0.5 * w_paths.integral_sq(), "coefficient")

    params = derive_predicted_params(cfg)
    dt = np.diff(w_paths.grid)
    per_path = np.empty(len(w_paths))
    cache: dict[float, float] = {}
    for i, row in enumerate(w_paths.values):
        total = 0.0
        for j in range(len(dt)):
            w = float(row[j])
            val = cache.get(w)
            if val is None:
                val = kkt_solve(w, params, cfg.costs).objective
                cache[w] = val
            total += val * dt[j]
        per_path[i] = total
    return _estimate(per_path, "general")


def jnaive(confusion, config: SystemConfig, w_paths: WorkloadPathSet) -> JEstimate:
    """Integrated cost when workload is split by label-only stiffness but
    charged at the true mixture costs (quadratic only)."""
    cfg = _with_confusion(config, confusion)
    coeff = quadratic_coefficients(cfg).jnaive_coeff
    return _estimate(coeff * 0.5 * w_paths.integral_sq(), "coefficient")


def relative_regret(confusion, config: SystemConfig) -> float:
    """jstar coefficient under this classifier over the perfect-classifier
    coefficient.  >= 1, equal to 1 iff the classifier costs nothing; the W
    factor cancels, so the ratio needs no simulation."""
    cfg = _with_confusion(config, confusion)
    ident = ConfusionMatrix.identity(config.n_classes)
    num = quadratic_coefficients(cfg).jstar_coeff
    den = quadratic_coefficients(config.with_confusion(ident)).jstar_coeff
    return float(num / den)


@dataclass(frozen=True)
class RankedModel:
    name: str
    relative_regret: float
    jstar_coeff: float
    jnaive_coeff: float


def rank_models(models: Sequence[tuple], config: SystemConfig) -> list:
    """Order candidate confusion matrices by scheduling regret (ascending).

    models is a sequence of (name, confusion) pairs.  Sorting is stable, so
    exact ties keep input order.
    """
    ident = ConfusionMatrix.identity(config.n_classes)
    den = quadratic_coefficients(config.with_confusion(ident)).jstar_coeff
    ranked = []
    for name, confusion in models:
        coeffs = quadratic_coefficients(_with_confusion(config, confusion))
        ranked.append(RankedModel(
            name=str(name),
            relative_regret=float(coeffs.jstar_coeff / den),
            jstar_coeff=coeffs.jstar_coeff,
            jnaive_coeff=coeffs.jnaive_coeff,
        ))
    ranked.sort(key=lambda m: m.relative_regret)
    return ranked
