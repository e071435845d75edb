"""Design of an AI triage stage in front of a pool of human reviewers.

Content arrives at total rate Lambda with a toxic share p_1 and a non-toxic
share p_2.  A scorer assigns each item a score in [0,1]; items scoring below
the filtering level z_fl are auto-resolved, the rest are routed uniformly at
random to one of Gamma(z_fl) reviewers, each an independent single-server
queue running the predicted-class index rule with the toxicity threshold
z_tx >= z_fl acting as the classifier.

The steady design cost at t = 1 decomposes into four parts:

  filtering       mistakes made by auto-resolving below z_fl
  hiring          c_r * Gamma(z_fl)
  misclassification  reviewer label errors at threshold z_tx
  queueing        Gamma * (expected integrated delay cost of one reviewer)

Reviewers are statistically identical, so one reviewer's reflected-Brownian
queue cost is computed and multiplied by Gamma.  The staffing rule
Gamma = Lambda sum_k p_k g_k(z_fl) / mu_k puts every reviewer exactly at
critical load, which is what makes the RBM approximation the right tool.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, EmptyClassError, EmptyGridError, EmptyPassError
from .httheory import bm_workload_paths, quadratic_coefficients
from .model import ConfusionMatrix, CostFn, SystemConfig

__all__ = [
    "PassingCurves",
    "estimate_curves",
    "TriageConfig",
    "ReviewerParams",
    "McParams",
    "TriageDecision",
    "staffing",
    "reviewer_params",
    "filtering_cost_rate",
    "misclass_cost_rate",
    "reviewer_variance_rate",
    "reviewer_queue_cost",
    "total_cost",
    "evaluate_grid",
    "optimize",
]

DEFAULT_SCORE_GRID = 101
_MONOTONE_TOL = 1e-9


class PassingCurves:
    """Pass-rate curves g_k(z) = P[score >= z | class k], k in {0: toxic,
    1: non-toxic}, stored as piecewise-linear interpolants on a score grid.

    Each curve is nonincreasing with g_k(0) = 1.  All constructors funnel
    into the grid form so curves serialize and compare uniformly.
    """

    def __init__(self, grid: Sequence[float], values: Sequence[Sequence[float]]):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ConfigError("curve grid needs at least two points")
        if values.shape != (2, grid.size):
            raise ConfigError("curve values must be shaped (2, len(grid))")
        if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
            raise ConfigError("curve grid must increase strictly from 0 to 1")
        if np.any(values < -_MONOTONE_TOL) or np.any(values > 1 + _MONOTONE_TOL):
            raise ConfigError("pass rates must lie in [0, 1]")
        if np.any(np.abs(values[:, 0] - 1.0) > _MONOTONE_TOL):
            raise ConfigError("pass rate at score 0 must be 1")
        if np.any(np.diff(values, axis=1) > _MONOTONE_TOL):
            raise ConfigError("pass rates must be nonincreasing in z")
        values = np.clip(values, 0.0, 1.0)
        values[:, 0] = 1.0
        self.grid = grid
        self.values = values
        self.grid.setflags(write=False)
        self.values.setflags(write=False)

    def g(self, k: int, z) -> float:
        """Linear interpolation of curve k at score(s) z."""
        if k not in (0, 1):
            raise ConfigError("curve index must be 0 (toxic) or 1 (non-toxic)")
        out = np.interp(z, self.grid, self.values[k])
        return float(out) if np.isscalar(z) else out

    @classmethod
    def from_grid(cls, grid, g_toxic, g_nontoxic) -> "PassingCurves":
        return cls(grid, np.vstack([g_toxic, g_nontoxic]))

    @classmethod
    def from_gaussian_logit(cls, locs: Sequence[float], scales: Sequence[float],
                            grid_size: int = 1001) -> "PassingCurves":
        """Scores are sigmoid(L) with L ~ Normal(loc_k, scale_k):
        g_k(z) = Phi((loc_k - logit z) / scale_k), so the pair (loc, scale)
        controls how sharply each class's mass sits above a threshold."""
        if len(locs) != 2 or len(scales) != 2:
            raise ConfigError("need one (loc, scale) pair per class")
        if min(scales) <= 0:
            raise ConfigError("scales must be positive")
        grid = np.linspace(0.0, 1.0, int(grid_size))
        inner = np.clip(grid, 1e-12, 1 - 1e-12)
        logit = np.log(inner) - np.log1p(-inner)
        values = np.empty((2, grid.size))
        for k in range(2):
            values[k] = ndtr((locs[k] - logit) / scales[k])
            values[k, 0] = 1.0
            values[k, -1] = 0.0
        return cls(grid, values)

    @classmethod
    def from_samples(cls, scores_toxic, scores_nontoxic,
                     grid_size: int = DEFAULT_SCORE_GRID) -> "PassingCurves":
        """Empirical complements: g_k(z) = fraction of class-k scores >= z."""
        grid = np.linspace(0.0, 1.0, int(grid_size))
        values = np.empty((2, grid.size))
        for k, scores in enumerate((scores_toxic, scores_nontoxic)):
            s = np.asarray(scores, dtype=float)
            if s.size == 0:
                raise EmptyClassError(f"no validation scores for class {k}")
            if np.any(s < 0) or np.any(s > 1):
                raise ConfigError("scores must lie in [0, 1]")
            s = np.sort(s)
            # fraction of scores >= z, evaluated on the grid
            values[k] = 1.0 - np.searchsorted(s, grid, side="left") / s.size
        return cls(grid, values)


def estimate_curves(scores_by_class: Sequence,
                    grid_size: int = DEFAULT_SCORE_GRID) -> PassingCurves:
    """PassingCurves from raw validation scores (toxic first)."""
    if len(scores_by_class) != 2:
        raise ConfigError("expected scores for exactly two classes")
    return PassingCurves.from_samples(scores_by_class[0], scores_by_class[1],
                                      grid_size=grid_size)


@dataclass(frozen=True)
class TriageConfig:
    """Primitives of the triage design problem.

    Sign conventions: filtering a truly toxic item costs c_trp > 0, filtering
    a non-toxic item saves review effort, c_trn < 0; reviewers cost c_r > 0
    per unit time.  Reviewer label outcomes carry c_tp/c_fn (toxic items) and
    c_fp/c_tn (non-toxic items), any sign.  Delay costs are quadratic with
    coefficients delay_costs.  alpha_u / alpha_v are second moments of the
    total-stream interarrival and the per-class service times; omit them for
    the exponential defaults.
    """

    Lambda: float
    p: tuple
    mu: tuple
    curves: PassingCurves
    c_trp: float
    c_trn: float
    c_fp: float
    c_fn: float
    c_tp: float
    c_tn: float
    c_r: float
    delay_costs: tuple
    alpha_u: Optional[float] = None
    alpha_v: Optional[tuple] = None

    def __post_init__(self):
        if self.Lambda <= 0:
            raise ConfigError("Lambda must be positive")
        if len(self.p) != 2 or abs(sum(self.p) - 1.0) > 1e-12 or min(self.p) < 0:
            raise ConfigError("p must be two nonnegative shares summing to 1")
        if len(self.mu) != 2 or min(self.mu) <= 0:
            raise ConfigError("mu must be two positive rates")
        if self.c_trp <= 0:
            raise ConfigError("c_trp must be positive (filtering toxic content hurts)")
        if self.c_trn >= 0:
            raise ConfigError("c_trn must be negative (filtering safe content saves work)")
        if self.c_r <= 0:
            raise ConfigError("c_r must be positive")
        if len(self.delay_costs) != 2 or min(self.delay_costs) <= 0:
            raise ConfigError("delay_costs must be two positive coefficients")
        if self.alpha_u is None:
            object.__setattr__(self, "alpha_u", 2.0 / self.Lambda ** 2)
        if self.alpha_v is None:
            object.__setattr__(
                self, "alpha_v", tuple(2.0 / m ** 2 for m in self.mu))
        if self.alpha_u <= 0 or len(self.alpha_v) != 2 or min(self.alpha_v) <= 0:
            raise ConfigError("second moments must be positive")


@dataclass(frozen=True)
class McParams:
    """Monte Carlo controls for the reviewer RBM (shared across grid points
    so threshold comparisons ride on common random numbers)."""

    n_paths: int = 2000
    n_steps: int = 400
    seed: int = 0
    horizon: float = 1.0


def staffing(z_fl: float, config: TriageConfig) -> float:
    """Gamma(z_fl) = Lambda sum_k p_k g_k(z_fl) / mu_k -- the real-valued
    reviewer count that keeps every reviewer exactly critically loaded."""
    g = [config.curves.g(k, z_fl) for k in range(2)]
    return config.Lambda * sum(
        config.p[k] * g[k] / config.mu[k] for k in range(2))


@dataclass(frozen=True)
class ReviewerParams:
    """One reviewer's queue seen as a two-class system with classifier z_tx.

    p_mix: class shares among passing items; q: 2x2 confusion of the
    threshold rule (column 0 = predicted toxic); lam_r: arrival rate per
    reviewer; pass_prob: sum_k p_k g_k(z_fl); c_mix: mixture delay-cost
    coefficients per predicted class.
    """

    z_fl: float
    z_tx: float
    gamma: float
    lam_r: float
    pass_prob: float
    p_mix: np.ndarray
    q: np.ndarray
    c_mix: np.ndarray

    def to_system_config(self, config: TriageConfig,
                         horizon: float = 1.0) -> SystemConfig:
        return SystemConfig(
            lam=self.lam_r,
            prevalences=self.p_mix,
            service_rates=np.asarray(config.mu, dtype=float),
            costs=(CostFn(config.delay_costs[0]), CostFn(config.delay_costs[1])),
            confusion=ConfusionMatrix(self.q),
            horizon=horizon,
        )


def reviewer_params(z, config: TriageConfig) -> ReviewerParams:
    """Limiting per-reviewer primitives at thresholds z = (z_fl, z_tx)."""
    z_fl, z_tx = _check_thresholds(z)
    g_fl = np.array([config.curves.g(k, z_fl) for k in range(2)])
    g_tx = np.array([config.curves.g(k, z_tx) for k in range(2)])
    p = np.asarray(config.p, dtype=float)
    weights = p * g_fl
    pass_prob = float(weights.sum())
    if pass_prob <= 0.0:
        raise EmptyPassError(f"no content passes the filter at z_fl={z_fl}")
    gamma = staffing(z_fl, config)
    p_mix = weights / pass_prob
    q = np.empty((2, 2))
    for k in range(2):
        # classes that never pass the filter contribute no arrivals; their
        # confusion row is unobservable and pinned to "predicted non-toxic"
        q[k, 0] = g_tx[k] / g_fl[k] if g_fl[k] > 0 else 0.0
        q[k, 1] = 1.0 - q[k, 0]
    lam_r = config.Lambda * pass_prob / gamma
    c = np.asarray(config.delay_costs, dtype=float)
    p_tilde = p_mix @ q
    c_mix = np.empty(2)
    for l in range(2):
        c_mix[l] = (p_mix * q[:, l] @ c) / p_tilde[l] if p_tilde[l] > 0 else 0.0
    return ReviewerParams(z_fl=z_fl, z_tx=z_tx, gamma=gamma, lam_r=lam_r,
                          pass_prob=pass_prob, p_mix=p_mix, q=q, c_mix=c_mix)


def _check_thresholds(z) -> tuple:
    z_fl, z_tx = float(z[0]), float(z[1])
    for name, value in (("z_fl", z_fl), ("z_tx", z_tx)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name}={value} outside [0, 1]")
    if z_tx < z_fl:
        raise ConfigError(f"z_tx={z_tx} must be >= z_fl={z_fl}")
    return z_fl, z_tx


def filtering_cost_rate(z_fl: float, config: TriageConfig) -> float:
    """Cost rate of auto-resolving everything scoring below z_fl."""
    g = [config.curves.g(k, z_fl) for k in range(2)]
    return config.Lambda * (config.c_trp * config.p[0] * (1.0 - g[0])
                            + config.c_trn * config.p[1] * (1.0 - g[1]))


def misclass_cost_rate(z, config: TriageConfig) -> float:
    """Cost rate of reviewer label outcomes at threshold z_tx among passers."""
    z_fl, z_tx = _check_thresholds(z)
    g_fl = [config.curves.g(k, z_fl) for k in range(2)]
    g_tx = [config.curves.g(k, z_tx) for k in range(2)]
    q11 = g_tx[0] / g_fl[0] if g_fl[0] > 0 else 0.0
    q21 = g_tx[1] / g_fl[1] if g_fl[1] > 0 else 0.0
    toxic = config.p[0] * g_fl[0] * (config.c_tp * q11 + config.c_fn * (1.0 - q11))
    nontox = config.p[1] * g_fl[1] * (config.c_fp * q21 + config.c_tn * (1.0 - q21))
    return config.Lambda * (toxic + nontox)


def reviewer_variance_rate(z_fl: float, config: TriageConfig) -> float:
    """Variance rate of one reviewer's workload diffusion.

    A reviewer receives each of the Lambda-stream arrivals independently with
    probability q = pass_prob / Gamma, so the arrival-count variance rate is
    q^2 Lambda^3 c_u + Lambda q (1 - q) (splitting noise included; for a
    Poisson stream this collapses to lam_r, the thinned-Poisson rate).  Work
    variance uses the passing mix at z_fl.
    """
    params = reviewer_params((z_fl, z_fl), config)
    alpha_v = np.asarray(config.alpha_v, dtype=float)
    mu = np.asarray(config.mu, dtype=float)
    mean_work = float(params.p_mix @ (1.0 / mu))
    c_v = float(params.p_mix @ alpha_v) - mean_work ** 2
    c_u = config.alpha_u - 1.0 / config.Lambda ** 2
    q_split = params.pass_prob / params.gamma
    count_var_rate = (q_split ** 2 * config.Lambda ** 3 * max(c_u, 0.0)
                      + config.Lambda * q_split * (1.0 - q_split))
    return params.lam_r * max(c_v, 0.0) + mean_work ** 2 * count_var_rate


@lru_cache(maxsize=8)
def _unit_rbm_mean_isq(n_paths: int, n_steps: int, seed: int, horizon: float) -> float:
    """Mean of int W^2 dt over unit-variance RBM paths; reused across the
    threshold grid because reflection commutes with the sqrt(v) scaling."""
    paths = bm_workload_paths(1.0, n_steps, horizon, n_paths, seed)
    return float(paths.integral_sq().mean())


def reviewer_queue_cost(z, config: TriageConfig, mc: McParams = McParams()) -> float:
    """Expected integrated delay cost of one reviewer over [0, horizon].

    The coefficient is the optimal-split quadratic constant of the reviewer's
    two-class system (equal to beta_1 beta_2 / (beta_1 + beta_2)); the
    workload factor is a Monte Carlo mean of int W^2 over RBM paths with the
    per-reviewer variance rate.
    """
    params = reviewer_params(z, config)
    cfg = params.to_system_config(config, horizon=mc.horizon)
    coeff = quadratic_coefficients(cfg).jstar_coeff
    v = reviewer_variance_rate(params.z_fl, config)
    base = _unit_rbm_mean_isq(mc.n_paths, mc.n_steps, mc.seed, mc.horizon)
    return coeff * 0.5 * v * base


@dataclass(frozen=True)
class TriageDecision:
    """One evaluated threshold pair with its cost breakdown at t = 1."""

    z_fl: float
    z_tx: float
    gamma: float
    filtering: float
    hiring: float
    misclassification: float
    queueing: float

    @property
    def total(self) -> float:
        return self.filtering + self.hiring + self.misclassification + self.queueing


def total_cost(z, config: TriageConfig, mc: McParams = McParams()) -> TriageDecision:
    """Four-part design cost at thresholds z = (z_fl, z_tx), evaluated at t=1."""
    z_fl, z_tx = _check_thresholds(z)
    gamma = staffing(z_fl, config)
    filtering = filtering_cost_rate(z_fl, config)
    g_fl = [config.curves.g(k, z_fl) for k in range(2)]
    pass_prob = sum(config.p[k] * g_fl[k] for k in range(2))
    if pass_prob <= 0.0:
        # everything auto-resolved: no reviewers, no labels, no queues
        return TriageDecision(z_fl=z_fl, z_tx=z_tx, gamma=0.0,
                              filtering=filtering, hiring=0.0,
                              misclassification=0.0, queueing=0.0)
    return TriageDecision(
        z_fl=z_fl,
        z_tx=z_tx,
        gamma=gamma,
        filtering=filtering,
        hiring=config.c_r * gamma,
        misclassification=misclass_cost_rate((z_fl, z_tx), config),
        queueing=gamma * reviewer_queue_cost((z_fl, z_tx), config, mc),
    )


def evaluate_grid(config: TriageConfig, z_tx, zfl_grid,
                  mc: McParams = McParams()) -> list:
    """total_cost at every feasible (z_fl, z_tx) pair, common random numbers.

    z_tx may be a scalar or a grid; pairs with z_tx < z_fl are skipped.
    Results are ordered by (z_fl, z_tx).
    """
    zfl_values = np.atleast_1d(np.asarray(zfl_grid, dtype=float))
    ztx_values = np.atleast_1d(np.asarray(z_tx, dtype=float))
    decisions = []
    for z_fl in sorted(zfl_values):
        for ztx in sorted(ztx_values):
            if ztx < z_fl:
                continue
            decisions.append(total_cost((z_fl, ztx), config, mc))
    if not decisions:
        raise EmptyGridError("no feasible (z_fl, z_tx) pair on the grids")
    return decisions


def optimize(config: TriageConfig, z_tx, zfl_grid,
             mc: McParams = McParams()) -> TriageDecision:
    """Grid argmin of total cost; ties resolve to the smaller (z_fl, z_tx)."""
    best = None
    for decision in evaluate_grid(config, z_tx, zfl_grid, mc):
        if best is None or decision.total < best.total:
            best = decision
    return best


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def curves_from_json(doc: dict) -> PassingCurves:
    """Curve spec: {"kind": "gaussian_logit", "loc": [.,.], "scale": [.,.]}
    or {"kind": "grid", "z": [...], "g_toxic": [...], "g_nontoxic": [...]}."""
    kind = doc.get("kind")
    if kind == "gaussian_logit":
        return PassingCurves.from_gaussian_logit(
            doc["loc"], doc["scale"], grid_size=doc.get("grid_size", 1001))
    if kind == "grid":
        return PassingCurves.from_grid(doc["z"], doc["g_toxic"], doc["g_nontoxic"])
    raise ConfigError(f"unknown curve kind {kind!r}")


def triage_config_from_json(doc: dict) -> TriageConfig:
    try:
        return TriageConfig(
            Lambda=float(doc["Lambda"]),
            p=tuple(float(x) for x in doc["p"]),
            mu=tuple(float(x) for x in doc["mu"]),
            curves=curves_from_json(doc["curves"]),
            c_trp=float(doc["c_trp"]),
            c_trn=float(doc["c_trn"]),
            c_fp=float(doc["c_fp"]),
            c_fn=float(doc["c_fn"]),
            c_tp=float(doc["c_tp"]),
            c_tn=float(doc["c_tn"]),
            c_r=float(doc["c_r"]),
            delay_costs=tuple(float(x) for x in doc["delay_costs"]),
            alpha_u=(None if doc.get("alpha_u") is None else float(doc["alpha_u"])),
            alpha_v=(None if doc.get("alpha_v") is None
                     else tuple(float(x) for x in doc["alpha_v"])),
        )
    except KeyError as exc:
        raise ConfigError(f"triage config missing field {exc.args[0]!r}")


def load_triage_config(path) -> TriageConfig:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return triage_config_from_json(json.load(fh))
