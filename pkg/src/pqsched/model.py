"""Core domain types and predicted-class parameter derivation.

The scheduler in this toolkit never sees a job's true class k, only a
predicted class l emitted by a classifier with confusion matrix
Q = (q_kl), q_kl = P[predicted l | true k].  Everything downstream
(policies, heavy-traffic analytics) runs on the *predicted-class*
primitives derived here from the true-class ones:

    p~_l  = sum_k p_k q_kl                    arrival share of label l
    lam~_l = lam * p~_l                       arrival rate of label l
    1/mu~_l = sum_k (p_k q_kl / p~_l) / mu_k  mean service of a label-l job
    rho~_l = lam~_l / mu~_l                   label-l traffic intensity
    w_kl  = p_k q_kl / p~_l                   P[true k | predicted l]

and the mixture delay cost of a label-l job, C~_l(t) = sum_k w_kl C_k(t).

Delay costs are monomials C(t) = (coeff/power) t^power with power >= 2, so the
marginal cost C'(t) = coeff * t^(power-1) is strictly increasing and invertible
in closed form; power=2 is the usual (1/2) c t^2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, ZeroColumnError

__all__ = [
    "CostFn",
    "ConfusionMatrix",
    "SystemConfig",
    "PredictedClassParams",
    "MixtureCost",
    "ValidationReport",
    "derive_predicted_params",
    "mixture_cost",
    "validate_config",
    "config_to_json",
    "config_from_json",
    "load_config",
    "save_config",
]

# |rho - 1| beyond this is flagged as "not really heavy traffic" (a warning,
# never an error: deliberately overloaded transients are legitimate configs).
HEAVY_TRAFFIC_BAND = 0.05

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class CostFn:
    """Monomial delay cost C(t) = (coeff/power) * t**power.

    C'(t) = coeff * t**(power-1).  power >= 2 keeps C strictly convex with
    C(0) = C'(0) = 0, which the index policies and the workload-split solver
    rely on.
    """

    coeff: float
    power: float = 2.0

    def __call__(self, t):
        return (self.coeff / self.power) * np.power(t, self.power)

    def prime(self, t):
        return self.coeff * np.power(t, self.power - 1.0)

    def prime_inv(self, y):
        """Inverse of the marginal cost: t such that C'(t) = y."""
        return np.power(np.asarray(y, dtype=float) / self.coeff, 1.0 / (self.power - 1.0))

    @property
    def is_quadratic(self) -> bool:
        return self.power == 2.0


def _as_readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-stochastic K x K matrix; row k is the predicted-label law of true class k."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_readonly(self.entries))
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ConfigError(f"confusion matrix must be square, got shape {self.entries.shape}")

    @classmethod
    def identity(cls, k: int) -> "ConfusionMatrix":
        return cls(np.eye(k))

    @property
    def n_classes(self) -> int:
        return self.entries.shape[0]

    def row(self, k: int) -> np.ndarray:
        return self.entries[k]

    def issues(self) -> list[str]:
        """Structural problems, as stable codes with detail (used by validate_config)."""
        out = []
        q = self.entries
        if np.any(q < 0) or np.any(q > 1):
            out.append("EntryOutOfRange: confusion entries must lie in [0, 1]")
        bad = np.nonzero(np.abs(q.sum(axis=1) - 1.0) > _ROW_SUM_TOL)[0]
        for k in bad:
            out.append(f"RowNotStochastic: row {k} sums to {q[k].sum():.15g}")
        return out


@dataclass(frozen=True)
class SystemConfig:
    """Prelimit description of one single-server multiclass system.

    lam       -- overall arrival rate (jobs per unit time)
    prevalences -- p_k, class mix of arrivals (sums to 1)
    service_rates -- mu_k > 0; mean service of a true-class-k job is 1/mu_k
    costs     -- per-class delay costs C_k
    confusion -- classifier confusion matrix Q
    horizon   -- simulated time window [0, horizon]
    arrival_dist / service_dist -- distribution family tags; "exponential"
        (default), "deterministic", or {"family": "lognormal", "sigma": s}.
        Rates always mean what they say: the mean interarrival time is 1/lam
        and the mean class-k service time is 1/mu_k under every family.
    """

    lam: float
    prevalences: np.ndarray
    service_rates: np.ndarray
    costs: tuple[CostFn, ...]
    confusion: ConfusionMatrix
    horizon: float = 1.0
    arrival_dist: str | dict = "exponential"
    service_dist: str | dict = "exponential"

    def __post_init__(self):
        object.__setattr__(self, "prevalences", _as_readonly(self.prevalences))
        object.__setattr__(self, "service_rates", _as_readonly(self.service_rates))
        object.__setattr__(self, "costs", tuple(self.costs))

    @property
    def n_classes(self) -> int:
        return len(self.prevalences)

    @property
    def class_arrival_rates(self) -> np.ndarray:
        """lam_k = lam * p_k."""
        return self.lam * self.prevalences

    @property
    def rho(self) -> float:
        """Traffic intensity lam * sum_k p_k / mu_k."""
        return float(self.lam * np.sum(self.prevalences / self.service_rates))

    @property
    def mean_work_per_job(self) -> float:
        """sum_k p_k / mu_k, the unconditional mean service requirement."""
        return float(np.sum(self.prevalences / self.service_rates))

    def with_confusion(self, q) -> "SystemConfig":
        """Same system under a different classifier."""
        if not isinstance(q, ConfusionMatrix):
            q = ConfusionMatrix(np.asarray(q, dtype=float))
        return replace(self, confusion=q)

    def all_quadratic(self) -> bool:
        return all(c.is_quadratic for c in self.costs)


@dataclass(frozen=True)
class PredictedClassParams:
    """Per-predicted-class primitives; see module docstring for the formulas."""

    p_tilde: np.ndarray
    lambda_tilde: np.ndarray
    mu_tilde: np.ndarray
    rho_tilde: np.ndarray
    mix_weights: np.ndarray  # w[k, l] = P[true k | predicted l]

    def __post_init__(self):
        for name in ("p_tilde", "lambda_tilde", "mu_tilde", "rho_tilde", "mix_weights"):
            object.__setattr__(self, name, _as_readonly(getattr(self, name)))

    @property
    def n_classes(self) -> int:
        return len(self.p_tilde)


def derive_predicted_params(config: SystemConfig) -> PredictedClassParams:
    """Derive the predicted-class primitives from (lam, p, mu, Q).

    Raises ZeroColumnError if some predicted label has no arrival mass
    (sum_k p_k q_kl = 0), which would make its service law undefined.
    """
    q = config.confusion.entries
    p = config.prevalences
    mu = config.service_rates

    p_tilde = p @ q  # p~_l = sum_k p_k q_kl
    dead = np.nonzero(p_tilde <= 0.0)[0]
    if dead.size:
        raise ZeroColumnError(
            f"predicted class(es) {dead.tolist()} have zero arrival mass; "
            "every column l needs sum_k p_k q_kl > 0"
        )

    lambda_tilde = config.lam * p_tilde
    # rho~_l = sum_k lam p_k q_kl / mu_k, and mu~_l = lam~_l / rho~_l.
    rho_tilde = config.lam * ((p / mu) @ q)
    mu_tilde = lambda_tilde / rho_tilde
    mix_weights = (p[:, None] * q) / p_tilde[None, :]

    return PredictedClassParams(
        p_tilde=p_tilde,
        lambda_tilde=lambda_tilde,
        mu_tilde=mu_tilde,
        rho_tilde=rho_tilde,
        mix_weights=mix_weights,
    )


class MixtureCost:
    """Posterior-weighted delay cost of one predicted class.

    C~(t) = sum_k w_k C_k(t) and C~'(t) = sum_k w_k C_k'(t).  When every
    component shares the same power the mixture is itself a monomial with
    coefficient c~ = sum_k w_k c_k (exposed as .coeff), and the marginal cost
    inverts in closed form; otherwise prime_inv falls back to a bracketed
    root find (C~' is strictly increasing, so the root is unique).
    """

    def __init__(self, weights: Sequence[float], costs: Sequence[CostFn]):
        self.weights = np.asarray(weights, dtype=float)
        self.costs = tuple(costs)
        if len(self.weights) != len(self.costs):
            raise ConfigError("mixture weights and costs must align")
        powers = {c.power for c, w in zip(self.costs, self.weights) if w > 0}
        self.common_power = powers.pop() if len(powers) == 1 else None
        if self.common_power is not None:
            self.coeff = float(sum(w * c.coeff for c, w in zip(self.costs, self.weights)))
        else:
            self.coeff = None

    def __call__(self, t):
        return sum(w * c(t) for c, w in zip(self.costs, self.weights) if w > 0)

    def prime(self, t):
        return sum(w * c.prime(t) for c, w in zip(self.costs, self.weights) if w > 0)

    def prime_inv(self, y):
        if self.common_power is not None:
            return np.power(np.asarray(y, dtype=float) / self.coeff, 1.0 / (self.common_power - 1.0))
        y = float(y)
        if y <= 0.0:
            return 0.0
        hi = 1.0
        while self.prime(hi) < y:
            hi *= 2.0
            if hi > 1e30:  # pragma: no cover - pathological input
                raise ConfigError("marginal-cost inverse failed to bracket")
        return float(brentq(lambda t: self.prime(t) - y, 0.0, hi, xtol=1e-14, rtol=1e-14))

    @property
    def is_quadratic(self) -> bool:
        return self.common_power == 2.0


def mixture_cost(l: int, params: PredictedClassParams, costs: Sequence[CostFn]) -> MixtureCost:
    """The effective delay cost C~_l of predicted class l under posterior weights w_.l."""
    return MixtureCost(params.mix_weights[:, l], costs)


@dataclass
class ValidationReport:
    """Outcome of validate_config: coded errors/warnings plus headline numbers."""

    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    rho: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_invalid(self):
        if self.errors:
            raise ConfigError("; ".join(self.errors))


def validate_config(config: SystemConfig) -> ValidationReport:
    """Check every type invariant; report, never raise.

    Error codes: RowNotStochastic, EntryOutOfRange, NonPositiveRate,
    PrevalenceNotNormalized, NegativePrevalence, ZeroColumn, BadCost,
    NonPositiveHorizon, ShapeMismatch.  |rho-1| > 0.05 is a warning
    (HeavyTrafficDeviation), since overloaded transients are legitimate.
    """
    rep = ValidationReport()
    k = config.n_classes

    if len(config.service_rates) != k or len(config.costs) != k or config.confusion.n_classes != k:
        rep.errors.append(
            f"ShapeMismatch: prevalences({k}), service_rates({len(config.service_rates)}), "
            f"costs({len(config.costs)}), confusion({config.confusion.n_classes}) disagree"
        )
        return rep

    if config.lam <= 0:
        rep.errors.append(f"NonPositiveRate: lambda = {config.lam}")
    if np.any(config.service_rates <= 0):
        rep.errors.append(f"NonPositiveRate: service_rates = {config.service_rates.tolist()}")
    if np.any(config.prevalences < 0):
        rep.errors.append("NegativePrevalence: prevalences must be >= 0")
    if abs(config.prevalences.sum() - 1.0) > _ROW_SUM_TOL:
        rep.errors.append(f"PrevalenceNotNormalized: sum = {config.prevalences.sum():.15g}")
    for i, c in enumerate(config.costs):
        if c.coeff <= 0:
            rep.errors.append(f"BadCost: class {i} coeff {c.coeff} (must be > 0)")
        if c.power < 2:
            rep.errors.append(f"BadCost: class {i} power {c.power} (must be >= 2)")
    rep.errors.extend(config.confusion.issues())

    if not rep.errors:
        p_tilde = config.prevalences @ config.confusion.entries
        dead = np.nonzero(p_tilde <= 0.0)[0]
        if dead.size:
            rep.errors.append(f"ZeroColumn: predicted class(es) {dead.tolist()} have zero mass")

    if config.horizon <= 0:
        rep.errors.append(f"NonPositiveHorizon: horizon = {config.horizon}")

    if all(config.service_rates > 0) and config.lam > 0:
        rep.rho = config.rho
        if abs(rep.rho - 1.0) > HEAVY_TRAFFIC_BAND:
            rep.warnings.append(
                f"HeavyTrafficDeviation: rho = {rep.rho:.6g}; diffusion formulas assume rho ~ 1"
            )
    return rep


# ---------------------------------------------------------------------------
# JSON round trip.  Field names are part of the external interface:
# lambda, prevalences, service_rates, costs[{coeff,power}], confusion
# (row-major), horizon, arrival_dist, service_dist.
# ---------------------------------------------------------------------------

def config_to_json(config: SystemConfig) -> dict:
    return {
        "lambda": config.lam,
        "prevalences": config.prevalences.tolist(),
        "service_rates": config.service_rates.tolist(),
        "costs": [{"coeff": c.coeff, "power": c.power} for c in config.costs],
        "confusion": config.confusion.entries.tolist(),
        "horizon": config.horizon,
        "arrival_dist": config.arrival_dist,
        "service_dist": config.service_dist,
    }


def config_from_json(doc: dict, *, strict: bool = True) -> SystemConfig:
    """Build a SystemConfig from its JSON document; validates unless strict=False."""
    try:
        config = SystemConfig(
            lam=float(doc["lambda"]),
            prevalences=np.asarray(doc["prevalences"], dtype=float),
            service_rates=np.asarray(doc["service_rates"], dtype=float),
            costs=tuple(CostFn(float(c["coeff"]), float(c.get("power", 2.0))) for c in doc["costs"]),
            confusion=ConfusionMatrix(np.asarray(doc["confusion"], dtype=float)),
            horizon=float(doc.get("horizon", 1.0)),
            arrival_dist=doc.get("arrival_dist", "exponential"),
            service_dist=doc.get("service_dist", "exponential"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config document: {exc}") from exc
    if strict:
        validate_config(config).raise_if_invalid()
    return config


def save_config(config: SystemConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_json(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path, *, strict: bool = True) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(json.load(fh), strict=strict)
