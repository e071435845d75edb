"""Discrete-event simulator of a single-server preemptive-resume queue.

The scheduler groups jobs by *scheduling class* -- predicted class for every
policy except the oracle, which sees true classes -- and serves FIFO within a
class (p-FCFS): preemption only ever happens across classes, and a preempted
job resumes where it left off.  Service requirements and delay costs are
governed by the job's *true* class throughout; the predicted label is sampled
from the confusion-matrix row of the true class, independently per job.

Randomness is split into four independent substreams of one counter-based
generator (Philox keyed by the path seed): interarrivals, true classes,
service requirements, classification.  Changing the policy or the confusion
matrix therefore never perturbs the arrival times or the work each job
brings, which is what makes paired-seed comparisons and the total-workload
invariance checks exact.  Exponential draws use the inverse CDF
(-ln(1-U)/rate) and normal draws use ndtri(U), so a path is a pure function
of (config, policy, seed) across platforms.

The total-workload curve W_+(t) is tracked with the Lindley recursion over
arrival epochs (jump by the service requirement at each arrival, drain at
unit rate while work remains).  In a work-conserving single-server system
this equals the sum of remaining work over present jobs -- a unit test pins
the two together -- but the recursion touches only arrival data, so the
recorded curve is bitwise identical across policies and classifiers.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .errors import (
    ConfigError,
    EventOverflowError,
    OracleUnavailableError,
    ScheduleNonPositiveError,
)
from .model import ConfusionMatrix, SystemConfig
from .policies import PolicyRef, decide

__all__ = [
    "Job",
    "QueueState",
    "Curves",
    "PathResult",
    "RateSchedule",
    "run_path",
    "sample_classification",
    "composition_snapshot",
    "export_jobs_csv",
    "export_curves_csv",
]

_INF = float("inf")

# Substream indices within a path's Philox stream.
_SUB_ARRIVALS, _SUB_CLASSES, _SUB_SERVICES, _SUB_LABELS = 0, 1, 2, 3


class Job:
    """One job's record; `remaining` is only refreshed at preemption/horizon."""

    __slots__ = ("id", "arrival_time", "true_class", "predicted_class",
                 "service_req", "remaining", "completion_time", "started")

    def __init__(self, id, arrival_time, true_class, predicted_class, service_req):
        self.id = id
        self.arrival_time = arrival_time
        self.true_class = true_class
        self.predicted_class = predicted_class
        self.service_req = service_req
        self.remaining = service_req
        self.completion_time = None
        self.started = False

    @property
    def sojourn(self) -> Optional[float]:
        if self.completion_time is None:
            return None
        return self.completion_time - self.arrival_time

    def __repr__(self):  # pragma: no cover - debugging aid
        return (f"Job(id={self.id}, t={self.arrival_time:.4g}, k={self.true_class}, "
                f"l={self.predicted_class}, s={self.service_req:.4g}, done={self.completion_time})")


class QueueState:
    """Live state of the system, grouped by scheduling class.

    pred_counts is always available (it is what the non-oracle policies see);
    true_counts is gated behind the oracle-visibility flag so that a policy
    asking for true classes against a blinded run fails loudly.
    """

    __slots__ = ("clock", "queues", "pred_counts", "_true_counts", "comp",
                 "oracle_visible", "n_classes")

    def __init__(self, n_classes: int, oracle_visible: bool = False):
        self.clock = 0.0
        self.n_classes = n_classes
        self.queues = [deque() for _ in range(n_classes)]
        self.pred_counts = [0] * n_classes
        self._true_counts = [0] * n_classes
        self.comp = [[0] * n_classes for _ in range(n_classes)]  # comp[k][l]
        self.oracle_visible = oracle_visible

    @property
    def true_counts(self):
        if not self.oracle_visible:
            raise OracleUnavailableError(
                "true-class queue lengths requested from a run without oracle visibility"
            )
        return self._true_counts

    def head_arrivals(self):
        """Arrival time of the oldest job per scheduling class (inf if empty)."""
        return [q[0].arrival_time if q else _INF for q in self.queues]


def composition_snapshot(state: QueueState) -> np.ndarray:
    """N~_kl matrix: present jobs counted by (true class k, predicted class l)."""
    return np.array(state.comp, dtype=np.int64)


def sample_classification(true_class: int, q: ConfusionMatrix, rng: Generator) -> int:
    """Inverse-CDF draw of the predicted label from row `true_class` of Q."""
    row = np.cumsum(q.entries[true_class])
    return int(np.searchsorted(row, rng.random(), side="right"))


@dataclass(frozen=True)
class RateSchedule:
    """Time-varying rate multiplier m(t) with a declared upper bound.

    The bound is what makes thinning-based arrival generation exact, so it
    must dominate the multiplier everywhere on [0, horizon]; the engine
    checks every evaluation.  Multipliers must stay strictly positive.
    """

    multiplier: Callable[[float], float]
    max_multiplier: float

    def __call__(self, t: float) -> float:
        m = self.multiplier(t)
        if m <= 0.0:
            raise ScheduleNonPositiveError(f"rate multiplier {m} at t={t} (must be > 0)")
        if m > self.max_multiplier * (1.0 + 1e-12):
            raise ConfigError(
                f"rate multiplier {m} at t={t} exceeds declared bound {self.max_multiplier}"
            )
        return m

    @classmethod
    def constant(cls, m: float) -> "RateSchedule":
        return cls(multiplier=lambda t: m, max_multiplier=m)

    @classmethod
    def sinusoidal(cls, amplitude_frac: float, omega: float, floor_frac: float = 0.5) -> "RateSchedule":
        """m(t) = max(floor_frac, 1 + amplitude_frac * sin(omega t)).

        With a base rate lam this reproduces rate(t) = max(lam*floor_frac,
        lam + r*sin(omega t)) for amplitude_frac = r/lam.
        """
        def m(t, a=amplitude_frac, w=omega, f=floor_frac):
            return max(f, 1.0 + a * math.sin(w * t))
        return cls(multiplier=m, max_multiplier=max(floor_frac, 1.0 + abs(amplitude_frac)))


@dataclass(frozen=True)
class Curves:
    """State sampled on an even time grid over [0, horizon]."""

    grid: np.ndarray          # (G,)
    queue_lengths: np.ndarray  # (G, K)   jobs present per predicted class
    workload: np.ndarray      # (G,)     total remaining work W_+(t)
    composition: np.ndarray   # (G, K, K) present jobs by (true, predicted)


@dataclass(frozen=True)
class PathResult:
    """One simulated sample path.

    jobs are in arrival order; open jobs at the horizon have
    completion_time None and `remaining` equal to their unfinished work.
    arrival_workloads[i] is W_+ immediately after the i-th arrival -- an
    event-aligned trace that is comparable across policies and classifiers
    because arrival epochs are shared under a common seed.
    """

    jobs: list
    curves: Curves
    seed: int
    event_count: int
    horizon: float
    n_classes: int
    policy_kind: str
    arrival_times: np.ndarray
    arrival_workloads: np.ndarray

    @property
    def completed(self) -> list:
        return [j for j in self.jobs if j.completion_time is not None]

    @property
    def open_jobs(self) -> list:
        return [j for j in self.jobs if j.completion_time is None]


def _uniform_to_positive(u: float) -> float:
    # rng.random() is in [0, 1); 1-u is in (0, 1], making -log safe.
    return 1.0 - u


def _make_service_sampler(dist, rates: np.ndarray, rng: Generator):
    """Returns draw(true_class) -> service requirement with mean 1/mu_k."""
    family, params = _dist_family(dist)
    if family == "exponential":
        def draw(k):
            return -math.log(_uniform_to_positive(rng.random())) / rates[k]
    elif family == "deterministic":
        def draw(k):
            return 1.0 / rates[k]
    elif family == "lognormal":
        sigma = float(params.get("sigma", 0.5))
        mu_log = -0.5 * sigma * sigma  # exp(m + s Z) has mean exp(m + s^2/2)
        def draw(k):
            z = ndtri(_uniform_to_positive(rng.random()))
            return math.exp(mu_log + sigma * z) / rates[k]
    else:
        raise ConfigError(f"unknown service distribution family {family!r}")
    return draw


def _make_interarrival_sampler(dist, lam: float, rng: Generator):
    family, params = _dist_family(dist)
    if family == "exponential":
        def draw(rate=lam):
            return -math.log(_uniform_to_positive(rng.random())) / rate
    elif family == "deterministic":
        def draw(rate=lam):
            return 1.0 / rate
    elif family == "lognormal":
        sigma = float(params.get("sigma", 0.5))
        mu_log = -0.5 * sigma * sigma
        def draw(rate=lam):
            z = ndtri(_uniform_to_positive(rng.random()))
            return math.exp(mu_log + sigma * z) / rate
    else:
        raise ConfigError(f"unknown arrival distribution family {family!r}")
    return family, draw


def _dist_family(dist):
    if isinstance(dist, str):
        return dist, {}
    if isinstance(dist, dict):
        return dist.get("family", "exponential"), dist
    raise ConfigError(f"distribution tag must be str or dict, got {type(dist)}")


def run_path(config: SystemConfig, policy, seed: int, sampling_grid: int = 51, *,
             arrival_schedule: Optional[RateSchedule] = None,
             service_schedule: Optional[RateSchedule] = None,
             event_cap: int = 5_000_000) -> PathResult:
    """Simulate [0, horizon] under one policy and seed; fully deterministic.

    The policy re-evaluates at arrivals and completions only; queue-length
    indices are constant between events, so no decision could change anywhere
    else.  `policy` may be a PolicyRef or one of {"oracle","naive","pcmu","fcfs"}.
    """
    if sampling_grid < 2:
        raise ConfigError("sampling_grid must be >= 2")
    if isinstance(policy, str):
        policy = PolicyRef.for_config(policy, config)
    if arrival_schedule is not None and _dist_family(config.arrival_dist)[0] != "exponential":
        raise ConfigError("arrival schedules require exponential interarrivals (thinning)")

    k_classes = config.n_classes
    horizon = config.horizon
    lam = config.lam
    by_true = policy.uses_true_class

    root = Philox(key=seed)
    rngs = [Generator(root.jumped(i)) for i in (_SUB_ARRIVALS, _SUB_CLASSES,
                                                _SUB_SERVICES, _SUB_LABELS)]
    rng_arr, rng_cls, rng_srv, rng_lab = rngs

    _, draw_gap = _make_interarrival_sampler(config.arrival_dist, lam, rng_arr)
    draw_service = _make_service_sampler(config.service_dist, config.service_rates, rng_srv)
    prev_cdf = np.cumsum(config.prevalences)
    label_cdf = np.cumsum(config.confusion.entries, axis=1)

    if arrival_schedule is None:
        def next_arrival(t):
            return t + draw_gap()
    else:
        lam_max = lam * arrival_schedule.max_multiplier
        def next_arrival(t):
            # Poisson thinning at the bounding rate.
            while True:
                t = t - math.log(_uniform_to_positive(rng_arr.random())) / lam_max
                m = arrival_schedule(t)
                if m >= arrival_schedule.max_multiplier:
                    return t  # acceptance certain: don't burn a thinning draw
                if rng_arr.random() * arrival_schedule.max_multiplier <= m:
                    return t

    state = QueueState(k_classes, oracle_visible=by_true)
    queues = state.queues
    pred_counts = state.pred_counts
    true_counts = state._true_counts
    comp = state.comp
    sched_counts = true_counts if by_true else pred_counts

    grid = np.linspace(0.0, horizon, sampling_grid)
    rec_n = np.zeros((sampling_grid, k_classes), dtype=np.int64)
    rec_w = np.zeros(sampling_grid)
    rec_comp = np.zeros((sampling_grid, k_classes, k_classes), dtype=np.int64)
    gi = 0  # next grid index to record

    jobs: list[Job] = []
    arrival_w: list[float] = []

    w = 0.0          # Lindley workload
    w_t = 0.0        # time w refers to
    serving: Optional[Job] = None
    serving_end = _INF
    serving_class = -1
    t_arr = next_arrival(0.0)
    events = 0

    def start_service(job: Job, now: float):
        nonlocal serving, serving_end, serving_class, w, w_t
        if service_schedule is not None and not job.started:
            m = service_schedule(now)
            scaled = job.remaining / m
            # keep the workload tracker consistent with the rescaled requirement
            w = max(0.0, w - (now - w_t)) + (scaled - job.remaining)
            w_t = now
            job.remaining = scaled
        job.started = True
        serving = job
        serving_class = job.true_class if by_true else job.predicted_class
        serving_end = now + job.remaining

    def choose_and_start(now: float):
        nonlocal serving, serving_end, serving_class
        target = decide(state, policy)
        if target is None:
            serving, serving_end, serving_class = None, _INF, -1
            return
        if serving is not None and target == serving_class:
            return  # head unchanged; same job keeps the server
        if serving is not None:
            serving.remaining = serving_end - now  # preempt, resume later
        start_service(queues[target][0], now)

    while True:
        t_next = serving_end if serving_end <= t_arr else t_arr
        bound = horizon if t_next > horizon else t_next
        while gi < sampling_grid and grid[gi] < bound:
            rec_n[gi] = pred_counts
            rec_w[gi] = max(0.0, w - (grid[gi] - w_t))
            rec_comp[gi] = comp
            gi += 1
        if t_next > horizon:
            break
        events += 1
        if events > event_cap:
            raise EventOverflowError(
                f"exceeded {event_cap} events before t={t_next:.4g} (horizon {horizon}); "
                "check rho or raise event_cap"
            )
        state.clock = t_next

        if serving_end <= t_arr:
            # completion of the serving job (head of its queue)
            t = serving_end
            job = queues[serving_class].popleft()
            job.completion_time = t
            job.remaining = 0.0
            pred_counts[job.predicted_class] -= 1
            true_counts[job.true_class] -= 1
            comp[job.true_class][job.predicted_class] -= 1
            serving, serving_end, serving_class = None, _INF, -1
            choose_and_start(t)
        else:
            # arrival
            t = t_arr
            k = int(np.searchsorted(prev_cdf, rng_cls.random(), side="right"))
            s = draw_service(k)
            l = int(np.searchsorted(label_cdf[k], rng_lab.random(), side="right"))
            job = Job(len(jobs), t, k, l, s)
            jobs.append(job)
            queues[job.true_class if by_true else l].append(job)
            pred_counts[l] += 1
            true_counts[k] += 1
            comp[k][l] += 1
            w = max(0.0, w - (t - w_t)) + s
            w_t = t
            arrival_w.append(w)
            t_arr = next_arrival(t)
            if serving is None or policy.preemptive:
                choose_and_start(t)

    # flush remaining grid points (state is frozen past the last event <= horizon)
    while gi < sampling_grid:
        rec_n[gi] = pred_counts
        rec_w[gi] = max(0.0, w - (grid[gi] - w_t))
        rec_comp[gi] = comp
        gi += 1
    if serving is not None:
        serving.remaining = serving_end - horizon  # unfinished work at the horizon
    state.clock = horizon

    curves = Curves(grid=grid, queue_lengths=rec_n, workload=rec_w, composition=rec_comp)
    return PathResult(
        jobs=jobs,
        curves=curves,
        seed=seed,
        event_count=events,
        horizon=horizon,
        n_classes=k_classes,
        policy_kind=policy.kind,
        arrival_times=np.array([j.arrival_time for j in jobs]),
        arrival_workloads=np.array(arrival_w),
    )


def export_jobs_csv(result: PathResult, path):
    """One row per job: id, arrival, true/predicted class, service, completion, sojourn."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "arrival", "true_class", "predicted_class",
                         "service", "completion", "sojourn"])
        for j in result.jobs:
            done = "" if j.completion_time is None else repr(float(j.completion_time))
            soj = "" if j.sojourn is None else repr(float(j.sojourn))
            writer.writerow([j.id, repr(float(j.arrival_time)), j.true_class,
                             j.predicted_class, repr(float(j.service_req)), done, soj])


def export_curves_csv(result: PathResult, path):
    """Grid rows: t, N_1..N_K (predicted-class queue lengths), W_plus."""
    c = result.curves
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"N_{l + 1}" for l in range(result.n_classes)] + ["W_plus"])
        for i, t in enumerate(c.grid):
            writer.writerow([repr(float(t))] + [int(v) for v in c.queue_lengths[i]]
                            + [repr(float(c.workload[i]))])
