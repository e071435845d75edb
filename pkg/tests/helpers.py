"""Shared test utilities (no pytest imports here)."""

import numpy as np


def exact_int_w2(path) -> float:
    """Exact time integral of the squared workload along one simulated path.

    Between consecutive arrivals the workload drains linearly at unit rate,
    so each segment contributes a closed-form cubic.  Uses the per-arrival
    workload snapshots recorded by the engine; independent of the sampling
    grid resolution.
    """
    t = np.asarray(path.arrival_times, dtype=float)
    if t.size == 0:
        return 0.0
    w = np.asarray(path.arrival_workloads, dtype=float)
    dt = np.diff(np.append(t, path.horizon))
    busy = np.minimum(dt, w)
    return float(((w ** 3 - (w - busy) ** 3) / 3.0).sum())


def workload_at_horizon(path) -> float:
    """Workload W(T) implied by the last arrival snapshot."""
    t = np.asarray(path.arrival_times, dtype=float)
    if t.size == 0:
        return 0.0
    w = float(path.arrival_workloads[-1])
    return max(w - (path.horizon - float(t[-1])), 0.0)
