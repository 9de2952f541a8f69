"""Censoring-aware survival evaluation.

Implements the concordance index with the standard 0.5 tie credit, the
product-limit survival estimator, the two-group log-rank test, and
median-risk stratification. Conventions: censor = 0 means the event was
observed, censor = 1 means right-censored; censored subjects at time t
remain at risk for events occurring exactly at t.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .errors import DegenerateInputError, MetricError


@dataclass
class RiskedPatient:
    """One evaluated patient: predicted risk, observed time, censor flag."""

    risk: float
    time: float
    censor: int

    def __post_init__(self):
        if self.time <= 0.0:
            raise MetricError(f"time must be positive, got {self.time}")
        if self.censor not in (0, 1):
            raise MetricError(f"censor must be 0 or 1, got {self.censor}")


@dataclass
class KMCurve:
    """Product-limit estimate evaluated after each distinct event time."""

    times: np.ndarray      # distinct event times, ascending
    survival: np.ndarray   # S just after each event time
    at_risk: np.ndarray    # subjects at risk entering each event time
    events: np.ndarray     # events at each time

    def points(self) -> list[tuple[float, float, int, int]]:
        """(time, survival, at_risk, events) rows for step-function export."""
        return [
            (float(t), float(s), int(n), int(d))
            for t, s, n, d in zip(self.times, self.survival, self.at_risk, self.events)
        ]


def concordance_index(patients: list[RiskedPatient]) -> float:
    """Fraction of comparable pairs ranked concordantly by risk.

    A pair (i, j) is comparable when time_i < time_j and patient i is
    uncensored; it counts 1 when risk_i > risk_j, 0.5 on a risk tie.
    """
    concordant = 0.0
    comparable = 0
    for i, a in enumerate(patients):
        if a.censor != 0:
            continue
        for j, b in enumerate(patients):
            if i == j or not a.time < b.time:
                continue
            comparable += 1
            if a.risk > b.risk:
                concordant += 1.0
            elif a.risk == b.risk:
                concordant += 0.5
    if comparable == 0:
        raise MetricError("concordance undefined: no comparable pairs")
    return concordant / comparable


def kaplan_meier(patients: list[RiskedPatient]) -> KMCurve:
    """Product-limit estimator over the distinct observed event times."""
    if not patients:
        raise MetricError("kaplan_meier needs at least one patient")
    times = np.array([p.time for p in patients])
    events = np.array([p.censor == 0 for p in patients])
    event_times = np.unique(times[events])
    surv = []
    at_risk = []
    died = []
    s = 1.0
    for t in event_times:
        n = int(np.sum(times >= t))
        d = int(np.sum(events & (times == t)))
        s *= 1.0 - d / n
        at_risk.append(n)
        died.append(d)
        surv.append(s)
    return KMCurve(
        times=event_times.astype(np.float64),
        survival=np.array(surv, dtype=np.float64),
        at_risk=np.array(at_risk, dtype=np.int64),
        events=np.array(died, dtype=np.int64),
    )


def logrank_test(group_a: list[RiskedPatient],
                 group_b: list[RiskedPatient]) -> tuple[float, float]:
    """Two-group log-rank test; returns (chi_square, p_value).

    chi^2 = (sum(O_a - E_a))^2 / sum(V) over distinct pooled event times,
    with the usual hypergeometric variance; p from the chi-square survival
    function with one degree of freedom.
    """
    if not group_a or not group_b:
        raise MetricError("logrank_test needs two nonempty groups")
    times_a = np.array([p.time for p in group_a])
    times_b = np.array([p.time for p in group_b])
    ev_a = np.array([p.censor == 0 for p in group_a])
    ev_b = np.array([p.censor == 0 for p in group_b])
    if not (ev_a.any() or ev_b.any()):
        raise MetricError("logrank_test needs at least one event")

    event_times = np.unique(np.concatenate([times_a[ev_a], times_b[ev_b]]))
    observed_minus_expected = 0.0
    variance = 0.0
    for t in event_times:
        n_a = int(np.sum(times_a >= t))
        n_b = int(np.sum(times_b >= t))
        d_a = int(np.sum(ev_a & (times_a == t)))
        d_b = int(np.sum(ev_b & (times_b == t)))
        n = n_a + n_b
        d = d_a + d_b
        if n < 2 or d == 0:
            continue
        expected_a = d * n_a / n
        observed_minus_expected += d_a - expected_a
        variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if variance == 0.0:
        raise DegenerateInputError("logrank_test: zero variance (no informative times)")
    chi_square = observed_minus_expected ** 2 / variance
    return float(chi_square), chi_square_p_value(chi_square)


def chi_square_p_value(chi_square: float) -> float:
    """Survival function of the chi-square distribution with 1 d.o.f.

    Equals the regularized upper incomplete gamma Q(1/2, x/2).
    """
    if chi_square < 0.0:
        raise MetricError(f"chi-square statistic must be >= 0, got {chi_square}")
    return float(gammaincc(0.5, chi_square / 2.0))


def stratify_median(patients: list[RiskedPatient]
                    ) -> tuple[list[RiskedPatient], list[RiskedPatient]]:
    """Split patients at the median predicted risk.

    Risk strictly above the median goes high; at or below goes low. The
    median of an even count is the midpoint of the two central order
    statistics, so both strata are nonempty unless risks are degenerate.
    """
    if len(patients) < 2:
        raise MetricError("stratify_median needs at least 2 patients")
    risks = np.sort([p.risk for p in patients])
    mid = len(risks) // 2
    if len(risks) % 2 == 0:
        median = 0.5 * (risks[mid - 1] + risks[mid])
    else:
        median = risks[mid]
    low = [p for p in patients if p.risk <= median]
    high = [p for p in patients if p.risk > median]
    if not high:
        warnings.warn("all risks at or below the median; high-risk stratum is empty")
    return low, high
