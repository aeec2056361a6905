"""Analytic tip-count model, trace measurements, and attack/anomaly metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import DataShard, Trigger, apply_trigger
from .ledger import Dag
from .model import ModelParams, predict


@dataclass(frozen=True)
class TipModelInput:
    """Inputs for the stationary tip-count formula.

    Give either the aggregate per-iteration delay h, or the expanded
    compute-cost terms (eta0, phi0, beta, eta1, phi1, alpha, f) from which
    h derives.
    """

    k: int
    lam: float
    h: float | None = None
    eta0: float | None = None
    phi0: float | None = None
    beta: float | None = None
    eta1: float | None = None
    phi1: float | None = None
    alpha: float | None = None
    f: float | None = None

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(
                f"tip model needs k >= 2 (divides by k-1), got k={self.k}"
            )
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        expanded = (self.eta0, self.phi0, self.beta, self.eta1, self.phi1,
                    self.alpha, self.f)
        if self.h is None:
            if any(v is None for v in expanded):
                raise ValueError("need h or the full expanded form")
            if any(v <= 0 for v in expanded):
                raise ValueError("expanded terms must all be > 0")
        elif self.h <= 0:
            raise ValueError(f"h must be > 0, got {self.h}")


def expected_tips(inp: TipModelInput) -> float:
    """Stationary mean tip count: k*lam*h/(k-1), h expanded when not given."""
    if inp.h is not None:
        return inp.k * inp.lam * inp.h / (inp.k - 1)
    return (inp.k * inp.lam
            * (inp.eta0 * inp.phi0 * inp.beta + inp.eta1 * inp.phi1 * inp.alpha)
            / ((inp.k - 1) * inp.f))


def measure_tips(rows, window: tuple[float, float]) -> float:
    """Time-weighted mean of the tips column over [t1, t2].

    Rows form a step function: each row's tip count holds until the next
    row's time. Rows need `time` and `tips` attributes.
    """
    t1, t2 = window
    if not t2 > t1:
        raise ValueError(f"empty window [{t1}, {t2}]")
    inside = [(r.time, r.tips) for r in rows if t1 <= r.time <= t2]
    before = [(r.time, r.tips) for r in rows if r.time < t1]
    points = ([(t1, before[-1][1])] if before and (not inside or inside[0][0] > t1)
              else []) + inside
    if not points:
        raise ValueError("no samples in window")
    total = 0.0
    for i, (t, tips) in enumerate(points):
        t_next = points[i + 1][0] if i + 1 < len(points) else t2
        total += tips * (t_next - t)
    return total / (t2 - points[0][0])


def attack_success_rate(model: ModelParams, test: DataShard, trigger: Trigger,
                        classes: int | None = None) -> float:
    """Fraction of triggered test samples classified as (true label + 1) mod C."""
    if len(test) == 0:
        raise ValueError("empty test shard")
    c = test.classes if classes is None else classes
    triggered = apply_trigger(test.features, trigger)
    target = (test.labels + 1) % c
    return float(np.mean(predict(model, triggered) == target))


@dataclass(frozen=True)
class AnomalyReport:
    per_node: dict[int, float | None]  # None = node published nothing
    undefined_count: int
    r: float | None  # mean contribution over nodes with defined rates
    r0: float | None  # same, over the abnormal set
    ratio: float | None  # r0 / r


def anomaly_report(dag: Dag, m: int, node_ids: list[int],
                   abnormal_ids: list[int] | tuple[int, ...] = ()) -> AnomalyReport:
    """Contribution rates at threshold m, overall vs the abnormal subset."""
    per_node = {n: dag.contribution_rate(n, m) for n in node_ids}
    defined = [v for v in per_node.values() if v is not None]
    undefined = sum(1 for v in per_node.values() if v is None)
    abnormal = [per_node[n] for n in abnormal_ids
                if n in per_node and per_node[n] is not None]
    r = float(np.mean(defined)) if defined else None
    r0 = float(np.mean(abnormal)) if abnormal else None
    ratio = None
    if r is not None and r0 is not None and r > 0:
        ratio = r0 / r
    return AnomalyReport(per_node, undefined, r, r0, ratio)
