"""Convergence records and the recorder that produces them."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import EvalCounter

CSV_FIELDS = (
    "method",
    "seed",
    "epoch",
    "effective_passes",
    "wall_clock_s",
    "f_value",
    "grad_norm_sq",
    "optimality_gap",
)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    seed: int
    epoch: float
    effective_passes: float
    wall_clock_s: float
    f_value: float
    grad_norm_sq: float
    optimality_gap: float


class Recorder:
    """Measures ``f`` and ``||grad f||^2`` at chosen points of a run.

    Measurement is free: it neither touches the run's counters nor counts
    towards the wall clock. A point whose effective-pass count equals the last
    recorded one is skipped.
    """

    def __init__(self, problem, method: str = "", seed: int = 0, f_star: float | None = None,
                 wall_clock: bool = True, blowup_factor: float = 1e8):
        self.problem = problem
        self.method = method
        self.seed = seed
        self.f_star = f_star
        self.wall_clock = wall_clock
        self.blowup_factor = blowup_factor
        self.records: list[MetricsRecord] = []
        self.diverged = False
        self._f0 = None
        self._start = time.perf_counter()
        self._paused = 0.0

    def restart_clock(self):
        self._start = time.perf_counter()
        self._paused = 0.0

    def record(self, epoch: float, counter: EvalCounter, x) -> MetricsRecord | None:
        t_enter = time.perf_counter()
        passes = counter.effective_passes
        if self.records and passes <= self.records[-1].effective_passes:
            return None
        elapsed = t_enter - self._start - self._paused if self.wall_clock else 0.0
        x = np.asarray(x)
        if np.all(np.isfinite(x)):
            f = self.problem.value(x)
            g = self.problem.gradient(x)
            gsq = float(g @ g)
        else:
            f = gsq = math.nan
        if self._f0 is None:
            self._f0 = f
        if not (math.isfinite(f) and math.isfinite(gsq)) or (
            abs(f) > self.blowup_factor * (1.0 + abs(self._f0))
        ):
            self.diverged = True
        gap = f - self.f_star if self.f_star is not None else math.nan
        rec = MetricsRecord(self.method, int(self.seed), float(epoch), float(passes),
                            float(elapsed), float(f), gsq, float(gap))
        self.records.append(rec)
        self._paused += time.perf_counter() - t_enter
        return rec


@dataclass
class Trajectory:
    method: str
    records: list[MetricsRecord]
    final_iterate: np.ndarray
    counters: EvalCounter
    diverged: bool = False
    stationary_events: list[tuple[int, int]] = field(default_factory=list)
    cauchy_bound_violations: int = 0
    outer_log: list[dict] = field(default_factory=list)
    """Per outer loop: counter deltas and CG iteration totals (nested-loop methods)."""

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]

    def passes_to(self, threshold: float, metric: str = "optimality_gap") -> float:
        """First effective-pass count at which ``metric <= threshold`` (inf if never)."""
        for rec in self.records:
            if getattr(rec, metric) <= threshold:
                return rec.effective_passes
        return math.inf
