"""Run configuration, reference optima, grid search and file export.

One epoch of a single-loop method is ``N`` oracle evaluations; nested-loop
methods (TRSVR, SVRG, SARAH) count outer loops, and their records carry the
effective-pass count alongside, so curves can be compared on either axis.

Output files are written atomically and always carry the schema version and
the fully resolved configuration, so a run can be rebuilt from its sidecar.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import CSV_FIELDS, MetricsRecord, Recorder, Trajectory
from .optimizer import BaselineConfig, ConfigError, Method, TrsvrConfig, run_method
from .problem import (
    LogisticProblem,
    ObjectiveMode,
    ObjectiveSpec,
    generate_synthetic,
    load_libsvm,
)
from .tr_solver import HessianMode

SCHEMA = "trsvr/1"

FSTAR_GRAD_TOL_SQ = 1e-24
FSTAR_MAX_ITERS = 10_000

# Per-epoch budget b * S shared by the sensitivity regimes below.
DEFAULT_BUDGET = 40_000
BUDGET_REGIMES = {
    "large_batch": (500, 800, 1000, 2000, 4000),
    "balanced": (100, 200, 400),
    "high_frequency": (10, 20, 40, 50),
}


class HarnessIOError(OSError):
    pass


class GridError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    n_samples: int
    n_features: int
    condition_number: float
    seed: int = 0
    max_eigenvalue: float | None = None
    kind: str = field(default="synthetic", init=False)

    def load(self):
        data, _ = generate_synthetic(self.n_samples, self.n_features, self.condition_number,
                                     self.seed, self.max_eigenvalue)
        return data


@dataclass(frozen=True)
class LibsvmSource:
    path: str
    kind: str = field(default="libsvm", init=False)

    def load(self):
        try:
            return load_libsvm(self.path)
        except OSError as exc:
            raise HarnessIOError(f"cannot read {self.path}: {exc}") from exc


def _source_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "synthetic":
        return SyntheticSource(**d)
    if kind == "libsvm":
        return LibsvmSource(**d)
    raise ConfigError(f"unknown problem source {kind!r}")


def _method_from_dict(d):
    d = dict(d)
    if d.get("method") == Method.TRSVR.value:
        d.pop("method")
        return TrsvrConfig(**d)
    return BaselineConfig(**d)


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    ``epochs``, ``seed`` and ``record_every`` override the method config's
    own fields. ``x0`` is ``"zeros"`` or ``"normal"`` (standard normal, seeded
    from ``seed``). ``f_star`` may be ``None`` (gaps are NaN) or a number;
    ``f_star_label`` says whether it is a global or a local reference.
    With ``wall_clock=False`` timings are recorded as zero, which makes the
    CSV byte-reproducible.
    """

    source: SyntheticSource | LibsvmSource
    objective: ObjectiveSpec
    method: TrsvrConfig | BaselineConfig
    epochs: float = 10
    seed: int = 0
    record_every: int | None = None
    x0: str = "normal"
    f_star: float | None = None
    f_star_label: str | None = None
    output_path: str | None = None
    wall_clock: bool = True

    def resolved_method(self):
        epochs = self.epochs
        if isinstance(self.method, TrsvrConfig):
            if epochs != int(epochs):
                raise ConfigError("TRSVR epochs count outer loops and must be an integer")
            epochs = int(epochs)
        return dataclasses.replace(self.method, epochs=epochs, seed=self.seed,
                                   record_every=self.record_every)

    @property
    def method_name(self) -> str:
        m = self.method
        if isinstance(m, TrsvrConfig):
            return f"trsvr-{m.hessian_mode.value}"
        return m.method.value

    def to_dict(self) -> dict:
        obj = dataclasses.asdict(self.objective)
        obj["mode"] = self.objective.mode.value
        return {
            "schema": SCHEMA,
            "source": dataclasses.asdict(self.source),
            "objective": obj,
            "method": self.method.to_dict(),
            "epochs": self.epochs,
            "seed": self.seed,
            "record_every": self.record_every,
            "x0": self.x0,
            "f_star": self.f_star,
            "f_star_label": self.f_star_label,
            "output_path": self.output_path,
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        schema = d.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported schema {schema!r}")
        try:
            return cls(
                source=_source_from_dict(d.pop("source")),
                objective=ObjectiveSpec(**d.pop("objective")),
                method=_method_from_dict(d.pop("method")),
                **d,
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed run config: {exc}") from exc

    def build_problem(self) -> LogisticProblem:
        return LogisticProblem(self.objective, self.source.load())

    def initial_point(self, dim: int):
        if self.x0 == "zeros":
            return np.zeros(dim)
        if self.x0 == "normal":
            return np.random.default_rng((self.seed, 1)).standard_normal(dim)
        raise ConfigError(f"unknown x0 rule {self.x0!r}")


def export_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_json(text: str) -> RunConfig:
    """Inverse of :func:`export_json`; also accepts a run sidecar."""
    d = json.loads(text)
    if "config" in d:
        d = d["config"]
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def export_csv(records) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rec in records:
        writer.writerow([_fmt(getattr(rec, name)) for name in CSV_FIELDS])
    return out.getvalue()


def parse_csv(text: str) -> list[MetricsRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {header!r}")
    out = []
    for row in reader:
        method, seed, *rest = row
        out.append(MetricsRecord(method, int(seed), *(float(v) for v in rest)))
    return out


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise HarnessIOError(f"cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# Reference optimum
# ---------------------------------------------------------------------------

@dataclass
class FStarResult:
    f_star: float
    grad_norm: float
    converged: bool
    label: str
    x: np.ndarray
    iterations: int


def compute_fstar(problem, x0=None, grad_tol_sq: float = FSTAR_GRAD_TOL_SQ,
                  max_iters: int = FSTAR_MAX_ITERS, delta0: float = 1.0) -> FStarResult:
    """Deterministic trust-region Newton-CG with the exact Hessian and full gradients.

    Stops once ``||g||^2 <= grad_tol_sq`` or after ``max_iters`` iterations.
    On a nonconvex objective the value is only a local reference. If the
    tolerance is not met the best point found is returned with
    ``converged=False`` and a warning.
    """
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    cfg = BaselineConfig(Method.CLASSIC_TR, delta0=delta0, delta_max=1e3 * delta0,
                         hessian_mode=HessianMode.EXACT, cg_max_iters=max(500, 2 * problem.dim),
                         epochs=math.inf, max_iters=max_iters, grad_tol_sq=grad_tol_sq,
                         record_every=max_iters + 1)
    traj = run_method(problem, cfg, x0, Recorder(problem, "fstar", wall_clock=False))
    x = traj.final_iterate
    f = problem.value(x)
    g = problem.gradient(x)
    gsq = float(g @ g)
    converged = gsq <= grad_tol_sq
    spec = getattr(problem, "spec", None)
    nonconvex = spec is not None and spec.mode is ObjectiveMode.NONCONVEX
    if not converged:
        warnings.warn(f"reference run stopped at ||g||^2 = {gsq:.3g}", RuntimeWarning)
    iters = len(traj.outer_log) - 1
    return FStarResult(f, math.sqrt(gsq), converged,
                       "local_reference" if nonconvex else "global", x, iters)


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: RunConfig
    trajectory: Trajectory
    csv_path: Path | None = None
    json_path: Path | None = None

    @property
    def diverged(self) -> bool:
        return self.trajectory.diverged


def sidecar(cfg: RunConfig, traj: Trajectory) -> dict:
    c = traj.counters
    return {
        "schema": SCHEMA,
        "config": cfg.to_dict(),
        "method": traj.method,
        "diverged": bool(traj.diverged),
        "f_star": cfg.f_star,
        "f_star_label": cfg.f_star_label,
        "counters": {
            "component_grad_evals": c.component_grad_evals,
            "full_grad_evals": c.full_grad_evals,
            "hvp_probe_evals": c.hvp_probe_evals,
            "effective_passes": c.effective_passes,
        },
        "n_records": len(traj.records),
        "cauchy_bound_violations": traj.cauchy_bound_violations,
        "stationary_events": [list(e) for e in traj.stationary_events],
    }


def output_stem(cfg: RunConfig) -> str:
    return f"{cfg.method_name}-seed{cfg.seed}"


def run_experiment(cfg: RunConfig, problem=None, write: bool = True) -> ExperimentResult:
    """Run one configuration; write ``<stem>.csv`` and ``<stem>.json`` under ``output_path``.

    ``problem`` may be passed to skip rebuilding the data. Diverged runs are
    still written, flagged in the sidecar.
    """
    method_cfg = cfg.resolved_method()
    problem = cfg.build_problem() if problem is None else problem
    x0 = cfg.initial_point(problem.dim)
    rec = Recorder(problem, cfg.method_name, cfg.seed, cfg.f_star, wall_clock=cfg.wall_clock)
    traj = run_method(problem, method_cfg, x0, rec)
    res = ExperimentResult(cfg, traj)
    if write and cfg.output_path is not None:
        out = Path(cfg.output_path)
        stem = output_stem(cfg)
        res.csv_path = atomic_write(out / f"{stem}.csv", export_csv(traj.records))
        res.json_path = atomic_write(out / f"{stem}.json",
                                     json.dumps(sidecar(cfg, traj), indent=2, sort_keys=True) + "\n")
    return res


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

METRICS = ("final_gap", "final_grad_norm_sq", "passes_to_threshold")


@dataclass
class GridSpec:
    """``axes`` maps a field name (of the method config, or ``seed``) to its values."""

    axes: dict[str, list]
    metric: str = "final_gap"
    threshold: float | None = None
    threshold_metric: str = "optimality_gap"

    def __post_init__(self):
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ConfigError("grid axes must be nonempty")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if self.metric == "passes_to_threshold" and self.threshold is None:
            raise ConfigError("passes_to_threshold needs a threshold")

    def cells(self) -> list[dict]:
        names = sorted(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


def log_axis(lo: float, hi: float, num: int) -> list[float]:
    return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), num)]


@dataclass
class GridRow:
    params: dict
    score: float
    diverged: bool
    final: MetricsRecord | None

    def sort_key(self):
        s = self.score if math.isfinite(self.score) else math.inf
        return (self.diverged, s, tuple(sorted(self.params.items())))


@dataclass
class GridResult:
    rows: list[GridRow]
    best: RunConfig

    def to_csv(self) -> str:
        names = sorted(self.rows[0].params) if self.rows else []
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["rank", *names, "score", "diverged", "effective_passes", "f_value", "grad_norm_sq"])
        for i, r in enumerate(self.rows, 1):
            f = r.final
            w.writerow([i, *(_fmt(r.params[n]) for n in names), _fmt(r.score), int(r.diverged),
                        *(_fmt(v) for v in ((f.effective_passes, f.f_value, f.grad_norm_sq) if f
                                            else (math.nan,) * 3))])
        return out.getvalue()


def apply_params(base: RunConfig, params: dict) -> RunConfig:
    top = {k: v for k, v in params.items() if k in ("seed", "epochs", "record_every", "x0")}
    inner = {k: v for k, v in params.items() if k not in top}
    try:
        method = dataclasses.replace(base.method, **inner)
    except TypeError as exc:
        raise ConfigError(f"unknown grid axis: {exc}") from exc
    return dataclasses.replace(base, method=method, output_path=None, **top)


def _score(traj: Trajectory, grid: GridSpec) -> float:
    if traj.diverged or not traj.records:
        return math.inf
    fin = traj.final
    if grid.metric == "final_gap":
        v = fin.optimality_gap
    elif grid.metric == "final_grad_norm_sq":
        v = fin.grad_norm_sq
    else:
        v = traj.passes_to(grid.threshold, grid.threshold_metric)
    return v if math.isfinite(v) else math.inf


def _run_cell(args):
    cfg, grid, problem = args
    try:
        traj = run_experiment(cfg, problem, write=False).trajectory
    except FloatingPointError:
        return math.inf, True, None
    return _score(traj, grid), bool(traj.diverged), traj.final if traj.records else None


def grid_search(base: RunConfig, grid: GridSpec, workers: int = 1, problem=None) -> GridResult:
    """Run every cell and rank by the grid's metric (lower is better).

    Diverged cells rank last. Ties are broken by the sorted parameter tuple,
    so the result does not depend on axis or value order. With ``final_gap``
    and no ``f_star`` on the base config, one is computed first. A ranked
    CSV is written to ``base.output_path/grid.csv`` when a path is set.
    ``problem`` replaces the one described by ``base.source`` when given.
    """
    problem = base.build_problem() if problem is None else problem
    needs_fstar = grid.metric == "final_gap" or (
        grid.metric == "passes_to_threshold" and grid.threshold_metric == "optimality_gap")
    if needs_fstar:
        if base.f_star is None:
            ref = compute_fstar(problem)
            base = dataclasses.replace(base, f_star=ref.f_star, f_star_label=ref.label)
    cells = grid.cells()
    cfgs = [apply_params(base, p) for p in cells]
    for c in cfgs:
        c.resolved_method()
    jobs = [(c, grid, problem) for c in cfgs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [GridRow(p, *r) for p, r in zip(cells, results)]
    if all(r.diverged for r in rows):
        raise GridError("every grid cell diverged")
    rows.sort(key=GridRow.sort_key)
    best = apply_params(base, rows[0].params)
    best = dataclasses.replace(best, output_path=base.output_path)
    result = GridResult(rows, best)
    if base.output_path is not None:
        atomic_write(Path(base.output_path) / "grid.csv", result.to_csv())
    return result


# ---------------------------------------------------------------------------
# Budget sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BudgetCell:
    batch_size: int
    inner_len: int
    budget: int


def budget_sweep(budget: int = DEFAULT_BUDGET, batch_sizes=None, regime: str | None = None) -> list[BudgetCell]:
    """``(b, S)`` pairs with ``b * S == budget`` exactly.

    Batch sizes come from ``batch_sizes`` or a named regime; a size that does
    not divide the budget is an error, never rounded.
    """
    if batch_sizes is None:
        if regime is None:
            batch_sizes = sorted(set(itertools.chain(*BUDGET_REGIMES.values())))
        elif regime in BUDGET_REGIMES:
            batch_sizes = BUDGET_REGIMES[regime]
        else:
            raise ConfigError(f"unknown regime {regime!r}; choose from {sorted(BUDGET_REGIMES)}")
    cells = []
    for b in batch_sizes:
        b = int(b)
        if b < 1 or budget % b:
            raise ConfigError(f"batch size {b} does not divide the budget {budget}")
        cells.append(BudgetCell(b, budget // b, budget))
    return cells


def run_budget_sweep(base: RunConfig, cells, problem=None) -> list[ExperimentResult]:
    if not isinstance(base.method, TrsvrConfig):
        raise ConfigError("budget sweeps vary the TRSVR schedule")
    problem = base.build_problem() if problem is None else problem
    out = []
    for cell in cells:
        method = dataclasses.replace(base.method, batch_size=cell.batch_size, inner_len=cell.inner_len)
        path = None if base.output_path is None else str(Path(base.output_path) / f"b{cell.batch_size}-S{cell.inner_len}")
        out.append(run_experiment(dataclasses.replace(base, method=method, output_path=path), problem))
    return out
