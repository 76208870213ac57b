"""Command-line entry point: ``trsvr <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 diverged run, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    BUDGET_REGIMES,
    DEFAULT_BUDGET,
    GridError,
    GridSpec,
    HarnessIOError,
    LibsvmSource,
    RunConfig,
    SyntheticSource,
    atomic_write,
    budget_sweep,
    compute_fstar,
    export_csv,
    export_json,
    grid_search,
    parse_csv,
    parse_json,
    run_budget_sweep,
    run_experiment,
)
from .optimizer import BaselineConfig, ConfigError, Method, TrsvrConfig
from .problem import LibsvmParseError, ObjectiveSpec, generate_synthetic, save_libsvm

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _add_problem_args(p):
    g = p.add_argument_group("problem")
    g.add_argument("--data", help="LIBSVM file; omit to use a synthetic problem")
    g.add_argument("--n-samples", type=int, default=8000)
    g.add_argument("--n-features", type=int, default=32)
    g.add_argument("--condition", type=float, default=1e4)
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--max-eigenvalue", type=float)
    g.add_argument("--objective", choices=("convex", "nonconvex"), default="convex")
    g.add_argument("--l2", type=float, default=1e-4)
    g.add_argument("--dw-coef", type=float, default=1e-4)
    g.add_argument("--dw-center", type=float, default=0.5)


def _add_run_args(p):
    _add_problem_args(p)
    g = p.add_argument_group("method")
    g.add_argument("--config", help="run config JSON (other flags are ignored)")
    g.add_argument("--method", choices=[m.value for m in Method], default="trsvr")
    g.add_argument("--alpha", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int, default=1)
    g.add_argument("--inner", type=int)
    g.add_argument("--hessian", choices=("id", "esth", "exact"), default="esth")
    g.add_argument("--cg-max", type=int)
    g.add_argument("--gamma1", type=float)
    g.add_argument("--gamma2", type=float)
    g.add_argument("--delta0", type=float, default=1.0)
    g.add_argument("--epochs", type=float, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--record-every", type=int)
    g.add_argument("--x0", choices=("zeros", "normal"), default="normal")
    g.add_argument("--fstar", help="reference optimum: a number, or 'auto' to compute it")
    g.add_argument("--no-wall-clock", action="store_true", help="record zero timings (byte-stable CSV)")
    g.add_argument("--out", help="output directory")


def _objective(a):
    if a.objective == "convex":
        return ObjectiveSpec.convex(a.l2)
    return ObjectiveSpec.nonconvex(a.l2, a.dw_coef, a.dw_center)


def _source(a):
    if a.data:
        return LibsvmSource(a.data)
    return SyntheticSource(a.n_samples, a.n_features, a.condition, a.data_seed, a.max_eigenvalue)


def _method(a):
    if a.method == "trsvr":
        if a.alpha is None or a.inner is None:
            raise ConfigError("trsvr needs --alpha and --inner")
        return TrsvrConfig(a.alpha, a.batch, a.inner, a.hessian,
                           cg_max_iters=a.cg_max or 200)
    kw = dict(lr=a.lr, alpha=a.alpha, batch_size=a.batch, inner_len=a.inner,
              hessian_mode=a.hessian, gamma1=a.gamma1, gamma2=a.gamma2, delta0=a.delta0)
    if a.cg_max:
        kw["cg_max_iters"] = a.cg_max
    return BaselineConfig(a.method, **kw)


def _run_config(a) -> RunConfig:
    if a.config:
        try:
            cfg = parse_json(Path(a.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise HarnessIOError(str(exc)) from exc
        if a.out:
            cfg.output_path = a.out
        return cfg
    return RunConfig(_source(a), _objective(a), _method(a), epochs=a.epochs, seed=a.seed,
                     record_every=a.record_every, x0=a.x0, output_path=a.out,
                     wall_clock=not a.no_wall_clock)


def _resolve_fstar(cfg, a, problem):
    if a.config or not a.fstar:
        return cfg
    if a.fstar == "auto":
        ref = compute_fstar(problem)
        cfg.f_star, cfg.f_star_label = ref.f_star, ref.label
    else:
        cfg.f_star, cfg.f_star_label = float(a.fstar), "user"
    return cfg


def cmd_gen_synthetic(a):
    data, w_true = generate_synthetic(a.n_samples, a.n_features, a.condition, a.data_seed,
                                      a.max_eigenvalue)
    try:
        Path(a.out).parent.mkdir(parents=True, exist_ok=True)
        save_libsvm(data, a.out)
    except OSError as exc:
        raise HarnessIOError(str(exc)) from exc
    print(f"wrote {data!r} to {a.out}")
    return EXIT_OK


def cmd_fstar(a):
    cfg = RunConfig(_source(a), _objective(a), TrsvrConfig(1.0, 1, 1))
    ref = compute_fstar(cfg.build_problem(), max_iters=a.max_iters)
    out = {"f_star": ref.f_star, "grad_norm": ref.grad_norm, "converged": ref.converged,
           "label": ref.label, "iterations": ref.iterations}
    print(json.dumps(out))
    if a.out:
        atomic_write(a.out, json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def cmd_run(a):
    cfg = _run_config(a)
    problem = cfg.build_problem()
    cfg = _resolve_fstar(cfg, a, problem)
    res = run_experiment(cfg, problem)
    fin = res.trajectory.final
    print(f"{cfg.method_name}: passes={fin.effective_passes:.4g} f={fin.f_value:.10g} "
          f"|g|^2={fin.grad_norm_sq:.4g} gap={fin.optimality_gap:.4g}"
          + (f" -> {res.csv_path}" if res.csv_path else ""))
    if res.csv_path is None:
        sys.stdout.write(export_csv(res.trajectory.records))
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def cmd_grid(a):
    cfg = _run_config(a)
    cfg = _resolve_fstar(cfg, a, cfg.build_problem())
    axes = {}
    for spec in a.axis:
        name, _, values = spec.partition("=")
        if not values:
            raise ConfigError(f"axis {spec!r} must look like name=v1,v2,...")
        axes[name] = _ints(values) if name in ("batch_size", "inner_len", "seed") else _floats(values)
    grid = GridSpec(axes, a.metric, a.threshold)
    try:
        res = grid_search(cfg, grid, workers=a.workers)
    except GridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    sys.stdout.write(res.to_csv())
    if a.out:
        atomic_write(Path(a.out) / "best.json", export_json(res.best))
    return EXIT_OK


def cmd_sweep_budget(a):
    cells = budget_sweep(a.budget, _ints(a.batches) if a.batches else None, a.regime)
    if a.method != "trsvr" or a.alpha is None:
        for c in cells:
            print(f"b={c.batch_size} S={c.inner_len} b*S={c.batch_size * c.inner_len}")
        return EXIT_OK
    a.inner = a.inner or cells[0].inner_len
    cfg = _run_config(a)
    problem = cfg.build_problem()
    cfg = _resolve_fstar(cfg, a, problem)
    results = run_budget_sweep(cfg, cells, problem)
    for c, r in zip(cells, results):
        fin = r.trajectory.final
        print(f"b={c.batch_size} S={c.inner_len} passes={fin.effective_passes:.4g} "
              f"|g|^2={fin.grad_norm_sq:.4g} gap={fin.optimality_gap:.4g}")
    return EXIT_DIVERGED if any(r.diverged for r in results) else EXIT_OK


def cmd_export(a):
    try:
        text = Path(a.input).read_text(encoding="utf-8")
    except OSError as exc:
        raise HarnessIOError(str(exc)) from exc
    if a.input.endswith(".json"):
        out = export_json(parse_json(text))
    else:
        out = export_csv(parse_csv(text))
    if a.out:
        atomic_write(a.out, out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trsvr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset in LIBSVM format")
    _add_problem_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("fstar", help="compute a reference optimum")
    _add_problem_args(p)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fstar)

    p = sub.add_parser("run", help="run one configuration")
    _add_run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid search over method hyperparameters")
    _add_run_args(p)
    p.add_argument("--axis", action="append", default=[], required=True,
                   help="name=v1,v2,... (repeatable)")
    p.add_argument("--metric", default="final_gap",
                   choices=("final_gap", "final_grad_norm_sq", "passes_to_threshold"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("sweep-budget", help="(b, S) cells at a fixed b*S budget, optionally run")
    _add_run_args(p)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--regime", choices=sorted(BUDGET_REGIMES))
    p.add_argument("--batches", help="comma-separated batch sizes")
    p.set_defaults(func=cmd_sweep_budget)

    p = sub.add_parser("export", help="re-emit a metrics CSV or run config in canonical form")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return a.func(a)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, LibsvmParseError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HarnessIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
