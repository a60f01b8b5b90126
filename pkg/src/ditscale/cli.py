"""Command-line surface.

    ditscale sweep    --config sweep.json [--store DIR] [--workers N] [--force]
    ditscale fit      --store DIR --sweep ID | --from-optima points.json
    ditscale predict  --report report.json --at C
    ditscale compare  reportA.json reportB.json
    ditscale eval     --store DIR --sweep ID --run RUN [--ood] [--metrics ...]
    ditscale flops    --arch in-context|cross-attn --layers N --d-model D ...
    ditscale plot     --store DIR --sweep ID --kind isoflop|laws [--report P]
    ditscale fixtures emit-reference-laws|emit-desk-sweep --out PATH

Exit codes: 0 success, 1 usage/config error, 2 missing or inconsistent store
data, 3 numerical failure (divergence, rejected fits).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .datagen import distribution_from_dict
from .errors import ConfigError, DitscaleError, NumericalError, StoreError
from .evalkit import EvalConfig, evaluate_set
from .fixtures import emit_reference_laws, load_series
from .flops import (TransformerShape, crossattn_flops, crossattn_itemized,
                    incontext_flops, incontext_itemized, kaplan_count)
from .formulations import sampler_from_dict
from .scalelab import (ScalingReport, build_report, compare_configs, predict,
                       exponent_sum_check, report_from_series, run_sweep)
from .store import RunStore, SweepConfig, default_store_root
from .svgplot import Figure
from .trainer import TrainConfig


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the ConfigError path."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args):
    sweep = SweepConfig.load(args.config)
    if args.seed is not None:
        sweep.master_seed = args.seed
    workers = args.workers if args.workers else sweep.workers
    store = RunStore(args.store)
    with store.lock(sweep.sweep_id):
        points = run_sweep(sweep, store, workers=workers, force=args.force,
                           log=print)
    survivors = {}
    for p in points:
        survivors[p.c] = survivors.get(p.c, 0) + 1
    lost = [b for b in sweep.budgets if survivors.get(float(b), 0) == 0]
    print(f"sweep {sweep.sweep_id}: {len(points)} completed runs over "
          f"{len(survivors)} budgets -> {store.sweep_dir(sweep.sweep_id)}")
    if lost:
        raise NumericalError(f"every run diverged for budgets {lost}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _fid_by_budget(store, sweep_id):
    """Fréchet distance of the lowest-loss evaluated run per budget."""
    best = {}
    for run_id in store.run_ids(sweep_id):
        rec = store.read_run(sweep_id, run_id)
        fd = rec.metrics.get("in_domain", {}).get("frechet_distance")
        if rec.diverged or fd is None:
            continue
        cur = best.get(rec.budget)
        if cur is None or rec.final_ema_loss < cur[0]:
            best[rec.budget] = (rec.final_ema_loss, fd)
    return {b: fd for b, (_, fd) in best.items()}


def cmd_fit(args):
    if args.from_optima:
        series = load_series(args.from_optima)
        report = report_from_series(series["budgets"], series["n_opt"],
                                    series["d_opt"], series["loss"],
                                    series.get("fid"),
                                    fingerprint="optima-series")
        out = args.out or "report.json"
    else:
        if not args.sweep:
            raise ConfigError("fit needs --sweep (or --from-optima)")
        store = RunStore(args.store)
        points = store.load_points(args.sweep)
        manifest = store.read_manifest(args.sweep)
        report = build_report(points, fid_by_budget=_fid_by_budget(store, args.sweep),
                              fingerprint=manifest.get("fingerprint", ""))
        out = args.out or os.path.join(store.reports_dir(args.sweep), "report.json")
        csv_path = out[:-5] + "_optima.csv" if out.endswith(".json") else out + ".csv"
        _write(csv_path, report.optima_csv())
    report.save(out)
    print(f"wrote {out}")
    _print_report(report)
    return 0


def _print_report(report: ScalingReport):
    def law(name, fit):
        if fit is None:
            return
        print(f"  {name}: y = {fit.k:.6g} * C^{fit.exponent:.6g}   "
              f"(R^2 = {fit.r_squared:.6f}, C in [{fit.c_min:g}, {fit.c_max:g}])")

    print("fitted scaling laws:")
    law("N_opt", report.n_law)
    law("D_opt", report.d_law)
    law("loss ", report.l_law)
    law("fid  ", report.fid_law)
    diag = exponent_sum_check(report)
    flag = "ok" if diag.consistent else "INCONSISTENT"
    print(f"  exponent sum e_N + e_D = {diag.exponent_sum:.4f} [{flag}], "
          f"e_D/e_N = {diag.data_to_model_ratio:.4f}")
    for budget, reason in sorted(report.excluded.items()):
        print(f"  excluded budget {budget:g}: {reason}")


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args):
    import warnings

    report = ScalingReport.load(args.report)
    c = args.at
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        n_opt = predict(report.n_law, c)
        d_opt = predict(report.d_law, c)
        loss = predict(report.l_law, c)
        fid = predict(report.fid_law, c) if report.fid_law else None
    if not report.l_law.c_min <= c <= report.l_law.c_max:
        print(f"note: C = {c:g} is outside the fitted range "
              f"[{report.l_law.c_min:g}, {report.l_law.c_max:g}]; extrapolating")
    print(f"at C = {c:g}:")
    print(f"  N_opt ~= {n_opt:.6g} parameters")
    print(f"  D_opt ~= {d_opt:.6g} tokens")
    print(f"  loss  ~= {loss:.6g}")
    if fid is not None:
        print(f"  fid   ~= {fid:.6g}")
    implied = 6.0 * n_opt * d_opt
    print(f"  consistency: 6 * N_opt * D_opt = {implied:.4g} "
          f"({implied / c:.4f} * C)")
    return 0


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args):
    report_a = ScalingReport.load(args.report_a)
    report_b = ScalingReport.load(args.report_b)
    names = (args.names.split(",") if args.names else
             [os.path.splitext(os.path.basename(p))[0]
              for p in (args.report_a, args.report_b)])
    comparison = compare_configs(report_a, report_b, names[0], names[1])
    print(comparison.as_text())
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    store = RunStore(args.store)
    record = store.read_run(args.sweep, args.run)
    if record.diverged:
        raise NumericalError(f"run {args.run} diverged; nothing to evaluate")
    params = store.read_params(args.sweep, args.run)
    run_cfg = TrainConfig.from_dict(record.config)
    config = EvalConfig(n_points=args.n_points, nll_steps=args.nll_steps,
                        timesteps_per_point=args.timesteps_per_point,
                        sampling_steps=args.sampling_steps,
                        cfg_scale=args.cfg_scale, seed=args.seed)
    wanted = set(args.metrics.split(","))
    unknown = wanted - {"loss", "vlb", "nll", "frechet"}
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")

    datasets = {"in_domain": run_cfg.dataset}
    if args.ood:
        manifest = store.read_manifest(args.sweep)
        datasets["ood"] = distribution_from_dict(manifest["config"]["ood_dataset"])

    metrics_doc = {}
    for name, dist in datasets.items():
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 99]))
        eval_set = dist.sample(config.n_points, rng)
        m = evaluate_set(params, eval_set, config, sampler=run_cfg.sampler)
        doc = m.to_dict()
        keep = {"loss": ["val_loss", "val_loss_stderr"],
                "vlb": ["offset_vlb", "offset_vlb_stderr", "vlb_clamp"],
                "nll": ["offset_nll", "offset_nll_stderr"],
                "frechet": ["frechet_distance"]}
        doc = {k: v for metric in wanted for k, v in doc.items()
               if k in keep[metric]}
        metrics_doc[name] = doc
        pretty = ", ".join(f"{k}={v:.6g}" for k, v in doc.items())
        print(f"{args.run} [{name}]: {pretty}")
    store.attach_metrics(args.sweep, args.run, metrics_doc)
    return 0


# ---------------------------------------------------------------------------
# flops


def cmd_flops(args):
    shape = TransformerShape(n_layer=args.layers, d_model=args.d_model,
                             l_img=args.l_img, l_text=args.l_text,
                             l_time=args.l_time,
                             d_attn=args.d_attn, d_ff=args.d_ff)
    if args.arch == "in-context":
        breakdown = incontext_itemized(shape)
        simplified = incontext_flops(shape) if not args.itemized_only else None
    else:
        breakdown = crossattn_itemized(shape)
        simplified = crossattn_flops(shape) if not args.itemized_only else None
    print(f"{args.arch} transformer, {args.layers} layers, d_model {args.d_model}, "
          f"l_img {args.l_img}, l_text {args.l_text}, l_time {args.l_time}")
    print(breakdown.as_text())
    if simplified is not None:
        print(f"simplified: {simplified:,} FLOPs/sample "
              f"({'matches' if simplified == breakdown.total else 'DIFFERS FROM'} "
              "itemized total)")
    print(f"bias-free parameter count: {kaplan_count(shape):,}")
    if args.csv:
        _write(args.csv, breakdown.as_csv())
    return 0


# ---------------------------------------------------------------------------
# plot


def _isoflop_plot(store, sweep_id, report):
    points = store.load_points(sweep_id)
    by_budget = {}
    for p in points:
        by_budget.setdefault(p.c, []).append(p)
    fig = Figure(title="isoFLOP curves", x_label="log10 parameters",
                 y_label="final EMA loss")
    csv_lines = ["series,budget,run_id,log10_n,loss"]
    for idx, budget in enumerate(sorted(by_budget)):
        pts = sorted(by_budget[budget], key=lambda p: p.n)
        xs = [math.log10(p.n) for p in pts]
        ys = [p.loss for p in pts]
        fig.add(xs, ys, label=f"C={budget:g}", kind="scatter")
        for p, x in zip(pts, xs):
            csv_lines.append(f"points,{budget!r},{p.run_id},{x!r},{p.loss!r}")
        fit = (report.parabolas or {}).get(budget) if report else None
        if fit is not None:
            grid = np.linspace(min(xs), max(xs), 64)
            curve = [fit.loss_at(g) for g in grid]
            fig.add(grid, curve, kind="line")
            for g, v in zip(grid, curve):
                csv_lines.append(f"parabola,{budget!r},,{float(g)!r},{float(v)!r}")
    return fig.to_svg(), "\n".join(csv_lines) + "\n"


def _laws_plot(report):
    laws = [("n_opt", report.n_law), ("d_opt", report.d_law),
            ("loss", report.l_law)]
    if report.fid_law:
        laws.append(("fid", report.fid_law))
    budgets = sorted(report.parabolas)
    fig = Figure(title="scaling laws", x_label="log10 compute",
                 y_label="log10 value")
    csv_lines = ["series,budget,value,fitted"]
    for name, law in laws:
        stored = {"n_opt": [report.parabolas[b].n_opt for b in budgets],
                  "d_opt": [report.parabolas[b].d_opt for b in budgets],
                  "loss": [report.parabolas[b].l_opt for b in budgets],
                  "fid": None}[name] if budgets else None
        if stored:
            xs = [math.log10(b) for b in budgets]
            fig.add(xs, [math.log10(v) for v in stored],
                    label=name, kind="scatter")
            for b, v in zip(budgets, stored):
                fitted = law.k * b**law.exponent
                csv_lines.append(f"{name},{b!r},{v!r},{fitted!r}")
        lo, hi = math.log10(law.c_min), math.log10(law.c_max)
        grid = np.linspace(lo, hi, 32)
        fig.add(grid, [math.log10(law.k) + law.exponent * g for g in grid],
                kind="line", label=None if stored else name)
        ext = np.linspace(hi, hi + 1.0, 8)  # one decade of extrapolation
        fig.add(ext, [math.log10(law.k) + law.exponent * g for g in ext],
                kind="dashed")
    return fig.to_svg(), "\n".join(csv_lines) + "\n"


def cmd_plot(args):
    store = RunStore(args.store)
    report = None
    if args.report:
        report = ScalingReport.load(args.report)
    elif args.kind == "laws" or args.sweep:
        default = os.path.join(store.reports_dir(args.sweep or ""), "report.json")
        if os.path.exists(default):
            report = ScalingReport.load(default)
    if args.kind == "isoflop":
        if not args.sweep:
            raise ConfigError("isoflop plot needs --sweep")
        svg, csv = _isoflop_plot(store, args.sweep, report)
        prefix = args.out or os.path.join(store.reports_dir(args.sweep), "isoflop")
    else:
        if report is None:
            raise StoreError("laws plot needs a fitted report (--report or run fit)")
        svg, csv = _laws_plot(report)
        prefix = args.out or (os.path.join(store.reports_dir(args.sweep), "laws")
                              if args.sweep else "laws")
    _write(prefix + ".svg", svg)
    _write(prefix + ".csv", csv)
    return 0


# ---------------------------------------------------------------------------
# fixtures


# Desk-scale defaults, empirically calibrated so the isoFLOP pipeline resolves
# clean convex parabolas on one CPU: the lowest budget is deliberately starved
# (its optimum sits at the edge of the grid and the fit stage excludes it),
# the other three budgets give every grid model enough steps to clear the
# steep undertrained regime, and the strong classic-EMA smoothing compensates
# the small desk batch when reading off final losses.
DESK_SWEEP = {
    "schema_version": 1,
    "sweep_id": "desk-default",
    "budgets": [1e9, 2.6e10, 8.8e10, 3e11],
    "grid": [[1, 7], [2, 7], [3, 7], [4, 7], [5, 7]],
    "dataset": {"kind": "gaussian_mixture",
                "means": [[2, 2], [-2, 2], [-2, -2], [2, -2]],
                "std": 0.5, "shift": [0, 0]},
    "ood_dataset": {"kind": "gaussian_mixture",
                    "means": [[2, 2], [-2, 2], [-2, -2], [2, -2]],
                    "std": 0.5, "shift": [3, 3]},
    "schedule": {"kind": "rf"},
    "timestep_sampler": {"kind": "logit_normal", "m": 0.0, "s": 1.0},
    "model_base": {"data_dim": 2, "num_classes": 4,
                   "time_embed_dim": 8, "cond_embed_dim": 4},
    "train_base": {"batch_size": 256, "lr_schedule": "constant",
                   "label_drop_prob": 0.1, "ema_alpha": 0.99,
                   "ema_mode": "classic"},
    "master_seed": 1234,
    "workers": 1,
}


def cmd_fixtures(args):
    if args.what == "emit-reference-laws":
        for path in emit_reference_laws(args.out):
            print(f"wrote {path}")
    elif args.what == "emit-desk-sweep":
        target = args.out if args.out.endswith(".json") \
            else os.path.join(args.out, "desk_sweep.json")
        _write(target, json.dumps(DESK_SWEEP, indent=1) + "\n")
    else:
        raise ConfigError(f"unknown fixture kind {args.what!r}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="ditscale",
                     description="scaling-law laboratory for velocity models")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_store(p):
        p.add_argument("--store", default=default_store_root(),
                       help="run-store directory (env DITSCALE_STORE)")

    p = sub.add_parser("sweep", help="train a budget x model-size grid")
    p.add_argument("--config", required=True)
    add_store(p)
    p.add_argument("--workers", type=int, default=0,
                   help="parallel training processes (default: from config)")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--force", action="store_true", help="retrain completed runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit isoFLOP parabolas and power laws")
    add_store(p)
    p.add_argument("--sweep", help="sweep id inside the store")
    p.add_argument("--from-optima", help="fit directly from an optima-series JSON")
    p.add_argument("--out", help="report output path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="evaluate fitted laws at a budget")
    p.add_argument("--report", required=True)
    p.add_argument("--at", type=float, required=True, help="compute budget C")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="benchmark two fitted reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--names", help="comma-separated display names")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="evaluate a trained run")
    add_store(p)
    p.add_argument("--sweep", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--metrics", default="loss,vlb,nll,frechet")
    p.add_argument("--ood", action="store_true",
                   help="also evaluate on the sweep's out-of-domain dataset")
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--timesteps-per-point", type=int, default=100)
    p.add_argument("--nll-steps", type=int, default=500)
    p.add_argument("--sampling-steps", type=int, default=25)
    p.add_argument("--cfg-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="closed-form transformer FLOPs breakdown")
    p.add_argument("--arch", choices=("in-context", "cross-attn"),
                   default="in-context")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--d-model", type=int, required=True)
    p.add_argument("--l-img", type=int, default=256)
    p.add_argument("--l-text", type=int, default=120)
    p.add_argument("--l-time", type=int, default=1)
    p.add_argument("--d-attn", type=int, default=0)
    p.add_argument("--d-ff", type=int, default=0)
    p.add_argument("--itemized-only", action="store_true")
    p.add_argument("--csv", help="write the breakdown as CSV")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("plot", help="emit SVG plots with CSV twins")
    add_store(p)
    p.add_argument("--sweep")
    p.add_argument("--report")
    p.add_argument("--kind", choices=("isoflop", "laws"), required=True)
    p.add_argument("--out", help="output path prefix")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("fixtures", help="emit fixture documents")
    p.add_argument("what", choices=("emit-reference-laws", "emit-desk-sweep"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StoreError as exc:
        print(f"store error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DitscaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
