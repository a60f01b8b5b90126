"""Reference-law fixtures.

Synthetic per-budget optimum series generated from published large-scale
power-law fits for diffusion-transformer pretraining. Fitting these exact
points exercises the regression pipeline end to end without any training, and
the recovered coefficients must round-trip to the reference values.

REFERENCE_LAWS holds (k, exponent) of y = k * C^e for the compute-optimal
model size (parameters), data size (tokens), final loss, and Fréchet distance;
REFERENCE_BUDGETS are the six budgets those fits were made over. The benchmark
fixture carries the published exponent table for the two conditioning
architectures (in-context vs cross-attention) at full precision where
published: model/data exponents to two decimals, loss exponents to four.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .scalelab import ScalingReport, report_from_series

REFERENCE_BUDGETS = (1e17, 3e17, 6e17, 1e18, 3e18, 6e18)

REFERENCE_LAWS = {
    "n_opt": (0.0009, 0.5681),
    "d_opt": (186.8535, 0.4319),
    "loss": (2.3943, -0.0273),
    "fid": (2.2566e6, -0.234),
}

# (model exponent, data exponent, loss exponent) per conditioning architecture
BENCHMARK_EXPONENTS = {
    "in_context": (0.56, 0.43, -0.0273),
    "cross_attention": (0.54, 0.46, -0.0385),
}

# extrapolation used to sanity-check the n_opt law: ~958.3M parameters at 1.5e21
REFERENCE_EXTRAPOLATION_C = 1.5e21
REFERENCE_EXTRAPOLATION_N = 958.3e6


def law_points(k: float, exponent: float, budgets=REFERENCE_BUDGETS):
    """Exact (C, k * C^e) pairs."""
    return [(float(c), float(k * c**exponent)) for c in budgets]


def reference_series(budgets=REFERENCE_BUDGETS) -> dict:
    """All four reference series evaluated at the given budgets."""
    out = {"budgets": [float(c) for c in budgets]}
    for name, (k, e) in REFERENCE_LAWS.items():
        out[name] = [float(k * c**e) for c in budgets]
    return out


def reference_report(budgets=REFERENCE_BUDGETS) -> ScalingReport:
    """Report fitted from the exact reference series."""
    series = reference_series(budgets)
    return report_from_series(series["budgets"], series["n_opt"],
                              series["d_opt"], series["loss"], series["fid"],
                              fingerprint="reference-laws")


def benchmark_report(name: str, budgets=REFERENCE_BUDGETS) -> ScalingReport:
    """Report with the benchmark exponents of one architecture.

    Coefficients are not published for the benchmark table, so the n/d series
    reuse the reference coefficients with the table's exponents; only the
    exponents are meaningful for comparison.
    """
    em, ed, el = BENCHMARK_EXPONENTS[name]
    budgets = [float(c) for c in budgets]
    n = [REFERENCE_LAWS["n_opt"][0] * c**em for c in budgets]
    d = [REFERENCE_LAWS["d_opt"][0] * c**ed for c in budgets]
    loss = [REFERENCE_LAWS["loss"][0] * c**el for c in budgets]
    return report_from_series(budgets, n, d, loss, fingerprint=f"benchmark-{name}")


def emit_reference_laws(out_dir) -> list:
    """Write the fixture documents; returns the created paths.

    reference_points.json holds the exact series (consumable by
    `ditscale fit --from-optima`); the two benchmark_*.json files are
    ready-made reports for `ditscale compare`.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    points_path = os.path.join(out_dir, "reference_points.json")
    with open(points_path, "w") as f:
        json.dump({"schema_version": 1, "series": reference_series()}, f, indent=1)
    paths.append(points_path)
    for name in BENCHMARK_EXPONENTS:
        path = os.path.join(out_dir, f"benchmark_{name}.json")
        benchmark_report(name).save(path)
        paths.append(path)
    return paths


def load_series(path) -> dict:
    with open(path) as f:
        doc = json.load(f)
    return doc["series"] if "series" in doc else doc
