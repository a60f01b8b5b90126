"""IsoFLOP parabola fits, power-law fits, extrapolation, and the exponent
benchmark.

Per budget C, final losses of several model sizes are fit with an ordinary
least-squares parabola in (log10 N, loss); its vertex gives the compute-
optimal N_opt and L_opt for that budget, and D_opt = C / (6 N_opt). Across
budgets, (C, N_opt), (C, D_opt) and (C, L_opt) are fit with power laws
y = k * C^e by linear regression in log10-log10 space. Because C = 6 N D, the
N and D exponents must sum to 1 up to fit noise; exponent_sum_check asserts
this. Two fitted reports can be compared by their exponents: a lower loss
exponent means the pipeline converts compute into loss reduction faster, and
shifts between the model and data exponents indicate where additional compute
should go.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConcaveFitError, ConfigError, NumericalError

VERTEX_GUARD_DECADES = 0.5
EXPONENT_SUM_TOL = 0.02


@dataclass(frozen=True)
class IsoFlopPoint:
    """One completed run inside an isoFLOP sweep."""

    c: float
    n: int
    d: int
    loss: float
    run_id: str = ""


@dataclass(frozen=True)
class ParabolaFit:
    """Quadratic loss-vs-log10(N) fit for one budget."""

    budget: float
    a: float
    b: float
    c: float
    x_star: float
    l_opt: float
    n_opt: float
    d_opt: float
    residual_rms: float
    n_points: int

    def loss_at(self, log10_n) -> float:
        return self.a * log10_n**2 + self.b * log10_n + self.c

    def to_dict(self) -> dict:
        return {"budget": self.budget, "a": self.a, "b": self.b, "c": self.c,
                "x_star": self.x_star, "l_opt": self.l_opt, "n_opt": self.n_opt,
                "d_opt": self.d_opt, "residual_rms": self.residual_rms,
                "n_points": self.n_points}

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass(frozen=True)
class PowerLawFit:
    """y = k * C^exponent over a budget range, with log-space R^2."""

    k: float
    exponent: float
    r_squared: float
    c_min: float
    c_max: float

    def to_dict(self) -> dict:
        return {"k": self.k, "exponent": self.exponent,
                "r_squared": self.r_squared, "c_min": self.c_min,
                "c_max": self.c_max}

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass
class ScalingReport:
    """Fitted laws plus the per-budget parabolas they came from."""

    n_law: PowerLawFit
    d_law: PowerLawFit
    l_law: PowerLawFit
    fid_law: PowerLawFit | None = None
    parabolas: dict = field(default_factory=dict)  # budget -> ParabolaFit
    excluded: dict = field(default_factory=dict)   # budget -> reason
    fingerprint: str = ""
    schema_version: int = 1

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "fingerprint": self.fingerprint,
            "n_law": self.n_law.to_dict(),
            "d_law": self.d_law.to_dict(),
            "l_law": self.l_law.to_dict(),
            "fid_law": self.fid_law.to_dict() if self.fid_law else None,
            "parabolas": {repr(b): p.to_dict() for b, p in self.parabolas.items()},
            "excluded": {repr(b): r for b, r in self.excluded.items()},
        }

    @classmethod
    def from_dict(cls, doc) -> "ScalingReport":
        return cls(
            n_law=PowerLawFit.from_dict(doc["n_law"]),
            d_law=PowerLawFit.from_dict(doc["d_law"]),
            l_law=PowerLawFit.from_dict(doc["l_law"]),
            fid_law=PowerLawFit.from_dict(doc["fid_law"]) if doc.get("fid_law") else None,
            parabolas={float(b): ParabolaFit.from_dict(p)
                       for b, p in doc.get("parabolas", {}).items()},
            excluded={float(b): r for b, r in doc.get("excluded", {}).items()},
            fingerprint=doc.get("fingerprint", ""),
            schema_version=doc.get("schema_version", 1),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "ScalingReport":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def optima_csv(self) -> str:
        """CSV of the accepted per-budget optima."""
        lines = ["budget,n_opt,d_opt,l_opt"]
        for b in sorted(self.parabolas):
            p = self.parabolas[b]
            lines.append(f"{b!r},{p.n_opt!r},{p.d_opt!r},{p.l_opt!r}")
        return "\n".join(lines) + "\n"


def fit_parabola(points, guard_decades: float = VERTEX_GUARD_DECADES) -> ParabolaFit:
    """Least-squares parabola through (log10 N, loss) for one budget.

    Requires >= 3 points with distinct N sharing one budget. Rejects concave
    fits (a <= 0) and vertices more than guard_decades outside the swept
    range.
    """
    points = list(points)
    budgets = {p.c for p in points}
    if len(budgets) != 1:
        raise ConfigError(f"points span multiple budgets: {sorted(budgets)}")
    budget = budgets.pop()
    x = np.log10([p.n for p in points])
    y = np.array([p.loss for p in points], dtype=np.float64)
    if len(set(np.round(x, 12))) < 3:
        raise ConfigError(f"need >= 3 distinct model sizes, got {len(set(x))}")
    a, b, c = np.polyfit(x, y, 2)
    if a <= 0:
        raise ConcaveFitError(
            f"budget {budget:g}: parabola is concave (a={a:.3g}); no interior optimum")
    x_star = -b / (2.0 * a)
    lo, hi = x.min() - guard_decades, x.max() + guard_decades
    if not lo <= x_star <= hi:
        raise NumericalError(
            f"budget {budget:g}: vertex log10N={x_star:.3f} outside guarded "
            f"range [{lo:.3f}, {hi:.3f}]")
    l_opt = c - b * b / (4.0 * a)
    n_opt = 10.0 ** x_star
    resid = y - (a * x**2 + b * x + c)
    return ParabolaFit(
        budget=float(budget), a=float(a), b=float(b), c=float(c),
        x_star=float(x_star), l_opt=float(l_opt), n_opt=float(n_opt),
        d_opt=float(budget / (6.0 * n_opt)),
        residual_rms=float(np.sqrt(np.mean(resid**2))), n_points=len(points))


def fit_power_law(pairs) -> PowerLawFit:
    """Fit y = k * C^e by least squares of log10 y on log10 C.

    pairs: iterable of (C, y), all positive, >= 3 of them.
    """
    pairs = [(float(c), float(y)) for c, y in pairs]
    if len(pairs) < 3:
        raise ConfigError(f"need >= 3 (C, y) pairs, got {len(pairs)}")
    if any(c <= 0 or y <= 0 for c, y in pairs):
        raise ConfigError("power-law fit requires positive values")
    cs = np.log10([c for c, _ in pairs])
    ys = np.log10([y for _, y in pairs])
    slope, intercept = np.polyfit(cs, ys, 1)
    pred = slope * cs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(k=float(10.0**intercept), exponent=float(slope),
                       r_squared=float(r2),
                       c_min=float(10.0**cs.min()), c_max=float(10.0**cs.max()))


def predict(fit: PowerLawFit, c: float) -> float:
    """Evaluate k * C^e; warns when C lies outside the fitted budget range."""
    if c <= 0:
        raise ConfigError(f"compute must be > 0, got {c}")
    if not fit.c_min <= c <= fit.c_max:
        warnings.warn(f"C={c:g} outside fit domain [{fit.c_min:g}, {fit.c_max:g}]; "
                      "extrapolating", stacklevel=2)
    return fit.k * c**fit.exponent


@dataclass(frozen=True)
class ExponentDiagnostic:
    exponent_sum: float
    data_to_model_ratio: float
    consistent: bool
    tolerance: float = EXPONENT_SUM_TOL


def exponent_sum_check(report: ScalingReport,
                       tolerance: float = EXPONENT_SUM_TOL) -> ExponentDiagnostic:
    """C = 6 N D forces e_N + e_D = 1; flag reports that violate it."""
    e_n, e_d = report.n_law.exponent, report.d_law.exponent
    total = e_n + e_d
    return ExponentDiagnostic(
        exponent_sum=total,
        data_to_model_ratio=e_d / e_n,
        consistent=abs(total - 1.0) <= tolerance,
        tolerance=tolerance)


def build_report(points, fid_by_budget=None, fingerprint: str = "") -> ScalingReport:
    """Group isoFLOP points by budget, fit parabolas, then fit the power laws.

    Budgets whose parabola is rejected (concave, guarded vertex, or < 3
    points) are recorded in `excluded` and left out of the law fits, and out
    of the FID law as well. fid_by_budget maps budget -> Fréchet distance of
    the compute-optimal model.
    """
    by_budget = {}
    for p in points:
        by_budget.setdefault(p.c, []).append(p)
    parabolas, excluded = {}, {}
    for budget in sorted(by_budget):
        try:
            parabolas[budget] = fit_parabola(by_budget[budget])
        except (ConfigError, NumericalError) as exc:
            excluded[budget] = str(exc)
    if len(parabolas) < 3:
        raise NumericalError(
            f"only {len(parabolas)} budgets survived parabola fitting; "
            f"need >= 3 (excluded: {excluded})")
    budgets = sorted(parabolas)
    n_law = fit_power_law([(b, parabolas[b].n_opt) for b in budgets])
    d_law = fit_power_law([(b, parabolas[b].d_opt) for b in budgets])
    l_law = fit_power_law([(b, parabolas[b].l_opt) for b in budgets])
    fid_law = None
    if fid_by_budget:
        fid_pairs = [(b, fid_by_budget[b]) for b in budgets if b in fid_by_budget]
        if len(fid_pairs) >= 3:
            fid_law = fit_power_law(fid_pairs)
    return ScalingReport(n_law=n_law, d_law=d_law, l_law=l_law, fid_law=fid_law,
                         parabolas=parabolas, excluded=excluded,
                         fingerprint=fingerprint)


def report_from_series(budgets, n_opt, d_opt, loss, fid=None,
                       fingerprint: str = "") -> ScalingReport:
    """Report fitted directly from per-budget optimal series (no parabolas)."""
    n_law = fit_power_law(list(zip(budgets, n_opt)))
    d_law = fit_power_law(list(zip(budgets, d_opt)))
    l_law = fit_power_law(list(zip(budgets, loss)))
    fid_law = fit_power_law(list(zip(budgets, fid))) if fid is not None else None
    return ScalingReport(n_law=n_law, d_law=d_law, l_law=l_law, fid_law=fid_law,
                         fingerprint=fingerprint)


# ---------------------------------------------------------------------------
# exponent benchmark


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    model_exponent: float
    data_exponent: float
    loss_exponent: float


@dataclass(frozen=True)
class Comparison:
    rows: tuple
    verdicts: tuple

    def as_text(self) -> str:
        header = f"{'configuration':<20} {'model exp':>10} {'data exp':>10} {'loss exp':>10}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(f"{r.name:<20} {r.model_exponent:>10.2f} "
                         f"{r.data_exponent:>10.2f} {r.loss_exponent:>10.4f}")
        lines.append("")
        lines.extend(self.verdicts)
        return "\n".join(lines)


def compare_configs(report_a: ScalingReport, report_b: ScalingReport,
                    name_a: str = "A", name_b: str = "B",
                    atol: float = 1e-9) -> Comparison:
    """Benchmark two fitted reports by their exponents.

    Requires both reports to be fitted over the same budget range. Verdicts
    follow from: a smaller (more negative) loss exponent means a better
    training pipeline; with the dataset fixed, a smaller model exponent /
    larger data exponent means the model uses data more efficiently, so extra
    compute should go toward more data.
    """
    for attr in ("c_min", "c_max"):
        va, vb = getattr(report_a.l_law, attr), getattr(report_b.l_law, attr)
        if not np.isclose(va, vb, rtol=1e-9):
            raise ConfigError(
                f"reports fitted over different budget domains ({attr}: {va:g} vs {vb:g})")
    row_a = ComparisonRow(name_a, report_a.n_law.exponent,
                          report_a.d_law.exponent, report_a.l_law.exponent)
    row_b = ComparisonRow(name_b, report_b.n_law.exponent,
                          report_b.d_law.exponent, report_b.l_law.exponent)
    verdicts = []
    dl = row_b.loss_exponent - row_a.loss_exponent
    dm = row_b.model_exponent - row_a.model_exponent
    if abs(dl) <= atol and abs(dm) <= atol and \
            abs(row_b.data_exponent - row_a.data_exponent) <= atol:
        verdicts.append("indistinguishable: all exponents agree")
    else:
        if abs(dl) > atol:
            better = name_b if dl < 0 else name_a
            verdicts.append(
                f"loss exponent favors {better}: compute converts to loss "
                f"reduction faster ({row_a.loss_exponent:.4f} vs {row_b.loss_exponent:.4f})")
        if abs(dm) > atol:
            leaner = name_b if dm < 0 else name_a
            verdicts.append(
                f"{leaner} has the smaller model exponent: with budget growth it "
                "should spend relatively more compute on data than on parameters")
    return Comparison(rows=(row_a, row_b), verdicts=tuple(verdicts))


# ---------------------------------------------------------------------------
# sweep execution


def _train_and_persist(args):
    """Worker entry: train one run and write its documents."""
    from .store import RunStore
    from .trainer import TrainConfig, train

    store_root, sweep_id, run_id, config_doc = args
    config = TrainConfig.from_dict(config_doc)
    record, params = train(config, run_id=run_id)
    store = RunStore(store_root)
    store.write_run(sweep_id, record, None if record.diverged else params)
    return run_id, record.diverged


def run_sweep(sweep, store, workers: int = 1, force: bool = False, log=None):
    """Train the full budget x model grid, persist run documents, and return
    the surviving IsoFlopPoints.

    Completed run ids are skipped unless force is set, which makes interrupted
    sweeps resumable: per-run seeds depend only on (master_seed, budget index,
    model index), so a resumed store is identical to an uninterrupted one.
    Diverged runs are kept in the store but not returned.
    """
    all_jobs = list(sweep.jobs())
    jobs = []
    for job in all_jobs:
        if not force and store.run_complete(sweep.sweep_id, job.run_id):
            continue
        jobs.append((str(store.root), sweep.sweep_id, job.run_id,
                     job.config.to_dict()))
    if log:
        log(f"sweep {sweep.sweep_id}: training {len(jobs)} of {len(all_jobs)} runs "
            f"({len(all_jobs) - len(jobs)} already complete)")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_and_persist, jobs))
    else:
        results = [_train_and_persist(j) for j in jobs]
    for run_id, diverged in results:
        if diverged:
            warnings.warn(f"run {run_id} diverged; excluded from fitting")
    store.rebuild_manifest(sweep)
    return store.load_points(sweep.sweep_id)
