"""Bootstrap error bars, learning curves, and reconstruction diagnostics.

The bootstrap resamples whole shot words (bit-strings) per measurement
setting, preserving the correlations between overlapping observables that
share shots.  Resampling is implemented as multinomial weight vectors fed
to a weighted ``DatasetSource`` view, so the per-setting sign-product
caches are reused and no records are copied.

Learning curves use nested shot budgets: the dataset is generated once at
the largest budget and every smaller point is a bit-identical prefix of it
("data recycling").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import DatasetSource, prefix_count
from .experiment import QuenchDataset, derive_seed


@dataclass
class BootstrapPlan:
    n_resamples: int
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 2:
            raise ValueError("need at least 2 resamples")


@dataclass
class BootstrapResult:
    samples: np.ndarray  # (r, k)
    std: np.ndarray  # (k,)
    lower: np.ndarray  # 2.5th percentile
    upper: np.ndarray  # 97.5th percentile


def bootstrap(source: DatasetSource, statistic, plan: BootstrapPlan,
              workers: int = 1) -> BootstrapResult:
    """Recompute statistic(source-view) on per-setting word resamples.

    Resample seeds derive from (plan seed, resample index), so results do
    not depend on the worker count.
    """
    dataset = source.dataset
    for s in dataset.settings:
        if s.shots < 2:
            raise ValueError("every setting needs at least 2 shots to resample")

    def one(r: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(plan.rng_seed, r))
        weights = {
            i: rng.multinomial(s.shots, np.full(s.shots, 1.0 / s.shots)).astype(float)
            for i, s in enumerate(dataset.settings)
        }
        return np.atleast_1d(np.asarray(statistic(source.with_weights(weights)),
                                        dtype=float))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(one, range(plan.n_resamples)))
    else:
        samples = [one(r) for r in range(plan.n_resamples)]
    samples = np.array(samples)
    return BootstrapResult(
        samples=samples,
        std=samples.std(axis=0, ddof=1),
        lower=np.percentile(samples, 2.5, axis=0),
        upper=np.percentile(samples, 97.5, axis=0),
    )


def sin_theta(c_rec: np.ndarray, c_true: np.ndarray) -> float:
    """|sin| of the angle between the vectors; scale-invariant."""
    na, nb = np.linalg.norm(c_rec), np.linalg.norm(c_true)
    if na == 0 or nb == 0:
        raise ValueError("sin_theta requires nonzero vectors")
    cos = np.clip(abs(float(np.dot(c_rec, c_true))) / (na * nb), 0.0, 1.0)
    return float(np.sqrt(1.0 - cos * cos))


def relative_error(c_rec: np.ndarray, c_true: np.ndarray) -> float:
    """Euclidean relative error (Delta c)."""
    c_rec, c_true = np.asarray(c_rec, dtype=float), np.asarray(c_true, dtype=float)
    if c_rec.shape != c_true.shape:
        raise ValueError("shape mismatch")
    norm = np.linalg.norm(c_true)
    if norm == 0:
        raise ValueError("relative_error requires a nonzero truth vector")
    return float(np.linalg.norm(c_rec - c_true) / norm)


def log_budgets(lo: int, hi: int, per_decade: int = 8) -> list[int]:
    """Strictly increasing integer budgets, log-spaced."""
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    n = max(2, int(round(np.log10(hi / lo) * per_decade)) + 1)
    vals = np.unique(np.round(np.geomspace(lo, hi, n)).astype(int))
    return [int(v) for v in vals]


@dataclass
class CurvePoint:
    n_runs: int
    ratio: float
    ratio_err: float | None = None
    sin_theta: float | None = None
    delta_add: float | None = None
    delta_c: float | None = None


@dataclass
class LearningCurve:
    label: str
    points: list[CurvePoint]
    asymptote: float | None = None  # exact-oracle ratio ("triangle marker")
    asymptote_sin_theta: float | None = None

    def __post_init__(self):
        runs = [p.n_runs for p in self.points]
        if any(b <= a for a, b in zip(runs, runs[1:])):
            raise ValueError("N_runs must be strictly increasing")


def learning_curve(dataset: QuenchDataset, builder, solver_fn, budgets,
                   label: str = "", c_true: np.ndarray | None = None,
                   exact_source=None, bootstrap_plan: BootstrapPlan | None = None,
                   exact_t0: bool = True) -> LearningCurve:
    """One learning curve over nested shots-per-setting budgets.

    builder(source) must assemble a ConstraintSystem, solver_fn(system) must
    return a LearningResult.  Integer budgets count shots per setting; float
    budgets in (0, 1] keep that fraction of every setting's shots, so
    non-uniform allocations scale together.  N_runs is the total shot count.
    """
    budgets = sorted(set(float(b) if 0 < b <= 1 else int(b) for b in budgets))
    max_shots = max(s.shots for s in dataset.settings)
    base = DatasetSource(dataset, exact_t0=exact_t0)
    points = []
    for shots in budgets:
        if isinstance(shots, int) and shots > max_shots:
            raise ValueError(f"budget {shots} exceeds dataset shots {max_shots}")
        source = base.with_prefix(shots)
        result = solver_fn(builder(source))
        n_runs = sum(prefix_count(shots, s.shots) for s in dataset.settings)
        point = CurvePoint(n_runs=n_runs, ratio=result.ratio)
        if c_true is not None:
            point.sin_theta = sin_theta(result.c_rec, c_true)
            point.delta_c = relative_error(result.c_rec, c_true)
        point.delta_add = result.delta_add
        if bootstrap_plan is not None:
            boot = bootstrap(source, lambda s: solver_fn(builder(s)).ratio,
                             bootstrap_plan)
            point.ratio_err = float(boot.std[0])
        points.append(point)
    asym = asym_sin = None
    if exact_source is not None:
        result = solver_fn(builder(exact_source))
        asym = result.ratio
        if c_true is not None:
            asym_sin = sin_theta(result.c_rec, c_true)
    return LearningCurve(label, points, asym, asym_sin)


def fit_loglog_slope(curve: LearningCurve, n_points: int | None = None) -> float:
    """Regression slope of log(ratio) vs log(N_runs) over the early points."""
    pts = curve.points if n_points is None else curve.points[:n_points]
    x = np.log10([p.n_runs for p in pts])
    y = np.log10([p.ratio for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def export_curve_csv(curve: LearningCurve, path) -> None:
    lines = ["n_runs,ratio,ratio_err,sin_theta,delta_add"]
    fmt = lambda v: "" if v is None else repr(float(v))
    for p in curve.points:
        lines.append(f"{p.n_runs},{fmt(p.ratio)},{fmt(p.ratio_err)},"
                     f"{fmt(p.sin_theta)},{fmt(p.delta_add)}")
    if curve.asymptote is not None:
        lines.append(f"asymptote,{fmt(curve.asymptote)},,"
                     f"{fmt(curve.asymptote_sin_theta)},")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
