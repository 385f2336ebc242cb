"""Deterministic derivative-free minimization over a box.

A native DIRECT (DIviding RECTangles) implementation in the classic Jones
formulation: trisect along longest sides, select potentially optimal
rectangles via the lower convex hull over (size, best value), no randomness.
An optional coordinate pattern-search polish refines the best DIRECT point;
both stages evaluate the objective at deterministic points, so results are
reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DirectResult:
    x: np.ndarray
    fun: float
    n_evals: int
    trace: list[tuple[int, float]]  # (evaluation count, best value so far)


@dataclass
class _Rect:
    center: np.ndarray  # normalized coordinates in [0, 1]
    levels: np.ndarray  # trisection count per dimension
    value: float

    @property
    def size(self) -> float:
        half_sides = 0.5 * 3.0 ** (-self.levels.astype(float))
        return float(np.linalg.norm(half_sides))


def _potentially_optimal(rects: list[_Rect], f_min: float, epsilon: float) -> list[int]:
    """Indices on the lower-right convex hull of (size, value)."""
    by_size: dict[float, int] = {}
    for i, r in enumerate(rects):
        s = round(r.size, 14)
        if s not in by_size or r.value < rects[by_size[s]].value:
            by_size[s] = i
    candidates = sorted(by_size.items())  # ascending size
    hull: list[tuple[float, int]] = []
    for s, i in candidates:
        while len(hull) >= 2:
            (s1, i1), (s2, i2) = hull[-2], hull[-1]
            v1, v2, v = rects[i1].value, rects[i2].value, rects[i].value
            if (v2 - v1) * (s - s2) >= (v - v2) * (s2 - s1):
                hull.pop()
            else:
                break
        while hull and rects[hull[-1][1]].value >= rects[i].value and hull[-1][0] <= s:
            hull.pop()
        hull.append((s, i))
    # epsilon test against the incumbent: a rectangle must promise a
    # nontrivial improvement given its size.
    out = []
    scale = abs(f_min) if abs(f_min) > 1e-30 else 1.0
    for k, (s, i) in enumerate(hull):
        if k + 1 < len(hull):
            s2, i2 = hull[k + 1]
            slope = (rects[i2].value - rects[i].value) / (s2 - s)
            bound = rects[i].value - slope * s
        else:
            bound = -np.inf
        if bound <= f_min - epsilon * scale or k + 1 == len(hull):
            out.append(i)
    return out


def direct_minimize(fn, lower, upper, max_evals: int | None = None,
                    epsilon: float = 1e-4) -> DirectResult:
    """Minimize fn over the box [lower, upper] with the DIRECT algorithm."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape or np.any(upper <= lower):
        raise ValueError("need lower < upper per dimension")
    m = lower.size
    if max_evals is None:
        max_evals = 500 * m
    span = upper - lower

    n_evals = 0
    trace: list[tuple[int, float]] = []

    def call(z: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        return float(fn(lower + span * z))

    root = _Rect(np.full(m, 0.5), np.zeros(m, dtype=int), call(np.full(m, 0.5)))
    rects = [root]
    best = root
    trace.append((n_evals, best.value))

    while n_evals < max_evals:
        chosen = _potentially_optimal(rects, best.value, epsilon)
        progressed = False
        for idx in sorted(chosen, reverse=True):
            if n_evals >= max_evals:
                break
            rect = rects[idx]
            min_level = rect.levels.min()
            dims = np.flatnonzero(rect.levels == min_level)
            delta = 3.0 ** (-(min_level + 1))
            # sample both offsets in every longest dimension first
            samples: list[tuple[int, float, _Rect]] = []
            pairs = []
            for dim in dims:
                if n_evals + 2 > max_evals:
                    break
                lo_c = rect.center.copy()
                hi_c = rect.center.copy()
                lo_c[dim] -= delta
                hi_c[dim] += delta
                r_lo = _Rect(lo_c, rect.levels.copy(), call(lo_c))
                r_hi = _Rect(hi_c, rect.levels.copy(), call(hi_c))
                pairs.append((dim, r_lo, r_hi))
            if not pairs:
                continue
            progressed = True
            # divide dimensions in order of their best sample value
            pairs.sort(key=lambda p: min(p[1].value, p[2].value))
            involved = [rect]
            for dim, r_lo, r_hi in pairs:
                for r in involved:
                    r.levels = r.levels.copy()
                    r.levels[dim] += 1
                r_lo.levels = rect.levels.copy()
                r_hi.levels = rect.levels.copy()
                involved.extend([r_lo, r_hi])
                rects.extend([r_lo, r_hi])
                for r in (r_lo, r_hi):
                    if r.value < best.value:
                        best = r
            trace.append((n_evals, best.value))
        if not progressed:
            break

    x_best = lower + span * best.center
    return DirectResult(x_best, best.value, n_evals, trace)


def pattern_search(fn, x0, lower, upper, step: float | None = None,
                   max_evals: int = 400, shrink: float = 0.5,
                   min_step: float = 1e-15) -> DirectResult:
    """Coordinate pattern search with projection onto the box."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    x = np.clip(np.atleast_1d(np.asarray(x0, dtype=float)), lower, upper)
    span = upper - lower
    steps = np.full(x.size, step if step is not None else 1.0 / 6.0) * span

    n_evals = 0
    trace: list[tuple[int, float]] = []

    def call(z: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        return float(fn(z))

    f = call(x)
    trace.append((n_evals, f))
    while n_evals < max_evals and np.max(steps / span) > min_step:
        improved = False
        for dim in range(x.size):
            for sign in (1.0, -1.0):
                if n_evals >= max_evals:
                    break
                trial = x.copy()
                trial[dim] = np.clip(trial[dim] + sign * steps[dim],
                                     lower[dim], upper[dim])
                if trial[dim] == x[dim]:
                    continue
                f_t = call(trial)
                if f_t < f:
                    x, f = trial, f_t
                    improved = True
                    break
        trace.append((n_evals, f))
        if not improved:
            steps *= shrink
    return DirectResult(x, f, n_evals, trace)


def direct_with_polish(fn, lower, upper, max_evals: int | None = None,
                       polish_evals: int = 400) -> DirectResult:
    """DIRECT global stage followed by pattern-search refinement."""
    stage1 = direct_minimize(fn, lower, upper, max_evals)
    stage2 = pattern_search(fn, stage1.x, lower, upper,
                            step=1e-2, max_evals=polish_evals)
    total = stage1.n_evals + stage2.n_evals
    trace = stage1.trace + [(stage1.n_evals + n, v) for n, v in stage2.trace]
    if stage2.fun <= stage1.fun:
        return DirectResult(stage2.x, stage2.fun, total, trace)
    return DirectResult(stage1.x, stage1.fun, total, trace)
