"""Optimization and spectral machinery for the learning problems.

Two reconstruction routes share this module:

* Ehrenfest route — inhomogeneous least squares ``K_H c + K_D d = b`` with
  nonnegative rates, solved by projecting out the unconstrained c-block and
  running active-set NNLS on d alone;
* energy-conservation route — homogeneous problem ``M(d) c = 0`` with
  ``|c| = 1``: the inner problem in c is an SVD, the outer search over the
  rate box uses the deterministic DIRECT optimizer, and additional
  constraints enter as ξ-weighted stacked rows that also fix the overall
  scale.

Reparametrization by an isometry G, its soft β-regularized variant, and the
projected spectrum used for systems with conserved quantities live here too.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .constraints import ConstraintSystem
from .direct import direct_minimize, direct_with_polish

DEGENERACY_FLOOR = 1e-14
SCALE_GUARD = 1e-12


@dataclass
class Parametrization:
    """Isometry G (optionally α-dependent) encoding coefficient dependencies."""

    generator: object  # callable alpha-array -> (n, n_tilde) matrix
    alpha_bounds: np.ndarray | None = None  # (k, 2) box, None/empty = linear G
    names: list[str] | None = None

    @classmethod
    def fixed(cls, g: np.ndarray, names: list[str] | None = None) -> "Parametrization":
        g = orthonormalize(np.asarray(g, dtype=float))
        return cls(lambda alpha: g, None, names)

    @property
    def n_alpha(self) -> int:
        return 0 if self.alpha_bounds is None else np.atleast_2d(self.alpha_bounds).shape[0]

    def matrix(self, alpha=()) -> np.ndarray:
        a = np.atleast_1d(np.asarray(alpha, dtype=float))
        return orthonormalize(np.asarray(self.generator(a), dtype=float))


def orthonormalize(g: np.ndarray) -> np.ndarray:
    """Orthonormalize columns (QR with sign fixed to the original direction)."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def check_isometry(g: np.ndarray, tol: float = 1e-10) -> None:
    gtg = g.T @ g
    if np.max(np.abs(gtg - np.eye(g.shape[1]))) > tol:
        raise ValueError("G must have orthonormal columns")


@dataclass
class SolverConfig:
    xi: float = 0.0
    beta: float = 0.0
    d_max: float | np.ndarray = 1.0  # per-rate upper bound, lower bound is 0
    direct_budget: int | None = None  # default 500 per search dimension
    polish_budget: int = 400
    recheck: bool = True  # re-run at twice the budget to confirm convergence
    recheck_tol: float = 1e-6
    degeneracy_ratio: float = 0.1  # lambda2/lambda3 threshold
    degeneracy_abs: float = 1e-3  # lambda2 / lambda_max threshold

    def d_bounds(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        hi = np.broadcast_to(np.atleast_1d(np.asarray(self.d_max, dtype=float)), (m,))
        if np.any(hi <= 0):
            raise ValueError("d_max must be positive")
        return np.zeros(m), hi.copy()


@dataclass
class LearningResult:
    c_rec: np.ndarray
    d_rec: np.ndarray
    spectrum: np.ndarray  # singular values, ascending
    ratio: float
    residual: float
    method: str
    c0_rec: np.ndarray | None = None  # unit-norm solution before rescaling
    scale: float | None = None
    alpha_rec: np.ndarray | None = None
    delta_add: float | None = None
    projected_spectrum: np.ndarray | None = None
    projected_ratio: float | None = None
    lambda_c: float | None = None  # constraint residual |M c_rec| / |c_rec|
    converged: bool = True
    n_evals: int = 0
    warnings: list[str] = field(default_factory=list)
    family_names: list[str] = field(default_factory=list)
    rate_names: list[str] = field(default_factory=list)

    def to_json(self, config: dict | None = None) -> str:
        payload = {
            "method": self.method,
            "coefficients": {n: float(v) for n, v in zip(self.family_names, self.c_rec)}
            if self.family_names else self.c_rec.tolist(),
            "rates": {n: float(v) for n, v in zip(self.rate_names, self.d_rec)}
            if self.rate_names else self.d_rec.tolist(),
            "spectrum": self.spectrum.tolist(),
            "ratio": self.ratio,
            "residual": self.residual,
            "scale": self.scale,
            "alpha": None if self.alpha_rec is None else self.alpha_rec.tolist(),
            "delta_add": self.delta_add,
            "projected_spectrum": None if self.projected_spectrum is None
            else self.projected_spectrum.tolist(),
            "projected_ratio": self.projected_ratio,
            "lambda_c": self.lambda_c,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "warnings": self.warnings,
        }
        if config is not None:
            payload["config"] = config
        return json.dumps(payload, indent=2)


def svd_min(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Singular spectrum (ascending) and the right vectors of the two smallest."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")
    if matrix.shape[0] < matrix.shape[1]:
        warnings.warn("fewer rows than columns: spectrum padded with exact zeros",
                      stacklevel=2)
    # full matrices only when the null space is not covered by the economy SVD
    _, s, vt = np.linalg.svd(matrix, full_matrices=matrix.shape[0] < matrix.shape[1])
    n = matrix.shape[1]
    spectrum = np.zeros(n)
    spectrum[: s.size] = s
    spectrum = spectrum[::-1]
    vecs = vt[::-1][: min(2, n)].T  # columns: smallest, second smallest
    return spectrum, vecs


def _rank_tol(spectrum: np.ndarray, shape: tuple[int, int]) -> float:
    """Numerical-rank tolerance: singular values below it are numerically zero."""
    return max(shape) * np.finfo(float).eps * float(spectrum[-1])


def _ratio(spectrum: np.ndarray, tol: float = 0.0) -> float:
    """lambda_1/lambda_2 with values clamped at the numerical-zero tolerance,
    so a doubly degenerate kernel reports a ratio of 1 instead of rounding
    noise."""
    if spectrum.size < 2:
        return 1.0 if spectrum.size and spectrum[0] else 0.0
    lam1, lam2 = max(float(spectrum[0]), tol), max(float(spectrum[1]), tol)
    if lam2 == 0.0:
        return 1.0 if lam1 else 0.0
    return lam1 / lam2


def solve_ehrenfest(sys: ConstraintSystem, cfg: SolverConfig | None = None) -> LearningResult:
    """Least squares in (c, d) with d >= 0; c is unconstrained.

    Additional-constraint blocks, when present, are appended as ξ-weighted
    Ehrenfest rows of the same form.
    """
    if sys.kind != "ehrenfest":
        raise ValueError("solve_ehrenfest requires an ehrenfest system")
    cfg = cfg or SolverConfig()
    k_h, k_d, b = sys.h_block, sys.d_blocks, sys.b
    if sys.m_add is not None and cfg.xi > 0:
        k_h = np.vstack([k_h, cfg.xi * sys.m_add])
        k_d = np.vstack([k_d, cfg.xi * sys.b_add_diss]) if sys.n_rates else k_d
        b = np.concatenate([b, cfg.xi * sys.b_add_static])
    m = k_d.shape[1]
    notes: list[str] = []
    if m == 0:
        c, *_ = np.linalg.lstsq(k_h, b, rcond=None)
        d = np.zeros(0)
    else:
        # project onto the orthogonal complement of col(K_H), NNLS on d only
        u, s, _ = np.linalg.svd(k_h, full_matrices=False)
        rank = int(np.sum(s > s.max() * 1e-12)) if s.size else 0
        u = u[:, :rank]
        proj = lambda v: v - u @ (u.T @ v)
        a_red = np.column_stack([proj(k_d[:, k]) for k in range(m)])
        b_red = proj(b)
        d, _ = nnls(a_red, b_red)
        grad = a_red.T @ (a_red @ d - b_red)
        tol = 1e-8 * max(np.linalg.norm(b), 1.0)
        for k in range(m):
            ok = grad[k] >= -tol if d[k] <= tol else abs(grad[k]) <= tol
            if not ok:
                notes.append(f"KKT violation on rate {k}: gradient {grad[k]:.3e}")
        c, *_ = np.linalg.lstsq(k_h, b - k_d @ d, rcond=None)
    augmented = np.column_stack([k_h, k_d, -b])
    spectrum, _ = svd_min(augmented)
    if spectrum[1] < DEGENERACY_FLOOR * max(spectrum.max(), 1.0):
        notes.append("degenerate system: second singular value at numerical floor")
    residual = float(np.linalg.norm(k_h @ c + (k_d @ d if m else 0.0) - b))
    return LearningResult(
        c_rec=c, d_rec=d, spectrum=spectrum,
        ratio=_ratio(spectrum, _rank_tol(spectrum, augmented.shape)),
        residual=residual, method="ehrenfest", warnings=notes,
        family_names=list(sys.family_names), rate_names=list(sys.rate_names),
    )


def _outer_search(objective, lower, upper, cfg: SolverConfig):
    """DIRECT + polish with optional double-budget convergence re-check."""
    dim = lower.size
    budget = cfg.direct_budget if cfg.direct_budget is not None else 500 * dim
    res = direct_with_polish(objective, lower, upper, budget, cfg.polish_budget)
    converged = True
    if cfg.recheck:
        res2 = direct_with_polish(objective, lower, upper, 2 * budget,
                                  cfg.polish_budget)
        if res2.fun < res.fun:
            # agreement is judged on the objective's natural scale, so two
            # minima jittering at the numerical floor still count as converged
            scale = max(abs(objective(0.5 * (lower + upper))),
                        abs(res.fun), abs(res2.fun), 1e-30)
            converged = abs(res.fun - res2.fun) <= cfg.recheck_tol * scale
            res = res2
    return res, converged


def _degenerate(spectrum: np.ndarray, cfg: SolverConfig) -> bool:
    if spectrum.size < 3:
        return False
    lam_max = spectrum[-1] if spectrum[-1] > 0 else 1.0
    return (spectrum[1] < cfg.degeneracy_ratio * spectrum[2]
            and spectrum[1] < cfg.degeneracy_abs * lam_max)


def _transformed(sys: ConstraintSystem, g: np.ndarray) -> ConstraintSystem:
    check_isometry(g)
    names = [f"g{j}" for j in range(g.shape[1])]
    if sys.kind == "energy":
        d_blocks = (np.einsum("kpn,nj->kpj", sys.d_blocks, g) if sys.n_rates
                    else np.zeros((0, sys.h_block.shape[0], g.shape[1])))
    else:
        d_blocks = sys.d_blocks  # K_D carries rates, not coefficients
    return ConstraintSystem(
        sys.kind, names, list(sys.rate_names),
        sys.h_block @ g,
        d_blocks,
        sys.b,
        sys.m_add @ g if sys.m_add is not None else None,
        sys.b_add_static, sys.b_add_diss, sys.row_meta,
    )


def reparametrize(sys: ConstraintSystem, p: Parametrization | np.ndarray,
                  alpha=()) -> ConstraintSystem:
    """Right-multiply every H-block by the isometry G; solve in c_G, map back
    via c = G c_G."""
    g = p if isinstance(p, np.ndarray) else p.matrix(alpha)
    return _transformed(sys, g)


def solve_energy(sys: ConstraintSystem, cfg: SolverConfig | None = None,
                 parametrization: Parametrization | None = None) -> LearningResult:
    """Minimize the smallest singular value of M(d) over the rate box.

    With an α-dependent parametrization the outer DIRECT search runs over
    the concatenated (d, α) box; the inner problem stays an SVD.
    """
    if sys.kind != "energy":
        raise ValueError("solve_energy requires an energy-conservation system")
    cfg = cfg or SolverConfig()
    m = sys.n_rates
    n_alpha = parametrization.n_alpha if parametrization else 0

    def inner(d, alpha):
        work = sys
        g = None
        if parametrization is not None:
            g = parametrization.matrix(alpha)
            work = _transformed(sys, g)
        spectrum, vecs = svd_min(work.matrix_of(d))
        c = vecs[:, 0]
        if g is not None:
            c = g @ c
        return spectrum, c

    if m == 0 and n_alpha == 0:
        spectrum, c = inner(np.zeros(0), np.zeros(0))
        d_rec, alpha_rec, converged, n_evals = np.zeros(0), None, True, 1
    else:
        lo_d, hi_d = cfg.d_bounds(m)
        lo = np.concatenate([lo_d, np.atleast_2d(parametrization.alpha_bounds)[:, 0]
                             if n_alpha else np.zeros(0)])
        hi = np.concatenate([hi_d, np.atleast_2d(parametrization.alpha_bounds)[:, 1]
                             if n_alpha else np.zeros(0)])
        objective = lambda x: inner(x[:m], x[m:])[0][0]
        res, converged = _outer_search(objective, lo, hi, cfg)
        d_rec = res.x[:m]
        alpha_rec = res.x[m:] if n_alpha else None
        spectrum, c = inner(d_rec, res.x[m:])
        n_evals = res.n_evals
    notes = []
    shape = (sys.h_block.shape[0], len(c))
    tol = _rank_tol(spectrum, shape)
    if m + n_alpha > 0 and spectrum[0] <= tol < spectrum[1]:
        # lambda_1 is numerically zero on a flat manifold of rate vectors; a
        # genuinely degenerate kernel is located by minimizing lambda_2, which
        # collapses only where two independent conserved combinations coexist.
        objective2 = lambda x: inner(x[:m], x[m:])[0][1]
        res2, conv2 = _outer_search(objective2, lo, hi, cfg)
        spectrum2, c2 = inner(res2.x[:m], res2.x[m:])
        n_evals += res2.n_evals
        if spectrum2[1] <= _rank_tol(spectrum2, shape):
            d_rec, alpha_rec = res2.x[:m], (res2.x[m:] if n_alpha else None)
            spectrum, c, converged = spectrum2, c2, conv2
            tol = _rank_tol(spectrum, shape)
            notes.append("degenerate kernel located by second-stage search")
    if _degenerate(spectrum, cfg):
        notes.append("near-degenerate kernel: conserved quantity suspected")
    return LearningResult(
        c_rec=c, d_rec=d_rec, spectrum=spectrum, ratio=_ratio(spectrum, tol),
        residual=float(spectrum[0]), method="energy", alpha_rec=alpha_rec,
        lambda_c=float(spectrum[0]), converged=converged, n_evals=n_evals,
        warnings=notes, family_names=list(sys.family_names),
        rate_names=list(sys.rate_names),
    )


def recover_scale(m_add: np.ndarray, b_add: np.ndarray, c0: np.ndarray
                  ) -> tuple[float, list[str]]:
    """Overall scale s = mean_i b_i / (M_add c0)_i with a division guard."""
    denom = m_add @ c0
    notes = []
    keep = np.abs(denom) > SCALE_GUARD
    if not np.all(keep):
        notes.append(f"{int(np.sum(~keep))} scale rows excluded (|M_add c| below guard)")
    if not np.any(keep):
        raise ValueError("all additional-constraint rows below the scale guard")
    return float(np.mean(b_add[keep] / denom[keep])), notes


def solve_with_additional(sys: ConstraintSystem, cfg: SolverConfig,
                          parametrization: Parametrization | None = None
                          ) -> LearningResult:
    """Stacked problem min_c |M(d) c|^2 + ξ^2 |M_add c − b(d)|^2, DIRECT over d.

    The stacked problem is linear in c with no norm constraint; the recovered
    c is reported both unit-normalized (c0) and rescaled by the
    least-squares scale factor s.
    """
    if sys.kind != "energy":
        raise ValueError("solve_with_additional requires an energy system")
    if sys.m_add is None or cfg.xi <= 0:
        raise ValueError("additional constraints and xi > 0 required")
    m = sys.n_rates
    n_alpha = parametrization.n_alpha if parametrization else 0

    def inner(d, alpha):
        work = sys
        g = None
        if parametrization is not None:
            g = parametrization.matrix(alpha)
            work = _transformed(sys, g)
        a = np.vstack([work.matrix_of(d), cfg.xi * work.m_add])
        y = np.concatenate([np.zeros(work.h_block.shape[0]),
                            cfg.xi * work.b_add_of(d)])
        c, *_ = np.linalg.lstsq(a, y, rcond=None)
        resid = float(np.linalg.norm(a @ c - y))
        if g is not None:
            c = g @ c
        return resid, c

    if m == 0 and n_alpha == 0:
        resid, c = inner(np.zeros(0), np.zeros(0))
        d_rec, alpha_rec, converged, n_evals = np.zeros(0), None, True, 1
    else:
        lo_d, hi_d = cfg.d_bounds(m)
        lo = np.concatenate([lo_d, np.atleast_2d(parametrization.alpha_bounds)[:, 0]
                             if n_alpha else np.zeros(0)])
        hi = np.concatenate([hi_d, np.atleast_2d(parametrization.alpha_bounds)[:, 1]
                             if n_alpha else np.zeros(0)])
        objective = lambda x: inner(x[:m], x[m:])[0]
        res, converged = _outer_search(objective, lo, hi, cfg)
        d_rec = res.x[:m]
        alpha_rec = res.x[m:] if n_alpha else None
        resid, c = inner(d_rec, res.x[m:])
        n_evals = res.n_evals
    norm_c = np.linalg.norm(c)
    if norm_c == 0:
        raise ValueError("stacked solve returned the zero vector")
    c0 = c / norm_c
    b_add = sys.b_add_of(d_rec)
    scale, notes = recover_scale(sys.m_add, b_add, c0)
    c_rec = scale * c0
    spectrum, _ = svd_min(sys.matrix_of(d_rec))
    return LearningResult(
        c_rec=c_rec, d_rec=d_rec, spectrum=spectrum, ratio=_ratio(spectrum),
        residual=resid, method="energy+additional", c0_rec=c0, scale=scale,
        alpha_rec=alpha_rec, delta_add=delta_add(sys.m_add, c_rec, b_add),
        converged=converged, n_evals=n_evals, warnings=notes,
        family_names=list(sys.family_names), rate_names=list(sys.rate_names),
    )


def regularized_system(sys: ConstraintSystem, p: Parametrization | np.ndarray,
                       beta: float, alpha=()) -> ConstraintSystem:
    """Append soft-penalty rows β(I − G Gᵀ) to the H-block."""
    g = p if isinstance(p, np.ndarray) else p.matrix(alpha)
    check_isometry(g)
    n = sys.n_parameters
    penalty = beta * (np.eye(n) - g @ g.T)
    h = np.vstack([sys.h_block, penalty])
    if sys.kind == "energy":
        pad = np.zeros((sys.n_rates, n, n))
        d_blocks = np.concatenate([sys.d_blocks, pad], axis=1) if sys.n_rates \
            else sys.d_blocks.reshape(0, h.shape[0], n)
    else:
        raise ValueError("beta regularization applies to energy systems")
    meta = sys.row_meta + [{"kind": "beta"} for _ in range(n)]
    return ConstraintSystem(sys.kind, list(sys.family_names), list(sys.rate_names),
                            h, d_blocks, None, sys.m_add, sys.b_add_static,
                            sys.b_add_diss, meta)


def solve_regularized(sys: ConstraintSystem, p: Parametrization | np.ndarray,
                      cfg: SolverConfig,
                      parametrization_alpha=()) -> LearningResult:
    """Energy solve on the β-regularized system; β=0 is the plain solve."""
    if cfg.beta < 0:
        raise ValueError("beta must be nonnegative")
    reg = regularized_system(sys, p, cfg.beta, parametrization_alpha) \
        if cfg.beta > 0 else sys
    out = solve_energy(reg, cfg)
    # constraint-residual tracking value on the regularized matrix
    m_rec = reg.matrix_of(out.d_rec)
    out.lambda_c = float(np.linalg.norm(m_rec @ out.c_rec))
    return out


def projected_ratio(sys: ConstraintSystem, d_rec: np.ndarray, c_rec: np.ndarray,
                    kernel_dim: int) -> tuple[np.ndarray, float]:
    """Spectrum with the near-null subspace replaced by its component along
    c_rec; the analogue of λ₁/λ₂ for systems with conserved quantities."""
    matrix = sys.matrix_of(d_rec) if sys.kind == "energy" else sys.h_block
    _, s, vt = np.linalg.svd(matrix)
    n = matrix.shape[1]
    spectrum = np.concatenate([s, np.zeros(n - s.size)])[::-1]
    if kernel_dim <= 1:
        return spectrum, _ratio(spectrum)
    v = vt[::-1]  # rows ordered by ascending singular value
    kernel = v[:kernel_dim].T  # (n, kernel_dim)
    w = kernel @ (kernel.T @ c_rec)
    norm_w = np.linalg.norm(w)
    if norm_w < 1e-10 * max(np.linalg.norm(c_rec), 1e-30):
        raise ValueError("c_rec is orthogonal to the near-null subspace")
    basis = np.column_stack([w / norm_w, v[kernel_dim:].T])
    sub_spectrum, _ = svd_min(matrix @ basis)
    return sub_spectrum, _ratio(sub_spectrum)


def delta_add(m_add: np.ndarray, c_rec: np.ndarray, b_add: np.ndarray) -> float:
    """Additional-constraint residual norm."""
    return float(np.linalg.norm(m_add @ c_rec - b_add))
