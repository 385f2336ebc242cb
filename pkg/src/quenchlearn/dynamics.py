"""Lindblad propagation of dense density matrices and Simpson time integrals.

The master equation

    d rho/dt = -i[H, rho] + sum_k nu_k ( L_k rho R_k^dag - (1/2){R_k^dag L_k, rho} )

is integrated with fixed-step classical RK4 on the full 2^N x 2^N matrix.
Pairwise channels (L != R) model Kossakowski-type dephasing blocks; they must
come in transpose pairs with a positive-semidefinite implied rate matrix so
that the generator stays completely positive.  No trace renormalization is
performed; drift is asserted instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pauli import DimensionError, Operator, expectation


class IntegratorError(RuntimeError):
    """Trace drift exceeded tolerance; decrease the step size."""


TRACE_DRIFT_HARD = 1e-6


@dataclass
class DensityMatrix:
    """Dense density matrix with on-demand validity checks."""

    n_sites: int
    entries: np.ndarray

    def __post_init__(self):
        dim = 1 << self.n_sites
        if self.entries.shape != (dim, dim):
            raise DimensionError(f"expected {dim}x{dim} entries for {self.n_sites} sites")

    @classmethod
    def pure(cls, n_sites: int, vector: np.ndarray) -> "DensityMatrix":
        v = np.asarray(vector, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(n_sites, np.outer(v, v.conj()))

    @classmethod
    def computational(cls, n_sites: int, index: int = 0) -> "DensityMatrix":
        v = np.zeros(1 << n_sites, dtype=complex)
        v[index] = 1.0
        return cls(n_sites, np.outer(v, v.conj()))

    def validate(self, herm_tol: float = 1e-10, trace_tol: float = 1e-10, eig_tol: float = 1e-8):
        m = self.entries
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("density matrix not hermitian within tolerance")
        if abs(np.trace(m).real - 1.0) > trace_tol or abs(np.trace(m).imag) > trace_tol:
            raise ValueError("density matrix trace deviates from 1")
        if np.linalg.eigvalsh(m).min() < -eig_tol:
            raise ValueError("density matrix has a significantly negative eigenvalue")
        return self


@dataclass
class LindbladModel:
    """Hamiltonian plus dissipative channels (left op, right op, rate >= 0)."""

    n_sites: int
    hamiltonian: Operator
    channels: list[tuple[Operator, Operator, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.hamiltonian.is_hermitian():
            raise ValueError("hamiltonian must be hermitian")
        for left, right, rate in self.channels:
            if left.n_sites != self.n_sites or right.n_sites != self.n_sites:
                raise DimensionError("channel operators must match model size")
            if rate < 0:
                raise ValueError("dissipation rates must be non-negative")
        self._check_pairwise_psd()

    def _check_pairwise_psd(self):
        """Pairwise (L != R) channels form a rate matrix that must be PSD."""
        pair_keys = {}
        ops = []
        entries = []
        for left, right, rate in self.channels:
            kl = _op_key(left)
            kr = _op_key(right)
            if kl == kr:
                continue
            for k in (kl, kr):
                if k not in pair_keys:
                    pair_keys[k] = len(ops)
                    ops.append(k)
            entries.append((pair_keys[kl], pair_keys[kr], rate))
        if not entries:
            return
        gamma = np.zeros((len(ops), len(ops)))
        # diagonal entries come from the matching L == R channels
        for left, right, rate in self.channels:
            kl = _op_key(left)
            if kl == _op_key(right) and kl in pair_keys:
                gamma[pair_keys[kl], pair_keys[kl]] += rate
        for i, j, rate in entries:
            gamma[j, i] += rate
        if np.max(np.abs(gamma - gamma.T)) > 1e-12:
            raise ValueError("pairwise channel rates must be symmetric in (left, right)")
        if np.linalg.eigvalsh(gamma).min() < -1e-10:
            raise ValueError("implied pairwise rate matrix is not positive semidefinite")

    def generator_matrices(self):
        """Dense H, per-channel (L, Rdag) and collapsed anticommutator part K."""
        dim = 1 << self.n_sites
        h = self.hamiltonian.to_matrix()
        jumps = []
        k = np.zeros((dim, dim), dtype=complex)
        for left, right, rate in self.channels:
            if rate == 0.0:
                continue
            lm = left.to_matrix()
            rdag = right.to_matrix().conj().T
            jumps.append((rate, lm, rdag))
            k += 0.5 * rate * (rdag @ lm)
        return h, jumps, k


def _op_key(op: Operator):
    return tuple(sorted((codes, complex(np.round(v.real, 12), np.round(v.imag, 12)))
                        for codes, v in op.terms.items()))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with an even number of steps (Simpson)."""

    total_time: float
    n_steps: int

    def __post_init__(self):
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if self.n_steps <= 0 or self.n_steps % 2:
            raise ValueError("n_steps must be a positive even integer")

    @property
    def dt(self) -> float:
        return self.total_time / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.total_time, self.n_steps + 1)

    def simpson_weights(self) -> np.ndarray:
        w = np.ones(self.n_steps + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (self.dt / 3.0)


def simpson_integral(samples: np.ndarray, grid: TimeGrid) -> float:
    """Composite Simpson rule over grid samples (weights 1,4,2,...,4,1 * dt/3)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != grid.n_steps + 1:
        raise ValueError("sample count must equal n_steps + 1")
    return samples @ grid.simpson_weights()


def default_substeps(model: LindbladModel, grid: TimeGrid, target: float = 0.05) -> int:
    """Substep count keeping ||H|| * (dt/substeps) <= target."""
    hnorm = model.hamiltonian.norm() + sum(r * max(l.norm(), rgt.norm())
                                           for l, rgt, r in model.channels)
    if hnorm == 0:
        return 1
    return max(1, int(np.ceil(hnorm * grid.dt / target)))


def _rhs(rho, h, jumps, k):
    out = -1j * (h @ rho - rho @ h)
    out -= k @ rho + rho @ k
    for rate, lm, rdag in jumps:
        out += rate * (lm @ rho @ rdag)
    return out


def evolve(
    model: LindbladModel,
    state0: DensityMatrix,
    grid: TimeGrid,
    substeps: int | None = None,
) -> list[DensityMatrix]:
    """Propagate state0; returns density matrices at every grid time."""
    if state0.n_sites != model.n_sites:
        raise DimensionError("state and model sizes differ")
    if substeps is None:
        substeps = default_substeps(model, grid)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h, jumps, k = model.generator_matrices()
    dt = grid.dt / substeps
    rho = state0.entries.astype(complex).copy()
    out = [DensityMatrix(model.n_sites, rho.copy())]
    trace0 = np.trace(rho).real
    for _ in range(grid.n_steps):
        for _ in range(substeps):
            k1 = _rhs(rho, h, jumps, k)
            k2 = _rhs(rho + 0.5 * dt * k1, h, jumps, k)
            k3 = _rhs(rho + 0.5 * dt * k2, h, jumps, k)
            k4 = _rhs(rho + dt * k3, h, jumps, k)
            rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(DensityMatrix(model.n_sites, rho.copy()))
    drift = abs(np.trace(rho).real - trace0)
    if drift > TRACE_DRIFT_HARD:
        raise IntegratorError(
            f"trace drifted by {drift:.2e} over the quench; decrease the step size"
        )
    return out


def time_trace(
    model: LindbladModel,
    state0: DensityMatrix,
    op: Operator,
    grid: TimeGrid,
    substeps: int | None = None,
) -> tuple[np.ndarray, float]:
    """Expectation samples <op>_t on the grid and their Simpson integral."""
    states = evolve(model, state0, grid, substeps)
    samples = np.array([expectation(op, s.entries).real for s in states])
    return samples, simpson_integral(samples, grid)
