"""Assembly of the learning constraint systems from data or exact dynamics.

Every matrix entry is first expanded symbolically into Pauli strings, so a
single shot record serves every entry that references the same primitive
expectation value, and the set of primitives that actually require data is
explicit.  Expectation values enter through a source object:

* ``ExactSource`` propagates each initial state once and evaluates traces
  (the simulation oracle);
* ``DatasetSource`` pools shot records, optionally with per-setting shot
  prefixes (nested budgets) or resampling weights (bootstrap), and by
  default evaluates t=0 values exactly from the known initial product state.

Conventions: with dissipator families D_k = {(L, R)} sharing rate d_k, the
stored per-family matrices use the doubled adjoint-dissipator integrand, so
the energy-conservation matrix is  M(d) = M_H + (1/2) sum_k d_k M^(k)  and
the Ehrenfest / additional-constraint blocks carry the 1/2 internally.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DensityMatrix, LindbladModel, TimeGrid, evolve, simpson_integral
from .experiment import MissingDataError, ProductState, QuenchDataset
from .pauli import Operator, PauliString, adjoint_dissipator, commutator, string_expectation

SYSTEM_SCHEMA = 1


@dataclass
class Ansatz:
    """Hamiltonian ansatz: named hermitian traceless operator families."""

    names: list[str]
    families: list[Operator]

    def __post_init__(self):
        if len(self.names) != len(self.families):
            raise ValueError("one name per family required")
        for name, fam in zip(self.names, self.families):
            if not fam.is_hermitian():
                raise ValueError(f"family {name} is not hermitian")
            if (0,) * fam.n_sites in fam.terms:
                raise ValueError(f"family {name} is not traceless")
        gram = np.array(
            [[_term_inner(a, b) for b in self.families] for a in self.families]
        )
        if np.linalg.matrix_rank(gram, tol=1e-10) < len(self.families):
            raise ValueError("ansatz families are linearly dependent")

    @property
    def n_parameters(self) -> int:
        return len(self.families)

    @property
    def n_sites(self) -> int:
        return self.families[0].n_sites

    def assemble(self, coefficients: np.ndarray) -> Operator:
        op = Operator.zero(self.n_sites)
        for c, fam in zip(coefficients, self.families):
            op = op + float(c) * fam
        return op

    def project(self, op: Operator) -> np.ndarray:
        """Least-squares coefficients of op in this ansatz (exact if in span)."""
        keys = sorted(set().union(*[f.terms.keys() for f in self.families],
                                  op.terms.keys()))
        a = np.array([[f.terms.get(k, 0.0) for f in self.families] for k in keys])
        y = np.array([op.terms.get(k, 0.0) for k in keys])
        sol, *_ = np.linalg.lstsq(a, y, rcond=None)
        return sol.real


def _term_inner(a: Operator, b: Operator) -> complex:
    return sum(v.conjugate() * b.terms.get(k, 0.0) for k, v in a.terms.items())


@dataclass
class DissipatorAnsatz:
    """Dissipator ansatz: families of (left, right) jump pairs sharing a rate."""

    names: list[str]
    families: list[list[tuple[Operator, Operator]]]

    def __post_init__(self):
        if len(self.names) != len(self.families):
            raise ValueError("one name per family required")

    @property
    def n_rates(self) -> int:
        return len(self.families)

    def adjoint_applied(self, k: int, h: Operator) -> Operator:
        """Doubled adjoint-dissipator integrand of family k applied to h."""
        out = Operator.zero(h.n_sites)
        for left, right in self.families[k]:
            out = out + adjoint_dissipator(left, right, h)
        return out


EMPTY_DISSIPATOR = DissipatorAnsatz([], [])


# -- expectation sources -------------------------------------------------


class ExactSource:
    """Exact time-resolved expectations from dense Lindblad propagation."""

    def __init__(self, model: LindbladModel, states: list[ProductState], grid: TimeGrid,
                 substeps: int | None = None):
        self.model = model
        self.states = states
        self.grid = grid
        self.substeps = substeps
        self._evolved: dict[int, list[DensityMatrix]] = {}
        self._series: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def _primitive(self, codes: tuple[int, ...], state_id: int) -> np.ndarray:
        key = (state_id, codes)
        if key not in self._series:
            if state_id not in self._evolved:
                self._evolved[state_id] = evolve(
                    self.model, self.states[state_id].to_density_matrix(),
                    self.grid, self.substeps)
            p = PauliString(codes)
            self._series[key] = np.array(
                [string_expectation(p, s.entries).real for s in self._evolved[state_id]]
            )
        return self._series[key]

    def series(self, op: Operator, state_id: int) -> np.ndarray:
        total = np.zeros(self.grid.n_steps + 1, dtype=complex)
        for codes, coeff in op.terms.items():
            if any(codes):
                total = total + coeff * self._primitive(codes, state_id)
            else:
                total = total + coeff
        return total.real


def prefix_count(prefix, size: int) -> int:
    """Shots kept from a record of `size` under an int cap or float fraction."""
    if isinstance(prefix, float) and prefix <= 1.0:
        return min(size, max(1, math.ceil(prefix * size)))
    return min(int(prefix), size)


class DatasetSource:
    """Shot-record expectations with optional prefixes and bootstrap weights.

    Per-(setting, primitive) sign-product vectors and their cumulative sums
    are cached in a shared dict, so prefix-truncated and resampled views are
    cheap to evaluate.
    """

    def __init__(self, dataset: QuenchDataset, exact_t0: bool = True,
                 prefix: int | None = None,
                 weights: dict[int, np.ndarray] | None = None,
                 _shared_cache: dict | None = None):
        self.dataset = dataset
        self.exact_t0 = exact_t0
        self.prefix = prefix
        self.weights = weights
        self._cache = _shared_cache if _shared_cache is not None else {}
        self._compat: dict[tuple[int, int, tuple], list[int]] = {}

    def with_prefix(self, prefix) -> "DatasetSource":
        """Truncate each record to its first shots.

        An integer caps every setting at that count; a float in (0, 1] keeps
        that fraction of each setting's shots, preserving non-uniform
        allocations across nested budgets.
        """
        return DatasetSource(self.dataset, self.exact_t0, prefix, None, self._cache)

    def with_weights(self, weights: dict[int, np.ndarray]) -> "DatasetSource":
        return DatasetSource(self.dataset, self.exact_t0, self.prefix, weights,
                             self._cache)

    @property
    def grid(self) -> TimeGrid:
        return self.dataset.grid

    @property
    def n_states(self) -> int:
        return len({s.state_id for s in self.dataset.settings})

    def _compatible(self, codes: tuple[int, ...], state_id: int, ti: int) -> list[int]:
        support = tuple(i for i, c in enumerate(codes) if c)
        key = (state_id, ti, tuple((i, codes[i]) for i in support))
        if key not in self._compat:
            found = []
            for si, s in enumerate(self.dataset.settings):
                if s.state_id != state_id or s.time_index != ti:
                    continue
                if all(s.basis[i] == "IXYZ"[codes[i]] for i in support):
                    found.append(si)
            self._compat[key] = found
        return self._compat[key]

    def _products(self, setting_idx: int, codes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        key = (setting_idx, codes)
        if key not in self._cache:
            support = [i for i, c in enumerate(codes) if c]
            r = self.dataset.records[setting_idx]
            prod = (np.prod(r[:, support], axis=1).astype(float)
                    if support else np.ones(r.shape[0]))
            self._cache[key] = (prod, np.cumsum(prod))
        return self._cache[key]

    def primitive(self, codes: tuple[int, ...], state_id: int, ti: int) -> float:
        if not any(codes):
            return 1.0
        if ti == 0 and self.exact_t0 and self.dataset.initial_states:
            return self.dataset.initial_states[state_id].pauli_expectation(
                PauliString(codes))
        compatible = self._compatible(codes, state_id, ti)
        if not compatible:
            raise MissingDataError(
                f"no setting measures {PauliString(codes).label} for state "
                f"{state_id} at time index {ti}"
            )
        total = 0.0
        count = 0.0
        for si in compatible:
            prod, csum = self._products(si, codes)
            if self.weights is not None:
                w = self.weights.get(si)
                if w is None:
                    total += csum[-1]
                    count += prod.size
                else:
                    total += float(w @ prod)
                    count += float(w.sum())
            elif self.prefix is not None:
                k = prefix_count(self.prefix, prod.size)
                total += csum[k - 1]
                count += k
            else:
                total += csum[-1]
                count += prod.size
        return total / count

    def series(self, op: Operator, state_id: int) -> np.ndarray:
        n_t = self.dataset.grid.n_steps
        out = np.zeros(n_t + 1, dtype=complex)
        for codes, coeff in op.terms.items():
            vals = np.array([self.primitive(codes, state_id, ti) for ti in range(n_t + 1)])
            out = out + coeff * vals
        return out.real


# -- constraint systems --------------------------------------------------


@dataclass
class ConstraintSystem:
    """Learning system: Ehrenfest (K_H c + K_D d = b) or energy (M(d) c = 0),
    optionally with additional-constraint blocks M_add c = b(d)."""

    kind: str  # "ehrenfest" | "energy"
    family_names: list[str]
    rate_names: list[str]
    h_block: np.ndarray  # p x n
    d_blocks: np.ndarray  # ehrenfest: p x m; energy: m x p x n
    b: np.ndarray | None  # p (ehrenfest only)
    m_add: np.ndarray | None = None  # q x n
    b_add_static: np.ndarray | None = None  # q
    b_add_diss: np.ndarray | None = None  # q x m
    row_meta: list[dict] = field(default_factory=list)

    @property
    def n_parameters(self) -> int:
        return self.h_block.shape[1]

    @property
    def n_rates(self) -> int:
        return len(self.rate_names)

    def matrix_of(self, d: np.ndarray) -> np.ndarray:
        """Energy kind: M(d) = M_H + (1/2) sum_k d_k M^(k)."""
        if self.kind != "energy":
            raise ValueError("matrix_of applies to energy-conservation systems")
        m = self.h_block.copy()
        for k, dk in enumerate(np.atleast_1d(d)):
            m += 0.5 * dk * self.d_blocks[k]
        return m

    def b_add_of(self, d: np.ndarray) -> np.ndarray:
        if self.b_add_static is None:
            raise ValueError("no additional constraints present")
        b = self.b_add_static.copy()
        if self.n_rates and self.b_add_diss is not None:
            b = b - self.b_add_diss @ np.atleast_1d(d)
        return b

    def with_additional(self, m_add, b_add_static, b_add_diss,
                        add_meta: list[dict] | None = None) -> "ConstraintSystem":
        sys2 = ConstraintSystem(
            self.kind, self.family_names, self.rate_names, self.h_block,
            self.d_blocks, self.b, np.asarray(m_add), np.asarray(b_add_static),
            np.asarray(b_add_diss) if b_add_diss is not None else None,
            self.row_meta + (add_meta or []),
        )
        return sys2

    # -- serialization: JSON header + npz arrays in one container --------

    def save(self, path) -> None:
        arrays = {"h_block": self.h_block, "d_blocks": self.d_blocks}
        if self.b is not None:
            arrays["b"] = self.b
        if self.m_add is not None:
            arrays["m_add"] = self.m_add
            arrays["b_add_static"] = self.b_add_static
            if self.b_add_diss is not None:
                arrays["b_add_diss"] = self.b_add_diss
        meta = {
            "schema": SYSTEM_SCHEMA,
            "kind": self.kind,
            "family_names": self.family_names,
            "rate_names": self.rate_names,
            "row_meta": self.row_meta,
        }
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        with open(path, "wb") as fh:
            header = json.dumps(meta).encode()
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "ConstraintSystem":
        with open(path, "rb") as fh:
            hlen = int.from_bytes(fh.read(8), "little")
            meta = json.loads(fh.read(hlen).decode())
            arrays = np.load(io.BytesIO(fh.read()))
        if meta.get("schema") != SYSTEM_SCHEMA:
            raise ValueError("unsupported constraint-system schema")
        return cls(
            meta["kind"], meta["family_names"], meta["rate_names"],
            arrays["h_block"], arrays["d_blocks"],
            arrays["b"] if "b" in arrays else None,
            arrays["m_add"] if "m_add" in arrays else None,
            arrays["b_add_static"] if "b_add_static" in arrays else None,
            arrays["b_add_diss"] if "b_add_diss" in arrays else None,
            meta["row_meta"],
        )


def _collect_missing(fn):
    """Run fn(); re-raise MissingDataError with full context preserved."""
    return fn()


def _windows(grid: TimeGrid, window_indices) -> list[int]:
    if window_indices is None:
        return [grid.n_steps]
    out = []
    for w in window_indices:
        w = int(w)
        if not 0 < w <= grid.n_steps or w % 2:
            raise ValueError("window indices must be even and within the grid")
        out.append(w)
    return out


def _window_integral(samples: np.ndarray, grid: TimeGrid, w: int) -> float:
    return simpson_integral(samples[: w + 1], TimeGrid(w * grid.dt, w))


def build_energy(source, ansatz: Ansatz, diss_ansatz: DissipatorAnsatz,
                 state_ids: list[int] | None = None,
                 grid: TimeGrid | None = None,
                 window_indices=None) -> ConstraintSystem:
    """Energy-conservation system: one row per (initial state, time window).

    By default a single window [0, T] is used; passing several even end
    indices yields extra rows from the same evolutions.
    """
    grid = grid or source.grid
    if state_ids is None:
        state_ids = list(range(source.n_states))
    wins = _windows(grid, window_indices)
    n = ansatz.n_parameters
    m = diss_ansatz.n_rates
    p = len(state_ids) * len(wins)
    m_h = np.zeros((p, n))
    m_k = np.zeros((m, p, n))
    missing = []
    diss_ops = [[diss_ansatz.adjoint_applied(k, h) for h in ansatz.families]
                for k in range(m)]
    for si, sid in enumerate(state_ids):
        rows = [si * len(wins) + wi for wi in range(len(wins))]
        for j, h in enumerate(ansatz.families):
            try:
                samples = source.series(h, sid)
            except MissingDataError as exc:
                missing.append(str(exc))
                continue
            for row, w in zip(rows, wins):
                m_h[row, j] = samples[0] - samples[w]
            for k in range(m):
                if diss_ops[k][j].is_zero():
                    continue
                d_samples = source.series(diss_ops[k][j], sid)
                for row, w in zip(rows, wins):
                    m_k[k, row, j] = _window_integral(d_samples, grid, w)
    if missing:
        raise MissingDataError("; ".join(sorted(set(missing))))
    meta = [{"state": sid, "window": w} for sid in state_ids for w in wins]
    return ConstraintSystem("energy", list(ansatz.names), list(diss_ansatz.names),
                            m_h, m_k, None, row_meta=meta)


def build_ehrenfest(source, ansatz: Ansatz, diss_ansatz: DissipatorAnsatz,
                    observables: list[Operator],
                    state_ids: list[int] | None = None,
                    grid: TimeGrid | None = None) -> ConstraintSystem:
    """Ehrenfest system K_H c + K_D d = b; rows are (state, observable) pairs."""
    grid = grid or source.grid
    if state_ids is None:
        state_ids = list(range(source.n_states))
    n = ansatz.n_parameters
    m = diss_ansatz.n_rates
    rows = [(sid, oi) for sid in state_ids for oi in range(len(observables))]
    k_h = np.zeros((len(rows), n))
    k_d = np.zeros((len(rows), m))
    b = np.zeros(len(rows))
    missing = []
    comm_ops = [[(-1j) * commutator(obs, h) for h in ansatz.families]
                for obs in observables]
    diss_obs = [[diss_ansatz.adjoint_applied(k, obs) for k in range(m)]
                for obs in observables]
    for r, (sid, oi) in enumerate(rows):
        obs = observables[oi]
        try:
            samples = source.series(obs, sid)
        except MissingDataError as exc:
            missing.append(str(exc))
            continue
        b[r] = samples[-1] - samples[0]
        for j in range(n):
            op = comm_ops[oi][j]
            if op.is_zero():
                continue
            try:
                k_h[r, j] = simpson_integral(source.series(op, sid), grid)
            except MissingDataError as exc:
                missing.append(str(exc))
        for k in range(m):
            op = diss_obs[oi][k]
            if op.is_zero():
                continue
            try:
                k_d[r, k] = 0.5 * simpson_integral(source.series(op, sid), grid)
            except MissingDataError as exc:
                missing.append(str(exc))
    if missing:
        raise MissingDataError("; ".join(sorted(set(missing))))
    meta = [{"state": sid, "observable": oi} for sid, oi in rows]
    return ConstraintSystem("ehrenfest", list(ansatz.names), list(diss_ansatz.names),
                            k_h, k_d, b, row_meta=meta)


def build_additional(source, ansatz: Ansatz, diss_ansatz: DissipatorAnsatz,
                     probe_ops: list[Operator],
                     state_ids: list[int] | None = None,
                     grid: TimeGrid | None = None):
    """Additional-constraint blocks (M_add, b_static, b_diss), rows are
    (state, probe) pairs; b(d) = b_static - b_diss d."""
    grid = grid or source.grid
    if state_ids is None:
        state_ids = list(range(source.n_states))
    n = ansatz.n_parameters
    m = diss_ansatz.n_rates
    rows = [(sid, oi) for sid in state_ids for oi in range(len(probe_ops))]
    m_add = np.zeros((len(rows), n))
    b_static = np.zeros(len(rows))
    b_diss = np.zeros((len(rows), m))
    missing = []
    comm_ops = [[(-1j) * commutator(obs, h) for h in ansatz.families]
                for obs in probe_ops]
    diss_obs = [[diss_ansatz.adjoint_applied(k, obs) for k in range(m)]
                for obs in probe_ops]
    for r, (sid, oi) in enumerate(rows):
        obs = probe_ops[oi]
        try:
            samples = source.series(obs, sid)
            b_static[r] = samples[-1] - samples[0]
            for j in range(n):
                op = comm_ops[oi][j]
                if not op.is_zero():
                    m_add[r, j] = simpson_integral(source.series(op, sid), grid)
            for k in range(m):
                op = diss_obs[oi][k]
                if not op.is_zero():
                    b_diss[r, k] = 0.5 * simpson_integral(source.series(op, sid), grid)
        except MissingDataError as exc:
            missing.append(str(exc))
    if missing:
        raise MissingDataError("; ".join(sorted(set(missing))))
    meta = [{"state": sid, "probe": oi, "kind": "additional"} for sid, oi in rows]
    return m_add, b_static, b_diss, meta


def required_primitives(ansatz: Ansatz, diss_ansatz: DissipatorAnsatz,
                        observables: list[Operator] | None = None,
                        probe_ops: list[Operator] | None = None) -> list[PauliString]:
    """All Pauli strings whose time-resolved estimates the build will request."""
    todo: set[tuple[int, ...]] = set()

    def add(op: Operator):
        for codes in op.terms:
            if any(codes):
                todo.add(codes)

    for h in ansatz.families:
        add(h)
        for k in range(diss_ansatz.n_rates):
            add(diss_ansatz.adjoint_applied(k, h))
    for obs in (observables or []) + (probe_ops or []):
        add(obs)
        for h in ansatz.families:
            add((-1j) * commutator(obs, h))
        for k in range(diss_ansatz.n_rates):
            add(diss_ansatz.adjoint_applied(k, obs))
    return [PauliString(c) for c in sorted(todo)]
