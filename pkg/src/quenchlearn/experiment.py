"""Shot-limited measurement simulation for quench experiments.

Each measurement setting fixes an initial state, a product Pauli basis, a
grid time and a shot count.  Sampling rotates the evolved density matrix
into the measurement basis with single-site unitaries and draws full
bit-strings from the diagonal, so estimates of overlapping observables
extracted from the same shots carry the correct correlations.

Per-setting RNG streams are derived from (seed, setting index), and shots
are drawn one uniform per shot in stream order, so a dataset truncated to a
prefix of each setting's shots is bit-identical to one generated with the
smaller budget ("data recycling").
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DensityMatrix, LindbladModel, TimeGrid, evolve
from .pauli import DimensionError, Operator, PauliString

DATASET_SCHEMA = 1

_SQ = 1.0 / np.sqrt(2.0)
# Unitaries with U sigma_a U^dag = Z; rows are the +1 / -1 eigenvectors.
_BASIS_ROT = {
    "X": np.array([[_SQ, _SQ], [_SQ, -_SQ]], dtype=complex),
    "Y": np.array([[_SQ, -1j * _SQ], [_SQ, 1j * _SQ]], dtype=complex),
    "Z": np.eye(2, dtype=complex),
}


class MissingDataError(LookupError):
    """No measurement setting is compatible with the requested operator."""


def derive_seed(*parts) -> tuple[int, ...]:
    """Flatten nested seed parts into an integer tuple for default_rng;
    strings hash stably via crc32."""
    out: list[int] = []
    for p in parts:
        if isinstance(p, (tuple, list)):
            out.extend(derive_seed(*p))
        elif isinstance(p, str):
            out.append(zlib.crc32(p.encode()))
        elif p is None:
            out.append(0)
        else:
            out.append(int(p))
    return tuple(out)


@dataclass
class ProductState:
    """Pure product state given by one Bloch unit vector per site."""

    vectors: np.ndarray  # (n_sites, 3)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("Bloch vectors must have unit norm")

    @property
    def n_sites(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def all_up(cls, n_sites: int) -> "ProductState":
        v = np.zeros((n_sites, 3))
        v[:, 2] = 1.0
        return cls(v)

    @classmethod
    def haar_random(cls, n_sites: int, rng_seed) -> "ProductState":
        rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
               else np.random.default_rng(derive_seed(rng_seed)))
        v = rng.normal(size=(n_sites, 3))
        return cls(v / np.linalg.norm(v, axis=1, keepdims=True))

    def site_ket(self, site: int) -> np.ndarray:
        x, y, z = self.vectors[site]
        theta = np.arccos(np.clip(z, -1.0, 1.0))
        phi = np.arctan2(y, x)
        return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])

    def to_density_matrix(self) -> DensityMatrix:
        ket = np.array([1.0 + 0j])
        for i in range(self.n_sites):
            ket = np.kron(ket, self.site_ket(i))
        return DensityMatrix.pure(self.n_sites, ket)

    def pauli_expectation(self, p: PauliString) -> float:
        """Exact expectation of a Pauli string (product over support)."""
        val = 1.0
        for site, code in enumerate(p.codes):
            if code:
                val *= self.vectors[site, code - 1]
        return val


@dataclass(frozen=True)
class MeasurementSetting:
    state_id: int
    basis: str  # one letter in {X,Y,Z} per site
    time_index: int
    shots: int

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if any(c not in "XYZ" for c in self.basis):
            raise ValueError(f"invalid basis {self.basis!r}")


def basis_rotation(basis: str) -> np.ndarray:
    u = np.array([[1.0 + 0j]])
    for letter in basis:
        u = np.kron(u, _BASIS_ROT[letter])
    return u


def sample_probabilities(rho: np.ndarray, basis: str) -> np.ndarray:
    """Outcome distribution of a product-basis projective measurement."""
    u = basis_rotation(basis)
    p = np.einsum("ij,jk,ik->i", u, rho, u.conj()).real
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _indices_to_words(idx: np.ndarray, n_sites: int) -> np.ndarray:
    """Map basis-state indices to +-1 outcome words, site 0 = highest bit."""
    shots = idx.size
    words = np.empty((shots, n_sites), dtype=np.int8)
    for site in range(n_sites):
        bit = 1 << (n_sites - 1 - site)
        words[:, site] = np.where(idx & bit, -1, 1)
    return words


def sample_words(probabilities: np.ndarray, shots: int, rng: np.random.Generator,
                 n_sites: int) -> np.ndarray:
    """Draw outcome words; one uniform per shot keeps shot prefixes stable."""
    cdf = np.cumsum(probabilities)
    cdf[-1] = 1.0
    u = rng.random(shots)
    idx = np.searchsorted(cdf, u, side="right")
    return _indices_to_words(idx, n_sites)


def sample_setting(model: LindbladModel, state: ProductState, setting: MeasurementSetting,
                   grid: TimeGrid, rng_seed, substeps: int | None = None) -> np.ndarray:
    """Sample one setting from scratch (evolves the state; see simulate_dataset
    for the batched path that reuses evolutions)."""
    if len(setting.basis) != model.n_sites:
        raise DimensionError("basis length must equal model size")
    states = evolve(model, state.to_density_matrix(), grid, substeps)
    rho = states[setting.time_index].entries
    rng = np.random.default_rng(derive_seed(rng_seed))
    return sample_words(sample_probabilities(rho, setting.basis), setting.shots, rng,
                        model.n_sites)


@dataclass
class QuenchDataset:
    """Shot records per (initial state, basis, time); sole input to learning."""

    n_sites: int
    grid: TimeGrid
    settings: list[MeasurementSetting]
    records: list[np.ndarray]
    initial_states: list[ProductState] = field(default_factory=list)

    def __post_init__(self):
        if len(self.settings) != len(self.records):
            raise ValueError("one record array per setting required")
        for s, r in zip(self.settings, self.records):
            if r.shape != (s.shots, self.n_sites):
                raise ValueError("record shape must be (shots, n_sites)")

    @property
    def n_runs(self) -> int:
        return sum(s.shots for s in self.settings)

    def truncated(self, shots_per_setting: int) -> "QuenchDataset":
        """Prefix-truncate every setting to at most the given shot count."""
        settings = []
        records = []
        for s, r in zip(self.settings, self.records):
            k = min(s.shots, shots_per_setting)
            settings.append(MeasurementSetting(s.state_id, s.basis, s.time_index, k))
            records.append(r[:k])
        return QuenchDataset(self.n_sites, self.grid, settings, records,
                             self.initial_states)

    def estimate(self, op: PauliString, state_id: int, time_index: int) -> tuple[float, int]:
        """Pooled sample mean of a Pauli string over all compatible settings."""
        support = op.support
        total = 0.0
        count = 0
        for s, r in zip(self.settings, self.records):
            if s.state_id != state_id or s.time_index != time_index:
                continue
            if any(s.basis[i] != "IXYZ"[op.codes[i]] for i in support):
                continue
            prod = np.prod(r[:, support], axis=1) if support else np.ones(s.shots)
            total += prod.sum()
            count += s.shots
        if count == 0:
            raise MissingDataError(
                f"no setting measures {op.label} for state {state_id} at time index {time_index}"
            )
        return total / count, count

    # -- serialization ---------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "schema": DATASET_SCHEMA,
            "n_sites": self.n_sites,
            "grid": {"total_time": self.grid.total_time, "n_steps": self.grid.n_steps},
            "initial_states": [s.vectors.tolist() for s in self.initial_states],
            "settings": [
                {
                    "state_id": s.state_id,
                    "basis": s.basis,
                    "time_index": s.time_index,
                    "shots": s.shots,
                    "words_rle": _rle_encode(_words_to_indices(r)),
                }
                for s, r in zip(self.settings, self.records)
            ],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "QuenchDataset":
        payload = json.loads(text)
        if payload.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"unsupported dataset schema {payload.get('schema')!r}")
        n = payload["n_sites"]
        grid = TimeGrid(payload["grid"]["total_time"], payload["grid"]["n_steps"])
        settings = []
        records = []
        for entry in payload["settings"]:
            s = MeasurementSetting(entry["state_id"], entry["basis"],
                                   entry["time_index"], entry["shots"])
            idx = _rle_decode(entry["words_rle"])
            if idx.size != s.shots:
                raise ValueError("run-length data inconsistent with shot count")
            settings.append(s)
            records.append(_indices_to_words(idx, n))
        states = [ProductState(np.array(v)) for v in payload.get("initial_states", [])]
        return cls(n, grid, settings, records, states)


def _words_to_indices(words: np.ndarray) -> np.ndarray:
    n = words.shape[1]
    idx = np.zeros(words.shape[0], dtype=np.int64)
    for site in range(n):
        idx = (idx << 1) | (words[:, site] < 0)
    return idx


def _rle_encode(values: np.ndarray) -> list[list[int]]:
    out: list[list[int]] = []
    for v in values.tolist():
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([int(v), 1])
    return out


def _rle_decode(pairs: list[list[int]]) -> np.ndarray:
    if not pairs:
        return np.zeros(0, dtype=np.int64)
    vals, counts = zip(*pairs)
    return np.repeat(np.asarray(vals, dtype=np.int64), counts)


def simulate_dataset(
    model: LindbladModel,
    states: list[ProductState],
    bases: list[str],
    grid: TimeGrid,
    shots_per_setting,
    rng_seed,
    time_indices: list[int] | None = None,
    substeps: int | None = None,
) -> QuenchDataset:
    """Sample every (state, basis, time) setting; evolves each state once.

    shots_per_setting is either a flat count or a callable
    (state_id, basis, time_index) -> count, for budgets that concentrate
    runs on particular settings (e.g. the window endpoints).
    """
    if time_indices is None:
        time_indices = list(range(grid.n_steps + 1))
    if not callable(shots_per_setting):
        flat = int(shots_per_setting)
        shots_per_setting = lambda state_id, basis, ti: flat
    settings = []
    records = []
    setting_index = 0
    for state_id, state in enumerate(states):
        evolved = evolve(model, state.to_density_matrix(), grid, substeps)
        probs = {}
        for basis in bases:
            for ti in time_indices:
                if (basis, ti) not in probs:
                    probs[(basis, ti)] = sample_probabilities(evolved[ti].entries, basis)
                rng = np.random.default_rng(derive_seed(rng_seed, setting_index))
                shots = int(shots_per_setting(state_id, basis, ti))
                settings.append(MeasurementSetting(state_id, basis, ti, shots))
                records.append(sample_words(probs[(basis, ti)], shots, rng,
                                            model.n_sites))
                setting_index += 1
    return QuenchDataset(model.n_sites, grid, settings, records, list(states))


def simulate_dataset_factorized(
    block_models: list[LindbladModel],
    block_states: list[ProductState],
    bases: list[str],
    grid: TimeGrid,
    shots_per_setting: int,
    rng_seed,
    time_indices: list[int] | None = None,
    substeps: int | None = None,
) -> QuenchDataset:
    """Sampling path for block-diagonal models with a product initial state.

    Blocks evolve independently, so each block's bits are drawn from its own
    diagonal; the joint distribution is the product over blocks.
    """
    if time_indices is None:
        time_indices = list(range(grid.n_steps + 1))
    sizes = [m.n_sites for m in block_models]
    n_total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    evolved = [
        evolve(m, s.to_density_matrix(), grid, substeps)
        for m, s in zip(block_models, block_states)
    ]
    full_state = ProductState(np.vstack([s.vectors for s in block_states]))
    settings = []
    records = []
    setting_index = 0
    prob_cache: dict[tuple[int, str, int], np.ndarray] = {}
    for basis in bases:
        if len(basis) != n_total:
            raise DimensionError("basis length must equal total size")
        for ti in time_indices:
            rng = np.random.default_rng(derive_seed(rng_seed, setting_index))
            words = np.empty((shots_per_setting, n_total), dtype=np.int8)
            u = rng.random((shots_per_setting, len(block_models)))
            for b, (model, lo, hi) in enumerate(zip(block_models, offsets[:-1], offsets[1:])):
                key = (b, basis[lo:hi], ti)
                if key not in prob_cache:
                    prob_cache[key] = sample_probabilities(evolved[b][ti].entries,
                                                           basis[lo:hi])
                cdf = np.cumsum(prob_cache[key])
                cdf[-1] = 1.0
                idx = np.searchsorted(cdf, u[:, b], side="right")
                words[:, lo:hi] = _indices_to_words(idx, model.n_sites)
            settings.append(MeasurementSetting(0, basis, ti, shots_per_setting))
            records.append(words)
            setting_index += 1
    return QuenchDataset(n_total, grid, settings, records, [full_state])


# -- basis selection -----------------------------------------------------


def group_bases(ops: list[PauliString]) -> list[str]:
    """Greedy grouping of Pauli strings into jointly measurable product bases.

    First-fit merge in a deterministic order (larger support first, then
    lexicographic), then unset sites are filled by period-2 continuation so
    that staggered two-site families complete to alternating patterns.
    """
    if not ops:
        raise ValueError("ops must be non-empty")
    n = ops[0].n_sites
    order = sorted(set(ops), key=lambda p: (-p.weight, p.label, p.support))
    partial: list[list[str | None]] = []
    for op in order:
        placed = False
        for basis in partial:
            if all(basis[i] in (None, "IXYZ"[op.codes[i]]) for i in op.support):
                for i in op.support:
                    basis[i] = "IXYZ"[op.codes[i]]
                placed = True
                break
        if not placed:
            basis = [None] * n
            for i in op.support:
                basis[i] = "IXYZ"[op.codes[i]]
            partial.append(basis)
    out = []
    for basis in partial:
        for i in range(n):
            if basis[i] is None:
                if i >= 2 and basis[i - 2] is not None:
                    basis[i] = basis[i - 2]
                elif i + 2 < n and basis[i + 2] is not None:
                    basis[i] = basis[i + 2]
                elif i >= 1 and basis[i - 1] is not None:
                    basis[i] = basis[i - 1]
                else:
                    basis[i] = "X"
        out.append("".join(basis))
    return sorted(out)


def random_bases(n_bases: int, n_sites: int, rng_seed) -> list[str]:
    """Uniform i.i.d. product Pauli bases; deterministic per seed."""
    rng = np.random.default_rng(derive_seed(rng_seed))
    letters = np.array(list("XYZ"))
    draws = rng.integers(0, 3, size=(n_bases, n_sites))
    return ["".join(letters[row]) for row in draws]


def export_estimates_csv(dataset: QuenchDataset, ops: list[PauliString], path) -> None:
    """CSV of pooled expectation estimates per (op, state, time)."""
    lines = ["op,state_id,time_index,time,mean,n_shots"]
    times = dataset.grid.times
    state_ids = sorted({s.state_id for s in dataset.settings})
    time_indices = sorted({s.time_index for s in dataset.settings})
    for op in ops:
        for sid in state_ids:
            for ti in time_indices:
                try:
                    mean, count = dataset.estimate(op, sid, ti)
                except MissingDataError:
                    continue
                lines.append(f"{op.label},{sid},{ti},{times[ti]!r},{mean!r},{count}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
