"""Concrete model systems and the ansatz catalog.

All couplings and rates are expressed in units of the longitudinal field
B_z (dimensionless time tau = B_z * t), so B_z = 1 unless overridden.

Models
------
* ``ising_model`` — next-nearest-neighbor Ising chain with polynomially
  varying couplings, transverse+longitudinal fields, and local absorption /
  emission / dephasing channels;
* ``xy_model`` — long-range XY chain (power-law couplings from jittered ion
  positions) with homogeneous decay and pairwise correlated dephasing
  Gamma_kl = gamma_z delta_kl + Gamma0;
* ``subsystem_model`` — non-interacting XY blocks, zero field and
  dissipation, used for size-scaling studies.

Ansatz names
------------
A1 all nine homogeneous nearest-neighbor couplings; A2 {sum ZZ, sum X,
sum Z}; A3 = A2 + next-nearest xx, yy, zz; A4 = A2 + next-nearest zz;
A5 site-resolved sufficient Ising ansatz (4N-3 slots); AXY long-range pair
couplings + field with a power-law parametrization G(alpha); A_sub the
block analogue.  Dissipator catalogs: D_loc (sigma+, sigma-, sigma^z),
D_col (decay, local dephasing, collective dephasing), D_dist (dephasing by
distance).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import Ansatz, DissipatorAnsatz
from .dynamics import LindbladModel
from .pauli import Operator
from .solver import Parametrization


@dataclass
class ModelSpec:
    name: str
    n_sites: int
    model: LindbladModel
    params: dict = field(default_factory=dict)
    true_rates: dict = field(default_factory=dict)
    block_models: list[LindbladModel] | None = None

    @property
    def hamiltonian(self) -> Operator:
        return self.model.hamiltonian


ISING_POLY_A = (6 / 5, 1 / 20, 1 / 5, 0.0, -2 / 5)
ISING_POLY_B = (1 / 5, 1 / 20, -2 / 5, 0.0, 4 / 5)
ISING_RATES = (1e-2, 1.5e-2, 2e-2)  # (gamma_plus, gamma_minus, gamma_z)


def _poly(coeffs, x: float) -> float:
    return float(np.polyval(list(coeffs)[::-1], x))


def ising_coupling(n: int, i: int, j: int, coeffs) -> float:
    """Coupling from the 4th-order polynomial in x_ij = ((i+j)-(N+1))/N,
    with 1-based site labels i, j."""
    x = ((i + j) - (n + 1)) / n
    return _poly(coeffs, x)


def ising_model(n: int, b_z: float = 1.0, b_x_ratio: float = 4 / 5,
                poly_a=ISING_POLY_A, poly_b=ISING_POLY_B,
                rates=ISING_RATES) -> ModelSpec:
    """Next-nearest-neighbor Ising chain with local dissipation."""
    if n < 3:
        raise ValueError("ising_model needs n >= 3")
    h = Operator.zero(n)
    for i in range(n - 1):
        j = ising_coupling(n, i + 1, i + 2, poly_a) * b_z
        h = h + j * Operator.from_string(
            _two(n, i, "Z", i + 1, "Z"))
    for i in range(n - 2):
        j = ising_coupling(n, i + 1, i + 3, poly_b) * b_z
        h = h + j * Operator.from_string(_two(n, i, "Z", i + 2, "Z"))
    b_x = b_x_ratio * b_z
    for i in range(n):
        h = h + b_x * Operator.single(n, i, "X") + b_z * Operator.single(n, i, "Z")
    g_plus, g_minus, g_z = (r * b_z / 1.0 for r in rates)
    channels = []
    for i in range(n):
        channels.append((Operator.sigma_plus(n, i), Operator.sigma_plus(n, i), g_plus))
        channels.append((Operator.sigma_minus(n, i), Operator.sigma_minus(n, i), g_minus))
        channels.append((Operator.single(n, i, "Z"), Operator.single(n, i, "Z"), g_z))
    spec = ModelSpec(
        "ising", n, LindbladModel(n, h, channels),
        params={"b_z": b_z, "b_x": b_x, "poly_a": tuple(poly_a),
                "poly_b": tuple(poly_b)},
        true_rates={"d+": g_plus, "d-": g_minus, "dz": g_z},
    )
    return spec


def _two(n, i, a, j, b):
    from .pauli import PauliString

    return PauliString.two_site(n, i, a, j, b)


def xy_pair(n: int, i: int, j: int) -> Operator:
    """Interaction family sigma^x_i sigma^x_j + sigma^y_i sigma^y_j."""
    return (Operator.from_string(_two(n, i, "X", j, "X"))
            + Operator.from_string(_two(n, i, "Y", j, "Y")))


def xy_positions(n: int, jitter: float, rng_seed) -> np.ndarray:
    pos = np.arange(1, n + 1, dtype=float)
    if jitter:
        pos += np.random.default_rng(rng_seed).uniform(-jitter, jitter, size=n)
    return pos


def xy_model(n: int, j0: float = 6 / 5, alpha: float = 1.5, b_z: float = 1.0,
             jitter: float = 0.05, gamma_minus: float | None = None,
             gamma_z: float | None = None, gamma0: float | None = None,
             rng_seed=0) -> ModelSpec:
    """Long-range XY chain with decay and pairwise correlated dephasing."""
    if not 0.0 <= alpha <= 3.0:
        raise ValueError("alpha must lie in [0, 3]")
    gamma0 = b_z / 40 if gamma0 is None else gamma0
    gamma_z = 3 * gamma0 if gamma_z is None else gamma_z
    gamma_minus = b_z / 20 if gamma_minus is None else gamma_minus
    pos = xy_positions(n, jitter, rng_seed)
    h = Operator.zero(n)
    couplings = {}
    for i in range(n):
        for j in range(i + 1, n):
            jij = j0 * b_z / abs(pos[i] - pos[j]) ** alpha
            couplings[(i, j)] = jij
            h = h + jij * xy_pair(n, i, j)
        h = h + b_z * Operator.single(n, i, "Z")
    channels = []
    for i in range(n):
        channels.append((Operator.sigma_minus(n, i), Operator.sigma_minus(n, i),
                         gamma_minus))
    for k in range(n):
        for l in range(n):
            rate = gamma_z + gamma0 if k == l else gamma0
            channels.append((Operator.single(n, k, "Z"), Operator.single(n, l, "Z"),
                             rate))
    return ModelSpec(
        "xy", n, LindbladModel(n, h, channels),
        params={"j0": j0, "alpha": alpha, "b_z": b_z, "jitter": jitter,
                "positions": pos.tolist(), "couplings": {f"{i}-{j}": v
                                                         for (i, j), v in couplings.items()}},
        true_rates={"d-": gamma_minus, "dz": gamma_z + gamma0, "dz_col": gamma0},
    )


def subsystem_model(n_blocks: int, block_size: int, j0: float = 6 / 5,
                    alpha: float = 1.5, jitter: float = 0.0,
                    rng_seed=0) -> ModelSpec:
    """Non-interacting XY blocks with zero field and zero dissipation."""
    blocks = []
    n_total = n_blocks * block_size
    h = Operator.zero(n_total)
    for b in range(n_blocks):
        pos = xy_positions(block_size, jitter, (rng_seed, b))
        hb = Operator.zero(block_size)
        for i in range(block_size):
            for j in range(i + 1, block_size):
                jij = j0 / abs(pos[i] - pos[j]) ** alpha
                hb = hb + jij * xy_pair(block_size, i, j)
                off = b * block_size
                h = h + jij * xy_pair(n_total, off + i, off + j)
        blocks.append(LindbladModel(block_size, hb, []))
    return ModelSpec(
        "subsystem", n_total, LindbladModel(n_total, h, []),
        params={"n_blocks": n_blocks, "block_size": block_size, "j0": j0,
                "alpha": alpha, "jitter": jitter},
        block_models=blocks,
    )


# -- ansatz catalog -------------------------------------------------------


def _sum_single(n, letter):
    op = Operator.zero(n)
    for i in range(n):
        op = op + Operator.single(n, i, letter)
    return op


def _sum_pair(n, a, b, distance):
    op = Operator.zero(n)
    for i in range(n - distance):
        op = op + Operator.from_string(_two(n, i, a, i + distance, b))
    return op


def ansatz_library(name: str, n: int) -> Ansatz:
    """Named Hamiltonian ansatz families; see the module docstring."""
    if name == "A1":
        names, fams = [], []
        for i, a in enumerate("XYZ"):
            for b in "XYZ"[i:]:
                names.append(f"{a.lower()}{b.lower()}_nn")
                op = _sum_pair(n, a, b, 1)
                if a != b:
                    op = op + _sum_pair(n, b, a, 1)
                fams.append(op)
        for a in "XYZ":
            names.append(a.lower())
            fams.append(_sum_single(n, a))
        return Ansatz(names, fams)
    if name == "A2":
        return Ansatz(["zz_nn", "x", "z"],
                      [_sum_pair(n, "Z", "Z", 1), _sum_single(n, "X"),
                       _sum_single(n, "Z")])
    if name == "A3":
        base = ansatz_library("A2", n)
        return Ansatz(base.names + ["xx_nnn", "yy_nnn", "zz_nnn"],
                      base.families + [_sum_pair(n, "X", "X", 2),
                                       _sum_pair(n, "Y", "Y", 2),
                                       _sum_pair(n, "Z", "Z", 2)])
    if name == "A4":
        base = ansatz_library("A2", n)
        return Ansatz(base.names + ["zz_nnn"],
                      base.families + [_sum_pair(n, "Z", "Z", 2)])
    if name == "A5":
        names, fams = [], []
        for i in range(n - 1):
            names.append(f"zz_{i}_{i + 1}")
            fams.append(Operator.from_string(_two(n, i, "Z", i + 1, "Z")))
        for i in range(n - 2):
            names.append(f"zz_{i}_{i + 2}")
            fams.append(Operator.from_string(_two(n, i, "Z", i + 2, "Z")))
        for i in range(n):
            names.append(f"x_{i}")
            fams.append(Operator.single(n, i, "X"))
        for i in range(n):
            names.append(f"z_{i}")
            fams.append(Operator.single(n, i, "Z"))
        return Ansatz(names, fams)
    if name == "AXY":
        names, fams = [], []
        for i in range(n):
            for j in range(i + 1, n):
                names.append(f"xy_{i}_{j}")
                fams.append(xy_pair(n, i, j))
        names.append("z")
        fams.append(_sum_single(n, "Z"))
        return Ansatz(names, fams)
    if name == "A_sub":
        raise ValueError("A_sub needs a block size; use subsystem_ansatz")
    raise ValueError(f"unknown ansatz {name!r}")


def subsystem_ansatz(n_blocks: int, block_size: int) -> Ansatz:
    """Intra-block pair couplings for every block (block-local AXY families)."""
    n = n_blocks * block_size
    names, fams = [], []
    for b in range(n_blocks):
        off = b * block_size
        for i in range(block_size):
            for j in range(i + 1, block_size):
                names.append(f"xy_b{b}_{i}_{j}")
                fams.append(xy_pair(n, off + i, off + j))
    return Ansatz(names, fams)


def xy_parametrization(n: int, alpha_bounds=(0.0, 3.0),
                       positions: np.ndarray | None = None) -> Parametrization:
    """G(alpha) for the AXY ansatz: one power-law interaction column over the
    pair families plus one field column."""
    pos = np.arange(1, n + 1, dtype=float) if positions is None \
        else np.asarray(positions, dtype=float)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def gen(alpha):
        a = float(alpha[0])
        col = np.zeros((len(pairs) + 1, 2))
        for r, (i, j) in enumerate(pairs):
            col[r, 0] = 1.0 / abs(pos[i] - pos[j]) ** a
        col[-1, 1] = 1.0
        return col

    return Parametrization(gen, np.array([list(alpha_bounds)]),
                           names=["j0", "b_z"])


def subsystem_parametrization(n_blocks: int, block_size: int,
                              alpha_bounds=(0.0, 3.0)) -> Parametrization:
    """Single shared power-law column over every block's pair families."""
    pairs = [(i, j) for i in range(block_size) for j in range(i + 1, block_size)]

    def gen(alpha):
        a = float(alpha[0])
        block_col = np.array([1.0 / abs(i - j) ** a for i, j in pairs])
        return np.tile(block_col, n_blocks).reshape(-1, 1)

    return Parametrization(gen, np.array([list(alpha_bounds)]), names=["j0"])


# -- dissipator catalog ---------------------------------------------------


def dissipator_library(name: str, n: int, max_distance: int | None = None
                       ) -> DissipatorAnsatz:
    if name == "D_loc":
        return DissipatorAnsatz(
            ["d+", "d-", "dz"],
            [[(Operator.sigma_plus(n, i), Operator.sigma_plus(n, i))
              for i in range(n)],
             [(Operator.sigma_minus(n, i), Operator.sigma_minus(n, i))
              for i in range(n)],
             [(Operator.single(n, i, "Z"), Operator.single(n, i, "Z"))
              for i in range(n)]],
        )
    if name == "D_col":
        z = lambda i: Operator.single(n, i, "Z")
        cross = [(z(k), z(l)) for k in range(n) for l in range(n) if k != l]
        return DissipatorAnsatz(
            ["d-", "dz", "dz_col"],
            [[(Operator.sigma_minus(n, i), Operator.sigma_minus(n, i))
              for i in range(n)],
             [(z(i), z(i)) for i in range(n)],
             cross],
        )
    if name == "D_dist":
        z = lambda i: Operator.single(n, i, "Z")
        cap = n - 1 if max_distance is None else min(max_distance, n - 1)
        names = ["d-"] + [f"dz_{delta}" for delta in range(cap + 1)]
        fams = [[(Operator.sigma_minus(n, i), Operator.sigma_minus(n, i))
                 for i in range(n)]]
        for delta in range(cap + 1):
            if delta == 0:
                fams.append([(z(i), z(i)) for i in range(n)])
            else:
                fams.append([(z(k), z(l)) for k in range(n) for l in range(n)
                             if abs(k - l) == delta])
        return DissipatorAnsatz(names, fams)
    raise ValueError(f"unknown dissipator ansatz {name!r}")


# -- probe sets -----------------------------------------------------------


def probe_set(name: str, n: int) -> list[Operator]:
    """Additional-constraint probe observables."""
    if name == "single":
        return [Operator.single(n, 0, a) for a in "XYZ"]
    if name == "two_qubit":
        singles = [Operator.single(n, 0, a) for a in "XYZ"]
        pairs = [Operator.from_string(_two(n, 0, a, 1, b))
                 for a in "XY" for b in "XY"]
        return singles + pairs
    raise ValueError(f"unknown probe set {name!r}")


def true_coefficients(spec: ModelSpec, ansatz: Ansatz) -> np.ndarray:
    """Least-squares projection of the true Hamiltonian onto the ansatz
    (exact for a sufficient ansatz)."""
    return ansatz.project(spec.hamiltonian)


def true_rate_vector(spec: ModelSpec, diss: DissipatorAnsatz) -> np.ndarray:
    """True rates for catalog dissipator ansätze, keyed by family name."""
    out = np.zeros(diss.n_rates)
    for k, name in enumerate(diss.names):
        if name in spec.true_rates:
            out[k] = spec.true_rates[name]
        elif name.startswith("dz_") and name != "dz_col":
            delta = int(name.split("_")[1])
            if spec.name == "xy":
                out[k] = spec.true_rates["dz"] if delta == 0 \
                    else spec.true_rates["dz_col"]
    return out
