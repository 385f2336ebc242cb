"""Exact algebra of N-qubit Pauli strings and complex-weighted sums thereof.

Pauli strings are stored as per-site letter codes (0=I, 1=X, 2=Y, 3=Z).
Products carry exact unit phases from a precomputed single-site table, so
string multiplication is O(N) with no floating-point phase drift.

Conventions
-----------
Site 0 is the leftmost tensor factor, i.e. the dense matrix of a string is
``kron(m[0], m[1], ..., m[N-1])``.  The lowering operator is
``sigma_minus = (X + iY)/2``, which maps the +1 eigenstate |0> of Z to the
-1 eigenstate |1>.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

LETTERS = "IXYZ"
_CODE = {c: i for i, c in enumerate(LETTERS)}

_SINGLE = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

# Single-site product tables: sigma_a sigma_b = PHASE[a,b] * sigma_{PRODUCT[a,b]}
_PRODUCT = np.zeros((4, 4), dtype=np.int8)
_PHASE = np.zeros((4, 4), dtype=complex)
for _a in range(4):
    for _b in range(4):
        _m = _SINGLE[_a] @ _SINGLE[_b]
        for _c in range(4):
            _tr = np.trace(_SINGLE[_c].conj().T @ _m) / 2
            if abs(_tr) > 0.5:
                _PRODUCT[_a, _b] = _c
                _PHASE[_a, _b] = complex(np.round(_tr.real), np.round(_tr.imag))
                break

PRUNE_TOL = 1e-15


class DimensionError(ValueError):
    """Raised when operators or states of different sizes are combined."""


@dataclass(frozen=True)
class PauliString:
    """An N-site Pauli string, e.g. ``PauliString.from_label("XZI")``."""

    codes: tuple[int, ...]

    @property
    def n_sites(self) -> int:
        return len(self.codes)

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        return cls(tuple(_CODE[c] for c in label))

    @classmethod
    def identity(cls, n_sites: int) -> "PauliString":
        return cls((0,) * n_sites)

    @classmethod
    def single(cls, n_sites: int, site: int, letter: str) -> "PauliString":
        codes = [0] * n_sites
        codes[site] = _CODE[letter]
        return cls(tuple(codes))

    @classmethod
    def two_site(cls, n_sites: int, i: int, a: str, j: int, b: str) -> "PauliString":
        codes = [0] * n_sites
        codes[i] = _CODE[a]
        codes[j] = _CODE[b]
        return cls(tuple(codes))

    @property
    def label(self) -> str:
        return "".join(LETTERS[c] for c in self.codes)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.codes) if c != 0)

    @property
    def weight(self) -> int:
        return sum(1 for c in self.codes if c != 0)

    def __str__(self) -> str:
        return self.label


def multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Product of two strings as ``(phase, string)`` with phase in {1,-1,i,-i}."""
    if a.n_sites != b.n_sites:
        raise DimensionError(f"size mismatch: {a.n_sites} vs {b.n_sites}")
    phase = 1 + 0j
    codes = []
    for ca, cb in zip(a.codes, b.codes):
        phase *= _PHASE[ca, cb]
        codes.append(int(_PRODUCT[ca, cb]))
    return phase, PauliString(tuple(codes))


@lru_cache(maxsize=100_000)
def _action(codes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Sparse action of a Pauli string: P|j> = phases[j] |cols[j]>.

    Each string has exactly one nonzero entry per column, so this avoids
    materializing 2^N x 2^N matrices.
    """
    n = len(codes)
    dim = 1 << n
    cols = np.arange(dim)
    phases = np.ones(dim, dtype=complex)
    for site, c in enumerate(codes):
        if c == 0:
            continue
        bit = 1 << (n - 1 - site)
        occupied = (cols & bit) != 0
        if c == 1:  # X flips
            cols = cols ^ bit
        elif c == 2:  # Y flips with phase
            phases = phases * np.where(occupied, -1j, 1j)
            cols = cols ^ bit
        else:  # Z
            phases = phases * np.where(occupied, -1.0, 1.0)
    return cols, phases


def string_matrix(p: PauliString) -> np.ndarray:
    """Dense 2^N x 2^N matrix of a Pauli string."""
    cols, phases = _action(p.codes)
    dim = cols.size
    m = np.zeros((dim, dim), dtype=complex)
    m[cols, np.arange(dim)] = phases
    return m


def string_expectation(p: PauliString, rho: np.ndarray) -> complex:
    """tr(P rho) using the sparse one-entry-per-column structure."""
    cols, phases = _action(p.codes)
    return complex(np.dot(phases, rho[np.arange(cols.size), cols]))


class Operator:
    """A complex-weighted sum of Pauli strings on a fixed number of sites.

    Terms with |coefficient| <= 1e-15 are pruned after every arithmetic
    operation; this keeps float cancellation from accumulating dead terms
    without affecting 1e-12-level assertions.
    """

    __slots__ = ("n_sites", "terms")

    def __init__(self, n_sites: int, terms: Mapping[tuple[int, ...], complex] | None = None):
        self.n_sites = int(n_sites)
        clean: dict[tuple[int, ...], complex] = {}
        if terms:
            for codes, coeff in terms.items():
                if len(codes) != self.n_sites:
                    raise DimensionError("all strings must share n_sites")
                c = complex(coeff)
                if abs(c) > PRUNE_TOL:
                    clean[codes] = c
        self.terms = clean

    # -- constructors ----------------------------------------------------

    @classmethod
    def zero(cls, n_sites: int) -> "Operator":
        return cls(n_sites)

    @classmethod
    def from_string(cls, p: PauliString, coeff: complex = 1.0) -> "Operator":
        return cls(p.n_sites, {p.codes: coeff})

    @classmethod
    def from_label(cls, label: str, coeff: complex = 1.0) -> "Operator":
        return cls.from_string(PauliString.from_label(label), coeff)

    @classmethod
    def single(cls, n_sites: int, site: int, letter: str, coeff: complex = 1.0) -> "Operator":
        return cls.from_string(PauliString.single(n_sites, site, letter), coeff)

    @classmethod
    def sigma_minus(cls, n_sites: int, site: int) -> "Operator":
        """Lowering operator (X - iY)/2 on one site, |0> -> |1>.

        Lowers toward the -1 eigenstate of Z.
        """
        x = PauliString.single(n_sites, site, "X")
        y = PauliString.single(n_sites, site, "Y")
        return cls(n_sites, {x.codes: 0.5, y.codes: -0.5j})

    @classmethod
    def sigma_plus(cls, n_sites: int, site: int) -> "Operator":
        """Raising operator (X + iY)/2 on one site, |1> -> |0>."""
        x = PauliString.single(n_sites, site, "X")
        y = PauliString.single(n_sites, site, "Y")
        return cls(n_sites, {x.codes: 0.5, y.codes: 0.5j})

    # -- algebra ---------------------------------------------------------

    def _check(self, other: "Operator") -> None:
        if self.n_sites != other.n_sites:
            raise DimensionError(f"size mismatch: {self.n_sites} vs {other.n_sites}")

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        terms = dict(self.terms)
        for codes, coeff in other.terms.items():
            terms[codes] = terms.get(codes, 0.0) + coeff
        return Operator(self.n_sites, terms)

    def __sub__(self, other: "Operator") -> "Operator":
        return self + (other * -1.0)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.n_sites, {k: v * scalar for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        terms: dict[tuple[int, ...], complex] = {}
        for ca, va in self.terms.items():
            pa = PauliString(ca)
            for cb, vb in other.terms.items():
                phase, p = multiply(pa, PauliString(cb))
                terms[p.codes] = terms.get(p.codes, 0.0) + va * vb * phase
        return Operator(self.n_sites, terms)

    def dagger(self) -> "Operator":
        return Operator(self.n_sites, {k: v.conjugate() for k, v in self.terms.items()})

    def is_zero(self) -> bool:
        return not self.terms

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        # Pauli strings are self-adjoint, so hermiticity <=> real coefficients.
        return all(abs(v.imag) <= tol for v in self.terms.values())

    def norm(self) -> float:
        """Frobenius norm divided by sqrt(2^N) (coefficient 2-norm)."""
        return float(np.sqrt(sum(abs(v) ** 2 for v in self.terms.values())))

    def strings(self) -> Iterable[PauliString]:
        return (PauliString(c) for c in self.terms)

    def coefficient(self, p: PauliString) -> complex:
        return self.terms.get(p.codes, 0.0)

    # -- dense interface -------------------------------------------------

    def to_matrix(self) -> np.ndarray:
        dim = 1 << self.n_sites
        m = np.zeros((dim, dim), dtype=complex)
        idx = np.arange(dim)
        for codes, coeff in self.terms.items():
            cols, phases = _action(codes)
            m[cols, idx] += coeff * phases
        return m

    def __repr__(self) -> str:
        body = " + ".join(f"({v:.3g})*{PauliString(k).label}" for k, v in self.terms.items())
        return f"Operator({self.n_sites}, {body or '0'})"


def commutator(a: Operator, b: Operator) -> Operator:
    """a b - b a, simplified."""
    return (a @ b) - (b @ a)


def anticommutator(a: Operator, b: Operator) -> Operator:
    """a b + b a, simplified."""
    return (a @ b) + (b @ a)


def adjoint_dissipator(a_left: Operator, a_right: Operator, h: Operator) -> Operator:
    """Adjoint dissipative channel applied to an observable.

    For a_left == a_right == a this is  a^dag [h,a] + [a^dag,h] a,  i.e.
    twice the per-unit-rate contribution to d<h>/dt of the channel
    rho -> a rho a^dag - (1/2){a^dag a, rho}; the compensating 1/2 prefactor
    lives in the constraint-matrix assembly.  The pair form generalizes to
    2 (R^dag h L - (1/2){R^dag L, h})  for left operator L and right
    operator R.  For a single Pauli channel and Pauli observable this
    evaluates to 0 if they commute and -4 h otherwise.
    """
    if not (a_left.n_sites == a_right.n_sites == h.n_sites):
        raise DimensionError("size mismatch in adjoint_dissipator")
    rd = a_right.dagger()
    rdl = rd @ a_left
    return 2.0 * (rd @ h @ a_left) - anticommutator(rdl, h)


def expectation(op: Operator, state: np.ndarray) -> complex:
    """tr(op . state) for a dense density matrix."""
    dim = 1 << op.n_sites
    if state.shape != (dim, dim):
        raise DimensionError(f"state shape {state.shape} incompatible with {op.n_sites} sites")
    total = 0.0 + 0.0j
    for codes, coeff in op.terms.items():
        total += coeff * string_expectation(PauliString(codes), state)
    return total


# -- text serialization --------------------------------------------------
# One term per line: "coeff_re coeff_im letters", e.g. "1.0 0.0 ZZI".


def dumps(op: Operator) -> str:
    lines = []
    for codes in sorted(op.terms):
        v = op.terms[codes]
        lines.append(f"{v.real!r} {v.imag!r} {PauliString(codes).label}")
    return "\n".join(lines)


def loads(text: str, n_sites: int | None = None) -> Operator:
    terms: dict[tuple[int, ...], complex] = {}
    n = n_sites
    for line in text.strip().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        re_s, im_s, label = line.split()
        p = PauliString.from_label(label)
        if n is None:
            n = p.n_sites
        elif p.n_sites != n:
            raise DimensionError("inconsistent string lengths in operator text")
        terms[p.codes] = terms.get(p.codes, 0.0) + complex(float(re_s), float(im_s))
    if n is None:
        raise ValueError("empty operator text requires explicit n_sites")
    return Operator(n, terms)
