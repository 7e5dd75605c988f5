"""Angular-momentum algebra and single-atom dipole matrices.

Single-atom space: ``nS1/2`` (2 states), ``nP1/2`` (2), ``nP3/2`` (4), ordered
level-major and jz-ascending.

Reduced matrix elements follow the Edmonds convention

    <j' m'| d_q |j m> = (-1)**(j'-m') * 3j(j' 1 j; -m' q m) * <j'||d||j>,

with the fine-structure reduction

    <l' s j'||d||l s j> = (-1)**(l'+s+j+1) sqrt((2j+1)(2j'+1)) {l' j' s; j l 1} <l'||d||l>

and the orbital element ``<l'||d||l> = (-1)**l' sqrt((2l+1)(2l'+1)) 3j(l' 1 l; 0 0 0) e<r>``.
For s -> p this makes ``<p, m=q| d_q |s> = e<r>/sqrt(3) = D``, so every
spherical component carries a line strength of exactly ``D**2`` summed over
the p manifold, and ``3 D**2 = e**2 <r>**2`` over all components.
Matrices returned by :func:`cartesian_dipole_set` are in units of ``D``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "Level",
    "SingleAtomState",
    "ReducedDipole",
    "SINGLE_ATOM_STATES",
    "wigner_3j",
    "wigner_6j",
    "wigner_symbol",
    "clebsch_gordan",
    "dipole_component",
    "spherical_dipole_set",
    "cartesian_dipole_set",
    "jz_operator",
]

HALF = Fraction(1, 2)


def _as_half_integer(x) -> Fraction:
    """Return ``x`` as an exact Fraction, rejecting anything that is not a multiple of 1/2."""
    if isinstance(x, Fraction):
        f = x
    elif isinstance(x, (int, np.integer)):
        f = Fraction(int(x))
    else:
        xf = float(x)
        twice = round(2 * xf)
        if abs(2 * xf - twice) > 1e-9:
            raise ValueError(f"{x!r} is not an integer or half-integer")
        f = Fraction(twice, 2)
    if f.denominator not in (1, 2):
        raise ValueError(f"{x!r} is not an integer or half-integer")
    return f



class Level(enum.Enum):
    NS = (0, HALF)
    NP12 = (1, HALF)
    NP32 = (1, Fraction(3, 2))

    @property
    def l(self) -> int:
        return self.value[0]

    @property
    def j(self) -> Fraction:
        return self.value[1]

    @property
    def label(self) -> str:
        return {"NS": "nS1/2", "NP12": "nP1/2", "NP32": "nP3/2"}[self.name]


@dataclass(frozen=True, order=False)
class SingleAtomState:
    level: Level
    jz: Fraction

    def __post_init__(self):
        jz = _as_half_integer(self.jz)
        object.__setattr__(self, "jz", jz)
        j = self.level.j
        if abs(jz) > j or (j - jz).denominator != 1:
            raise ValueError(f"jz={jz} is not a valid projection for {self.level.label}")

    def __str__(self):
        return f"{self.level.label},{self.jz}"


def _build_states():
    out = []
    for level in Level:
        j = level.j
        m = -j
        while m <= j:
            out.append(SingleAtomState(level, m))
            m += 1
    return tuple(out)


SINGLE_ATOM_STATES: tuple[SingleAtomState, ...] = _build_states()


@dataclass(frozen=True)
class ReducedDipole:
    """Radial element <np|r|ns> in Bohr radii; ``D = radial_element / sqrt(3)`` in e a0."""

    radial_element: float

    @classmethod
    def from_n(cls, n: int) -> "ReducedDipole":
        # <np|r|ns> ~ n**2 a0 for alkali atoms with n >= 40
        return cls(float(n) ** 2)

    @property
    def D(self) -> float:
        return self.radial_element / math.sqrt(3.0)


# ---------------------------------------------------------------------------
# Wigner symbols (exact Racah sums)
# ---------------------------------------------------------------------------

def _int(f: Fraction) -> int:
    # caller guarantees integrality
    return f.numerator // f.denominator


def _is_int(f: Fraction) -> bool:
    return f.denominator == 1


def _triangle_ok(a: Fraction, b: Fraction, c: Fraction) -> bool:
    return _is_int(a + b + c) and abs(a - b) <= c <= a + b


def _delta(a: Fraction, b: Fraction, c: Fraction) -> Fraction:
    f = math.factorial
    return Fraction(
        f(_int(a + b - c)) * f(_int(a - b + c)) * f(_int(-a + b + c)),
        f(_int(a + b + c) + 1),
    )


def _signed_sqrt(sign: int, square: Fraction, total: Fraction) -> float:
    if total == 0:
        return 0.0
    # sqrt(square) * total, evaluated with a single rounding where possible
    val = math.sqrt(square.numerator) / math.sqrt(square.denominator) * float(total)
    return sign * val


@lru_cache(maxsize=65536)
def _wigner_3j_exact(j1, j2, j3, m1, m2, m3) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if j < 0 or abs(m) > j or not _is_int(j - m):
            return 0.0
    if not _triangle_ok(j1, j2, j3):
        return 0.0
    f = math.factorial
    pref = _delta(j1, j2, j3) * (
        f(_int(j1 + m1)) * f(_int(j1 - m1)) * f(_int(j2 + m2)) * f(_int(j2 - m2))
        * f(_int(j3 + m3)) * f(_int(j3 - m3))
    )
    kmin = max(0, _int(j2 - j3 - m1), _int(j1 - j3 + m2))
    kmax = min(_int(j1 + j2 - j3), _int(j1 - m1), _int(j2 + m2))
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            f(k) * f(_int(j3 - j2 + k + m1)) * f(_int(j3 - j1 + k - m2))
            * f(_int(j1 + j2 - j3) - k) * f(_int(j1 - m1) - k) * f(_int(j2 + m2) - k)
        )
        total += Fraction((-1) ** k, den)
    sign = -1 if _int(j1 - j2 - m3) % 2 else 1
    return _signed_sqrt(sign, pref, total)


@lru_cache(maxsize=65536)
def _wigner_6j_exact(j1, j2, j3, j4, j5, j6) -> float:
    if min(j1, j2, j3, j4, j5, j6) < 0:
        return 0.0
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if not all(_triangle_ok(*t) for t in triads):
        return 0.0
    f = math.factorial
    pref = Fraction(1)
    for t in triads:
        pref *= _delta(*t)
    a = [_int(sum(t)) for t in triads]
    b = [_int(j1 + j2 + j4 + j5), _int(j2 + j3 + j5 + j6), _int(j3 + j1 + j6 + j4)]
    total = Fraction(0)
    for t in range(max(a), min(b) + 1):
        den = 1
        for ai in a:
            den *= f(t - ai)
        for bi in b:
            den *= f(bi - t)
        total += Fraction((-1) ** t * f(t + 1), den)
    return _signed_sqrt(1, pref, total)


def _angular_momenta(*js) -> tuple[Fraction, ...]:
    out = tuple(_as_half_integer(j) for j in js)
    if any(j < 0 for j in out):
        raise ValueError(f"angular momenta must be non-negative, got {js}")
    return out


def wigner_3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol (j1 j2 j3; m1 m2 m3); zero when selection rules fail."""
    js = _angular_momenta(j1, j2, j3)
    ms = tuple(_as_half_integer(x) for x in (m1, m2, m3))
    return _wigner_3j_exact(*js, *ms)


def wigner_6j(j1, j2, j3, j4, j5, j6) -> float:
    """Wigner 6j symbol {j1 j2 j3; j4 j5 j6}; zero when a triad is not triangular."""
    return _wigner_6j_exact(*_angular_momenta(j1, j2, j3, j4, j5, j6))


def wigner_symbol(kind: str, *args) -> float:
    if len(args) != 6:
        raise ValueError("Wigner symbols take exactly six arguments")
    if kind == "3j":
        return wigner_3j(*args)
    if kind == "6j":
        return wigner_6j(*args)
    raise ValueError(f"unknown Wigner symbol kind {kind!r}; expected '3j' or '6j'")


def clebsch_gordan(j1, m1, j2, m2, j, m) -> float:
    """<j1 m1; j2 m2 | j m> in the Condon-Shortley convention."""
    j1, m1, j2, m2, j, m = (_as_half_integer(x) for x in (j1, m1, j2, m2, j, m))
    sign = -1 if _int(j1 - j2 + m) % 2 else 1
    return sign * math.sqrt(2 * j + 1) * _wigner_3j_exact(j1, j2, j, m1, m2, -m)


# ---------------------------------------------------------------------------
# Dipole operator
# ---------------------------------------------------------------------------

def _reduced_orbital(lp: int, l: int) -> float:
    # in units of e<r>
    return (-1) ** lp * math.sqrt((2 * l + 1) * (2 * lp + 1)) * wigner_3j(lp, 1, l, 0, 0, 0)


def _reduced_fine(lp: int, jp: Fraction, l: int, j: Fraction) -> float:
    s = HALF
    phase = (-1) ** _int(lp + s + j + 1)
    return (
        phase * math.sqrt((2 * j + 1) * (2 * jp + 1))
        * wigner_6j(lp, jp, s, j, l, 1) * _reduced_orbital(lp, l)
    )


def _unit_component(bra: SingleAtomState, ket: SingleAtomState, q: int) -> float:
    # <bra| d_q |ket> in units of e<r>
    lp, jp, mp = bra.level.l, bra.level.j, bra.jz
    l, j, m = ket.level.l, ket.level.j, ket.jz
    if abs(lp - l) != 1 or mp != m + q:
        return 0.0
    phase = (-1) ** _int(jp - mp)
    return phase * wigner_3j(jp, 1, j, -mp, q, m) * _reduced_fine(lp, jp, l, j)


def dipole_component(bra: SingleAtomState, ket: SingleAtomState, q: int,
                     D: ReducedDipole) -> complex:
    """Spherical component <bra| d_q |ket> in units of e a0."""
    if q not in (-1, 0, 1):
        raise ValueError(f"q must be -1, 0 or +1, got {q}")
    return complex(_unit_component(bra, ket, q) * D.radial_element)


@lru_cache(maxsize=None)
def spherical_dipole_set() -> dict[int, np.ndarray]:
    """The three 8x8 matrices ``d_q`` in units of D (read-only)."""
    out = {}
    sqrt3 = math.sqrt(3.0)
    for q in (-1, 0, 1):
        mat = np.array([[_unit_component(a, b, q) * sqrt3 for b in SINGLE_ATOM_STATES]
                        for a in SINGLE_ATOM_STATES])
        mat.setflags(write=False)
        out[q] = mat
    return out


@lru_cache(maxsize=None)
def _cartesian_unit() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = spherical_dipole_set()
    s2 = math.sqrt(2.0)
    dx = (d[-1] - d[1]).astype(complex) / s2
    dy = 1j * (d[-1] + d[1]) / s2
    dz = d[0].astype(complex)
    for m in (dx, dy, dz):
        m.setflags(write=False)
    return dx, dy, dz


def cartesian_dipole_set(D: ReducedDipole | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(d_x, d_y, d_z)`` as 8x8 Hermitian matrices.

    Without ``D`` the matrices are in units of the reduced element D; with it,
    in e a0.
    """
    dx, dy, dz = _cartesian_unit()
    if D is None:
        return dx, dy, dz
    return dx * D.D, dy * D.D, dz * D.D


def jz_operator() -> np.ndarray:
    return np.diag([float(s.jz) for s in SINGLE_ATOM_STATES])
