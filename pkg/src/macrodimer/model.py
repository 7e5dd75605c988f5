"""Many-atom product bases and the internal + dipole-dipole Hamiltonian.

Only the block of the dipole-dipole operator that conserves the number of
p excitations is kept; the other blocks sit ~2*omega0 away, far outside the
fine-structure scale that matters here.  The sector-constant ``omega0 * n_p``
is subtracted from the internal Hamiltonian, so omega0 never enters numerics.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import units
from .angular import SINGLE_ATOM_STATES, Level, ReducedDipole, SingleAtomState, cartesian_dipole_set

__all__ = [
    "PhysicalConfig",
    "ProductBasis",
    "SingularGeometryError",
    "build_basis",
    "internal_hamiltonian",
    "dipole_dipole",
    "dipole_dipole_gradient",
    "hamiltonian",
    "characteristic_scales",
    "ns_projector",
    "total_jz",
]

_P_LEVELS = (Level.NP12, Level.NP32)
_IS_P = np.array([s.level in _P_LEVELS for s in SINGLE_ATOM_STATES])
_IS_P12 = np.array([s.level is Level.NP12 for s in SINGLE_ATOM_STATES])
_JZ = np.array([float(s.jz) for s in SINGLE_ATOM_STATES])


class SingularGeometryError(ValueError):
    """Two atoms coincide (or sit closer than the model allows)."""


@dataclass(frozen=True)
class PhysicalConfig:
    """Physical parameters in internal units (um, us, rad/us).

    ``delta`` is the energy of np1/2 relative to np3/2; it is negative for Rb.
    ``r0_calibrated`` (um) overrides the length derived from the dipole element.
    """

    n: int = 40
    mass: float = units.MASS_RB85
    delta: float = units.mhz(-1000.0)
    omega0: float = units.mhz(61_000.0)
    reduced_dipole: ReducedDipole = field(default_factory=lambda: ReducedDipole.from_n(40))
    r0_calibrated: float | None = 1.0
    gamma_p: float = units.mhz(6.0)
    gamma_c: float = units.mhz(0.025)
    omega_p: float = units.mhz(1.0)
    omega_c: float = units.mhz(10.0)
    delta_p: float = 0.0
    delta_c: float = 0.0
    c6: float = units.mhz(1000.0)

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.delta == 0:
            raise ValueError("fine-structure splitting delta must be nonzero")
        if self.gamma_p <= 0:
            raise ValueError("gamma_p must be positive")
        if self.gamma_c < 0:
            raise ValueError("gamma_c must be non-negative")
        if self.omega_c <= 0:
            raise ValueError("omega_c must be positive")
        if self.r0_calibrated is not None and self.r0_calibrated <= 0:
            raise ValueError("r0_calibrated must be positive")

    @property
    def r0_derived(self) -> float:
        """[|D|^2 / (4 pi eps0 hbar |Delta|)]^(1/3) in um."""
        d_si = self.reduced_dipole.D * units.E_CHARGE * units.A0
        num = d_si**2 / (4 * math.pi * units.EPS0)
        den = units.HBAR * abs(self.delta) * 1e6
        return (num / den) ** (1 / 3) * 1e6

    @property
    def r0(self) -> float:
        return self.r0_calibrated if self.r0_calibrated is not None else self.r0_derived

    @property
    def c3(self) -> float:
        """|D|^2/(4 pi eps0 hbar) in rad/us um^3, i.e. |Delta| r0^3."""
        return abs(self.delta) * self.r0**3

    @property
    def mass_internal(self) -> float:
        return units.mass_to_internal(self.mass)


@dataclass(frozen=True)
class ProductBasis:
    """Ordered product states restricted to a fixed number of p excitations.

    ``states`` holds, per basis vector, a tuple of indices into
    :data:`macrodimer.angular.SINGLE_ATOM_STATES`.  Ordering is lexicographic
    over atoms (atom 0 slowest), with single-atom states level-major and
    jz-ascending.
    """

    n_atoms: int
    n_p: int
    states: tuple[tuple[int, ...], ...]

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def index_array(self) -> np.ndarray:
        return _index_array(self)

    def label(self, i: int) -> tuple[SingleAtomState, ...]:
        return tuple(SINGLE_ATOM_STATES[k] for k in self.states[i])

    def index(self, labels) -> int:
        key = tuple(SINGLE_ATOM_STATES.index(s) if isinstance(s, SingleAtomState) else s
                    for s in labels)
        return self.states.index(key)


@lru_cache(maxsize=None)
def _index_array(basis: ProductBasis) -> np.ndarray:
    arr = np.array(basis.states, dtype=int).reshape(basis.dim, basis.n_atoms)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def build_basis(n_atoms: int, n_p_excitations: int) -> ProductBasis:
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    if not 0 <= n_p_excitations <= n_atoms:
        raise ValueError("p-excitation count must lie in [0, n_atoms]")
    states = tuple(
        combo for combo in itertools.product(range(len(SINGLE_ATOM_STATES)), repeat=n_atoms)
        if sum(_IS_P[k] for k in combo) == n_p_excitations
    )
    return ProductBasis(n_atoms, n_p_excitations, states)


def internal_hamiltonian(basis: ProductBasis, config: PhysicalConfig) -> np.ndarray:
    """Diagonal H_1 + ... + H_N with the sector constant omega0 * n_p removed."""
    n12 = _IS_P12[basis.index_array].sum(axis=1)
    return np.diag(config.delta * n12).astype(complex)


def ns_projector(basis: ProductBasis, atom: int) -> np.ndarray:
    """Diagonal of the projector onto ``atom`` being in nS (any jz)."""
    return (~_IS_P[basis.index_array[:, atom]]).astype(float)


def total_jz(basis: ProductBasis) -> np.ndarray:
    return _JZ[basis.index_array].sum(axis=1)


@lru_cache(maxsize=None)
def pair_operators(basis: ProductBasis, i: int, j: int) -> np.ndarray:
    """``M[a, b] = d_a^(i) d_b^(j)`` within the basis, shape (3, 3, dim, dim), units D^2.

    Built directly from the product structure: the element between two basis
    states is the product of single-atom dipole elements on atoms i, j times
    Kronecker deltas on all spectators.
    """
    d = cartesian_dipole_set()
    idx = basis.index_array
    si, sj = idx[:, i], idx[:, j]
    others = [k for k in range(basis.n_atoms) if k not in (i, j)]
    same = np.ones((basis.dim, basis.dim), dtype=bool)
    for k in others:
        same &= idx[:, k][:, None] == idx[:, k][None, :]
    out = np.zeros((3, 3, basis.dim, basis.dim), dtype=complex)
    for a in range(3):
        da = d[a][si[:, None], si[None, :]]
        for b in range(3):
            db = d[b][sj[:, None], sj[None, :]]
            out[a, b] = np.where(same, da * db, 0.0)
    out.setflags(write=False)
    return out


def _positions(geometry, basis: ProductBasis) -> np.ndarray:
    pos = np.asarray(geometry, dtype=float)
    if pos.shape != (basis.n_atoms, 3):
        raise ValueError(f"geometry must have shape ({basis.n_atoms}, 3), got {pos.shape}")
    return pos


def _pair_tensor(rvec: np.ndarray) -> tuple[float, np.ndarray]:
    r = float(np.linalg.norm(rvec))
    if r < 1e-9:
        raise SingularGeometryError("coincident atom positions")
    n = rvec / r
    return r, np.eye(3) - 3 * np.outer(n, n)


def dipole_dipole(basis: ProductBasis, geometry, config: PhysicalConfig) -> np.ndarray:
    """Sum over pairs of (C3/R^3) [d_i.d_j - 3 (d_i.n)(d_j.n)], excitation-conserving block."""
    pos = _positions(geometry, basis)
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    if basis.n_p == 0 or basis.n_p == basis.n_atoms:
        # no p<->s exchange possible; still validate the geometry
        for i, j in itertools.combinations(range(basis.n_atoms), 2):
            _pair_tensor(pos[i] - pos[j])
        return out
    for i, j in itertools.combinations(range(basis.n_atoms), 2):
        r, t = _pair_tensor(pos[i] - pos[j])
        m = pair_operators(basis, i, j)
        out += (config.c3 / r**3) * np.tensordot(t, m, axes=([0, 1], [0, 1]))
    return out


def dipole_dipole_gradient(basis: ProductBasis, geometry, config: PhysicalConfig, i: int, j: int):
    """d V_ij / d R_c for R = R_i - R_j; returns shape (3, dim, dim)."""
    pos = _positions(geometry, basis)
    rvec = pos[i] - pos[j]
    r = float(np.linalg.norm(rvec))
    if r < 1e-9:
        raise SingularGeometryError("coincident atom positions")
    m = pair_operators(basis, i, j)
    # d/dR_c [delta_ab R^-3 - 3 R_a R_b R^-5]
    eye = np.eye(3)
    g = (
        -3 * np.einsum("ab,c->cab", eye, rvec) / r**5
        - 3 * (np.einsum("ac,b->cab", eye, rvec) + np.einsum("bc,a->cab", eye, rvec)) / r**5
        + 15 * np.einsum("a,b,c->cab", rvec, rvec, rvec) / r**7
    )
    return config.c3 * np.tensordot(g, m, axes=([1, 2], [0, 1]))


def hamiltonian(basis: ProductBasis, geometry, config: PhysicalConfig) -> np.ndarray:
    """H0 = sum_i H_i + sum_{i<j} V_ij in rad/us."""
    return internal_hamiltonian(basis, config) + dipole_dipole(basis, geometry, config)


@dataclass(frozen=True)
class Scales:
    r0: float
    c3: float
    delta: float

    def omega_of_r(self, r):
        """Characteristic dipole-dipole strength |D|^2/(4 pi eps0 hbar R^3) in rad/us."""
        return self.c3 / np.asarray(r, dtype=float) ** 3


def characteristic_scales(config: PhysicalConfig) -> Scales:
    return Scales(r0=config.r0, c3=config.c3, delta=abs(config.delta))
