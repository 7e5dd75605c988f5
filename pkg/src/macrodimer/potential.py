"""Born-Oppenheimer potential curves for a pair of atoms in the nsnp manifold.

Curves are followed by eigenvector continuation, not by energy ordering: the
molecular well sits on a branch shaped by avoided crossings, and sorting by
energy would splice unrelated states together.  For two atoms on the z axis
the Hamiltonian is block diagonal in total jz and in the exchange parity of
the two atoms; branches are tracked inside each block, which also removes the
exact +/-jz degeneracies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import (
    PhysicalConfig,
    ProductBasis,
    build_basis,
    hamiltonian,
    ns_projector,
    total_jz,
)

__all__ = [
    "GridTooCoarseError",
    "ContinuationLostError",
    "Sector",
    "BOSurface",
    "WellDescriptor",
    "BoundState",
    "bo_surface",
    "find_wells",
    "find_well",
    "reference_well",
    "bound_state",
    "fix_phase",
    "pair_geometry",
]

MIN_R_OVER_R0 = 0.5


class GridTooCoarseError(RuntimeError):
    """Consecutive eigenvectors along a branch no longer overlap; refine the grid."""


class ContinuationLostError(RuntimeError):
    """The bound state could not be followed to the requested geometry."""


@dataclass(frozen=True)
class Sector:
    """p-excitation count plus optional total-jz and exchange-parity labels."""

    n_p: int = 1
    total_jz: float | None = None
    parity: int | None = None


@dataclass
class BOSurface:
    r_grid: np.ndarray
    energies: np.ndarray  # (n_r, n_branches), rad/us
    vectors: np.ndarray  # (n_r, dim, n_branches), in the full two-atom basis
    labels: list[tuple[float, int]]  # (total jz, parity) per branch
    basis: ProductBasis
    sector: Sector

    @property
    def n_branches(self) -> int:
        return self.energies.shape[1]


@dataclass(frozen=True)
class WellDescriptor:
    r_p: float
    depth: float
    omega_vib: float
    omega_rot: float
    branch_id: int
    energy: float
    label: tuple[float, int]

    def as_dict(self) -> dict:
        return {
            "r_p_um": self.r_p,
            "depth_rad_per_us": self.depth,
            "depth_MHz": self.depth / (2 * math.pi),
            "omega_vib_rad_per_us": self.omega_vib,
            "f_vib_MHz": self.omega_vib / (2 * math.pi),
            "omega_rot_rad_per_us": self.omega_rot,
            "f_rot_kHz": self.omega_rot / (2 * math.pi) * 1e3,
            "branch_id": self.branch_id,
            "energy_rad_per_us": self.energy,
            "total_jz": self.label[0],
            "parity": self.label[1],
        }


@dataclass
class BoundState:
    energy: float
    psi: np.ndarray
    basis: ProductBasis
    ns_weights: np.ndarray  # <P_ns> for atom 0 and atom 1


def fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude component is real and positive."""
    vec = np.asarray(vec)
    if vec.ndim == 1:
        k = int(np.argmax(np.abs(vec)))
        out = vec * (abs(vec[k]) / vec[k])
        out[k] = abs(vec[k])  # exact, no rounding residue in the imaginary part
        return out
    k = np.argmax(np.abs(vec), axis=0)
    cols = np.arange(vec.shape[1])
    piv = vec[k, cols]
    out = vec * (np.abs(piv) / piv)[None, :]
    out[k, cols] = np.abs(piv)
    return out


def pair_geometry(separation: float, axis=(0.0, 0.0, 1.0), center=(0.0, 0.0, 0.0)) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    c = np.asarray(center, dtype=float)
    return np.array([c - axis * separation / 2, c + axis * separation / 2])


@lru_cache(maxsize=None)
def _symmetry_blocks(basis: ProductBasis) -> tuple[tuple[float, int, np.ndarray], ...]:
    """Orthonormal bases (dim x nb) of the (total jz, exchange parity) blocks."""
    if basis.n_atoms != 2:
        raise ValueError("symmetry blocks are defined for two atoms")
    mtot = total_jz(basis)
    pos = {s: i for i, s in enumerate(basis.states)}
    blocks = []
    for m in sorted(set(mtot.round(6))):
        for parity in (1, -1):
            cols = []
            for i, (a, b) in enumerate(basis.states):
                if abs(mtot[i] - m) > 1e-9:
                    continue
                k = pos[(b, a)]
                if k < i:
                    continue
                v = np.zeros(basis.dim)
                if k == i:
                    if parity == 1:
                        v[i] = 1.0
                    else:
                        continue
                else:
                    v[i] = 1 / math.sqrt(2)
                    v[k] = parity / math.sqrt(2)
                cols.append(v)
            if cols:
                mat = np.array(cols).T
                mat.setflags(write=False)
                blocks.append((float(m), parity, mat))
    return tuple(blocks)


def _check_grid(config: PhysicalConfig, r_grid: np.ndarray):
    if r_grid.ndim != 1 or r_grid.size < 3:
        raise ValueError("r_grid must be a 1-D array with at least three points")
    if np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be strictly ascending")
    if r_grid[0] < MIN_R_OVER_R0 * config.r0:
        raise ValueError(
            f"r_grid starts at {r_grid[0]:.3g} um, below the model's validity limit "
            f"{MIN_R_OVER_R0} r0 = {MIN_R_OVER_R0 * config.r0:.3g} um"
        )


def _track(vals: np.ndarray, vecs: np.ndarray, where: str):
    """Reorder eigenpairs along the first axis so each column follows one branch."""
    n_r, _, nb = vecs.shape
    order = np.empty((n_r, nb), dtype=int)
    order[0] = np.arange(nb)
    out_vals = np.empty_like(vals)
    out_vecs = np.empty_like(vecs)
    out_vals[0], out_vecs[0] = vals[0], vecs[0]
    for i in range(1, n_r):
        ov = np.abs(out_vecs[i - 1].conj().T @ vecs[i]) ** 2
        rows, cols = linear_sum_assignment(-ov)
        worst = ov[rows, cols].min()
        if worst <= 0.5:
            raise GridTooCoarseError(
                f"branch continuity lost between grid points {i - 1} and {i} in {where} "
                f"(overlap {worst:.3f}); refine the separation grid"
            )
        perm = cols[np.argsort(rows)]
        out_vals[i] = vals[i][perm]
        v = vecs[i][:, perm]
        # keep the gauge continuous along the branch
        ph = np.einsum("ij,ij->j", out_vecs[i - 1].conj(), v)
        out_vecs[i] = v * (np.abs(ph) / ph)[None, :]
    return out_vals, out_vecs


def bo_surface(config: PhysicalConfig, r_grid, sector: Sector | None = None) -> BOSurface:
    """Eigen-decompose H0 along ``r_grid`` for two atoms on the z axis and track branches."""
    sector = sector or Sector()
    r_grid = np.asarray(r_grid, dtype=float)
    _check_grid(config, r_grid)
    basis = build_basis(2, sector.n_p)
    blocks = [b for b in _symmetry_blocks(basis)
              if (sector.total_jz is None or abs(b[0] - sector.total_jz) < 1e-9)
              and (sector.parity is None or b[1] == sector.parity)]
    if not blocks:
        raise ValueError(f"no states in sector {sector}")
    hs = np.array([hamiltonian(basis, pair_geometry(r), config) for r in r_grid])
    energies, vectors, labels = [], [], []
    for m, parity, u in blocks:
        hb = np.einsum("ia,rij,jb->rab", u, hs, u)
        vals, vecs = np.linalg.eigh(hb)
        vals, vecs = _track(vals, vecs, f"block jz={m:+g}, parity={parity:+d}")
        full = np.einsum("ia,rab->rib", u, vecs)
        energies.append(vals)
        vectors.append(full)
        labels.extend([(m, parity)] * vals.shape[1])
    energies = np.concatenate(energies, axis=1)
    vectors = np.concatenate(vectors, axis=2)
    # deterministic phase convention, applied on the first point and carried along
    ref = fix_phase(vectors[0])
    ph = np.einsum("ij,ij->j", vectors[0].conj(), ref)
    vectors = vectors * ph[None, None, :]
    return BOSurface(r_grid, energies, vectors, labels, basis, sector)


def _branch_energy(config: PhysicalConfig, surface: BOSurface, branch: int, r: float) -> float:
    """Energy of the tracked branch at an off-grid separation."""
    i = int(np.clip(np.searchsorted(surface.r_grid, r), 0, len(surface.r_grid) - 1))
    if i > 0 and abs(surface.r_grid[i - 1] - r) < abs(surface.r_grid[i] - r):
        i -= 1
    ref = surface.vectors[i][:, branch]
    vals, vecs = np.linalg.eigh(hamiltonian(surface.basis, pair_geometry(r), config))
    ov = np.abs(vecs.conj().T @ ref) ** 2
    k = int(np.argmax(ov))
    if ov[k] <= 0.5:
        raise GridTooCoarseError(f"could not follow branch {branch} to R={r:.4f} um")
    return float(vals[k])


def _vertex(x, y):
    # three-point parabola vertex
    (x0, x1, x2), (y0, y1, y2) = x, y
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
    return -b / (2 * a), a


def find_wells(surface: BOSurface, config: PhysicalConfig, h: float = 0.005) -> list[WellDescriptor]:
    """All interior local minima, deepest first."""
    r = surface.r_grid
    wells = []
    mu = config.mass_internal / 2
    for b in range(surface.n_branches):
        e = surface.energies[:, b]
        interior = np.nonzero((e[1:-1] < e[:-2]) & (e[1:-1] < e[2:]))[0] + 1
        for j in interior:
            # outward barrier: first local maximum beyond the minimum, else the asymptote
            tail = e[j:]
            peaks = np.nonzero((tail[1:-1] > tail[:-2]) & (tail[1:-1] >= tail[2:]))[0] + 1
            barrier = tail[peaks[0]] if peaks.size else tail[-1]
            ref_level = min(barrier, tail[-1])
            r_v, _ = _vertex(r[j - 1:j + 2], e[j - 1:j + 2])
            # fine three-point stencil around the refined vertex
            es = [_branch_energy(config, surface, b, x) for x in (r_v - h, r_v, r_v + h)]
            r_v2, _ = _vertex(np.array([r_v - h, r_v, r_v + h]), np.array(es))
            if abs(r_v2 - r_v) < h:
                r_v = r_v2
                es = [_branch_energy(config, surface, b, x) for x in (r_v - h, r_v, r_v + h)]
            e_min = es[1]
            curv = (es[0] - 2 * es[1] + es[2]) / h**2
            depth = ref_level - e_min
            if curv <= 0 or depth <= 0:
                continue
            wells.append(WellDescriptor(
                r_p=float(r_v),
                depth=float(depth),
                omega_vib=math.sqrt(curv / mu),
                omega_rot=1.0 / (mu * r_v**2),
                branch_id=b,
                energy=float(e_min),
                label=surface.labels[b],
            ))
    wells.sort(key=lambda w: -w.depth)
    return wells


def find_well(surface: BOSurface, config: PhysicalConfig) -> WellDescriptor | None:
    """The deepest bound well on the surface, or None when no branch binds."""
    wells = find_wells(surface, config)
    return wells[0] if wells else None


def default_grid(config: PhysicalConfig, step: float = 0.01) -> np.ndarray:
    r0 = config.r0
    return np.arange(0.8 * r0, 10 * r0 + step * r0 / 2, step * r0)


@lru_cache(maxsize=16)
def reference_well(config: PhysicalConfig) -> tuple[WellDescriptor, np.ndarray]:
    """Deepest well over all sectors plus its eigenvector at the refined minimum."""
    surface = bo_surface(config, default_grid(config))
    well = find_well(surface, config)
    if well is None:
        raise ContinuationLostError("no bound well found for this configuration")
    basis = surface.basis
    i = int(np.argmin(np.abs(surface.r_grid - well.r_p)))
    ref = surface.vectors[i][:, well.branch_id]
    vals, vecs = np.linalg.eigh(hamiltonian(basis, pair_geometry(well.r_p), config))
    k = int(np.argmax(np.abs(vecs.conj().T @ ref)))
    psi = fix_phase(vecs[:, k])
    psi.setflags(write=False)
    return well, psi


def _relative_hamiltonian(config, basis, rel, alpha, direction, h0=None):
    """H0 + U for a pair with relative vector ``rel = R_0 - R_1`` centred at the origin."""
    geom = np.array([rel / 2, -rel / 2])
    h = hamiltonian(basis, geom, config) if h0 is None else h0
    if alpha != 0.0:
        s = alpha * float(np.dot(direction, rel)) / 2
        p0, p1 = ns_projector(basis, 0), ns_projector(basis, 1)
        h = h + np.diag(s * (p0 - p1))
    return h


def _select(h, hint):
    vals, vecs = np.linalg.eigh(h)
    ov = np.abs(vecs.conj().T @ hint) ** 2
    k = int(np.argmax(ov))
    return float(vals[k]), vecs[:, k], float(ov[k])


def bound_state(config: PhysicalConfig, geometry, alpha: float = 0.0,
                direction=(0.0, 0.0, 1.0), hint: np.ndarray | None = None,
                max_separation: float | None = None) -> BoundState:
    """Eigenpair of H0 + U adiabatically connected to the molecular well.

    ``alpha`` is the energy slope of the nS level (rad/us per um) along
    ``direction``.  With ``hint`` (the bound vector at a nearby geometry) the
    state is picked by maximal overlap; otherwise it is continued from the
    well minimum along a straight-line path in relative position and alpha.
    """
    pos = np.asarray(geometry, dtype=float)
    if pos.shape != (2, 3):
        raise ValueError("bound_state needs a two-atom geometry of shape (2, 3)")
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    well, psi_ref = reference_well(config)
    basis = build_basis(2, 1)
    rel = pos[0] - pos[1]
    sep = float(np.linalg.norm(rel))
    limit = max_separation if max_separation is not None else 3 * well.r_p
    if sep > limit:
        raise ContinuationLostError(
            f"separation {sep:.3f} um lies outside the attraction region (> {limit:.3f} um)")
    if hint is not None:
        e, v, ov = _select(_relative_hamiltonian(config, basis, rel, alpha, direction), hint)
        if ov <= 0.5:
            raise ContinuationLostError(f"bound state lost (overlap with previous step {ov:.3f})")
    else:
        # reference geometry has atom 0 at -z: relative vector (0, 0, -r_p)
        start = np.array([0.0, 0.0, -well.r_p])
        # approach from whichever end of the reference axis is closer
        if np.dot(rel, start) < 0:
            start = -start
        path = np.linalg.norm(rel - start) / 0.02 + abs(alpha) / (0.02 * abs(config.delta))
        n = max(4, int(math.ceil(path)))
        for _ in range(5):
            try:
                v = psi_ref if start[2] < 0 else _swap(basis, psi_ref)
                for s in np.linspace(0, 1, n + 1)[1:]:
                    r_s = start + s * (rel - start)
                    if np.linalg.norm(r_s) < 0.5 * config.r0:
                        raise ContinuationLostError("continuation path passes through the inner wall")
                    e, v, ov = _select(
                        _relative_hamiltonian(config, basis, r_s, s * alpha, direction), v)
                    if ov <= 0.5:
                        raise ContinuationLostError(f"overlap {ov:.3f} along continuation path")
                break
            except ContinuationLostError:
                n *= 2
        else:
            raise ContinuationLostError("could not continue the bound state to this geometry")
        v = fix_phase(v)
    com = pos.mean(axis=0)
    energy = e + alpha * float(np.dot(direction, com))
    w = np.abs(v) ** 2
    weights = np.array([w @ ns_projector(basis, 0), w @ ns_projector(basis, 1)])
    return BoundState(energy, v, basis, weights)


@lru_cache(maxsize=None)
def _swap_perm(basis: ProductBasis) -> np.ndarray:
    pos = {s: i for i, s in enumerate(basis.states)}
    return np.array([pos[(b, a)] for a, b in basis.states])


def _swap(basis: ProductBasis, vec: np.ndarray) -> np.ndarray:
    """Exchange the two atoms' labels in a state vector."""
    out = np.empty_like(vec)
    out[_swap_perm(basis)] = vec
    return out
