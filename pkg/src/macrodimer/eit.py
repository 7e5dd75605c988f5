"""Optical response of a probe atom next to a Rydberg impurity.

The probe's Rydberg EIT level is nS.  Near a molecule the three-atom
(molecule + probe) eigenstates |psi_k> replace the bare probe nS level, each
weighted by F_k^2 = sum_jz |<nS jz, m|psi_k>|^2 and detuned by
Delta_k = Delta_p + Delta_c + E_k - E_0.

Two observables are computed from that spectrum:

* the weak-probe susceptibility
  chi = i G_p / (G_p - i D_p + sum_k W_c^2 F_k^2 / (G_c - i D_k));
* the g' population from a Lindblad model on {g, g', e, k...}, where e decays
  to g and g' at G_p/2 each and every dressed level k decays to g at G_c.
  g' is a dark sink, so its population counts scattered photons.  Dressed
  levels detuned by more than ELIMINATION_CUTOFF are folded into e as a light
  shift plus decay, which keeps the Liouvillian small near the molecule.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm, null_space

from .angular import Level, SINGLE_ATOM_STATES, SingleAtomState
from .model import (
    PhysicalConfig,
    ProductBasis,
    SingularGeometryError,
    build_basis,
    hamiltonian,
    internal_hamiltonian,
    pair_operators,
)
from .potential import bound_state, pair_geometry, reference_well

__all__ = [
    "ProbeSpectrum",
    "SusceptibilityField",
    "PopulationField",
    "ProbeSolver",
    "three_atom_spectrum",
    "impurity_spectrum",
    "far_spectrum",
    "susceptibility",
    "probe_master_equation",
    "steady_state_susceptibility",
    "chi_map",
    "population_map",
    "LEVEL_THRESHOLD",
]

LEVEL_THRESHOLD = 1e-4
ELIMINATION_CUTOFF = 2 * math.pi * 100.0  # rad/us
MIN_PROBE_DISTANCE = 1e-3  # um; closer counts as coincident
DEGENERACY_TOL = 1e-6  # rad/us

_NS = [i for i, s in enumerate(SINGLE_ATOM_STATES) if s.level is Level.NS]


@dataclass
class ProbeSpectrum:
    """Dressed probe levels: ``shifts`` = E_k - E_0 (rad/us) and weights F_k^2."""

    shifts: np.ndarray
    weights: np.ndarray
    e0: float = 0.0

    def significant(self, threshold: float = LEVEL_THRESHOLD) -> "ProbeSpectrum":
        keep = self.weights > threshold
        return ProbeSpectrum(self.shifts[keep], self.weights[keep], self.e0)


@dataclass
class SusceptibilityField:
    z_grid: np.ndarray
    rho_grid: np.ndarray
    chi: np.ndarray  # (n_z, n_rho) complex


@dataclass
class PopulationField:
    z_grid: np.ndarray
    rho_grid: np.ndarray
    p_gprime: np.ndarray  # (n_z, n_rho)
    exposure: float


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _probe_embedding(n_atoms: int, probe: int) -> np.ndarray:
    """Map (pair-basis index, probe jz) -> index in the n_atoms basis.

    Returns an int array of shape (pair_dim, 2) for n_atoms == 3; for two
    atoms the "pair" is the single impurity atom and rows run over its
    eight single-atom states.
    """
    big = build_basis(n_atoms, 1)
    pos = {s: i for i, s in enumerate(big.states)}
    if n_atoms == 3:
        small = build_basis(2, 1).states
    else:
        small = [(k,) for k in range(len(SINGLE_ATOM_STATES))]
    out = np.full((len(small), 2), -1, dtype=int)
    for r, s in enumerate(small):
        for c, ns in enumerate(_NS):
            full = list(s)
            full.insert(probe, ns)
            out[r, c] = pos.get(tuple(full), -1)
    return out


class ProbeSolver:
    """Three-atom problem around one molecule with its pair term cached.

    Atoms 0 and 1 form the molecule, atom 2 is the probe.
    """

    def __init__(self, config: PhysicalConfig, molecule_geometry=None):
        self.config = config
        if molecule_geometry is None:
            well, _ = reference_well(config)
            molecule_geometry = pair_geometry(well.r_p)
        self.molecule = np.asarray(molecule_geometry, dtype=float)
        bs = bound_state(config, self.molecule)
        self.e0 = bs.energy
        self.basis = build_basis(3, 1)
        emb = _probe_embedding(3, 2)
        # columns: |nS jz>_probe (x) |m>
        ref = np.zeros((self.basis.dim, 2), dtype=complex)
        for c in range(2):
            ref[emb[:, c], c] = bs.psi
        self.reference = ref
        geom = np.vstack([self.molecule, self.molecule.mean(axis=0) + [0, 0, 100.0]])
        self._h_fixed = internal_hamiltonian(self.basis, config) + self._pair(geom, 0, 1)

    def _pair(self, geom, i, j):
        rvec = geom[i] - geom[j]
        r = float(np.linalg.norm(rvec))
        if r < MIN_PROBE_DISTANCE:
            raise SingularGeometryError(f"probe coincides with molecule atom {i if j == 2 else j}")
        n = rvec / r
        t = np.eye(3) - 3 * np.outer(n, n)
        return (self.config.c3 / r**3) * np.tensordot(t, pair_operators(self.basis, i, j),
                                                     axes=([0, 1], [0, 1]))

    def spectrum(self, probe_position) -> ProbeSpectrum:
        p = np.asarray(probe_position, dtype=float)
        geom = np.vstack([self.molecule, p])
        h = self._h_fixed + self._pair(geom, 0, 2) + self._pair(geom, 1, 2)
        vals, vecs = np.linalg.eigh(h)
        amp = self.reference.conj().T @ vecs  # (2, dim)
        f2 = np.sum(np.abs(amp) ** 2, axis=0)
        return ProbeSpectrum(vals - self.e0, f2, self.e0)

    def spectrum_at(self, z: float, rho: float) -> ProbeSpectrum:
        c = self.molecule.mean(axis=0)
        return self.spectrum(c + np.array([rho, 0.0, z]))


def three_atom_spectrum(config: PhysicalConfig, molecule_geometry, probe_position) -> ProbeSpectrum:
    return ProbeSolver(config, molecule_geometry).spectrum(probe_position)


def far_spectrum(config: PhysicalConfig) -> ProbeSpectrum:
    """Probe infinitely far from any impurity: two degenerate levels at zero shift."""
    return ProbeSpectrum(np.zeros(2), np.ones(2), 0.0)


@lru_cache(maxsize=8)
def _np_impurity_setup(config: PhysicalConfig, impurity: SingleAtomState):
    basis = build_basis(2, 1)
    emb = _probe_embedding(2, 1)
    k = SINGLE_ATOM_STATES.index(impurity)
    ref = np.zeros((basis.dim, 2))
    ref[emb[k, 0], 0] = 1.0
    ref[emb[k, 1], 1] = 1.0
    e0 = config.delta if impurity.level is Level.NP12 else 0.0
    return basis, ref, e0


DEFAULT_NP_IMPURITY = SingleAtomState(Level.NP32, 3 / 2)


def impurity_spectrum(config: PhysicalConfig, kind: str, probe_offset,
                      np_state: SingleAtomState = DEFAULT_NP_IMPURITY) -> ProbeSpectrum:
    """Probe spectrum next to a lone Rydberg atom at the origin.

    ``kind`` is ``"np_atom"`` (resonant nS-nP exchange, two-atom nsnp sector)
    or ``"ns_atom"`` (no first-order exchange; van der Waals shift -C6/R^6).
    """
    off = np.asarray(probe_offset, dtype=float)
    r = float(np.linalg.norm(off))
    if r < MIN_PROBE_DISTANCE:
        raise SingularGeometryError("probe coincides with the impurity")
    if kind == "ns_atom":
        return ProbeSpectrum(np.array([-config.c6 / r**6]), np.array([2.0]), 0.0)
    if kind != "np_atom":
        raise ValueError(f"unknown impurity kind {kind!r}")
    basis, ref, e0 = _np_impurity_setup(config, np_state)
    h = hamiltonian(basis, np.vstack([np.zeros(3), off]), config)
    vals, vecs = np.linalg.eigh(h)
    f2 = np.sum(np.abs(ref.T @ vecs) ** 2, axis=0)
    return ProbeSpectrum(vals - e0, f2, e0)


# ---------------------------------------------------------------------------
# susceptibility
# ---------------------------------------------------------------------------

def susceptibility(config: PhysicalConfig, spectrum: ProbeSpectrum) -> complex:
    c = config
    dk = c.delta_p + c.delta_c + spectrum.shifts
    s = np.sum(c.omega_c**2 * spectrum.weights / (c.gamma_c - 1j * dk))
    return complex(1j * c.gamma_p / (c.gamma_p - 1j * c.delta_p + s))


# ---------------------------------------------------------------------------
# master equation
# ---------------------------------------------------------------------------

def _liouvillian(h: np.ndarray, collapse: list[np.ndarray]) -> np.ndarray:
    n = h.shape[0]
    eye = np.eye(n)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in collapse:
        cdc = c.conj().T @ c
        lv += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return lv


def _probe_model(config: PhysicalConfig, spectrum: ProbeSpectrum, threshold: float,
                 sink: bool = True, cutoff: float | None = ELIMINATION_CUTOFF):
    """Hamiltonian and jump operators on [g, g', e, k_1..k_K].

    Levels with F_k^2 > ``threshold`` and |Delta_k - Delta_p| <= ``cutoff``
    are kept explicitly.  All others are adiabatically eliminated: each adds a
    light shift and an extra e -> g decay with its self-energy
    g_k^2 / (Delta_p - Delta_k + i G_c/2), g_k = W_c F_k / 2.
    """
    c = config
    dk = c.delta_p + c.delta_c + spectrum.shifts
    keep = spectrum.weights > threshold
    if cutoff is not None:
        keep &= np.abs(dk - c.delta_p) <= cutoff
    g2 = (c.omega_c / 2) ** 2 * spectrum.weights[~keep]
    det = c.delta_p - dk[~keep]
    den = det**2 + (c.gamma_c / 2) ** 2
    shift = float(np.sum(g2 * det / den))
    extra_decay = float(np.sum(g2 * c.gamma_c / den))
    shifts, weights = _merge_degenerate(spectrum.shifts[keep], spectrum.weights[keep])
    dk_kept = c.delta_p + c.delta_c + shifts
    k = shifts.size
    n = 3 + k
    g, gp, e = 0, 1, 2
    h = np.zeros((n, n), dtype=complex)
    h[e, e] = c.delta_p + shift
    h[e, g] = h[g, e] = c.omega_p / 2
    amp = c.omega_c * np.sqrt(weights) / 2
    h[3:, e] = amp
    h[e, 3:] = amp
    h[3:, 3:] = np.diag(dk_kept)
    if sink:
        ops = [(g, e, c.gamma_p / 2), (gp, e, c.gamma_p / 2)]
    else:
        ops = [(g, e, c.gamma_p)]
    ops.append((g, e, extra_decay))
    ops += [(g, 3 + i, c.gamma_c) for i in range(k)]
    jumps = []
    for dst, src, rate in ops:
        if rate > 0:
            op = np.zeros((n, n))
            op[dst, src] = math.sqrt(rate)
            jumps.append(op)
    sp = ProbeSpectrum(shifts, weights, spectrum.e0)
    return h, jumps, sp


def _merge_degenerate(shifts: np.ndarray, weights: np.ndarray, tol: float = DEGENERACY_TOL):
    """Collapse levels with equal shifts into one bright level carrying the summed weight.

    Degenerate levels that decay at the same rate to the same state only
    couple to e through their bright combination, so this is exact for
    exact degeneracy.
    """
    if shifts.size < 2:
        return shifts, weights
    order = np.argsort(shifts)
    s, w = shifts[order], weights[order]
    start = np.concatenate([[True], np.diff(s) > tol])
    group = np.cumsum(start) - 1
    wsum = np.bincount(group, weights=w)
    smean = np.bincount(group, weights=s * w) / wsum
    return smean, wsum


def probe_master_equation(config: PhysicalConfig, spectrum: ProbeSpectrum, t: float,
                          threshold: float = LEVEL_THRESHOLD, method: str = "expm",
                          return_rho: bool = False,
                          cutoff: float | None = ELIMINATION_CUTOFF) -> dict:
    """Populations after the EIT lasers have been on for ``t`` us, starting in g.

    ``method="expm"`` propagates with the exact matrix exponential of the
    Liouvillian; ``method="rk"`` integrates with an adaptive 8th-order
    Runge-Kutta (rtol 1e-8) and is kept as an independent cross-check.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    h, jumps, sp = _probe_model(config, spectrum, threshold, cutoff=cutoff)
    n = h.shape[0]
    rho0 = np.zeros((n, n), dtype=complex)
    rho0[0, 0] = 1.0
    lv = _liouvillian(h, jumps)
    if method == "expm":
        vec = expm(lv * t) @ rho0.ravel()
    elif method == "rk":
        if t == 0:
            vec = rho0.ravel()
        else:
            sol = solve_ivp(lambda _, y: lv @ y, (0.0, t), rho0.ravel(), method="DOP853",
                            rtol=1e-8, atol=1e-11)
            if not sol.success:
                raise RuntimeError(f"master-equation integration failed: {sol.message} "
                                   f"(dimension {n}, t={t} us, {sol.nfev} evaluations)")
            vec = sol.y[:, -1]
    else:
        raise ValueError(f"unknown method {method!r}")
    rho = vec.reshape(n, n)
    pops = np.real(np.diag(rho))
    out = {
        "pop_g": float(pops[0]),
        "pop_gprime": float(pops[1]),
        "pop_e": float(pops[2]),
        "pop_k": pops[3:].copy(),
        "trace": float(np.real(np.trace(rho))),
        "n_levels": sp.shifts.size,
    }
    if return_rho:
        out["rho"] = rho
    return out


def steady_state_susceptibility(config: PhysicalConfig, spectrum: ProbeSpectrum,
                                threshold: float = LEVEL_THRESHOLD,
                                cutoff: float | None = ELIMINATION_CUTOFF) -> complex:
    """Susceptibility read off the steady-state coherence of the closed model.

    e decays only to g here (no sink), and the result is normalised so that a
    bare resonant two-level atom gives ``i``: chi = -G_p rho_eg / W_p.
    """
    h, jumps, _ = _probe_model(config, spectrum, threshold, sink=False, cutoff=cutoff)
    # drop g' (index 1): it is uncoupled in the closed model
    keep = [i for i in range(h.shape[0]) if i != 1]
    h = h[np.ix_(keep, keep)]
    jumps = [j[np.ix_(keep, keep)] for j in jumps]
    n = h.shape[0]
    lv = _liouvillian(h, jumps)
    ns = null_space(lv)
    if ns.shape[1] != 1:
        raise RuntimeError(f"steady state not unique (null space dimension {ns.shape[1]})")
    rho = ns[:, 0].reshape(n, n)
    rho = rho / np.trace(rho)
    return complex(-config.gamma_p * rho[1, 0] / config.omega_p)


# ---------------------------------------------------------------------------
# spatial maps
# ---------------------------------------------------------------------------

def _chi_row(args):
    config, molecule, z, rho_grid = args
    solver = ProbeSolver(config, molecule)
    return [susceptibility(config, solver.spectrum_at(z, r)) for r in rho_grid]


def _pop_row(args):
    config, molecule, z, rho_grid, exposure, threshold = args
    solver = ProbeSolver(config, molecule)
    return [probe_master_equation(config, solver.spectrum_at(z, r), exposure, threshold)["pop_gprime"]
            for r in rho_grid]


def _map(fn, jobs, threads):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _molecule(config, molecule_geometry):
    if molecule_geometry is None:
        well, _ = reference_well(config)
        return pair_geometry(well.r_p)
    return np.asarray(molecule_geometry, dtype=float)


def chi_map(config: PhysicalConfig, z_grid, rho_grid, molecule_geometry=None,
            threads: int = 1) -> SusceptibilityField:
    """chi on a (z, rho) grid around a molecule centred at the origin along z."""
    z_grid = np.asarray(z_grid, dtype=float)
    rho_grid = np.asarray(rho_grid, dtype=float)
    mol = _molecule(config, molecule_geometry)
    rows = _map(_chi_row, [(config, mol, z, rho_grid) for z in z_grid], threads)
    return SusceptibilityField(z_grid, rho_grid, np.array(rows, dtype=complex))


def population_map(config: PhysicalConfig, z_grid, rho_grid, exposure: float = 2.0,
                   molecule_geometry=None, threshold: float = LEVEL_THRESHOLD,
                   threads: int = 1) -> PopulationField:
    """g' population after ``exposure`` us on a (z, rho) grid around a molecule."""
    z_grid = np.asarray(z_grid, dtype=float)
    rho_grid = np.asarray(rho_grid, dtype=float)
    mol = _molecule(config, molecule_geometry)
    rows = _map(_pop_row, [(config, mol, z, rho_grid, exposure, threshold) for z in z_grid],
                threads)
    return PopulationField(z_grid, rho_grid, np.array(rows, dtype=float), exposure)
