"""Classical motion of a dragged macrodimer on its Born-Oppenheimer surface.

The nS level of each atom is shifted by ``u = alpha * (direction . R_i)``.
Forces follow from Hellmann-Feynman on the instantaneous bound eigenvector of
H0 + U; the nS weight of each atom is read from that eigenvector, so the
applied force is shared unevenly as soon as the molecule stretches.

Sign convention: the shift raises the energy along ``+direction``, so both
atoms are pushed towards ``-direction``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import PhysicalConfig, dipole_dipole_gradient
from .potential import ContinuationLostError, bound_state, pair_geometry, reference_well

__all__ = [
    "DragConfig",
    "DressingProfile",
    "Trajectory",
    "IntegratorError",
    "dressing_force_profile",
    "bo_force",
    "integrate",
    "rupture_sweep",
    "adiabatic_overlap",
    "free_atom_displacement",
    "integrate_free_atom",
    "default_dt",
    "expected_com_displacement",
]


class IntegratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class DragConfig:
    """``alpha`` in rad/us per um; ``dt`` None picks 1/200 of a vibrational period."""

    alpha: float = 0.0
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    t_final: float = 10.0
    dt: float | None = None

    def __post_init__(self):
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or np.linalg.norm(d) == 0:
            raise ValueError("direction must be a nonzero 3-vector")

    @property
    def unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class DressingProfile:
    detuning: float
    rabi_max: float
    ramp_length: float

    def __post_init__(self):
        if self.detuning == 0:
            raise ValueError("dressing detuning must be nonzero")
        if self.ramp_length <= 0:
            raise ValueError("ramp length must be positive")
        if abs(self.detuning) <= abs(self.rabi_max):
            raise ValueError("dressing needs |detuning| > rabi_max (perturbative regime)")


def dressing_force_profile(profile: DressingProfile) -> dict:
    """Light shift u(z) = Omega(z)^2 / (4 detuning) of a linearly ramped far-detuned beam."""
    u_end = profile.rabi_max**2 / (4 * profile.detuning)
    return {
        "alpha": u_end / profile.ramp_length,
        "depopulation": (profile.rabi_max / (2 * profile.detuning)) ** 2,
    }


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (n, 2, 3) um
    momenta: np.ndarray  # (n, 2, 3) mass_internal * um/us
    energy: np.ndarray  # total <H0 + U> + kinetic, rad/us
    mechanical_energy: np.ndarray  # <H0> + kinetic
    separation: np.ndarray
    com: np.ndarray  # (n, 3)
    ns_weights: np.ndarray  # (n, 2)
    ruptured: bool = False
    rupture_time: float | None = None
    note: str = ""
    meta: dict = field(default_factory=dict)

    def com_displacement(self) -> np.ndarray:
        return self.com - self.com[0]


def default_dt(config: PhysicalConfig) -> float:
    well, _ = reference_well(config)
    return (2 * math.pi / well.omega_vib) / 200


def _steps(config, drag):
    # shrink dt so that an integer number of steps lands exactly on t_final
    dt = drag.dt if drag.dt is not None else default_dt(config)
    n = int(math.ceil(drag.t_final / dt - 1e-9))
    return (n, drag.t_final / n) if n > 0 else (0, dt)


def _hf_forces(config, pos, alpha, direction, hint):
    bs = bound_state(config, pos, alpha, direction, hint=hint)
    grad = dipole_dipole_gradient(bs.basis, pos, config, 0, 1)
    g = np.real(np.einsum("i,cij,j->c", bs.psi.conj(), grad, bs.psi))
    forces = np.array([-g, g])
    forces -= alpha * np.outer(bs.ns_weights, direction)
    return forces, bs


def bo_force(config: PhysicalConfig, positions, alpha: float = 0.0,
             direction=(0.0, 0.0, 1.0), hint=None) -> np.ndarray:
    """Per-atom forces (rad/us per um) from -grad <psi|H0 + U1 + U2|psi>."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    f, _ = _hf_forces(config, np.asarray(positions, dtype=float), alpha, d, hint)
    return f


def _rest_at_equilibrium(config):
    well, _ = reference_well(config)
    return pair_geometry(well.r_p), np.zeros((2, 3))


def integrate(config: PhysicalConfig, drag: DragConfig, positions=None, momenta=None,
              dissociation_radius: float | None = None, record_every: int = 1,
              check_energy: bool = True) -> Trajectory:
    """Velocity-Verlet integration of Hamilton's equations on the bound surface.

    Stops early once the separation exceeds ``dissociation_radius`` (default
    3 r_p) and flags the run as ruptured.
    """
    well, psi_ref = reference_well(config)
    if positions is None:
        positions, p0 = _rest_at_equilibrium(config)
        momenta = p0 if momenta is None else momenta
    pos = np.array(positions, dtype=float)
    mom = np.zeros((2, 3)) if momenta is None else np.array(momenta, dtype=float)
    m = config.mass_internal
    d = drag.unit_direction
    alpha = drag.alpha
    n_steps, dt = _steps(config, drag)
    r_diss = dissociation_radius if dissociation_radius is not None else 3 * well.r_p

    force, bs = _hf_forces(config, pos, alpha, d, None)
    hint = bs.psi
    rec = {k: [] for k in ("t", "pos", "mom", "e", "emech", "w")}

    def record(t, pos, mom, bs):
        kin = float(np.sum(mom**2) / (2 * m))
        u = alpha * float(np.dot(d, pos[0] * bs.ns_weights[0] + pos[1] * bs.ns_weights[1]))
        rec["t"].append(t)
        rec["pos"].append(pos.copy())
        rec["mom"].append(mom.copy())
        rec["e"].append(kin + bs.energy)
        rec["emech"].append(kin + bs.energy - u)
        rec["w"].append(bs.ns_weights.copy())

    record(0.0, pos, mom, bs)
    ruptured, t_rupt, note = False, None, ""
    for step in range(1, n_steps + 1):
        mom += 0.5 * dt * force
        pos += dt * mom / m
        t = step * dt
        if np.linalg.norm(pos[0] - pos[1]) > r_diss:
            ruptured, t_rupt, note = True, t, "separation exceeded dissociation radius"
            bs_last = None
            break
        try:
            force, bs = _hf_forces(config, pos, alpha, d, hint)
        except ContinuationLostError as exc:
            ruptured, t_rupt, note = True, t, f"bound state lost: {exc}"
            bs_last = None
            break
        hint = bs.psi
        mom += 0.5 * dt * force
        if step % record_every == 0 or step == n_steps:
            record(t, pos, mom, bs)
    else:
        bs_last = bs

    if ruptured:
        # final kinematic point without an energy (surface no longer defined)
        rec["t"].append(t_rupt)
        rec["pos"].append(pos.copy())
        rec["mom"].append(mom.copy())
        rec["e"].append(np.nan)
        rec["emech"].append(np.nan)
        rec["w"].append(np.full(2, np.nan))
    del bs_last

    positions = np.array(rec["pos"])
    energy = np.array(rec["e"])
    if check_energy and alpha == 0.0:
        finite = energy[np.isfinite(energy)]
        drift = np.max(np.abs(finite - finite[0])) / max(abs(finite[0]), 1e-300)
        if drift > 1e-2:
            raise IntegratorError(f"energy drift {drift:.2e} exceeds 1%; reduce dt (now {dt:g} us)")
    return Trajectory(
        times=np.array(rec["t"]),
        positions=positions,
        momenta=np.array(rec["mom"]),
        energy=energy,
        mechanical_energy=np.array(rec["emech"]),
        separation=np.linalg.norm(positions[:, 0] - positions[:, 1], axis=1),
        com=positions.mean(axis=1),
        ns_weights=np.array(rec["w"]),
        ruptured=ruptured,
        rupture_time=t_rupt,
        note=note,
        meta={"alpha": alpha, "dt": dt, "direction": d.tolist(), "r_p": well.r_p,
              "dissociation_radius": r_diss},
    )


def free_atom_displacement(config: PhysicalConfig, alpha: float, t) -> np.ndarray:
    """Closed-form displacement magnitude of a lone nS atom: (alpha/m) t^2 / 2."""
    return alpha / config.mass_internal * np.asarray(t, dtype=float) ** 2 / 2


def expected_com_displacement(config: PhysicalConfig, alpha: float, t) -> np.ndarray:
    """A molecule carries one nS excitation on mass 2m: half the free-atom displacement."""
    return free_atom_displacement(config, alpha, t) / 2


def integrate_free_atom(config: PhysicalConfig, drag: DragConfig) -> tuple[np.ndarray, np.ndarray]:
    """Verlet run of a single nS atom under the constant force -alpha * direction."""
    n, dt = _steps(config, drag)
    m = config.mass_internal
    f = -drag.alpha * drag.unit_direction
    pos, mom = np.zeros(3), np.zeros(3)
    out = [pos.copy()]
    for _ in range(n):
        mom = mom + 0.5 * dt * f
        pos = pos + dt * mom / m
        mom = mom + 0.5 * dt * f
        out.append(pos.copy())
    return np.arange(n + 1) * dt, np.array(out)


def _oscillation_frequency(t: np.ndarray, x: np.ndarray) -> float:
    """Ordinary frequency (cycles/us = MHz) from zero crossings of x - mean(x)."""
    y = x - x.mean()
    s = np.signbit(y)
    idx = np.nonzero(s[1:] != s[:-1])[0]
    if idx.size < 2:
        return float("nan")
    # linear interpolation of the crossing times
    tc = t[idx] - y[idx] * (t[idx + 1] - t[idx]) / (y[idx + 1] - y[idx])
    return float((idx.size - 1) / (2 * (tc[-1] - tc[0])))


def _sweep_one(args):
    config, alpha, t_final, direction, dt, series_points = args
    traj = integrate(config, DragConfig(alpha, direction, t_final, dt), check_energy=False)
    r_p = traj.meta["r_p"]
    rel = traj.separation - r_p
    freq = float("nan") if traj.ruptured else _oscillation_frequency(traj.times, traj.separation)
    series = None
    if series_points:
        grid = np.linspace(0.0, t_final, series_points)
        series = np.interp(grid, traj.times, rel, right=np.nan)
        if traj.ruptured:
            series[grid > traj.rupture_time] = np.nan
    return {
        "series": series,
        "alpha": alpha,
        "max_relative_displacement": float(np.max(np.abs(rel))),
        "ruptured": traj.ruptured,
        "rupture_time": traj.rupture_time,
        "frequency_MHz": freq,
    }


def rupture_sweep(config: PhysicalConfig, alpha_grid, t_final: float = 10.0,
                  direction=(0.0, 0.0, 1.0), dt: float | None = None,
                  threads: int = 1, series_points: int = 0) -> dict:
    """Summaries per alpha and the threshold (smallest ruptured alpha, or None).

    With ``series_points`` > 0 each row also carries the separation minus r_p
    sampled on ``linspace(0, t_final, series_points)`` (NaN after rupture).
    """
    alphas = [float(a) for a in alpha_grid]
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha_grid must be ascending")
    reference_well(config)
    jobs = [(config, a, t_final, tuple(direction), dt, series_points) for a in alphas]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    broken = [r["alpha"] for r in rows if r["ruptured"]]
    out = {"rows": rows, "threshold": min(broken) if broken else None}
    if series_points:
        out["times"] = np.linspace(0.0, t_final, series_points)
    return out


def adiabatic_overlap(config: PhysicalConfig, geometry, alpha: float,
                      direction=(0.0, 0.0, 1.0)) -> float:
    """|<psi_alpha|psi_0>|^2 for the bound eigenvectors of H0 + U(alpha) and H0."""
    psi0 = bound_state(config, geometry, 0.0, direction).psi
    if alpha == 0.0:
        return 1.0
    psia = bound_state(config, geometry, alpha, direction).psi
    return float(abs(np.vdot(psia, psi0)) ** 2)
