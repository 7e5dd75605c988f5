"""Matplotlib renderings of the CLI outputs (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .units import TWO_PI, to_hghz_per_um  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_potential(surface, well, path, config, window_mhz: float = 400.0):
    r = surface.r_grid / config.r0
    e = surface.energies / TWO_PI
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(r, e, color="0.6", lw=0.7)
    if well is not None:
        ax.plot(r, e[:, well.branch_id], color="C3", lw=1.6, label=f"M = {well.label[0]:+g}, parity {well.label[1]:+d}")
        ax.axvline(well.r_p / config.r0, color="C3", ls=":", lw=0.8)
        ax.set_ylim(well.energy / TWO_PI - window_mhz, well.energy / TWO_PI + window_mhz)
        ax.legend(loc="lower right", fontsize=8)
    ax.set_xlabel("R / r0")
    ax.set_ylabel("energy (MHz)")
    fig.tight_layout()
    _save(fig, path)


def _mirror(z, rho, values):
    """Extend a (z, rho >= 0) table to rho < 0 for a full-plane picture."""
    rho_full = np.concatenate([-rho[:0:-1], rho])
    v_full = np.concatenate([values[:, :0:-1], values], axis=1)
    return z, rho_full, v_full


def plot_map(z, rho, values, path, label, vmin=None, vmax=None, cmap="viridis"):
    z, rf, v = _mirror(np.asarray(z), np.asarray(rho), np.asarray(values))
    fig, ax = plt.subplots(figsize=(5, 4.2))
    mesh = ax.pcolormesh(z, rf, v.T, shading="nearest", vmin=vmin, vmax=vmax, cmap=cmap)
    fig.colorbar(mesh, ax=ax, label=label)
    ax.set_xlabel("z (um)")
    ax.set_ylabel("rho (um)")
    ax.set_aspect("equal")
    fig.tight_layout()
    _save(fig, path)


def plot_drag(traj, free_disp, path):
    t = traj.times
    along = -(traj.com_displacement() @ np.asarray(traj.meta["direction"]))
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    a1.plot(t, along, label="molecule COM")
    a1.plot(t, free_disp, ls="--", label="free nS atom")
    a1.set_ylabel("displacement (um)")
    a1.legend(fontsize=8)
    a2.plot(t, traj.separation, color="C2")
    a2.set_ylabel("separation (um)")
    a2.set_xlabel("t (us)")
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(result, path):
    rows = result["rows"]
    alphas = np.array([to_hghz_per_um(r["alpha"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if "times" in result:
        series = np.array([r["series"] for r in rows])
        mesh = ax.pcolormesh(result["times"], alphas, series, shading="nearest", cmap="magma")
        fig.colorbar(mesh, ax=ax, label="R - r_p (um)")
        ax.set_xlabel("t (us)")
    else:
        ax.plot(alphas, [r["max_relative_displacement"] for r in rows], "o-")
        ax.set_xlabel("alpha (h GHz/um)")
    if result["threshold"] is not None and "times" in result:
        ax.axhline(to_hghz_per_um(result["threshold"]), color="w", ls="--", lw=0.8)
    ax.set_ylabel("alpha (h GHz/um)")
    fig.tight_layout()
    _save(fig, path)


def plot_frames(frames, titles, path, spots=None):
    fig, axes = plt.subplots(1, len(frames), figsize=(4.2 * len(frames), 4))
    axes = np.atleast_1d(axes)
    for ax, frame, title in zip(axes, frames, titles):
        u0, u1, v0, v1 = frame.region
        nv, nu = frame.counts.shape
        ext = (u0, u0 + nu * frame.pixel_size, v0, v0 + nv * frame.pixel_size)
        ax.imshow(frame.counts, origin="lower", extent=ext, cmap="Blues", interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("u (um)")
    axes[0].set_ylabel("v (um)")
    if spots is not None:
        for c in spots.clusters:
            for ax, key in ((axes[0], "centroid_before"), (axes[-1], "centroid_after")):
                if c[key] is not None:
                    ax.annotate(c["label"], c[key], color="C3", fontsize=7, ha="center")
    fig.tight_layout()
    _save(fig, path)
