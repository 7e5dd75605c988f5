"""Command-line front end: ``macrodimer <command> [--config FILE] [--out DIR] ...``.

Each command writes its tables (CSV or JSON), figures (PNG, PGM for raw
frames) and a ``manifest.json`` listing every file, the config hash and
seed.  Set SOURCE_DATE_EPOCH to pin the manifest timestamp.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import eit, imaging, plotting, potential, units
from .config import ConfigError, RunConfig, dump_defaults
from .dynamics import (IntegratorError, expected_com_displacement, free_atom_displacement,
                       integrate, rupture_sweep)
from .model import SingularGeometryError, characteristic_scales
from .potential import ContinuationLostError, GridTooCoarseError

OUT_ENV = "MACRODIMER_OUT"
COMMANDS = ("scales", "potential", "chi-map", "pop-map", "drag", "sweep", "image", "classify",
            "units")

EXIT_CONFIG = 3
EXIT_PHYSICS = 4
EXIT_IO = 5


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return t.replace(microsecond=0).isoformat()


def _available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: list
    version: str = field(default_factory=_version)
    timestamp: str = field(default_factory=_timestamp)
    files: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash, "seeds": self.seeds,
                "version": self.version, "timestamp": self.timestamp,
                "files": sorted(self.files), "notes": self.notes}


class Writer:
    """Writes outputs into one directory and records them for the manifest."""

    def __init__(self, out: Path, fmt: str, manifest: RunManifest):
        self.out = out
        self.fmt = fmt
        self.manifest = manifest
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.manifest.files.append(name)
        return self.out / name

    def table(self, stem: str, header: list[str], rows) -> Path:
        rows = [[_cell(v) for v in r] for r in rows]
        if self.fmt == "json":
            p = self.path(stem + ".json")
            p.write_text(json.dumps({"columns": header, "rows": rows}, indent=1) + "\n")
        else:
            p = self.path(stem + ".csv")
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(["" if v is None else v for v in r] for r in rows)
        return p

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(data), indent=1, sort_keys=True) + "\n")
        return p

    def finish(self) -> Path:
        p = self.out / "manifest.json"
        p.write_text(json.dumps(_jsonable(self.manifest.as_dict()), indent=1, sort_keys=True) + "\n")
        return p


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return None if not np.isfinite(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_pgm(path: Path, counts: np.ndarray) -> None:
    """Plain (ASCII) portable graymap; row 0 is the top of the image."""
    img = np.flipud(np.asarray(counts, dtype=np.int64))
    maxval = max(1, int(img.max(initial=0)))
    lines = [f"P2\n{img.shape[1]} {img.shape[0]}\n{maxval}"]
    lines += [" ".join(map(str, row)) for row in img]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_scales(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    sc = characteristic_scales(cfg)
    well, _ = potential.reference_well(cfg)
    dens = imaging.validate_density(cfg, rc.section("scene")["rho_2d"])
    rows = [
        ["r0", sc.r0, "um"],
        ["r0_from_dipole_element", cfg.r0_derived, "um"],
        ["C3", sc.c3 / units.TWO_PI, "MHz um^3"],
        ["fine_structure_splitting", sc.delta / units.TWO_PI, "MHz"],
        ["interaction_at_r0", float(sc.omega_of_r(sc.r0)) / units.TWO_PI, "MHz"],
        ["r_p", well.r_p, "um"],
        ["well_depth", well.depth / units.TWO_PI, "MHz"],
        ["well_depth_temperature", units.units_convert(well.depth / units.TWO_PI, "h*MHz", "mK"), "mK"],
        ["f_vib", well.omega_vib / units.TWO_PI, "MHz"],
        ["f_rot", well.omega_rot / units.TWO_PI * 1e3, "kHz"],
        ["probe_blockade_radius", dens["rc_prime"], "um"],
        ["density_bound", dens["snr_bound"], "um^-2"],
        ["dilute_factor", dens["dilute_factor"], "1"],
    ]
    w.table("scales", ["quantity", "value", "unit"], rows)
    for name, val, unit in rows:
        print(f"{name:28s} {val:12.6g} {unit}")


def cmd_potential(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    surface = potential.bo_surface(cfg, rc.r_grid(cfg))
    well = potential.find_well(surface, cfg)
    header = ["r_um"] + [f"E{k}_jz{m:+g}_p{p:+d}_MHz" for k, (m, p) in enumerate(surface.labels)]
    rows = [[r, *(e / units.TWO_PI)] for r, e in zip(surface.r_grid, surface.energies)]
    w.table("potential_curves", header, rows)
    w.json("well.json", {"well": None if well is None else well.as_dict(),
                         "wells": [x.as_dict() for x in potential.find_wells(surface, cfg)]})
    plotting.plot_potential(surface, well, w.path("potential.png"), cfg)
    if well is None:
        print("no bound well on this surface")
    else:
        d = well.as_dict()
        print(f"r_p = {d['r_p_um']:.4f} um, depth = {d['depth_MHz']:.2f} MHz, "
              f"f_vib = {d['f_vib_MHz']:.4f} MHz, f_rot = {d['f_rot_kHz']:.4f} kHz")


def _map_sidecar(z, rho, values: dict, **extra) -> dict:
    return {"axes": {"z_um": {"min": float(z[0]), "max": float(z[-1]), "n": len(z)},
                     "rho_um": {"min": float(rho[0]), "max": float(rho[-1]), "n": len(rho)}},
            "values": values, "layout": "rows ordered z-major, rho-minor",
            "molecule": "centred at the origin, axis along z", **extra}


def cmd_chi_map(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    z, rho = rc.eit_grid()
    field_ = eit.chi_map(cfg, z, rho, threads=args.threads)
    rows = [[zz, rr, field_.chi[i, j].real, field_.chi[i, j].imag]
            for i, zz in enumerate(z) for j, rr in enumerate(rho)]
    w.table("chi_map", ["z_um", "rho_um", "re_chi", "im_chi"], rows)
    plotting.plot_map(z, rho, field_.chi.imag, w.path("chi_map.png"), "Im chi", 0.0, 1.0)
    w.json("chi_map_axes.json", _map_sidecar(z, rho, {"re_chi": "1", "im_chi": "1"}))


def cmd_pop_map(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    z, rho = rc.eit_grid()
    exposure = rc.section("eit")["exposure_us"]
    field_ = eit.population_map(cfg, z, rho, exposure, threads=args.threads)
    rows = [[zz, rr, field_.p_gprime[i, j]] for i, zz in enumerate(z) for j, rr in enumerate(rho)]
    w.table("pop_map", ["z_um", "rho_um", "p_gprime"], rows)
    plotting.plot_map(z, rho, field_.p_gprime, w.path("pop_map.png"), "g' population", 0.0, None)
    w.json("pop_map_axes.json", _map_sidecar(z, rho, {"p_gprime": "probability"},
                                             exposure_us=exposure))


def cmd_drag(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    drag = rc.drag()
    traj = integrate(cfg, drag, check_energy=False)
    d = traj.meta["direction"]
    along = -(traj.com_displacement() @ np.asarray(d)) + 0.0
    free = free_atom_displacement(cfg, drag.alpha, traj.times)
    energy = np.where(np.isfinite(traj.energy), traj.energy / units.TWO_PI, np.nan)
    rows = [[t, *p[0], *p[1], s, *c, a, f, e]
            for t, p, s, c, a, f, e in zip(traj.times, traj.positions, traj.separation, traj.com,
                                           along, free, energy)]
    w.table("trajectory", ["t_us", "x1_um", "y1_um", "z1_um", "x2_um", "y2_um", "z2_um",
                           "separation_um", "com_x_um", "com_y_um", "com_z_um",
                           "com_displacement_um", "free_ns_displacement_um", "energy_MHz"], rows)
    summary = {
        "alpha_hGHz_per_um": units.to_hghz_per_um(drag.alpha),
        "alpha_pN": units.units_convert(units.to_hghz_per_um(drag.alpha), "h*GHz/um", "pN"),
        "t_final_us": drag.t_final,
        "dt_us": traj.meta["dt"],
        "ruptured": traj.ruptured,
        "rupture_time_us": traj.rupture_time,
        "note": traj.note,
        "com_displacement_um": float(along[-1]),
        "expected_com_displacement_um": float(expected_com_displacement(cfg, drag.alpha, traj.times[-1])),
        "separation_min_um": float(np.nanmin(traj.separation)),
        "separation_max_um": float(np.nanmax(traj.separation)),
    }
    w.json("drag_summary.json", summary)
    plotting.plot_drag(traj, free, w.path("drag.png"))
    print(json.dumps(_jsonable(summary), indent=1))


def cmd_sweep(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    s = rc.section("sweep")
    alphas = rc.sweep_alphas()
    drag = rc.drag()
    res = rupture_sweep(cfg, [units.hghz_per_um(a) for a in alphas], float(s["t_final_us"]),
                        drag.direction, drag.dt, threads=args.threads,
                        series_points=int(s["series_points"]))
    rows = [[a, r["max_relative_displacement"], r["ruptured"], r["rupture_time"], r["frequency_MHz"]]
            for a, r in zip(alphas, res["rows"])]
    w.table("sweep", ["alpha_hGHz_per_um", "max_relative_displacement_um", "ruptured",
                      "rupture_time_us", "oscillation_frequency_MHz"], rows)
    if "times" in res:
        series_rows = [[a, t, v] for a, r in zip(alphas, res["rows"])
                       for t, v in zip(res["times"], r["series"])]
        w.table("sweep_series", ["alpha_hGHz_per_um", "t_us", "relative_displacement_um"],
                series_rows)
    thr = None if res["threshold"] is None else units.to_hghz_per_um(res["threshold"])
    w.json("sweep_summary.json", {"threshold_hGHz_per_um": thr,
                                  "grid_step_hGHz_per_um": s["alpha_step"]})
    plotting.plot_sweep(res, w.path("sweep.png"))
    print(f"rupture threshold: {thr} h*GHz/um")


def _scene_json(scene: imaging.Scene) -> dict:
    return {"region_um": list(scene.region), "rho_2d": scene.rho_2d, "seed": scene.seed,
            "impurities": [{"kind": i.kind, "position_um": list(i.position),
                            "angle_rad": i.angle} for i in scene.impurities]}


def _frames(args, rc: RunConfig, w: Writer):
    cfg = rc.physical()
    scene = rc.scene(args.seed, cfg)
    im = rc.section("imaging")
    drag = rc.drag()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        before, after, moved = imaging.two_shot(cfg, scene, drag, im["exposure_us"],
                                                im["pixel_size_um"])
    for tag, frame in (("before", before), ("after", after)):
        write_pgm(w.path(f"frame_{tag}.pgm"), frame.counts)
        w.table(f"gprime_{tag}", ["u_um", "v_um"], frame.gprime_atoms.tolist())
    w.json("scene.json", {"before": _scene_json(scene), "after": _scene_json(moved),
                          "frames": {t: {"n_probe": f.n_probe, "n_gprime": f.total,
                                         "n_excluded": f.n_excluded, "seed": f.meta["seed"]}
                                     for t, f in (("before", before), ("after", after))},
                          "probe_ensemble": "resampled between exposures",
                          "warnings": [str(c.message) for c in caught]})
    w.manifest.seeds = [before.meta["seed"], after.meta["seed"]]
    w.manifest.notes["probe_ensemble"] = "resampled"
    return cfg, scene, drag, im, before, after


def cmd_image(args, rc: RunConfig, w: Writer):
    _, _, _, _, before, after = _frames(args, rc, w)
    plotting.plot_frames([before, after], ["before drag", "after drag"], w.path("frames.png"))
    print(f"g' atoms: before {before.total}, after {after.total}")


def cmd_classify(args, rc: RunConfig, w: Writer):
    cfg, scene, drag, im, before, after = _frames(args, rc, w)
    spots = imaging.classify_spots(before, after, drag, cfg, im["linking_radius_um"],
                                   im["min_cluster_size"])
    truth = imaging.score_classification(scene, spots, im["linking_radius_um"])
    w.json("spots.json", {"clusters": spots.clusters,
                          "truth": [{"kind": k, "label": lab} for k, lab in truth],
                          "displacement_um": imaging.molecule_displacement(cfg, drag)})
    plotting.plot_frames([before, after], ["before drag", "after drag"],
                         w.path("classified.png"), spots)
    for c in spots.clusters:
        print(c["label"], c["centroid_before"], c["centroid_after"])


def cmd_units(args, rc, w: Writer):
    value = units.units_convert(args.value, args.src, args.dst)
    w.json("units.json", {"value": args.value, "from": args.src, "to": args.dst, "result": value})
    print(f"{args.value:g} {args.src} = {value:.6g} {args.dst}")


HANDLERS = {"scales": cmd_scales, "potential": cmd_potential, "chi-map": cmd_chi_map,
            "pop-map": cmd_pop_map, "drag": cmd_drag, "sweep": cmd_sweep, "image": cmd_image,
            "classify": cmd_classify, "units": cmd_units}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML config (defaults if omitted)")
    common.add_argument("--out", type=Path, default=None,
                        help=f"output directory (else ${OUT_ENV}, else ./out/<command>)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed for image/classify")
    common.add_argument("--threads", type=int, default=_available_cores(),
                        help="worker processes for map and sweep commands")
    common.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt",
                        help="table format")

    parser = argparse.ArgumentParser(prog="macrodimer", description=__doc__.splitlines()[0])
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the default YAML config and exit")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    helps = {
        "scales": "characteristic lengths, energies and density bounds",
        "potential": "Born-Oppenheimer curves and the bound well",
        "chi-map": "probe susceptibility around a molecule",
        "pop-map": "g' population after the exposure around a molecule",
        "drag": "dragged-molecule trajectory",
        "sweep": "rupture sweep over the force slope",
        "image": "before/after fluorescence frames",
        "classify": "frames plus spot classification",
        "units": "convert a value between supported units",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "units":
            p.add_argument("value", type=float)
            p.add_argument("src")
            p.add_argument("dst")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        sys.stdout.write(dump_defaults())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.seed < 0 or args.seed >= 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    out = args.out or Path(os.environ.get(OUT_ENV, "out")) / args.command
    try:
        rc = RunConfig.load(args.config)
        manifest = RunManifest(args.command, rc.hash, [args.seed])
        writer = Writer(out, args.fmt, manifest)
        t0 = time.perf_counter()
        HANDLERS[args.command](args, rc, writer)
        writer.finish()
        print(f"wrote {len(manifest.files) + 1} files to {out} "
              f"({time.perf_counter() - t0:.1f} s)", file=sys.stderr)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularGeometryError, GridTooCoarseError, ContinuationLostError, IntegratorError,
            ValueError) as exc:
        print(f"error[physics]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
