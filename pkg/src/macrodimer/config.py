"""YAML run configuration shared by every CLI subcommand.

Frequencies in the file are ordinary frequencies (MHz, GHz); the 2*pi is
applied here when building the internal PhysicalConfig.  Every section is
optional and unknown keys are rejected by name.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import units
from .angular import ReducedDipole
from .dynamics import DragConfig
from .imaging import Impurity, Scene
from .model import PhysicalConfig


class ConfigError(ValueError):
    """Bad or unknown configuration key."""


DEFAULTS: dict = {
    "physics": {
        "n": 40,
        "mass_amu": 84.911789738,
        "delta_mhz": -1000.0,
        "omega0_mhz": 61000.0,
        "r0_um": 1.0,  # null derives r0 from the n^2 a0 dipole element
        "gamma_p_mhz": 6.0,
        "gamma_c_mhz": 0.025,
        "omega_p_mhz": 1.0,
        "omega_c_mhz": 10.0,
        "delta_p_mhz": 0.0,
        "delta_c_mhz": 0.0,
        "c6_ghz_um6": 1.0,
    },
    "potential": {"r_min_r0": 0.8, "r_max_r0": 10.0, "step_um": 0.01},
    "eit": {"z_max_um": 8.0, "rho_max_um": 8.0, "n_z": 60, "n_rho": 60, "exposure_us": 2.0},
    "drag": {"alpha_hghz_per_um": 0.08, "direction": [0.0, 0.0, 1.0], "t_final_us": 10.0,
             "dt_us": None},
    "sweep": {"alpha_min": 0.02, "alpha_max": 0.2, "alpha_step": 0.01, "t_final_us": 10.0,
              "series_points": 201},
    "scene": {
        "region_um": [0.0, 30.0, 0.0, 30.0],
        "rho_2d": 1.0,
        "impurities": [{"kind": "molecule", "position_um": [15.0, 15.0], "angle_deg": 0.0}],
        "random": None,  # {n_impurities, min_separation_um} replaces the explicit list
    },
    "imaging": {"pixel_size_um": 0.5, "exposure_us": 2.0, "linking_radius_um": 3.0,
                "min_cluster_size": 3},
}

_RANDOM_KEYS = {"n_impurities", "min_separation_um", "margin_um"}
_IMPURITY_KEYS = {"kind", "position_um", "angle_deg"}


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def _check_impurities(items) -> None:
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ConfigError(f"scene.impurities[{i}] must be a mapping")
        extra = set(item) - _IMPURITY_KEYS
        if extra:
            raise ConfigError(f"unknown config key 'scene.impurities[{i}].{sorted(extra)[0]}'")
        for key in ("kind", "position_um"):
            if key not in item:
                raise ConfigError(f"missing config key 'scene.impurities[{i}].{key}'")


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        data = _merge(DEFAULTS, raw, "")
        _check_impurities(data["scene"]["impurities"])
        rnd = data["scene"]["random"]
        if rnd is not None:
            extra = set(rnd) - _RANDOM_KEYS
            if extra:
                raise ConfigError(f"unknown config key 'scene.random.{sorted(extra)[0]}'")
            if "n_impurities" not in rnd:
                raise ConfigError("missing config key 'scene.random.n_impurities'")
        return cls(data)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls.from_dict({})
        with open(path, encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        return cls.from_dict(raw)

    def section(self, name: str) -> dict:
        return self.data[name]

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # -- builders ---------------------------------------------------------

    def physical(self) -> PhysicalConfig:
        p = self.data["physics"]
        try:
            return PhysicalConfig(
                n=int(p["n"]),
                mass=float(p["mass_amu"]) * units.AMU,
                delta=units.mhz(p["delta_mhz"]),
                omega0=units.mhz(p["omega0_mhz"]),
                reduced_dipole=ReducedDipole.from_n(int(p["n"])),
                r0_calibrated=None if p["r0_um"] is None else float(p["r0_um"]),
                gamma_p=units.mhz(p["gamma_p_mhz"]),
                gamma_c=units.mhz(p["gamma_c_mhz"]),
                omega_p=units.mhz(p["omega_p_mhz"]),
                omega_c=units.mhz(p["omega_c_mhz"]),
                delta_p=units.mhz(p["delta_p_mhz"]),
                delta_c=units.mhz(p["delta_c_mhz"]),
                c6=units.ghz(p["c6_ghz_um6"]),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad physics section: {exc}") from exc

    def r_grid(self, config: PhysicalConfig) -> np.ndarray:
        s = self.data["potential"]
        lo, hi = s["r_min_r0"] * config.r0, s["r_max_r0"] * config.r0
        n = int(round((hi - lo) / s["step_um"])) + 1
        return np.linspace(lo, hi, n)

    def eit_grid(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.data["eit"]
        return (np.linspace(-s["z_max_um"], s["z_max_um"], int(s["n_z"])),
                np.linspace(0.0, s["rho_max_um"], int(s["n_rho"])))

    def drag(self) -> DragConfig:
        s = self.data["drag"]
        return DragConfig(alpha=units.hghz_per_um(s["alpha_hghz_per_um"]),
                          direction=tuple(float(x) for x in s["direction"]),
                          t_final=float(s["t_final_us"]),
                          dt=None if s["dt_us"] is None else float(s["dt_us"]))

    def sweep_alphas(self) -> np.ndarray:
        """Alpha grid in h*GHz/um, endpoints included."""
        s = self.data["sweep"]
        n = int(math.floor((s["alpha_max"] - s["alpha_min"]) / s["alpha_step"] + 1e-9)) + 1
        return np.round(s["alpha_min"] + s["alpha_step"] * np.arange(n), 12)

    def scene(self, seed: int, config: PhysicalConfig | None = None) -> Scene:
        s = self.data["scene"]
        region = tuple(float(x) for x in s["region_um"])
        if s["random"] is not None:
            from .imaging import random_scene

            rnd = s["random"]
            return random_scene(config or self.physical(), self.drag(), int(rnd["n_impurities"]),
                                region=region,
                                min_separation=float(rnd.get("min_separation_um", 12.0)),
                                rho_2d=float(s["rho_2d"]), seed=seed,
                                margin=float(rnd.get("margin_um", 0.0)))
        imps = tuple(Impurity(i["kind"], tuple(i["position_um"]),
                              math.radians(float(i.get("angle_deg", 0.0))))
                     for i in s["impurities"])
        return Scene(imps, region, float(s["rho_2d"]), seed)


def dump_defaults() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=False)
