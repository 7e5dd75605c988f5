"""Monte Carlo fluorescence frames and two-shot spot classification.

Image coordinates are (u, v) in um.  The horizontal axis u is the global
quantization / drag axis (z in the atomic model); the plane contains it.
Probe atoms are a homogeneous Poisson process; each turns into a g' atom
with the probability read from a precomputed response table of the nearby
impurity.  Frames are reproducible bit for bit from (scene, seed, config).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from . import eit
from .dynamics import DragConfig, expected_com_displacement
from .model import PhysicalConfig
from .potential import reference_well

__all__ = [
    "Impurity",
    "Scene",
    "ImageFrame",
    "ClassifiedSpots",
    "ResponseTable",
    "response_table",
    "sample_probe_atoms",
    "render_frame",
    "advance_scene",
    "two_shot",
    "validate_density",
    "classify_spots",
    "find_clusters",
    "KINDS",
    "random_scene",
    "score_classification",
    "molecule_displacement",
]

KINDS = ("molecule", "ns_atom", "np_atom")
EXCLUSION_RADIUS = 0.1


@dataclass(frozen=True)
class Impurity:
    kind: str
    position: tuple[float, float]
    angle: float = 0.0  # molecule axis, radians from +u

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"impurity kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))


@dataclass(frozen=True)
class Scene:
    impurities: tuple[Impurity, ...]
    region: tuple[float, float, float, float]  # u_min, u_max, v_min, v_max
    rho_2d: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rho_2d <= 0:
            raise ValueError("rho_2d must be positive")
        u0, u1, v0, v1 = self.region
        if not (u1 > u0 and v1 > v0):
            raise ValueError("region must have positive extent")
        object.__setattr__(self, "impurities", tuple(self.impurities))
        for imp in self.impurities:
            u, v = imp.position
            if not (u0 <= u <= u1 and v0 <= v <= v1):
                raise ValueError(f"impurity at {imp.position} lies outside the region")

    @property
    def area(self) -> float:
        u0, u1, v0, v1 = self.region
        return (u1 - u0) * (v1 - v0)


@dataclass
class ImageFrame:
    pixel_size: float
    counts: np.ndarray  # (n_v, n_u) int
    gprime_atoms: np.ndarray  # (m, 2)
    region: tuple[float, float, float, float]
    n_probe: int
    n_excluded: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassifiedSpots:
    clusters: list[dict]

    def labels(self) -> list[str]:
        return [c["label"] for c in self.clusters]


# ---------------------------------------------------------------------------
# response tables
# ---------------------------------------------------------------------------

@dataclass
class ResponseTable:
    kind: str
    z_grid: np.ndarray
    rho_grid: np.ndarray
    values: np.ndarray
    far_value: float

    def __post_init__(self):
        self._interp = RegularGridInterpolator(
            (self.z_grid, self.rho_grid), self.values, method="linear",
            bounds_error=False, fill_value=None)

    def __call__(self, z, rho) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        rho = np.asarray(rho, dtype=float)
        inside = ((z >= self.z_grid[0]) & (z <= self.z_grid[-1]) & (rho <= self.rho_grid[-1]))
        out = np.full(np.broadcast(z, rho).shape, self.far_value)
        if np.any(inside):
            out[inside] = self._interp(np.column_stack([z[inside], rho[inside]]))
        return np.clip(out, 0.0, 1.0)


def _table_grids(extent: float, step: float):
    n = int(round(extent / step))
    z = np.linspace(-n * step, n * step, 2 * n + 1)
    rho = np.linspace(0.0, n * step, n + 1)
    return z, rho


# (extent, step) in um; the resonant nP impurity reaches much further than the others
TABLE_GRIDS = {"molecule": (8.0, 0.25), "np_atom": (14.0, 0.5), "ns_atom": (6.0, 0.1)}


def response_table(config: PhysicalConfig, kind: str, exposure: float = 2.0,
                   extent: float | None = None, step: float | None = None) -> ResponseTable:
    """g' probability on a (z, rho) grid around one impurity of ``kind``."""
    if kind not in TABLE_GRIDS:
        raise ValueError(f"unknown impurity kind {kind!r}")
    extent = TABLE_GRIDS[kind][0] if extent is None else extent
    step = TABLE_GRIDS[kind][1] if step is None else step
    # normalised key so keyword and positional calls share the cache
    return _response_table(config, kind, float(exposure), float(extent), float(step))


@lru_cache(maxsize=32)
def _response_table(config, kind, exposure, extent, step) -> ResponseTable:
    z, rho = _table_grids(extent, step)
    far = eit.probe_master_equation(config, eit.far_spectrum(config), exposure)["pop_gprime"]
    if kind == "molecule":
        vals = eit.population_map(config, z, rho, exposure).p_gprime
    elif kind in ("ns_atom", "np_atom"):
        vals = np.empty((z.size, rho.size))
        for i, zz in enumerate(z):
            for j, rr in enumerate(rho):
                if zz == 0 and rr == 0:
                    vals[i, j] = np.nan
                    continue
                sp = eit.impurity_spectrum(config, kind, (rr, 0.0, zz))
                vals[i, j] = eit.probe_master_equation(config, sp, exposure)["pop_gprime"]
        # the impurity site itself is excluded anyway; fill for interpolation
        vals[np.isnan(vals)] = np.nanmax(vals)
    return ResponseTable(kind, z, rho, vals, far)


# ---------------------------------------------------------------------------
# sampling and rendering
# ---------------------------------------------------------------------------

def sample_probe_atoms(region, rho_2d: float, seed) -> np.ndarray:
    """Homogeneous Poisson point process of density ``rho_2d`` (um^-2)."""
    if rho_2d <= 0:
        raise ValueError("rho_2d must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return _sample(rng, region, rho_2d)


def _sample(rng, region, rho_2d):
    u0, u1, v0, v1 = region
    n = rng.poisson(rho_2d * (u1 - u0) * (v1 - v0))
    pts = rng.random((n, 2))
    return np.column_stack([u0 + pts[:, 0] * (u1 - u0), v0 + pts[:, 1] * (v1 - v0)])


def _impurity_sites(config: PhysicalConfig, imp: Impurity) -> np.ndarray:
    c = np.array(imp.position)
    if imp.kind != "molecule":
        return c[None, :]
    well, _ = reference_well(config)
    a = np.array([math.cos(imp.angle), math.sin(imp.angle)])
    return np.array([c - a * well.r_p / 2, c + a * well.r_p / 2])


def _frame_coords(imp: Impurity, pts: np.ndarray):
    rel = pts - np.array(imp.position)
    a = np.array([math.cos(imp.angle), math.sin(imp.angle)]) if imp.kind == "molecule" else np.array([1.0, 0.0])
    z = rel @ a
    rho = np.abs(rel @ np.array([-a[1], a[0]]))
    return z, rho


def render_frame(config: PhysicalConfig, scene: Scene, exposure: float = 2.0,
                 pixel_size: float = 0.5, seed=None) -> ImageFrame:
    """Sample probe atoms, draw g' conversions, and bin them into pixels."""
    seed = scene.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pts = _sample(rng, scene.region, scene.rho_2d)
    draws = rng.random(pts.shape[0])

    far = eit.probe_master_equation(config, eit.far_spectrum(config), exposure)["pop_gprime"]
    keep_bg = np.full(pts.shape[0], 1.0 - far)
    survive = np.ones(pts.shape[0])
    excluded = np.zeros(pts.shape[0], dtype=bool)
    for imp in scene.impurities:
        table = response_table(config, imp.kind, exposure)
        z, rho = _frame_coords(imp, pts)
        p = table(z, rho)
        survive *= (1.0 - p) / keep_bg
        sites = _impurity_sites(config, imp)
        d = np.min(np.linalg.norm(pts[:, None, :] - sites[None, :, :], axis=2), axis=1)
        excluded |= d < EXCLUSION_RADIUS
    prob = 1.0 - keep_bg * np.clip(survive, 0.0, None)
    prob[excluded] = 0.0
    if excluded.any():
        warnings.warn(f"{int(excluded.sum())} probe atom(s) within {EXCLUSION_RADIUS} um of an "
                      "impurity were excluded", RuntimeWarning, stacklevel=2)
    hit = draws < prob
    atoms = pts[hit]

    u0, u1, v0, v1 = scene.region
    nu = int(math.ceil((u1 - u0) / pixel_size - 1e-9))
    nv = int(math.ceil((v1 - v0) / pixel_size - 1e-9))
    counts, _, _ = np.histogram2d(atoms[:, 1], atoms[:, 0],
                                  bins=[nv, nu],
                                  range=[[v0, v0 + nv * pixel_size], [u0, u0 + nu * pixel_size]])
    return ImageFrame(
        pixel_size=pixel_size,
        counts=counts.astype(np.int64),
        gprime_atoms=atoms,
        region=tuple(scene.region),
        n_probe=int(pts.shape[0]),
        n_excluded=int(excluded.sum()),
        meta={"seed": _seed_repr(seed), "exposure_us": exposure},
    )


def _seed_repr(seed):
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return int(seed)


def _drag_axis(drag: DragConfig) -> np.ndarray:
    # image u is the model z axis, image v the model x axis
    d = drag.unit_direction
    a = np.array([d[2], d[0]])
    norm = np.linalg.norm(a)
    if norm == 0:
        raise ValueError("drag direction has no component in the image plane")
    return a / norm


def molecule_displacement(config: PhysicalConfig, drag: DragConfig) -> float:
    """Centre-of-mass travel of a bound molecule over the drag (um)."""
    return float(expected_com_displacement(config, drag.alpha, drag.t_final))


def advance_scene(config: PhysicalConfig, scene: Scene, drag: DragConfig) -> Scene:
    """Move impurities by the drag: molecule d, free nS atom 2d, nP atom 0 (towards -axis)."""
    d = molecule_displacement(config, drag)
    axis = _drag_axis(drag)
    factor = {"molecule": 1.0, "ns_atom": 2.0, "np_atom": 0.0}
    moved = [replace(imp, position=tuple(np.array(imp.position) - factor[imp.kind] * d * axis))
             for imp in scene.impurities]
    u0, u1, v0, v1 = scene.region
    inside = [imp for imp in moved
              if u0 <= imp.position[0] <= u1 and v0 <= imp.position[1] <= v1]
    if len(inside) != len(moved):
        warnings.warn("some impurities left the imaged region during the drag", RuntimeWarning,
                      stacklevel=2)
    return Scene(tuple(inside), scene.region, scene.rho_2d, scene.seed)


def two_shot(config: PhysicalConfig, scene: Scene, drag: DragConfig, exposure: float = 2.0,
             pixel_size: float = 0.5, **kw):
    """Frames before and after the drag; the second uses a fresh probe ensemble."""
    before = render_frame(config, scene, exposure, pixel_size, seed=[scene.seed, 0], **kw)
    after_scene = advance_scene(config, scene, drag)
    after = render_frame(config, after_scene, exposure, pixel_size, seed=[scene.seed, 1], **kw)
    after.meta["probe_ensemble"] = "resampled"
    return before, after, after_scene


# ---------------------------------------------------------------------------
# density checks
# ---------------------------------------------------------------------------

def validate_density(config: PhysicalConfig, rho_2d: float, r_c: float = 3.0,
                     rc_prime: float | None = None) -> dict:
    """Probe-probe blockade radius and the two density conditions.

    ``rc_prime`` overrides the computed (2 C6 G_p / W_c^2)^(1/6).
    """
    c = config
    rcp_computed = (2 * c.c6 * c.gamma_p / c.omega_c**2) ** (1 / 6)
    rcp = rcp_computed if rc_prime is None else rc_prime
    ratio = (c.omega_c / c.omega_p) ** 2
    bound = ratio / (math.pi * rcp**2)
    dilute = rho_2d * r_c**2 / ratio
    return {
        "rc_prime": rcp_computed,
        "rc_prime_used": rcp,
        "snr_bound": bound,
        "snr_ok": rho_2d <= bound,
        "dilute_factor": dilute,
        "dilute_ok": dilute < 0.1,
    }


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def find_clusters(points: np.ndarray, linking_radius: float, min_size: int = 3) -> list[np.ndarray]:
    """Single-linkage clusters (as index arrays) with at least ``min_size`` members."""
    n = len(points)
    if n == 0:
        return []
    pairs = cKDTree(points).query_pairs(linking_radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, lab = connected_components(graph, directed=False)
    groups = [np.nonzero(lab == k)[0] for k in np.unique(lab)]
    groups = [g for g in groups if g.size >= min_size]
    groups.sort(key=lambda g: tuple(points[g].mean(axis=0)))
    return groups


def _label(along: float, d: float) -> str | None:
    if abs(along) < d / 2:
        return "np_atom"
    if abs(along - d) < d / 4:
        return "molecule"
    if abs(along - 2 * d) < d / 2:
        return "ns_atom"
    return None


def classify_spots(frame_before: ImageFrame, frame_after: ImageFrame, drag: DragConfig,
                   config: PhysicalConfig, linking_radius: float = 3.0,
                   min_cluster_size: int = 3, displacement: float | None = None) -> ClassifiedSpots:
    """Match before/after spots along the drag axis and label them by travel distance.

    Expected travel: nP atoms 0, molecules d, free nS atoms 2d, with
    d = (alpha / 2m) t^2 / 2.  Spots closer than 2 * linking_radius to another
    spot in the same frame are reported as unresolved rather than guessed.
    """
    if frame_before.pixel_size != frame_after.pixel_size or frame_before.region != frame_after.region:
        raise ValueError("frames must share region and pixel size")
    d = molecule_displacement(config, drag) if displacement is None else displacement
    if d <= 0:
        raise ValueError("classification needs a positive drag displacement")
    axis = _drag_axis(drag)

    def spots(frame):
        groups = find_clusters(frame.gprime_atoms, linking_radius, min_cluster_size)
        cents = np.array([frame.gprime_atoms[g].mean(axis=0) for g in groups]).reshape(-1, 2)
        crowded = np.zeros(len(cents), dtype=bool)
        if len(cents) > 1:
            dist = np.linalg.norm(cents[:, None] - cents[None, :], axis=2)
            np.fill_diagonal(dist, np.inf)
            crowded = dist.min(axis=1) < 2 * linking_radius
        return cents, [g.size for g in groups], crowded

    cb, nb, crowd_b = spots(frame_before)
    ca, na, crowd_a = spots(frame_after)
    expected = {"np_atom": 0.0, "molecule": d, "ns_atom": 2 * d}
    tol = {"np_atom": d / 2, "molecule": d / 4, "ns_atom": d / 2}
    candidates = []
    for i, b in enumerate(cb):
        if crowd_b[i]:
            continue
        for j, a in enumerate(ca):
            if crowd_a[j]:
                continue
            delta = a - b
            along = -float(delta @ axis)
            perp = float(np.linalg.norm(delta + along * axis))
            if perp >= linking_radius:
                continue
            lab = _label(along, d)
            if lab is None:
                continue
            candidates.append((abs(along - expected[lab]) / tol[lab], i, j, lab, along))
    candidates.sort()
    used_b, used_a, clusters = set(), set(), []
    for score, i, j, lab, along in candidates:
        if i in used_b or j in used_a:
            continue
        used_b.add(i)
        used_a.add(j)
        clusters.append({"centroid_before": cb[i].tolist(), "centroid_after": ca[j].tolist(),
                         "label": lab, "displacement": along,
                         "size_before": nb[i], "size_after": na[j]})
    for i in range(len(cb)):
        if i not in used_b:
            clusters.append({"centroid_before": cb[i].tolist(), "centroid_after": None,
                             "label": "unresolved", "displacement": None,
                             "size_before": nb[i], "size_after": None})
    for j in range(len(ca)):
        if j not in used_a:
            clusters.append({"centroid_before": None, "centroid_after": ca[j].tolist(),
                             "label": "unresolved", "displacement": None,
                             "size_before": None, "size_after": na[j]})
    return ClassifiedSpots(clusters)


def random_scene(config: PhysicalConfig, drag: DragConfig, n_impurities: int,
                 region=(0.0, 80.0, 0.0, 60.0), min_separation: float = 12.0,
                 rho_2d: float = 1.0, seed: int = 0, margin: float = 0.0,
                 max_tries: int = 10_000) -> Scene:
    """Random impurities whose positions before and after the drag stay ``min_separation`` apart.

    Kinds are drawn uniformly; molecules are aligned with the drag axis.  Both
    positions keep ``margin`` from the region edge so spots are not truncated.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    d = molecule_displacement(config, drag)
    axis = _drag_axis(drag)
    angle = math.atan2(axis[1], axis[0])
    factor = {"molecule": 1.0, "ns_atom": 2.0, "np_atom": 0.0}
    u0, u1, v0, v1 = region[0] + margin, region[1] - margin, region[2] + margin, region[3] - margin
    if not (u1 > u0 and v1 > v0):
        raise ValueError("margin leaves no room in the region")
    if n_impurities < 0:
        raise ValueError("n_impurities must be non-negative")
    if n_impurities == 0:
        return Scene((), tuple(region), rho_2d, seed)
    placed: list[Impurity] = []
    points: list[np.ndarray] = []
    for _ in range(max_tries):
        kind = KINDS[rng.integers(len(KINDS))]
        pos = np.array([rng.uniform(u0, u1), rng.uniform(v0, v1)])
        after = pos - factor[kind] * d * axis
        if not (u0 <= after[0] <= u1 and v0 <= after[1] <= v1):
            continue
        new = [pos, after]
        if all(np.linalg.norm(p - q) > min_separation for p in new for q in points):
            placed.append(Impurity(kind, tuple(pos), angle if kind == "molecule" else 0.0))
            points.extend(new)
        if len(placed) == n_impurities:
            break
    else:
        raise ValueError(f"could not place {n_impurities} impurities with separation "
                         f"{min_separation} um in {region}")
    return Scene(tuple(placed), tuple(region), rho_2d, seed)


def score_classification(scene: Scene, spots: ClassifiedSpots, linking_radius: float = 3.0):
    """Per-impurity (true kind, assigned label) pairs, matched by before-centroid proximity."""
    out = []
    for imp in scene.impurities:
        best, label = np.inf, "missing"
        for c in spots.clusters:
            if c["centroid_before"] is None:
                continue
            dist = float(np.linalg.norm(np.array(c["centroid_before"]) - imp.position))
            if dist < best:
                best, label = dist, c["label"]
        out.append((imp.kind, label if best < linking_radius else "missing"))
    return out
