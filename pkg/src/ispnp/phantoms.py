"""Procedural imaging phantoms.

Each phantom is a list of rotated-ellipse regions painted onto the grid
in order, later regions overwriting earlier ones, with cell-center
membership deciding which pixels a region owns. Three families cover
the shapes the experiments need: a single homogeneous cylinder, loose
multi-object clutter, and a layered head (concentric tissue shells plus
stroke-like inclusions). Seeded random generators produce unlimited
spec variations for dataset synthesis.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .scene import GridSpec, PropertyMaps

__all__ = [
    "PHANTOM_KINDS",
    "Ellipse",
    "PhantomSpec",
    "cylinder_phantom",
    "disk",
    "layered_head_phantom",
    "make_phantom",
    "multi_object_phantom",
    "random_phantom",
]

PHANTOM_KINDS = ("homogeneous-cylinder", "multi-object", "layered-head")


@dataclasses.dataclass(frozen=True)
class Ellipse:
    """One painted region: a rotated ellipse with uniform properties.

    ``center`` and ``semi_axes`` are in meters, ``angle`` in radians
    counterclockwise from the x axis.
    """

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    angle: float = 0.0
    eps_r: float = 1.0
    sigma_e: float = 0.0

    def __post_init__(self) -> None:
        a, b = self.semi_axes
        if not (a > 0 and b > 0):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")
        if not (self.eps_r > 0):
            raise ValueError(f"eps_r must be positive, got {self.eps_r}")
        if self.sigma_e < 0:
            raise ValueError(f"sigma_e must be non-negative, got {self.sigma_e}")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Membership mask for point arrays (cell centers)."""
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        a, b = self.semi_axes
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    @property
    def bounding_radius(self) -> float:
        return float(max(self.semi_axes))

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
            "angle": self.angle,
            "eps_r": self.eps_r,
            "sigma_e": self.sigma_e,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipse":
        return cls(
            center=tuple(d["center"]),
            semi_axes=tuple(d["semi_axes"]),
            angle=float(d.get("angle", 0.0)),
            eps_r=float(d.get("eps_r", 1.0)),
            sigma_e=float(d.get("sigma_e", 0.0)),
        )


def disk(
    center: tuple[float, float], radius: float, eps_r: float, sigma_e: float = 0.0
) -> Ellipse:
    """Circular region shorthand."""
    return Ellipse(center=center, semi_axes=(radius, radius),
                   eps_r=eps_r, sigma_e=sigma_e)


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one phantom: region list plus background properties.

    ``seed`` records which draw of a randomized family produced the spec;
    it is bookkeeping only and does not affect rasterization.
    """

    kind: str
    regions: tuple[Ellipse, ...]
    background: tuple[float, float] = (1.0, 0.0)
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(
                f"kind must be one of {PHANTOM_KINDS}, got {self.kind!r}"
            )
        eps_b, sig_b = self.background
        if not (eps_b > 0) or sig_b < 0:
            raise ValueError(
                f"background properties must be physical, got {self.background}"
            )
        object.__setattr__(self, "regions", tuple(self.regions))

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "background": list(self.background),
                "seed": self.seed,
                "regions": [r.to_dict() for r in self.regions],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        d = json.loads(text)
        return cls(
            kind=d["kind"],
            regions=tuple(Ellipse.from_dict(r) for r in d["regions"]),
            background=tuple(d.get("background", (1.0, 0.0))),
            seed=d.get("seed"),
        )


def make_phantom(spec: PhantomSpec, grid: GridSpec) -> PropertyMaps:
    """Rasterize a spec onto the grid by cell-center membership.

    Regions paint in list order, so later entries overwrite earlier
    ones. A region whose bounding box leaves the grid is an error.
    """
    x0, y0 = grid.corner
    w, h = grid.extent
    for i, region in enumerate(spec.regions):
        r = region.bounding_radius
        cx, cy = region.center
        if (cx - r < x0 or cx + r > x0 + w or cy - r < y0 or cy + r > y0 + h):
            raise ValueError(
                f"region {i} (center {region.center}, radius {r:.4g}) lies "
                f"outside the grid"
            )
    xc, yc = grid.cell_centers()
    eps = np.full((grid.ny, grid.nx), spec.background[0], dtype=float)
    sig = np.full((grid.ny, grid.nx), spec.background[1], dtype=float)
    for region in spec.regions:
        mask = region.contains(xc, yc)
        eps[mask] = region.eps_r
        sig[mask] = region.sigma_e
    return PropertyMaps(eps, sig)


def cylinder_phantom(
    radius: float,
    eps_r: float,
    sigma_e: float = 0.0,
    center: tuple[float, float] = (0.0, 0.0),
    background: tuple[float, float] = (1.0, 0.0),
) -> PhantomSpec:
    """Single homogeneous cylinder."""
    return PhantomSpec(
        kind="homogeneous-cylinder",
        regions=(disk(center, radius, eps_r, sigma_e),),
        background=background,
    )


def multi_object_phantom(
    regions, background: tuple[float, float] = (1.0, 0.0)
) -> PhantomSpec:
    """Free-form scatter of ellipse regions."""
    return PhantomSpec(
        kind="multi-object", regions=tuple(regions), background=background
    )


def layered_head_phantom(
    center: tuple[float, float],
    outer_radius: float,
    layers,
    core: tuple[float, float],
    inclusions=(),
    background: tuple[float, float] = (1.0, 0.0),
) -> PhantomSpec:
    """Concentric tissue shells with optional stroke-like inclusions.

    ``layers`` is a sequence of (thickness, eps_r, sigma_e) from the
    outermost shell (the skull stand-in) inward; whatever radius remains
    becomes the core disk with the ``core`` properties. Inclusions paint
    last, on top of everything.
    """
    regions = []
    r = float(outer_radius)
    for thickness, eps_r, sigma_e in layers:
        if thickness <= 0:
            raise ValueError(f"layer thickness must be positive, got {thickness}")
        regions.append(disk(center, r, eps_r, sigma_e))
        r -= thickness
        if r <= 0:
            raise ValueError("layer thicknesses exceed the outer radius")
    regions.append(disk(center, r, core[0], core[1]))
    regions.extend(inclusions)
    return PhantomSpec(
        kind="layered-head", regions=tuple(regions), background=background
    )


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(lo + (hi - lo) * rng.random())


def random_phantom(
    kind: str,
    grid: GridSpec,
    seed: int,
    *,
    eps_range: tuple[float, float] = (1.2, 2.2),
    sigma_range: tuple[float, float] = (0.0, 0.0),
) -> PhantomSpec:
    """Seed-deterministic random member of one phantom family.

    Geometry scales with the grid extent so the same seed yields the
    same phantom in grid units at any resolution. Property values draw
    from ``eps_range`` and ``sigma_range``; the defaults stay modest so
    the forward solves on desk-scale grids remain well-conditioned.
    """
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"kind must be one of {PHANTOM_KINDS}, got {kind!r}")
    rng = np.random.default_rng(seed)
    w, h = grid.extent
    scale = min(w, h)

    def props(r):
        return (
            _uniform(r, *eps_range),
            _uniform(r, *sigma_range) if sigma_range[1] > 0 else sigma_range[0],
        )

    if kind == "homogeneous-cylinder":
        radius = _uniform(rng, 0.12, 0.22) * scale
        cx = _uniform(rng, -0.15, 0.15) * scale
        cy = _uniform(rng, -0.15, 0.15) * scale
        eps_r, sigma_e = props(rng)
        return dataclasses.replace(
            cylinder_phantom(radius, eps_r, sigma_e, center=(cx, cy)), seed=seed
        )

    if kind == "multi-object":
        count = int(rng.integers(2, 5))
        regions = []
        for _ in range(count):
            a = _uniform(rng, 0.06, 0.14) * scale
            b = _uniform(rng, 0.06, 0.14) * scale
            reach = max(a, b)
            lim_x = 0.5 * w - reach
            lim_y = 0.5 * h - reach
            cx = _uniform(rng, -0.3, 0.3) * scale
            cy = _uniform(rng, -0.3, 0.3) * scale
            cx = float(np.clip(cx, -lim_x, lim_x))
            cy = float(np.clip(cy, -lim_y, lim_y))
            angle = _uniform(rng, 0.0, math.pi)
            eps_r, sigma_e = props(rng)
            regions.append(
                Ellipse((cx, cy), (a, b), angle, eps_r, sigma_e)
            )
        return dataclasses.replace(
            multi_object_phantom(regions), seed=seed
        )

    # layered-head: shells ordered skull, gray matter, white core, with
    # eps sorted so the skull is the least polarizable tissue.
    outer = _uniform(rng, 0.30, 0.40) * scale
    cx = _uniform(rng, -0.04, 0.04) * scale
    cy = _uniform(rng, -0.04, 0.04) * scale
    skull_t = _uniform(rng, 0.10, 0.16) * outer
    gray_t = _uniform(rng, 0.16, 0.26) * outer
    lo, hi = eps_range
    e_skull, e_white, e_gray = np.sort(lo + (hi - lo) * rng.random(3))
    if sigma_range[1] > 0:
        s_skull, s_white, s_gray = np.sort(
            sigma_range[0] + (sigma_range[1] - sigma_range[0]) * rng.random(3)
        )
    else:
        s_skull = s_white = s_gray = sigma_range[0]
    core_r = outer - skull_t - gray_t
    inclusions = []
    n_strokes = int(rng.integers(0, 3))
    for _ in range(n_strokes):
        a = _uniform(rng, 0.10, 0.22) * core_r
        b = _uniform(rng, 0.10, 0.22) * core_r
        reach = max(a, b)
        r_pos = _uniform(rng, 0.0, 1.0) * max(core_r - reach, 0.0)
        theta = _uniform(rng, 0.0, 2.0 * math.pi)
        angle = _uniform(rng, 0.0, math.pi)
        stroke_eps = hi + 0.15 * (hi - lo)
        stroke_sig = s_gray * 1.5 if sigma_range[1] > 0 else sigma_range[0]
        inclusions.append(
            Ellipse(
                (cx + r_pos * math.cos(theta), cy + r_pos * math.sin(theta)),
                (a, b), angle, stroke_eps, stroke_sig,
            )
        )
    return dataclasses.replace(
        layered_head_phantom(
            (cx, cy), outer,
            [(skull_t, float(e_skull), float(s_skull)),
             (gray_t, float(e_gray), float(s_gray))],
            (float(e_white), float(s_white)),
            inclusions,
        ),
        seed=seed,
    )
