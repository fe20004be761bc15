"""Primitive stand-ins for the tabletop objects and their distance queries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose

MIN_SURFACE_SAMPLES = 64


@dataclass(frozen=True)
class ObjectModel:
    name: str
    shape: str  # "box" | "cylinder"
    dims: tuple[float, ...]  # box: (ex, ey, ez) full extents; cylinder: (radius, height)
    mass: float = 1.0  # reserved, unused in quasi-static mode
    surface_samples: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.shape == "box":
            if len(self.dims) != 3:
                raise ValueError("box needs 3 extents")
        elif self.shape == "cylinder":
            if len(self.dims) != 2:
                raise ValueError("cylinder needs (radius, height)")
        else:
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.dims) <= 0:
            raise ValueError("object dimensions must be positive")
        if self.surface_samples is None:
            object.__setattr__(self, "surface_samples", _surface_samples(self.shape, self.dims))
        if len(self.surface_samples) < MIN_SURFACE_SAMPLES:
            raise ValueError("too few surface samples")

    @property
    def height(self) -> float:
        return self.dims[2] if self.shape == "box" else self.dims[1]

    @property
    def rest_z(self) -> float:
        """Centroid height when resting upright on the table."""
        return 0.5 * self.height

    def horizontal_half_extents(self) -> tuple[float, float]:
        if self.shape == "box":
            return 0.5 * self.dims[0], 0.5 * self.dims[1]
        return self.dims[0], self.dims[0]

    def signed_distance_local(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance and outward normal for points (N, 3) in the object frame."""
        p = np.atleast_2d(p)
        if self.shape == "box":
            return _box_sdf(p, 0.5 * np.asarray(self.dims))
        return _cylinder_sdf(p, self.dims[0], 0.5 * self.dims[1])

    def signed_distance(self, pose: Pose, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rot = pose.rotation
        local = (np.atleast_2d(points) - pose.position) @ rot
        d, n = self.signed_distance_local(local)
        return d, n @ rot.T

    def distance_only(self, pose: Pose, points: np.ndarray) -> np.ndarray:
        """Signed distance without normals (hot path of contact search)."""
        p = (np.atleast_2d(points) - pose.position) @ pose.rotation
        if self.shape == "box":
            q = np.abs(p) - 0.5 * np.asarray(self.dims)
        else:
            q = np.stack([np.hypot(p[:, 0], p[:, 1]) - self.dims[0],
                          np.abs(p[:, 2]) - 0.5 * self.dims[1]], axis=1)
        return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)


def _box_sdf(p: np.ndarray, h: np.ndarray):
    q = np.abs(p) - h
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    d = outside + inside
    closest = np.clip(p, -h, h)
    diff = p - closest
    n = np.zeros_like(p)
    out = outside > 0.0
    n[out] = diff[out] / outside[out, None]
    k = np.argmax(q[~out], axis=1)
    rows = np.nonzero(~out)[0]
    n[rows, k] = np.where(p[rows, k] >= 0.0, 1.0, -1.0)
    return d, n


def _cylinder_sdf(p: np.ndarray, r: float, hh: float):
    rho = np.linalg.norm(p[:, :2], axis=1)
    q = np.stack([rho - r, np.abs(p[:, 2]) - hh], axis=1)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    d = outside + inside
    safe = np.where(rho > 0.0, rho, 1.0)
    radial = np.where(rho[:, None] > 0.0, p[:, :2] / safe[:, None], np.array([1.0, 0.0]))
    closest = np.empty_like(p)
    closest[:, :2] = radial * np.minimum(rho, r)[:, None]
    closest[:, 2] = np.clip(p[:, 2], -hh, hh)
    n = np.zeros_like(p)
    out = outside > 0.0
    n[out] = (p[out] - closest[out]) / outside[out, None]
    side = (~out) & (q[:, 0] >= q[:, 1])
    cap = (~out) & ~side
    n[side, :2] = radial[side]
    n[cap, 2] = np.where(p[cap, 2] >= 0.0, 1.0, -1.0)
    return d, n


def _surface_samples(shape: str, dims) -> np.ndarray:
    pts = []
    if shape == "box":
        h = 0.5 * np.asarray(dims, dtype=float)
        g = np.array([-0.75, -0.25, 0.25, 0.75])
        for axis in range(3):
            a, b = [i for i in range(3) if i != axis]
            for sgn in (-1.0, 1.0):
                for u in g:
                    for v in g:
                        p = np.zeros(3)
                        p[axis] = sgn * h[axis]
                        p[a] = u * h[a]
                        p[b] = v * h[b]
                        pts.append(p)
    else:
        r, height = dims
        hh = 0.5 * height
        for k in range(16):
            th = 2 * np.pi * k / 16
            for z in (-0.75, -0.25, 0.25, 0.75):
                pts.append([r * np.cos(th), r * np.sin(th), z * hh])
        for sgn in (-1.0, 1.0):
            for k in range(8):
                th = 2 * np.pi * k / 8
                pts.append([0.5 * r * np.cos(th), 0.5 * r * np.sin(th), sgn * hh])
    return np.asarray(pts, dtype=float)


# Primitive stand-ins, extents loosely matching the YCB-Video objects used in the grid.
OBJECTS: dict[str, ObjectModel] = {
    "sugar_box": ObjectModel("sugar_box", "box", (0.09, 0.045, 0.175)),
    "mustard_bottle": ObjectModel("mustard_bottle", "cylinder", (0.03, 0.19)),
    "potted_meat_can": ObjectModel("potted_meat_can", "box", (0.10, 0.05, 0.083)),
    "bleach_cleanser": ObjectModel("bleach_cleanser", "box", (0.10, 0.065, 0.25)),
    "power_drill": ObjectModel("power_drill", "cylinder", (0.028, 0.18)),
}
DEFAULT_OBJECT = "sugar_box"


def get_object(name: str) -> ObjectModel:
    try:
        return OBJECTS[name]
    except KeyError:
        raise KeyError(f"unknown object {name!r}; choose from {sorted(OBJECTS)}") from None
