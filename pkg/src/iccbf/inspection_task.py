"""Surface-inspection geometry around a spherical chief.

Tiles sit on a Fibonacci lattice.  A tile counts as inspected the first
time it faces the deputy, lies inside the sensor cone, is sunlit and its
Blinn-Phong shading falls inside an acceptance band.  The observation
feature is the direction to the largest K-means cluster of what is left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """The deputy is not outside the chief."""


@dataclass(frozen=True)
class InspectionConfig:
    N_p: int = 100
    K: int = 4
    fov: float = math.radians(60.0)
    shade_min: float = 0.05
    shade_max: float = 0.95
    diffuse_weight: float = 0.7
    specular_weight: float = 0.3
    shininess: float = 32.0
    kmeans_iters: int = 50

    def __post_init__(self):
        if not self.N_p >= self.K >= 1:
            raise ValueError("need N_p >= K >= 1")
        if not 0 < self.fov < math.pi:
            raise ValueError("field of view must lie in (0, pi)")
        if not 0 <= self.shade_min <= self.shade_max:
            raise ValueError("bad shading band")


def sun_vector(sun_angle: float) -> np.ndarray:
    """Unit vector from the chief toward the Sun, in the Hill x-y plane."""
    return np.array([math.cos(sun_angle), math.sin(sun_angle), 0.0])


def tile_sphere(N_p: int, R_C: float) -> tuple[np.ndarray, np.ndarray]:
    """Fibonacci-lattice tiles: ``(normals, positions)``, each ``(N_p, 3)``."""
    if N_p < 4:
        raise ValueError("need at least 4 tiles")
    i = np.arange(N_p) + 0.5
    z = 1.0 - 2.0 * i / N_p
    rho = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    normals = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, R_C * normals


def boresight_angle(r, sun_angle: float) -> float:
    """Angle between the boresight ``-r/|r|`` and the sun direction."""
    r = np.asarray(r, dtype=float)[:3]
    c = float(-(r @ sun_vector(sun_angle)) / np.linalg.norm(r))
    return math.acos(min(1.0, max(-1.0, c)))


def boresight_barrier(x, sun_angle: float, config: InspectionConfig = InspectionConfig()) -> float:
    """``theta_b - fov/2``; negative when the sensor looks too close to the Sun."""
    return boresight_angle(x, sun_angle) - 0.5 * config.fov


def shading(normals, positions, r, sun_angle: float, config: InspectionConfig = InspectionConfig()) -> np.ndarray:
    """Blinn-Phong intensity of each tile seen from the deputy at ``r``."""
    light = sun_vector(sun_angle)
    view = np.asarray(r, dtype=float)[:3] - positions
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    half = view + light
    hn = np.linalg.norm(half, axis=1, keepdims=True)
    half = np.divide(half, hn, out=np.zeros_like(half), where=hn > 0)
    diff = np.clip(normals @ light, 0.0, None)
    spec = np.clip(np.einsum("ij,ij->i", normals, half), 0.0, None) ** config.shininess
    return config.diffuse_weight * diff + config.specular_weight * spec


def visible_mask(x, normals, positions, sun_angle: float, config: InspectionConfig = InspectionConfig(),
                 R_C: float | None = None) -> np.ndarray:
    """Boolean mask of tiles that pass every viewing and lighting gate."""
    r = np.asarray(x, dtype=float)[:3]
    radius = float(np.linalg.norm(r))
    R_C = float(np.linalg.norm(positions[0])) if R_C is None else R_C
    if radius <= R_C:
        raise GeometryError(f"deputy at {radius:.3g} m is inside the chief (radius {R_C:.3g} m)")
    to_dep = r - positions
    facing = np.einsum("ij,ij->i", normals, to_dep) > 0
    bore = -r / radius
    to_tile = -to_dep / np.linalg.norm(to_dep, axis=1, keepdims=True)
    in_fov = to_tile @ bore >= math.cos(0.5 * config.fov)
    lit = normals @ sun_vector(sun_angle) > 0
    s = shading(normals, positions, r, sun_angle, config)
    band = (s >= config.shade_min) & (s <= config.shade_max)
    return facing & in_fov & lit & band


def visible_set(x, geom: "InspectionGeometry", config: InspectionConfig | None = None) -> np.ndarray:
    """Indices of tiles that become inspected at ``x`` (not already inspected)."""
    config = geom.config if config is None else config
    mask = visible_mask(x, geom.normals, geom.positions, geom.sun_angle, config, geom.R_C)
    return np.flatnonzero(mask & ~geom.inspected)


def _kmeans_pp_init(P: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [P[rng.integers(len(P))]]
    for _ in range(1, K):
        d2 = np.min(((P[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        tot = d2.sum()
        idx = rng.integers(len(P)) if tot <= 0 else rng.choice(len(P), p=d2 / tot)
        centers.append(P[idx])
    return np.array(centers)


def kmeans(P, K: int, rng: np.random.Generator, iters: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; returns ``(centroids, labels)``.

    Centroids come back sorted lexicographically and labels follow that
    order, which fixes the tie-breaking rule independently of seeding.
    """
    P = np.asarray(P, dtype=float)
    # canonical point order, so the result does not depend on how tiles were listed
    order = np.lexsort(P.T[::-1])
    P = P[order]
    K = min(K, len(P))
    C = _kmeans_pp_init(P, K, rng)
    labels = np.zeros(len(P), dtype=int)
    for it in range(iters):
        d2 = ((P[:, None, :] - C[None]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        if it and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            if np.any(labels == k):
                C[k] = P[labels == k].mean(axis=0)
    srt = np.lexsort(C.T[::-1])
    rank = np.empty(K, dtype=int)
    rank[srt] = np.arange(K)
    out = np.empty(len(P), dtype=int)
    out[order] = rank[labels]
    return C[srt], out


def cluster_direction(points, K: int, rng: np.random.Generator, iters: int = 50) -> np.ndarray:
    """Unit vector from the chief center toward the largest cluster of ``points``.

    Equal-size clusters resolve to the lowest index in the sorted centroid
    order.  No points gives the zero vector.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        return np.zeros(3)
    C, labels = kmeans(P, K, rng, iters)
    counts = np.bincount(labels, minlength=len(C))
    c = C[int(np.argmax(counts))]
    n = np.linalg.norm(c)
    if n == 0:
        # centroid at the chief center (e.g. symmetric leftovers): fall back to the first member
        c = P[labels == int(np.argmax(counts))][0]
        n = np.linalg.norm(c)
    return c / n if n > 0 else np.zeros(3)


@dataclass
class InspectionGeometry:
    """Per-episode tiles, sun direction and inspected mask."""

    R_C: float
    sun_angle: float
    config: InspectionConfig = field(default_factory=InspectionConfig)
    normals: np.ndarray = field(init=False)
    positions: np.ndarray = field(init=False)
    inspected: np.ndarray = field(init=False)

    def __post_init__(self):
        self.normals, self.positions = tile_sphere(self.config.N_p, self.R_C)
        self.inspected = np.zeros(self.config.N_p, dtype=bool)

    @property
    def sun(self) -> np.ndarray:
        return sun_vector(self.sun_angle)

    @property
    def n_insp(self) -> int:
        return int(self.inspected.sum())

    @property
    def complete(self) -> bool:
        return bool(self.inspected.all())

    def theta_b(self, x) -> float:
        return boresight_angle(x, self.sun_angle)

    def update(self, x) -> int:
        """Mark newly visible tiles; returns how many were added."""
        new = visible_set(x, self)
        self.inspected[new] = True
        return int(new.size)

    def direction(self, rng: np.random.Generator) -> np.ndarray:
        return cluster_direction(self.positions[~self.inspected], self.config.K, rng,
                                 self.config.kmeans_iters)

    def to_dict(self) -> dict:
        return {"R_C": self.R_C, "sun_angle": self.sun_angle, "normals": self.normals.tolist(),
                "inspected": self.inspected.astype(int).tolist()}
