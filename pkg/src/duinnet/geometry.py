"""Deterministic point-set and mesh algorithms.

Covers the sampling and visibility machinery shared by the network (farthest
point sampling, k nearest neighbors) and the dataset pipeline (poisson disk
surface sampling, hidden point removal, noise injection, resampling), plus
OFF/PLY ingestion and PLY emission.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree


class GeometryError(Exception):
    """Degenerate geometric input (zero-area mesh, coincident points, ...)."""


@dataclass
class PointCloud:
    """An ordered set of 3D points with provenance metadata."""

    points: np.ndarray
    model_id: str = ""
    category: str = ""
    viewpoint_id: int = -1
    noisy: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must be (N>=1, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, pts: np.ndarray, **meta) -> "PointCloud":
        return replace(self, points=pts, **meta)


@dataclass
class TriMesh:
    """Indexed triangle mesh; quads are fan-triangulated on ingest."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise GeometryError("face index out of range")

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def drop_degenerate_faces(self, eps: float = 1e-14) -> "TriMesh":
        areas = self.face_areas()
        return TriMesh(self.vertices, self.faces[areas > eps])

    def normalized(self) -> "TriMesh":
        """Center at the vertex centroid and scale the longest bbox axis to 1."""
        v = self.vertices - self.vertices.mean(axis=0)
        extent = v.max(axis=0) - v.min(axis=0)
        scale = extent.max()
        if scale <= 0:
            raise GeometryError("mesh has zero extent")
        return TriMesh(v / scale, self.faces)


@dataclass
class HPRConfig:
    """Spherical-flip radius parameter: R = max point norm x 10**radius_exponent."""

    radius_exponent: float = 2.0


@dataclass
class HPRResult:
    indices: np.ndarray
    jittered: bool = False


# -- sampling ----------------------------------------------------------------


def fps(points: np.ndarray, m: int, seed_rule: str = "first_index") -> np.ndarray:
    """Greedy farthest point sampling; returns m indices.

    Each selected index (after the seed) maximizes the minimum distance to the
    already-selected set; ties go to the lowest index. ``farthest_from_centroid``
    seeding is invariant to input permutation as a point set.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"fps: m={m} out of range for {n} points")
    if seed_rule == "first_index":
        seed = 0
    elif seed_rule == "farthest_from_centroid":
        d = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
        seed = int(np.argmax(d))
    else:
        raise ValueError(f"unknown seed_rule {seed_rule!r}")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed
    mind = np.linalg.norm(pts - pts[seed], axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1), out=mind)
    return chosen


def knn(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points per query, ascending distance, ties by
    lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if k > len(pts):
        raise ValueError(f"knn: k={k} exceeds cloud size {len(pts)}")
    d2 = ((q[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def sample_on_mesh(mesh: TriMesh, n: int, rng: np.random.Generator):
    """Area-weighted uniform sampling; returns (points, face ids, barycentric)."""
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0 or len(mesh.faces) == 0:
        raise GeometryError("mesh has zero surface area")
    fid = rng.choice(len(mesh.faces), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.vertices[mesh.faces[fid]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    bary = np.stack([1 - u - v, u, v], axis=1)
    return pts, fid, bary


def poisson_disk_sample(mesh: TriMesh, n: int, seed: int = 0, oversample: int = 10) -> PointCloud:
    """Exactly n blue-noise points on the mesh surface.

    Oversamples uniformly by area, then greedily eliminates the most crowded
    samples (weight-heap sample elimination) until n survive. The target
    separation is r = sqrt(area / (2*sqrt(3)*n)), the hex-packing radius.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts, _, _ = sample_on_mesh(mesh, max(n * oversample, n), rng)
    if n == len(pts):
        return PointCloud(pts)
    area = mesh.face_areas().sum()
    r_target = np.sqrt(area / (2 * np.sqrt(3.0) * n))
    keep = _eliminate_samples(pts, n, 2.0 * r_target)
    return PointCloud(pts[np.sort(keep)])


def _eliminate_samples(pts: np.ndarray, n: int, r_max: float) -> np.ndarray:
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r_max, output_type="ndarray")
    m = len(pts)
    neighbors: list[list[int]] = [[] for _ in range(m)]
    weights = np.zeros(m)
    if len(pairs):
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        w = (1.0 - d / r_max) ** 8
        for (i, j), wij in zip(pairs, w):
            neighbors[i].append(j)
            neighbors[j].append(i)
            weights[i] += wij
            weights[j] += wij
    alive = np.ones(m, dtype=bool)
    heap = [(-weights[i], i) for i in range(m)]
    heapq.heapify(heap)
    remaining = m
    while remaining > n:
        negw, i = heapq.heappop(heap)
        if not alive[i]:
            continue
        if -negw != weights[i]:  # stale entry
            heapq.heappush(heap, (-weights[i], i))
            continue
        alive[i] = False
        remaining -= 1
        for j in neighbors[i]:
            if alive[j]:
                d = np.linalg.norm(pts[i] - pts[j])
                weights[j] -= (1.0 - d / r_max) ** 8
                heapq.heappush(heap, (-weights[j], j))
    return np.flatnonzero(alive)


# -- visibility ----------------------------------------------------------------


def hidden_point_removal(cloud: PointCloud, viewpoint, cfg: HPRConfig | None = None) -> HPRResult:
    """Visible-point indices via spherical flipping + convex hull.

    Points are re-centered on the viewpoint, reflected outward to radius
    R = max norm x 10**radius_exponent, and the hull of the flipped set plus
    the origin is taken; hull membership marks visibility. Coplanar inputs are
    jittered by 1e-9 and retried, flagged in the result.
    """
    cfg = cfg or HPRConfig()
    pts = cloud.points
    vp = np.asarray(viewpoint, dtype=np.float64)
    center = pts.mean(axis=0)
    if np.linalg.norm(vp - center) <= np.linalg.norm(pts - center, axis=1).max():
        raise GeometryError("viewpoint lies inside the cloud's bounding sphere")
    q = pts - vp
    norms = np.linalg.norm(q, axis=1)
    if norms.max() < 1e-12:
        raise GeometryError("all points coincident with the viewpoint")
    if len(pts) == 1:
        return HPRResult(np.array([0], dtype=np.int64))
    radius = norms.max() * (10.0 ** cfg.radius_exponent)
    flipped = q + 2.0 * (radius - norms)[:, None] * q / norms[:, None]
    aug = np.vstack([flipped, np.zeros(3)])
    try:
        hull = ConvexHull(aug)
        jittered = False
    except QhullError:
        rng = np.random.default_rng(0)
        aug = aug + rng.normal(scale=1e-9, size=aug.shape)
        hull = ConvexHull(aug)
        jittered = True
    visible = np.array(sorted(i for i in hull.vertices if i < len(pts)), dtype=np.int64)
    return HPRResult(visible, jittered)


# -- perturbation / resampling ----------------------------------------------------


def add_gaussian_noise(cloud: PointCloud, sigma: float, seed: int = 0) -> PointCloud:
    """I.i.d. normal jitter with std = sigma x bounding-box diagonal."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return cloud.with_points(cloud.points.copy(), noisy=True)
    diag = np.linalg.norm(cloud.points.max(axis=0) - cloud.points.min(axis=0))
    rng = np.random.default_rng(seed)
    noise = rng.normal(scale=sigma * diag, size=cloud.points.shape)
    return cloud.with_points(cloud.points + noise, noisy=True)


def resample_to(cloud: PointCloud, n: int, seed: int = 0,
                seed_rule: str = "first_index") -> PointCloud:
    """FPS-subsample down to n, or pad by seeded duplication up to n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = cloud.points
    if len(pts) == n:
        return cloud.with_points(pts.copy())
    if len(pts) > n:
        return cloud.with_points(pts[fps(pts, n, seed_rule=seed_rule)])
    rng = np.random.default_rng(seed)
    extra = rng.integers(0, len(pts), size=n - len(pts))
    return cloud.with_points(np.vstack([pts, pts[extra]]))


def normalize_points(points: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale the longest bbox axis to 1."""
    pts = points - points.mean(axis=0)
    scale = (pts.max(axis=0) - pts.min(axis=0)).max()
    if scale <= 0:
        raise GeometryError("degenerate point set")
    return pts / scale


# -- file formats -------------------------------------------------------------------


def load_off(path) -> TriMesh:
    """Parse ASCII OFF (ModelNet native); tolerates counts glued to the header."""
    with open(path) as f:
        tokens: list[str] = []
        for line in f:
            line = line.split("#")[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens:
        raise GeometryError(f"{path}: empty OFF file")
    head = tokens.pop(0)
    if head != "OFF":
        if head.startswith("OFF"):
            tokens.insert(0, head[3:])  # 'OFF123 ...' variant
        else:
            raise GeometryError(f"{path}: missing OFF header")
    nv, nf = int(tokens[0]), int(tokens[1])
    pos = 3  # skip edge count
    verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    faces: list[tuple[int, int, int]] = []
    for _ in range(nf):
        cnt = int(tokens[pos])
        idx = [int(t) for t in tokens[pos + 1 : pos + 1 + cnt]]
        pos += 1 + cnt
        for i in range(1, cnt - 1):  # fan-triangulate
            faces.append((idx[0], idx[i], idx[i + 1]))
    mesh = TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    return mesh.drop_degenerate_faces()


def load_ply(path) -> TriMesh:
    """Parse ASCII PLY with vertex x/y/z (and optional triangular faces)."""
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    if not lines or lines[0] != "ply":
        raise GeometryError(f"{path}: not a PLY file")
    nv = nf = 0
    i = 1
    while i < len(lines) and lines[i] != "end_header":
        parts = lines[i].split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        elif parts[0] == "format" and parts[1] != "ascii":
            raise GeometryError(f"{path}: only ascii PLY supported")
        i += 1
    body = [ln.split() for ln in lines[i + 1 :] if ln]
    verts = np.array([row[:3] for row in body[:nv]], dtype=np.float64)
    faces: list[tuple[int, int, int]] = []
    for row in body[nv : nv + nf]:
        cnt = int(row[0])
        idx = [int(t) for t in row[1 : 1 + cnt]]
        for j in range(1, cnt - 1):
            faces.append((idx[0], idx[j], idx[j + 1]))
    mesh = TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    return mesh.drop_degenerate_faces() if nf else mesh


def save_cloud_ply(path, cloud: PointCloud) -> None:
    """Emit an ASCII PLY point cloud (x y z float32 properties)."""
    pts = cloud.points.astype(np.float32)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for x, y, z in pts:
            f.write(f"{x:.8g} {y:.8g} {z:.8g}\n")


def load_cloud_ply(path, **meta) -> PointCloud:
    mesh = load_ply(path)
    return PointCloud(mesh.vertices, **meta)
