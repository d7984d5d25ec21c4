"""2D triangular meshes for the periodic unit cell and the macroscopic domain.

Meshes are generated from structured templates so that the unit-cell mesh is
exactly symmetric under reflection about both mid-planes and conforms to the
matrix/inclusion interface (a polygon whose vertices lie on the circle for a
disk inclusion, grid-snapped lines for a stripe band).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MATRIX = 0
INCLUSION = 1

_SYM_TOL = 1e-12


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseGeometry:
    """Inclusion descriptor on the unit cell [0,1]^2.

    shape: "disk" (center + radius), "stripe" (band in y1) or "none".
    The geometry must be symmetric about both cell mid-planes.
    """

    shape: str = "disk"
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.25
    band: tuple[float, float] = (0.25, 0.75)

    def validate(self) -> None:
        if self.shape == "disk":
            cx, cy = self.center
            if abs(cx - 0.5) > 1e-12 or abs(cy - 0.5) > 1e-12:
                raise MeshError(
                    "disk inclusion must be centered at (0.5, 0.5) to keep the "
                    f"cell mirror-symmetric, got {self.center}"
                )
            if not 0.0 < self.radius < 0.5:
                raise MeshError(f"disk radius must lie in (0, 0.5), got {self.radius}")
        elif self.shape == "stripe":
            a, b = self.band
            if not (0.0 <= a < b <= 1.0):
                raise MeshError(f"stripe band must satisfy 0 <= a < b <= 1, got {self.band}")
            if abs((a + b) - 1.0) > 1e-12:
                raise MeshError(
                    f"stripe band must be symmetric about y1=0.5, got {self.band}"
                )
        elif self.shape == "none":
            pass
        else:
            raise MeshError(f"unknown inclusion shape {self.shape!r}")


class Mesh:
    """Immutable P1 triangle mesh with phase tags.

    Attributes
    ----------
    nodes : (nn, 2) float array
    triangles : (nt, 3) int array, positively oriented
    phase_tag : (nt,) int array, MATRIX or INCLUSION
    boundary_nodes : sorted int array of nodes on the outer boundary
    h : max element diameter
    areas : (nt,) triangle areas
    grads : (nt, 3, 2) gradients of the three hat functions per triangle
    """

    def __init__(self, nodes, triangles, phase_tag=None):
        nodes = np.asarray(nodes, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if phase_tag is None:
            phase_tag = np.zeros(len(triangles), dtype=np.int64)
        phase_tag = np.asarray(phase_tag, dtype=np.int64)
        if len(phase_tag) != len(triangles):
            raise MeshError("phase_tag must cover every triangle")

        # enforce positive orientation
        p = nodes[triangles]
        sa = _signed_areas(p)
        flip = sa < 0
        if np.any(flip):
            triangles = triangles.copy()
            triangles[flip, 1], triangles[flip, 2] = (
                triangles[flip, 2].copy(),
                triangles[flip, 1].copy(),
            )
            p = nodes[triangles]
            sa = _signed_areas(p)
        if np.any(sa <= 0):
            raise MeshError("degenerate triangle (zero area)")

        self.nodes = nodes
        self.triangles = triangles
        self.phase_tag = phase_tag
        self.areas = sa
        # hat-function gradients: grad phi_a = rot90(edge opposite a) / (2 area)
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        g = np.stack([e0, e1, e2], axis=1)  # (nt,3,2)
        grads = np.empty_like(g)
        grads[..., 0] = -g[..., 1]
        grads[..., 1] = g[..., 0]
        grads /= (2.0 * sa)[:, None, None]
        self.grads = grads

        edge_len = np.stack(
            [np.linalg.norm(e0, axis=1), np.linalg.norm(e1, axis=1), np.linalg.norm(e2, axis=1)]
        )
        self.h = float(edge_len.max())
        self.boundary_nodes = _boundary_nodes(triangles)
        for a in (self.nodes, self.triangles, self.phase_tag, self.areas, self.grads, self.boundary_nodes):
            a.setflags(write=False)
        self._locator = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    # ---- point location -------------------------------------------------
    def _build_locator(self):
        nb = max(1, int(math.sqrt(self.num_triangles / 2.0)))
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        span = np.maximum(hi - lo, 1e-30)
        p = self.nodes[self.triangles]
        tmin = ((p.min(axis=1) - lo) / span * nb).astype(int).clip(0, nb - 1)
        tmax = ((p.max(axis=1) - lo) / span * nb).astype(int).clip(0, nb - 1)
        bins = [[] for _ in range(nb * nb)]
        for t in range(self.num_triangles):
            for ix in range(tmin[t, 0], tmax[t, 0] + 1):
                for iy in range(tmin[t, 1], tmax[t, 1] + 1):
                    bins[ix * nb + iy].append(t)
        self._locator = (nb, lo, span, [np.array(b, dtype=np.int64) for b in bins])

    def locate_point(self, p, tol: float = 1e-10):
        """Find (triangle index, barycentric coords) for a point in the domain."""
        tri, bary = self.locate_points(np.asarray(p, dtype=float)[None, :], tol=tol)
        return int(tri[0]), bary[0]

    def locate_points(self, pts, tol: float = 1e-10):
        """Vectorized point location; raises MeshError if any point is outside."""
        pts = np.asarray(pts, dtype=float)
        if self._locator is None:
            self._build_locator()
        nb, lo, span, bins = self._locator
        idx = ((pts - lo) / span * nb).astype(int).clip(0, nb - 1)
        tri = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        order = np.lexsort((idx[:, 1], idx[:, 0]))
        k = 0
        while k < len(order):
            j = k
            key = (idx[order[k], 0], idx[order[k], 1])
            while j < len(order) and (idx[order[j], 0], idx[order[j], 1]) == key:
                j += 1
            sel = order[k:j]
            cand = bins[key[0] * nb + key[1]]
            if len(cand):
                b = self._barycentric(pts[sel], cand)  # (len(sel), ncand, 3)
                ok = b.min(axis=2) >= -tol
                best = np.argmax(ok, axis=1)
                found = ok[np.arange(len(sel)), best]
                tri[sel[found]] = cand[best[found]]
                bary[sel[found]] = b[np.arange(len(sel)), best][found]
            k = j
        if np.any(tri < 0):
            bad = pts[tri < 0][0]
            raise MeshError(f"point {bad} lies outside the meshed domain")
        return tri, bary

    def _barycentric(self, pts, tris):
        p = self.nodes[self.triangles[tris]]  # (nc,3,2)
        v0 = p[:, 1] - p[:, 0]
        v1 = p[:, 2] - p[:, 0]
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        d = pts[:, None, :] - p[None, :, 0, :]
        l1 = (d[..., 0] * v1[None, :, 1] - d[..., 1] * v1[None, :, 0]) / det[None, :]
        l2 = (d[..., 1] * v0[None, :, 0] - d[..., 0] * v0[None, :, 1]) / det[None, :]
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)

    def interpolate(self, values, tri, bary):
        """Interpolate nodal values (shape (..., nn)) at located points."""
        values = np.asarray(values)
        vt = values[..., self.triangles[tri]]  # (..., npts, 3)
        return np.einsum("...pa,pa->...p", vt, bary)


def _signed_areas(p):
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def _boundary_nodes(triangles):
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def boundary_edges(mesh: Mesh):
    """Edges belonging to exactly one triangle (as sorted node pairs)."""
    edges = np.concatenate(
        [mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]
    )
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts == 1]


# ---------------------------------------------------------------------------
# structured generators
# ---------------------------------------------------------------------------


def build_macro_mesh(target_h: float) -> Mesh:
    """Uniform diagonal-split mesh of the unit square with max diameter <= 1.5*target_h."""
    if target_h <= 0:
        raise MeshError(f"target_h must be positive, got {target_h}")
    n = max(1, math.ceil(math.sqrt(2.0) / (1.5 * target_h)))
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def nid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris.append([a, b, c])
            tris.append([a, c, d])
    return Mesh(nodes, np.array(tris))


def _crossed_grid(xs, ys, in_band=None):
    """Tensor grid with each rectangle split into 4 triangles via its centroid.

    The centroid split keeps the mesh symmetric under both mid-plane
    reflections whenever the coordinate sets are.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    nx, ny = len(xs) - 1, len(ys) - 1
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    nodes = [np.stack([xx.ravel(), yy.ravel()], axis=1)]
    base = (len(xs)) * (len(ys))

    def nid(i, j):
        return i * len(ys) + j

    centers = []
    tris = []
    tags = []
    for i in range(nx):
        for j in range(ny):
            cidx = base + len(centers)
            centers.append([(xs[i] + xs[i + 1]) / 2.0, (ys[j] + ys[j + 1]) / 2.0])
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            for u, v in ((a, b), (b, c), (c, d), (d, a)):
                tris.append([u, v, cidx])
            tag = INCLUSION if (in_band is not None and in_band(i)) else MATRIX
            tags.extend([tag] * 4)
    nodes.append(np.array(centers))
    return Mesh(np.concatenate(nodes), np.array(tris), np.array(tags))


def _stripe_mesh(band, target_h):
    a, b = band
    n = max(2, math.ceil(1.0 / (1.4 * target_h)))
    xs = np.unique(np.concatenate([np.linspace(0, 1, n + 1), [a, b]]))
    # drop near-duplicates from the snap
    keep = np.concatenate([[True], np.diff(xs) > 1e-9])
    xs = xs[keep]
    # symmetrize about 0.5 exactly
    xs = np.unique(np.round(np.concatenate([xs, 1.0 - xs]), 15))
    ys = np.linspace(0, 1, n + 1)
    mids = 0.5 * (xs[:-1] + xs[1:])

    def in_band(i):
        return a - 1e-12 < mids[i] < b + 1e-12

    return _crossed_grid(xs, ys, in_band)


def _disk_mesh(center, radius, n_theta, n_r, n_out):
    cx, cy = center
    nodes = [(cx, cy)]
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    ct, st = np.cos(theta), np.sin(theta)

    ring_ids = []
    for j in range(1, n_r + 1):
        r = radius * j / n_r
        ids = []
        for k in range(n_theta):
            ids.append(len(nodes))
            nodes.append((cx + r * ct[k], cy + r * st[k]))
        ring_ids.append(ids)

    # square-boundary exit point of each ray
    t_exit = 0.5 / np.maximum(np.abs(ct), np.abs(st))
    for l in range(1, n_out + 1):
        ids = []
        s = l / n_out
        for k in range(n_theta):
            rr = radius + s * (t_exit[k] - radius)
            ids.append(len(nodes))
            nodes.append((cx + rr * ct[k], cy + rr * st[k]))
        ring_ids.append(ids)

    tris = []
    tags = []
    first = ring_ids[0]
    for k in range(n_theta):
        tris.append([0, first[k], first[(k + 1) % n_theta]])
        tags.append(INCLUSION)
    nodes_arr = list(nodes)
    for jr in range(len(ring_ids) - 1):
        inner, outer = ring_ids[jr], ring_ids[jr + 1]
        # layers whose outer ring is at or inside the interface circle are
        # inclusion material, everything beyond it is matrix
        tag = INCLUSION if jr + 1 <= n_r - 1 else MATRIX
        for k in range(n_theta):
            k1 = (k + 1) % n_theta
            quad = [inner[k], outer[k], outer[k1], inner[k1]]
            cidx = len(nodes_arr)
            cx_, cy_ = np.mean([nodes_arr[q] for q in quad], axis=0)
            nodes_arr.append((cx_, cy_))
            for u, v in ((quad[0], quad[1]), (quad[1], quad[2]), (quad[2], quad[3]), (quad[3], quad[0])):
                tris.append([u, v, cidx])
                tags.append(tag)
    return Mesh(np.array(nodes_arr), np.array(tris), np.array(tags))


def build_unit_cell_mesh(geometry: PhaseGeometry, target_h: float) -> Mesh:
    """Symmetric interface-conforming mesh of [0,1]^2 with h <= 1.5*target_h."""
    if target_h <= 0:
        raise MeshError(f"target_h must be positive, got {target_h}")
    geometry.validate()
    if geometry.shape == "stripe":
        return _stripe_mesh(geometry.band, target_h)
    if geometry.shape == "none":
        n = max(2, math.ceil(1.0 / (1.4 * target_h)))
        xs = np.linspace(0, 1, n + 1)
        return _crossed_grid(xs, xs)

    r = geometry.radius
    # angular spacing is widest on the outer square boundary (perimeter 4)
    n_theta = max(8, 8 * math.ceil(4.0 / (1.4 * target_h) / 8.0))
    n_r = max(2, math.ceil(r / (1.4 * target_h)))
    n_out = max(2, math.ceil((0.5 * math.sqrt(2.0) - r) / (1.4 * target_h)))
    for _ in range(8):
        mesh = _disk_mesh(geometry.center, r, n_theta, n_r, n_out)
        if mesh.h <= 1.5 * target_h:
            return mesh
        grow = mesh.h / (1.4 * target_h)
        n_theta = 8 * math.ceil(n_theta * grow / 8.0)
        n_r = math.ceil(n_r * grow)
        n_out = math.ceil(n_out * grow)
    raise MeshError("unit-cell mesh refinement failed to reach the target size")


def check_reflection_symmetry(mesh: Mesh, tol: float = _SYM_TOL) -> float:
    """Max distance from each node's mirror image to the nearest node.

    Checked for reflections about both mid-planes; raises if above tol.
    """
    worst = 0.0
    for ref in (np.array([-1.0, 1.0]), np.array([1.0, -1.0])):
        mirrored = mesh.nodes * ref + (ref < 0) * 1.0
        d = _nearest_node_dist(mesh.nodes, mirrored)
        worst = max(worst, d)
    if worst > tol:
        raise MeshError(f"mesh is not mirror-symmetric (deviation {worst:.3e})")
    return worst


def _nearest_node_dist(nodes, queries):
    from scipy.spatial import cKDTree

    tree = cKDTree(nodes)
    d, _ = tree.query(queries)
    return float(d.max())


def periodic_pairs(mesh: Mesh, tol: float = 1e-9):
    """Match boundary nodes across opposite edges of [0,1]^2.

    Returns (master, slave) index arrays identifying each right/top node with
    its left/bottom partner (corners collapse onto the origin corner).
    """
    nodes = mesh.nodes
    bnd = mesh.boundary_nodes
    master = {}

    def on(val, coord):
        return bnd[np.abs(nodes[bnd, coord] - val) < tol]

    for coord in (0, 1):
        lo = on(0.0, coord)
        hi = on(1.0, coord)
        other = 1 - coord
        lo_sorted = lo[np.argsort(nodes[lo, other])]
        hi_sorted = hi[np.argsort(nodes[hi, other])]
        if len(lo_sorted) != len(hi_sorted):
            raise MeshError("periodic pairing failed: unequal boundary node counts")
        if np.max(np.abs(nodes[lo_sorted, other] - nodes[hi_sorted, other])) > tol:
            raise MeshError("periodic pairing failed: opposite edges do not match")
        for m, s in zip(lo_sorted, hi_sorted):
            master[int(s)] = int(m)
    # resolve chains (corners: top-right -> top-left -> bottom-left)
    for s in list(master):
        m = master[s]
        while m in master and master[m] != m:
            m = master[m]
        master[s] = m
    slaves = np.array(sorted(master), dtype=np.int64)
    masters = np.array([master[s] for s in slaves], dtype=np.int64)
    keep = masters != slaves
    return masters[keep], slaves[keep]


# ---------------------------------------------------------------------------
# plain-text persistence
# ---------------------------------------------------------------------------


def save_mesh(mesh: Mesh, path) -> None:
    """Write the documented plain-text format (see README)."""
    with open(path, "w") as f:
        f.write("homsim-mesh 1\n")
        f.write(f"{mesh.num_nodes} {mesh.num_triangles}\n")
        for x, y in mesh.nodes:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for (a, b, c), t in zip(mesh.triangles, mesh.phase_tag):
            f.write(f"{a} {b} {c} {t}\n")


def load_mesh(path) -> Mesh:
    with open(path) as f:
        header = f.readline().split()
        if header[:1] != ["homsim-mesh"]:
            raise MeshError(f"{path}: not a homsim mesh file")
        nn, nt = map(int, f.readline().split())
        nodes = np.array([[float(v) for v in f.readline().split()] for _ in range(nn)])
        rows = np.array([[int(v) for v in f.readline().split()] for _ in range(nt)])
    return Mesh(nodes, rows[:, :3], rows[:, 3])
