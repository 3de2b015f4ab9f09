"""Triangulated closed surfaces in the chart, with curved-metric geometry.

Meshes live in flat chart coordinates; all metric quantities are obtained
from the flat ones through the conformal factor:

    nu = exp(-f) nu_flat,   kappa_i = exp(-f) (kappa_flat_i + nu_flat(f)),
    u_perp = exp(f) <D, nu_flat>,   dA_g = exp(2f) dA_flat.

Flat mean curvature comes from the cotangent Laplacian over mixed Voronoi
cells; flat principal curvatures from per-vertex quadric fits over the
two-ring.  Connectivity is fixed over a flow, so the adjacency tables are
built once and shared between snapshots.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeshDegenerate, SeedInfeasible

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

# 4-point tetrahedron rule, exact for quadratics
_TET_A = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
_TET_B = (5.0 - np.sqrt(5.0)) / 20.0
_TET_BARY = np.full((4, 4), _TET_B) + (_TET_A - _TET_B) * np.eye(4)


# --------------------------------------------------------------------------
# topology
# --------------------------------------------------------------------------


class Topology:
    """Half-edge adjacency for a closed oriented triangle mesh.

    Half-edge k = 3*face + corner runs from faces[f, c] to faces[f, (c+1)%3].
    """

    def __init__(self, faces):
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must be (F,3)")
        self.faces = faces
        F = faces.shape[0]
        V = int(faces.max()) + 1
        self.n_vertices = V
        self.n_faces = F

        c0 = faces[:, [0, 1, 2]].reshape(-1)
        c1 = faces[:, [1, 2, 0]].reshape(-1)
        self.he_tail = c0
        self.he_head = c1
        self.he_face = np.repeat(np.arange(F), 3)
        idx = np.arange(3 * F)
        self.he_next = (idx // 3) * 3 + (idx % 3 + 1) % 3

        # twin pairing: every directed edge must appear exactly once, and its
        # reverse exactly once (closed, consistently oriented)
        key = c0 * V + c1
        rkey = c1 * V + c0
        if np.unique(key).size != key.size:
            raise MeshDegenerate("duplicate directed edge; orientation broken")
        order = np.argsort(key, kind="stable")
        pos = np.searchsorted(key[order], rkey)
        pos = np.minimum(pos, key.size - 1)
        if not np.all(key[order[pos]] == rkey):
            raise MeshDegenerate("mesh is not a closed oriented surface")
        self.he_twin = order[pos]
        if np.any(self.he_twin[self.he_twin] != np.arange(3 * F)):
            raise MeshDegenerate("half-edge twin pairing is not an involution")

        self.n_edges = 3 * F // 2
        euler = V - self.n_edges + F
        if euler != 2:
            raise MeshDegenerate(f"expected sphere topology, Euler number {euler}")

        # one-ring adjacency (padded) and vertex degrees
        adj = sp.csr_matrix(
            (np.ones(3 * F), (c0, c1)), shape=(V, V), dtype=np.int8
        )
        adj = ((adj + adj.T) > 0).astype(np.int8)
        self._adj = adj
        self.one_ring, self.one_ring_count = _padded_rows(adj)
        # two-ring: neighbors of neighbors, self excluded, one-ring included
        two = ((adj + adj @ adj) > 0).tolil()
        two.setdiag(0)
        self.two_ring, self.two_ring_count = _padded_rows(two.tocsr())
        self._rings = {}

    def ring(self, depth):
        """Padded neighbor table within `depth` edges, self excluded.

        Returns (indices, counts) like the one/two-ring tables.
        """
        if depth not in self._rings:
            adj = self._adj
            acc = adj.copy()
            power = adj.copy()
            for _ in range(depth - 1):
                power = power @ adj
                acc = acc + power
            acc = (acc > 0).tolil()
            acc.setdiag(0)
            self._rings[depth] = _padded_rows(acc.tocsr())
        return self._rings[depth]

    def vertex_area_matrix(self):
        """CSR scatter matrix: per-face values to incident vertices."""
        F = self.n_faces
        rows = self.faces.reshape(-1)
        cols = np.repeat(np.arange(F), 3)
        return sp.csr_matrix(
            (np.ones(3 * F), (rows, cols)), shape=(self.n_vertices, F)
        )


def _padded_rows(csr):
    csr = csr.tocsr()
    counts = np.diff(csr.indptr)
    kmax = int(counts.max())
    out = np.zeros((csr.shape[0], kmax), dtype=np.int64)
    for i in range(csr.shape[0]):
        row = csr.indices[csr.indptr[i]:csr.indptr[i + 1]]
        out[i, : row.size] = row
        out[i, row.size:] = i  # pad with self; masked out by counts
    return out, counts


@dataclass
class TriSurface:
    """Vertices + faces with shared adjacency tables."""

    vertices: np.ndarray
    faces: np.ndarray
    topology: Topology = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.topology is None:
            self.topology = Topology(self.faces)

    def with_vertices(self, verts):
        return TriSurface(verts, self.faces, self.topology)

    def copy(self):
        return TriSurface(self.vertices.copy(), self.faces, self.topology)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def edge_lengths(self):
        v = self.vertices
        t = self.topology
        return np.linalg.norm(v[t.he_head] - v[t.he_tail], axis=1)

    def min_edge(self):
        return float(np.min(self.edge_lengths()))


# --------------------------------------------------------------------------
# icosphere and seeds
# --------------------------------------------------------------------------


def icosahedron():
    """Unit icosahedron (12 vertices, 20 faces), outward oriented."""
    t = GOLDEN
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts[0])
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def icosphere(level):
    """Subdivided icosahedron projected to the unit sphere.

    level 0 gives 12 vertices; each level quadruples the face count,
    so V = 10 * 4**level + 2.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    verts, faces = icosahedron()
    verts = list(map(np.asarray, verts))
    for _ in range(level):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.asarray(new_faces, dtype=np.int64)
    mesh = TriSurface(np.asarray(verts), faces)
    # outward orientation: positive enclosed flat volume
    if enclosed_volume_flat(mesh) < 0.0:
        mesh = TriSurface(mesh.vertices, mesh.faces[:, ::-1].copy())
    return mesh


def sphere_seed(radius, level):
    m = icosphere(level)
    return m.with_vertices(radius * m.vertices)


def ellipsoid_seed(semiaxes, level):
    a = np.asarray(semiaxes, dtype=float)
    if a.shape != (3,) or np.any(a <= 0.0):
        raise ValueError("semiaxes must be three positive numbers")
    m = icosphere(level)
    return m.with_vertices(m.vertices * a)


def _rodrigues(points, axis, angles):
    """Rotate each point about `axis` by its own angle."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    cross = np.cross(np.broadcast_to(a, points.shape), points)
    dot = (points @ a)[:, None]
    return points * c + cross * s + a[None, :] * dot * (1.0 - c)


def twisted_seed(geom, pair, semiaxes, tau, level):
    """Ellipsoid sheared by the log-spiral twist of the rotation axis.

    Each vertex is rotated about the pair's axis by tau * ln|p|, so rays
    from the origin become the integral spirals of dilation + tau*rotation.
    Returns (mesh, min u at Xi=1, min u_perp); raises SeedInfeasible if the
    seed is not strictly starshaped for the scheduled field at t=0.
    """
    base = ellipsoid_seed(semiaxes, level)
    r = np.linalg.norm(base.vertices, axis=1)
    mesh = base.with_vertices(_rodrigues(base.vertices, pair.axis_vec, tau * np.log(r)))
    vg = mesh_geometry(mesh, geom, pair, xi_now=1.0, with_curvatures=False)
    min_u = float(np.min(vg.u))
    min_uperp = float(np.min(vg.u_perp))
    if min_u <= 0.0:
        raise SeedInfeasible(
            f"twisted seed not starshaped for the scheduled field "
            f"(min u = {min_u:.3e}; tau={tau}, omega={pair.omega})"
        )
    return mesh, min_u, min_uperp


# --------------------------------------------------------------------------
# flat mesh kernels
# --------------------------------------------------------------------------


def face_normals_areas(verts, faces):
    p0, p1, p2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    cr = np.cross(p1 - p0, p2 - p0)
    nrm = np.linalg.norm(cr, axis=1)
    if np.any(nrm <= 0.0):
        raise MeshDegenerate("zero-area face")
    return cr / nrm[:, None], 0.5 * nrm


def vertex_normals(mesh):
    """Area-weighted average of incident face normals, unit length."""
    fn, fa = face_normals_areas(mesh.vertices, mesh.faces)
    w = fn * fa[:, None]
    out = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        out[:, k] = np.bincount(
            mesh.faces.reshape(-1),
            weights=np.repeat(w[:, k], 3),
            minlength=mesh.n_vertices,
        )
    nrm = np.linalg.norm(out, axis=1)
    if np.any(nrm <= 0.0):
        raise MeshDegenerate("vanishing vertex normal")
    return out / nrm[:, None]


def _face_cotans(verts, faces):
    """Cotangent at each face corner; corner c faces the edge (c+1, c+2)."""
    p = verts[faces]  # (F, 3, 3)
    cot = np.empty((faces.shape[0], 3))
    for c in range(3):
        a = p[:, (c + 1) % 3] - p[:, c]
        b = p[:, (c + 2) % 3] - p[:, c]
        cr = np.linalg.norm(np.cross(a, b), axis=1)
        cot[:, c] = np.einsum("ij,ij->i", a, b) / np.maximum(cr, 1e-300)
    return cot


def mixed_voronoi_areas(verts, faces):
    """Per-vertex mixed Voronoi cell areas (obtuse-safe)."""
    p = verts[faces]
    cot = _face_cotans(verts, faces)
    _, fa = face_normals_areas(verts, faces)
    V = int(faces.max()) + 1
    contrib = np.empty((faces.shape[0], 3))
    obtuse_any = np.any(cot < 0.0, axis=1)
    for c in range(3):
        e1 = p[:, (c + 1) % 3] - p[:, c]
        e2 = p[:, (c + 2) % 3] - p[:, c]
        l1 = np.einsum("ij,ij->i", e1, e1)
        l2 = np.einsum("ij,ij->i", e2, e2)
        vor = (l1 * cot[:, (c + 2) % 3] + l2 * cot[:, (c + 1) % 3]) / 8.0
        obtuse_here = cot[:, c] < 0.0
        contrib[:, c] = np.where(
            obtuse_any,
            np.where(obtuse_here, fa / 2.0, fa / 4.0),
            vor,
        )
    areas = np.bincount(
        faces.reshape(-1), weights=contrib.reshape(-1), minlength=V
    )
    if np.any(areas <= 0.0):
        raise MeshDegenerate("non-positive mixed Voronoi area")
    return areas


def cotan_laplacian_apply(mesh, values, areas=None):
    """Pointwise Laplace-Beltrami of per-vertex values (flat induced metric).

    (Lap v)_i = (1 / (2 A_i)) sum_j (cot a_ij + cot b_ij) (v_j - v_i)
    """
    verts, faces = mesh.vertices, mesh.faces
    if areas is None:
        areas = mixed_voronoi_areas(verts, faces)
    cot = _face_cotans(verts, faces)
    vals = np.asarray(values, dtype=float)
    flat = vals.reshape(vals.shape[0], -1)
    acc = np.zeros_like(flat)
    V = verts.shape[0]
    for c in range(3):
        i = faces[:, (c + 1) % 3]
        j = faces[:, (c + 2) % 3]
        w = cot[:, c]
        diff_ij = flat[j] - flat[i]
        for k in range(flat.shape[1]):
            acc[:, k] += np.bincount(i, weights=w * diff_ij[:, k], minlength=V)
            acc[:, k] -= np.bincount(j, weights=w * diff_ij[:, k], minlength=V)
    acc /= (2.0 * areas)[:, None]
    return acc.reshape(vals.shape)


def face_gradients(mesh, values):
    """Piecewise-linear gradient of per-vertex values, one 3-vector per face.

    grad chi_c = (n x e_c) / (2 area) with e_c the edge opposite corner c,
    so the gradient lies in the face plane.
    """
    verts, faces = mesh.vertices, mesh.faces
    fn, fa = face_normals_areas(verts, faces)
    vals = np.asarray(values, dtype=float)
    p = verts[faces]
    grad = np.zeros((faces.shape[0], 3))
    for c in range(3):
        e = p[:, (c + 2) % 3] - p[:, (c + 1) % 3]
        grad += vals[faces[:, c], None] * np.cross(fn, e)
    return grad / (2.0 * fa)[:, None]


def vertex_gradients(mesh, values):
    """Face gradients averaged to vertices with flat-area weights."""
    _, fa = face_normals_areas(mesh.vertices, mesh.faces)
    grad = face_gradients(mesh, values)
    V = mesh.n_vertices
    out = np.zeros((V, 3))
    wsum = np.bincount(mesh.faces.reshape(-1), weights=np.repeat(fa, 3),
                       minlength=V)
    for k in range(3):
        out[:, k] = np.bincount(
            mesh.faces.reshape(-1),
            weights=np.repeat(grad[:, k] * fa, 3),
            minlength=V,
        )
    return out / wsum[:, None]


def quadric_fit(mesh, normals=None):
    """Per-vertex quadric over the two-ring in the local normal frame.

    Fits z = a x^2 + b xy + c y^2 + d x + e y and returns (frames, coeffs)
    with frames (V,3,3) rows (e1, e2, normal) and coeffs (V,5).
    """
    verts = mesh.vertices
    topo = mesh.topology
    if normals is None:
        normals = vertex_normals(mesh)
    V = verts.shape[0]
    # tangent frame: seed with the axis least aligned with the normal
    seed = np.eye(3)[np.argmin(np.abs(normals), axis=1)]
    e1 = seed - normals * np.einsum("ij,ij->i", seed, normals)[:, None]
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(normals, e1)

    nbr = topo.two_ring
    cnt = topo.two_ring_count
    mask = np.arange(nbr.shape[1])[None, :] < cnt[:, None]
    d = verts[nbr] - verts[:, None, :]  # (V, K, 3)
    lx = np.einsum("vkj,vj->vk", d, e1)
    ly = np.einsum("vkj,vj->vk", d, e2)
    lz = np.einsum("vkj,vj->vk", d, normals)
    # condition the normal equations on the local length scale
    scale = np.sqrt(np.sum((lx * lx + ly * ly + lz * lz) * mask, axis=1)
                    / np.maximum(cnt, 1))
    scale = np.maximum(scale, 1e-300)
    lx, ly, lz = lx / scale[:, None], ly / scale[:, None], lz / scale[:, None]

    cols = np.stack([lx * lx, lx * ly, ly * ly, lx, ly], axis=-1)  # (V,K,5)
    w = mask.astype(float)
    G = np.einsum("vka,vkb,vk->vab", cols, cols, w)
    rhs = np.einsum("vka,vk,vk->va", cols, lz, w)
    G += 1e-12 * np.eye(5)
    coeffs = np.linalg.solve(G, rhs[..., None])[..., 0]
    # undo the scaling: quadratic terms pick up 1/scale, linear ones none
    coeffs[:, :3] /= scale[:, None]
    frames = np.stack([e1, e2, normals], axis=1)
    return frames, coeffs


# bivariate monomial exponents through degree 6 (constant first), for the
# jet fit; even top degree matches the stencil symmetry
_JET_EXPS = np.array(
    [(a, n - a) for n in range(7) for a in range(n, -1, -1)],
    dtype=np.int64,
)


def _jet_eval(coeffs, x, y, dx=0, dy=0):
    """Evaluate a d^dx d^dy derivative of the quartic jet at (x, y)."""
    out = 0.0
    for k, (a, b) in enumerate(_JET_EXPS):
        if a < dx or b < dy:
            continue
        fac = 1.0
        for i in range(dx):
            fac *= a - i
        for i in range(dy):
            fac *= b - i
        term = fac * coeffs[..., k]
        ea, eb = a - dx, b - dy
        if ea:
            term = term * x**ea
        if eb:
            term = term * y**eb
        out = out + term
    return out


@dataclass
class JetFields:
    """Support function, curvatures and their surface derivatives."""

    u: np.ndarray        # support of the full field, curved metric
    h: np.ndarray        # mean curvature, curved metric
    a2: np.ndarray       # |A|^2, curved metric
    nu_flat: np.ndarray  # patch unit normal (flat), outward
    grad_u: np.ndarray   # flat surface gradients (ambient 3-vectors)
    grad_h: np.ndarray
    lap_u: np.ndarray    # flat Laplace-Beltrami values
    lap_h: np.ndarray


def jet_fields(mesh, geom, pair, xi_now, normals=None):
    """Per-vertex u/H fields and their surface operators from one local fit.

    The mean curvature is second order in position and its Laplacian
    fourth; chaining per-vertex fits through nodal fields stacks their
    rough error and the second pass diverges under refinement.  Instead a
    single degree-six height fit over the four-ring defines an analytic
    patch; u and H are evaluated on the patch and differentiated there
    (machine-accurate composition), so only the one smooth truncation
    error survives.
    """
    verts = mesh.vertices
    topo = mesh.topology
    if normals is None:
        normals = vertex_normals(mesh)
    seed = np.eye(3)[np.argmin(np.abs(normals), axis=1)]
    e1 = seed - normals * np.einsum("ij,ij->i", seed, normals)[:, None]
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(normals, e1)

    nbr, cnt = topo.ring(4)
    mask = np.arange(nbr.shape[1])[None, :] < cnt[:, None]
    d = verts[nbr] - verts[:, None, :]
    lx = np.einsum("vkj,vj->vk", d, e1)
    ly = np.einsum("vkj,vj->vk", d, e2)
    lz = np.einsum("vkj,vj->vk", d, normals)
    scale = np.sqrt(np.sum((lx * lx + ly * ly + lz * lz) * mask, axis=1)
                    / np.maximum(cnt, 1))
    scale = np.maximum(scale, 1e-300)
    lx, ly, lz = lx / scale[:, None], ly / scale[:, None], lz / scale[:, None]

    cols = lx[..., None] ** _JET_EXPS[:, 0] * ly[..., None] ** _JET_EXPS[:, 1]
    w = mask.astype(float)
    G = np.einsum("vka,vkb,vk->vab", cols, cols, w)
    G += 1e-12 * np.eye(_JET_EXPS.shape[0])
    rhs = np.einsum("vka,vk,vk->va", cols, lz, w)
    co = np.linalg.solve(G, rhs[..., None])[..., 0]  # scaled height jet

    # 3x3 patch grid in scaled coordinates; physical derivative = /scale^k
    delta = 1e-3
    off = delta * np.array([-1.0, 0.0, 1.0])
    gx = np.repeat(off, 3)[None, :]  # (1, 9)
    gy = np.tile(off, 3)[None, :]
    co9 = co[:, None, :]
    hpatch = _jet_eval(co9, gx, gy)                   # scaled height
    h1p = _jet_eval(co9, gx, gy, dx=1)
    h2p = _jet_eval(co9, gx, gy, dy=1)
    h11p = _jet_eval(co9, gx, gy, dx=2) / scale[:, None]
    h12p = _jet_eval(co9, gx, gy, dx=1, dy=1) / scale[:, None]
    h22p = _jet_eval(co9, gx, gy, dy=2) / scale[:, None]

    pts = (
        verts[:, None, :]
        + (scale[:, None] * gx)[..., None] * e1[:, None, :]
        + (scale[:, None] * gy)[..., None] * e2[:, None, :]
        + (scale[:, None] * hpatch)[..., None] * normals[:, None, :]
    )
    wp = np.sqrt(1.0 + h1p**2 + h2p**2)
    nu_p = (
        normals[:, None, :] - h1p[..., None] * e1[:, None, :]
        - h2p[..., None] * e2[:, None, :]
    ) / wp[..., None]
    # outward-positive sum convention: sphere patch h ~ -|xi|^2/(2r)
    hbar = -(
        (1.0 + h2p**2) * h11p
        - 2.0 * h1p * h2p * h12p
        + (1.0 + h1p**2) * h22p
    ) / wp**3

    flat = pts.reshape(-1, 3)
    fv = geom.f(flat).reshape(pts.shape[:2])
    gfv = geom.grad_f(flat).reshape(pts.shape)
    nu_f = np.einsum("vkj,vkj->vk", nu_p, gfv)
    xfull = pair.full(flat, xi_now).reshape(pts.shape)
    upatch = np.exp(fv) * np.einsum("vkj,vkj->vk", xfull, nu_p)
    hpatch_g = (hbar + 2.0 * nu_f) / np.exp(fv)

    # grid index (i, j) -> 3*(i+1) + (j+1); FD in scaled coords, then /scale^k
    def fd(F):
        f1 = (F[:, 7] - F[:, 1]) / (2.0 * delta) / scale
        f2 = (F[:, 5] - F[:, 3]) / (2.0 * delta) / scale
        f11 = (F[:, 7] - 2.0 * F[:, 4] + F[:, 1]) / delta**2 / scale**2
        f22 = (F[:, 5] - 2.0 * F[:, 4] + F[:, 3]) / delta**2 / scale**2
        f12 = (F[:, 8] - F[:, 6] - F[:, 2] + F[:, 0]) / (4.0 * delta**2) \
            / scale**2
        return F[:, 4], f1, f2, f11, f12, f22

    # graph metric at the patch center
    hx, hy = h1p[:, 4], h2p[:, 4]
    hxx, hxy, hyy = h11p[:, 4], h12p[:, 4], h22p[:, 4]
    wsq = 1.0 + hx * hx + hy * hy
    g11 = 1.0 - hx * hx / wsq
    g12 = -hx * hy / wsq
    g22 = 1.0 - hy * hy / wsq
    trace_h = g11 * hxx + 2.0 * g12 * hxy + g22 * hyy
    tau1 = e1 + hx[:, None] * normals
    tau2 = e2 + hy[:, None] * normals

    def surface_ops(F):
        f0, f1, f2, f11, f12, f22 = fd(F)
        lap = g11 * f11 + 2.0 * g12 * f12 + g22 * f22
        lap -= (trace_h / wsq) * (hx * f1 + hy * f2)
        gu1 = g11 * f1 + g12 * f2
        gu2 = g12 * f1 + g22 * f2
        grad = gu1[:, None] * tau1 + gu2[:, None] * tau2
        return f0, grad, lap

    u0, grad_u, lap_u = surface_ops(upatch)
    h0, grad_h, lap_h = surface_ops(hpatch_g)

    # |A|^2 from the center shape operator: S = g^{-1} b, b_ij = -h_ij / W
    wc = np.sqrt(wsq)
    b11, b12, b22 = -hxx / wc, -hxy / wc, -hyy / wc
    det_g = wsq  # det(I + hh^T) = 1 + |h|^2
    tr_s = g11 * b11 + 2.0 * g12 * b12 + g22 * b22
    det_s = (b11 * b22 - b12 * b12) / det_g
    a2_flat = tr_s * tr_s - 2.0 * det_s
    nu_fc = nu_f[:, 4]
    efc = np.exp(fv[:, 4])
    a2 = (a2_flat + 2.0 * tr_s * nu_fc + 2.0 * nu_fc**2) / efc**2
    return JetFields(
        u=u0, h=h0, a2=a2, nu_flat=nu_p[:, 4],
        grad_u=grad_u, grad_h=grad_h, lap_u=lap_u, lap_h=lap_h,
    )


def principal_curvatures_flat(mesh, normals=None):
    """Flat principal curvatures (k1 >= k2) from the quadric fit.

    Outward-positive convention: a round sphere of radius r gives +1/r.
    """
    frames, co = quadric_fit(mesh, normals)
    a, b, c, d, e = (co[:, k] for k in range(5))
    gsq = d * d + e * e
    denom = np.sqrt(1.0 + gsq)
    # shape operator of a graph at (0,0) with gradient (d,e)
    h11, h12, h22 = 2.0 * a, b, 2.0 * c
    i11, i12, i22 = 1.0 + d * d, d * e, 1.0 + e * e
    det_i = i11 * i22 - i12 * i12
    s11 = (i22 * h11 - i12 * h12) / (det_i * denom)
    s12 = (i22 * h12 - i12 * h22) / (det_i * denom)
    s21 = (i11 * h12 - i12 * h11) / (det_i * denom)
    s22 = (i11 * h22 - i12 * h12) / (det_i * denom)
    tr = s11 + s22
    det = s11 * s22 - s12 * s21
    disc = np.sqrt(np.maximum(0.0, tr * tr - 4.0 * det))
    # height grows opposite to the outward normal on a convex patch
    k1 = -(tr - disc) / 2.0
    k2 = -(tr + disc) / 2.0
    return k1, k2, frames, co


# --------------------------------------------------------------------------
# curved-metric geometry bundle
# --------------------------------------------------------------------------


@dataclass
class VertexGeometry:
    """Per-vertex geometric data of a mesh snapshot in the curved metric."""

    f: np.ndarray            # conformal exponent at vertices
    nu_flat: np.ndarray      # flat unit normals (outward)
    nu_f: np.ndarray         # normal derivative nu_flat(f)
    H_flat: np.ndarray       # flat mean curvature (sum convention)
    H: np.ndarray            # curved mean curvature
    k1: np.ndarray           # curved principal curvatures (None if skipped)
    k2: np.ndarray
    u_perp: np.ndarray       # support of the dilation
    u_top: np.ndarray        # support of the rotation
    u: np.ndarray            # scheduled support u_perp + xi * u_top
    phi: np.ndarray
    lam: np.ndarray
    Lam: np.ndarray
    area_flat: np.ndarray    # mixed Voronoi cell areas, flat
    area_g: np.ndarray       # curved cell areas exp(2f) * flat
    dilation_norm: np.ndarray  # |D|_g at vertices


def mesh_geometry(mesh, geom, pair, xi_now=1.0, with_curvatures=True):
    """Assemble the per-vertex geometry bundle for the current snapshot."""
    from . import ckv

    verts = mesh.vertices
    f_v = geom.f(verts)
    ef = np.exp(f_v)
    nu = vertex_normals(mesh)
    areas = mixed_voronoi_areas(verts, mesh.faces)
    lap_x = cotan_laplacian_apply(mesh, verts, areas)
    H_flat = -np.einsum("ij,ij->i", lap_x, nu)
    nu_f = np.einsum("ij,ij->i", nu, geom.grad_f(verts))
    H = (H_flat + 2.0 * nu_f) / ef

    if with_curvatures:
        k1f, k2f, _, _ = principal_curvatures_flat(mesh, nu)
        k1 = (k1f + nu_f) / ef
        k2 = (k2f + nu_f) / ef
    else:
        k1 = k2 = None

    u_perp = ef * np.einsum("ij,ij->i", verts, nu)
    u_top = ef * np.einsum("ij,ij->i", pair.rotation(verts), nu)
    u = u_perp + xi_now * u_top

    return VertexGeometry(
        f=f_v,
        nu_flat=nu,
        nu_f=nu_f,
        H_flat=H_flat,
        H=H,
        k1=k1,
        k2=k2,
        u_perp=u_perp,
        u_top=u_top,
        u=u,
        phi=ckv.phi(geom, verts),
        lam=ckv.lam(geom, verts),
        Lam=ckv.Lam(geom, verts),
        area_flat=areas,
        area_g=np.exp(2.0 * f_v) * areas,
        dilation_norm=ckv.dilation_norm_g(geom, verts),
    )


# --------------------------------------------------------------------------
# area and volume quadrature
# --------------------------------------------------------------------------


def enclosed_volume_flat(mesh):
    p0 = mesh.vertices[mesh.faces[:, 0]]
    p1 = mesh.vertices[mesh.faces[:, 1]]
    p2 = mesh.vertices[mesh.faces[:, 2]]
    return float(np.sum(np.einsum("ij,ij->i", p0, np.cross(p1, p2))) / 6.0)


def surface_area(mesh, geom):
    """Curved area: flat face areas times a 3-point rule on exp(2f).

    Edge-midpoint quadrature, exact for quadratic integrands per face.
    """
    v, faces = mesh.vertices, mesh.faces
    _, fa = face_normals_areas(v, faces)
    p0, p1, p2 = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    total = 0.0
    for qa, qb in ((p0, p1), (p1, p2), (p2, p0)):
        mid = 0.5 * (qa + qb)
        geom.require_in_domain(mid, what="area quadrature node")
        total += np.sum(fa * np.exp(2.0 * geom.f(mid))) / 3.0
    return float(total)


def enclosed_volume(mesh, geom):
    """Curved volume of the region bounded by the mesh around the origin.

    Signed tetrahedra against the chart origin with the 4-point quadratic
    rule on exp(3f).  Quadrature nodes are strictly interior, so only the
    outer chart boundary is checked.
    """
    v, faces = mesh.vertices, mesh.faces
    p = np.stack(
        [np.zeros_like(v[faces[:, 0]]), v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]],
        axis=1,
    )  # (F, 4, 3)
    signed = np.einsum(
        "ij,ij->i", p[:, 1], np.cross(p[:, 2], p[:, 3])
    ) / 6.0
    total = 0.0
    for q in range(4):
        node = np.einsum("k,fkj->fj", _TET_BARY[q], p)
        outer = geom.outer_distance(node)
        if np.any(outer <= 0.0):
            from .errors import DomainExit

            raise DomainExit(
                f"volume quadrature node left the {geom.name} outer boundary"
            )
        total += np.sum(signed * np.exp(3.0 * geom.f(node))) / 4.0
    return float(total)


# --------------------------------------------------------------------------
# quality and smoothing
# --------------------------------------------------------------------------


@dataclass
class MeshQuality:
    min_angle_deg: float
    max_edge_ratio: float
    min_area: float

    def degenerate(self, min_angle=1.0, max_ratio=50.0):
        return self.min_angle_deg < min_angle or self.max_edge_ratio > max_ratio


def quality(mesh):
    v, faces = mesh.vertices, mesh.faces
    p = v[faces]
    edges = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ],
        axis=1,
    )
    _, fa = face_normals_areas(v, faces)
    cot = _face_cotans(v, faces)
    angles = np.arctan2(1.0, cot)  # corner angles in (0, pi)
    return MeshQuality(
        min_angle_deg=float(np.degrees(np.min(angles))),
        max_edge_ratio=float(np.max(edges.max(axis=1) / edges.min(axis=1))),
        min_area=float(np.min(fa)),
    )


def tangential_smooth(mesh, strength=0.5):
    """Move vertices toward the area-weighted one-ring centroid, tangentially,
    then re-project onto the local quadric so the shape is kept to 2nd order.
    """
    verts = mesh.vertices
    topo = mesh.topology
    areas = mixed_voronoi_areas(verts, mesh.faces)
    nbr, cnt = topo.one_ring, topo.one_ring_count
    mask = (np.arange(nbr.shape[1])[None, :] < cnt[:, None]).astype(float)
    w = areas[nbr] * mask
    centroid = np.einsum("vk,vkj->vj", w, verts[nbr]) / np.sum(w, axis=1)[:, None]

    normals = vertex_normals(mesh)
    frames, co = quadric_fit(mesh, normals)
    delta = centroid - verts
    delta_t = delta - normals * np.einsum("ij,ij->i", delta, normals)[:, None]
    lx = strength * np.einsum("ij,ij->i", delta_t, frames[:, 0])
    ly = strength * np.einsum("ij,ij->i", delta_t, frames[:, 1])
    lz = co[:, 0] * lx * lx + co[:, 1] * lx * ly + co[:, 2] * ly * ly \
        + co[:, 3] * lx + co[:, 4] * ly
    new = verts + lx[:, None] * frames[:, 0] + ly[:, None] * frames[:, 1] \
        + lz[:, None] * frames[:, 2]
    # restore the flat enclosed volume exactly (homogeneous of degree 3 in
    # the vertex positions), so smoothing is a pure re-parameterization
    vol0 = enclosed_volume_flat(mesh)
    vol1 = enclosed_volume_flat(mesh.with_vertices(new))
    new = new * (vol0 / vol1) ** (1.0 / 3.0)
    return mesh.with_vertices(new)


# --------------------------------------------------------------------------
# OBJ export
# --------------------------------------------------------------------------


def radial_intersections(mesh, dirs, chunk=512):
    """Intersection points of origin rays with a starshaped mesh.

    Moller-Trumbore per ray/face pair; each ray must hit the surface
    (starshapedness about the chart origin), else MeshDegenerate.
    """
    dirs = np.asarray(dirs, dtype=float)
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    out = np.empty(dirs.shape[0])
    eps = 1e-12
    for start in range(0, dirs.shape[0], chunk):
        d = dirs[start:start + chunk]
        pvec = np.cross(d[:, None, :], e2[None, :, :])
        det = np.einsum("fj,rfj->rf", e1, pvec)
        inv = np.where(np.abs(det) > eps, 1.0 / np.where(det == 0, 1.0, det), 0.0)
        uu = -np.einsum("fj,rfj->rf", v0, pvec) * inv
        qvec = np.cross(-v0[None, :, :], e1[None, :, :])
        vv = np.einsum("rj,rfj->rf", d, qvec) * inv
        tt = np.einsum("fj,rfj->rf", e2, qvec) * inv
        hit = (
            (np.abs(det) > eps)
            & (uu >= -1e-9) & (vv >= -1e-9) & (uu + vv <= 1.0 + 1e-9)
            & (tt > eps)
        )
        tt = np.where(hit, tt, np.inf)
        best = np.min(tt, axis=1)
        if np.any(~np.isfinite(best)):
            raise MeshDegenerate("a radial ray missed the mesh")
        out[start:start + chunk] = best
    return out[:, None] * dirs


def save_obj(mesh, path, t=0.0, frame=0):
    """Wavefront OBJ snapshot with the flow time stamped in the header."""
    with open(path, "w") as fh:
        fh.write(f"# ckflow t={t:.9g} frame={frame}\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
