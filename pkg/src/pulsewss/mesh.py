"""Triangle surface meshes and discrete differential operators.

A :class:`TriMesh` is an indexed triangle surface with per-vertex flags
marking open boundary loops. All operators treat the mesh as immutable;
fields over the mesh are plain numpy arrays of length ``n_vertices``
(scalars ``(N,)``, vectors ``(N, 3)``).
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import NumericalError, ValidationError

__all__ = [
    "TriMesh",
    "load_obj",
    "save_obj",
    "obj_dumps",
    "cotangent_laplacian",
    "face_areas_normals",
    "vertex_normals",
    "surface_gradient",
    "knn_graph",
    "boundary_loops",
    "euler_characteristic",
    "mesh_edges",
]


class TriMesh:
    """Indexed triangle surface with boundary markers.

    Parameters
    ----------
    vertices : (N, 3) array of float, positions in mm.
    faces : (F, 3) array of int, CCW-oriented vertex index triples.
    validate : skip the manifold/degeneracy checks when the topology is
        already known-good (e.g. reconstructed from a validated template).
    """

    __slots__ = ("vertices", "faces", "boundary_flags", "_edge_cache")

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError(f"vertices must be (N, 3), got {self.vertices.shape}")
        if self.faces.size == 0:
            raise ValidationError("empty mesh: no faces")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError(f"faces must be (F, 3), got {self.faces.shape}")
        self._edge_cache = None
        if validate:
            self._validate()
        self.boundary_flags = self._compute_boundary_flags()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def like(cls, template: "TriMesh", vertices) -> "TriMesh":
        """New mesh with ``template``'s topology and fresh vertex positions."""
        m = cls.__new__(cls)
        m.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        if m.vertices.shape != template.vertices.shape:
            raise ValidationError("vertex array shape does not match template")
        m.faces = template.faces
        m.boundary_flags = template.boundary_flags
        m._edge_cache = template._edge_cache
        return m

    # -- basic queries ---------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a sorted (E, 2) int array."""
        if self._edge_cache is None:
            e = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            e.sort(axis=1)
            self._edge_cache = np.unique(e, axis=0)
        return self._edge_cache

    def same_topology(self, other: "TriMesh") -> bool:
        return self.faces.shape == other.faces.shape and np.array_equal(
            self.faces, other.faces
        )

    # -- internals --------------------------------------------------------------

    def _validate(self) -> None:
        n = self.n_vertices
        if self.faces.min() < 0 or self.faces.max() >= n:
            raise ValidationError(
                f"face index out of range [0, {n}): min {self.faces.min()}, "
                f"max {self.faces.max()}"
            )
        degen = (
            (self.faces[:, 0] == self.faces[:, 1])
            | (self.faces[:, 1] == self.faces[:, 2])
            | (self.faces[:, 2] == self.faces[:, 0])
        )
        if degen.any():
            raise ValidationError(
                f"degenerate face (repeated vertex index) at face {int(np.argmax(degen))}"
            )
        e, counts = _edge_face_counts(self.faces)
        over = counts > 2
        if over.any():
            i = int(np.argmax(over))
            raise ValidationError(
                f"non-manifold edge ({e[i, 0]}, {e[i, 1]}): shared by {counts[i]} faces"
            )

    def _compute_boundary_flags(self) -> np.ndarray:
        e, counts = _edge_face_counts(self.faces)
        flags = np.zeros(self.n_vertices, dtype=bool)
        be = e[counts == 1]
        flags[be.ravel()] = True
        return flags


def _edge_face_counts(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def mesh_edges(mesh: TriMesh) -> np.ndarray:
    return mesh.edges()


def euler_characteristic(mesh: TriMesh) -> int:
    """V - E + F of the surface complex."""
    return mesh.n_vertices - len(mesh.edges()) + mesh.n_faces


def boundary_loops(mesh: TriMesh) -> list[list[int]]:
    """Open boundary loops as vertex cycles (empty for closed meshes)."""
    e, counts = _edge_face_counts(mesh.faces)
    be = e[counts == 1]
    if len(be) == 0:
        return []
    nbr: dict[int, list[int]] = {}
    for a, b in be:
        nbr.setdefault(int(a), []).append(int(b))
        nbr.setdefault(int(b), []).append(int(a))
    loops = []
    seen: set[int] = set()
    for start in sorted(nbr):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        prev, cur = -1, start
        while True:
            nxt = [w for w in nbr[cur] if w != prev]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            if cur == start:
                break
            loop.append(cur)
            seen.add(cur)
        loops.append(loop)
    return loops


# -- OBJ I/O (subset: `v x y z` and `f i j k`, 1-based) ---------------------


def load_obj(path) -> TriMesh:
    """Read the OBJ subset; other line types are ignored with a warning."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    ignored = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) != 4:
                    raise ValidationError(f"{path}:{lineno}: malformed vertex line")
                try:
                    verts.append([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(parts) != 4:
                    raise ValidationError(
                        f"{path}:{lineno}: face must have exactly 3 vertex indices"
                    )
                try:
                    idx = [int(x) for x in parts[1:]]
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: bad face index") from exc
                if any(i < 1 for i in idx):
                    raise ValidationError(
                        f"{path}:{lineno}: face indices are 1-based, got {idx}"
                    )
                faces.append([i - 1 for i in idx])
            else:
                ignored += 1
    if ignored:
        warnings.warn(f"{path}: ignored {ignored} non-v/f line(s)", stacklevel=2)
    if not faces:
        raise ValidationError(f"{path}: empty mesh (no faces)")
    return TriMesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64))


def obj_dumps(mesh: TriMesh) -> str:
    """Serialize to the OBJ subset with 9 significant digits."""
    out = []
    for x, y, z in mesh.vertices:
        out.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        out.append(f"f {a + 1} {b + 1} {c + 1}")
    return "\n".join(out) + "\n"


def save_obj(path, mesh: TriMesh) -> None:
    Path(path).write_text(obj_dumps(mesh))


# -- differential operators ---------------------------------------------------


def face_areas_normals(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-face areas and unit normals; raises on zero-area faces."""
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(cross, axis=1)
    if (norm <= 0).any():
        raise ValidationError(
            f"zero-area face {int(np.argmax(norm <= 0))}: cotangent weights undefined"
        )
    return 0.5 * norm, cross / norm[:, None]


def cotangent_laplacian(mesh: TriMesh) -> sparse.csr_matrix:
    """Cotangent Laplacian of the surface, PSD convention.

    Off-diagonal L[i, j] = -(cot a_ij + cot b_ij) / 2 over the triangles
    opposite edge (i, j); diagonal entries make every row sum to zero.
    """
    v = mesh.vertices
    f = mesh.faces
    n = mesh.n_vertices
    face_areas_normals(mesh)  # zero-area guard, names the face

    rows, cols, vals = [], [], []
    for corner in range(3):
        i = f[:, (corner + 1) % 3]
        j = f[:, (corner + 2) % 3]
        k = f[:, corner]
        u = v[i] - v[k]
        w = v[j] - v[k]
        cot = np.einsum("ij,ij->i", u, w) / np.linalg.norm(np.cross(u, w), axis=1)
        half = 0.5 * cot
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([-half, -half])
    L = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    L = L - sparse.diags(np.asarray(L.sum(axis=1)).ravel())
    return L.tocsr()


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted unit vertex normals; raises on isolated vertices."""
    v = mesh.vertices
    f = mesh.faces
    # unnormalized face cross product = 2 * area * unit normal
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    np.add.at(acc, f[:, 0], cross)
    np.add.at(acc, f[:, 1], cross)
    np.add.at(acc, f[:, 2], cross)
    norm = np.linalg.norm(acc, axis=1)
    incident = np.zeros(mesh.n_vertices, dtype=bool)
    incident[f.ravel()] = True
    if not incident.all():
        raise ValidationError(f"isolated vertex {int(np.argmin(incident))}: no incident face")
    if (norm <= 0).any():
        raise NumericalError(
            f"vertex {int(np.argmax(norm <= 0))}: incident face normals cancel"
        )
    return acc / norm[:, None]


def surface_gradient(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Per-vertex surface gradient of a piecewise-linear scalar field.

    The per-face linear-interpolation gradient is averaged onto vertices
    with face-area weights. ``field`` may be ``(N,)`` for one scalar field
    or ``(N, m)`` for a stack; the result is ``(N, 3)`` or ``(N, m, 3)``.
    """
    field = np.asarray(field, dtype=np.float64)
    squeeze = field.ndim == 1
    vals = field[:, None] if squeeze else field
    if vals.shape[0] != mesh.n_vertices:
        raise ValidationError("field length does not match vertex count")

    v = mesh.vertices
    f = mesh.faces
    areas, normals = face_areas_normals(mesh)
    # gradient of hat function at corner c: (n x opposite_edge) / (2A)
    grad_f = np.zeros((mesh.n_faces, vals.shape[1], 3))
    for corner in range(3):
        opp = v[f[:, (corner + 2) % 3]] - v[f[:, (corner + 1) % 3]]
        gphi = np.cross(normals, opp) / (2.0 * areas[:, None])
        grad_f += vals[f[:, corner]][:, :, None] * gphi[:, None, :]

    acc = np.zeros((mesh.n_vertices, vals.shape[1], 3))
    wsum = np.zeros(mesh.n_vertices)
    contrib = grad_f * areas[:, None, None]
    for corner in range(3):
        np.add.at(acc, f[:, corner], contrib)
        np.add.at(wsum, f[:, corner], areas)
    acc /= np.maximum(wsum, 1e-300)[:, None, None]
    return acc[:, 0, :] if squeeze else acc


def knn_graph(points: np.ndarray, k: int) -> np.ndarray:
    """Symmetric k-nearest-neighbor edges, distance ties broken by index.

    Returns unique undirected pairs as a sorted (E, 2) int array. Used to
    demonstrate the false-connection failure mode of kNN graphs; mesh
    connectivity should come from faces, not from this.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k >= n:
        raise ValidationError(f"k={k} must be smaller than point count {n}")
    if k == 0:
        return np.empty((0, 2), dtype=np.int64)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable sort: equal distances resolve to the lower index
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    src = np.repeat(np.arange(n), k)
    pairs = np.stack([src, nbrs.ravel()], axis=1)
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)
