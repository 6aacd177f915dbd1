"""Conforming simplicial meshes (triangles in 2D, tetrahedra in 3D).

A mesh carries the adjacency structures a vertex-centered scheme needs:
per-node element patches, node neighbor sets, faces with their left/right
elements, and the boundary node set.  Meshes are immutable after
construction and safe for concurrent read-only use.
"""

import math

import numpy as np

from .errors import ConfigError, SingularElementError

# Tolerance for the total-measure consistency check at construction.
_MEASURE_RTOL = 1e-12


class Mesh:
    """Simplicial mesh with vertex-scheme adjacency structures.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    vertices : (M, dim) float array
        Node coordinates in meters.
    elements : (n_el, dim+1) int array
        Vertex indices of each simplex.
    element_volumes : (n_el,) float array
        |E| for each element (area in 2D, volume in 3D).
    node_patches : list of int arrays
        For each node i, indices of the elements forming its patch.
    neighbor_sets : list of int arrays
        For each node i, sorted indices of nodes sharing an element with i
        (i itself excluded).
    boundary_nodes : int array
        Nodes lying on faces owned by exactly one element.
    face_nodes : (n_faces, dim) int array
        Sorted vertex indices of each face (edge in 2D, triangle in 3D).
    face_elements : (n_faces, 2) int array
        The one or two elements sharing each face; -1 marks the outside.
    """

    def __init__(self, dim, vertices, elements, expected_measure=None):
        vertices = np.asarray(vertices, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        if dim not in (2, 3):
            raise ConfigError(f"mesh dimension must be 2 or 3, got {dim}")
        if vertices.ndim != 2 or vertices.shape[1] != dim:
            raise ConfigError(f"vertex array must be (M, {dim})")
        if elements.ndim != 2 or elements.shape[1] != dim + 1:
            raise ConfigError(f"element array must be (n_el, {dim + 1})")
        if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
            raise ConfigError("element refers to a vertex index out of range")

        self.dim = dim
        self.vertices = vertices
        self.elements = elements
        self.element_volumes = _simplex_volumes(vertices, elements, dim)
        if np.any(self.element_volumes <= 0.0):
            bad = int(np.argmin(self.element_volumes))
            raise SingularElementError(f"element {bad} has non-positive volume")

        used = np.zeros(len(vertices), dtype=bool)
        used[elements.ravel()] = True
        if not used.all():
            raise ConfigError("mesh contains vertices that belong to no element")

        if expected_measure is not None:
            total = float(self.element_volumes.sum())
            if not math.isclose(total, expected_measure, rel_tol=_MEASURE_RTOL):
                raise ConfigError(
                    f"element volumes sum to {total!r}, expected {expected_measure!r}"
                )

        self.node_patches = _node_patches(elements, len(vertices))
        self.neighbor_sets = _neighbor_sets(elements, len(vertices))
        self.face_nodes, self.face_elements, self.element_faces = _face_table(elements, dim)
        boundary_faces = self.face_elements[:, 1] < 0
        self.boundary_nodes = np.unique(self.face_nodes[boundary_faces].ravel())

    @property
    def num_nodes(self):
        return len(self.vertices)

    @property
    def num_elements(self):
        return len(self.elements)

    def element_coords(self, e):
        """Coordinates of element e's vertices, shape (dim+1, dim)."""
        return self.vertices[self.elements[e]]

    def centroids(self):
        """Element centroids, shape (n_el, dim)."""
        return self.vertices[self.elements].mean(axis=1)


def _simplex_volumes(vertices, elements, dim):
    coords = vertices[elements]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    dets = np.linalg.det(edges)
    return np.abs(dets) / math.factorial(dim)


def _node_patches(elements, num_nodes):
    n_el, nloc = elements.shape
    elem_of_entry = np.repeat(np.arange(n_el), nloc)
    flat = elements.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_nodes = flat[order]
    sorted_elems = elem_of_entry[order]
    starts = np.searchsorted(sorted_nodes, np.arange(num_nodes + 1))
    return [sorted_elems[starts[i]:starts[i + 1]] for i in range(num_nodes)]

def _neighbor_sets(elements, num_nodes):
    nloc = elements.shape[1]
    pairs_i = []
    pairs_j = []
    for a in range(nloc):
        for b in range(nloc):
            if a != b:
                pairs_i.append(elements[:, a])
                pairs_j.append(elements[:, b])
    i = np.concatenate(pairs_i)
    j = np.concatenate(pairs_j)
    key = i.astype(np.int64) * num_nodes + j
    uniq = np.unique(key)
    ui = uniq // num_nodes
    uj = uniq % num_nodes
    starts = np.searchsorted(ui, np.arange(num_nodes + 1))
    return [uj[starts[n]:starts[n + 1]] for n in range(num_nodes)]


def _face_table(elements, dim):
    # Faces are the (dim)-subsets of each element: drop one local vertex.
    # element_faces[e, a] is the face of e opposite its local vertex a.
    n_el, nloc = elements.shape
    faces = []
    for drop in range(nloc):
        keep = [a for a in range(nloc) if a != drop]
        faces.append(elements[:, keep])
    faces = np.concatenate(faces, axis=0)
    faces = np.sort(faces, axis=1)
    owner = np.tile(np.arange(n_el), nloc)

    uniq, inverse = np.unique(faces, axis=0, return_inverse=True)
    face_elems = np.full((len(uniq), 2), -1, dtype=np.int64)
    for entry, face_id in enumerate(inverse):
        if face_elems[face_id, 0] < 0:
            face_elems[face_id, 0] = owner[entry]
        else:
            face_elems[face_id, 1] = owner[entry]
    element_faces = inverse.reshape(nloc, n_el).T.copy()
    return uniq, face_elems, element_faces


def build_structured(nx, lengths):
    """Structured simplicial mesh of a box domain.

    In 2D each grid cell is split into two right triangles; in 3D each
    hexahedral cell is split into six tetrahedra sharing the cell's main
    diagonal, which keeps the subdivision conforming across cells.

    Parameters
    ----------
    nx : tuple of int
        Cell counts per axis, all >= 1.
    lengths : tuple of float
        Domain extents in meters, all > 0.
    """
    nx = tuple(int(v) for v in nx)
    lengths = tuple(float(v) for v in lengths)
    if len(nx) != len(lengths) or len(nx) not in (2, 3):
        raise ConfigError("nx and lengths must both have 2 or 3 entries")
    if any(n < 1 for n in nx):
        raise ConfigError(f"cell counts must be >= 1, got {nx}")
    if any(l <= 0 for l in lengths):
        raise ConfigError(f"domain extents must be > 0, got {lengths}")

    dim = len(nx)
    axes = [np.linspace(0.0, lengths[a], nx[a] + 1) for a in range(dim)]
    measure = math.prod(lengths)

    if dim == 2:
        xs, ys = axes
        xv, yv = np.meshgrid(xs, ys, indexing="xy")
        vertices = np.column_stack([xv.ravel(), yv.ravel()])
        stride = nx[0] + 1

        def vid(i, j):
            return j * stride + i

        elems = []
        for j in range(nx[1]):
            for i in range(nx[0]):
                v00 = vid(i, j)
                v10 = vid(i + 1, j)
                v01 = vid(i, j + 1)
                v11 = vid(i + 1, j + 1)
                elems.append((v00, v10, v11))
                elems.append((v00, v11, v01))
        return Mesh(2, vertices, elems, expected_measure=measure)

    xs, ys, zs = axes
    xv, yv, zv = np.meshgrid(xs, ys, zs, indexing="ij")
    # x-fastest node numbering, matching the 2D layout on each z-plane
    vertices = np.column_stack(
        [xv.transpose(2, 1, 0).ravel(), yv.transpose(2, 1, 0).ravel(), zv.transpose(2, 1, 0).ravel()]
    )
    sx = nx[0] + 1
    sxy = (nx[0] + 1) * (nx[1] + 1)

    def vid3(i, j, k):
        return k * sxy + j * sx + i

    # Six tetrahedra per cell, one per ordering of the axis steps along the
    # main diagonal from (i,j,k) to (i+1,j+1,k+1).
    import itertools

    step_orders = list(itertools.permutations(range(3)))
    elems = []
    for k in range(nx[2]):
        for j in range(nx[1]):
            for i in range(nx[0]):
                base = np.array([i, j, k])
                for order in step_orders:
                    corners = [base.copy()]
                    cur = base.copy()
                    for axis in order:
                        cur = cur.copy()
                        cur[axis] += 1
                        corners.append(cur)
                    elems.append(tuple(vid3(*c) for c in corners))
    return Mesh(3, vertices, elems, expected_measure=measure)


def p1_gradients(element_coords):
    """Constant gradients of the barycentric (hat) basis on one simplex.

    Returns a (dim+1, dim) array whose rows are the gradients of the basis
    functions attached to the element's vertices in order.  Rows sum to the
    zero vector (partition of unity).
    """
    coords = np.asarray(element_coords, dtype=float)
    nloc, dim = coords.shape
    if nloc != dim + 1:
        raise SingularElementError(f"expected {dim + 1} vertices for a {dim}D simplex")
    edges = (coords[1:] - coords[0]).T
    det = np.linalg.det(edges)
    if abs(det) < 1e-300 or not np.isfinite(det):
        raise SingularElementError("degenerate element: zero volume")
    inv = np.linalg.inv(edges)
    grads = np.empty((nloc, dim))
    grads[1:] = inv
    grads[0] = -inv.sum(axis=0)
    return grads


def element_p1_gradients(mesh):
    """Per-element basis gradients for the whole mesh, shape (n_el, dim+1, dim)."""
    coords = mesh.vertices[mesh.elements]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    # rows of inv(T) are the gradients of the non-anchor basis functions,
    # with T holding the edge vectors as columns
    inv = np.linalg.inv(edges.transpose(0, 2, 1))
    nloc = mesh.dim + 1
    grads = np.empty((mesh.num_elements, nloc, mesh.dim))
    grads[:, 1:, :] = inv
    grads[:, 0, :] = -inv.sum(axis=1)
    return grads


def interpolate_nodal(f, mesh):
    """Nodal vector of f evaluated at the mesh vertices."""
    return np.array([float(f(*v)) for v in mesh.vertices])


def read_mesh(path):
    """Read a mesh from the plain ASCII format.

    Format: header line ``dim M numElements``, then M coordinate lines,
    then element lines of dim+1 zero-based vertex indices.
    """
    with open(path) as fh:
        tokens_per_line = [line.split() for line in fh]
    lines = [(n + 1, t) for n, t in enumerate(tokens_per_line) if t]
    if not lines:
        raise ConfigError(f"{path}: empty mesh file")
    header_line, header = lines[0]
    if len(header) != 3:
        raise ConfigError(f"{path}:{header_line}: header must be 'dim M numElements'")
    try:
        dim, num_nodes, num_elements = (int(v) for v in header)
    except ValueError as exc:
        raise ConfigError(f"{path}:{header_line}: bad header: {exc}") from None
    body = lines[1:]
    if len(body) != num_nodes + num_elements:
        raise ConfigError(
            f"{path}: expected {num_nodes} coordinate and {num_elements} element lines, "
            f"found {len(body)}"
        )
    vertices = []
    for lineno, toks in body[:num_nodes]:
        if len(toks) != dim:
            raise ConfigError(f"{path}:{lineno}: expected {dim} coordinates")
        try:
            vertices.append([float(v) for v in toks])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    elements = []
    for lineno, toks in body[num_nodes:]:
        if len(toks) != dim + 1:
            raise ConfigError(f"{path}:{lineno}: expected {dim + 1} vertex indices")
        try:
            elements.append([int(v) for v in toks])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return Mesh(dim, np.array(vertices), np.array(elements))
