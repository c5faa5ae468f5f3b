"""Conforming triangle meshes with newest-vertex bisection.

A mesh keeps its full refinement forest: the root triangles of the initial
triangulation plus every bisection descendant.  The active triangulation is
the set of forest leaves.  Triangles are stored as vertex triples
``(v0, v1, v2)`` in counterclockwise order with the refinement edge fixed to
``(v0, v1)``; bisecting inserts the midpoint ``m`` of that edge and produces
the children ``(v2, v0, m)`` and ``(v1, v2, m)``, so ``m`` is the newest
vertex of both children.

Two meshes refined from the same initial triangulation have structurally
identical roots, which makes the forests comparable node by node.  Overlay
(the smallest common refinement) is the node-wise union of two forests, and
nodal transfer between nested meshes is exact because every vertex records
the edge endpoints it was created from.

Meshes are immutable; all operations return new meshes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .errors import FormatError, MeshError

BOUNDARY_TAGS = (
    "dirichlet",
    "neumann",
    "periodic_left",
    "periodic_right",
    "periodic_bottom",
    "periodic_top",
)

#: periodic tags come in (master, slave) pairs that must refine in lockstep
PERIODIC_PAIRS = (
    ("periodic_left", "periodic_right"),
    ("periodic_bottom", "periodic_top"),
)

_MESH_HEADER = "ADAPODMESH 1"


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


class Mesh:
    """Immutable conforming triangulation backed by a bisection forest.

    Attributes
    ----------
    vertices : (nv, 2) float array of vertex coordinates.
    tris : (nt, 3) int array over *all* forest nodes; row ``(v0, v1, v2)``
        has its refinement edge on ``(v0, v1)``.
    parent, children, generation, root : forest bookkeeping per node
        (``-1`` marks "none").
    edge_tags : dict mapping current boundary leaf edges to tag strings.
    """

    def __init__(self, vertices, tris, parent, children, generation, root,
                 vertex_parents, edge_tags, root_edge_tags, n_roots,
                 n_root_vertices, initial_hash):
        self.vertices = vertices
        self.tris = tris
        self.parent = parent
        self.children = children
        self.generation = generation
        self.root = root
        self.vertex_parents = vertex_parents
        self.edge_tags = edge_tags
        self.root_edge_tags = root_edge_tags
        self.n_roots = n_roots
        self.n_root_vertices = n_root_vertices
        self.initial_hash = initial_hash
        self.leaf_ids = np.flatnonzero(children[:, 0] < 0)
        self._cache = {}

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_nodes(self):
        return self.tris.shape[0]

    @property
    def n_leaves(self):
        return self.leaf_ids.shape[0]

    @property
    def triangles(self):
        """Leaf triangles as an (n_leaves, 3) vertex-index array."""
        return self.tris[self.leaf_ids]

    def triangle_areas(self):
        """Signed areas of the leaf triangles (all positive)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def content_hash(self):
        """Hash of the full mesh content (forest, coordinates, tags)."""
        h = hashlib.sha256()
        h.update(self.initial_hash.encode())
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.tris).tobytes())
        for (a, b), tag in sorted(self.edge_tags.items()):
            h.update(f"{a},{b},{tag};".encode())
        return h.hexdigest()

    def __repr__(self):
        return (f"Mesh(n_vertices={self.n_vertices}, n_leaves={self.n_leaves},"
                f" n_nodes={self.n_nodes})")


def _initial_hash(vertices, tris, n_roots, root_edge_tags):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(vertices).tobytes())
    h.update(np.ascontiguousarray(tris[:n_roots]).tobytes())
    for (a, b), tag in sorted(root_edge_tags.items()):
        h.update(f"{a},{b},{tag};".encode())
    return h.hexdigest()


class _Forest:
    """Mutable construction state behind the public mesh operations."""

    def __init__(self):
        self.vx = []
        self.vy = []
        self.vkey = {}
        self.vparents = []
        self.tris = []
        self.parent = []
        self.child0 = []
        self.child1 = []
        self.generation = []
        self.root = []
        self.edge_tris = {}
        self.edge_tags = {}
        self.root_edge_tags = {}
        self.n_roots = 0
        self.n_root_vertices = 0
        self.initial_hash = None

    # -- construction -----------------------------------------------------

    @classmethod
    def from_mesh(cls, mesh):
        f = cls()
        f.vx = mesh.vertices[:, 0].tolist()
        f.vy = mesh.vertices[:, 1].tolist()
        f.vkey = {(x, y): i for i, (x, y) in enumerate(zip(f.vx, f.vy))}
        f.vparents = [tuple(p) for p in mesh.vertex_parents.tolist()]
        f.tris = [tuple(t) for t in mesh.tris.tolist()]
        f.parent = mesh.parent.tolist()
        f.child0 = mesh.children[:, 0].tolist()
        f.child1 = mesh.children[:, 1].tolist()
        f.generation = mesh.generation.tolist()
        f.root = mesh.root.tolist()
        f.edge_tags = dict(mesh.edge_tags)
        f.root_edge_tags = dict(mesh.root_edge_tags)
        f.n_roots = mesh.n_roots
        f.n_root_vertices = mesh.n_root_vertices
        f.initial_hash = mesh.initial_hash
        for t in mesh.leaf_ids.tolist():
            f._register_leaf(t)
        return f

    @classmethod
    def from_initial_of(cls, mesh):
        """Fresh forest holding only the initial triangulation of ``mesh``."""
        f = cls()
        nrv = mesh.n_root_vertices
        f.vx = mesh.vertices[:nrv, 0].tolist()
        f.vy = mesh.vertices[:nrv, 1].tolist()
        f.vkey = {(x, y): i for i, (x, y) in enumerate(zip(f.vx, f.vy))}
        f.vparents = [(-1, -1)] * nrv
        f.tris = [tuple(t) for t in mesh.tris[:mesh.n_roots].tolist()]
        f.parent = [-1] * mesh.n_roots
        f.child0 = [-1] * mesh.n_roots
        f.child1 = [-1] * mesh.n_roots
        f.generation = [0] * mesh.n_roots
        f.root = list(range(mesh.n_roots))
        f.edge_tags = dict(mesh.root_edge_tags)
        f.root_edge_tags = dict(mesh.root_edge_tags)
        f.n_roots = mesh.n_roots
        f.n_root_vertices = nrv
        f.initial_hash = mesh.initial_hash
        for t in range(mesh.n_roots):
            f._register_leaf(t)
        return f

    def _register_leaf(self, t):
        v0, v1, v2 = self.tris[t]
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            self.edge_tris.setdefault(_edge_key(a, b), []).append(t)

    def _unregister_leaf(self, t):
        v0, v1, v2 = self.tris[t]
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            key = _edge_key(a, b)
            lst = self.edge_tris[key]
            lst.remove(t)
            if not lst:
                del self.edge_tris[key]

    def is_leaf(self, t):
        return self.child0[t] < 0

    def _midpoint(self, v0, v1):
        mx = 0.5 * (self.vx[v0] + self.vx[v1])
        my = 0.5 * (self.vy[v0] + self.vy[v1])
        key = (mx, my)
        m = self.vkey.get(key)
        if m is None:
            m = len(self.vx)
            self.vx.append(mx)
            self.vy.append(my)
            self.vkey[key] = m
            self.vparents.append((v0, v1))
        return m

    def raw_split(self, t):
        """Bisect leaf ``t`` at its refinement edge, without closure."""
        v0, v1, v2 = self.tris[t]
        m = self._midpoint(v0, v1)
        self._unregister_leaf(t)
        key = _edge_key(v0, v1)
        tag = self.edge_tags.pop(key, None)
        if tag is not None:
            self.edge_tags[_edge_key(v0, m)] = tag
            self.edge_tags[_edge_key(m, v1)] = tag
        c0 = len(self.tris)
        c1 = c0 + 1
        gen = self.generation[t] + 1
        rt = self.root[t]
        for child in ((v2, v0, m), (v1, v2, m)):
            self.tris.append(child)
            self.parent.append(t)
            self.child0.append(-1)
            self.child1.append(-1)
            self.generation.append(gen)
            self.root.append(rt)
        self.child0[t] = c0
        self.child1[t] = c1
        self._register_leaf(c0)
        self._register_leaf(c1)
        return c0, c1

    def refine(self, t):
        """Bisect leaf ``t`` with conformity closure (no hanging nodes)."""
        stack = [t]
        guard = 0
        while stack:
            guard += 1
            if guard > 4 * (len(self.tris) + 8):
                raise MeshError("refinement closure did not terminate")
            s = stack[-1]
            if not self.is_leaf(s):
                stack.pop()
                continue
            v0, v1 = self.tris[s][0], self.tris[s][1]
            key = _edge_key(v0, v1)
            nbrs = [x for x in self.edge_tris[key] if x != s]
            nbr = nbrs[0] if nbrs else None
            if nbr is not None:
                n0, n1 = self.tris[nbr][0], self.tris[nbr][1]
                if _edge_key(n0, n1) != key:
                    stack.append(nbr)
                    continue
            stack.pop()
            self.raw_split(s)
            if nbr is not None:
                self.raw_split(nbr)

    def split_edge(self, a, b):
        """Refine until leaf edge ``(a, b)`` is bisected."""
        key = _edge_key(a, b)
        for _ in range(4):
            if key not in self.edge_tris:
                return
            self.refine(self.edge_tris[key][0])
        raise MeshError(f"edge {key} survived repeated refinement")

    def _periodic_spans(self, tag):
        """Leaf edges carrying ``tag`` as {(lo, hi) span: (a, b) edge}."""
        spans = {}
        axis = None
        for (a, b), t in self.edge_tags.items():
            if t != tag:
                continue
            if axis is None:
                axis = 1 if self.vx[a] == self.vx[b] else 0
            ca = self.vx[a] if axis == 0 else self.vy[a]
            cb = self.vx[b] if axis == 0 else self.vy[b]
            spans[(min(ca, cb), max(ca, cb))] = (a, b)
        return spans

    def periodic_fixpoint(self):
        """Keep paired periodic boundaries subdivided identically."""
        tags_present = set(self.edge_tags.values())
        pairs = [p for p in PERIODIC_PAIRS
                 if p[0] in tags_present or p[1] in tags_present]
        for _ in range(10000):
            changed = False
            for tag_a, tag_b in pairs:
                sa = self._periodic_spans(tag_a)
                sb = self._periodic_spans(tag_b)
                cuts = sorted({c for lo, hi in list(sa) + list(sb)
                               for c in (lo, hi)})
                for spans in (sa, sb):
                    for (lo, hi), (a, b) in spans.items():
                        if any(lo < c < hi for c in cuts):
                            self.split_edge(a, b)
                            changed = True
            if not changed:
                return
        raise MeshError("periodic lockstep refinement did not terminate")

    def to_mesh(self):
        vertices = np.column_stack([np.asarray(self.vx, dtype=np.float64),
                                    np.asarray(self.vy, dtype=np.float64)])
        tris = np.asarray(self.tris, dtype=np.int64)
        children = np.column_stack([np.asarray(self.child0, dtype=np.int64),
                                    np.asarray(self.child1, dtype=np.int64)])
        return Mesh(
            vertices=vertices,
            tris=tris,
            parent=np.asarray(self.parent, dtype=np.int64),
            children=children,
            generation=np.asarray(self.generation, dtype=np.int64),
            root=np.asarray(self.root, dtype=np.int64),
            vertex_parents=np.asarray(self.vparents, dtype=np.int64),
            edge_tags=dict(self.edge_tags),
            root_edge_tags=dict(self.root_edge_tags),
            n_roots=self.n_roots,
            n_root_vertices=self.n_root_vertices,
            initial_hash=self.initial_hash,
        )


def new_structured(nx, ny, xlim=(0.0, 1.0), ylim=(0.0, 1.0), tags=None):
    """Structured triangulation of an axis-aligned rectangle.

    Each of the ``nx * ny`` grid cells is split along its diagonal into two
    triangles.  The refinement edge of every root triangle is its longest
    edge (ties broken by the lowest opposite vertex index), which here is
    always the cell diagonal, so the initial edge assignment is compatible.

    Parameters
    ----------
    nx, ny : number of cells per direction (>= 1).
    xlim, ylim : rectangle extents, ``lo < hi``.
    tags : optional dict with keys ``left``, ``right``, ``bottom``, ``top``
        assigning a boundary tag per side; defaults to all ``dirichlet``.
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"subdivision counts must be positive, got {nx}x{ny}")
    x0, x1 = map(float, xlim)
    y0, y1 = map(float, ylim)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {xlim} x {ylim}")
    side_tags = {"left": "dirichlet", "right": "dirichlet",
                 "bottom": "dirichlet", "top": "dirichlet"}
    if tags:
        unknown = set(tags) - set(side_tags)
        if unknown:
            raise MeshError(f"unknown sides {sorted(unknown)}")
        side_tags.update(tags)
    for side, tag in side_tags.items():
        if tag not in BOUNDARY_TAGS:
            raise MeshError(f"unknown boundary tag {tag!r} on side {side}")
    for ta, tb in PERIODIC_PAIRS:
        used = [s for s, t in side_tags.items() if t in (ta, tb)]
        if used and sorted(side_tags[s] for s in used) != sorted((ta, tb)):
            raise MeshError(f"periodic tags {ta}/{tb} must appear as a pair")

    xs = [x0 + i * (x1 - x0) / nx for i in range(nx + 1)]
    ys = [y0 + j * (y1 - y0) / ny for j in range(ny + 1)]

    f = _Forest()
    for y in ys:
        for x in xs:
            f.vkey[(x, y)] = len(f.vx)
            f.vx.append(x)
            f.vy.append(y)
            f.vparents.append((-1, -1))

    def vid(i, j):
        return j * (nx + 1) + i

    def oriented(a, b, c):
        # rotate so the longest edge (ties: lowest opposite vertex id)
        # sits on slots (0, 1); cyclic rotation keeps the orientation
        tri = (a, b, c)
        pts = [(f.vx[v], f.vy[v]) for v in tri]
        best = None
        for k in range(3):
            p, q = pts[(k + 1) % 3], pts[(k + 2) % 3]
            l2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
            if best is None or l2 > best[0] or (
                    l2 == best[0] and tri[k] < tri[best[1]]):
                best = (l2, k)
        k = best[1]
        return (tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k])

    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            for tri in (oriented(a, b, c), oriented(a, c, d)):
                f.tris.append(tri)
                f.parent.append(-1)
                f.child0.append(-1)
                f.child1.append(-1)
                f.generation.append(0)
                f.root.append(len(f.tris) - 1)

    f.n_roots = len(f.tris)
    f.n_root_vertices = len(f.vx)
    for t in range(f.n_roots):
        f._register_leaf(t)

    for j in range(ny):
        f.edge_tags[_edge_key(vid(0, j), vid(0, j + 1))] = side_tags["left"]
        f.edge_tags[_edge_key(vid(nx, j), vid(nx, j + 1))] = side_tags["right"]
    for i in range(nx):
        f.edge_tags[_edge_key(vid(i, 0), vid(i + 1, 0))] = side_tags["bottom"]
        f.edge_tags[_edge_key(vid(i, ny), vid(i + 1, ny))] = side_tags["top"]
    f.root_edge_tags = dict(f.edge_tags)

    mesh = f.to_mesh()
    mesh.initial_hash = _initial_hash(mesh.vertices[:mesh.n_root_vertices],
                                      mesh.tris, mesh.n_roots,
                                      mesh.root_edge_tags)
    return mesh


def bisect(mesh, marked):
    """Bisect the marked leaf triangles and restore conformity.

    ``marked`` holds indices into ``mesh.triangles`` (the leaf list).  Every
    marked triangle is bisected at its refinement edge; neighbors are
    refined recursively until no hanging nodes remain, and paired periodic
    boundary edges are kept subdivided in lockstep.  The input mesh is not
    modified.
    """
    marked = sorted(set(int(k) for k in marked))
    if marked and (marked[0] < 0 or marked[-1] >= mesh.n_leaves):
        bad = [k for k in marked if k < 0 or k >= mesh.n_leaves]
        raise MeshError(f"marked indices {bad} outside leaf range "
                        f"0..{mesh.n_leaves - 1}")
    if not marked:
        return mesh
    f = _Forest.from_mesh(mesh)
    nodes = mesh.leaf_ids[marked]
    for node in nodes.tolist():
        if f.is_leaf(node):
            f.refine(node)
    f.periodic_fixpoint()
    return f.to_mesh()


def uniform_refine(mesh):
    """Refine every triangle once in each direction (halves the mesh size)."""
    once = bisect(mesh, range(mesh.n_leaves))
    return bisect(once, range(once.n_leaves))


def _require_same_initial(a, b):
    if a.initial_hash != b.initial_hash:
        raise MeshError("meshes do not share the same initial triangulation")


def is_refinement(fine, coarse):
    """True if every forest node of ``coarse`` is present in ``fine``."""
    _require_same_initial(fine, coarse)
    stack = list(zip(range(coarse.n_roots), range(coarse.n_roots)))
    while stack:
        c, f = stack.pop()
        if coarse.children[c, 0] < 0:
            continue
        if fine.children[f, 0] < 0:
            return False
        stack.append((coarse.children[c, 0], fine.children[f, 0]))
        stack.append((coarse.children[c, 1], fine.children[f, 1]))
    return True


def overlay(a, b):
    """Smallest common refinement: the node-wise union of the two forests.

    Both meshes must descend from the same initial triangulation.  If one
    forest already contains the other, that mesh object is returned as-is.
    """
    if a is b:
        return a
    _require_same_initial(a, b)
    if is_refinement(a, b):
        return a
    if is_refinement(b, a):
        return b
    f = _Forest.from_initial_of(a)
    stack = [(r, r, r) for r in range(a.n_roots)]
    while stack:
        o, x, y = stack.pop()
        in_a = x >= 0 and a.children[x, 0] >= 0
        in_b = y >= 0 and b.children[y, 0] >= 0
        if not (in_a or in_b):
            continue
        c0, c1 = f.raw_split(o)
        xc = a.children[x] if in_a else (-1, -1)
        yc = b.children[y] if in_b else (-1, -1)
        stack.append((c0, xc[0], yc[0]))
        stack.append((c1, xc[1], yc[1]))
    return f.to_mesh()


@dataclass(frozen=True)
class Prolongation:
    """Exact nodal transfer from a mesh to one of its refinements.

    ``matrix`` is sparse of shape (target vertices, source vertices); each
    row sums to one.  Applying it to nodal values of a piecewise-linear
    function on the source mesh yields the nodal values of the *same*
    function on the target mesh.
    """

    source: Mesh
    target: Mesh
    matrix: csr_matrix

    def apply(self, values):
        return self.matrix @ np.asarray(values)


def prolongation(source, target):
    """Build the exact nodal embedding of ``source`` into ``target``."""
    if not is_refinement(target, source):
        raise MeshError("target mesh is not a refinement of the source mesh")
    cache_key = ("prolongation", id(source))
    hit = target._cache.get(cache_key)
    if hit is not None:
        return hit
    src_of = {}
    sx = source.vertices[:, 0].tolist()
    sy = source.vertices[:, 1].tolist()
    for i in range(source.n_vertices):
        src_of[(sx[i], sy[i])] = i
    tx = target.vertices[:, 0].tolist()
    ty = target.vertices[:, 1].tolist()
    vp = target.vertex_parents
    rows = []
    indptr = [0]
    indices = []
    data = []
    for v in range(target.n_vertices):
        i = src_of.get((tx[v], ty[v]))
        if i is not None:
            row = {i: 1.0}
        else:
            pa, pb = vp[v]
            row = {}
            for p in (pa, pb):
                for k, w in rows[p].items():
                    row[k] = row.get(k, 0.0) + 0.5 * w
        rows.append(row)
        for k in sorted(row):
            indices.append(k)
            data.append(row[k])
        indptr.append(len(indices))
    mat = csr_matrix((np.asarray(data), np.asarray(indices, dtype=np.int64),
                      np.asarray(indptr, dtype=np.int64)),
                     shape=(target.n_vertices, source.n_vertices))
    result = Prolongation(source=source, target=target, matrix=mat)
    target._cache[cache_key] = result
    return result


# -- persistence -----------------------------------------------------------


def save_mesh(mesh, path):
    """Write the full forest in the versioned ASCII mesh format."""
    lines = [_MESH_HEADER, str(mesh.n_vertices)]
    for x, y in mesh.vertices.tolist():
        lines.append(f"{x!r} {y!r}")
    lines.append(str(mesh.n_nodes))
    parent = mesh.parent.tolist()
    for (v0, v1, v2), p in zip(mesh.tris.tolist(), parent):
        lines.append(f"{v0} {v1} {v2} 0 {p}")
    tags = sorted(mesh.edge_tags.items())
    lines.append(str(len(tags)))
    for (a, b), tag in tags:
        lines.append(f"{a} {b} {tag}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _lift_root_tags(forest_tags, vkey, vx, vy):
    """Recover initial-boundary tags from the tags on leaf edges."""

    def descend(a, b):
        key = _edge_key(a, b)
        if key in forest_tags:
            return forest_tags[key]
        m = vkey.get((0.5 * (vx[a] + vx[b]), 0.5 * (vy[a] + vy[b])))
        if m is None:
            return None
        return descend(a, m) or descend(m, b)

    return descend


def load_mesh(path):
    """Read a mesh written by :func:`save_mesh`."""
    with open(path) as fh:
        raw = fh.read().split("\n")
    pos = 0

    def take():
        nonlocal pos
        while pos < len(raw) and not raw[pos].strip():
            pos += 1
        if pos >= len(raw):
            raise FormatError(f"{path}: unexpected end of file")
        pos += 1
        return raw[pos - 1].strip()

    if take() != _MESH_HEADER:
        raise FormatError(f"{path}: missing '{_MESH_HEADER}' header")
    try:
        nv = int(take())
        verts = np.empty((nv, 2), dtype=np.float64)
        for i in range(nv):
            a, b = take().split()
            verts[i] = (float(a), float(b))
        nt = int(take())
        tris = np.empty((nt, 3), dtype=np.int64)
        parent = np.empty(nt, dtype=np.int64)
        for i in range(nt):
            v0, v1, v2, ref, p = take().split()
            tri = [int(v0), int(v1), int(v2)]
            ref = int(ref)
            tris[i] = tri[ref:] + tri[:ref]
            parent[i] = int(p)
        n_tags = int(take())
        edge_tags = {}
        for _ in range(n_tags):
            a, b, tag = take().split()
            if tag not in BOUNDARY_TAGS:
                raise FormatError(f"{path}: unknown boundary tag {tag!r}")
            edge_tags[_edge_key(int(a), int(b))] = tag
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed mesh file ({exc})") from exc

    children = np.full((nt, 2), -1, dtype=np.int64)
    for i in range(nt):
        p = parent[i]
        if p >= 0:
            children[p, 0 if children[p, 0] < 0 else 1] = i
    generation = np.zeros(nt, dtype=np.int64)
    root = np.arange(nt, dtype=np.int64)
    n_roots = int(np.sum(parent < 0))
    if np.any(parent[:n_roots] >= 0) or np.any(parent[n_roots:] < 0):
        raise FormatError(f"{path}: root triangles must come first")
    for i in range(nt):
        p = parent[i]
        if p >= 0:
            generation[i] = generation[p] + 1
            root[i] = root[p]
    vparents = np.full((nv, 2), -1, dtype=np.int64)
    for t in range(nt):
        c0 = children[t, 0]
        if c0 >= 0:
            m = tris[c0, 2]
            vparents[m] = (tris[t, 0], tris[t, 1])

    vx = verts[:, 0].tolist()
    vy = verts[:, 1].tolist()
    vkey = {(x, y): i for i, (x, y) in enumerate(zip(vx, vy))}
    n_root_vertices = int(tris[:n_roots].max()) + 1 if n_roots else 0
    descend = _lift_root_tags(edge_tags, vkey, vx, vy)
    root_edge_tags = {}
    boundary_count = {}
    for t in range(n_roots):
        v0, v1, v2 = tris[t]
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            boundary_count[_edge_key(a, b)] = \
                boundary_count.get(_edge_key(a, b), 0) + 1
    for (a, b), cnt in boundary_count.items():
        if cnt == 1:
            tag = descend(a, b)
            if tag is None:
                raise FormatError(f"{path}: boundary edge {(a, b)} "
                                  "has no tag")
            root_edge_tags[(a, b)] = tag

    mesh = Mesh(
        vertices=verts, tris=tris, parent=parent, children=children,
        generation=generation, root=root, vertex_parents=vparents,
        edge_tags=edge_tags, root_edge_tags=root_edge_tags,
        n_roots=n_roots, n_root_vertices=n_root_vertices, initial_hash="")
    mesh.initial_hash = _initial_hash(verts[:n_root_vertices], tris, n_roots,
                                      root_edge_tags)
    return mesh
