"""Method-of-snapshots POD over functions living in different nested spaces.

Snapshots may each carry their own mesh, as long as all meshes descend from
one initial triangulation.  Inner products between two snapshots are exact:
both functions are transferred to the overlay of their meshes and paired
there.  The snapshot Gramian is built either on the overlay of *all* meshes
at once (``common``) or entry by entry on pairwise overlays (``pairwise``);
the two strategies produce the same matrix up to roundoff.

Basis functions are stored as snapshot combinations: row r of the
coefficient matrix holds the weights that combine the snapshots into the
r-th orthonormal basis function.  With the ``common`` strategy the basis is
additionally materialized as vertex values on the overlay mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from . import mesh as meshmod
from .errors import AdapodError, FormatError, SpaceError

GRAMIAN_STRATEGIES = ("common", "pairwise")

_BASIS_HEADER = "ADAPODBASIS 1"
_SET_HEADER = "ADAPODSET 1"


@dataclass
class SnapshotSet:
    """Snapshots plus their (parameter, time index) labels.

    All snapshot spaces must share the initial mesh and the inner product;
    time indices are ``None`` for stationary problems.
    """

    functions: list
    labels: list

    def __post_init__(self):
        if not self.functions:
            raise AdapodError("a snapshot set needs at least one snapshot")
        if len(self.labels) != len(self.functions):
            raise AdapodError("one label per snapshot required")
        first = self.functions[0].space
        for fn in self.functions:
            if fn.space.mesh.initial_hash != first.mesh.initial_hash:
                raise AdapodError(
                    "snapshots do not share the initial triangulation")
            if fn.space.ip_kind != first.ip_kind:
                raise AdapodError("snapshots mix inner products")

    @property
    def n(self):
        return len(self.functions)

    @property
    def ip_kind(self):
        return self.functions[0].space.ip_kind

    @property
    def initial_hash(self):
        return self.functions[0].space.mesh.initial_hash

    def meshes(self):
        return [fn.space.mesh for fn in self.functions]


def cross_inner_product(u, v, kind=None):
    """Exact inner product of two functions over a shared initial mesh."""
    kind = kind or u.space.ip_kind
    ov = meshmod.overlay(u.space.mesh, v.space.mesh)
    ip = fem.vertex_ip_matrix(ov, kind)
    wu = _vertex_values_on(u, ov)
    wv = _vertex_values_on(v, ov)
    return float(wu @ (ip @ wv))


def _vertex_values_on(fn, ov_mesh):
    if fn.space.mesh is ov_mesh:
        return fn.vertex_values()
    p = meshmod.prolongation(fn.space.mesh, ov_mesh)
    return p.apply(fn.vertex_values())


def common_space(snaps):
    """Overlay mesh of all snapshot meshes and all snapshots on it.

    Returns ``(mesh, w)`` where column n of ``w`` holds the vertex values
    of snapshot n on the overlay mesh.
    """
    meshes = snaps.meshes()
    ov = meshes[0]
    for m in meshes[1:]:
        ov = meshmod.overlay(ov, m)
    w = np.empty((ov.n_vertices, snaps.n))
    for n, fn in enumerate(snaps.functions):
        w[:, n] = _vertex_values_on(fn, ov)
    return ov, w


def gramian_common(snaps):
    """Snapshot Gramian computed in one shot on the common overlay mesh."""
    ov, w = common_space(snaps)
    ip = fem.vertex_ip_matrix(ov, snaps.ip_kind)
    g = w.T @ (ip @ w)
    return 0.5 * (g + g.T)


def gramian_pairwise(snaps):
    """Snapshot Gramian from pairwise overlays (upper triangle, mirrored)."""
    n = snaps.n
    g = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            g[i, j] = cross_inner_product(snaps.functions[i],
                                          snaps.functions[j])
            g[j, i] = g[i, j]
    return g


def validate_gramian(g):
    n = g.shape[0]
    if g.shape != (n, n):
        raise AdapodError("gramian must be square")
    scale = float(np.abs(g).max())
    if scale > 0 and float(np.abs(g - g.T).max()) > 1e-12 * scale:
        raise AdapodError("gramian is not symmetric to 1e-12 relative")
    ev = np.linalg.eigvalsh(0.5 * (g + g.T))
    if ev[-1] > 0 and ev[0] < -1e-10 * ev[-1]:
        raise AdapodError(
            f"gramian is not positive semidefinite (min eig {ev[0]:.3e})")


def eig_sym(g):
    """Full symmetric eigendecomposition, eigenvalues descending."""
    g = np.asarray(g, dtype=float)
    scale = float(np.abs(g).max()) if g.size else 0.0
    if scale > 0 and float(np.abs(g - g.T).max()) > 1e-10 * scale:
        raise AdapodError("matrix is not symmetric")
    lam, vec = np.linalg.eigh(0.5 * (g + g.T))
    return lam[::-1].copy(), vec[:, ::-1].copy()


@dataclass
class PodBasis:
    """Orthonormal basis as snapshot combinations.

    ``coeffs[r, n]`` is the weight of snapshot n in basis function r (the
    eigenvector component divided by the square root of the eigenvalue).
    ``overlay_mesh``/``overlay_coeffs`` hold the basis as vertex values on
    the overlay of all snapshot meshes when it has been materialized.
    """

    eigenvalues: np.ndarray
    coeffs: np.ndarray
    ip_kind: str
    initial_hash: str
    gramian: np.ndarray | None = None
    overlay_mesh: object = None
    overlay_coeffs: np.ndarray | None = None

    @property
    def rank(self):
        return len(self.eigenvalues)

    @property
    def n_snapshots(self):
        return self.coeffs.shape[1]

    def orthonormality_defect(self, gramian=None):
        """Max deviation of the basis Gram matrix from the identity."""
        g = self.gramian if gramian is None else gramian
        if g is None:
            raise AdapodError("no gramian available")
        d = self.coeffs @ g @ self.coeffs.T - np.eye(self.rank)
        return float(np.abs(d).max()) if self.rank else 0.0


def compute_pod(snaps, strategy="common", eps_rank=1e-12):
    """Build a POD basis from the snapshot Gramian eigendecomposition.

    The rank keeps the eigenvalues above ``eps_rank`` times the largest
    one; an all-zero snapshot set yields a valid empty basis.  With the
    ``common`` strategy the basis vertex values on the overlay mesh are
    stored alongside the combination coefficients.
    """
    if strategy not in GRAMIAN_STRATEGIES:
        raise AdapodError(f"unknown gramian strategy {strategy!r}")
    overlay_mesh = None
    w = None
    if strategy == "common":
        overlay_mesh, w = common_space(snaps)
        ip = fem.vertex_ip_matrix(overlay_mesh, snaps.ip_kind)
        g = w.T @ (ip @ w)
        g = 0.5 * (g + g.T)
    else:
        g = gramian_pairwise(snaps)
    validate_gramian(g)
    lam, vec = eig_sym(g)
    d = int(np.sum(lam > eps_rank * lam[0])) if lam[0] > 0 else 0
    coeffs = vec[:, :d].T / np.sqrt(lam[:d])[:, None]
    basis = PodBasis(
        eigenvalues=lam[:d].copy(),
        coeffs=coeffs,
        ip_kind=snaps.ip_kind,
        initial_hash=snaps.initial_hash,
        gramian=g,
        overlay_mesh=overlay_mesh,
        overlay_coeffs=(w @ coeffs.T) if overlay_mesh is not None else None,
    )
    return basis


def ensure_common_coeffs(basis, snaps):
    """Materialize the basis on the overlay mesh when missing."""
    if basis.overlay_coeffs is None:
        if basis.initial_hash != snaps.initial_hash:
            raise AdapodError("basis and snapshots disagree on the "
                              "initial triangulation")
        overlay_mesh, w = common_space(snaps)
        basis.overlay_mesh = overlay_mesh
        basis.overlay_coeffs = w @ basis.coeffs.T
    return basis


def ensure_gramian(basis, snaps, strategy="common"):
    """Recompute the snapshot Gramian when the basis has none attached."""
    if basis.gramian is None:
        basis.gramian = (gramian_common(snaps) if strategy == "common"
                         else gramian_pairwise(snaps))
    return basis


def project(basis, snaps, u, r):
    """Coefficients of the orthogonal projection onto the first r modes.

    Evaluated through snapshot combinations: only inner products between
    ``u`` and the snapshots are required, never the overlay space.
    """
    if not 1 <= r <= basis.rank:
        raise AdapodError(f"mode count {r} outside 1..{basis.rank}")
    if u.space.mesh.initial_hash != basis.initial_hash:
        raise AdapodError("function does not share the snapshots' "
                          "initial triangulation")
    pairings = np.array([cross_inner_product(fn, u, basis.ip_kind)
                         for fn in snaps.functions])
    return basis.coeffs[:r] @ pairings


def truncation_energy(basis, r):
    """Energy of the discarded modes: the eigenvalue tail beyond ``r``."""
    if not 0 <= r <= basis.rank:
        raise AdapodError(f"mode count {r} outside 0..{basis.rank}")
    return float(np.sum(basis.eigenvalues[r:]))


# -- persistence -------------------------------------------------------------


def save_basis(basis, path):
    lines = [_BASIS_HEADER, f"{basis.n_snapshots} {basis.rank}"]
    lines.extend(repr(v) for v in basis.eigenvalues.tolist())
    for row in basis.coeffs.tolist():
        lines.append(" ".join(repr(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_basis(path, ip_kind="", initial_hash=""):
    """Read a basis file; inner product and mesh lineage come from usage."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != _BASIS_HEADER:
        raise FormatError(f"{path}: missing '{_BASIS_HEADER}' header")
    try:
        n, d = map(int, lines[1].split())
        lam = np.array([float(v) for v in lines[2:2 + d]])
        rows = [np.array([float(v) for v in ln.split()])
                for ln in lines[2 + d:2 + 2 * d]]
        coeffs = np.vstack(rows) if rows else np.zeros((0, n))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed basis file ({exc})") from exc
    if len(lam) != d or coeffs.shape != (d, n):
        raise FormatError(f"{path}: inconsistent basis dimensions")
    return PodBasis(eigenvalues=lam, coeffs=coeffs, ip_kind=ip_kind,
                    initial_hash=initial_hash)


def save_snapshots(snaps, out_dir):
    """Write one mesh/function file pair per snapshot plus an index."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    lines = [_SET_HEADER, snaps.ip_kind, str(snaps.n)]
    for i, (fn, (mu, k)) in enumerate(zip(snaps.functions, snaps.labels)):
        mesh_name = f"snap_{i:04d}.mesh"
        fun_name = f"snap_{i:04d}.fun"
        meshmod.save_mesh(fn.space.mesh, os.path.join(out_dir, mesh_name))
        fem.save_function(fn, os.path.join(out_dir, fun_name))
        lines.append(f"{mu!r} {k if k is not None else '-'} "
                     f"{mesh_name} {fun_name}")
    with open(os.path.join(out_dir, "set.idx"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_snapshots(set_dir):
    import os

    idx = os.path.join(set_dir, "set.idx")
    with open(idx) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != _SET_HEADER:
        raise FormatError(f"{idx}: missing '{_SET_HEADER}' header")
    try:
        ip_kind = lines[1]
        count = int(lines[2])
        functions = []
        labels = []
        for ln in lines[3:3 + count]:
            mu_s, k_s, mesh_name, fun_name = ln.split()
            mesh = meshmod.load_mesh(os.path.join(set_dir, mesh_name))
            space = fem.build_space(mesh, ip=ip_kind)
            functions.append(
                fem.load_function(os.path.join(set_dir, fun_name), space))
            labels.append((float(mu_s),
                           None if k_s == "-" else int(k_s)))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{idx}: malformed snapshot index ({exc})") from exc
    if len(functions) != count:
        raise FormatError(f"{idx}: expected {count} snapshots, "
                          f"found {len(functions)}")
    return SnapshotSet(functions, labels)
