"""P1 Lagrangian finite elements: spaces, assembly, and full-order solvers.

All integrals are first assembled at the vertex level (one unknown per mesh
vertex, no constraints); constrained operators are obtained by congruence
with the sparse expansion matrix that maps free unknowns to vertex values
(Dirichlet vertices eliminated, periodic vertices identified with their
master).  Mass, stiffness and convection use closed-form element matrices;
loads use the midpoint rule (exact for quadratics) and the convective
trilinear form a four-point rule exact for cubics.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import splu

from . import mesh as meshmod
from .errors import FormatError, NewtonError, SolverError, SpaceError

log = logging.getLogger(__name__)

_FUN_HEADER = "ADAPODFUN 1"

OPERATOR_KINDS = ("mass", "stiffness", "convection_x", "convection_y")
INNER_PRODUCTS = ("h1_semi", "h1_full")

# midpoint rule on the reference triangle: exact for degree 2
_MID_BARY = np.array([[0.5, 0.5, 0.0],
                      [0.0, 0.5, 0.5],
                      [0.5, 0.0, 0.5]])
_MID_W = np.full(3, 1.0 / 3.0)

# four-point rule: exact for degree 3
_DEG3_BARY = np.array([[1 / 3, 1 / 3, 1 / 3],
                       [0.6, 0.2, 0.2],
                       [0.2, 0.6, 0.2],
                       [0.2, 0.2, 0.6]])
_DEG3_W = np.array([-27.0 / 48.0, 25.0 / 48.0, 25.0 / 48.0, 25.0 / 48.0])


def convection_velocity(mu):
    """Transport direction used by the parametrized convection problem."""
    return math.cos(0.25 * math.pi * mu), math.sin(0.25 * math.pi * mu)


# -- element geometry and vertex-level assembly ------------------------------


def _geom(mesh):
    """Per-leaf areas and P1 shape-function gradients (cached on the mesh)."""
    hit = mesh._cache.get("geom")
    if hit is not None:
        return hit
    tri = mesh.triangles
    p = mesh.vertices[tri]
    x = p[:, :, 0]
    y = p[:, :, 1]
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    two_a = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    area = 0.5 * two_a
    grads = np.stack([b, c], axis=2) / two_a[:, None, None]
    out = (tri, p, area, grads)
    mesh._cache["geom"] = out
    return out


def element_stiffness(points):
    """Closed-form P1 stiffness matrix of one triangle (3x2 coordinates)."""
    p = np.asarray(points, dtype=float)
    b = p[[1, 2, 0], 1] - p[[2, 0, 1], 1]
    c = p[[2, 0, 1], 0] - p[[1, 2, 0], 0]
    two_a = p[0, 0] * b[0] + p[1, 0] * b[1] + p[2, 0] * b[2]
    g = np.stack([b, c], axis=1) / two_a
    return 0.5 * two_a * (g @ g.T)


def _scatter(mesh, element_mats):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    mat = coo_matrix((element_mats.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def vertex_operator(mesh, kind):
    """Unconstrained operator with one row/column per mesh vertex.

    ``mass`` is the L2 pairing, ``stiffness`` the gradient pairing, and
    ``convection_x``/``convection_y`` carry the x/y derivative on the
    column (trial) index and the plain value on the row (test) index.
    """
    key = ("vop", kind)
    hit = mesh._cache.get(key)
    if hit is not None:
        return hit
    if kind not in OPERATOR_KINDS:
        raise SpaceError(f"unknown operator kind {kind!r}")
    tri, p, area, grads = _geom(mesh)
    if kind == "mass":
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        mats = area[:, None, None] * base[None, :, :]
    elif kind == "stiffness":
        mats = np.einsum("e,eik,ejk->eij", area, grads, grads)
    else:
        axis = 0 if kind == "convection_x" else 1
        g = grads[:, :, axis]
        mats = (area / 3.0)[:, None, None] * g[:, None, :]
        mats = np.broadcast_to(mats, (len(area), 3, 3)).copy()
    out = _scatter(mesh, mats)
    mesh._cache[key] = out
    return out


def vertex_ip_matrix(mesh, kind):
    """Vertex-level matrix of the chosen inner product."""
    if kind == "h1_semi":
        return vertex_operator(mesh, "stiffness")
    if kind == "h1_full":
        return (vertex_operator(mesh, "mass")
                + vertex_operator(mesh, "stiffness")).tocsr()
    raise SpaceError(f"unknown inner product {kind!r}")


def _eval_field(f, xq, yq):
    if callable(f):
        vals = f(xq, yq)
        return np.broadcast_to(np.asarray(vals, dtype=float), xq.shape)
    return np.full(xq.shape, float(f))


def vertex_load(mesh, f):
    """Vertex-level load vector of ``f`` (constant or callable f(x, y))."""
    tri, p, area, _ = _geom(mesh)
    xq = np.einsum("qk,ek->eq", _MID_BARY, p[:, :, 0])
    yq = np.einsum("qk,ek->eq", _MID_BARY, p[:, :, 1])
    fq = _eval_field(f, xq, yq)
    vals = np.einsum("e,q,eq,qi->ei", area, _MID_W, fq, _MID_BARY)
    return np.bincount(tri.ravel(), weights=vals.ravel(),
                       minlength=mesh.n_vertices)


def vertex_trilinear_apply(mesh, v, w):
    """Vector of the convective form value against every vertex function.

    Entry i equals the integral of ``v * d_x(w) * hat_i`` over the mesh,
    for vertex-value vectors v and w.
    """
    tri, p, area, grads = _geom(mesh)
    gxw = np.einsum("ek,ek->e", grads[:, :, 0], w[tri])
    vq = np.einsum("qk,ek->eq", _DEG3_BARY, v[tri])
    vals = np.einsum("e,e,q,eq,qi->ei", area, gxw, _DEG3_W, vq, _DEG3_BARY)
    return np.bincount(tri.ravel(), weights=vals.ravel(),
                       minlength=mesh.n_vertices)


def vertex_trilinear_jacobian(mesh, u):
    """Derivative of ``vertex_trilinear_apply(mesh, u, u)`` w.r.t. ``u``."""
    tri, p, area, grads = _geom(mesh)
    gx = grads[:, :, 0]
    gxu = np.einsum("ek,ek->e", gx, u[tri])
    uq = np.einsum("qk,ek->eq", _DEG3_BARY, u[tri])
    s_quad = np.einsum("q,qi,qk->ik", _DEG3_W, _DEG3_BARY, _DEG3_BARY)
    part1 = np.einsum("e,ik->eik", area * gxu, s_quad)
    t = np.einsum("q,eq,qi->ei", _DEG3_W, uq, _DEG3_BARY)
    part2 = np.einsum("ei,ek->eik", area[:, None] * t, gx)
    return _scatter(mesh, part1 + part2)


# -- spaces ------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryConditions:
    """Interpretation of mesh boundary tags.

    ``fixed_tags`` get homogeneous Dirichlet treatment (vertex eliminated);
    each ``periodic_pairs`` entry identifies the slave side (second tag)
    with the master side (first tag); any other tag is natural.
    """

    fixed_tags: tuple = ("dirichlet",)
    periodic_pairs: tuple = meshmod.PERIODIC_PAIRS


class FeSpace:
    """P1 space on the leaves of a mesh with constraints applied.

    ``vertex_dof`` maps each vertex to its unknown index (aliased vertices
    share their master's index) or -1 for Dirichlet vertices.
    """

    def __init__(self, mesh, bc, ip_kind, vertex_dof, alias_master, n_dof):
        self.mesh = mesh
        self.bc = bc
        self.ip_kind = ip_kind
        self.vertex_dof = vertex_dof
        self.alias_master = alias_master
        self.n_dof = n_dof
        free = (vertex_dof >= 0) & (alias_master < 0)
        self.dof_vertex = np.flatnonzero(free)
        self._cache = {}

    @property
    def expansion(self):
        """Sparse (n_vertices, n_dof) map from unknowns to vertex values."""
        hit = self._cache.get("expansion")
        if hit is None:
            keep = np.flatnonzero(self.vertex_dof >= 0)
            hit = coo_matrix(
                (np.ones(len(keep)), (keep, self.vertex_dof[keep])),
                shape=(self.mesh.n_vertices, self.n_dof)).tocsr()
            self._cache["expansion"] = hit
        return hit

    def restrict_vertex_values(self, values):
        """Coefficients of the unknowns given consistent vertex values."""
        return np.asarray(values)[self.dof_vertex]

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.mesh.content_hash().encode())
        h.update(repr(sorted(self.bc.fixed_tags)).encode())
        h.update(repr(sorted(self.bc.periodic_pairs)).encode())
        h.update(self.ip_kind.encode())
        return h.hexdigest()

    def __repr__(self):
        return (f"FeSpace(n_dof={self.n_dof}, ip={self.ip_kind!r}, "
                f"mesh={self.mesh!r})")


@dataclass
class FeFunction:
    """Coefficient vector bound to one finite element space."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dof,):
            raise SpaceError(
                f"coefficient length {self.coeffs.shape} does not match "
                f"n_dof={self.space.n_dof}")

    def vertex_values(self):
        return self.space.expansion @ self.coeffs

    def norm_V(self):
        ip = inner_product_matrix(self.space)
        return math.sqrt(max(0.0, float(self.coeffs @ (ip @ self.coeffs))))


def build_space(mesh, bc=None, ip="h1_semi"):
    """Construct a constrained P1 space from the mesh boundary tags."""
    if ip not in INNER_PRODUCTS:
        raise SpaceError(f"unknown inner product {ip!r}")
    bc = bc if bc is not None else BoundaryConditions()
    nv = mesh.n_vertices
    tag_vertices = {}
    for (a, b), tag in mesh.edge_tags.items():
        tag_vertices.setdefault(tag, set()).update((a, b))

    fixed = np.zeros(nv, dtype=bool)
    for tag in bc.fixed_tags:
        for v in tag_vertices.get(tag, ()):
            fixed[v] = True

    alias = {}
    for master_tag, slave_tag in bc.periodic_pairs:
        masters = tag_vertices.get(master_tag, set())
        slaves = tag_vertices.get(slave_tag, set())
        if not masters and not slaves:
            continue
        if not masters or not slaves:
            raise SpaceError(
                f"periodic tags {master_tag}/{slave_tag} must both be "
                "present on the mesh")
        mx = {mesh.vertices[v, 0] for v in masters}
        my = {mesh.vertices[v, 1] for v in masters}
        if len(mx) == 1:
            axis = 1  # master side at constant x, match on y
        elif len(my) == 1:
            axis = 0
        else:
            raise SpaceError(f"boundary tagged {master_tag} is not a "
                             "straight axis-aligned side")
        lookup = {mesh.vertices[v, axis]: v for v in sorted(masters)}
        for s in sorted(slaves):
            m = lookup.get(mesh.vertices[s, axis])
            if m is None:
                raise SpaceError(
                    f"vertex {s} at {tuple(mesh.vertices[s])} on "
                    f"{slave_tag} has no partner with equal "
                    f"{'xy'[axis]} on {master_tag}")
            if m != s:
                alias[s] = m

    alias_master = np.full(nv, -1, dtype=np.int64)
    for s in alias:
        m = alias[s]
        seen = {s}
        while m in alias:
            if m in seen:
                raise SpaceError(f"cyclic periodic identification at {m}")
            seen.add(m)
            m = alias[m]
        if fixed[m]:
            fixed[s] = True
        else:
            alias_master[s] = m
    alias_master[fixed] = -1

    vertex_dof = np.full(nv, -1, dtype=np.int64)
    free = np.flatnonzero(~fixed & (alias_master < 0))
    vertex_dof[free] = np.arange(len(free))
    has_alias = np.flatnonzero(alias_master >= 0)
    vertex_dof[has_alias] = vertex_dof[alias_master[has_alias]]
    return FeSpace(mesh, bc, ip, vertex_dof, alias_master, len(free))


# -- constrained assembly ----------------------------------------------------


def assemble(space, kind):
    """Constrained operator of the requested bilinear form."""
    hit = space._cache.get(("op", kind))
    if hit is not None:
        return hit
    e = space.expansion
    out = (e.T @ vertex_operator(space.mesh, kind) @ e).tocsr()
    space._cache[("op", kind)] = out
    return out


def inner_product_matrix(space):
    hit = space._cache.get("ip")
    if hit is None:
        e = space.expansion
        hit = (e.T @ vertex_ip_matrix(space.mesh, space.ip_kind) @ e).tocsr()
        space._cache["ip"] = hit
    return hit


def assemble_load(space, f):
    return space.expansion.T @ vertex_load(space.mesh, f)


def trilinear_apply(space, v, w):
    """Convective form ``integral(v * d_x(w) * test_i)`` for all test i."""
    if v.space is not space or w.space is not space:
        raise SpaceError("trilinear form arguments must live on the "
                         "given space")
    nv = vertex_trilinear_apply(space.mesh, v.vertex_values(),
                                w.vertex_values())
    return space.expansion.T @ nv


def trilinear_jacobian(space, u):
    jac = vertex_trilinear_jacobian(space.mesh, u.vertex_values())
    e = space.expansion
    return (e.T @ jac @ e).tocsr()


# -- solvers -----------------------------------------------------------------


def solve_linear(a_mat, rhs):
    """Direct sparse solve with a residual check."""
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if a_mat.shape != (n, n):
        raise SolverError(f"matrix shape {a_mat.shape} does not match "
                          f"right-hand side of length {n}")
    if n == 0:
        return np.zeros(0)
    try:
        lu = splu(csr_matrix(a_mat).tocsc())
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("singular system: non-finite solution entries")
    scale = np.abs(rhs).max()
    resid = np.abs(a_mat @ x - rhs).max()
    if resid > 1e-10 * max(scale, 1e-300):
        raise SolverError(f"direct solve residual {resid:.2e} exceeds "
                          f"1e-10 relative to |rhs|={scale:.2e}")
    return x


def solve_elliptic(space, vx, vy, nu, f):
    """Solve the convection-diffusion problem on the given space."""
    if nu <= 0:
        raise SolverError(f"diffusivity must be positive, got {nu}")
    a_mat = (vx * assemble(space, "convection_x")
             + vy * assemble(space, "convection_y")
             + nu * assemble(space, "stiffness"))
    return FeFunction(space, solve_linear(a_mat, assemble_load(space, f)))


def cross_mass_matrix(space_test, space_trial):
    """Exact L2 pairing between two spaces over a shared initial mesh.

    Both functions are transferred to the overlay of the two meshes, where
    the pairing of the piecewise-linear representatives is exact.
    """
    ov = meshmod.overlay(space_test.mesh, space_trial.mesh)
    pt = _to_vertex_map(space_test, ov)
    pr = _to_vertex_map(space_trial, ov)
    return (pt.T @ vertex_operator(ov, "mass") @ pr).tocsr()


def _to_vertex_map(space, ov_mesh):
    """Sparse map from space unknowns to vertex values on an overlay mesh."""
    p = meshmod.prolongation(space.mesh, ov_mesh)
    return (p.matrix @ space.expansion).tocsr()


def transfer(u, space_new):
    """Re-express a function on a space over a refined mesh (exact)."""
    p = meshmod.prolongation(u.space.mesh, space_new.mesh)
    return FeFunction(space_new,
                      space_new.restrict_vertex_values(
                          p.apply(u.vertex_values())))


def burgers_fom_step(space_prev, u_prev, space_new, tau, nu,
                     newton_tol=1e-12, max_newton=25):
    """One implicit Euler step of the viscous Burgers problem.

    Solves ``(u - u_prev, v) + tau*nu*(grad u, grad v)
    + tau*(u d_x u, v) = 0`` for all test functions v of ``space_new``.
    The previous solution may live on a different mesh over the same
    initial triangulation; its pairing is evaluated exactly on the overlay.
    """
    if u_prev.space is not space_prev:
        raise SpaceError("u_prev does not live on space_prev")
    if tau <= 0:
        raise SolverError(f"time step must be positive, got {tau}")
    rhs = cross_mass_matrix(space_new, space_prev) @ u_prev.coeffs
    m_mat = assemble(space_new, "mass")
    k_mat = assemble(space_new, "stiffness")
    lin = (m_mat + (tau * nu) * k_mat).tocsr()

    if meshmod.is_refinement(space_new.mesh, space_prev.mesh):
        u = transfer(u_prev, space_new).coeffs
    else:
        u = solve_linear(m_mat, rhs)

    for it in range(max_newton + 1):
        fn = FeFunction(space_new, u)
        resid = lin @ u + tau * trilinear_apply(space_new, fn, fn) - rhs
        rnorm = np.abs(resid).max() if resid.size else 0.0
        if rnorm <= newton_tol:
            if it:
                log.debug("newton converged in %d iterations "
                          "(residual %.3e)", it, rnorm)
            return FeFunction(space_new, u)
        if it == max_newton:
            raise NewtonError(
                f"newton stalled after {max_newton} iterations "
                f"(residual {rnorm:.3e})", residual=rnorm)
        jac = lin + tau * trilinear_jacobian(space_new, fn)
        u = u + solve_linear(jac, -resid)


# -- persistence -------------------------------------------------------------


def save_function(fn, path):
    lines = [_FUN_HEADER, fn.space.content_hash(), str(fn.space.n_dof)]
    lines.extend(repr(c) for c in fn.coeffs.tolist())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_function(path, space):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != _FUN_HEADER:
        raise FormatError(f"{path}: missing '{_FUN_HEADER}' header")
    if len(lines) < 3:
        raise FormatError(f"{path}: truncated function file")
    if lines[1] != space.content_hash():
        raise FormatError(f"{path}: function was saved for a different "
                          "space (hash mismatch)")
    try:
        n = int(lines[2])
        coeffs = np.array([float(v) for v in lines[3:3 + n]])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed coefficients ({exc})") from exc
    if n != space.n_dof or len(coeffs) != n:
        raise FormatError(f"{path}: expected {space.n_dof} coefficients, "
                          f"found {n}")
    return FeFunction(space, coeffs)
