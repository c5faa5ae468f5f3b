"""Residual-jump error indication, marking, and adaptive solve loops.

The per-triangle indicator sums the squared jumps of the normal diffusive
flux across the interior edges of each leaf triangle, each scaled by the
squared edge length; boundary edges contribute nothing.  Marking follows
the maximum strategy: a triangle is refined when its indicator reaches a
fraction ``theta`` of the current maximum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from . import mesh as meshmod
from .errors import AdapodError

log = logging.getLogger(__name__)


@dataclass
class ErrorIndicator:
    """Nonnegative indicator value per leaf triangle."""

    values: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size and (not np.all(np.isfinite(self.values))
                                 or self.values.min() < 0):
            raise AdapodError("indicator entries must be finite and >= 0")
        self.total = math.sqrt(float(np.sum(self.values ** 2)))

    @property
    def max(self):
        return float(self.values.max()) if self.values.size else 0.0


@dataclass(frozen=True)
class AdaptConfig:
    """Stopping rules for the adaptive refinement loop."""

    tol: float
    theta: float = 0.5
    max_dof: int = 5000
    max_rounds: int = 30

    def __post_init__(self):
        if not self.tol > 0:
            raise AdapodError(f"tol must be positive, got {self.tol}")
        if not 0.0 < self.theta <= 1.0:
            raise AdapodError(f"theta must be in (0, 1], got {self.theta}")
        if self.max_dof < 1 or self.max_rounds < 1:
            raise AdapodError("max_dof and max_rounds must be positive")

    def scaled(self, tol_factor, dof_factor=None):
        """Copy with a tightened tolerance (and widened dof budget)."""
        return AdaptConfig(
            tol=self.tol * tol_factor,
            theta=self.theta,
            max_dof=int(self.max_dof * (dof_factor
                                        if dof_factor is not None
                                        else 1.0 / tol_factor)),
            max_rounds=self.max_rounds)


def estimate(space, u, nu):
    """Edge-jump indicator of the diffusive flux of ``u`` scaled by ``nu``."""
    mesh = space.mesh
    tri = mesh.triangles
    p = mesh.vertices[tri]
    x = p[:, :, 0]
    y = p[:, :, 1]
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    two_a = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    grads = np.stack([b, c], axis=2) / two_a[:, None, None]
    w = u.vertex_values()
    gu = np.einsum("ek,ekd->ed", w[tri], grads)

    n_leaf = tri.shape[0]
    # counterclockwise edge traversal: (v0,v1), (v1,v2), (v2,v0)
    ends = np.stack([tri, tri[:, [1, 2, 0]]], axis=2).reshape(-1, 2)
    keys = np.sort(ends, axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                      return_counts=True)
    edge_vec = mesh.vertices[ends[:, 1]] - mesh.vertices[ends[:, 0]]
    h2 = np.einsum("ed,ed->e", edge_vec, edge_vec)
    # outward normal of a CCW triangle edge; the two outward fluxes of a
    # shared edge use opposite normals, so their sum is the jump
    outward = np.column_stack([edge_vec[:, 1], -edge_vec[:, 0]])
    outward /= np.sqrt(h2)[:, None]
    flux = nu * np.einsum("eqd,eqd->eq",
                          np.repeat(gu[:, None, :], 3, axis=1),
                          outward.reshape(n_leaf, 3, 2))
    jump = np.bincount(inverse, weights=flux.ravel(), minlength=len(uniq))
    jump[counts == 1] = 0.0

    per_edge = jump[inverse.reshape(n_leaf, 3)] ** 2 \
        * h2.reshape(n_leaf, 3)
    return ErrorIndicator(np.sqrt(0.5 * per_edge.sum(axis=1)))


def mark(ind, theta):
    """Maximum strategy: indices with value >= theta * max (empty if all 0)."""
    if not 0.0 < theta <= 1.0:
        raise AdapodError(f"theta must be in (0, 1], got {theta}")
    top = ind.max
    if top <= 0.0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(ind.values >= theta * top)


@dataclass
class AdaptResult:
    """Outcome of an adaptive solve: final space, solution, and loop log."""

    space: fem.FeSpace
    solution: fem.FeFunction
    rounds: int
    stopped_by: str
    history: list  # rows (round, n_dof, max_indicator, total_indicator)


def _adapt_loop(initial_mesh, solve_fn, nu, cfg, bc, ip):
    """Shared solve -> estimate -> mark -> bisect loop."""
    mesh = initial_mesh
    history = []
    for rounds in range(cfg.max_rounds + 1):
        space = fem.build_space(mesh, bc=bc, ip=ip)
        u = solve_fn(space)
        ind = estimate(space, u, nu)
        history.append((rounds, space.n_dof, ind.max, ind.total))
        log.debug("adapt-round,%d,%d,%r,%r", rounds, space.n_dof, ind.max,
                  ind.total)
        if ind.max <= cfg.tol:
            stopped = "tol"
        elif space.n_dof >= cfg.max_dof:
            stopped = "max_dof"
        elif rounds >= cfg.max_rounds:
            stopped = "max_rounds"
        else:
            mesh = meshmod.bisect(mesh, mark(ind, cfg.theta))
            continue
        return AdaptResult(space, u, rounds, stopped, history)


def adaptive_solve_elliptic(initial_mesh, mu, cfg, nu=0.01, f=1.0):
    """Adaptively solve the parametrized convection-diffusion problem."""
    vx, vy = fem.convection_velocity(mu)

    def solve(space):
        return fem.solve_elliptic(space, vx, vy, nu, f)

    return _adapt_loop(initial_mesh, solve, nu, cfg,
                       bc=fem.BoundaryConditions(), ip="h1_semi")


def adaptive_projection(initial_mesh, f, scale, cfg, nu, ip="h1_full"):
    """Adaptive L2 projection of ``scale * f`` (initial data resolution)."""

    def solve(space):
        if scale == 0.0:
            return fem.FeFunction(space, np.zeros(space.n_dof))
        rhs = scale * fem.assemble_load(space, f)
        return fem.FeFunction(
            space, fem.solve_linear(fem.assemble(space, "mass"), rhs))

    return _adapt_loop(initial_mesh, solve, nu, cfg,
                       bc=fem.BoundaryConditions(), ip=ip)


def adaptive_burgers_step(space_prev, u_prev, tau, nu, cfg):
    """One implicit Euler step with its own refinement loop.

    The mesh starts from the previous step's mesh (meshes only grow over
    time) and is refined until the indicator of the step solution meets
    the tolerance or a budget is hit.
    """

    def solve(space):
        return fem.burgers_fom_step(space_prev, u_prev, space, tau, nu)

    return _adapt_loop(space_prev.mesh, solve, nu, cfg,
                       bc=space_prev.bc, ip=space_prev.ip_kind)
