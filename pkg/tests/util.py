"""Shared helpers for the test suite."""

import math

import numpy as np

from adapod import fem
from adapod.mesh import bisect, new_structured

DEG3_BARY = np.array([[1 / 3, 1 / 3, 1 / 3],
                      [0.6, 0.2, 0.2],
                      [0.2, 0.6, 0.2],
                      [0.2, 0.2, 0.6]])
DEG3_W = np.array([-27.0 / 48.0, 25.0 / 48.0, 25.0 / 48.0, 25.0 / 48.0])


def neumann_tags():
    return {"left": "neumann", "right": "neumann",
            "bottom": "neumann", "top": "neumann"}


def periodic_x_tags():
    return {"left": "periodic_left", "right": "periodic_right",
            "bottom": "neumann", "top": "neumann"}


def h1_semi_error(u, grad_exact):
    """H1 seminorm distance between a P1 function and a smooth gradient."""
    mesh = u.space.mesh
    tri = mesh.triangles
    p = mesh.vertices[tri]
    x = p[:, :, 0]
    y = p[:, :, 1]
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    two_a = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    area = 0.5 * two_a
    grads = np.stack([b, c], axis=2) / two_a[:, None, None]
    w = u.vertex_values()[tri]
    gu = np.einsum("ek,ekd->ed", w, grads)
    xq = np.einsum("qk,ek->eq", DEG3_BARY, x)
    yq = np.einsum("qk,ek->eq", DEG3_BARY, y)
    gx, gy = grad_exact(xq, yq)
    diff = (gu[:, None, 0] - gx) ** 2 + (gu[:, None, 1] - gy) ** 2
    return math.sqrt(float(np.einsum("e,q,eq->", area, DEG3_W, diff)))


def random_meshes(rng, count, rounds=3, max_marks=3, nx=2, ny=2, tags=None):
    """Independently refined meshes over one shared initial mesh."""
    base = new_structured(nx, ny, tags=tags or neumann_tags())
    out = []
    for _ in range(count):
        m = base
        for _ in range(rng.integers(1, rounds + 1)):
            k = min(max_marks, m.n_leaves)
            m = bisect(m, rng.choice(m.n_leaves, size=k, replace=False))
        out.append(m)
    return base, out


def smooth_nodal_function(space, rng):
    """Random low-frequency field interpolated on the space."""
    a = rng.standard_normal(4)
    k1, k2 = rng.integers(1, 3, size=2)
    x = space.mesh.vertices[:, 0]
    y = space.mesh.vertices[:, 1]
    vals = (a[0] * np.sin(k1 * np.pi * x) * np.sin(k2 * np.pi * y)
            + a[1] * np.cos(k1 * np.pi * x) * y
            + a[2] * x * y + a[3] * x)
    return fem.FeFunction(space, space.restrict_vertex_values(vals))
