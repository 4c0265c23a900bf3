"""Interior point clouds and modified-Shepard interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import lebedev_rule
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class VolumeMesh:
    """Interior nodes with a k-nearest modified-Shepard interpolant."""

    nodes: np.ndarray
    neighbours: int = 4
    tree: cKDTree = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=float))
        object.__setattr__(self, "tree", cKDTree(self.nodes))

    def __len__(self):
        return len(self.nodes)

    def weights(self, points):
        """(indices, weights), each of shape points.shape[:-1] + (k,).

        Modified Shepard weights ((R - d) / (R d))^2 with R the distance to the
        (k+1)-th node: a node's weight reaches zero before it leaves the
        neighbour set, so the interpolant is continuous in the query point.
        A point on a node gets that node only.
        """
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 3)
        k = self.neighbours
        d, idx = self.tree.query(flat, k=k + 1)
        R = d[:, k:]
        d, idx = d[:, :k], idx[:, :k]
        hit = d[:, 0] < 1e-13
        d = np.where(hit[:, None], R, d)  # hit rows are overwritten below
        w = (np.maximum(R - d, 0.0) / (R * d)) ** 2
        w[hit] = 0.0
        w[hit, 0] = 1.0
        tie = w.sum(axis=1) == 0  # k+1 equidistant nodes: fall back to plain averages
        w[tie] = 1.0
        w /= w.sum(axis=1, keepdims=True)
        shape = points.shape[:-1] + (k,)
        return idx.reshape(shape), w.reshape(shape)

    def interpolate(self, values, points):
        """values: (n_nodes, ...) -> (points..., ...)."""
        idx, w = self.weights(points)
        v = np.asarray(values)[idx]
        k_axis = w.ndim - 1
        w = w.reshape(w.shape + (1,) * (v.ndim - w.ndim))
        return (w * v).sum(axis=k_axis)


def star_shells(domain, n_shells=12, angular_order=11, grading=2.0, include_center=True):
    """Nodes c + u (Y(w) - c) on star-shaped shells, denser toward the boundary.

    u_k = 1 - (1 - t_k)^grading with t_k = (k + 1/2) / n_shells; odd shells
    use a fixed rotation of the direction set so the shells interleave.
    """
    x, _ = lebedev_rule(angular_order)
    dirs = x.T
    rot = Rotation.from_rotvec([0.3, 0.5, 0.7]).as_matrix()
    t = (np.arange(n_shells) + 0.5) / n_shells
    u = 1.0 - (1.0 - t) ** grading
    pts = []
    for k, uk in enumerate(u):
        d = dirs @ rot.T if k % 2 else dirs
        Y = domain.radial_point(d)
        pts.append(domain.center + uk * (Y - domain.center))
    if include_center:
        pts.append(domain.center[None])
    return VolumeMesh(np.vstack(pts))
