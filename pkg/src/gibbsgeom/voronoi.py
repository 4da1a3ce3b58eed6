"""Planar Voronoi cells by successive half-plane clipping.

The cell of the origin against neighbor displacements ``p_j`` is the
intersection of the half-planes ``z . p_j <= |p_j|^2 / 2``. Clipping starts
from a large box; every polygon edge remembers which line produced it, so
edges and vertices created by the box can be told apart from genuine ones
and vertices between two bisectors are recomputed exactly from their lines.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

BOX = -1  # label offset for the four artificial box sides: -1..-4


def _line_of(label: int, nbrs: np.ndarray, box: float):
    """Normal ``n`` and offset ``c`` of the line ``n . z = c`` for an edge label."""
    if label >= 0:
        p = nbrs[label]
        return p, 0.5 * float(p @ p)
    side = -label - 1
    normals = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
    return np.asarray(normals[side]), box


def _intersect(la: int, lb: int, nbrs: np.ndarray, box: float) -> Optional[np.ndarray]:
    na, ca = _line_of(la, nbrs, box)
    nb, cb = _line_of(lb, nbrs, box)
    det = na[0] * nb[1] - na[1] * nb[0]
    if det == 0:
        return None
    return np.array([(ca * nb[1] - cb * na[1]) / det, (na[0] * cb - nb[0] * ca) / det])


class Cell:
    """Convex polygon (counter-clockwise) with per-edge line labels.

    ``labels[i]`` names the line carrying the edge from ``verts[i]`` to
    ``verts[i+1]``.
    """

    def __init__(self, box: float):
        self.box = box
        b = box
        self.verts = [np.array(v, dtype=float) for v in ((b, -b), (b, b), (-b, b), (-b, -b))]
        # edge (b,-b)->(b,b) lies on x = b, the box side with normal (1, 0)
        self.labels = [-1, -2, -3, -4]

    def clip(self, p: np.ndarray, label: int) -> None:
        c = 0.5 * float(p @ p)
        verts, labels = self.verts, self.labels
        f = [float(v @ p) - c for v in verts]
        if all(fi <= 0 for fi in f):
            return
        out_v, out_l = [], []
        m = len(verts)
        for i in range(m):
            j = (i + 1) % m
            cur_in = f[i] <= 0
            nxt_in = f[j] <= 0
            if cur_in:
                out_v.append(verts[i])
                out_l.append(labels[i])
                if not nxt_in:
                    t = f[i] / (f[i] - f[j])
                    out_v.append(verts[i] + t * (verts[j] - verts[i]))
                    out_l.append(label)
            elif nxt_in:
                t = f[i] / (f[i] - f[j])
                out_v.append(verts[i] + t * (verts[j] - verts[i]))
                out_l.append(labels[i])
        self.verts, self.labels = out_v, out_l

    def finalize(self, nbrs: np.ndarray) -> None:
        """Recompute every vertex from the two lines meeting there."""
        m = len(self.verts)
        for i in range(m):
            prev = self.labels[i - 1]
            cur = self.labels[i]
            if prev == cur:
                continue
            v = _intersect(prev, cur, nbrs, self.box)
            if v is not None:
                self.verts[i] = v

    def real_vertex(self, i: int) -> bool:
        return self.labels[i - 1] >= 0 and self.labels[i] >= 0

    @property
    def bounded(self) -> bool:
        return all(lab >= 0 for lab in self.labels)

    def max_vertex_norm(self) -> float:
        return max(float(np.hypot(*v)) for v in self.verts) if self.verts else 0.0

    def finite_edges(self):
        """(label, length) for edges whose both endpoints are genuine vertices."""
        m = len(self.verts)
        out = []
        for i in range(m):
            j = (i + 1) % m
            lab = self.labels[i]
            if lab < 0 or not self.real_vertex(i) or not self.real_vertex(j):
                continue
            out.append((lab, float(np.hypot(*(self.verts[j] - self.verts[i])))))
        return out


def cell_of_origin(nbrs: np.ndarray, box: float) -> Cell:
    """Voronoi cell of the origin among the given displacement vectors."""
    nbrs = np.asarray(nbrs, dtype=float).reshape(-1, 2)
    cell = Cell(box)
    order = np.argsort(np.einsum("ij,ij->i", nbrs, nbrs), kind="stable")
    for j in order:
        p = nbrs[j]
        if p[0] == 0.0 and p[1] == 0.0:
            continue
        cell.clip(p, int(j))
        if not cell.verts:
            break
    cell.finalize(nbrs)
    return cell


def half_finite_perimeter(nbrs: np.ndarray, box: float) -> tuple[float, bool, float]:
    """Half the finite edge length of the origin's cell, boundedness, farthest vertex."""
    cell = cell_of_origin(nbrs, box)
    edges = cell.finite_edges()
    total = math.fsum(length for _, length in edges)
    return 0.5 * total, cell.bounded, cell.max_vertex_norm()
