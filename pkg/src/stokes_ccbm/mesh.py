"""Annular triangulations with a two-part tagged boundary.

The outer circle is the accessible boundary ``Gamma0`` (Cauchy data are
known there); the inner circle is the inaccessible boundary ``Gamma1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError

GAMMA0 = "Gamma0"
GAMMA1 = "Gamma1"
ALL_BOUNDARY = "AllBoundary"
TAGS = (GAMMA0, GAMMA1)

_FILE_TAGS = {"G0": GAMMA0, "G1": GAMMA1}
_TAG_CODES = {GAMMA0: "G0", GAMMA1: "G1"}
HEADER = "ccbm-mesh v1"


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def _orient_boundary(triangles, edges):
    """Return boundary edges ordered as in their owning CCW triangle.

    Raises ``DomainError`` if an edge is not an edge of exactly one triangle.
    """
    owner = {}
    for t in triangles:
        for k in range(3):
            a, b = int(t[k]), int(t[(k + 1) % 3])
            owner.setdefault(_edge_key(a, b), []).append((a, b))
    out = np.empty_like(edges)
    for n, (a, b) in enumerate(edges):
        found = owner.get(_edge_key(int(a), int(b)), [])
        if len(found) != 1:
            raise DomainError(
                f"boundary edge ({a}, {b}) belongs to {len(found)} triangles, expected 1"
            )
        out[n] = found[0]
    return out


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangulation with tagged boundary edges.

    ``boundary_edges`` are stored in the orientation of their owning triangle,
    so the domain lies to the left of each edge and the outward normal of
    edge ``(a, b)`` is the right-hand normal of ``b - a``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "triangles", _readonly(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(
            self, "boundary_edges", _readonly(self.boundary_edges, np.int64).reshape(-1, 2)
        )
        object.__setattr__(self, "boundary_tags", _readonly(self.boundary_tags, "<U6"))

    def __eq__(self, other):
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and np.array_equal(self.boundary_tags, other.boundary_tags)
        )

    __hash__ = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def edges(self):
        """Unique undirected edges, each as a sorted vertex pair."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def h(self):
        """Characteristic mesh size: the longest edge."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.max(np.hypot(d[:, 0], d[:, 1])))

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges_with_tag(self, tag):
        if tag == ALL_BOUNDARY:
            return self.boundary_edges
        return self.boundary_edges[self.boundary_tags == tag]

    def boundary_vertices(self, tag):
        """Sorted indices of the vertices touched by edges carrying ``tag``."""
        return np.unique(self.edges_with_tag(tag))

    def edge_normals(self, tag):
        """Outward unit normals of the edges carrying ``tag``."""
        e = self.edges_with_tag(tag)
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def vertex_normals(self, tag):
        """Outward unit normals at ``boundary_vertices(tag)``.

        Each is the normalized sum of the normals of the adjacent tagged
        edges; on an inscribed regular polygon this is exactly radial.
        """
        verts = self.boundary_vertices(tag)
        e = self.edges_with_tag(tag)
        n = self.edge_normals(tag)
        acc = np.zeros((self.n_vertices, 2))
        np.add.at(acc, e[:, 0], n)
        np.add.at(acc, e[:, 1], n)
        acc = acc[verts]
        return acc / np.hypot(acc[:, 0], acc[:, 1])[:, None]

    def validate(self):
        """Check the structural invariants, raising ``DomainError`` on failure."""
        if not np.all(np.isfinite(self.vertices)):
            raise DomainError("vertex coordinates must be finite")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices
        ):
            raise DomainError("triangle vertex index out of range")
        if np.any(self.signed_areas() <= 0):
            raise DomainError("triangles must have positive (counter-clockwise) area")
        if not set(np.unique(self.boundary_tags)) <= set(TAGS):
            raise DomainError(f"boundary tags must be among {TAGS}")
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise DomainError("an edge is shared by more than two triangles")
        topo = {tuple(x) for x in uniq[counts == 1]}
        tagged = [_edge_key(int(a), int(b)) for a, b in self.boundary_edges]
        if len(set(tagged)) != len(tagged):
            raise DomainError("a boundary edge carries more than one tag")
        if set(tagged) != topo:
            raise DomainError("tagged edges do not coincide with the topological boundary")
        return self


def annulus_area(r_inner, r_outer, n_sectors):
    """Area of the polygonal annulus spanned by ``n_sectors`` rays."""
    return n_sectors * (r_outer**2 - r_inner**2) * math.sin(2 * math.pi / n_sectors) / 2


def generate_annulus(r_inner=0.5, r_outer=1.0, n_rings=4, n_sectors=32):
    """Structured polar triangulation of ``r_inner < |x| < r_outer``.

    Quadrilateral cells of the polar grid are split along alternating
    diagonals. The inner circle is tagged ``Gamma1``, the outer ``Gamma0``.
    """
    if not (r_inner > 0 and r_outer > 0):
        raise DomainError(f"radii must be positive, got r={r_inner}, R={r_outer}")
    if r_inner >= r_outer:
        raise DomainError(f"need r < R, got r={r_inner}, R={r_outer}")
    if n_sectors < 3:
        raise DomainError(f"n_sectors must be >= 3, got {n_sectors}")
    if n_rings < 1:
        raise DomainError(f"n_rings must be >= 1, got {n_rings}")

    radii = np.linspace(r_inner, r_outer, n_rings + 1)
    theta = 2 * np.pi * np.arange(n_sectors) / n_sectors
    rr, tt = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    # exact radii on the boundary circles
    vertices[:n_sectors] *= r_inner / np.hypot(*vertices[:n_sectors].T)[:, None]
    vertices[-n_sectors:] *= r_outer / np.hypot(*vertices[-n_sectors:].T)[:, None]

    def vid(i, j):
        return i * n_sectors + j % n_sectors

    triangles = []
    for i in range(n_rings):
        for j in range(n_sectors):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                triangles += [(a, b, c), (a, c, d)]
            else:
                triangles += [(a, b, d), (b, c, d)]

    inner = [(vid(0, j + 1), vid(0, j)) for j in range(n_sectors)]
    outer = [(vid(n_rings, j), vid(n_rings, j + 1)) for j in range(n_sectors)]
    triangles = np.array(triangles, dtype=np.int64)
    edges = _orient_boundary(triangles, np.array(inner + outer, dtype=np.int64))
    tags = [GAMMA1] * n_sectors + [GAMMA0] * n_sectors
    return TriangleMesh(vertices, triangles, edges, tags)


def annulus_resolution(h, r_inner=0.5, r_outer=1.0):
    """Pick ``(n_rings, n_sectors)`` so the generated mesh has ``h`` close to the target.

    The longest edge of a polar cell is roughly the diagonal spanned by the
    outer chord and the radial step; both are set to ``h / sqrt(2)``.
    """
    if h <= 0:
        raise DomainError(f"target h must be positive, got {h}")
    step = h / math.sqrt(2)
    n_sectors = max(3, math.ceil(2 * math.pi * r_outer / step))
    n_rings = max(1, math.ceil((r_outer - r_inner) / step))
    return n_rings, n_sectors


def boundary_length(mesh, tag):
    e = mesh.edges_with_tag(tag)
    if len(e) == 0:
        return 0.0
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def save_mesh(mesh, path):
    lines = [HEADER, f"VERTICES {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"BOUNDARY {len(mesh.boundary_edges)}")
    lines += [
        f"{i} {j} {_TAG_CODES[str(t)]}"
        for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path):
    """Read a mesh written by ``save_mesh`` (or any file in the same format)."""
    raw = Path(path).read_text().splitlines()
    rows = [(n + 1, line.split()) for n, line in enumerate(raw) if line.strip()]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(rows):
            raise ParseError("unexpected end of file", len(raw))
        pos += 1
        return rows[pos - 1]

    lineno, tok = take()
    if " ".join(tok) != HEADER:
        raise ParseError(f"expected header {HEADER!r}", lineno)

    def section(name, width, convert):
        lineno, tok = take()
        if len(tok) != 2 or tok[0] != name:
            raise ParseError(f"expected '{name} <count>'", lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise ParseError(f"bad count {tok[1]!r}", lineno) from None
        if count < 0:
            raise ParseError("negative count", lineno)
        out = []
        for _ in range(count):
            lineno, tok = take()
            if len(tok) != width:
                raise ParseError(f"expected {width} fields, got {len(tok)}", lineno)
            try:
                out.append((lineno, convert(tok)))
            except (ValueError, KeyError) as exc:
                raise ParseError(f"cannot parse {' '.join(tok)!r}: {exc}", lineno) from None
        return out

    verts = section("VERTICES", 2, lambda t: [float(t[0]), float(t[1])])
    tris = section("TRIANGLES", 3, lambda t: [int(x) for x in t])
    bnd = section("BOUNDARY", 3, lambda t: (int(t[0]), int(t[1]), _FILE_TAGS[t[2]]))
    if pos != len(rows):
        raise ParseError("trailing content after BOUNDARY section", rows[pos][0])

    nv = len(verts)
    for lineno, (x, y) in verts:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("non-finite vertex coordinate", lineno)
    for lineno, t in tris:
        if min(t) < 0 or max(t) >= nv:
            raise ParseError(f"triangle index out of range [0, {nv})", lineno)
    seen = {}
    for lineno, (i, j, _) in bnd:
        if min(i, j) < 0 or max(i, j) >= nv:
            raise ParseError(f"boundary index out of range [0, {nv})", lineno)
        key = _edge_key(i, j)
        if key in seen:
            raise ParseError(f"edge ({i}, {j}) already tagged on line {seen[key]}", lineno)
        seen[key] = lineno

    triangles = np.array([t for _, t in tris], dtype=np.int64).reshape(-1, 3)
    edges = np.array([(i, j) for _, (i, j, _) in bnd], dtype=np.int64).reshape(-1, 2)
    try:
        edges = _orient_boundary(triangles, edges)
    except DomainError as exc:
        raise ParseError(str(exc)) from None
    mesh = TriangleMesh(
        np.array([v for _, v in verts], dtype=float).reshape(-1, 2),
        triangles,
        edges,
        [tag for _, (_, _, tag) in bnd],
    )
    try:
        return mesh.validate()
    except DomainError as exc:
        raise ParseError(str(exc)) from None
