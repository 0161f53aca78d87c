"""Boundary meshes refined by bisection in the parameter domain.

Elements are identified canonically: element ``id = h * n_roots + r`` is the
node with heap index ``h`` (root is ``h = 1``, children of ``h`` are ``2h`` and
``2h + 1``) in the bisection tree of initial element ``r``. Two meshes grown
from the same initial mesh therefore agree on the id of every element they
share, which makes genealogy lookups and overlays purely combinatorial.

Refinement bisects marked elements at their parameter midpoint and then
enforces the closure rule: the bisection levels of neighbouring elements
(cyclically along the closed curve, across patch junctions) differ by at most
one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from abem.geometry import BoundaryGeometry, CircularArc

MAX_LEVEL = 55


@dataclass(frozen=True)
class Element:
    id: int
    patch_id: int
    param_interval: tuple[float, float]
    level: int
    measure: float


@dataclass(frozen=True)
class MeshDiagnostics:
    c_patch: int
    c_locuni: float
    c_shape: float
    c_cent: float
    rho_son_observed: float
    max_level_jump: int


def _level(h: int) -> int:
    return h.bit_length() - 1


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable mesh snapshot.

    ``roots`` lists the initial elements as ``(patch_id, t0, t1)`` in curve
    order; ``leaves`` lists the ids of the current elements, also in curve
    order.
    """

    geometry: BoundaryGeometry
    roots: tuple
    leaves: tuple
    generation: int = 0
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {eid: i for i, eid in enumerate(self.leaves)})

    # --- canonical id helpers -------------------------------------------------
    @property
    def n_roots(self) -> int:
        return len(self.roots)

    def split_id(self, eid: int) -> tuple[int, int]:
        return eid % self.n_roots, eid // self.n_roots

    def make_id(self, root: int, heap: int) -> int:
        return heap * self.n_roots + root

    def interval_of(self, eid: int) -> tuple[int, float, float, int]:
        """``(patch_id, t0, t1, level)`` of any (possibly non-leaf) element id."""
        r, h = self.split_id(eid)
        lev = _level(h)
        pos = h - (1 << lev)
        pid, a, b = self.roots[r]
        w = (b - a) / (1 << lev)
        return pid, a + pos * w, a + (pos + 1) * w, lev

    def parent_id(self, eid: int) -> int | None:
        r, h = self.split_id(eid)
        return None if h == 1 else self.make_id(r, h // 2)

    def children_ids(self, eid: int) -> tuple[int, int]:
        r, h = self.split_id(eid)
        return self.make_id(r, 2 * h), self.make_id(r, 2 * h + 1)

    # --- element access -------------------------------------------------------
    def __len__(self) -> int:
        return len(self.leaves)

    def index(self, eid: int) -> int:
        return self._index[eid]

    def __contains__(self, eid) -> bool:
        return eid in self._index

    @cached_property
    def patch_ids(self) -> np.ndarray:
        return np.array([self.interval_of(e)[0] for e in self.leaves], dtype=int)

    @cached_property
    def t0(self) -> np.ndarray:
        return np.array([self.interval_of(e)[1] for e in self.leaves])

    @cached_property
    def t1(self) -> np.ndarray:
        return np.array([self.interval_of(e)[2] for e in self.leaves])

    @cached_property
    def levels(self) -> np.ndarray:
        return np.array([self.interval_of(e)[3] for e in self.leaves], dtype=int)

    @cached_property
    def measures(self) -> np.ndarray:
        pats = self.geometry.patches
        return np.array([pats[p].arc_measure(a, b)
                         for p, a, b in zip(self.patch_ids, self.t0, self.t1)])

    @property
    def elements(self) -> list[Element]:
        return [Element(e, int(p), (float(a), float(b)), int(lv), float(m))
                for e, p, a, b, lv, m in zip(self.leaves, self.patch_ids, self.t0,
                                             self.t1, self.levels, self.measures)]

    @property
    def parent_map(self) -> dict[int, int]:
        return {e: self.parent_id(e) for e in self.leaves if self.parent_id(e) is not None}

    def neighbors(self, i: int) -> tuple[int, int]:
        """Positions of the previous and next element along the curve."""
        n = len(self.leaves)
        return (i - 1) % n, (i + 1) % n

    @cached_property
    def diameters(self) -> np.ndarray:
        return np.array([element_diameter(self.geometry.patches[p], a, b)
                         for p, a, b in zip(self.patch_ids, self.t0, self.t1)])

    def dump(self) -> str:
        """Text dump, one ``patch_id t0 t1 level`` line per element."""
        return "".join(f"{p} {a!r} {b!r} {lv}\n" for p, a, b, lv in
                       zip(self.patch_ids, self.t0.tolist(), self.t1.tolist(), self.levels))


def element_diameter(patch, t0: float, t1: float) -> float:
    if isinstance(patch, CircularArc):
        return 2.0 * patch.radius * math.sin(min(t1 - t0, math.pi) / 2.0)
    return patch.arc_measure(t0, t1)


def initial_mesh(geometry: BoundaryGeometry, n_per_patch: int = 1) -> Mesh:
    """Split every patch into ``n_per_patch`` equal parameter subintervals."""
    if int(n_per_patch) != n_per_patch or n_per_patch < 1:
        raise ValueError("n_per_patch must be a positive integer")
    roots = []
    for pid, patch in enumerate(geometry.patches):
        a, b = patch.param_domain
        edges = np.linspace(a, b, n_per_patch + 1)
        edges[0], edges[-1] = a, b
        roots += [(pid, float(edges[j]), float(edges[j + 1])) for j in range(n_per_patch)]
    n = len(roots)
    return Mesh(geometry, tuple(roots), tuple(range(n, 2 * n)), 0)


def _sort_key(mesh: Mesh):
    def key(eid):
        r, h = mesh.split_id(eid)
        lev = _level(h)
        return (r, (h - (1 << lev)) / (1 << lev))
    return key


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Bisect the marked elements and close the mesh (level jump <= 1)."""
    marked = set(marked)
    unknown = [e for e in marked if e not in mesh]
    if unknown:
        raise ValueError(f"unknown element ids: {sorted(unknown)[:5]}")
    if not marked:
        return mesh
    leaves = []
    for eid in mesh.leaves:
        if eid in marked:
            leaves.extend(mesh.children_ids(eid))
        else:
            leaves.append(eid)
    while True:
        n = len(leaves)
        lev = [_level(mesh.split_id(e)[1]) for e in leaves]
        bad = set()
        for i in range(n):
            nb = max(lev[(i - 1) % n], lev[(i + 1) % n])
            if lev[i] < nb - 1:
                bad.add(i)
        if not bad:
            break
        new = []
        for i, eid in enumerate(leaves):
            new.extend(mesh.children_ids(eid) if i in bad else (eid,))
        leaves = new
    if max(_level(mesh.split_id(e)[1]) for e in leaves) > MAX_LEVEL:
        raise ValueError(f"bisection depth exceeds {MAX_LEVEL}")
    return Mesh(mesh.geometry, mesh.roots, tuple(leaves), mesh.generation + 1)


def refine_uniform(mesh: Mesh) -> Mesh:
    return refine(mesh, mesh.leaves)


def patch_elements(mesh: Mesh, seed: Iterable[int], q: int = 1) -> set[int]:
    """Element patch of order ``q``: ``q`` hops of endpoint adjacency from ``seed``."""
    if q < 0:
        raise ValueError("q must be non-negative")
    region = {mesh.index(e) for e in seed}
    for _ in range(q):
        grown = set(region)
        for i in region:
            grown.update(mesh.neighbors(i))
        region = grown
    return {mesh.leaves[i] for i in region}


def _ancestors(mesh: Mesh, ids) -> set[int]:
    out = set()
    for eid in ids:
        p = mesh.parent_id(eid)
        while p is not None and p not in out:
            out.add(p)
            p = mesh.parent_id(p)
    return out


def overlay(a: Mesh, b: Mesh) -> Mesh:
    """Coarsest common refinement of two meshes grown from the same initial mesh."""
    if a.geometry is not b.geometry and a.geometry != b.geometry:
        raise ValueError("overlay requires a shared geometry")
    if a.roots != b.roots:
        raise ValueError("overlay requires a shared initial mesh")
    anc_a, anc_b = _ancestors(a, a.leaves), _ancestors(b, b.leaves)
    leaves = {e for e in a.leaves if e not in anc_b} | {e for e in b.leaves if e not in anc_a}
    ordered = tuple(sorted(leaves, key=_sort_key(a)))
    if ordered == a.leaves:
        return a
    if ordered == b.leaves:
        return b
    return Mesh(a.geometry, a.roots, ordered, max(a.generation, b.generation) + 1)


def is_refinement(fine: Mesh, coarse: Mesh) -> bool:
    """True if every element of ``fine`` lies inside an element of ``coarse``."""
    if fine.roots != coarse.roots:
        return False
    cs = set(coarse.leaves)
    for e in fine.leaves:
        x = e
        while x is not None and x not in cs:
            x = fine.parent_id(x)
        if x is None:
            return False
    return True


def coarse_ancestor(fine: Mesh, coarse: Mesh, eid: int) -> int:
    """Id of the element of ``coarse`` containing fine element ``eid``."""
    x = eid
    while x not in coarse:
        x = fine.parent_id(x)
        if x is None:
            raise ValueError("meshes are not nested")
    return x


def _element_samples(mesh: Mesh, m: int = 9) -> np.ndarray:
    u = np.linspace(0.0, 1.0, m)
    pts = np.empty((len(mesh), m, 2))
    for i, (p, a, b) in enumerate(zip(mesh.patch_ids, mesh.t0, mesh.t1)):
        pts[i] = mesh.geometry.patches[p].point(a + (b - a) * u)
    return pts


def element_distances(mesh: Mesh, m: int = 9) -> np.ndarray:
    """Sampled pairwise element distances (upper bounds, exact at shared points)."""
    pts = _element_samples(mesh, m)
    n = len(mesh)
    flat = pts.reshape(-1, 2)
    out = np.empty((n, n))
    step = max(1, 4096 // m)
    for s in range(0, n, step):
        blk = pts[s:s + step].reshape(-1, 2)
        d = np.linalg.norm(blk[:, None, :] - flat[None, :, :], axis=-1)
        out[s:s + step] = d.reshape(-1, m, n, m).min(axis=(1, 3))
    return out


def mesh_diagnostics(mesh: Mesh) -> MeshDiagnostics:
    """Exhaustive scan of the M1-M4 constants and the observed son ratio."""
    n = len(mesh)
    diam = mesh.diameters
    h = mesh.measures
    c_patch = max(len(patch_elements(mesh, [e], 1)) for e in mesh.leaves)
    prev = np.roll(np.arange(n), 1)
    nxt = np.roll(np.arange(n), -1)
    ratio = np.maximum(diam / diam[prev], diam / diam[nxt])
    c_locuni = float(max(1.0, ratio.max()))
    c_shape = float(np.max(np.maximum(diam / h, h / diam)))

    dist = element_distances(mesh)
    near = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    near[idx, idx] = near[idx, prev] = near[idx, nxt] = True
    far = np.where(near, np.inf, dist).min(axis=1)
    far = np.where(np.isinf(far), mesh.geometry.diameter_bound, far)
    c_cent = float(np.max(diam / far))

    rho = 0.0
    pats = mesh.geometry.patches
    for eid, m in zip(mesh.leaves, h):
        par = mesh.parent_id(eid)
        if par is not None:
            p, a, b, _ = mesh.interval_of(par)
            rho = max(rho, m / pats[p].arc_measure(a, b))
    lev = mesh.levels
    jump = int(np.max(np.abs(lev - lev[nxt]))) if n > 1 else 0
    return MeshDiagnostics(c_patch, c_locuni, c_shape, c_cent, rho, jump)


def load_mesh_dump(geometry: BoundaryGeometry, n_per_patch: int, text: str) -> Mesh:
    """Inverse of :meth:`Mesh.dump` for meshes grown from ``initial_mesh``."""
    base = initial_mesh(geometry, n_per_patch)
    leaves = []
    for line in text.splitlines():
        if not line.strip():
            continue
        pid, t0, t1, lev = line.split()
        pid, t0, t1, lev = int(pid), float(t0), float(t1), int(lev)
        for r, (rp, a, b) in enumerate(base.roots):
            if rp == pid and a - 1e-14 <= t0 and t1 <= b + 1e-14:
                w = (b - a) / (1 << lev)
                pos = int(round((t0 - a) / w))
                leaves.append(base.make_id(r, (1 << lev) + pos))
                break
        else:
            raise ValueError(f"interval {t0}..{t1} not inside any initial element")
    leaves.sort(key=_sort_key(base))
    return Mesh(geometry, base.roots, tuple(leaves), 0)
