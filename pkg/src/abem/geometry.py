"""Closed boundary curves built from line segments and circular arcs.

Every patch carries its own parameter domain ``[a, b]``: ``[0, 1]`` for a
segment and the angle range for an arc. Points, tangents and arc lengths are
evaluated in closed form, so no quadrature happens at this level.

Geometry files are YAML (or JSON) documents of the form::

    patches:
      - kind: line-segment
        start: [0.0, 0.0]
        end: [0.5, 0.0]
      - kind: circular-arc
        center: [0.0, 0.0]
        radius: 0.5
        angles: [0.0, 3.141592653589793]
        orientation: ccw        # or cw; optional, default ccw

Patches must chain end-to-start cyclically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

CHAIN_TOL = 1e-12
DIAMETER_LIMIT = 1.0


class GeometryError(ValueError):
    """Invalid or degenerate boundary description."""


class DomainError(ValueError):
    """Parameter outside a patch's parameter domain."""


def _check_domain(t: np.ndarray, a: float, b: float) -> None:
    slack = 1e-12 * max(1.0, abs(a), abs(b))
    if np.any(t < a - slack) or np.any(t > b + slack):
        raise DomainError(f"parameter outside [{a}, {b}]")


@dataclass(frozen=True)
class LineSegment:
    start: tuple[float, float]
    end: tuple[float, float]
    kind: str = field(default="line-segment", init=False)

    def __post_init__(self):
        if math.dist(self.start, self.end) == 0.0:
            raise GeometryError("degenerate line segment (zero length)")

    @property
    def param_domain(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def point(self, t):
        t = np.asarray(t, dtype=float)
        _check_domain(t, 0.0, 1.0)
        p0 = np.asarray(self.start)
        p1 = np.asarray(self.end)
        return p0 + t[..., None] * (p1 - p0)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        d = np.asarray(self.end) - np.asarray(self.start)
        return np.broadcast_to(d, t.shape + (2,)).copy()

    def speed_bounds(self) -> tuple[float, float]:
        s = math.dist(self.start, self.end)
        return s, s

    def arc_measure(self, t0: float, t1: float) -> float:
        if t0 > t1:
            raise ValueError("arc_measure requires t0 <= t1")
        _check_domain(np.array([t0, t1]), 0.0, 1.0)
        return (t1 - t0) * math.dist(self.start, self.end)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "start": list(self.start), "end": list(self.end)}


@dataclass(frozen=True)
class CircularArc:
    """Arc ``center + radius * (cos(s t), sin(s t))`` for ``t`` in ``angles``.

    ``s`` is +1 for counterclockwise and -1 for clockwise traversal.
    """

    center: tuple[float, float]
    radius: float
    angles: tuple[float, float]
    orientation: str = "ccw"
    kind: str = field(default="circular-arc", init=False)

    def __post_init__(self):
        if not self.radius > 0.0:
            raise GeometryError("arc radius must be positive")
        if not self.angles[1] > self.angles[0]:
            raise GeometryError("arc angle range must be increasing")
        if self.angles[1] - self.angles[0] > 2 * math.pi + 1e-12:
            raise GeometryError("arc spans more than a full turn")
        if self.orientation not in ("ccw", "cw"):
            raise GeometryError(f"unknown arc orientation {self.orientation!r}")

    @property
    def _sign(self) -> float:
        return 1.0 if self.orientation == "ccw" else -1.0

    @property
    def param_domain(self) -> tuple[float, float]:
        return (float(self.angles[0]), float(self.angles[1]))

    def point(self, t):
        t = np.asarray(t, dtype=float)
        _check_domain(t, *self.param_domain)
        ang = self._sign * t
        c = np.asarray(self.center)
        return c + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        ang = self._sign * t
        s = self._sign * self.radius
        return np.stack([-s * np.sin(ang), s * np.cos(ang)], axis=-1)

    def speed_bounds(self) -> tuple[float, float]:
        return self.radius, self.radius

    def arc_measure(self, t0: float, t1: float) -> float:
        if t0 > t1:
            raise ValueError("arc_measure requires t0 <= t1")
        _check_domain(np.array([t0, t1]), *self.param_domain)
        return self.radius * (t1 - t0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": list(self.center),
            "radius": self.radius,
            "angles": list(self.angles),
            "orientation": self.orientation,
        }


CurvePatch = Union[LineSegment, CircularArc]


def tangent(patch: CurvePatch, t):
    """Unit tangent ``gamma'(t) / |gamma'(t)|``."""
    d = patch.derivative(t)
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise GeometryError("zero speed: tangent undefined")
    return d / n


def eval_point(patch: CurvePatch, t):
    return patch.point(t)


def arc_measure(patch: CurvePatch, t0: float, t1: float) -> float:
    return patch.arc_measure(t0, t1)


def _end_points(patch: CurvePatch) -> tuple[np.ndarray, np.ndarray]:
    a, b = patch.param_domain
    pts = patch.point(np.array([a, b]))
    return pts[0], pts[1]


def _sample(patch: CurvePatch, n: int = 257) -> np.ndarray:
    a, b = patch.param_domain
    return patch.point(np.linspace(a, b, n))


@dataclass(frozen=True)
class BoundaryGeometry:
    """Closed boundary curve; validated on construction.

    ``diameter_bound`` is the (sampled) diameter of the curve. ``scaled``
    enforces ``diameter_bound <= 1``, which keeps the 2D single-layer
    operator elliptic for the Laplace and Lame kernels.
    """

    patches: tuple
    closed: bool = True
    scaled: bool = True
    diameter_bound: float = field(init=False)

    def __post_init__(self):
        if not self.closed:
            raise GeometryError("only closed boundary curves are supported")
        if len(self.patches) == 0:
            raise GeometryError("geometry has no patches")
        object.__setattr__(self, "patches", tuple(self.patches))
        n = len(self.patches)
        for i, patch in enumerate(self.patches):
            _, end = _end_points(patch)
            start, _ = _end_points(self.patches[(i + 1) % n])
            if np.linalg.norm(end - start) > CHAIN_TOL:
                raise GeometryError(
                    f"patch {i} does not end where patch {(i + 1) % n} starts"
                )
        pts = np.concatenate([_sample(p) for p in self.patches])
        diam = 0.0
        for chunk in np.array_split(pts, max(1, len(pts) // 512)):
            d = np.linalg.norm(chunk[:, None, :] - pts[None, :, :], axis=-1)
            diam = max(diam, float(d.max()))
        object.__setattr__(self, "diameter_bound", diam)
        if self.scaled and diam > DIAMETER_LIMIT + 1e-12:
            raise GeometryError(
                f"geometry diameter {diam:.6g} exceeds {DIAMETER_LIMIT}; "
                "rescale it so the single-layer operator stays elliptic"
            )

    def __len__(self) -> int:
        return len(self.patches)

    def total_length(self) -> float:
        return sum(p.arc_measure(*p.param_domain) for p in self.patches)

    def to_dict(self) -> dict:
        return {"patches": [p.to_dict() for p in self.patches]}


def polygon(vertices: Sequence[Sequence[float]], scaled: bool = True) -> BoundaryGeometry:
    """Closed polygon through ``vertices`` (last edge returns to the first vertex)."""
    vs = [tuple(map(float, v)) for v in vertices]
    patches = [LineSegment(vs[i], vs[(i + 1) % len(vs)]) for i in range(len(vs))]
    return BoundaryGeometry(tuple(patches), scaled=scaled)


def circle(radius: float = 0.5, center=(0.0, 0.0), n_arcs: int = 4,
           scaled: bool = True) -> BoundaryGeometry:
    """Counterclockwise circle split into ``n_arcs`` equal arcs."""
    c = (float(center[0]), float(center[1]))
    step = 2 * math.pi / n_arcs
    patches = [CircularArc(c, float(radius), (i * step, (i + 1) * step))
               for i in range(n_arcs)]
    return BoundaryGeometry(tuple(patches), scaled=scaled)


def lshape(scale: float = 0.25, scaled: bool = True) -> BoundaryGeometry:
    """``scale`` times the L-shaped domain (-1,1)^2 without [0,1)x(0,1].

    The reentrant corner sits at the origin; with the default scale the
    diameter is sqrt(2)/2.
    """
    verts = [(-1, -1), (1, -1), (1, 0), (0, 0), (0, 1), (-1, 1)]
    return polygon([(scale * x, scale * y) for x, y in verts], scaled=scaled)


LSHAPE_REENTRANT_CORNER = (0.0, 0.0)


def square(side: float = 0.5, origin=(0.0, 0.0), scaled: bool = True) -> BoundaryGeometry:
    x0, y0 = map(float, origin)
    verts = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)]
    return polygon(verts, scaled=scaled)


def patch_from_dict(rec: dict) -> CurvePatch:
    kind = rec.get("kind")
    if kind == "line-segment":
        return LineSegment(tuple(map(float, rec["start"])), tuple(map(float, rec["end"])))
    if kind == "circular-arc":
        return CircularArc(
            tuple(map(float, rec["center"])),
            float(rec["radius"]),
            tuple(map(float, rec["angles"])),
            rec.get("orientation", "ccw"),
        )
    raise GeometryError(f"unknown patch kind {kind!r}")


def geometry_from_dict(data: dict, scaled: bool = True) -> BoundaryGeometry:
    try:
        records = data["patches"]
    except (KeyError, TypeError):
        raise GeometryError("geometry document needs a 'patches' list") from None
    return BoundaryGeometry(tuple(patch_from_dict(r) for r in records), scaled=scaled)


def load_geometry(path: Union[str, Path], scaled: bool = True) -> BoundaryGeometry:
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    return geometry_from_dict(data, scaled=scaled)
