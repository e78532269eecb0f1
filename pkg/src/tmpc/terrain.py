"""Heightmap terrain, Gaussian levels of detail and 2D signed-distance geometry.

Grid convention: ``heights[j, i]`` is the terrain height at the node
``(origin_x + i * resolution, origin_y + j * resolution)``. Queries outside
the grid clamp to the boundary, so the terrain extends flat beyond its edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError

OBSTACLE = "obstacle"
PATH_BOUNDARY = "path_boundary"

# Stored in a SignedDistanceMap when no perimeter exists.
NO_FEATURE = math.inf


class Heightmap:
    __slots__ = ("origin_x", "origin_y", "resolution", "heights")

    def __init__(self, heights, origin_x=0.0, origin_y=0.0, resolution=1.0):
        h = np.array(heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ConfigError("heightmap invalid", [f"grid must be at least 2x2, got shape {h.shape}"])
        if not resolution > 0:
            raise ConfigError("heightmap invalid", [f"resolution={resolution!r} must be > 0"])
        if not np.all(np.isfinite(h)):
            raise ConfigError("heightmap invalid", ["heights must be finite"])
        h.setflags(write=False)
        self.heights = h
        self.origin_x = float(origin_x)
        self.origin_y = float(origin_y)
        self.resolution = float(resolution)

    @property
    def nx(self) -> int:
        return self.heights.shape[1]

    @property
    def ny(self) -> int:
        return self.heights.shape[0]

    @property
    def extent(self):
        """(x_min, x_max, y_min, y_max) of the node grid."""
        return (self.origin_x, self.origin_x + (self.nx - 1) * self.resolution,
                self.origin_y, self.origin_y + (self.ny - 1) * self.resolution)

    def node_coords(self):
        xs = self.origin_x + self.resolution * np.arange(self.nx)
        ys = self.origin_y + self.resolution * np.arange(self.ny)
        return xs, ys

    def with_heights(self, heights) -> "Heightmap":
        return Heightmap(heights, self.origin_x, self.origin_y, self.resolution)

    def __eq__(self, other):
        if not isinstance(other, Heightmap):
            return NotImplemented
        return (self.origin_x == other.origin_x and self.origin_y == other.origin_y
                and self.resolution == other.resolution
                and np.array_equal(self.heights, other.heights))

    def __repr__(self):
        return (f"Heightmap(nx={self.nx}, ny={self.ny}, origin=({self.origin_x}, {self.origin_y}), "
                f"resolution={self.resolution})")


def _bilinear(grid, origin_x, origin_y, resolution, x, y):
    """Clamped bilinear interpolation of ``grid``; broadcasts over x, y."""
    ny, nx = grid.shape
    gx = np.clip((np.asarray(x, dtype=np.float64) - origin_x) / resolution, 0.0, nx - 1)
    gy = np.clip((np.asarray(y, dtype=np.float64) - origin_y) / resolution, 0.0, ny - 1)
    i0 = np.minimum(np.floor(gx).astype(np.intp), nx - 2)
    j0 = np.minimum(np.floor(gy).astype(np.intp), ny - 2)
    tx = gx - i0
    ty = gy - j0
    h00 = grid[j0, i0]
    h10 = grid[j0, i0 + 1]
    h01 = grid[j0 + 1, i0]
    h11 = grid[j0 + 1, i0 + 1]
    return (h00 * (1 - tx) + h10 * tx) * (1 - ty) + (h01 * (1 - tx) + h11 * tx) * ty


def height_at(hmap: Heightmap, x, y):
    out = _bilinear(hmap.heights, hmap.origin_x, hmap.origin_y, hmap.resolution, x, y)
    return float(out) if np.ndim(out) == 0 else out


def gradient_at(hmap: Heightmap, x, y):
    """Central finite-difference slope ``(f_x, f_y)`` with a one-cell step."""
    r = hmap.resolution
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fx = (height_at(hmap, x + r, y) - height_at(hmap, x - r, y)) / (2 * r)
    fy = (height_at(hmap, x, y + r) - height_at(hmap, x, y - r)) / (2 * r)
    return fx, fy


def normal_at(hmap: Heightmap, x, y):
    """Upward unit normal of the terrain, last axis ``(n_x, n_y, n_z)``.

    The surface ``z = f(x, y)`` has upward normal proportional to
    ``(-f_x, -f_y, 1)``; this is the orientation that pitches the nose up on
    an uphill ramp.
    """
    fx, fy = gradient_at(hmap, x, y)
    inv = 1.0 / np.sqrt(1.0 + fx * fx + fy * fy)
    return np.stack(np.broadcast_arrays(-fx * inv, -fy * inv, inv), axis=-1)


def gaussian_kernel(sigma_cells: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma_cells))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (offsets / sigma_cells) ** 2)
    return w / w.sum()


def gaussian_smooth(hmap: Heightmap, sigma: float) -> Heightmap:
    """Separable Gaussian low-pass with ``sigma`` in meters.

    The kernel is truncated at 3 sigma and the grid is edge-replicated, so a
    constant field passes through unchanged.
    """
    if sigma < 0 or not math.isfinite(sigma):
        raise ConfigError("smoothing invalid", [f"sigma={sigma!r} must be >= 0"])
    if sigma == 0:
        return hmap.with_heights(hmap.heights.copy())
    w = gaussian_kernel(sigma / hmap.resolution)
    # filtering the deviation from the mean keeps a constant field bit-exact
    mean = float(np.mean(hmap.heights))
    out = ndimage.correlate1d(hmap.heights - mean, w, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, w, axis=1, mode="nearest")
    return hmap.with_heights(out + mean)


# ---------------------------------------------------------------- perimeters

def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class Perimeter:
    kind: str
    vertices: tuple

    def __post_init__(self):
        problems = []
        if self.kind not in (OBSTACLE, PATH_BOUNDARY):
            problems.append(f"kind={self.kind!r} must be '{OBSTACLE}' or '{PATH_BOUNDARY}'")
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            problems.append(f"need at least 3 vertices, got {n}")
        else:
            if abs(self.area) < 1e-12:
                problems.append("polygon has zero area")
            for a in range(n):
                for b in range(a + 1, n):
                    if b == a + 1 or (a == 0 and b == n - 1):
                        continue
                    if _segments_intersect(verts[a], verts[(a + 1) % n], verts[b], verts[(b + 1) % n]):
                        problems.append(f"edges {a} and {b} intersect")
        if problems:
            raise ConfigError("perimeter invalid", problems)

    @property
    def area(self) -> float:
        v = np.asarray(self.vertices)
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)


def _polygon_distance_and_inside(verts, px, py):
    """Unsigned distance to the polygon boundary and even-odd containment."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    dist2 = np.full(np.broadcast(px, py).shape, np.inf)
    inside = np.zeros(dist2.shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        ax, ay = verts[k]
        bx, by = verts[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        t = ((px - ax) * ex + (py - ay) * ey) / (ex * ex + ey * ey)
        t = np.clip(t, 0.0, 1.0)
        dx = px - (ax + t * ex)
        dy = py - (ay + t * ey)
        dist2 = np.minimum(dist2, dx * dx + dy * dy)
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = ax + (py - ay) * ex / (by - ay)
        inside ^= crosses & (px < x_cross)
    return np.sqrt(dist2), inside


def signed_distance(point, perimeter: Perimeter):
    """Signed 2D distance from ``point`` (last axis x, y) to ``perimeter``.

    Obstacles are negative inside; path boundaries are negative outside.
    """
    p = np.asarray(point, dtype=np.float64)
    d, inside = _polygon_distance_and_inside(perimeter.vertices, p[..., 0], p[..., 1])
    if perimeter.kind == OBSTACLE:
        out = np.where(inside, -d, d)
    else:
        out = np.where(inside, d, -d)
    return float(out) if out.ndim == 0 else out


class SignedDistanceMap:
    """Per-node minimum of the per-perimeter signed distances.

    Shares the grid layout of a Heightmap and is queried with the same clamped
    bilinear interpolation. ``has_features`` is False when built from no
    perimeters, in which case every value is ``+inf``.
    """

    __slots__ = ("origin_x", "origin_y", "resolution", "values", "has_features")

    def __init__(self, values, origin_x, origin_y, resolution, has_features=True):
        v = np.array(values, dtype=np.float64)
        v.setflags(write=False)
        self.values = v
        self.origin_x = float(origin_x)
        self.origin_y = float(origin_y)
        self.resolution = float(resolution)
        self.has_features = bool(has_features)

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def ny(self):
        return self.values.shape[0]

    def at(self, x, y):
        if not self.has_features:
            out = np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, NO_FEATURE)
        else:
            out = _bilinear(self.values, self.origin_x, self.origin_y, self.resolution, x, y)
        return float(out) if np.ndim(out) == 0 else out


def build_sdist_map(grid, perimeters) -> SignedDistanceMap:
    """Precompute the signed-distance costmap on the node grid of ``grid``.

    ``grid`` is any object with ``origin_x``, ``origin_y``, ``resolution``,
    ``nx`` and ``ny`` (typically the planner's Heightmap).
    """
    nx, ny = grid.nx, grid.ny
    perimeters = list(perimeters)
    if not perimeters:
        return SignedDistanceMap(np.full((ny, nx), NO_FEATURE), grid.origin_x, grid.origin_y,
                                 grid.resolution, has_features=False)
    xs = grid.origin_x + grid.resolution * np.arange(nx)
    ys = grid.origin_y + grid.resolution * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X, Y], axis=-1)
    values = np.full((ny, nx), np.inf)
    for p in perimeters:
        values = np.minimum(values, signed_distance(pts, p))
    return SignedDistanceMap(values, grid.origin_x, grid.origin_y, grid.resolution)


# ----------------------------------------------------------------- synthesis

def _grid(params):
    try:
        res = float(params.get("resolution", 0.1))
        x0 = float(params.get("origin_x", 0.0))
        y0 = float(params.get("origin_y", 0.0))
        width = float(params.get("width", 50.0))
        length = float(params.get("length", width))
    except (TypeError, ValueError) as exc:
        raise ConfigError("synthetic terrain invalid", [str(exc)]) from None
    if not (res > 0 and width > res and length > res):
        raise ConfigError("synthetic terrain invalid",
                          [f"need resolution > 0 and extents > resolution (got {res}, {width}, {length})"])
    nx = int(round(width / res)) + 1
    ny = int(round(length / res)) + 1
    xs = x0 + res * np.arange(nx)
    ys = y0 + res * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    return X, Y, x0, y0, res


def synth_terrain(kind: str, **params) -> Heightmap:
    """Deterministic synthetic terrains.

    Common params: ``origin_x``, ``origin_y``, ``width`` (x extent),
    ``length`` (y extent), ``resolution``.

    * ``flat``: ``h``
    * ``ramp``: ``slope`` (dz/dx), optional ``slope_y``
    * ``sine_ridge``: ``amplitude``, ``wavelength``, ``angle`` (crest normal,
      radians from +x), optional region ``x_start``/``x_end`` outside of which
      the ridges fade out over ``taper`` meters, and ``lateral_gain`` that
      scales the amplitude linearly across y (``1 + lateral_gain*(y-y_mid)``,
      clipped to [0, 2]) so one side of a corridor is rougher than the other.
    * ``bump_field``: ``seed``, ``n_bumps``, ``amplitude``, ``radius``
    """
    X, Y, x0, y0, res = _grid(params)
    known = {"origin_x", "origin_y", "width", "length", "resolution"}
    try:
        if kind == "flat":
            known |= {"h"}
            Z = np.full_like(X, float(params.get("h", 0.0)))
        elif kind == "ramp":
            known |= {"slope", "slope_y"}
            Z = float(params.get("slope", 0.1)) * (X - x0) + float(params.get("slope_y", 0.0)) * (Y - y0)
        elif kind == "sine_ridge":
            known |= {"amplitude", "wavelength", "angle", "x_start", "x_end", "taper",
                      "lateral_gain", "y_mid"}
            amp = float(params.get("amplitude", 0.35))
            lam = float(params.get("wavelength", 4.0))
            if not lam > 0:
                raise ConfigError("synthetic terrain invalid", [f"wavelength={lam!r} must be > 0"])
            ang = float(params.get("angle", 0.0))
            phase = 2 * np.pi * (np.cos(ang) * (X - x0) + np.sin(ang) * (Y - y0)) / lam
            Z = amp * np.sin(phase)
            if "x_start" in params or "x_end" in params:
                xs_ = float(params.get("x_start", X.min()))
                xe_ = float(params.get("x_end", X.max()))
                taper = max(float(params.get("taper", lam / 2)), res)
                ramp_in = np.clip((X - xs_) / taper + 1.0, 0.0, 1.0)
                ramp_out = np.clip((xe_ - X) / taper + 1.0, 0.0, 1.0)
                env = np.minimum(ramp_in, ramp_out)
                Z = Z * (0.5 - 0.5 * np.cos(np.pi * env))
            gain = float(params.get("lateral_gain", 0.0))
            if gain:
                y_mid = float(params.get("y_mid", Y.mean()))
                Z = Z * np.clip(1.0 + gain * (Y - y_mid), 0.0, 2.0)
        elif kind == "bump_field":
            known |= {"seed", "n_bumps", "amplitude", "radius"}
            if "seed" not in params:
                raise ConfigError("synthetic terrain invalid", ["bump_field requires an explicit seed"])
            rng = np.random.default_rng(int(params["seed"]))
            n = int(params.get("n_bumps", 40))
            amp = float(params.get("amplitude", 0.3))
            rad = float(params.get("radius", 1.0))
            if n < 0 or not rad > 0:
                raise ConfigError("synthetic terrain invalid", ["n_bumps >= 0 and radius > 0 required"])
            cx = rng.uniform(X.min(), X.max(), n)
            cy = rng.uniform(Y.min(), Y.max(), n)
            a = rng.uniform(-amp, amp, n)
            Z = np.zeros_like(X)
            for k in range(n):
                Z += a[k] * np.exp(-((X - cx[k]) ** 2 + (Y - cy[k]) ** 2) / (2 * rad * rad))
        else:
            raise ConfigError("synthetic terrain invalid",
                              [f"unknown kind {kind!r} (flat | ramp | sine_ridge | bump_field)"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("synthetic terrain invalid", [str(exc)]) from None
    unknown = sorted(set(params) - known)
    if unknown:
        raise ConfigError("synthetic terrain invalid", [f"unknown parameter {u!r} for {kind}" for u in unknown])
    return Heightmap(Z, x0, y0, res)


# ------------------------------------------------------------------------ io

MAGIC = "TERRAIN v1"


def write_heightmap(hmap: Heightmap, path) -> None:
    lines = [MAGIC,
             f"origin {hmap.origin_x!r} {hmap.origin_y!r}",
             f"resolution {hmap.resolution!r}",
             f"size {hmap.nx} {hmap.ny}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in hmap.heights]
    Path(path).write_text("\n".join(lines) + "\n")


def read_heightmap(path) -> Heightmap:
    """Parse the ``TERRAIN v1`` text format; errors carry 1-based line numbers."""
    text = Path(path).read_text().splitlines()

    def fail(lineno, msg):
        raise ConfigError(f"{path}: parse error", [f"line {lineno}: {msg}"])

    def header(lineno, key, count):
        if len(text) < lineno:
            fail(lineno, f"missing '{key}' line")
        parts = text[lineno - 1].split()
        if not parts or parts[0] != key or len(parts) != count + 1:
            fail(lineno, f"expected '{key}' followed by {count} value(s), got {text[lineno - 1]!r}")
        return parts[1:]

    if not text or text[0].strip() != MAGIC:
        fail(1, f"expected {MAGIC!r}")
    try:
        ox, oy = (float(v) for v in header(2, "origin", 2))
        (res,) = (float(v) for v in header(3, "resolution", 1))
        nx, ny = (int(v) for v in header(4, "size", 2))
    except ValueError as exc:
        raise ConfigError(f"{path}: parse error", [str(exc)]) from None
    rows = []
    for j in range(ny):
        lineno = 5 + j
        if len(text) < lineno:
            fail(lineno, f"expected {ny} height rows, found {j}")
        parts = text[lineno - 1].split()
        if len(parts) != nx:
            fail(lineno, f"expected {nx} values, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            fail(lineno, str(exc))
    return Heightmap(np.array(rows), ox, oy, res)
