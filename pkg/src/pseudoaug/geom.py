"""Stateless geometric kernels: oriented-box containment, BEV overlap,
ground-plane fitting, and rigid scene transforms.

Points are numpy arrays of shape (N, 4) with columns (x, y, z, intensity);
all functions only read the first three columns and preserve the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely.geometry

TWO_PI = 2.0 * math.pi

# Fits steeper than 45 degrees are treated as degenerate.
MAX_GROUND_SLOPE = 1.0

DEFAULT_Z_BIN_WIDTH = 0.2  # meters


class DegenerateFit(Exception):
    """Ground-plane regression is rank-deficient or pathologically steep."""


class EmptyScene(Exception):
    """Operation requires at least one point."""


def normalize_heading(heading):
    """Wrap a yaw angle into (-pi, pi]."""
    h = float(heading)
    if -math.pi < h <= math.pi:
        return h  # already normalized; avoid rounding a representable value
    return math.pi - (math.pi - h) % TWO_PI


@dataclass(frozen=True)
class Box7:
    """7-DOF oriented box: geometric center, extents, yaw about +z."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    heading: float

    def __post_init__(self):
        if not (self.length > 0.0 and self.width > 0.0 and self.height > 0.0):
            raise ValueError(
                "box extents must be positive, got "
                f"({self.length}, {self.width}, {self.height})"
            )
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def center(self):
        return np.array([self.cx, self.cy, self.cz], dtype=np.float64)

    @property
    def bottom_center(self):
        return np.array(
            [self.cx, self.cy, self.cz - self.height / 2.0], dtype=np.float64
        )

    @property
    def bev_area(self):
        return self.length * self.width


@dataclass(frozen=True)
class GroundPlane:
    """Plane model z = alpha * x + beta * y + gamma."""

    alpha: float
    beta: float
    gamma: float

    def z_at(self, x, y):
        return self.alpha * x + self.beta * y + self.gamma


def _rotation_z(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def to_canonical(xyz, box):
    """Map world coordinates into the box frame (center at origin,
    length axis along +x)."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    out = xyz - box.center
    rot = _rotation_z(-box.heading)
    out[:, :2] = out[:, :2] @ rot.T
    return out


def from_canonical(xyz, box):
    """Inverse of :func:`to_canonical`."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    out = xyz.copy()
    rot = _rotation_z(box.heading)
    out[:, :2] = out[:, :2] @ rot.T
    return out + box.center


def points_in_box(points, box):
    """Boolean containment mask for an (N, >=3) point array.

    Boundary is inclusive.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return np.zeros(0, dtype=bool)
    canon = to_canonical(points[:, :3], box)
    half = np.array(
        [box.length / 2.0, box.width / 2.0, box.height / 2.0], dtype=np.float64
    )
    return np.all(np.abs(canon) <= half, axis=1)


def point_in_box(p, box):
    """Containment test for a single (x, y, z[, ...]) point."""
    return bool(points_in_box(np.asarray(p, dtype=np.float64)[None, :3], box)[0])


def assign_points_to_boxes(points, boxes):
    """Assign each point to the lowest-index containing box, -1 for none."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0] if points.ndim == 2 else 0
    assignment = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return assignment
    unassigned = np.ones(n, dtype=bool)
    for idx, box in enumerate(boxes):
        if not unassigned.any():
            break
        hit = unassigned & points_in_box(points, box)
        assignment[hit] = idx
        unassigned &= ~hit
    return assignment


def bev_corners(box):
    """BEV footprint corners, (4, 2), counter-clockwise."""
    half_l, half_w = box.length / 2.0, box.width / 2.0
    corners = np.array(
        [[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]],
        dtype=np.float64,
    )
    rot = _rotation_z(box.heading)
    return corners @ rot.T + np.array([box.cx, box.cy])


def bev_overlap(a, b):
    """Intersection area (m^2) of two heading-rotated BEV rectangles."""
    pa = shapely.geometry.Polygon(bev_corners(a))
    pb = shapely.geometry.Polygon(bev_corners(b))
    return float(pa.intersection(pb).area)


def bev_iou(a, b):
    """BEV intersection-over-union of two boxes."""
    inter = bev_overlap(a, b)
    union = a.bev_area + b.bev_area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def fit_ground_plane_from_boxes(boxes):
    """Least-squares plane through the bottom centers of >= 3 boxes.

    Raises DegenerateFit when the bottom centers are collinear (rank
    deficient) or the fitted slope exceeds 45 degrees.
    """
    if len(boxes) < 3:
        raise ValueError(f"need at least 3 boxes, got {len(boxes)}")
    bottoms = np.stack([b.bottom_center for b in boxes])
    design = np.column_stack([bottoms[:, 0], bottoms[:, 1], np.ones(len(boxes))])
    solution, _, rank, _ = np.linalg.lstsq(design, bottoms[:, 2], rcond=None)
    if rank < 3:
        raise DegenerateFit("bottom centers are collinear")
    alpha, beta, gamma = (float(v) for v in solution)
    if abs(alpha) > MAX_GROUND_SLOPE or abs(beta) > MAX_GROUND_SLOPE:
        raise DegenerateFit(f"fitted slope ({alpha:.3f}, {beta:.3f}) exceeds 45 deg")
    return GroundPlane(alpha, beta, gamma)


def fit_ground_plane_from_histogram(points, bin_width=DEFAULT_Z_BIN_WIDTH):
    """Horizontal plane at the center of the most populated z bin.

    Ties break toward the lower bin.
    """
    if bin_width <= 0.0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise EmptyScene("cannot fit ground plane to an empty point cloud")
    z = points[:, 2]
    z_min = float(z.min())
    indices = np.floor((z - z_min) / bin_width).astype(np.int64)
    counts = np.bincount(indices)
    best = int(np.argmax(counts))  # argmax returns the first (lowest) maximum
    gamma = z_min + (best + 0.5) * bin_width
    return GroundPlane(0.0, 0.0, gamma)


def rotate_scene_z(points, boxes, theta):
    """Rotate points and boxes about the origin z axis."""
    points = np.asarray(points, dtype=np.float64).copy()
    if points.size:
        rot = _rotation_z(theta)
        points[:, :2] = points[:, :2] @ rot.T
    out_boxes = []
    rot = _rotation_z(theta)
    for b in boxes:
        cx, cy = rot @ np.array([b.cx, b.cy])
        out_boxes.append(
            Box7(cx, cy, b.cz, b.length, b.width, b.height, b.heading + theta)
        )
    return points, out_boxes


def scale_scene(points, boxes, s):
    """Scale all coordinates and box extents by s > 0."""
    if s <= 0.0:
        raise ValueError(f"scale must be positive, got {s}")
    points = np.asarray(points, dtype=np.float64).copy()
    if points.size:
        points[:, :3] *= s
    out_boxes = [
        Box7(b.cx * s, b.cy * s, b.cz * s, b.length * s, b.width * s, b.height * s,
             b.heading)
        for b in boxes
    ]
    return points, out_boxes


def translate_scene(points, boxes, dx, dy, dz):
    """Shift points and box centers by a constant offset."""
    points = np.asarray(points, dtype=np.float64).copy()
    if points.size:
        points[:, :3] += np.array([dx, dy, dz])
    out_boxes = [
        Box7(b.cx + dx, b.cy + dy, b.cz + dz, b.length, b.width, b.height, b.heading)
        for b in boxes
    ]
    return points, out_boxes


def flip_scene_y(points, boxes):
    """Mirror the scene across the x axis: negate y and headings."""
    points = np.asarray(points, dtype=np.float64).copy()
    if points.size:
        points[:, 1] = -points[:, 1]
    out_boxes = [
        Box7(b.cx, -b.cy, b.cz, b.length, b.width, b.height, -b.heading)
        for b in boxes
    ]
    return points, out_boxes
