"""Frame data model: labeled boxes, scenes, object crops, and the
generation-stamped pseudo-label database."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

import numpy as np

from . import geom
from .geom import Box7

POINT_DIM = 4  # x, y, z, intensity


class ClassId(IntEnum):
    VEHICLE = 0
    PEDESTRIAN = 1
    CYCLIST = 2
    OTHER = 3


class BoxProvenance(IntEnum):
    GROUND_TRUTH = 0
    PSEUDO = 1


class SceneProvenance(str, Enum):
    LABELED = "labeled"
    PSEUDO = "pseudo"
    FUSED = "fused"


@dataclass(frozen=True)
class LabeledBox:
    geometry: Box7
    class_id: ClassId
    score: float
    provenance: BoxProvenance

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.provenance == BoxProvenance.GROUND_TRUTH and self.score != 1.0:
            raise ValueError("ground-truth boxes must carry score 1.0")


def _as_point_array(points):
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, POINT_DIM), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != POINT_DIM:
        raise ValueError(f"points must have shape (N, {POINT_DIM}), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("points contain non-finite values")
    return arr


@dataclass(frozen=True)
class Scene:
    """One frame: a point cloud plus labeled 7-DOF boxes."""

    frame_id: str
    points: np.ndarray
    boxes: tuple
    provenance: SceneProvenance

    def __post_init__(self):
        if not self.frame_id:
            raise ValueError("frame_id must be non-empty")
        object.__setattr__(self, "points", _as_point_array(self.points))
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def num_points(self):
        return self.points.shape[0]

    def with_(self, **kwargs):
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ObjectCrop:
    """A box plus its points, stored in box-canonical coordinates so the
    crop can be re-pasted at a new pose by a rigid transform."""

    box: LabeledBox
    points: np.ndarray  # (N, 4), xyz in the box frame, intensity unchanged
    source_frame_id: str

    @property
    def num_points(self):
        return self.points.shape[0]


def make_crop(box, world_points, source_frame_id):
    """Build a crop from points already known to lie inside box."""
    world_points = _as_point_array(world_points)
    canonical = world_points.copy()
    if canonical.size:
        canonical[:, :3] = geom.to_canonical(world_points[:, :3], box.geometry)
    return ObjectCrop(box=box, points=canonical, source_frame_id=source_frame_id)


def crop_world_points(crop, geometry=None):
    """Map crop points back to world coordinates, optionally at a new pose."""
    geometry = geometry if geometry is not None else crop.box.geometry
    out = crop.points.copy()
    if out.size:
        out[:, :3] = geom.from_canonical(crop.points[:, :3], geometry)
    return out


def split_foreground_background(scene, score_threshold):
    """Decompose a scene into per-box crops and background points.

    Boxes below the threshold get no crop; their points stay background
    unless claimed by an eligible box under the lowest-index rule.
    """
    eligible = [b for b in scene.boxes if b.score >= score_threshold]
    assignment = geom.assign_points_to_boxes(
        scene.points, [b.geometry for b in eligible]
    )
    crops = [
        make_crop(b, scene.points[assignment == i], scene.frame_id)
        for i, b in enumerate(eligible)
    ]
    background = scene.points[assignment == -1]
    return crops, background


@dataclass(frozen=True)
class PseudoDatabase:
    """Generation-stamped store of pseudo-labeled frames and their crops.

    Instances are immutable; a refresh builds a whole new database and
    swaps the reference, so readers never observe a mixed generation.
    """

    generation: int
    frames: tuple
    crops: dict = field(default_factory=dict)  # ClassId -> tuple of ObjectCrop

    @property
    def is_empty(self):
        return not self.frames

    def all_crops(self):
        out = []
        for class_id in sorted(self.crops):
            out.extend(self.crops[class_id])
        return out


def empty_database(generation=0):
    return PseudoDatabase(generation=generation, frames=(), crops={})


class PseudoDatabaseBuilder:
    """Accumulates one generation of pseudo frames, then freezes it."""

    def __init__(self, generation, require_pseudo=True):
        self.generation = generation
        self.require_pseudo = require_pseudo
        self._frames = []
        self._crops = {}

    def add_frame(self, scene):
        if self.require_pseudo:
            for b in scene.boxes:
                if b.provenance != BoxProvenance.PSEUDO:
                    raise ValueError(
                        "pseudo database only accepts pseudo-provenance boxes"
                    )
        crops, _ = split_foreground_background(scene, score_threshold=0.0)
        self._frames.append(scene)
        for crop in crops:
            self._crops.setdefault(crop.box.class_id, []).append(crop)
        return crops

    def build(self):
        return PseudoDatabase(
            generation=self.generation,
            frames=tuple(self._frames),
            crops={k: tuple(v) for k, v in self._crops.items()},
        )


def db_sample_crops(db, class_id, count, min_score, rng):
    """Uniform sample without replacement of crops with score >= min_score.

    class_id=None pools all classes. Returns fewer crops when the pool is
    smaller than count.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    pool = db.all_crops() if class_id is None else list(db.crops.get(class_id, ()))
    pool = [c for c in pool if c.box.score >= min_score]
    if not pool or count == 0:
        return []
    order = rng.permutation(len(pool))
    return [pool[i] for i in order[:count]]
