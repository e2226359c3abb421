"""The three pseudo-label augmentation policies: frame cleanup, object
pasting, and background swapping."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import geom
from .geom import DegenerateFit, GroundPlane
from .scene import (
    BoxProvenance,
    LabeledBox,
    SceneProvenance,
    crop_world_points,
    db_sample_crops,
)

# Points inside donor boxes scoring above this are never used as background.
BACKGROUND_SCORE_THRESHOLD = 0.1

OVERSAMPLE_FACTOR = 10


@dataclass(frozen=True)
class PseudoFrameParams:
    probability: float = 1.0
    score_threshold: float = 0.5


@dataclass(frozen=True)
class PseudoBBoxParams:
    probability: float = 1.0
    num_objects: int = 10
    score_threshold: float = 0.5


@dataclass(frozen=True)
class PseudoBackgroundParams:
    probability: float = 1.0


def estimate_ground_plane(points, boxes, bin_width=geom.DEFAULT_Z_BIN_WIDTH):
    """Ground plane for a scene: box-bottom regression when >= 3 boxes are
    available, z-histogram otherwise; horizontal fallbacks for degenerate
    fits and empty scenes."""
    geometries = [b.geometry if isinstance(b, LabeledBox) else b for b in boxes]
    if len(geometries) >= 3:
        try:
            return geom.fit_ground_plane_from_boxes(geometries)
        except DegenerateFit:
            mean_bottom = float(
                np.mean([g.bottom_center[2] for g in geometries])
            )
            return GroundPlane(0.0, 0.0, mean_bottom)
    points = np.asarray(points, dtype=np.float64)
    if points.size:
        return geom.fit_ground_plane_from_histogram(points, bin_width)
    return GroundPlane(0.0, 0.0, 0.0)


def pseudo_frame(scene, params, rng):
    """Drop low-confidence boxes and the points only they cover.

    Points shared with a kept box survive, so kept labels never lose
    evidence.
    """
    if rng.random() >= params.probability:
        return scene
    kept = [b for b in scene.boxes if b.score >= params.score_threshold]
    dropped = [b for b in scene.boxes if b.score < params.score_threshold]
    if not dropped:
        return scene
    points = scene.points
    in_dropped = np.zeros(points.shape[0], dtype=bool)
    for b in dropped:
        in_dropped |= geom.points_in_box(points, b.geometry)
    in_kept = np.zeros(points.shape[0], dtype=bool)
    for b in kept:
        in_kept |= geom.points_in_box(points, b.geometry)
    delete = in_dropped & ~in_kept
    return scene.with_(points=points[~delete], boxes=tuple(kept))


def _paste_crops(scene, db, num_objects, score_threshold, rng):
    """Shared oversample/reject/paste pipeline for pseudo and GT crops.

    Returns the fused scene, or the input scene unchanged when nothing can
    be pasted.
    """
    if num_objects <= 0 or db is None or db.is_empty:
        return scene
    plane = estimate_ground_plane(scene.points, scene.boxes)
    candidates = db_sample_crops(
        db, None, OVERSAMPLE_FACTOR * num_objects, score_threshold, rng
    )
    existing = [b.geometry for b in scene.boxes]
    accepted = []
    for crop in candidates:
        if len(accepted) == num_objects:
            break
        g = crop.box.geometry
        new_geometry = replace(
            g, cz=plane.z_at(g.cx, g.cy) + g.height / 2.0
        )
        blockers = existing + [geo for _, geo in accepted]
        if any(geom.bev_overlap(new_geometry, other) > 0.0 for other in blockers):
            continue
        accepted.append((crop, new_geometry))
    if not accepted:
        return scene

    points = scene.points
    covered = np.zeros(points.shape[0], dtype=bool)
    for _, geometry in accepted:
        covered |= geom.points_in_box(points, geometry)
    pieces = [points[~covered]]
    boxes = list(scene.boxes)
    for crop, geometry in accepted:
        pieces.append(crop_world_points(crop, geometry))
        boxes.append(replace(crop.box, geometry=geometry))
    return scene.with_(
        points=np.concatenate(pieces),
        boxes=tuple(boxes),
        provenance=SceneProvenance.FUSED,
    )


def pseudo_bbox(scene, db, params, rng):
    """Paste high-confidence pseudo objects onto a labeled scene.

    Candidates are oversampled 10x, shuffled, and greedily accepted when
    their BEV footprint is disjoint from every existing box and every
    previously accepted candidate. Each pasted box keeps its donor (x, y,
    heading) and is dropped onto the target ground plane; background points
    under a pasted box are removed.
    """
    if rng.random() >= params.probability:
        return scene
    return _paste_crops(scene, db, params.num_objects, params.score_threshold, rng)


def pseudo_background(scene, db, params, rng):
    """Swap the labeled scene's background for a pseudo frame's background.

    Donor background keeps only points outside every donor box scoring
    above 0.1, shifted in z so the donor ground plane matches the target
    plane at the origin; donor points landing inside a labeled box are
    rejected. Labeled foreground points and boxes are preserved bit-exact.
    """
    if db is None or db.is_empty:
        return scene
    if rng.random() >= params.probability:
        return scene
    donor = db.frames[int(rng.integers(len(db.frames)))]

    high = [b.geometry for b in donor.boxes if b.score > BACKGROUND_SCORE_THRESHOLD]
    donor_fg = np.zeros(donor.points.shape[0], dtype=bool)
    for g in high:
        donor_fg |= geom.points_in_box(donor.points, g)
    donor_bg = donor.points[~donor_fg].copy()

    target_plane = estimate_ground_plane(scene.points, scene.boxes)
    donor_plane = estimate_ground_plane(donor.points, donor.boxes)
    donor_bg[:, 2] += target_plane.gamma - donor_plane.gamma

    labeled_geoms = [b.geometry for b in scene.boxes]
    inside_labeled = np.zeros(donor_bg.shape[0], dtype=bool)
    for g in labeled_geoms:
        inside_labeled |= geom.points_in_box(donor_bg, g)
    donor_bg = donor_bg[~inside_labeled]

    fg_mask = np.zeros(scene.points.shape[0], dtype=bool)
    for g in labeled_geoms:
        fg_mask |= geom.points_in_box(scene.points, g)
    foreground = scene.points[fg_mask]

    return scene.with_(
        points=np.concatenate([foreground, donor_bg]),
        provenance=SceneProvenance.FUSED,
    )


def extract_pseudo_assets(frame, builder):
    """Register a pseudo frame and its per-class crops into the
    current-generation database build."""
    if frame.provenance != SceneProvenance.PSEUDO:
        raise ValueError("only pseudo-provenance frames feed the database")
    crops = builder.add_frame(frame)
    return crops, frame
