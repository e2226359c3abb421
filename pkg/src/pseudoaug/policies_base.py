"""Baseline geometric augmentation suite applied after the pseudo policies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geom
from .policies_pseudo import _paste_crops

_RANGE_EPS = 1e-9  # floor for a perturbed range so direction is preserved


@dataclass(frozen=True)
class RandomRotationParams:
    probability: float = 1.0
    max_angle: float = math.pi / 4


@dataclass(frozen=True)
class FlipYParams:
    probability: float = 0.5


@dataclass(frozen=True)
class WorldScalingParams:
    probability: float = 1.0
    min_scale: float = 0.95
    max_scale: float = 1.05

    def __post_init__(self):
        if not 0.0 < self.min_scale <= self.max_scale:
            raise ValueError(
                f"need 0 < min_scale <= max_scale, got "
                f"({self.min_scale}, {self.max_scale})"
            )


@dataclass(frozen=True)
class GlobalTranslateNoiseParams:
    probability: float = 1.0
    sigma_x: float = 0.2
    sigma_y: float = 0.2
    sigma_z: float = 0.05


@dataclass(frozen=True)
class FrustumDropoutParams:
    probability: float = 1.0
    theta_width: float = 0.3
    phi_width: float = 0.1
    drop_fraction: float = 0.5


@dataclass(frozen=True)
class FrustumNoiseParams:
    probability: float = 1.0
    theta_width: float = 0.3
    phi_width: float = 0.1
    range_sigma: float = 0.1


@dataclass(frozen=True)
class RandomDropPointsParams:
    probability: float = 1.0
    keep_prob: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {self.keep_prob}")


@dataclass(frozen=True)
class GTBBoxPasteParams:
    probability: float = 1.0
    num_objects: int = 10


def random_rotation_z(scene, params, rng):
    """Global z rotation by theta ~ Uniform[-max_angle, max_angle]."""
    if rng.random() >= params.probability:
        return scene
    theta = rng.uniform(-params.max_angle, params.max_angle)
    points, geoms = geom.rotate_scene_z(
        scene.points, [b.geometry for b in scene.boxes], theta
    )
    return _with_geometries(scene, points, geoms)


def random_flip_y(scene, params, rng):
    """Mirror the scene across the x axis."""
    if rng.random() >= params.probability:
        return scene
    points, geoms = geom.flip_scene_y(scene.points, [b.geometry for b in scene.boxes])
    return _with_geometries(scene, points, geoms)


def world_scaling(scene, params, rng):
    """Scale the whole scene by s ~ Uniform[min_scale, max_scale]."""
    if rng.random() >= params.probability:
        return scene
    s = rng.uniform(params.min_scale, params.max_scale)
    points, geoms = geom.scale_scene(
        scene.points, [b.geometry for b in scene.boxes], s
    )
    return _with_geometries(scene, points, geoms)


def global_translate_noise(scene, params, rng):
    """Shift the whole scene by one Gaussian offset per axis."""
    if rng.random() >= params.probability:
        return scene
    dx = rng.normal(0.0, params.sigma_x) if params.sigma_x > 0 else 0.0
    dy = rng.normal(0.0, params.sigma_y) if params.sigma_y > 0 else 0.0
    dz = rng.normal(0.0, params.sigma_z) if params.sigma_z > 0 else 0.0
    points, geoms = geom.translate_scene(
        scene.points, [b.geometry for b in scene.boxes], dx, dy, dz
    )
    return _with_geometries(scene, points, geoms)


def _with_geometries(scene, points, geometries):
    from dataclasses import replace

    boxes = tuple(
        replace(b, geometry=g) for b, g in zip(scene.boxes, geometries)
    )
    return scene.with_(points=points, boxes=boxes)


def frustum_window_mask(points, anchor_index, theta_width, phi_width):
    """Membership mask of the angular window anchored at one point's
    spherical direction.

    The elevation window center is clamped so the window stays inside
    [-pi/2, pi/2]; widths covering the full span select everything.
    """
    xyz = points[:, :3]
    theta = np.arctan2(xyz[:, 1], xyz[:, 0])
    phi = np.arctan2(xyz[:, 2], np.hypot(xyz[:, 0], xyz[:, 1]))
    theta0 = theta[anchor_index]
    phi0 = phi[anchor_index]

    if theta_width >= geom.TWO_PI:
        theta_ok = np.ones(len(points), dtype=bool)
    else:
        dtheta = np.abs((theta - theta0 + math.pi) % geom.TWO_PI - math.pi)
        theta_ok = dtheta <= theta_width / 2.0

    if phi_width >= math.pi:
        phi_ok = np.ones(len(points), dtype=bool)
    else:
        half = phi_width / 2.0
        phi0 = min(max(phi0, -math.pi / 2.0 + half), math.pi / 2.0 - half)
        phi_ok = np.abs(phi - phi0) <= half
    return theta_ok & phi_ok


def frustum_dropout(scene, params, rng):
    """Delete each point in a random angular window with the configured
    probability; boxes are unchanged."""
    if rng.random() >= params.probability:
        return scene
    if scene.num_points == 0 or params.drop_fraction <= 0.0:
        return scene
    anchor = int(rng.integers(scene.num_points))
    window = frustum_window_mask(
        scene.points, anchor, params.theta_width, params.phi_width
    )
    drop = window & (rng.random(scene.num_points) < params.drop_fraction)
    return scene.with_(points=scene.points[~drop])


def frustum_noise(scene, params, rng):
    """Perturb in-window points along their viewing ray by Gaussian noise;
    directions and out-of-window points are untouched."""
    if rng.random() >= params.probability:
        return scene
    if scene.num_points == 0 or params.range_sigma <= 0.0:
        return scene
    anchor = int(rng.integers(scene.num_points))
    window = frustum_window_mask(
        scene.points, anchor, params.theta_width, params.phi_width
    )
    points = scene.points.copy()
    xyz = points[window, :3]
    radii = np.linalg.norm(xyz, axis=1)
    noise = rng.normal(0.0, params.range_sigma, size=radii.shape)
    safe = radii > 0.0
    factor = np.ones_like(radii)
    factor[safe] = np.maximum(radii[safe] + noise[safe], _RANGE_EPS) / radii[safe]
    points[window, :3] = xyz * factor[:, None]
    return scene.with_(points=points)


def random_drop_points(scene, params, rng):
    """Keep each point i.i.d. with keep_prob; order is preserved."""
    if rng.random() >= params.probability:
        return scene
    if scene.num_points == 0 or params.keep_prob >= 1.0:
        return scene
    keep = rng.random(scene.num_points) < params.keep_prob
    return scene.with_(points=scene.points[keep])


def gt_bbox_paste(scene, labeled_db, params, rng):
    """Paste ground-truth crops; identical mechanics to pseudo_bbox but the
    database is built from labeled frames (score 1.0)."""
    if rng.random() >= params.probability:
        return scene
    return _paste_crops(scene, labeled_db, params.num_objects, 0.0, rng)
