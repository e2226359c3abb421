"""Ordered policy composition, flat hyperparameter encoding for search,
and labeled/pseudo batch mixing."""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import policies_base as base
from . import policies_pseudo as pseudo
from .policies_base import (
    FrustumDropoutParams,
    FrustumNoiseParams,
    GlobalTranslateNoiseParams,
    RandomDropPointsParams,
    RandomRotationParams,
    WorldScalingParams,
)
from .policies_pseudo import (
    PseudoBBoxParams,
    PseudoBackgroundParams,
    PseudoFrameParams,
)


class DimensionMismatch(Exception):
    pass


class BothStreamsEmpty(Exception):
    pass


# Policy order is fixed; pseudo policies run before the geometric suite.
POLICY_ORDER = (
    "PseudoFrame",
    "PseudoBBox",
    "PseudoBackground",
    "RandomRotation",
    "WorldScaling",
    "GlobalTranslateNoise",
    "FrustumDropout",
    "FrustumNoise",
    "RandomDropLaserPoints",
)

_POLICY_ATTRS = {
    "PseudoFrame": ("pseudo_frame", PseudoFrameParams),
    "PseudoBBox": ("pseudo_bbox", PseudoBBoxParams),
    "PseudoBackground": ("pseudo_background", PseudoBackgroundParams),
    "RandomRotation": ("random_rotation", RandomRotationParams),
    "WorldScaling": ("world_scaling", WorldScalingParams),
    "GlobalTranslateNoise": ("global_translate_noise", GlobalTranslateNoiseParams),
    "FrustumDropout": ("frustum_dropout", FrustumDropoutParams),
    "FrustumNoise": ("frustum_noise", FrustumNoiseParams),
    "RandomDropLaserPoints": ("random_drop_points", RandomDropPointsParams),
}


@dataclass(frozen=True)
class ParamSpec:
    policy: str
    name: str
    lo: float
    hi: float
    integer: bool = False

    def clamp(self, value):
        v = min(max(float(value), self.lo), self.hi)
        return int(round(v)) if self.integer else v


# Flat search-space layout; one entry per schedule vector dimension.
PARAM_SPACE = (
    ParamSpec("PseudoFrame", "probability", 0.0, 1.0),
    ParamSpec("PseudoFrame", "score_threshold", 0.5, 1.0),
    ParamSpec("PseudoBBox", "probability", 0.0, 1.0),
    ParamSpec("PseudoBBox", "num_objects", 0.0, 20.0, integer=True),
    ParamSpec("PseudoBBox", "score_threshold", 0.5, 1.0),
    ParamSpec("PseudoBackground", "probability", 0.0, 1.0),
    ParamSpec("RandomRotation", "probability", 0.0, 1.0),
    ParamSpec("RandomRotation", "max_angle", 0.0, math.pi),
    ParamSpec("WorldScaling", "probability", 0.0, 1.0),
    ParamSpec("WorldScaling", "min_scale", 0.8, 1.0),
    ParamSpec("WorldScaling", "max_scale", 1.0, 1.2),
    ParamSpec("GlobalTranslateNoise", "probability", 0.0, 1.0),
    ParamSpec("GlobalTranslateNoise", "sigma_x", 0.0, 0.5),
    ParamSpec("GlobalTranslateNoise", "sigma_y", 0.0, 0.5),
    ParamSpec("GlobalTranslateNoise", "sigma_z", 0.0, 0.2),
    ParamSpec("FrustumDropout", "probability", 0.0, 1.0),
    ParamSpec("FrustumDropout", "theta_width", 0.0, math.pi),
    ParamSpec("FrustumDropout", "phi_width", 0.0, math.pi / 4),
    ParamSpec("FrustumDropout", "drop_fraction", 0.0, 1.0),
    ParamSpec("FrustumNoise", "probability", 0.0, 1.0),
    ParamSpec("FrustumNoise", "theta_width", 0.0, math.pi),
    ParamSpec("FrustumNoise", "phi_width", 0.0, math.pi / 4),
    ParamSpec("FrustumNoise", "range_sigma", 0.0, 0.3),
    ParamSpec("RandomDropLaserPoints", "probability", 0.0, 1.0),
    ParamSpec("RandomDropLaserPoints", "keep_prob", 0.5, 1.0),
)

SCHEDULE_DIMENSION = len(PARAM_SPACE)


@dataclass(frozen=True)
class PolicySchedule:
    """Per-policy parameter bundles in the fixed application order."""

    pseudo_frame: PseudoFrameParams = PseudoFrameParams()
    pseudo_bbox: PseudoBBoxParams = PseudoBBoxParams()
    pseudo_background: PseudoBackgroundParams = PseudoBackgroundParams()
    random_rotation: RandomRotationParams = RandomRotationParams()
    world_scaling: WorldScalingParams = WorldScalingParams()
    global_translate_noise: GlobalTranslateNoiseParams = GlobalTranslateNoiseParams()
    frustum_dropout: FrustumDropoutParams = FrustumDropoutParams()
    frustum_noise: FrustumNoiseParams = FrustumNoiseParams()
    random_drop_points: RandomDropPointsParams = RandomDropPointsParams()

    def params_for(self, policy_name):
        attr, _ = _POLICY_ATTRS[policy_name]
        return getattr(self, attr)


@dataclass(frozen=True)
class MixConfig:
    labeled: int = 1
    pseudo: int = 1
    batch_size: int = 4

    def __post_init__(self):
        if self.labeled < 0 or self.pseudo < 0 or self.labeled + self.pseudo == 0:
            raise ValueError("mix ratio components must be >= 0 and not both 0")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


def all_probabilities_zero():
    """A schedule in which every policy is disabled."""
    values = []
    for spec in PARAM_SPACE:
        if spec.name == "probability":
            values.append(0.0)
        else:
            values.append(spec.lo)
    schedule, _ = decode_schedule(values)
    return schedule


def encode_schedule(schedule):
    """Flatten a schedule into the declared-dimension float vector."""
    values = []
    for spec in PARAM_SPACE:
        values.append(float(getattr(schedule.params_for(spec.policy), spec.name)))
    return np.array(values, dtype=np.float64)


def decode_schedule(vector):
    """Rebuild a schedule from a flat vector; out-of-range components are
    clamped and reported as warning strings."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (SCHEDULE_DIMENSION,):
        raise DimensionMismatch(
            f"expected {SCHEDULE_DIMENSION} dimensions, got {vector.shape}"
        )
    warnings = []
    per_policy = {}
    for spec, raw in zip(PARAM_SPACE, vector):
        clamped = spec.clamp(raw)
        if not spec.lo <= raw <= spec.hi:
            warnings.append(
                f"{spec.policy}.{spec.name}: {raw!r} clamped to {clamped!r}"
            )
        per_policy.setdefault(spec.policy, {})[spec.name] = clamped
    kwargs = {}
    for policy, (attr, cls) in _POLICY_ATTRS.items():
        bundle = dict(per_policy[policy])
        if policy == "WorldScaling" and bundle["min_scale"] > bundle["max_scale"]:
            warnings.append("WorldScaling: min_scale > max_scale, min lowered")
            bundle["min_scale"] = bundle["max_scale"]
        kwargs[attr] = cls(**bundle)
    return PolicySchedule(**kwargs), warnings


def random_schedule(rng):
    """Uniform draw of every parameter within its declared range."""
    values = []
    for spec in PARAM_SPACE:
        if spec.integer:
            values.append(float(rng.integers(int(spec.lo), int(spec.hi) + 1)))
        else:
            values.append(rng.uniform(spec.lo, spec.hi))
    schedule, _ = decode_schedule(values)
    return schedule


def resample_policy(schedule, policy_name, rng):
    """Resample one policy's whole parameter bundle uniformly in range."""
    vector = encode_schedule(schedule)
    for i, spec in enumerate(PARAM_SPACE):
        if spec.policy != policy_name:
            continue
        if spec.integer:
            vector[i] = float(rng.integers(int(spec.lo), int(spec.hi) + 1))
        else:
            vector[i] = rng.uniform(spec.lo, spec.hi)
    new_schedule, _ = decode_schedule(vector)
    return new_schedule


def schedule_to_dict(schedule):
    out = {}
    for name in POLICY_ORDER:
        out[name] = dataclasses.asdict(schedule.params_for(name))
    return out


def schedule_from_dict(doc):
    kwargs = {}
    for name in POLICY_ORDER:
        attr, cls = _POLICY_ATTRS[name]
        kwargs[attr] = cls(**doc.get(name, {}))
    return PolicySchedule(**kwargs)


def derive_policy_seed(seed, frame_id, policy_index):
    """Stable per-(frame, policy) seed so mutating one policy never moves
    another policy's random draws."""
    digest = hashlib.blake2b(
        f"{seed}|{frame_id}|{policy_index}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def policy_rng(seed, frame_id, policy_index):
    return np.random.default_rng(derive_policy_seed(seed, frame_id, policy_index))


def _apply_one(policy_name, scene, db, schedule, rng):
    params = schedule.params_for(policy_name)
    if policy_name == "PseudoFrame":
        return pseudo.pseudo_frame(scene, params, rng)
    if policy_name == "PseudoBBox":
        return pseudo.pseudo_bbox(scene, db, params, rng)
    if policy_name == "PseudoBackground":
        return pseudo.pseudo_background(scene, db, params, rng)
    if policy_name == "RandomRotation":
        return base.random_rotation_z(scene, params, rng)
    if policy_name == "WorldScaling":
        return base.world_scaling(scene, params, rng)
    if policy_name == "GlobalTranslateNoise":
        return base.global_translate_noise(scene, params, rng)
    if policy_name == "FrustumDropout":
        return base.frustum_dropout(scene, params, rng)
    if policy_name == "FrustumNoise":
        return base.frustum_noise(scene, params, rng)
    if policy_name == "RandomDropLaserPoints":
        return base.random_drop_points(scene, params, rng)
    raise KeyError(f"unknown policy {policy_name!r}")


def apply_schedule(scene, db, schedule, seed, applied=None):
    """Apply all nine policies in the fixed order.

    Each policy gets its own rng derived from (seed, frame_id, index).
    When `applied` is a list, the names of policies that actually fired
    are appended to it.
    """
    current = scene
    for index, name in enumerate(POLICY_ORDER):
        rng = policy_rng(seed, scene.frame_id, index)
        result = _apply_one(name, current, db, schedule, rng)
        if applied is not None and result is not current:
            applied.append(name)
        current = result
    return current


def apply_single_policy(scene, db, schedule, seed, policy_name):
    """Apply one named policy with the same derived seed it would get
    inside apply_schedule."""
    index = POLICY_ORDER.index(policy_name)
    rng = policy_rng(seed, scene.frame_id, index)
    return _apply_one(policy_name, scene, db, schedule, rng)


def mix_batches(labeled, pseudo_frames, cfg, rng=None):
    """Yield batches honoring the labeled:pseudo ratio, exact when the
    batch size divides evenly and within +/-1 otherwise (the remainder
    alternates across batches)."""
    labeled = list(labeled)
    pseudo_frames = list(pseudo_frames)
    if cfg.labeled > 0 and not labeled:
        raise BothStreamsEmpty("labeled stream is empty but its ratio is > 0")
    if cfg.pseudo > 0 and not pseudo_frames:
        raise BothStreamsEmpty("pseudo stream is empty but its ratio is > 0")
    labeled_iter = itertools.cycle(labeled) if labeled else iter(())
    pseudo_iter = itertools.cycle(pseudo_frames) if pseudo_frames else iter(())
    per_batch = cfg.batch_size * cfg.labeled / (cfg.labeled + cfg.pseudo)
    emitted_labeled = 0
    batch_index = 0
    while True:
        batch_index += 1
        target = math.floor(per_batch * batch_index + 0.5)
        n_labeled = min(max(target - emitted_labeled, 0), cfg.batch_size)
        emitted_labeled += n_labeled
        batch = [next(labeled_iter) for _ in range(n_labeled)]
        batch += [next(pseudo_iter) for _ in range(cfg.batch_size - n_labeled)]
        if rng is not None:
            order = rng.permutation(len(batch))
            batch = [batch[i] for i in order]
        yield batch
