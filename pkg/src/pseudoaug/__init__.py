"""Augmentation engine for 3D point-cloud detection datasets: pseudo-label
fusion policies, a geometric augmentation suite, and population-based
schedule search with teacher-ensemble distillation."""

from .geom import Box7, GroundPlane
from .scene import (
    BoxProvenance,
    ClassId,
    LabeledBox,
    ObjectCrop,
    PseudoDatabase,
    Scene,
    SceneProvenance,
)

__all__ = [
    "Box7",
    "GroundPlane",
    "BoxProvenance",
    "ClassId",
    "LabeledBox",
    "ObjectCrop",
    "PseudoDatabase",
    "Scene",
    "SceneProvenance",
]

__version__ = "0.1.0"
