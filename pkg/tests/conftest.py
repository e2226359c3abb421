import numpy as np
import pytest

from pseudoaug.geom import Box7
from pseudoaug.scene import (
    BoxProvenance,
    ClassId,
    LabeledBox,
    PseudoDatabaseBuilder,
    Scene,
    SceneProvenance,
)


def random_points(rng, n, low=-20.0, high=20.0, z_low=-0.5, z_high=4.0):
    """Random (n, 4) point array with float32-representable values so PAF1
    round-trips are bit-exact."""
    pts = np.column_stack(
        [
            rng.uniform(low, high, n),
            rng.uniform(low, high, n),
            rng.uniform(z_low, z_high, n),
            rng.uniform(0.0, 1.0, n),
        ]
    )
    return pts.astype(np.float32).astype(np.float64)


def random_box(rng, center_range=15.0, z_range=(0.5, 1.5)):
    return Box7(
        cx=float(np.float32(rng.uniform(-center_range, center_range))),
        cy=float(np.float32(rng.uniform(-center_range, center_range))),
        cz=float(np.float32(rng.uniform(*z_range))),
        length=float(np.float32(rng.uniform(1.0, 5.0))),
        width=float(np.float32(rng.uniform(1.0, 3.0))),
        height=float(np.float32(rng.uniform(1.0, 2.5))),
        heading=float(np.float32(rng.uniform(-3.0, 3.0))),
    )


def random_labeled_box(rng, provenance=BoxProvenance.PSEUDO, score=None, **kwargs):
    if score is None:
        score = 1.0 if provenance == BoxProvenance.GROUND_TRUTH else float(
            np.float32(rng.uniform(0.0, 1.0))
        )
    return LabeledBox(
        geometry=random_box(rng, **kwargs),
        class_id=ClassId(int(rng.integers(0, 4))),
        score=score,
        provenance=provenance,
    )


def random_scene(
    rng,
    frame_id=None,
    n_points=200,
    n_boxes=3,
    provenance=SceneProvenance.PSEUDO,
    box_provenance=None,
):
    if frame_id is None:
        frame_id = f"frame_{int(rng.integers(0, 10**9)):09d}"
    if box_provenance is None:
        box_provenance = (
            BoxProvenance.PSEUDO
            if provenance == SceneProvenance.PSEUDO
            else BoxProvenance.GROUND_TRUTH
        )
    boxes = tuple(random_labeled_box(rng, provenance=box_provenance)
                  for _ in range(n_boxes))
    return Scene(
        frame_id=frame_id,
        points=random_points(rng, n_points),
        boxes=boxes,
        provenance=provenance,
    )


def build_pseudo_db(rng, n_frames=4, generation=1, n_boxes=4, n_points=150):
    builder = PseudoDatabaseBuilder(generation=generation)
    for i in range(n_frames):
        builder.add_frame(
            random_scene(
                rng,
                frame_id=f"db_{generation}_{i:03d}",
                n_points=n_points,
                n_boxes=n_boxes,
                provenance=SceneProvenance.PSEUDO,
            )
        )
    return builder.build()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
