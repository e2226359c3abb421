"""Bit-exact native frame format (PAF1), KITTI-style ingestion, dataset
scanning, and pseudo-database persistence.

PAF1 layout, all integers little-endian:
    magic "PAF1" (4 bytes)
    version u32
    frame_id length u32 + UTF-8 bytes
    point count u32, box count u32
    points: float32 (x, y, z, intensity) quadruples
    boxes: float32 (cx, cy, cz, l, w, h, heading, score) + u8 class + u8 provenance
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import Box7, normalize_heading
from .scene import (
    BoxProvenance,
    ClassId,
    LabeledBox,
    PseudoDatabaseBuilder,
    Scene,
    SceneProvenance,
)

MAGIC = b"PAF1"
VERSION = 1
_BOX_STRUCT = struct.Struct("<8f2B")
_POINT_BYTES = 16

FRAME_SUFFIX = ".paf"
MANIFEST_NAME = "MANIFEST"


class FrameFormatError(Exception):
    """Base class for malformed PAF1 streams."""


class BadMagic(FrameFormatError):
    pass


class UnsupportedVersion(FrameFormatError):
    pass


class TruncatedStream(FrameFormatError):
    pass


class KittiFormatError(Exception):
    """Base class for malformed KITTI inputs."""


class MalformedLabelLine(KittiFormatError):
    def __init__(self, line_number, message):
        super().__init__(f"label line {line_number}: {message}")
        self.line_number = line_number


class BadPointPayload(KittiFormatError):
    pass


class DatasetError(Exception):
    pass


class MissingSplit(DatasetError):
    pass


class DuplicateFrame(DatasetError):
    pass


def write_frame(scene, sink):
    """Serialize a scene to a binary sink; returns bytes written."""
    frame_id = scene.frame_id.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", len(frame_id)),
        frame_id,
        struct.pack("<I", scene.num_points),
        struct.pack("<I", len(scene.boxes)),
        np.ascontiguousarray(scene.points, dtype="<f4").tobytes(),
    ]
    for b in scene.boxes:
        g = b.geometry
        parts.append(
            _BOX_STRUCT.pack(
                g.cx, g.cy, g.cz, g.length, g.width, g.height, g.heading,
                b.score, int(b.class_id), int(b.provenance),
            )
        )
    payload = b"".join(parts)
    sink.write(payload)
    return len(payload)


def _read_exact(source, n, section):
    data = source.read(n)
    if len(data) != n:
        raise TruncatedStream(f"truncated while reading {section}")
    return data


def read_frame(source):
    """Inverse of :func:`write_frame`."""
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(source, 4, "version"))
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}")
    (fid_len,) = struct.unpack("<I", _read_exact(source, 4, "frame_id length"))
    frame_id = _read_exact(source, fid_len, "frame_id").decode("utf-8")
    (n_points,) = struct.unpack("<I", _read_exact(source, 4, "point count"))
    (n_boxes,) = struct.unpack("<I", _read_exact(source, 4, "box count"))
    point_data = _read_exact(source, n_points * _POINT_BYTES, "point array")
    points = np.frombuffer(point_data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    boxes = []
    for _ in range(n_boxes):
        raw = _read_exact(source, _BOX_STRUCT.size, "box array")
        cx, cy, cz, l, w, h, heading, score, class_id, prov = _BOX_STRUCT.unpack(raw)
        boxes.append(
            LabeledBox(
                geometry=Box7(cx, cy, cz, l, w, h, heading),
                class_id=ClassId(class_id),
                score=float(np.float32(score)),
                provenance=BoxProvenance(prov),
            )
        )
    # Scene provenance is not part of the wire format; reconstruct it from
    # the box provenances (pseudo iff every box is pseudo).
    if boxes and all(b.provenance == BoxProvenance.PSEUDO for b in boxes):
        provenance = SceneProvenance.PSEUDO
    else:
        provenance = SceneProvenance.LABELED
    return Scene(frame_id=frame_id, points=points, boxes=boxes, provenance=provenance)


def read_frame_id(path):
    """Read only the frame_id from a PAF1 file header."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise BadMagic(f"{path}: expected {MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise UnsupportedVersion(f"{path}: unsupported version {version}")
        (fid_len,) = struct.unpack("<I", _read_exact(f, 4, "frame_id length"))
        return _read_exact(f, fid_len, "frame_id").decode("utf-8")


_KITTI_CLASS_MAP = {
    "Car": ClassId.VEHICLE,
    "Van": ClassId.VEHICLE,
    "Truck": ClassId.VEHICLE,
    "Pedestrian": ClassId.PEDESTRIAN,
    "Person_sitting": ClassId.PEDESTRIAN,
    "Cyclist": ClassId.CYCLIST,
    "Tram": ClassId.OTHER,
    "Misc": ClassId.OTHER,
}


def read_kitti_frame(label_text, point_binary, frame_id, cam_to_lidar):
    """Build a Scene from KITTI-style label text and a velodyne payload.

    cam_to_lidar is a 4x4 homogeneous camera-to-LiDAR extrinsic. KITTI box
    locations are bottom centers in camera coordinates; output boxes use
    geometric centers in the z-up LiDAR frame.
    """
    if len(point_binary) % _POINT_BYTES != 0:
        raise BadPointPayload(
            f"payload size {len(point_binary)} is not a multiple of {_POINT_BYTES}"
        )
    points = (
        np.frombuffer(point_binary, dtype="<f4").reshape(-1, 4).astype(np.float64)
    )
    cam_to_lidar = np.asarray(cam_to_lidar, dtype=np.float64)
    if cam_to_lidar.shape != (4, 4):
        raise ValueError(f"cam_to_lidar must be 4x4, got {cam_to_lidar.shape}")
    rot = cam_to_lidar[:3, :3]

    boxes = []
    for line_number, line in enumerate(label_text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (15, 16):
            raise MalformedLabelLine(
                line_number, f"expected 15 or 16 fields, got {len(fields)}"
            )
        obj_type = fields[0]
        if obj_type == "DontCare":
            continue
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise MalformedLabelLine(line_number, str(exc)) from None
        h, w, l = values[7], values[8], values[9]
        loc_cam = np.array([values[10], values[11], values[12], 1.0])
        rotation_y = values[13]
        if min(h, w, l) <= 0.0:
            raise MalformedLabelLine(
                line_number, f"non-positive box dimensions ({l}, {w}, {h})"
            )
        bottom = cam_to_lidar @ loc_cam
        # KITTI yaw is about the camera y axis; map the object's forward
        # direction through the extrinsic and read the LiDAR-frame yaw.
        forward_cam = np.array(
            [np.cos(rotation_y), 0.0, -np.sin(rotation_y)], dtype=np.float64
        )
        forward = rot @ forward_cam
        heading = normalize_heading(np.arctan2(forward[1], forward[0]))
        boxes.append(
            LabeledBox(
                geometry=Box7(
                    bottom[0], bottom[1], bottom[2] + h / 2.0, l, w, h, heading
                ),
                class_id=_KITTI_CLASS_MAP.get(obj_type, ClassId.OTHER),
                score=1.0,
                provenance=BoxProvenance.GROUND_TRUTH,
            )
        )
    return Scene(
        frame_id=frame_id,
        points=points,
        boxes=boxes,
        provenance=SceneProvenance.LABELED,
    )


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    split: str
    entries: tuple  # of (frame_id, path) sorted by frame_id
    labeled_fraction: str = ""

    @property
    def frame_ids(self):
        return [fid for fid, _ in self.entries]


def scan_dataset(root, split=".", labeled_fraction=""):
    """Deterministic sorted manifest of the PAF1 frames under root/split."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise MissingSplit(f"split directory not found: {split_dir}")
    entries = {}
    for path in sorted(split_dir.glob(f"*{FRAME_SUFFIX}")):
        fid = read_frame_id(path)
        if fid in entries:
            raise DuplicateFrame(f"frame_id {fid!r} appears more than once")
        entries[fid] = str(path)
    return DatasetManifest(
        root=str(root),
        split=split,
        entries=tuple(sorted(entries.items())),
        labeled_fraction=labeled_fraction,
    )


def write_frame_file(scene, directory):
    path = Path(directory) / f"{scene.frame_id}{FRAME_SUFFIX}"
    with open(path, "wb") as f:
        write_frame(scene, f)
    return path


def read_frame_file(path):
    with open(path, "rb") as f:
        return read_frame(f)


def save_pseudo_database(db, root):
    """Persist one generation as gen_<k>/frames/*.paf; the MANIFEST file is
    written last as the commit marker."""
    gen_dir = Path(root) / f"gen_{db.generation}"
    frames_dir = gen_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for frame in db.frames:
        path = write_frame_file(frame, frames_dir)
        names.append(path.name)
    manifest = gen_dir / MANIFEST_NAME
    manifest.write_text(
        "\n".join([f"generation {db.generation}"] + sorted(names)) + "\n"
    )
    return gen_dir


def load_pseudo_database(root, generation=None):
    """Load the requested (default: latest committed) generation."""
    root = Path(root)
    committed = []
    for gen_dir in root.glob("gen_*"):
        if (gen_dir / MANIFEST_NAME).is_file():
            try:
                committed.append(int(gen_dir.name.split("_", 1)[1]))
            except ValueError:
                continue
    if not committed:
        raise DatasetError(f"no committed pseudo-database generation under {root}")
    k = max(committed) if generation is None else generation
    gen_dir = root / f"gen_{k}"
    manifest = gen_dir / MANIFEST_NAME
    if not manifest.is_file():
        raise DatasetError(f"generation {k} has no manifest under {root}")
    lines = manifest.read_text().splitlines()
    builder = PseudoDatabaseBuilder(generation=k)
    for name in lines[1:]:
        if not name:
            continue
        builder.add_frame(read_frame_file(gen_dir / "frames" / name))
    return builder.build()
