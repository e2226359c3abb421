"""Batch entry points: frame augmentation, teacher fusion into a pseudo
database, metric reports, and the surrogate search loop.

Exit codes: 0 success, 2 malformed inputs or configuration, 3 write
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import frameio, metrics, pbt, pipeline
from .geom import Box7
from .scene import (
    BoxProvenance,
    ClassId,
    LabeledBox,
    PseudoDatabaseBuilder,
    Scene,
    SceneProvenance,
    empty_database,
)

EXIT_BAD_INPUT = 2
EXIT_WRITE_FAILURE = 3

RUN_MANIFEST_NAME = "run_manifest.json"


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_schedule(path):
    try:
        doc = json.loads(Path(path).read_text())
        return pipeline.schedule_from_dict(doc)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(EXIT_BAD_INPUT, f"cannot load schedule {path}: {exc}")


def _scan_frames(directory):
    try:
        manifest = frameio.scan_dataset(directory)
    except frameio.DatasetError as exc:
        raise CliError(EXIT_BAD_INPUT, str(exc))
    return manifest


def _prepare_out_dir(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliError(
            EXIT_BAD_INPUT, f"output directory {out} is not empty (use --force)"
        )
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_WRITE_FAILURE, f"cannot create {out}: {exc}")
    return out


def cmd_augment(args):
    manifest = _scan_frames(args.in_dir)
    schedule = _load_schedule(args.schedule)
    if args.only is not None and args.only not in pipeline.POLICY_ORDER:
        raise CliError(
            EXIT_BAD_INPUT,
            f"unknown policy {args.only!r}; choose from {list(pipeline.POLICY_ORDER)}",
        )
    db = empty_database()
    if args.pseudo_db:
        try:
            db = frameio.load_pseudo_database(args.pseudo_db)
        except frameio.DatasetError as exc:
            raise CliError(EXIT_BAD_INPUT, str(exc))
    out = _prepare_out_dir(args.out, args.force)
    if not manifest.entries:
        print("warning: input directory contains no frames", file=sys.stderr)
    counts = {name: 0 for name in pipeline.POLICY_ORDER}
    try:
        for frame_id, path in manifest.entries:
            scene = frameio.read_frame_file(path)
            if args.only is not None:
                result = pipeline.apply_single_policy(
                    scene, db, schedule, args.seed, args.only
                )
                if result is not scene:
                    counts[args.only] += 1
            else:
                applied = []
                result = pipeline.apply_schedule(
                    scene, db, schedule, args.seed, applied=applied
                )
                for name in applied:
                    counts[name] += 1
            frameio.write_frame_file(result, out)
        run_manifest = {
            "seed": args.seed,
            "only": args.only,
            "schedule": pipeline.schedule_to_dict(schedule),
            "policy_application_counts": counts,
            "num_frames": len(manifest.entries),
        }
        (out / RUN_MANIFEST_NAME).write_text(
            json.dumps(run_manifest, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise CliError(EXIT_WRITE_FAILURE, f"write failure: {exc}")
    return 0


def _parse_detection_file(path):
    """One record per line: frame_id class score cx cy cz l w h heading."""
    per_frame = {}
    class_names = {c.name.lower(): c for c in ClassId}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_BAD_INPUT, f"cannot read {path}: {exc}")
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 10:
            raise CliError(
                EXIT_BAD_INPUT,
                f"{path}:{line_number}: expected 10 fields, got {len(fields)}",
            )
        frame_id, class_name = fields[0], fields[1].lower()
        if class_name not in class_names:
            raise CliError(
                EXIT_BAD_INPUT, f"{path}:{line_number}: unknown class {fields[1]!r}"
            )
        try:
            score = float(fields[2])
            cx, cy, cz, l, w, h, heading = (float(v) for v in fields[3:])
            box = LabeledBox(
                geometry=Box7(cx, cy, cz, l, w, h, heading),
                class_id=class_names[class_name],
                score=score,
                provenance=BoxProvenance.PSEUDO,
            )
        except ValueError as exc:
            raise CliError(EXIT_BAD_INPUT, f"{path}:{line_number}: {exc}")
        per_frame.setdefault(frame_id, []).append(box)
    return per_frame


def cmd_fuse_teachers(args):
    manifest = _scan_frames(args.unlabeled)
    known = dict(manifest.entries)
    teacher_detections = [_parse_detection_file(p) for p in args.detections]
    for teacher in teacher_detections:
        for frame_id in teacher:
            if frame_id not in known:
                raise CliError(
                    EXIT_BAD_INPUT, f"unknown frame_id in detections: {frame_id!r}"
                )
    builder = PseudoDatabaseBuilder(generation=args.generation)
    for frame_id, path in manifest.entries:
        frame = frameio.read_frame_file(path)
        pooled = []
        for teacher in teacher_detections:
            pooled.extend(
                b for b in teacher.get(frame_id, []) if b.score >= args.min_score
            )
        fused = pbt.nms_bev(pooled, args.nms_iou)
        builder.add_frame(
            Scene(
                frame_id=frame_id,
                points=frame.points,
                boxes=tuple(fused),
                provenance=SceneProvenance.PSEUDO,
            )
        )
    db = builder.build()
    try:
        frameio.save_pseudo_database(db, args.out_db)
    except OSError as exc:
        raise CliError(EXIT_WRITE_FAILURE, f"write failure: {exc}")
    return 0


def _load_frame_map(directory):
    manifest = _scan_frames(directory)
    return {fid: frameio.read_frame_file(path) for fid, path in manifest.entries}


def cmd_metrics(args):
    gt_frames = _load_frame_map(args.gt)
    pseudo_frames = _load_frame_map(args.pseudo)
    missing = sorted(set(gt_frames) ^ set(pseudo_frames))
    if missing:
        raise CliError(
            EXIT_BAD_INPUT, f"mismatched frame sets; missing ids: {missing}"
        )
    rows = []
    if args.point_pr:
        per_class = {}
        pooled = metrics.PRResult(0, 0, 0)
        for fid in sorted(gt_frames):
            gt, ps = gt_frames[fid], pseudo_frames[fid]
            for cls in ClassId:
                result = metrics.point_precision_recall(
                    gt.points,
                    [b.geometry for b in gt.boxes if b.class_id == cls],
                    [b.geometry for b in ps.boxes if b.class_id == cls],
                )
                per_class[cls] = per_class.get(cls, metrics.PRResult(0, 0, 0)).merged(
                    result
                )
            pooled = pooled.merged(
                metrics.point_precision_recall(
                    gt.points,
                    [b.geometry for b in gt.boxes],
                    [b.geometry for b in ps.boxes],
                )
            )
        for cls in ClassId:
            r = per_class[cls]
            rows.append(("point_precision", cls.name.lower(), r.precision))
            rows.append(("point_recall", cls.name.lower(), r.recall))
        rows.append(("point_precision", "all", pooled.precision))
        rows.append(("point_recall", "all", pooled.recall))
    if args.ap:
        detections, gts = [], []
        for fid in sorted(gt_frames):
            gts.extend((b.geometry, b.class_id) for b in gt_frames[fid].boxes)
            detections.extend(
                (b.geometry, b.score, b.class_id) for b in pseudo_frames[fid].boxes
            )
        per_class_ap = metrics.detection_ap_per_class(detections, gts, args.iou)
        for cls, ap in sorted(per_class_ap.items()):
            rows.append(("detection_ap", ClassId(cls).name.lower(), ap))
        rows.append(("detection_ap", "all", metrics.detection_ap(
            detections, gts, args.iou)))
    for metric, cls, value in rows:
        print(f"{metric}.{cls}={value:.6f}")
    try:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["metric,class,value"]
        lines += [f"{m},{c},{v:.6f}" for m, c, v in rows]
        report_path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise CliError(EXIT_WRITE_FAILURE, f"write failure: {exc}")
    return 0


def make_surrogate_unlabeled_set(seed, num_frames=6):
    """Small deterministic synthetic unlabeled set so the distillation
    path is exercised during surrogate runs."""
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(num_frames):
        points = np.column_stack(
            [
                rng.uniform(-20, 20, 80),
                rng.uniform(-20, 20, 80),
                rng.uniform(-0.2, 3.0, 80),
                rng.uniform(0, 1, 80),
            ]
        )
        boxes = tuple(
            LabeledBox(
                geometry=Box7(
                    rng.uniform(-15, 15),
                    rng.uniform(-15, 15),
                    1.0,
                    4.0,
                    2.0,
                    1.8,
                    rng.uniform(-3, 3),
                ),
                class_id=ClassId.VEHICLE,
                score=1.0,
                provenance=BoxProvenance.GROUND_TRUTH,
            )
            for _ in range(3)
        )
        frames.append(
            Scene(
                frame_id=f"surrogate_{i:03d}",
                points=points,
                boxes=boxes,
                provenance=SceneProvenance.LABELED,
            )
        )
    return frames


def cmd_search(args):
    if not args.surrogate:
        raise CliError(
            EXIT_BAD_INPUT,
            "only --surrogate runs are supported; real trainers attach via the API",
        )
    try:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_BAD_INPUT, f"cannot load config: {exc}")
    try:
        cfg = pbt.SearchConfig(**doc)
    except TypeError as exc:
        raise CliError(EXIT_BAD_INPUT, f"invalid config: {exc}")
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(EXIT_BAD_INPUT, f"invalid config: {exc}")
    hidden = pbt.HiddenSpec.from_seed(
        args.seed, noise_amplitude=args.noise, drift_scale=args.drift
    )
    trainer = pbt.SurrogateTrainer(hidden)
    unlabeled = make_surrogate_unlabeled_set(args.seed)
    rng = np.random.default_rng(args.seed)
    report = pbt.run_search(cfg, trainer, labeled_set=[], unlabeled_set=unlabeled,
                            rng=rng)
    try:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        with open(report_path, "w") as f:
            for rec in report.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        summary = {
            "best_objective": report.best_objective,
            "best_schedule": pipeline.schedule_to_dict(report.best_schedule),
            "db_refreshes": report.db_refreshes,
            "teacher_log": report.teacher_log,
        }
        Path(str(report_path) + ".summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise CliError(EXIT_WRITE_FAILURE, f"write failure: {exc}")
    print(f"best_objective={report.best_objective:.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pseudoaug",
        description="Point-cloud augmentation engine: pseudo-label policies, "
        "geometric policies, and population-based schedule search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="augment a directory of PAF1 frames")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--pseudo-db", dest="pseudo_db", default=None)
    p.add_argument("--schedule", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--only", default=None, metavar="POLICY")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser(
        "fuse-teachers", help="fuse detection files into a pseudo database"
    )
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--nms-iou", dest="nms_iou", type=float, default=0.5)
    p.add_argument("--min-score", dest="min_score", type=float, default=0.5)
    p.add_argument("--out-db", dest="out_db", required=True)
    p.add_argument("--generation", type=int, default=0)
    p.set_defaults(func=cmd_fuse_teachers)

    p = sub.add_parser("metrics", help="point PR and detection AP reports")
    p.add_argument("--gt", required=True)
    p.add_argument("--pseudo", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--point-pr", dest="point_pr", action="store_true")
    p.add_argument("--ap", action="store_true")
    p.add_argument("--iou", type=float, default=0.7)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("search", help="population-based schedule search")
    p.add_argument("--config", default=None)
    p.add_argument("--surrogate", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--drift", type=float, default=0.0)
    p.set_defaults(func=cmd_search)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
