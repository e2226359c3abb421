"""Population-based search over policy schedules with population-based
distillation: top trials of earlier generations form a teacher ensemble
that refreshes the pseudo database at every generation boundary."""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom, pipeline
from .scene import (
    BoxProvenance,
    LabeledBox,
    PseudoDatabaseBuilder,
    Scene,
    SceneProvenance,
    empty_database,
)


class DetectorFailure(Exception):
    def __init__(self, trial_id, message=""):
        super().__init__(f"detector failed for trial {trial_id}: {message}")
        self.trial_id = trial_id


class TrainerFailure(Exception):
    pass


@dataclass(frozen=True)
class SearchConfig:
    total_steps: int = 20000
    generation_step: int = 1000
    population_size: int = 16
    teacher_count: int = 10
    teacher_min_ap: float = 0.35
    explore_rate: float = 0.8
    max_policies_mutated: int = 3
    truncation_fraction: float = 0.25
    nms_iou: float = 0.5
    # Teacher pool spans all prior generations; set False for the
    # previous-generation-only variant.
    teachers_from_all_generations: bool = True

    def validate(self):
        if not 0 < self.generation_step <= self.total_steps:
            raise ValueError("generation_step must satisfy 0 < K <= total_steps")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0.0 <= self.explore_rate <= 1.0:
            raise ValueError("explore_rate must be in [0, 1]")
        if self.max_policies_mutated < 1:
            raise ValueError("max_policies_mutated must be >= 1")
        if not 0.0 < self.truncation_fraction <= 0.5:
            raise ValueError("truncation_fraction must be in (0, 0.5]")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError("nms_iou must be in (0, 1)")
        return self

    @property
    def num_generations(self):
        return math.ceil(self.total_steps / self.generation_step)


@dataclass
class TrialState:
    trial_id: int
    schedule: pipeline.PolicySchedule
    handle: object
    objective_history: list = field(default_factory=list)
    failed: bool = False

    @property
    def objective(self):
        return self.objective_history[-1]


@dataclass(frozen=True)
class TeacherRecord:
    trial_id: int
    generation: int
    objective: float
    handle: object


@dataclass(frozen=True)
class TeacherEnsemble:
    members: tuple  # of TeacherRecord, best first
    nms_iou: float = 0.5

    @property
    def size(self):
        return len(self.members)


def init_population(cfg, trainer, rng):
    """M trials with uniformly sampled schedules and fresh model handles."""
    return [
        TrialState(
            trial_id=i,
            schedule=pipeline.random_schedule(rng),
            handle=trainer.init_model(i),
        )
        for i in range(cfg.population_size)
    ]


def exploit(population, cfg, rng):
    """Truncation selection: the bottom fraction copies schedule and model
    from uniformly chosen top-fraction trials. Returns the cloned trials
    (the only ones explore may mutate)."""
    for trial in population:
        if not trial.objective_history:
            raise ValueError("exploit requires a current-generation objective")
    n = math.ceil(cfg.truncation_fraction * len(population))
    ranked = sorted(population, key=lambda t: (-t.objective, t.trial_id))
    top, bottom = ranked[:n], ranked[-n:]
    cloned = []
    for trial in bottom:
        source = top[int(rng.integers(n))]
        trial.schedule = source.schedule
        trial.handle = copy.deepcopy(source.handle)
        trial.failed = False
        cloned.append(trial)
    return cloned


def explore(trial, cfg, rng):
    """With probability explore_rate, resample 1..max_policies_mutated
    distinct policies' bundles uniformly within their ranges. Returns the
    number of policies mutated."""
    if rng.random() >= cfg.explore_rate:
        return 0
    k = int(rng.integers(1, cfg.max_policies_mutated + 1))
    indices = rng.choice(len(pipeline.POLICY_ORDER), size=k, replace=False)
    schedule = trial.schedule
    for idx in sorted(int(i) for i in indices):
        schedule = pipeline.resample_policy(
            schedule, pipeline.POLICY_ORDER[idx], rng
        )
    trial.schedule = schedule
    return k


def select_teachers(records, cfg):
    """Top teacher_count prior-generation records with objective >=
    teacher_min_ap; possibly empty."""
    if cfg.teachers_from_all_generations:
        pool = list(records)
    else:
        last_gen = max((r.generation for r in records), default=-1)
        pool = [r for r in records if r.generation == last_gen]
    pool = [r for r in pool if r.objective >= cfg.teacher_min_ap]
    pool.sort(key=lambda r: (-r.objective, r.generation, r.trial_id))
    return TeacherEnsemble(members=tuple(pool[: cfg.teacher_count]),
                           nms_iou=cfg.nms_iou)


def nms_bev(boxes, iou_threshold):
    """Greedy NMS on LabeledBox lists: keep the highest-scored box of each
    BEV overlap cluster."""
    order = sorted(
        range(len(boxes)), key=lambda i: (-boxes[i].score, i)
    )
    kept = []
    for i in order:
        candidate = boxes[i]
        if any(
            geom.bev_iou(candidate.geometry, k.geometry) >= iou_threshold
            for k in kept
        ):
            continue
        kept.append(candidate)
    return kept


def ensemble_pseudo_label(frame, teachers, detect_fn):
    """Pool all teachers' detections on one frame and fuse them with
    greedy BEV NMS; the result is a pseudo-provenance scene.

    A failing teacher is skipped; if every teacher fails, DetectorFailure
    propagates.
    """
    if teachers.size == 0:
        raise ValueError("ensemble must contain at least one teacher")
    pooled = []
    failures = []
    for member in teachers.members:
        try:
            pooled.extend(detect_fn(member.handle, frame))
        except Exception as exc:  # noqa: BLE001 - teacher isolation
            failures.append((member.trial_id, exc))
    if len(failures) == teachers.size:
        raise DetectorFailure(failures[0][0], str(failures[0][1]))
    fused = nms_bev(pooled, teachers.nms_iou)
    boxes = tuple(
        replace(b, provenance=BoxProvenance.PSEUDO) for b in fused
    )
    return Scene(
        frame_id=frame.frame_id,
        points=frame.points,
        boxes=boxes,
        provenance=SceneProvenance.PSEUDO,
    )


@dataclass
class SearchReport:
    records: list = field(default_factory=list)  # one dict per trial per gen
    teacher_log: list = field(default_factory=list)  # one dict per generation
    db_refreshes: int = 0
    best_objective: float = 0.0
    best_schedule: pipeline.PolicySchedule = None

    def best_per_generation(self):
        out = {}
        for rec in self.records:
            g = rec["generation"]
            out[g] = max(out.get(g, 0.0), rec["objective"])
        return [out[g] for g in sorted(out)]


def run_search(cfg, trainer, labeled_set, unlabeled_set, rng):
    """Full search loop: at every generation boundary after the first,
    refresh the pseudo database through the teacher ensemble, then clone
    and mutate the bottom of the population; between boundaries every
    trial trains for one generation step."""
    cfg.validate()
    report = SearchReport()
    population = init_population(cfg, trainer, rng)
    db = empty_database(generation=0)
    teacher_records = []

    for generation in range(cfg.num_generations):
        if generation > 0:
            ensemble = select_teachers(teacher_records, cfg)
            report.teacher_log.append(
                {
                    "generation": generation,
                    "teachers": [
                        {
                            "trial_id": m.trial_id,
                            "generation": m.generation,
                            "objective": m.objective,
                        }
                        for m in ensemble.members
                    ],
                }
            )
            if ensemble.size > 0 and unlabeled_set:
                builder = PseudoDatabaseBuilder(generation=generation)
                for frame in unlabeled_set:
                    pseudo_frame = ensemble_pseudo_label(
                        frame, ensemble, trainer.detect
                    )
                    builder.add_frame(pseudo_frame)
                db = builder.build()  # atomic whole-generation swap
                report.db_refreshes += 1
            cloned = exploit(population, cfg, rng)
            for trial in cloned:
                explore(trial, cfg, rng)

        steps = min(
            cfg.generation_step,
            cfg.total_steps - generation * cfg.generation_step,
        )
        for trial in population:
            try:
                trainer.train(trial.handle, trial.schedule, db, steps, labeled_set)
                trial.failed = False
            except Exception:  # noqa: BLE001 - a failed trial must not kill the search
                trial.failed = True
        for trial in population:
            if trial.failed:
                objective = 0.0
            else:
                objective = float(
                    trainer.evaluate(trial.handle, trial.schedule, generation)
                )
            trial.objective_history.append(objective)
            teacher_records.append(
                TeacherRecord(
                    trial_id=trial.trial_id,
                    generation=generation,
                    objective=objective,
                    handle=copy.deepcopy(trial.handle),
                )
            )
            report.records.append(
                {
                    "trial_id": trial.trial_id,
                    "generation": generation,
                    "objective": objective,
                    "schedule": pipeline.encode_schedule(trial.schedule).tolist(),
                }
            )
            if objective >= report.best_objective:
                report.best_objective = objective
                report.best_schedule = trial.schedule
    return report


# --- Desk-scale surrogate -------------------------------------------------

# Kernel widths relative to each dimension's range: probabilities dominate
# the surrogate landscape, the remaining parameters contribute weakly.
_PROB_SIGMA_SCALE = 1.2
_OTHER_SIGMA_SCALE = 20.0


@dataclass(frozen=True)
class HiddenSpec:
    """Hidden optimum of the surrogate objective, derived from a seed.

    The objective is a product of per-policy Gaussian kernels between the
    trial's schedule vector and the hidden optimum, plus bounded seeded
    noise. Optima may drift smoothly across generations.
    """

    optima: np.ndarray
    seed: int
    noise_amplitude: float = 0.0
    drift_scale: float = 0.0

    @classmethod
    def from_seed(cls, seed, noise_amplitude=0.0, drift_scale=0.0):
        rng = np.random.default_rng(seed)
        optima = np.empty(pipeline.SCHEDULE_DIMENSION)
        for i, spec in enumerate(pipeline.PARAM_SPACE):
            span = spec.hi - spec.lo
            # Optima sit in the central half of each range.
            optima[i] = rng.uniform(spec.lo + 0.25 * span, spec.hi - 0.25 * span)
            if spec.integer:
                optima[i] = round(optima[i])  # keep integer dims attainable
        return cls(
            optima=optima,
            seed=int(seed),
            noise_amplitude=noise_amplitude,
            drift_scale=drift_scale,
        )

    def optima_at(self, generation):
        if self.drift_scale == 0.0:
            return self.optima
        shifted = self.optima.copy()
        for i, spec in enumerate(pipeline.PARAM_SPACE):
            span = spec.hi - spec.lo
            phase = 2.0 * math.pi * (self.seed % 97 + i) / 17.0
            shifted[i] += (
                self.drift_scale * span * math.sin(0.2 * generation + phase)
            )
            shifted[i] = min(max(shifted[i], spec.lo), spec.hi)
        return shifted

    def objective(self, schedule, generation):
        vector = pipeline.encode_schedule(schedule)
        optima = self.optima_at(generation)
        total = 0.0
        for i, spec in enumerate(pipeline.PARAM_SPACE):
            span = spec.hi - spec.lo
            if span <= 0:
                continue
            scale = (
                _PROB_SIGMA_SCALE
                if spec.name == "probability"
                else _OTHER_SIGMA_SCALE
            )
            nd = (vector[i] - optima[i]) / (scale * span)
            total += nd * nd
        value = math.exp(-total)
        if self.noise_amplitude > 0.0:
            digest = hashlib.blake2b(
                vector.tobytes() + f"|{generation}|{self.seed}".encode(),
                digest_size=8,
            ).digest()
            unit = int.from_bytes(digest, "little") / float(2**64)
            value += self.noise_amplitude * (2.0 * unit - 1.0)
        return min(max(value, 0.0), 1.0)


class SurrogateTrainer:
    """Desk-scale stand-in for detector training: model handles track
    steps and the last objective; detections echo a frame's boxes."""

    def __init__(self, hidden):
        self.hidden = hidden

    def init_model(self, trial_id):
        return {"steps": 0, "objective": 0.0}

    def train(self, handle, schedule, db, steps, labeled_set):
        handle["steps"] += steps

    def evaluate(self, handle, schedule, generation):
        objective = self.hidden.objective(schedule, generation)
        handle["objective"] = objective
        return objective

    def detect(self, handle, frame):
        score = min(1.0, 0.4 + 0.6 * handle["objective"])
        return [
            LabeledBox(
                geometry=b.geometry,
                class_id=b.class_id,
                score=score,
                provenance=BoxProvenance.PSEUDO,
            )
            for b in frame.boxes
        ]
