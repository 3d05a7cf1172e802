"""Eight-stage harvesting cycle with fault monitoring and recovery.

One episode walks InflatingApproaching -> [Compensation] -> Swallowing ->
Deflating -> SnapOff -> Descending -> [Placing] -> Homing. Three monitors
can redirect the walk: the approach check inserts a Compensation stage,
the grasp verifier can abort out of Deflating (skipping snap-off and
placing), and the slip monitor can either abort out of SnapOff (skipping
placing) or trigger one regrasp-and-resnap recovery.

Stage durations are drawn per (stage, variant) from a truncated normal;
fault responses replace the normal duration of their stage rather than
adding to it, which is how the reference timings account for them. A
slipping recovery spends one draw across two SnapOff records: the part
before detection and the re-snap after it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ProtocolError, ValidationError
from .geometry import CompensationParams, RelativeError
from .grasp import GraspAction, GraspClass, GraspDecisionState, grasp_decision_step, resolve_at_deadline
from .slip_decision import RecoveryAction, StabilityState, time_stability_step
from .slip_windows import SlipLabel


class Stage(Enum):
    INFLATING_APPROACHING = "inflating-approaching"
    COMPENSATION = "compensation"
    SWALLOWING = "swallowing"
    DEFLATING = "deflating"
    SNAP_OFF = "snap-off"
    DESCENDING = "descending"
    PLACING = "placing"
    HOMING = "homing"


class Variant(Enum):
    NORMAL = "normal"
    EMPTY_GRASP_RESPONSE = "empty-grasp-response"
    MISGRASP_RESPONSE = "misgrasp-response"
    SLIPPING_RECOVERY = "slipping-recovery"
    SLIPPED_ABORT = "slipped-abort"


class Event(Enum):
    ALIGNED = "aligned"
    MISALIGNED = "misaligned"
    COMPENSATED = "compensated"
    SWALLOWED = "swallowed"
    GRASP_OK = "grasp-ok"
    GRASP_ABORT = "grasp-abort"
    SNAP_OK = "snap-ok"
    TWO_CONSECUTIVE_SLIPPING = "two-consecutive-slipping"
    TWO_CONSECUTIVE_SLIPPED = "two-consecutive-slipped"
    DESCENDED_WITH_FRUIT = "descended-with-fruit"
    DESCENDED_EMPTY = "descended-empty"
    PLACED = "placed"
    HOMED = "homed"


class Outcome(Enum):
    PICKED_AND_PLACED = "picked-and-placed"
    ABORTED_EMPTY_OR_MISGRASP = "aborted-empty-or-misgrasp"
    ABORTED_SLIPPED = "aborted-slipped"
    RECOVERED_AFTER_SLIP = "recovered-after-slip"


# (stage, event) -> next (stage, variant); None = cycle complete
TRANSITIONS: dict[tuple[Stage, Event], tuple[Stage, Variant] | None] = {
    (Stage.INFLATING_APPROACHING, Event.ALIGNED): (Stage.SWALLOWING, Variant.NORMAL),
    (Stage.INFLATING_APPROACHING, Event.MISALIGNED): (Stage.COMPENSATION, Variant.NORMAL),
    (Stage.COMPENSATION, Event.COMPENSATED): (Stage.SWALLOWING, Variant.NORMAL),
    (Stage.SWALLOWING, Event.SWALLOWED): (Stage.DEFLATING, Variant.NORMAL),
    (Stage.DEFLATING, Event.GRASP_OK): (Stage.SNAP_OFF, Variant.NORMAL),
    (Stage.DEFLATING, Event.GRASP_ABORT): (Stage.DESCENDING, Variant.NORMAL),
    (Stage.SNAP_OFF, Event.SNAP_OK): (Stage.DESCENDING, Variant.NORMAL),
    (Stage.SNAP_OFF, Event.TWO_CONSECUTIVE_SLIPPING): (Stage.SNAP_OFF, Variant.SLIPPING_RECOVERY),
    (Stage.SNAP_OFF, Event.TWO_CONSECUTIVE_SLIPPED): (Stage.DESCENDING, Variant.NORMAL),
    (Stage.DESCENDING, Event.DESCENDED_WITH_FRUIT): (Stage.PLACING, Variant.NORMAL),
    (Stage.DESCENDING, Event.DESCENDED_EMPTY): (Stage.HOMING, Variant.NORMAL),
    (Stage.PLACING, Event.PLACED): (Stage.HOMING, Variant.NORMAL),
    (Stage.HOMING, Event.HOMED): None,
}


def next_transition(stage: Stage, event: Event) -> tuple[Stage, Variant] | None:
    try:
        return TRANSITIONS[(stage, event)]
    except KeyError:
        raise ProtocolError(f"event {event.value!r} is undefined in stage {stage.value!r}") from None


@dataclass(frozen=True)
class StageTiming:
    """Mean and std seconds per (stage, variant)."""

    entries: tuple[tuple[Stage, Variant, float, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        for stage, variant, mean, std in self.entries:
            if (stage, variant) in seen:
                raise ValidationError(f"duplicate timing entry for ({stage.value}, {variant.value})")
            seen.add((stage, variant))
            if mean <= 0:
                raise ValidationError(f"mean for ({stage.value}, {variant.value}) must be > 0, got {mean}")
            if std < 0:
                raise ValidationError(f"std for ({stage.value}, {variant.value}) must be >= 0, got {std}")

    def lookup(self, stage: Stage, variant: Variant) -> tuple[float, float]:
        for s, v, mean, std in self.entries:
            if s is stage and v is variant:
                return mean, std
        raise ValidationError(f"no timing entry for ({stage.value}, {variant.value})")

    def with_overrides(self, overrides: dict[tuple[Stage, Variant], tuple[float, float]]) -> "StageTiming":
        """Same table with some (stage, variant) means/stds replaced; lets
        alternative per-path accountings be replicated."""
        remaining = dict(overrides)
        rows = []
        for stage, variant, mean, std in self.entries:
            if (stage, variant) in remaining:
                mean, std = remaining.pop((stage, variant))
            rows.append((stage, variant, mean, std))
        for (stage, variant), (mean, std) in remaining.items():
            rows.append((stage, variant, mean, std))
        return StageTiming(tuple(rows))


DEFAULT_TIMING = StageTiming(
    (
        (Stage.INFLATING_APPROACHING, Variant.NORMAL, 1.25, 0.01),
        (Stage.COMPENSATION, Variant.NORMAL, 0.71, 0.07),
        (Stage.SWALLOWING, Variant.NORMAL, 0.73, 0.00),
        (Stage.DEFLATING, Variant.NORMAL, 0.99, 0.00),
        (Stage.DEFLATING, Variant.EMPTY_GRASP_RESPONSE, 0.42, 0.04),
        (Stage.DEFLATING, Variant.MISGRASP_RESPONSE, 0.39, 0.03),
        (Stage.SNAP_OFF, Variant.NORMAL, 1.03, 0.00),
        (Stage.SNAP_OFF, Variant.SLIPPING_RECOVERY, 1.81, 0.07),
        (Stage.SNAP_OFF, Variant.SLIPPED_ABORT, 1.44, 0.07),
        (Stage.DESCENDING, Variant.NORMAL, 0.98, 0.08),
        (Stage.PLACING, Variant.NORMAL, 4.36, 0.01),
        (Stage.HOMING, Variant.NORMAL, 1.88, 0.00),
    )
)

MIN_DURATION_S = 0.01


def sample_stage_duration(
    timing: StageTiming,
    stage: Stage,
    variant: Variant,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> float:
    """One duration draw: Normal(mean, std) floored at 0.01 s, or the
    mean exactly in deterministic mode."""
    mean, std = timing.lookup(stage, variant)
    if deterministic:
        return mean
    if rng is None:
        raise ValidationError("stochastic sampling needs an rng")
    return max(MIN_DURATION_S, float(rng.normal(mean, std)))


@dataclass(frozen=True)
class StageRecord:
    stage: Stage
    variant: Variant
    duration_s: float
    event: Event  # the event that closed this stage
    detail: str = ""


@dataclass(frozen=True)
class EpisodeTruth:
    """What the simulator actually injected, independent of detection."""

    positional_error: RelativeError
    grasp_outcome: GraspClass
    slip_outcome: SlipLabel


@dataclass(frozen=True)
class EpisodeResponses:
    """What the monitors decided."""

    compensated: bool
    residual_x: float | None
    residual_y: float | None
    grasp_action: GraspAction
    grasp_detected: GraspClass | None
    slip_action: RecoveryAction | None
    slip_detect_frame: int | None


@dataclass(frozen=True)
class HarvestEpisode:
    episode_id: int
    records: tuple[StageRecord, ...]
    truth: EpisodeTruth
    responses: EpisodeResponses
    outcome: Outcome

    def __post_init__(self) -> None:
        if not self.records or self.records[-1].stage is not Stage.HOMING:
            raise ValidationError("every episode must end with the homing stage")
        stages = [r.stage for r in self.records]
        if stages.count(Stage.COMPENSATION) > 1:
            raise ValidationError("compensation may occur at most once per cycle")
        if stages.count(Stage.PLACING) > 1:
            raise ValidationError("placing may occur at most once per cycle")
        if stages.count(Stage.SNAP_OFF) > 2:
            raise ValidationError("snap-off may occur at most twice per cycle")
        placing_expected = self.outcome in (Outcome.PICKED_AND_PLACED, Outcome.RECOVERED_AFTER_SLIP)
        if (Stage.PLACING in stages) != placing_expected:
            raise ValidationError(f"placing presence inconsistent with outcome {self.outcome.value}")

    @property
    def total_s(self) -> float:
        return sum(r.duration_s for r in self.records)


class ApproachLike(Protocol):
    visual_error: RelativeError
    compensated: bool
    residual_x: float
    residual_y: float


class WorldLike(Protocol):
    """What run_episode needs from a simulation world."""

    def sample_truth(self, rng: np.random.Generator) -> EpisodeTruth: ...

    def approach(self, truth: EpisodeTruth, rng: np.random.Generator) -> ApproachLike: ...

    def grasp_stream(self, truth: EpisodeTruth, rng: np.random.Generator) -> Sequence[GraspClass]: ...

    def slip_stream(self, truth: EpisodeTruth, rng: np.random.Generator) -> Sequence[SlipLabel]: ...


@dataclass(frozen=True)
class Policies:
    compensation: CompensationParams = field(default_factory=CompensationParams)
    pool_grasp_faults: bool = True


def run_episode(
    world: WorldLike,
    timing: StageTiming = DEFAULT_TIMING,
    policies: Policies = Policies(),
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
    episode_id: int = 0,
) -> HarvestEpisode:
    """Drive one full cycle; faults become outcomes, never exceptions."""
    if rng is None:
        rng = np.random.default_rng(0)

    def draw(stage: Stage, variant: Variant) -> float:
        return sample_stage_duration(timing, stage, variant, rng, deterministic)

    records: list[StageRecord] = []
    truth = world.sample_truth(rng)

    # approach; the visual check decides whether a compensation move runs
    approach = world.approach(truth, rng)
    ia_event = Event.MISALIGNED if approach.compensated else Event.ALIGNED
    records.append(
        StageRecord(
            Stage.INFLATING_APPROACHING,
            Variant.NORMAL,
            draw(Stage.INFLATING_APPROACHING, Variant.NORMAL),
            ia_event,
            f"visual error ({approach.visual_error.dx:.1f}, {approach.visual_error.dy:.1f}) mm",
        )
    )
    stage, variant = _must_transition(Stage.INFLATING_APPROACHING, ia_event)
    if stage is Stage.COMPENSATION:
        records.append(
            StageRecord(
                Stage.COMPENSATION,
                Variant.NORMAL,
                draw(Stage.COMPENSATION, Variant.NORMAL),
                Event.COMPENSATED,
                f"residual ({approach.residual_x:.1f}, {approach.residual_y:.1f}) mm",
            )
        )
        stage, variant = _must_transition(Stage.COMPENSATION, Event.COMPENSATED)

    records.append(
        StageRecord(Stage.SWALLOWING, Variant.NORMAL, draw(Stage.SWALLOWING, Variant.NORMAL), Event.SWALLOWED)
    )
    stage, variant = _must_transition(Stage.SWALLOWING, Event.SWALLOWED)

    # deflating: the grasp verifier watches frames until a verdict or the
    # stage ends (fail-open)
    grasp_state = GraspDecisionState()
    grasp_action: GraspAction | None = None
    grasp_detected: GraspClass | None = None
    for cls in world.grasp_stream(truth, rng):
        grasp_state, grasp_action = grasp_decision_step(grasp_state, cls, policies.pool_grasp_faults)
        if grasp_action is not None:
            grasp_detected = cls
            break
    if grasp_action is None:
        grasp_action = resolve_at_deadline(grasp_state)

    if grasp_action is GraspAction.ABORT_CYCLE:
        # fault response replaces the normal deflating duration and folds
        # in the re-inflation move
        response = (
            Variant.EMPTY_GRASP_RESPONSE
            if grasp_detected is GraspClass.EMPTY
            else Variant.MISGRASP_RESPONSE
        )
        records.append(
            StageRecord(
                Stage.DEFLATING,
                response,
                draw(Stage.DEFLATING, response),
                Event.GRASP_ABORT,
                f"detected {grasp_detected.name.lower()}",
            )
        )
        stage, variant = _must_transition(Stage.DEFLATING, Event.GRASP_ABORT)
        responses = EpisodeResponses(
            compensated=approach.compensated,
            residual_x=approach.residual_x if approach.compensated else None,
            residual_y=approach.residual_y if approach.compensated else None,
            grasp_action=grasp_action,
            grasp_detected=grasp_detected,
            slip_action=None,
            slip_detect_frame=None,
        )
        _descend_and_home(records, draw, with_fruit=False)
        return HarvestEpisode(
            episode_id, tuple(records), truth, responses, Outcome.ABORTED_EMPTY_OR_MISGRASP
        )

    records.append(
        StageRecord(Stage.DEFLATING, Variant.NORMAL, draw(Stage.DEFLATING, Variant.NORMAL), Event.GRASP_OK)
    )
    stage, variant = _must_transition(Stage.DEFLATING, Event.GRASP_OK)

    # snap-off: the slip monitor scans window predictions; the first
    # regrasp or abort action decides the path
    predictions = list(world.slip_stream(truth, rng))
    stability = StabilityState()
    slip_action: RecoveryAction | None = None
    detect_idx: int | None = None
    for i, pred in enumerate(predictions):
        stability, action = time_stability_step(stability, pred)
        if action in (RecoveryAction.REGRASP_AND_RESNAP, RecoveryAction.ABORT_CYCLE):
            slip_action, detect_idx = action, i
            break

    outcome = Outcome.PICKED_AND_PLACED
    if slip_action is RecoveryAction.ABORT_CYCLE:
        records.append(
            StageRecord(
                Stage.SNAP_OFF,
                Variant.SLIPPED_ABORT,
                draw(Stage.SNAP_OFF, Variant.SLIPPED_ABORT),
                Event.TWO_CONSECUTIVE_SLIPPED,
                f"slip confirmed at window {detect_idx}",
            )
        )
        stage, variant = _must_transition(Stage.SNAP_OFF, Event.TWO_CONSECUTIVE_SLIPPED)
        outcome = Outcome.ABORTED_SLIPPED
    elif slip_action is RecoveryAction.REGRASP_AND_RESNAP:
        # one recovery draw covers the whole snap-off phase, split at the
        # detection point across the interrupted and re-snap records
        phase = draw(Stage.SNAP_OFF, Variant.SLIPPING_RECOVERY)
        frames_seen = detect_idx + 1
        fraction = frames_seen / max(len(predictions), frames_seen)
        records.append(
            StageRecord(
                Stage.SNAP_OFF,
                Variant.SLIPPING_RECOVERY,
                phase * fraction,
                Event.TWO_CONSECUTIVE_SLIPPING,
                f"slipping confirmed at window {detect_idx}",
            )
        )
        stage, variant = _must_transition(Stage.SNAP_OFF, Event.TWO_CONSECUTIVE_SLIPPING)
        records.append(
            StageRecord(
                Stage.SNAP_OFF,
                Variant.SLIPPING_RECOVERY,
                phase * (1.0 - fraction),
                Event.SNAP_OK,
                "regrasped and re-snapped",
            )
        )
        stage, variant = _must_transition(Stage.SNAP_OFF, Event.SNAP_OK)
        outcome = Outcome.RECOVERED_AFTER_SLIP
    else:
        records.append(
            StageRecord(Stage.SNAP_OFF, Variant.NORMAL, draw(Stage.SNAP_OFF, Variant.NORMAL), Event.SNAP_OK)
        )
        stage, variant = _must_transition(Stage.SNAP_OFF, Event.SNAP_OK)

    responses = EpisodeResponses(
        compensated=approach.compensated,
        residual_x=approach.residual_x if approach.compensated else None,
        residual_y=approach.residual_y if approach.compensated else None,
        grasp_action=grasp_action,
        grasp_detected=grasp_detected,
        slip_action=slip_action,
        slip_detect_frame=detect_idx,
    )
    _descend_and_home(records, draw, with_fruit=outcome is not Outcome.ABORTED_SLIPPED)
    return HarvestEpisode(episode_id, tuple(records), truth, responses, outcome)


def _must_transition(stage: Stage, event: Event) -> tuple[Stage, Variant]:
    nxt = next_transition(stage, event)
    if nxt is None:
        raise ProtocolError(f"cycle already complete after {stage.value}")
    return nxt


def _descend_and_home(records: list[StageRecord], draw, with_fruit: bool) -> None:
    descend_event = Event.DESCENDED_WITH_FRUIT if with_fruit else Event.DESCENDED_EMPTY
    records.append(
        StageRecord(Stage.DESCENDING, Variant.NORMAL, draw(Stage.DESCENDING, Variant.NORMAL), descend_event)
    )
    stage, variant = _must_transition(Stage.DESCENDING, descend_event)
    if stage is Stage.PLACING:
        records.append(
            StageRecord(Stage.PLACING, Variant.NORMAL, draw(Stage.PLACING, Variant.NORMAL), Event.PLACED)
        )
        stage, variant = _must_transition(Stage.PLACING, Event.PLACED)
    records.append(
        StageRecord(Stage.HOMING, Variant.NORMAL, draw(Stage.HOMING, Variant.NORMAL), Event.HOMED)
    )
    assert next_transition(Stage.HOMING, Event.HOMED) is None


LOG_FIELDS = ("episode_id", "seq", "stage", "variant", "duration_s", "event", "detail")


def write_episode_log(path: str | Path, episodes: Iterable[HarvestEpisode]) -> None:
    """One structured line per stage record, fixed key order, byte-stable
    for identical inputs."""
    path = Path(path)
    with path.open("w") as fh:
        for ep in episodes:
            for seq, rec in enumerate(ep.records):
                doc = {
                    "episode_id": ep.episode_id,
                    "seq": seq,
                    "stage": rec.stage.value,
                    "variant": rec.variant.value,
                    "duration_s": rec.duration_s,
                    "event": rec.event.value,
                    "detail": rec.detail,
                }
                fh.write(json.dumps(doc) + "\n")


def read_episode_log(path: str | Path) -> list[dict[str, object]]:
    path = Path(path)
    out: list[dict[str, object]] = []
    with path.open() as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                if list(doc.keys()) != list(LOG_FIELDS):
                    raise ValidationError(f"{path}: unexpected log fields {list(doc.keys())}")
                out.append(doc)
    return out
