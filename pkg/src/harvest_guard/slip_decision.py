"""Turning slip probabilities into labels and labels into actions.

Two classification policies sit on top of the 3-class softmax output: a
plain argmax (ties going to the more severe class) and a scalar
min/max-threshold rule on the combined slip score. A time-stability rule
then requires the same label on two consecutive frames before any action
fires, filtering single-frame flickers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ValidationError
from .slip_windows import SlipLabel

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class SlipProbabilities:
    p_normal: float
    p_slipping: float
    p_slipped: float

    def __post_init__(self) -> None:
        for name in ("p_normal", "p_slipping", "p_slipped"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        total = self.p_normal + self.p_slipping + self.p_slipped
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities must sum to 1 +/- {PROB_SUM_TOL}, got {total}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_normal, self.p_slipping, self.p_slipped)

    @property
    def slip_score(self) -> float:
        """Combined probability that the berry is slipping or gone."""
        return self.p_slipping + self.p_slipped


class Argmax:
    """Highest-probability class; ties break toward higher severity."""

    def __repr__(self) -> str:  # keeps policy objects readable in logs
        return "Argmax()"


@dataclass(frozen=True)
class Thresholds:
    """Scalar rule on slip score s = p_slipping + p_slipped:
    s < min_threshold -> Normal, s >= max_threshold -> Slipped,
    anything between -> Slipping."""

    min_threshold: float = 0.4
    max_threshold: float = 0.8

    def __post_init__(self) -> None:
        if not (0.0 < self.min_threshold < self.max_threshold < 1.0):
            raise ValidationError(
                f"need 0 < min < max < 1, got ({self.min_threshold}, {self.max_threshold})"
            )


def classify_slip(probs: SlipProbabilities, policy: Argmax | Thresholds = Argmax()) -> SlipLabel:
    if isinstance(policy, Thresholds):
        s = probs.slip_score
        if s < policy.min_threshold:
            return SlipLabel.NORMAL
        if s >= policy.max_threshold:
            return SlipLabel.SLIPPED
        return SlipLabel.SLIPPING
    if isinstance(policy, Argmax):
        best = SlipLabel.NORMAL
        best_p = probs.p_normal
        for label, p in (
            (SlipLabel.SLIPPING, probs.p_slipping),
            (SlipLabel.SLIPPED, probs.p_slipped),
        ):
            if p >= best_p:  # >= sends ties to the more severe label
                best, best_p = label, p
        return best
    raise ValidationError(f"unknown policy {policy!r}")


class RecoveryAction(Enum):
    CONTINUE_SNAP_OFF = "continue-snap-off"
    REGRASP_AND_RESNAP = "regrasp-and-resnap"
    ABORT_CYCLE = "abort-cycle"


# label confirmed twice in a row -> what the arm does about it
ACTION_FOR_LABEL = {
    SlipLabel.NORMAL: RecoveryAction.CONTINUE_SNAP_OFF,
    SlipLabel.SLIPPING: RecoveryAction.REGRASP_AND_RESNAP,
    SlipLabel.SLIPPED: RecoveryAction.ABORT_CYCLE,
}


@dataclass(frozen=True)
class StabilityState:
    """Running memory of the last prediction and how many consecutive
    frames produced it."""

    last: SlipLabel | None = None
    count: int = 0

    def __post_init__(self) -> None:
        if self.last is not None and self.count < 1:
            raise ValidationError("count must be >= 1 while a prediction is held")
        if self.last is None and self.count != 0:
            raise ValidationError("count must be 0 with no held prediction")


def time_stability_step(
    state: StabilityState, prediction: SlipLabel
) -> tuple[StabilityState, RecoveryAction | None]:
    """One frame of the two-consecutive rule.

    A repeat increments the count, a change resets it to 1. The moment a
    label is seen twice in a row the matching action fires and the state
    clears, so the next identical frame starts a fresh count.
    """
    count = state.count + 1 if prediction == state.last else 1
    if count >= 2:
        return StabilityState(), ACTION_FOR_LABEL[prediction]
    return StabilityState(last=prediction, count=count), None


def run_stability(predictions: list[SlipLabel]) -> tuple[RecoveryAction | None, int | None]:
    """Scan a prediction stream until the first action fires.

    Returns (action, index of the firing frame), or (None, None) when
    the stream ends without two consecutive equal predictions.
    """
    state = StabilityState()
    for i, p in enumerate(predictions):
        state, action = time_stability_step(state, p)
        if action is not None:
            return action, i
    return None, None
