"""Fault diagnosis and self-recovery for a strawberry-harvesting cycle.

The package covers the full loop: positional-error compensation of the
approach, grasp verification while the gripper closes, sliding-window
slip prediction during snap-off, the recovery state machine that ties
the monitors together, and a seeded fault-injection simulator with its
evaluation metrics.
"""

from .errors import ProtocolError, ValidationError
from .geometry import (
    ArmPoint3,
    CompensationMode,
    CompensationParams,
    CompensationRecord,
    RelativeError,
    compensate_rows,
    compensated_point,
    mean_abs_error,
    needs_compensation,
    relative_error,
)
from .grasp import (
    GraspAction,
    GraspClass,
    GraspDecisionState,
    GraspModel,
    GripperObservation,
    classify_grasp,
    grasp_decision_step,
    train_grasp_classifier,
)
from .lstm import LstmArch, SlipModel, TrainConfig, lstm_forward, lstm_train
from .metrics import (
    ConfusionMatrix,
    RipenessEval,
    SuccessTally,
    aggregate_cycle_times,
    confusion_metrics,
    macro_f1,
    ripeness_loss,
    success_rates,
)
from .model_io import load_model, save_model
from .fsm import (
    DEFAULT_TIMING,
    Event,
    HarvestEpisode,
    Outcome,
    Stage,
    StageTiming,
    Variant,
    next_transition,
    run_episode,
    sample_stage_duration,
)
from .slip_decision import (
    Argmax,
    RecoveryAction,
    SlipProbabilities,
    StabilityState,
    Thresholds,
    classify_slip,
    time_stability_step,
)
from .slip_windows import (
    FrameFeatures,
    SlipLabel,
    SlipWindow,
    build_windows,
    oversample,
    stratified_split_counts,
)
from .world import EpisodeWorld, ScenarioConfig, gen_slip_trajectory, load_config, simulate_approach

__version__ = "0.1.0"
