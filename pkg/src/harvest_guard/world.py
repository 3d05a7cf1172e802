"""Synthetic world: injected faults, noisy approaches, feature curves.

Everything here is generation. Given a scenario config and a seed it
produces positional errors with actuation/vision noise, gripper-content
observations per injected class, slip feature trajectories whose curves
mimic the recorded slip process (area roughly constant while held, linear
decay plus center drift while slipping, near-zero area once gone), and
whole datasets with exact per-class window counts.

Determinism contract: every episode or trajectory draws from its own
generator seeded by (master seed, index), so outputs are byte-identical
across runs and independent of scheduling.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fsm import DEFAULT_TIMING, EpisodeTruth, HarvestEpisode, Policies, StageTiming, run_episode
from .geometry import (
    ArmPoint3,
    CompensationParams,
    CompensationRecord,
    RelativeError,
    compensated_point,
    needs_compensation,
)
from .grasp import GraspClass, GraspModel, GripperObservation, classify_grasp
from .lstm import SlipModel, predict_proba
from .slip_decision import Argmax, SlipProbabilities, Thresholds, classify_slip
from .slip_windows import FrameFeatures, SlipLabel, build_windows, write_slip_csv

PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of the synthetic world; defaults give a plausible orchard."""

    episodes: int = 100
    master_seed: int = 1

    # approach: injected positional error and the two noise sources, mm
    error_mean_x_mm: float = 12.0
    error_mean_y_mm: float = 8.0
    error_std_x_mm: float = 6.0
    error_std_y_mm: float = 5.0
    actuation_noise_std_mm: float = 3.0
    vision_noise_std_mm: float = 2.0

    # grasp outcome mix and observation noise
    p_ripe: float = 0.8
    p_empty: float = 0.1
    p_unripe: float = 0.1
    grasp_noise_scale: float = 1.0
    grasp_frames: int = 4

    # slip outcome mix and trajectory shape
    p_slip_normal: float = 0.7
    p_slipping: float = 0.15
    p_slipped: float = 0.15
    slip_initial_area: float = 0.30
    slip_decay_rate: float = 0.02
    frames_normal: int = 6
    frames_slipping: int = 4
    frames_slipped: int = 4
    slip_noise_std: float = 0.004

    ripeness_threshold: float = 0.8

    def __post_init__(self) -> None:
        if self.episodes < 0:
            raise ValidationError(f"episodes must be non-negative, got {self.episodes}")
        for name in (
            "error_std_x_mm",
            "error_std_y_mm",
            "actuation_noise_std_mm",
            "vision_noise_std_mm",
            "slip_noise_std",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        for triple, names in (
            ((self.p_ripe, self.p_empty, self.p_unripe), "grasp probabilities"),
            ((self.p_slip_normal, self.p_slipping, self.p_slipped), "slip probabilities"),
        ):
            if any(p < 0 for p in triple):
                raise ValidationError(f"{names} must be non-negative, got {triple}")
            if abs(sum(triple) - 1.0) > PROB_SUM_TOL:
                raise ValidationError(f"{names} must sum to 1 +/- {PROB_SUM_TOL}, got {sum(triple)}")
        if not (0.0 <= self.ripeness_threshold <= 1.1):
            raise ValidationError(f"ripeness_threshold must lie in [0, 1.1], got {self.ripeness_threshold}")
        if not (0.0 < self.slip_initial_area <= 0.5):
            raise ValidationError(f"slip_initial_area must lie in (0, 0.5], got {self.slip_initial_area}")
        if self.slip_decay_rate <= 0:
            raise ValidationError(f"slip_decay_rate must be > 0, got {self.slip_decay_rate}")
        for name in ("frames_normal", "frames_slipping", "frames_slipped", "grasp_frames"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")


# INI layout: section -> {key: attribute}
_CONFIG_SCHEMA: dict[str, dict[str, str]] = {
    "simulation": {"episodes": "episodes", "master_seed": "master_seed"},
    "approach": {
        "error_mean_x_mm": "error_mean_x_mm",
        "error_mean_y_mm": "error_mean_y_mm",
        "error_std_x_mm": "error_std_x_mm",
        "error_std_y_mm": "error_std_y_mm",
        "actuation_noise_std_mm": "actuation_noise_std_mm",
        "vision_noise_std_mm": "vision_noise_std_mm",
    },
    "grasp": {
        "p_ripe": "p_ripe",
        "p_empty": "p_empty",
        "p_unripe": "p_unripe",
        "noise_scale": "grasp_noise_scale",
        "frames": "grasp_frames",
    },
    "slip": {
        "p_normal": "p_slip_normal",
        "p_slipping": "p_slipping",
        "p_slipped": "p_slipped",
        "initial_area": "slip_initial_area",
        "decay_rate": "slip_decay_rate",
        "frames_normal": "frames_normal",
        "frames_slipping": "frames_slipping",
        "frames_slipped": "frames_slipped",
        "feature_noise_std": "slip_noise_std",
    },
    "ripeness": {"threshold": "ripeness_threshold"},
}

_INT_FIELDS = {
    "episodes",
    "master_seed",
    "grasp_frames",
    "frames_normal",
    "frames_slipping",
    "frames_slipped",
}


def load_config(path: str | Path) -> ScenarioConfig:
    """Read an INI scenario file; missing keys keep their defaults,
    unknown keys are rejected."""
    path = Path(path)
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise OSError(f"cannot read config {path}")
    kwargs: dict[str, object] = {}
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise ValidationError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_SCHEMA[section]:
                raise ValidationError(f"{path}: unknown key {key!r} in [{section}]")
            attr = _CONFIG_SCHEMA[section][key]
            try:
                kwargs[attr] = int(raw) if attr in _INT_FIELDS else float(raw)
            except ValueError as exc:
                raise ValidationError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
    return ScenarioConfig(**kwargs)


def save_config(path: str | Path, config: ScenarioConfig) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _CONFIG_SCHEMA.items():
        parser[section] = {}
        for key, attr in keys.items():
            value = getattr(config, attr)
            parser[section][key] = str(value)
    path = Path(path)
    with path.open("w") as fh:
        parser.write(fh)


def episode_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-episode generator; independent of how many episodes ran before."""
    return np.random.default_rng([master_seed, index])


# --- slip trajectories --------------------------------------------------

@dataclass(frozen=True)
class SlipTrajectory:
    frames: tuple[FrameFeatures, ...]
    labels: tuple[SlipLabel, ...]

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.labels):
            raise ValidationError("frames and labels differ in length")
        for a, b in zip(self.labels, self.labels[1:]):
            if b < a:
                raise ValidationError("slip severity may never decrease within a trajectory")


# base geometry of the visible strawberry box
_GRIPPER_AREA = 0.35
_BOX_W, _BOX_H = 0.28, 0.30
_CENTER_X, _CENTER_Y = 0.50, 0.45
_Y_DRIFT_PER_FRAME = 0.02
_GONE_AREA = 0.005
_MIN_AREA = 0.01
# a drop builds up before its annotated onset; the last few pre-slip
# frames creep at a rising fraction of the full rate
_PRE_SLIP_FRAMES = 3
# an irrecoverable drop pulls away faster than a recoverable slip
_DROP_ACCEL = 3.0


def _make_frame(
    s_area: float, w: float, h: float, x: float, y: float, noise: float, rng: np.random.Generator
) -> FrameFeatures:
    def jitter(v: float, lo: float = 0.0, hi: float = 1.0) -> float:
        if noise > 0:
            v = v + rng.normal(0.0, noise)
        return float(min(hi, max(lo, v)))

    s = jitter(s_area, 0.001, 0.60)
    g = jitter(_GRIPPER_AREA, 0.05, 0.60)
    background = 1.0 - s - g
    return FrameFeatures(
        strawberry_area=s,
        gripper_area=g,
        background_area=background,
        w=jitter(w),
        h=jitter(h),
        x=jitter(x),
        y=jitter(y),
    )


def _trajectory(
    config: ScenarioConfig,
    phases: tuple[int, int, int],
    rng: np.random.Generator,
    accel: float = 1.0,
) -> SlipTrajectory:
    """Curve generator over (normal, slipping, slipped) phase lengths.

    When a fault phase follows, the tail of the normal phase already
    creeps (fractional area decay plus downward drift). Window labels
    look ahead of the frames they cover, so the pre-onset cue is what
    makes them predictable at all. `accel` scales the motion rate.
    """
    n_normal, n_slipping, n_slipped = phases
    frames: list[FrameFeatures] = []
    labels: list[SlipLabel] = []
    noise = config.slip_noise_std
    area0 = config.slip_initial_area

    def box_scale(area: float) -> float:
        return float(np.sqrt(max(area, 0.0) / area0))

    def moved(area: float, y: float, frac: float) -> tuple[float, float]:
        area = max(_MIN_AREA, area - config.slip_decay_rate * accel * frac)
        y = min(1.0, y + _Y_DRIFT_PER_FRAME * accel * frac)
        return area, y

    area, y = area0, _CENTER_Y
    ramp = min(_PRE_SLIP_FRAMES, n_normal) if (n_slipping or n_slipped) else 0
    for i in range(n_normal):
        left = n_normal - i
        if ramp and left <= ramp:
            area, y = moved(area, y, (ramp - left + 1) / ramp)
        scale = box_scale(area)
        frames.append(_make_frame(area, _BOX_W * scale, _BOX_H * scale, _CENTER_X, y, noise, rng))
        labels.append(SlipLabel.NORMAL)
    for _ in range(n_slipping):
        area, y = moved(area, y, 1.0)
        scale = box_scale(area)
        frames.append(_make_frame(area, _BOX_W * scale, _BOX_H * scale, _CENTER_X, y, noise, rng))
        labels.append(SlipLabel.SLIPPING)
    for _ in range(n_slipped):
        frames.append(_make_frame(_GONE_AREA, 0.0, 0.0, 0.0, 0.0, 0.0, rng))
        labels.append(SlipLabel.SLIPPED)
    return SlipTrajectory(tuple(frames), tuple(labels))


def gen_slip_trajectory(
    config: ScenarioConfig,
    outcome: SlipLabel,
    rng: np.random.Generator,
    length: int | None = None,
) -> SlipTrajectory:
    """One snap-off observation sequence for the requested outcome class.

    All outcomes share the same total length (so downstream window counts
    match); `length` overrides it for normal-outcome sequences. A slipped
    outcome passes through at most one slipping frame, reflecting how
    abruptly an actual drop shows up at the frame rate.
    """
    total = config.frames_normal + config.frames_slipping + config.frames_slipped
    if outcome is SlipLabel.NORMAL:
        return _trajectory(config, (length or total, 0, 0), rng)
    if length is not None:
        raise ValidationError("length override applies to normal-outcome trajectories only")
    if outcome is SlipLabel.SLIPPING:
        return _trajectory(config, (config.frames_normal, total - config.frames_normal, 0), rng)
    if outcome is SlipLabel.SLIPPED:
        bridge = min(1, config.frames_slipping)
        return _trajectory(
            config,
            (config.frames_normal, bridge, total - config.frames_normal - bridge),
            rng,
            accel=_DROP_ACCEL,
        )
    raise ValidationError(f"unknown slip outcome {outcome!r}")


# --- grasp observations --------------------------------------------------

# class-conditional feature ranges; red/green clipped into disjoint bands
# so the classes stay linearly separable at any noise scale
_GRASP_BANDS = {
    GraspClass.RIPE_HELD: {"red": (0.62, 0.05, 0.35, 0.90), "green": (0.06, 0.02, 0.0, 0.20), "area": (0.50, 0.05, 0.20, 0.80)},
    GraspClass.UNRIPE_HELD: {"red": (0.05, 0.02, 0.0, 0.20), "green": (0.55, 0.05, 0.35, 0.90), "area": (0.45, 0.05, 0.20, 0.80)},
}


def gen_grasp_observation(
    outcome: GraspClass, rng: np.random.Generator, noise_scale: float = 1.0
) -> GripperObservation:
    if outcome is GraspClass.EMPTY:
        if noise_scale == 0.0:
            return GripperObservation(0.0, 0.0, 0.0, False)
        small = lambda: float(min(0.15, abs(rng.normal(0.0, 0.02 * noise_scale))))
        red, green = small(), small()
        area = small()
        return GripperObservation(red, green, area, False)
    bands = _GRASP_BANDS[outcome]

    def draw(name: str) -> float:
        mean, std, lo, hi = bands[name]
        return float(min(hi, max(lo, rng.normal(mean, std * noise_scale))))

    return GripperObservation(draw("red"), draw("green"), max(draw("area"), 0.05), True)


def sample_grasp_dataset(
    counts: tuple[int, int, int], seed: int, noise_scale: float = 1.0
) -> list[tuple[GripperObservation, GraspClass]]:
    """counts = (ripe, empty, unripe) observations, deterministic per seed."""
    if any(c < 0 for c in counts):
        raise ValidationError(f"counts must be non-negative, got {counts}")
    out: list[tuple[GripperObservation, GraspClass]] = []
    for cls, n in zip((GraspClass.RIPE_HELD, GraspClass.EMPTY, GraspClass.UNRIPE_HELD), counts):
        rng = np.random.default_rng([seed, int(cls)])
        out.extend((gen_grasp_observation(cls, rng, noise_scale), cls) for _ in range(n))
    return out


# --- approach simulation --------------------------------------------------

# nominal picking point in arm coordinates, mm; residuals do not depend
# on its location
NOMINAL_PICKING_POINT = ArmPoint3(400.0, 300.0, 250.0)


@dataclass(frozen=True)
class ApproachOutcome:
    record: CompensationRecord
    visual_error: RelativeError
    compensated: bool
    residual_x: float
    residual_y: float


def simulate_approach(
    config: ScenarioConfig,
    params: CompensationParams,
    rng: np.random.Generator,
    injected_error: RelativeError | None = None,
    picking: ArmPoint3 = NOMINAL_PICKING_POINT,
) -> ApproachOutcome:
    """One noisy approach with optional correction.

    The arm aims at the picking point but lands offset by the injected
    error plus actuation noise; vision measures the offset with its own
    noise; if the measured error trips the threshold the arm re-aims at
    the compensated point (fresh actuation noise). The residual is the
    true point minus where the effector finally sits, per axis.
    """
    if injected_error is None:
        ex = rng.normal(config.error_mean_x_mm, config.error_std_x_mm)
        ey = rng.normal(config.error_mean_y_mm, config.error_std_y_mm)
        injected_error = RelativeError(float(ex), float(ey))

    act = config.actuation_noise_std_mm
    vis = config.vision_noise_std_mm
    a1x, a1y = rng.normal(0.0, act, size=2) if act > 0 else (0.0, 0.0)
    e1 = ArmPoint3(
        picking.x - injected_error.dx + a1x,
        picking.y - injected_error.dy + a1y,
        picking.z,
    )
    v_x, v_y = rng.normal(0.0, vis, size=2) if vis > 0 else (0.0, 0.0)
    visual = RelativeError((picking.x - e1.x) + v_x, (picking.y - e1.y) + v_y)

    if not needs_compensation(visual, params):
        uncompensated = CompensationRecord(
            picking=picking,
            effector=e1,
            visual_err=visual,
            physical_err_x=injected_error.dx,
            physical_err_y=injected_error.dy,
            compensated=None,
            residual_x=None,
            residual_y=None,
        )
        return ApproachOutcome(
            uncompensated,
            visual,
            False,
            float(injected_error.dx - a1x),
            float(injected_error.dy - a1y),
        )

    target = compensated_point(picking, visual, params)
    a2x, a2y = rng.normal(0.0, act, size=2) if act > 0 else (0.0, 0.0)
    e2 = ArmPoint3(
        target.x - injected_error.dx + a2x,
        target.y - injected_error.dy + a2y,
        target.z,
    )
    residual_x = picking.x - e2.x
    residual_y = picking.y - e2.y
    record = CompensationRecord(
        picking=picking,
        effector=e1,
        visual_err=visual,
        physical_err_x=injected_error.dx,
        physical_err_y=injected_error.dy,
        compensated=target,
        residual_x=float(residual_x),
        residual_y=float(residual_y),
    )
    return ApproachOutcome(record, visual, True, float(residual_x), float(residual_y))


# --- dataset generation ---------------------------------------------------

def plan_slip_trajectories(
    config: ScenarioConfig, targets: tuple[int, int, int]
) -> list[tuple[int, int, int]]:
    """Phase plans whose window yields hit the target label counts exactly.

    A trajectory of 7 normal frames followed by k fault frames yields
    exactly k windows of that fault label (the 3-frame lookahead promotes
    every window); a pure normal run of 7+m frames yields m normal
    windows. Targets are chunked to the configured phase sizes.
    """
    n_normal, n_slipping, n_slipped = targets
    if min(targets) < 0:
        raise ValidationError(f"targets must be non-negative, got {targets}")
    plans: list[tuple[int, int, int]] = []
    chunk_fault = config.frames_slipping + config.frames_slipped
    for target, kind in ((n_slipping, "slipping"), (n_slipped, "slipped")):
        full, rest = divmod(target, chunk_fault)
        sizes = [chunk_fault] * full + ([rest] if rest else [])
        for k in sizes:
            plans.append((7, k, 0) if kind == "slipping" else (7, 0, k))
    chunk_normal = config.frames_normal + config.frames_slipping + config.frames_slipped - 7
    chunk_normal = max(chunk_normal, 1)
    full, rest = divmod(n_normal, chunk_normal)
    plans.extend([(7 + chunk_normal, 0, 0)] * full)
    if rest:
        plans.append((7 + rest, 0, 0))
    return plans


def gen_slip_dataset(
    path: str | Path,
    config: ScenarioConfig,
    targets: tuple[int, int, int],
    seed: int,
) -> None:
    """SlipData CSV whose per-label window counts equal `targets` exactly."""
    plans = plan_slip_trajectories(config, targets)
    episodes = []
    for i, phases in enumerate(plans):
        accel = _DROP_ACCEL if phases[2] else 1.0
        traj = _trajectory(config, phases, episode_rng(seed, i), accel=accel)
        episodes.append((i, list(traj.frames), list(traj.labels)))
    write_slip_csv(path, episodes)


def gen_grasp_dataset(
    path: str | Path,
    config: ScenarioConfig,
    counts: tuple[int, int, int],
    seed: int,
) -> None:
    """GraspData CSV with exactly `counts` = (ripe, empty, unripe) rows."""
    from .grasp import write_grasp_csv

    write_grasp_csv(path, sample_grasp_dataset(counts, seed, config.grasp_noise_scale))


# --- the episode world ----------------------------------------------------

_GRASP_ORDER = (GraspClass.RIPE_HELD, GraspClass.EMPTY, GraspClass.UNRIPE_HELD)
_SLIP_ORDER = (SlipLabel.NORMAL, SlipLabel.SLIPPING, SlipLabel.SLIPPED)


class EpisodeWorld:
    """Bundles generation and (optional) learned perception for episodes.

    Without models, the monitors see ground truth: the grasp stream
    repeats the injected class and the slip stream replays the window
    labels a perfect predictor would emit. With models attached, streams
    come from the classifiers instead.
    """

    def __init__(
        self,
        config: ScenarioConfig,
        policies: Policies | None = None,
        slip_model: SlipModel | None = None,
        slip_policy: Argmax | Thresholds | None = None,
        grasp_model: GraspModel | None = None,
    ) -> None:
        self.config = config
        self.policies = policies or Policies()
        self.slip_model = slip_model
        self.slip_policy = slip_policy or Argmax()
        self.grasp_model = grasp_model

    def sample_truth(self, rng: np.random.Generator) -> EpisodeTruth:
        ex = rng.normal(self.config.error_mean_x_mm, self.config.error_std_x_mm)
        ey = rng.normal(self.config.error_mean_y_mm, self.config.error_std_y_mm)
        grasp = _GRASP_ORDER[
            rng.choice(3, p=[self.config.p_ripe, self.config.p_empty, self.config.p_unripe])
        ]
        slip = _SLIP_ORDER[
            rng.choice(3, p=[self.config.p_slip_normal, self.config.p_slipping, self.config.p_slipped])
        ]
        return EpisodeTruth(RelativeError(float(ex), float(ey)), grasp, slip)

    def approach(self, truth: EpisodeTruth, rng: np.random.Generator) -> ApproachOutcome:
        return simulate_approach(
            self.config, self.policies.compensation, rng, injected_error=truth.positional_error
        )

    def grasp_stream(self, truth: EpisodeTruth, rng: np.random.Generator) -> list[GraspClass]:
        if self.grasp_model is None:
            return [truth.grasp_outcome] * self.config.grasp_frames
        out = []
        for _ in range(self.config.grasp_frames):
            obs = gen_grasp_observation(truth.grasp_outcome, rng, self.config.grasp_noise_scale)
            cls, _ = classify_grasp(self.grasp_model, obs)
            out.append(cls)
        return out

    def slip_stream(self, truth: EpisodeTruth, rng: np.random.Generator) -> list[SlipLabel]:
        traj = gen_slip_trajectory(self.config, truth.slip_outcome, rng)
        if self.slip_model is None:
            return [w.label for w in build_windows(list(traj.frames), list(traj.labels))]
        order = self.slip_model.feature_order
        stack = np.stack([f.as_vector(order) for f in traj.frames])
        n = len(traj.frames)
        if n < 5:
            return []
        x = np.stack([stack[i : i + 5] for i in range(n - 4)])
        probs = predict_proba(self.slip_model, x)
        out = []
        for row in probs:
            p = SlipProbabilities(float(row[0]), float(row[1]), float(row[2]))
            out.append(classify_slip(p, self.slip_policy))
        return out


def run_episodes(
    world: EpisodeWorld,
    n_episodes: int,
    timing: StageTiming = DEFAULT_TIMING,
    deterministic: bool = False,
    master_seed: int | None = None,
) -> list[HarvestEpisode]:
    """n episodes with per-episode derived seeds; order-independent."""
    seed = world.config.master_seed if master_seed is None else master_seed
    return [
        run_episode(
            world,
            timing,
            world.policies,
            episode_rng(seed, i),
            deterministic=deterministic,
            episode_id=i,
        )
        for i in range(n_episodes)
    ]
