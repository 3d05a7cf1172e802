"""Synthetic-world tests: config files, trajectories, approaches, episodes."""

import numpy as np
import pytest

from harvest_guard.errors import ValidationError
from harvest_guard.fsm import Outcome, Stage
from harvest_guard.geometry import CompensationParams, RelativeError
from harvest_guard.grasp import GraspClass
from harvest_guard.slip_windows import SlipLabel, class_counts, windows_from_slip_csv
from harvest_guard.world import (
    EpisodeWorld,
    ScenarioConfig,
    SlipTrajectory,
    episode_rng,
    gen_grasp_observation,
    gen_slip_dataset,
    gen_slip_trajectory,
    load_config,
    plan_slip_trajectories,
    run_episodes,
    sample_grasp_dataset,
    save_config,
    simulate_approach,
)

QUIET = ScenarioConfig(actuation_noise_std_mm=0.0, vision_noise_std_mm=0.0, slip_noise_std=0.0)


def test_config_validation():
    with pytest.raises(ValidationError):
        ScenarioConfig(episodes=-1)
    with pytest.raises(ValidationError):
        ScenarioConfig(actuation_noise_std_mm=-0.5)
    with pytest.raises(ValidationError):
        ScenarioConfig(p_ripe=0.8, p_empty=0.1, p_unripe=0.2)
    with pytest.raises(ValidationError):
        ScenarioConfig(p_slip_normal=-0.1, p_slipping=0.55, p_slipped=0.55)
    with pytest.raises(ValidationError):
        ScenarioConfig(ripeness_threshold=1.2)
    with pytest.raises(ValidationError):
        ScenarioConfig(slip_initial_area=0.6)
    with pytest.raises(ValidationError):
        ScenarioConfig(slip_decay_rate=0.0)
    with pytest.raises(ValidationError):
        ScenarioConfig(frames_normal=0)
    with pytest.raises(ValidationError):
        ScenarioConfig(grasp_frames=0)


def test_config_ini_round_trip(tmp_path):
    config = ScenarioConfig(episodes=42, master_seed=9, p_ripe=0.5, p_empty=0.25, p_unripe=0.25)
    path = tmp_path / "scenario.ini"
    save_config(path, config)
    assert load_config(path) == config


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text("[slip]\nbogus = 1\n")
    with pytest.raises(ValidationError, match="bogus"):
        load_config(path)


def test_config_rejects_unknown_section(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text("[weather]\nrain = 1\n")
    with pytest.raises(ValidationError, match="weather"):
        load_config(path)


def test_config_rejects_bad_value(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text("[simulation]\nepisodes = many\n")
    with pytest.raises(ValidationError, match="episodes"):
        load_config(path)


def test_config_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.ini")


def test_episode_rng_is_stable_and_stream_separated():
    a = episode_rng(5, 3).uniform(size=4)
    b = episode_rng(5, 3).uniform(size=4)
    c = episode_rng(5, 4).uniform(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_trajectory_lengths_and_labels():
    cfg = ScenarioConfig()
    for outcome in SlipLabel:
        traj = gen_slip_trajectory(cfg, outcome, episode_rng(0, 0))
        assert len(traj.frames) == 14  # all outcomes share one length
    normal = gen_slip_trajectory(cfg, SlipLabel.NORMAL, episode_rng(0, 1))
    assert all(l is SlipLabel.NORMAL for l in normal.labels)
    slipping = gen_slip_trajectory(cfg, SlipLabel.SLIPPING, episode_rng(0, 2))
    assert list(slipping.labels) == [SlipLabel.NORMAL] * 6 + [SlipLabel.SLIPPING] * 8
    slipped = gen_slip_trajectory(cfg, SlipLabel.SLIPPED, episode_rng(0, 3))
    assert list(slipped.labels) == (
        [SlipLabel.NORMAL] * 6 + [SlipLabel.SLIPPING] + [SlipLabel.SLIPPED] * 7
    )


def test_normal_length_override():
    cfg = ScenarioConfig()
    traj = gen_slip_trajectory(cfg, SlipLabel.NORMAL, episode_rng(0, 0), length=9)
    assert len(traj.frames) == 9
    with pytest.raises(ValidationError):
        gen_slip_trajectory(cfg, SlipLabel.SLIPPING, episode_rng(0, 0), length=9)


def test_severity_never_decreases():
    with pytest.raises(ValidationError):
        SlipTrajectory(frames=(), labels=(SlipLabel.SLIPPING, SlipLabel.NORMAL))


def test_quiet_normal_trajectory_is_static():
    traj = gen_slip_trajectory(QUIET, SlipLabel.NORMAL, episode_rng(0, 0))
    assert all(f.strawberry_area == pytest.approx(0.30) for f in traj.frames)
    assert all(f.y == pytest.approx(0.45) for f in traj.frames)


def test_quiet_slipping_trajectory_creeps_then_slides():
    traj = gen_slip_trajectory(QUIET, SlipLabel.SLIPPING, episode_rng(0, 0))
    areas = [f.strawberry_area for f in traj.frames]
    ys = [f.y for f in traj.frames]
    # first three frames are steady; the pre-onset ramp then starts
    assert areas[0] == areas[1] == areas[2] == pytest.approx(0.30)
    assert all(areas[i + 1] < areas[i] for i in range(2, 13))
    assert all(ys[i + 1] >= ys[i] for i in range(13))
    assert ys[-1] > ys[0]
    # the box shrinks with the area
    assert traj.frames[-1].w < traj.frames[0].w


def test_quiet_slipped_trajectory_drops_fast_then_vanishes():
    traj = gen_slip_trajectory(QUIET, SlipLabel.SLIPPED, episode_rng(0, 0))
    slipping = gen_slip_trajectory(QUIET, SlipLabel.SLIPPING, episode_rng(0, 0))
    # a drop moves faster than a recoverable slip at the same frame
    assert traj.frames[6].strawberry_area < slipping.frames[6].strawberry_area
    for f in traj.frames[7:]:
        assert f.strawberry_area == pytest.approx(0.005)
        assert f.w == 0.0 and f.h == 0.0 and f.x == 0.0 and f.y == 0.0


def test_empty_grasp_observation_quiet_is_all_zero():
    obs = gen_grasp_observation(GraspClass.EMPTY, episode_rng(0, 0), noise_scale=0.0)
    assert (obs.red_fraction, obs.green_fraction, obs.fruit_area, obs.fruit_present) == (
        0.0,
        0.0,
        0.0,
        False,
    )


def test_grasp_color_bands_stay_disjoint():
    rng = episode_rng(1, 0)
    for _ in range(200):
        ripe = gen_grasp_observation(GraspClass.RIPE_HELD, rng, noise_scale=2.0)
        unripe = gen_grasp_observation(GraspClass.UNRIPE_HELD, rng, noise_scale=2.0)
        empty = gen_grasp_observation(GraspClass.EMPTY, rng, noise_scale=2.0)
        assert ripe.red_fraction >= 0.35 > unripe.red_fraction
        assert unripe.green_fraction >= 0.35 > ripe.green_fraction
        assert ripe.fruit_present and unripe.fruit_present
        assert not empty.fruit_present


def test_grasp_dataset_counts_and_determinism():
    data = sample_grasp_dataset((7, 3, 5), seed=4)
    labels = [l for _, l in data]
    assert labels.count(GraspClass.RIPE_HELD) == 7
    assert labels.count(GraspClass.EMPTY) == 3
    assert labels.count(GraspClass.UNRIPE_HELD) == 5
    assert sample_grasp_dataset((7, 3, 5), seed=4) == data
    assert sample_grasp_dataset((7, 3, 5), seed=5) != data
    with pytest.raises(ValidationError):
        sample_grasp_dataset((-1, 0, 0), seed=0)


def test_quiet_approach_with_unit_gains_cancels_the_error():
    params = CompensationParams(k_x=1.0, k_y=1.0)
    out = simulate_approach(QUIET, params, episode_rng(0, 0), injected_error=RelativeError(20.0, 15.0))
    assert out.compensated
    assert out.residual_x == pytest.approx(0.0, abs=1e-12)
    assert out.residual_y == pytest.approx(0.0, abs=1e-12)


def test_quiet_approach_default_gains_halve_y():
    out = simulate_approach(
        QUIET, CompensationParams(), episode_rng(0, 0), injected_error=RelativeError(0.0, -20.0)
    )
    assert out.compensated
    assert out.visual_error.dy == pytest.approx(-20.0)
    assert out.residual_x == pytest.approx(0.0, abs=1e-12)
    assert out.residual_y == pytest.approx(-10.0, abs=1e-12)
    assert out.record.physical_err_y == -20.0
    assert out.record.compensated is not None


def test_quiet_approach_below_threshold_skips_correction():
    out = simulate_approach(
        QUIET, CompensationParams(), episode_rng(0, 0), injected_error=RelativeError(3.0, 2.0)
    )
    assert not out.compensated
    assert out.record.compensated is None
    assert out.residual_x == pytest.approx(3.0)
    assert out.residual_y == pytest.approx(2.0)


def test_noisy_approach_residuals_match_field_scale():
    got_x, got_y = [], []
    for i in range(500):
        out = simulate_approach(ScenarioConfig(), CompensationParams(), episode_rng(3, i))
        if out.compensated:
            got_x.append(abs(out.residual_x))
            got_y.append(abs(out.residual_y))
    assert len(got_x) > 250  # the default error scale trips the check often
    assert np.mean(got_x) == pytest.approx(3.12, abs=1.5)
    assert np.mean(got_y) == pytest.approx(4.11, abs=1.5)


def test_plan_covers_targets_exactly():
    cfg = ScenarioConfig()
    plans = plan_slip_trajectories(cfg, (791, 173, 2158))
    normal = sum(p[0] - 7 for p in plans if p[1] == 0 and p[2] == 0)
    slipping = sum(p[1] for p in plans)
    slipped = sum(p[2] for p in plans)
    assert (normal, slipping, slipped) == (791, 173, 2158)
    # fault plans keep the 7-frame normal prefix that pins window counts
    assert all(p[0] == 7 for p in plans if p[1] or p[2])
    with pytest.raises(ValidationError):
        plan_slip_trajectories(cfg, (-1, 0, 0))


def test_generated_dataset_hits_window_targets(tmp_path):
    path = tmp_path / "slip.csv"
    gen_slip_dataset(path, ScenarioConfig(), (20, 9, 10), seed=0)
    counts = class_counts(windows_from_slip_csv(path))
    assert counts == {SlipLabel.NORMAL: 20, SlipLabel.SLIPPING: 9, SlipLabel.SLIPPED: 10}


def test_generated_dataset_is_byte_stable(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    gen_slip_dataset(a, ScenarioConfig(), (15, 5, 5), seed=2)
    gen_slip_dataset(b, ScenarioConfig(), (15, 5, 5), seed=2)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    gen_slip_dataset(c, ScenarioConfig(), (15, 5, 5), seed=3)
    assert a.read_bytes() != c.read_bytes()


def test_world_truth_respects_degenerate_mixes():
    cfg = ScenarioConfig(p_ripe=1.0, p_empty=0.0, p_unripe=0.0, p_slip_normal=0.0, p_slipping=0.0, p_slipped=1.0)
    world = EpisodeWorld(cfg)
    for i in range(10):
        truth = world.sample_truth(episode_rng(0, i))
        assert truth.grasp_outcome is GraspClass.RIPE_HELD
        assert truth.slip_outcome is SlipLabel.SLIPPED


def test_world_ground_truth_streams():
    world = EpisodeWorld(ScenarioConfig())
    truth = world.sample_truth(episode_rng(0, 0))
    grasp = world.grasp_stream(truth, episode_rng(0, 1))
    assert grasp == [truth.grasp_outcome] * 4
    slip = world.slip_stream(truth, episode_rng(0, 2))
    assert len(slip) == 7  # 14-frame trajectory -> 7 windows
    if truth.slip_outcome is SlipLabel.NORMAL:
        assert set(slip) == {SlipLabel.NORMAL}


def test_run_episodes_is_prefix_stable_and_seeded():
    world = EpisodeWorld(ScenarioConfig())
    five = run_episodes(world, 5, master_seed=7)
    ten = run_episodes(world, 10, master_seed=7)
    assert [e.total_s for e in five] == [e.total_s for e in ten[:5]]
    assert [e.outcome for e in five] == [e.outcome for e in ten[:5]]
    other = run_episodes(world, 5, master_seed=8)
    assert [e.total_s for e in five] != [e.total_s for e in other]


def test_outcome_frequencies_match_the_mix():
    world = EpisodeWorld(ScenarioConfig())
    episodes = run_episodes(world, 2000, master_seed=11)
    n = len(episodes)
    freq = {o: sum(1 for e in episodes if e.outcome is o) for o in Outcome}
    # p(fault-free pick) = 0.8 * 0.7 etc.; allow 3 sigma per binomial count
    expect = {
        Outcome.PICKED_AND_PLACED: 0.8 * 0.7,
        Outcome.ABORTED_EMPTY_OR_MISGRASP: 0.2,
        Outcome.RECOVERED_AFTER_SLIP: 0.8 * 0.15,
        Outcome.ABORTED_SLIPPED: 0.8 * 0.15,
    }
    for outcome, p in expect.items():
        sigma = (n * p * (1 - p)) ** 0.5
        assert abs(freq[outcome] - n * p) <= 3 * sigma

    # structural invariants hold across the batch
    for ep in episodes:
        stages = [r.stage for r in ep.records]
        assert stages[-1] is Stage.HOMING
        if ep.outcome in (Outcome.ABORTED_SLIPPED, Outcome.ABORTED_EMPTY_OR_MISGRASP):
            assert Stage.PLACING not in stages
