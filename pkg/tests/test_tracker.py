import numpy as np
import pytest

from pedphone.evaluation import pck
from pedphone.heatmaps import LIKELIHOOD_FLOOR, JointHeatmaps
from pedphone.pose import PedestrianBox
from pedphone.synthetic import walking_sequence
from pedphone.tracker import (
    ParticleSet, TrackingError, effective_sample_size, estimate, initial_particles, is_degenerate,
    likelihood, measurement_period, project, propagate, rollout, systematic_resample, track_sequence,
    untracked_poses, update_and_resample,
)

BOX = PedestrianBox(10.0, 20.0, 60.0, 120.0)


def cloud(bank, n=200, seed=0):
    m = bank[0]
    return initial_particles(bank, m.observations[5], n, np.random.default_rng(seed))


def test_rate_to_period():
    assert [measurement_period(r) for r in (30, 15, 10, 5)] == [1, 2, 3, 6]
    for bad in (0, -5, 31):
        with pytest.raises(ValueError):
            measurement_period(bad)


def test_zero_noise_follows_dynamics_mean(walking_bank):
    ps = cloud(walking_bank)
    out = propagate(ps, walking_bank, noise_scale=0.0)
    np.testing.assert_array_equal(out.latents, walking_bank[0].predict_dynamics(ps.latents)[0])
    np.testing.assert_array_equal(out.weights, ps.weights)
    assert len(out) == len(ps)


def test_cloud_spreads_without_measurements(walking_bank):
    ps = cloud(walking_bank, n=400)
    before = ps.latents.var(axis=0).sum()
    rng = np.random.default_rng(1)
    for _ in range(30):
        ps = propagate(ps, walking_bank, rng)
    assert ps.latents.var(axis=0).sum() >= before
    assert ps.weights.sum() == pytest.approx(1.0)


def test_uniform_likelihood_keeps_weights(walking_bank):
    ps = cloud(walking_bank)
    ps.weights = np.random.default_rng(2).dirichlet(np.full(len(ps), 50.0))
    flat = JointHeatmaps(np.ones((8, 24, 12)), BOX)
    proj = project(ps, walking_bank, BOX)
    inside = np.all((proj >= [BOX.x, BOX.y]) & (proj <= [BOX.x + BOX.w, BOX.y + BOX.h]))
    assert inside
    np.testing.assert_allclose(likelihood(ps, flat, walking_bank), 1.0)
    out, info = update_and_resample(ps, flat, walking_bank, np.random.default_rng(0))
    assert not info.resampled and not info.reinitialised
    np.testing.assert_allclose(out.weights, ps.weights, rtol=1e-12)


def test_resampler_concentrates_on_single_survivor(walking_bank):
    ps = cloud(walking_bank)
    lik = np.full(len(ps), LIKELIHOOD_FLOOR)
    lik[17] = 1.0
    out, info = update_and_resample(ps, None, walking_bank, np.random.default_rng(3), lik=lik)
    assert info.resampled
    assert np.all(out.latents == ps.latents[17])
    np.testing.assert_allclose(out.weights, 1 / len(ps))
    idx = systematic_resample(np.eye(50)[4], np.random.default_rng(0))
    assert np.all(idx == 4)


def test_systematic_resample_counts():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    rng = np.random.default_rng(5)
    for _ in range(20):
        counts = np.bincount(systematic_resample(w, rng), minlength=4)
        # each count is within one of its expectation
        assert np.all(np.abs(counts - 4 * w) < 1)


def test_ess():
    assert effective_sample_size(np.full(200, 1 / 200)) == pytest.approx(200)
    assert effective_sample_size(np.eye(10)[3]) == pytest.approx(1)


def grid_joints(hm, cells):
    u = np.array([c[0] for c in cells], float)
    v = np.array([c[1] for c in cells], float)
    return hm.to_image(u, v)


def test_delta_heatmaps_peak_at_truth():
    rng = np.random.default_rng(6)
    cells = [(rng.integers(1, 11), rng.integers(1, 23)) for _ in range(8)]
    peaks = rng.uniform(0.5, 1.0, 8)
    maps = np.zeros((8, 24, 12))
    for j, (u, v) in enumerate(cells):
        maps[j, v, u] = peaks[j]
    hm = JointHeatmaps(maps, BOX)
    truth = grid_joints(hm, cells)
    best = hm.likelihood_of_joints(truth)
    assert best == pytest.approx(np.prod(peaks))
    for _ in range(200):
        moved = truth + rng.normal(0, 3, truth.shape)
        assert hm.likelihood_of_joints(moved) <= best


def test_out_of_bounds_joint_costs_one_floor_factor():
    hm = JointHeatmaps(np.ones((8, 24, 12)), BOX)
    joints = np.tile([BOX.x + 30, BOX.y + 60], (8, 1))
    assert hm.likelihood_of_joints(joints) == 1.0
    joints[3] = [BOX.x - 100, BOX.y]
    assert hm.likelihood_of_joints(joints) == LIKELIHOOD_FLOOR


def test_degenerate_measurement_reinitialises(walking_bank):
    ps = cloud(walking_bank)
    far = JointHeatmaps(np.zeros((8, 24, 12)), PedestrianBox(5000, 5000, 10, 20))
    lik = likelihood(ps, far, walking_bank)
    assert is_degenerate(lik)
    out, info = update_and_resample(ps, far, walking_bank, np.random.default_rng(0))
    assert info.reinitialised
    assert out.weights.sum() == pytest.approx(1.0)


def frames_of(seq):
    return [(f.box, f.maps) for f in seq.frames]


def truth_of(seq):
    return np.array([f.joints for f in seq.frames]), [f.box for f in seq.frames]


def test_weights_stay_normalised(walking_bank):
    seq = walking_sequence(3, n_frames=40, distractors=0.3)
    ps = initial_particles(walking_bank, JointHeatmaps(seq.frames[0].maps, seq.frames[0].box))
    rng = np.random.default_rng(0)
    for f in seq.frames[1:]:
        ps = propagate(ps, walking_bank, rng)
        ps, _ = update_and_resample(ps, JointHeatmaps(f.maps, f.box), walking_bank, rng)
        assert abs(ps.weights.sum() - 1) < 1e-9


def test_single_measurement_equals_rollout(walking_bank):
    seq = walking_sequence(4, n_frames=50)
    res = track_sequence(frames_of(seq), walking_bank, period=None, n_particles=1, noise_scale=0.0, inject=0.0)
    assert res.measured == [0]
    boxes = [f.box for f in seq.frames]
    np.testing.assert_allclose(res.poses, rollout(walking_bank, res.tags[0], res.latents[0], boxes), atol=1e-9)


def test_tracking_beats_rollout_on_walking_sequence(walking_bank):
    seq = walking_sequence(7, n_frames=120)
    truth, boxes = truth_of(seq)
    tracked = track_sequence(frames_of(seq), walking_bank, period=1, seed=1)
    open_loop = track_sequence(frames_of(seq), walking_bank, period=None, seed=1)
    p_tracked = pck(tracked.poses, truth, boxes).mean()
    assert p_tracked >= 0.95
    assert p_tracked >= pck(open_loop.poses, truth, boxes).mean()
    assert set(tracked.tags) == {"0/front"}
    assert pck(untracked_poses(frames_of(seq)), truth, boxes).mean() == 1.0


def test_estimate_uses_dominant_model(walking_bank):
    lat = np.vstack([walking_bank[0].latents[:3], walking_bank[1].latents[:2]])
    ps = ParticleSet(lat, [0, 0, 0, 1, 1], [0.1, 0.1, 0.1, 0.35, 0.35])
    joints, k, mean = estimate(ps, walking_bank, BOX)
    assert k == 1
    np.testing.assert_allclose(mean, walking_bank[1].latents[:2].mean(axis=0))


def test_tracking_errors(walking_bank):
    with pytest.raises(TrackingError):
        track_sequence([], walking_bank)
    with pytest.raises(TrackingError):
        track_sequence([(BOX, None)], walking_bank)
    with pytest.raises(TrackingError):
        track_sequence([(BOX, np.ones((8, 4, 4)))], [])
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((2, 2)), [0, 0], [0.5, -0.5])
