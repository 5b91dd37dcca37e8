"""Particle filter over GPDM latent states with heat-map measurements.

Particles carry a latent point and the index of the bank model they live in.
Each frame they are pushed through that model's latent dynamics; on frames
with a measurement they are re-weighted by the product of per-joint heat-map
scores at the projected pose, and resampled when the weights degenerate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gpdm import init_latent
from .heatmaps import LIKELIHOOD_FLOOR, JointHeatmaps
from .pose import FEATURE_DIM, N_JOINTS, decode_joints

DEFAULT_PARTICLES = 200
DEFAULT_INJECT = 0.05
FRAME_RATE = 30
RATE_GRID = (30, 15, 10, 5)


class TrackingError(ValueError):
    pass


def measurement_period(rate_hz, fps=FRAME_RATE):
    """Frames between measurements for a given measurement rate (5 Hz at 30 fps -> 6)."""
    if rate_hz <= 0 or rate_hz > fps:
        raise ValueError(f"measurement rate must be in (0, {fps}] Hz")
    return max(1, int(round(fps / rate_hz)))


@dataclass
class ParticleSet:
    latents: np.ndarray  # (N, 2)
    models: np.ndarray  # (N,) index into the bank
    weights: np.ndarray  # (N,)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, float)
        self.models = np.asarray(self.models, int)
        self.weights = np.asarray(self.weights, float)
        n = len(self.latents)
        if n < 1 or self.models.shape != (n,) or self.weights.shape != (n,):
            raise ValueError("particle arrays must be non-empty and of equal length")
        if np.any(self.weights < 0):
            raise ValueError("particle weights must be non-negative")

    def __len__(self):
        return len(self.latents)

    def copy(self):
        return ParticleSet(self.latents.copy(), self.models.copy(), self.weights.copy())

    def tags(self, bank):
        return [bank[i].tag for i in self.models]


def effective_sample_size(weights):
    w = np.asarray(weights, float)
    return float(1.0 / np.sum(w**2))


def systematic_resample(weights, rng):
    """Indices drawn by systematic resampling (one uniform offset, N strata)."""
    w = np.asarray(weights, float)
    n = len(w)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, n - 1)


def initial_particles(bank, measurement, n=DEFAULT_PARTICLES, rng=None, spread=0.5):
    """Cloud around the best-matching latent of the bank.

    ``spread`` is the jitter in units of that model's median latent step.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tag, centre = init_latent(bank, measurement)
    k = next(i for i, m in enumerate(bank) if m.tag == tag)
    sd = spread * bank[k].latent_spacing()
    latents = centre + rng.normal(0.0, sd, (n, 2))
    return ParticleSet(latents, np.full(n, k), np.full(n, 1.0 / n))


def propagate(particles, bank, rng=None, noise_scale=1.0):
    """Move every particle through its model's dynamics.

    The new latent is the predictive mean plus Gaussian noise with the
    predictive standard deviation times ``noise_scale``; weights are untouched.
    ``noise_scale=0`` follows the dynamics mean exactly.
    """
    out = particles.copy()
    for k in np.unique(out.models):
        sel = out.models == k
        mean, var = bank[k].predict_dynamics(out.latents[sel])
        if noise_scale > 0:
            mean = mean + noise_scale * np.sqrt(var) * rng.standard_normal(mean.shape)
        out.latents[sel] = mean
    return out


def project(particles, bank, box, latents=None, models=None):
    """Image-space joints (N, 8, 2) of each particle's mean observation."""
    latents = particles.latents if latents is None else latents
    models = particles.models if models is None else models
    feats = np.empty((len(latents), FEATURE_DIM))
    for k in np.unique(models):
        sel = models == k
        feats[sel] = bank[k].predict_observation(latents[sel])[0]
    return decode_joints(feats, box)


def likelihood(particles, heatmaps: JointHeatmaps, bank, floor=LIKELIHOOD_FLOOR):
    """Product over joints of the heat-map score at each particle's projected pose."""
    joints = project(particles, bank, heatmaps.box)
    return heatmaps.likelihood_of_joints(joints, floor)


def is_degenerate(lik, floor=LIKELIHOOD_FLOOR):
    """True when no particle lands on any joint (every factor at the floor)."""
    return bool(np.all(np.asarray(lik) <= floor**N_JOINTS * (1 + 1e-9)))


@dataclass
class Proposals:
    """Every training latent of every bank model with its projected descriptor.

    Used to re-seed part of the cloud from the measurement, which lets the
    filter move to another model when the activity or viewpoint changes.
    """

    models: np.ndarray
    latents: np.ndarray
    features: np.ndarray
    spread: np.ndarray  # jitter std per candidate

    @classmethod
    def from_bank(cls, bank, spread=0.5):
        models, lats, feats, sd = [], [], [], []
        for k, m in enumerate(bank):
            models.append(np.full(m.T, k))
            lats.append(m.latents)
            feats.append(m.predict_observation(m.latents)[0])
            sd.append(np.full(m.T, spread * m.latent_spacing()))
        return cls(np.concatenate(models), np.vstack(lats), np.vstack(feats), np.concatenate(sd))

    def draw(self, heatmaps, n, rng, floor=LIKELIHOOD_FLOOR):
        lik = heatmaps.likelihood_of_joints(decode_joints(self.features, heatmaps.box), floor)
        pick = rng.choice(len(lik), size=n, p=lik / lik.sum())
        lat = self.latents[pick] + rng.standard_normal((n, 2)) * self.spread[pick, None]
        return lat, self.models[pick]


@dataclass
class UpdateInfo:
    resampled: bool = False
    reinitialised: bool = False
    ess: float = 0.0


def update_and_resample(particles, heatmaps, bank, rng, floor=LIKELIHOOD_FLOOR, lik=None,
                        proposals=None, inject=0.0):
    """Measurement update. Returns the new set and an :class:`UpdateInfo`.

    Weights become old weight x likelihood, renormalised; systematic
    resampling runs when the effective sample size drops below N/2. If every
    likelihood sits at the floor the cloud is rebuilt around
    :func:`~pedphone.gpdm.init_latent` of this measurement. With
    ``proposals`` and ``inject > 0``, that fraction of a freshly resampled
    cloud is redrawn from the proposals in proportion to their likelihood.
    """
    n = len(particles)
    if lik is None:
        lik = likelihood(particles, heatmaps, bank, floor)
    if is_degenerate(lik, floor):
        fresh = initial_particles(bank, heatmaps, n, rng)
        return fresh, UpdateInfo(reinitialised=True, ess=float(n))
    w = particles.weights * lik
    total = w.sum()
    if not total > 0:
        w = lik / lik.sum()
    else:
        w = w / total
    out = ParticleSet(particles.latents, particles.models, w)
    ess = effective_sample_size(w)
    if ess < n / 2:
        idx = systematic_resample(w, rng)
        out = ParticleSet(out.latents[idx], out.models[idx], np.full(n, 1.0 / n))
        m = int(round(inject * n)) if proposals is not None else 0
        if m > 0:
            slots = rng.choice(n, size=m, replace=False)
            out.latents[slots], out.models[slots] = proposals.draw(heatmaps, m, rng, floor)
        return out, UpdateInfo(resampled=True, ess=ess)
    return out, UpdateInfo(ess=ess)


def estimate(particles, bank, box):
    """Pose of the weighted-mean latent of the dominant model's particles.

    Returns (joints (8, 2), model index, latent).
    """
    mass = np.bincount(particles.models, weights=particles.weights, minlength=len(bank))
    k = int(np.argmax(mass))
    sel = particles.models == k
    w = particles.weights[sel]
    lat = (w[:, None] * particles.latents[sel]).sum(0) / w.sum()
    feat = bank[k].predict_observation(lat)[0]
    return decode_joints(feat, box), k, lat


@dataclass
class TrackResult:
    poses: np.ndarray  # (T, 8, 2)
    tags: list
    latents: np.ndarray  # (T, 2)
    measured: list = field(default_factory=list)
    resamples: int = 0
    reinits: int = 0


def _as_heatmaps(box, hm):
    if hm is None or isinstance(hm, JointHeatmaps):
        return hm
    return JointHeatmaps(hm, box)


def track_sequence(frames, bank, period=1, n_particles=DEFAULT_PARTICLES, seed=0, noise_scale=1.0,
                   inject=DEFAULT_INJECT):
    """Track one pedestrian through ``frames``, a sequence of (box, heat-maps or None).

    A measurement is used on frames ``t % period == 0`` that carry heat-maps;
    the first frame must have one. ``period=None`` uses the first measurement
    only, giving a pure dynamics rollout afterwards. ``inject`` is the share
    of particles re-seeded from the measurement after each resampling.
    """
    bank = list(bank)
    frames = list(frames)
    if not frames:
        raise TrackingError("empty sequence")
    if not bank:
        raise TrackingError("model bank is empty")
    box0, hm0 = frames[0]
    hm0 = _as_heatmaps(box0, hm0)
    if hm0 is None:
        raise TrackingError("the first frame needs a measurement to initialise the filter")
    rng = np.random.default_rng(seed)
    ps = initial_particles(bank, hm0, n_particles, rng)
    proposals = Proposals.from_bank(bank) if inject > 0 else None
    T = len(frames)
    poses = np.empty((T, N_JOINTS, 2))
    lats = np.empty((T, 2))
    tags, measured = [], []
    res = TrackResult(poses, tags, lats, measured)
    for t, (box, hm) in enumerate(frames):
        if t > 0:
            ps = propagate(ps, bank, rng, noise_scale)
        scheduled = t == 0 if period is None else t % period == 0
        hm = _as_heatmaps(box, hm) if scheduled else None
        if hm is not None:
            ps, info = update_and_resample(ps, hm, bank, rng, proposals=proposals, inject=inject)
            res.resamples += info.resampled
            res.reinits += info.reinitialised
            measured.append(t)
        poses[t], k, lats[t] = estimate(ps, bank, box)
        tags.append(bank[k].tag)
    return res


def untracked_poses(frames):
    """Per-frame heat-map argmax, the measurement passed through unfiltered."""
    out = []
    for box, hm in frames:
        hm = _as_heatmaps(box, hm)
        if hm is None:
            raise TrackingError("untracked estimates need heat-maps on every frame")
        out.append(hm.argmax_joints())
    return np.array(out)


def rollout(bank, tag, latent, box_seq):
    """Noise-free dynamics rollout from ``latent`` projected into each box."""
    k = next(i for i, m in enumerate(bank) if m.tag == tag)
    model = bank[k]
    lat = np.asarray(latent, float)
    out = []
    for t, box in enumerate(box_seq):
        if t > 0:
            lat = model.predict_dynamics(lat)[0]
        out.append(decode_joints(model.predict_observation(lat)[0], box))
    return np.array(out)
