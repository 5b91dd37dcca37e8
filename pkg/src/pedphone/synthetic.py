"""Seeded synthetic pedestrians, frames, gaze maps and walking sequences.

Pose families: arms down (none), forearms forward (texting), one arm raised
to the ear (phone call). A configurable share of the ``none`` class uses the
forearms-forward family, so pose alone cannot separate it from texting. Half
of those hold another object while looking down (only the hand patch tells
them apart), half hold a phone while looking ahead (only the gaze does).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import gaussian_filter

from .gaze import GAZE_SHAPE
from .heatmaps import save_heatmaps
from .images import save_gray, to_uint8
from .manifest import (DatasetManifest, PedestrianRecord, SequenceFrame, SequenceRecord,
                       manifest_to_json)
from .pose import (L_ELB, L_SHO, L_WRI, R_ELB, R_SHO, R_WRI, PedestrianBox, locate_hand)

VIEWPOINTS = ("front", "side", "back", "oblique")
VIEW_COMPRESS = {"front": 1.0, "side": 0.62, "back": 0.95, "oblique": 0.8}

# normalised (x, y) in the box; the pedestrian's right side is on the image left
_BASE = {
    "head": (0.50, 0.08), "neck": (0.50, 0.17),
    "right_shoulder": (0.36, 0.20), "left_shoulder": (0.64, 0.20),
}
FAMILIES = {
    "down": {"right_elbow": (0.33, 0.35), "right_wrist": (0.32, 0.49),
             "left_elbow": (0.67, 0.35), "left_wrist": (0.68, 0.49)},
    "forward": {"right_elbow": (0.35, 0.34), "right_wrist": (0.44, 0.37),
                "left_elbow": (0.65, 0.34), "left_wrist": (0.56, 0.37)},
    "raised_right": {"right_elbow": (0.25, 0.27), "right_wrist": (0.37, 0.13),
                     "left_elbow": (0.67, 0.35), "left_wrist": (0.68, 0.49)},
    "raised_left": {"right_elbow": (0.33, 0.35), "right_wrist": (0.32, 0.49),
                    "left_elbow": (0.75, 0.27), "left_wrist": (0.63, 0.13)},
}
ORDER = ("head", "neck", "right_shoulder", "right_elbow", "right_wrist",
         "left_shoulder", "left_elbow", "left_wrist")
ACTIVITY_FAMILY = {0: "down", 1: "forward", 2: "raised_right"}

HEATMAP_SHAPE = (48, 24)
HEATMAP_SIGMA = 1.5


@dataclass
class SyntheticSpec:
    pedestrians_per_class: int = 200
    viewpoints: int = 2
    joint_noise: float = 0.012
    gaze_noise: float = 1.0
    patch_noise: float = 0.02
    hand_noise: float = 0.01
    confuser_fraction: float = 0.4
    min_height: int = 200
    max_height: int = 300
    # sequences
    train_sequence_length: int = 90
    test_sequences: int = 4
    sequence_length: int = 300
    heatmap_distractors: float = 0.0
    frame_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.pedestrians_per_class < 1 or self.viewpoints < 1:
            raise ValueError("counts must be >= 1")
        if self.viewpoints > len(VIEWPOINTS):
            raise ValueError(f"at most {len(VIEWPOINTS)} viewpoints")


def template(family, viewpoint="front"):
    pts = dict(_BASE)
    pts.update(FAMILIES[family])
    arr = np.array([pts[n] for n in ORDER], dtype=float)
    c = VIEW_COMPRESS[viewpoint]
    arr[:, 0] = 0.5 + (arr[:, 0] - 0.5) * c
    return arr


def template_feature_family(features_xy, viewpoint="front"):
    """Nearest pose family (by normalised joint distance) for noisy joints."""
    best, name = np.inf, None
    for fam in FAMILIES:
        d = np.sum((template(fam, viewpoint) - features_xy) ** 2)
        if d < best:
            best, name = d, fam
    return name


# -- rasterisation ---------------------------------------------------------------

class Canvas:
    def __init__(self, img):
        self.img = img
        h, w = img.shape
        self.Y, self.X = np.mgrid[0:h, 0:w].astype(float)

    def _bbox(self, x0, y0, x1, y1):
        h, w = self.img.shape
        r0, r1 = max(int(np.floor(y0)) - 1, 0), min(int(np.ceil(y1)) + 2, h)
        c0, c1 = max(int(np.floor(x0)) - 1, 0), min(int(np.ceil(x1)) + 2, w)
        return slice(r0, r1), slice(c0, c1)

    def segment(self, p, q, thick, value):
        p, q = np.asarray(p, float), np.asarray(q, float)
        pad = thick
        sl = self._bbox(min(p[0], q[0]) - pad, min(p[1], q[1]) - pad,
                        max(p[0], q[0]) + pad, max(p[1], q[1]) + pad)
        X, Y = self.X[sl], self.Y[sl]
        d = q - p
        L2 = float(d @ d)
        t = np.zeros_like(X) if L2 == 0 else np.clip(((X - p[0]) * d[0] + (Y - p[1]) * d[1]) / L2, 0, 1)
        dist = np.hypot(X - (p[0] + t * d[0]), Y - (p[1] + t * d[1]))
        self.img[sl][dist <= thick / 2] = value

    def disc(self, c, r, value):
        sl = self._bbox(c[0] - r, c[1] - r, c[0] + r, c[1] + r)
        m = np.hypot(self.X[sl] - c[0], self.Y[sl] - c[1]) <= r
        self.img[sl][m] = value

    def rect(self, c, half_len, half_wid, angle, value):
        r = np.hypot(half_len, half_wid)
        sl = self._bbox(c[0] - r, c[1] - r, c[0] + r, c[1] + r)
        dx, dy = self.X[sl] - c[0], self.Y[sl] - c[1]
        ca, sa = np.cos(angle), np.sin(angle)
        u = dx * ca + dy * sa
        v = -dx * sa + dy * ca
        self.img[sl][(np.abs(u) <= half_len) & (np.abs(v) <= half_wid)] = value


def background(rng, shape):
    h, w = shape
    img = 0.55 + 0.12 * gaussian_filter(rng.normal(size=shape), 10) / 0.03
    img = np.clip(img, 0.25, 0.85)
    cv = Canvas(img)
    for _ in range(rng.integers(4, 9)):
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        if rng.random() < 0.5:
            cv.rect((x, y), rng.uniform(5, 40), rng.uniform(3, 25), rng.uniform(0, np.pi), rng.uniform(0.2, 0.9))
        else:
            cv.segment((x, y), (x + rng.uniform(-60, 60), y + rng.uniform(-60, 60)), rng.uniform(1, 4),
                       rng.uniform(0.1, 0.9))
    return cv.img


def draw_object(cv, rng, centre, h, label, angle_hint=0.0):
    if label == "cellphone":
        L = 0.032 * h * rng.uniform(0.85, 1.15)
        W = L * rng.uniform(0.5, 0.62)
        ang = angle_hint + np.pi / 2 + rng.uniform(-0.4, 0.4)
        cv.rect(centre, L, W, ang, rng.uniform(0.03, 0.18))
        cv.rect(centre, 0.78 * L, 0.7 * W, ang, rng.uniform(0.75, 0.97))
    elif label == "other":
        r = 0.03 * h * rng.uniform(0.85, 1.15)
        cv.disc(centre, r, rng.uniform(0.6, 0.95))
        cv.disc(centre, 0.6 * r, rng.uniform(0.1, 0.4))


def draw_person(cv, rng, joints, box, hands, objects, phone_angle=0.0):
    h = box.h
    cloth = rng.uniform(0.12, 0.4)
    skin = rng.uniform(0.62, 0.8)
    neck = joints[1]
    hip = np.array([box.x + 0.5 * box.w, box.y + 0.56 * h])
    for dx in (-0.05, 0.05):
        foot = np.array([box.x + (0.5 + dx * 1.3) * box.w, box.y + 0.98 * h])
        cv.segment(hip + (dx * box.w, 0), foot, 0.05 * h, cloth * 0.8)
    cv.segment(neck, hip, 0.12 * h * _torso_width(box, joints), cloth)
    cv.segment(joints[R_SHO], joints[L_SHO], 0.05 * h, cloth)
    cv.disc(joints[0], 0.05 * h, skin)
    for s, e, w in ((R_SHO, R_ELB, R_WRI), (L_SHO, L_ELB, L_WRI)):
        cv.segment(joints[s], joints[e], 0.035 * h, cloth)
        cv.segment(joints[e], joints[w], 0.03 * h, cloth * 1.1)
    for side in ("left", "right"):
        cv.disc(hands[side], 0.016 * h, skin)
        draw_object(cv, rng, hands[side], h, objects[side], phone_angle)


def _torso_width(box, joints):
    sw = abs(joints[L_SHO][0] - joints[R_SHO][0]) / box.w
    return max(sw / 0.28, 0.4)


def gaze_map(rng, activity, noise, looking=None):
    """13x13 gaze heat-map: ahead for none/phone call, down for texting."""
    if looking is None:
        looking = "down" if activity == 1 else "ahead"
    if looking == "down":
        r, c = rng.normal(10.5, noise), rng.normal(6.0, noise)
    elif activity == 2:
        r, c = rng.normal(5.5, noise), rng.uniform(2, 10)
    else:
        r, c = rng.normal(5.5, noise), rng.uniform(3, 9)
    rr, cc = np.mgrid[0 : GAZE_SHAPE[0], 0 : GAZE_SHAPE[1]]
    g = np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / (2 * 1.6**2))
    g += 0.02 * rng.random(GAZE_SHAPE)
    return g.ravel()


# -- single-frame pedestrians ----------------------------------------------------

def _subtypes(spec, activity, n, rng):
    """(family, objects, looking) per pedestrian of one class."""
    out = []
    for i in range(n):
        side = "right" if rng.random() < 0.5 else "left"
        other = "left" if side == "right" else "right"
        if activity == 0:
            u = (i + 0.5) / n
            if u < spec.confuser_fraction / 2:
                out.append(("forward", {side: "other", other: "none"}, "down"))
            elif u < spec.confuser_fraction:
                out.append(("forward", {side: "cellphone", other: "none"}, "ahead"))
            else:
                bag = rng.random() < 0.3
                out.append(("down", {side: "other" if bag else "none", other: "none"}, "ahead"))
        elif activity == 1:
            out.append(("forward", {side: "cellphone", other: "none"}, "down"))
        else:
            out.append((f"raised_{side}", {side: "cellphone", other: "none"}, "ahead"))
    return out


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    manifest: DatasetManifest
    train_sequences: list = field(default_factory=list)
    test_sequences: list = field(default_factory=list)
    families: dict = field(default_factory=dict)


def make_pedestrian(rng, spec, pid, activity, family, objects, looking, viewpoint):
    h = float(rng.integers(spec.min_height, spec.max_height + 1))
    w = round(0.42 * h, 2)
    margin = round(0.15 * h)
    box = PedestrianBox(float(margin), float(margin), w, h)
    shape = (int(h + 2 * margin), int(np.ceil(w + 2 * margin)))
    norm = template(family, viewpoint) + rng.normal(0, spec.joint_noise, (8, 2))
    joints = np.column_stack([box.x + norm[:, 0] * box.w, box.y + norm[:, 1] * box.h])
    hands = {}
    for side, (e, wr) in (("right", (R_ELB, R_WRI)), ("left", (L_ELB, L_WRI))):
        hx, hy = locate_hand(joints[e], joints[wr])
        hands[side] = (hx + rng.normal(0, spec.hand_noise * h), hy + rng.normal(0, spec.hand_noise * h))
    img = background(rng, shape)
    cv = Canvas(img)
    draw_person(cv, rng, joints, box, hands, objects, 0.0)
    img = np.clip(img + rng.normal(0, spec.patch_noise, img.shape), 0, 1)
    gaze = gaze_map(rng, activity, spec.gaze_noise, looking)
    return PedestrianRecord(
        id=pid, box=box, joints=joints, gaze=gaze, objects=dict(objects), activity=int(activity),
        hands={k: (float(v[0]), float(v[1])) for k, v in hands.items()}, viewpoint=viewpoint,
        image=to_uint8(img),
    )


# -- sequences -------------------------------------------------------------------

def sequence_joints(rng, n_frames, schedule, viewpoint, blend=8, noise=0.003):
    """Normalised joints (T, 8, 2) of a walking pedestrian following an activity schedule.

    ``schedule`` is a list of (start_frame, activity). Arm swing applies to
    hanging arms; every joint bobs with the step frequency.
    """
    period = rng.uniform(28, 34)
    phase = rng.uniform(0, 2 * np.pi)
    acts = np.zeros(n_frames, int)
    for start, a in schedule:
        acts[start:] = a
    targets = np.stack([template(ACTIVITY_FAMILY[a], viewpoint) for a in acts])
    # exponential blend between consecutive templates
    out = np.empty_like(targets)
    cur = targets[0].copy()
    for t in range(n_frames):
        cur += (targets[t] - cur) / blend
        out[t] = cur
    side_view = viewpoint in ("side", "oblique")
    sx, sy = (0.07, 0.012) if side_view else (0.012, 0.035)
    t = np.arange(n_frames)
    ph = 2 * np.pi * t / period + phase
    swing = np.sin(ph)
    hang = (acts == 0).astype(float)
    hang = np.convolve(np.pad(hang, (blend, 0), mode="edge"), np.ones(blend) / blend, "valid")[:n_frames]
    for joint, amp, sgn in ((R_ELB, 0.5, 1), (R_WRI, 1.0, 1), (L_ELB, 0.5, -1), (L_WRI, 1.0, -1)):
        out[:, joint, 0] += hang * sgn * amp * sx * swing
        out[:, joint, 1] += hang * amp * sy * np.abs(swing) * 0.5
    out[:, :, 1] += 0.006 * np.sin(2 * ph)[:, None]
    out += rng.normal(0, noise, out.shape)
    return out, acts


def sequence_boxes(rng, n_frames, viewpoint):
    h0 = rng.uniform(230, 270)
    if viewpoint in ("side", "oblique"):
        xs = 40 + 2.0 * np.arange(n_frames)
        hs = np.full(n_frames, h0)
    else:
        xs = np.full(n_frames, 60.0)
        hs = h0 * (1 + 0.0008 * np.arange(n_frames))
    return [PedestrianBox(float(x), 40.0, float(0.42 * hh), float(hh)) for x, hh in zip(xs, hs)]


def render_heatmaps(rng, joints_img, box, distractors=0.0, shape=HEATMAP_SHAPE, sigma=HEATMAP_SIGMA):
    """Gaussian bumps (peak 1) at the joints, optionally with spurious peaks."""
    H, W = shape
    vv, uu = np.mgrid[0:H, 0:W].astype(float)
    maps = np.zeros((8, H, W))
    for j, (x, y) in enumerate(joints_img):
        u = (x - box.x) * W / box.w - 0.5
        v = (y - box.y) * H / box.h - 0.5
        maps[j] = np.exp(-((uu - u) ** 2 + (vv - v) ** 2) / (2 * sigma**2))
        if distractors > 0 and rng.random() < distractors:
            du, dv = rng.uniform(0, W - 1), rng.uniform(0, H - 1)
            maps[j] += rng.uniform(0.7, 1.4) * np.exp(-((uu - du) ** 2 + (vv - dv) ** 2) / (2 * sigma**2))
        if distractors > 0:
            maps[j] += 0.05 * rng.random((H, W))
    return maps.astype(np.float32)


def make_sequence(rng, spec, sid, tag, n_frames, schedule, viewpoint, distractors=0.0,
                  frame_every=None, with_gaze=True):
    norm, acts = sequence_joints(rng, n_frames, schedule, viewpoint)
    boxes = sequence_boxes(rng, n_frames, viewpoint)
    frames = []
    for t in range(n_frames):
        b = boxes[t]
        j = np.column_stack([b.x + norm[t, :, 0] * b.w, b.y + norm[t, :, 1] * b.h])
        fr = SequenceFrame(box=b, joints=j, activity=int(acts[t]))
        fr.maps = render_heatmaps(rng, j, b, distractors)
        if with_gaze:
            fr.gaze = gaze_map(rng, int(acts[t]), spec.gaze_noise)
        if frame_every and t % frame_every == 0:
            fr.image = render_sequence_frame(rng, spec, fr)
        frames.append(fr)
    return SequenceRecord(sid, tag, frames)


def render_sequence_frame(rng, spec, fr):
    b = fr.box
    shape = (int(b.y + b.h + 40), int(b.x + b.w + 60))
    img = background(rng, shape)
    hands = {}
    for side, (e, wr) in (("right", (R_ELB, R_WRI)), ("left", (L_ELB, L_WRI))):
        hands[side] = locate_hand(fr.joints[e], fr.joints[wr])
    objects = {"left": "none", "right": "none"}
    if fr.activity == 1:
        objects["right"] = "cellphone"
    elif fr.activity == 2:
        objects["right"] = "cellphone"
    draw_person(Canvas(img), rng, fr.joints, b, hands, objects)
    img = np.clip(img + rng.normal(0, spec.patch_noise, img.shape), 0, 1)
    return to_uint8(img)


def walking_sequence(seed, viewpoint="front", n_frames=300, distractors=0.0, activity=0, spec=None):
    """Constant-activity walking sequence (used for tracking experiments)."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    tag = f"{activity}/{viewpoint}"
    return make_sequence(rng, spec, f"walk-{seed}", tag, n_frames, [(0, activity)], viewpoint,
                         distractors, frame_every=None)


def mixed_schedule(rng, n_frames, changes=3):
    """Activity schedule starting at none, with ``changes`` switches at random frames."""
    margin = min(40, n_frames // 4)
    slots = np.arange(margin, n_frames - margin)
    changes = min(changes, len(slots))
    cuts = sorted(rng.choice(slots, size=changes, replace=False))
    acts = [0] + list(rng.permutation([1, 2, 0][:changes] + [0] * max(0, changes - 3)))
    return list(zip([0] + [int(c) for c in cuts], [int(a) for a in acts]))


def mixed_sequence(seed, viewpoint="front", n_frames=300, distractors=0.0, spec=None):
    """Walking sequence whose activity changes over time, without rendered frames."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    return make_sequence(rng, spec, f"mixed-{seed}", f"mixed/{viewpoint}", n_frames,
                         mixed_schedule(rng, n_frames), viewpoint, distractors, frame_every=None)


def gpdm_training_sequences(spec=None, activities=(0, 1, 2), seed=None):
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed + 1000 if seed is None else seed)
    out = []
    for v in VIEWPOINTS[: spec.viewpoints]:
        for a in activities:
            out.append(make_sequence(rng, spec, f"train-{a}-{v}", f"{a}/{v}", spec.train_sequence_length,
                                     [(0, a)], v, 0.0, frame_every=None, with_gaze=False))
    return out


def generate_synthetic(spec: SyntheticSpec = None, sequences=True) -> SyntheticDataset:
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    records = []
    families = {}
    views = VIEWPOINTS[: spec.viewpoints]
    n = spec.pedestrians_per_class
    for activity in range(3):
        for i, (family, objects, looking) in enumerate(_subtypes(spec, activity, n, rng)):
            pid = f"p{activity}{i:04d}"
            view = views[i % len(views)]
            records.append(make_pedestrian(rng, spec, pid, activity, family, objects, looking, view))
            families[pid] = family
    ds = SyntheticDataset(spec, DatasetManifest(records), families=families)
    if sequences:
        ds.train_sequences = gpdm_training_sequences(spec)
        srng = np.random.default_rng(spec.seed + 2000)
        L = spec.sequence_length
        for s in range(spec.test_sequences):
            view = views[s % len(views)]
            schedule = mixed_schedule(srng, L)
            ds.test_sequences.append(make_sequence(
                srng, spec, f"test-{s}", f"mixed/{view}", L, schedule, view,
                spec.heatmap_distractors, frame_every=spec.frame_every))
    return ds


def write_synthetic(ds: SyntheticDataset, outdir):
    """Write frames, heat-maps and ``manifest.json`` under ``outdir``."""
    import json

    os.makedirs(os.path.join(outdir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(outdir, "heatmaps"), exist_ok=True)
    for r in ds.manifest.records:
        r.frame = f"frames/{r.id}.png"
        save_gray(os.path.join(outdir, r.frame), r.image)
    seqs = []
    for split, group in (("train", ds.train_sequences), ("test", ds.test_sequences)):
        for s in group:
            for t, fr in enumerate(s.frames):
                fr.heatmap = f"heatmaps/{s.id}_{t:04d}.hmap"
                save_heatmaps(os.path.join(outdir, fr.heatmap), fr.maps)
                if fr.image is not None:
                    fr.frame = f"frames/{s.id}_{t:04d}.png"
                    save_gray(os.path.join(outdir, fr.frame), fr.image)
            seqs.append((split, s))
    for split, s in seqs:
        s.split = split
    ds.manifest.sequences = [s for _, s in seqs]
    doc = manifest_to_json(ds.manifest)
    doc["synthetic"] = asdict(ds.spec)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return path
