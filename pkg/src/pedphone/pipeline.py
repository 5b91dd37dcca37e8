"""End-to-end activity recognition: features, exemplar training, cue computation.

Training builds one exemplar per pedestrian (pose descriptor, gaze, objects,
activity), two hand ESVMs per exemplar, a K-d tree over the descriptors and,
per neighbourhood size K, a late-fusion SVM fitted on cross-validated cue
vectors. Classification retrieves K neighbours, scores the query's hand
windows with the neighbours' ESVMs only, and fuses the three cues.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .esvm import (
    Ensemble, MiningConfig, calibrate, load_ensemble, save_ensemble, search_placements,
    train_exemplar, window_iou,
)
from .fusion import (
    CUE_GROUPS, DEFAULT_REFRESH, CueScores, FusionTraining, build_fusion_training,
    fusion_classify, hand_scores, load_fusion, map_classify, prior_scores, save_fusion,
    sequential_classify, train_fusion_svm,
)
from .gaze import gaze_scores
from .hog import UnobservableHand, window_hog
from .images import load_gray
from .knn import K_GRID, Exemplar, PoseIndex
from .pose import (
    DEFAULT_ALPHA, DEFAULT_HAND_RATIO, HandWindow, encode_pose, hand_window, hand_windows,
)

log = logging.getLogger(__name__)

HAND_SIDES = ("left", "right")
ABLATIONS = {
    "pose": ("prior",),
    "pose+hands": ("prior", "hand"),
    "pose+gaze": ("prior", "gaze"),
    "pose+hands+gaze": CUE_GROUPS,
}


@dataclass
class TrainConfig:
    alpha: float = DEFAULT_ALPHA
    hand_ratio: float = DEFAULT_HAND_RATIO
    negatives_per_image: int = 10
    calibration_negatives: int = 300
    jitter_count: int = 10
    jitter_shift: float = 2.0
    jitter_scale: float = 0.05
    negative_iou_max: float = 0.1
    mining: MiningConfig = field(default_factory=MiningConfig)
    k_values: tuple = K_GRID
    folds: int = 5
    fusion_c: float = 1.0
    seed: int = 0


@dataclass
class Query:
    """What classification needs from one pedestrian."""

    pose_feature: np.ndarray
    gaze: np.ndarray
    # side -> (descriptors (P, d), overlaps (P,)) over the placement search
    hands: dict


def record_image(record, manifest=None):
    if record.image is not None:
        return np.asarray(record.image, float) / (255.0 if record.image.dtype == np.uint8 else 1.0)
    if record.frame is None:
        return None
    path = manifest.resolve(record.frame) if manifest is not None else record.frame
    return load_gray(path)


def placement_descriptors(image, window):
    """HOG of every placement around ``window`` with its IoU; unobservable placements are dropped."""
    descs, ovs = [], []
    for w, ov in search_placements(window):
        try:
            descs.append(window_hog(image, w))
        except UnobservableHand:
            continue
        ovs.append(ov)
    if not descs:
        return np.zeros((0, 0)), np.zeros(0)
    return np.vstack(descs), np.array(ovs)


def make_query(pose_feature, gaze, image, box, joints, cfg: TrainConfig = None):
    cfg = cfg or TrainConfig()
    hands = {}
    if image is not None:
        for side, win in hand_windows(box, joints, cfg.hand_ratio, cfg.alpha).items():
            hands[side] = placement_descriptors(image, win)
    return Query(np.asarray(pose_feature, float), gaze, hands)


def record_query(record, image, cfg=None):
    return make_query(encode_pose(record.box, record.joints), record.gaze, image,
                      record.box, record.joints, cfg)


def _annotated_windows(record, cfg):
    wins = list(hand_windows(record.box, record.joints, cfg.hand_ratio, cfg.alpha).values())
    for side, pt in (record.hands or {}).items():
        wins.append(hand_window(record.box, pt, cfg.alpha, side))
    return wins


def negative_windows(rng, image_shape, record, n, cfg: TrainConfig):
    """Random square windows of hand scale that avoid every hand window (IoU < cfg.negative_iou_max)."""
    H, W = image_shape
    avoid = _annotated_windows(record, cfg)
    out = []
    tries = 0
    while len(out) < n and tries < 50 * n:
        tries += 1
        side = cfg.alpha * record.box.h * rng.uniform(0.8, 1.25)
        if side >= min(H, W):
            continue
        cx = rng.uniform(side / 2, W - side / 2)
        cy = rng.uniform(side / 2, H - side / 2)
        w = HandWindow(cx, cy, side)
        if all(window_iou(w, a) < cfg.negative_iou_max for a in avoid):
            out.append(w)
    return out


def negative_pools(records, images, cfg: TrainConfig):
    """(mining pool, calibration pool) of background HOG descriptors.

    The calibration pool is drawn from a disjoint random subset of the images
    so it is held out from mining.
    """
    rng = np.random.default_rng(cfg.seed + 17)
    descs = []
    owners = []
    for i, (r, img) in enumerate(zip(records, images)):
        if img is None:
            continue
        for w in negative_windows(rng, img.shape, r, cfg.negatives_per_image, cfg):
            descs.append(window_hog(img, w))
            owners.append(i)
    if not descs:
        raise ValueError("no negative windows could be sampled; records need frame images")
    descs = np.vstack(descs)
    owners = np.array(owners)
    imgs = np.unique(owners)
    imgs = imgs[rng.permutation(len(imgs))]
    n_cal = min(len(imgs) - 1, -(-cfg.calibration_negatives // max(cfg.negatives_per_image, 1)))
    cal = np.isin(owners, imgs[: max(n_cal, 1)])
    return descs[~cal], descs[cal]


def jittered_windows(window, rng, n=10, shift=2.0, scale=0.05):
    return [window.shifted(rng.uniform(-shift, shift), rng.uniform(-shift, shift),
                           1.0 + rng.uniform(-scale, scale)) for _ in range(n)]


def train_hand_esvms(records, images, cfg: TrainConfig = None, progress=None):
    """One calibrated ESVM per observable hand of every record."""
    cfg = cfg or TrainConfig()
    mining, calib = negative_pools(records, images, cfg)
    log.info("negative pools: %d mining, %d calibration", len(mining), len(calib))
    rng = np.random.default_rng(cfg.seed + 31)
    members = []
    for n, (r, img) in enumerate(zip(records, images)):
        if img is None:
            continue
        for side, win in hand_windows(r.box, r.joints, cfg.hand_ratio, cfg.alpha).items():
            try:
                pos = window_hog(img, win)
            except UnobservableHand:
                log.warning("record %s: %s hand outside the frame, no exemplar", r.id, side)
                continue
            svm = train_exemplar(pos, mining, cfg.mining, r.id, side, r.objects[side])
            jit = []
            for w in jittered_windows(win, rng, cfg.jitter_count, cfg.jitter_shift, cfg.jitter_scale):
                try:
                    jit.append(window_hog(img, w))
                except UnobservableHand:
                    pass
            members.append(calibrate(svm, np.vstack(jit), calib))
        if progress:
            progress(n + 1, len(records))
    return Ensemble(members)


def exemplars_from_records(records):
    return [
        Exemplar(r.id, encode_pose(r.box, r.joints), r.objects["left"], r.objects["right"],
                 r.gaze, r.activity)
        for r in records
    ]


def hand_match_scores(query: Query, neighbors, ensemble):
    """Per-neighbour calibrated scores (p_l, p_r) of their own-side ESVMs on the query's hands."""
    out = []
    for side in HAND_SIDES:
        keys = [(e.id, side) for e in neighbors.exemplars]
        D, ov = query.hands.get(side, (np.zeros((0, 0)), np.zeros(0)))
        if len(D) == 0:
            out.append(np.zeros(len(keys)))
        else:
            out.append(ensemble.member_scores(keys, D, ov))
    return out[0], out[1]


def cue_scores(query: Query, index: PoseIndex, ensemble, k):
    neighbors = index.query(query.pose_feature, k)
    left, right = hand_match_scores(query, neighbors, ensemble)
    cues = CueScores(gaze_scores(query.gaze, neighbors), hand_scores(left, right, neighbors),
                     prior_scores(neighbors))
    return cues, neighbors


class _FoldIndexCache:
    def __init__(self):
        self.key = None
        self.index = None

    def get(self, pool):
        key = tuple(e.id for e in pool)
        if key != self.key:
            self.key, self.index = key, PoseIndex(pool)
        return self.index


@dataclass
class ActivityModel:
    exemplars: list
    ensemble: Ensemble
    config: TrainConfig
    fusion: dict = field(default_factory=dict)  # k -> FusionSvm
    training: dict = field(default_factory=dict, repr=False)  # k -> FusionTraining

    def __post_init__(self):
        self.index = PoseIndex(self.exemplars)

    def cues(self, query, k):
        return cue_scores(query, self.index, self.ensemble, k)[0]

    def classify(self, query, k=100, fusion="svm"):
        """(label, cues, decision scores) for one query."""
        cues = self.cues(query, k)
        if fusion == "map":
            label, scores = map_classify(cues)
        elif fusion == "svm":
            if k not in self.fusion:
                raise KeyError(f"no fusion SVM trained for k={k}")
            label, scores = fusion_classify(self.fusion[k], cues)
        else:
            raise ValueError(f"unknown fusion rule {fusion!r}")
        return label, cues, scores


def cross_validated_cues(exemplars, queries, ensemble, k, folds=5, seed=0) -> FusionTraining:
    """Cue vectors for training pedestrians, each computed from the other folds only.

    The ESVMs are trained once on all training pedestrians; each query is
    scored with the ESVMs of its out-of-fold neighbours only.
    """
    qmap = dict(zip((e.id for e in exemplars), queries))
    cache = _FoldIndexCache()

    def compute(ex, pool, kk):
        return cue_scores(qmap[ex.id], cache.get(pool), ensemble, kk)[0]

    return build_fusion_training(exemplars, k, compute, folds, seed)


def train_activity_model(records, images, cfg: TrainConfig = None, progress=None) -> ActivityModel:
    cfg = cfg or TrainConfig()
    ensemble = train_hand_esvms(records, images, cfg, progress)
    exemplars = exemplars_from_records(records)
    model = ActivityModel(exemplars, ensemble, cfg)
    queries = [record_query(r, img, cfg) for r, img in zip(records, images)]
    pool = len(exemplars) - int(np.ceil(len(exemplars) / cfg.folds))
    for k in cfg.k_values:
        if k > pool:
            log.warning("skipping k=%d: only %d exemplars outside each fold", k, pool)
            continue
        tr = cross_validated_cues(exemplars, queries, ensemble, k, cfg.folds, cfg.seed)
        model.training[k] = tr
        model.fusion[k] = train_fusion_svm(tr.vectors, tr.labels, cfg.fusion_c, seed=cfg.seed)
    return model


def classify_sequence(model: ActivityModel, frames, k=100, fusion="svm", period=DEFAULT_REFRESH):
    """Per-frame labels for one pedestrian, refreshing hand evidence every ``period`` frames.

    ``frames`` is a list of (box, joints, gaze, image or None). A refresh uses
    the most recent frame that has an image; with none yet the hand evidence
    is zero. Returns (labels, number of ESVM evaluations).
    """
    cfg = model.config
    neighbors = []
    cue_frames = []
    for box, joints, gaze, _ in frames:
        nb = model.index.query(encode_pose(box, joints), k)
        neighbors.append(nb)
        cue_frames.append((gaze_scores(gaze, nb), prior_scores(nb)))

    def hand_fn(t):
        src = next((s for s in range(t, -1, -1) if frames[s][3] is not None), None)
        if src is None:
            return np.zeros(3)
        box, joints, gaze, image = frames[src]
        q = make_query(encode_pose(box, joints), gaze, image, box, joints, cfg)
        left, right = hand_match_scores(q, neighbors[t], model.ensemble)
        return hand_scores(left, right, neighbors[t])

    svm = None
    if fusion == "svm":
        svm = model.fusion[k]
    elif fusion != "map":
        raise ValueError(f"unknown fusion rule {fusion!r}")
    return sequential_classify(cue_frames, hand_fn, period, svm)


def ablation_accuracies(model: ActivityModel, test_vectors, test_labels, k, ablations=ABLATIONS):
    """Late-fusion test accuracy for each cue subset, trained on the stored CV vectors."""
    tr = model.training[k]
    out = {}
    for name, cues in ablations.items():
        svm = train_fusion_svm(tr.vectors, tr.labels, model.config.fusion_c, cues=cues, seed=model.config.seed)
        pred = np.argmax(svm.margins(test_vectors), axis=1)
        out[name] = float(np.mean(pred == np.asarray(test_labels)))
    return out


# -- persistence -------------------------------------------------------------------

def _exemplar_json(e: Exemplar):
    return {
        "id": e.id,
        "pose_feature": [float(v) for v in e.pose_feature],
        "objects": {"left": e.left_object, "right": e.right_object},
        "gaze": [float(v) for v in e.gaze],
        "activity": int(e.activity),
    }


def _config_json(cfg: TrainConfig):
    d = asdict(cfg)
    d["k_values"] = list(cfg.k_values)
    return d


def _config_from_json(d):
    d = dict(d)
    d["mining"] = MiningConfig(**d["mining"])
    d["k_values"] = tuple(d["k_values"])
    return TrainConfig(**d)


def save_model(model: ActivityModel, outdir):
    os.makedirs(outdir, exist_ok=True)
    save_ensemble(os.path.join(outdir, "esvm.bin"), model.ensemble.members)
    for k, svm in sorted(model.fusion.items()):
        save_fusion(os.path.join(outdir, f"fusion_k{k}.bin"), svm)
        tr = model.training.get(k)
        if tr is not None:
            _save_cv_table(os.path.join(outdir, f"cv_cues_k{k}.csv"), tr)
    doc = {"config": _config_json(model.config), "k_values": sorted(model.fusion),
           "exemplars": [_exemplar_json(e) for e in model.exemplars]}
    with open(os.path.join(outdir, "model.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(outdir) -> ActivityModel:
    with open(os.path.join(outdir, "model.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    exemplars = [
        Exemplar(d["id"], np.array(d["pose_feature"]), d["objects"]["left"], d["objects"]["right"],
                 np.array(d["gaze"]), d["activity"])
        for d in doc["exemplars"]
    ]
    model = ActivityModel(exemplars, load_ensemble(os.path.join(outdir, "esvm.bin")),
                          _config_from_json(doc["config"]))
    for k in doc["k_values"]:
        model.fusion[k] = load_fusion(os.path.join(outdir, f"fusion_k{k}.bin"))
        cv = os.path.join(outdir, f"cv_cues_k{k}.csv")
        if os.path.exists(cv):
            model.training[k] = _load_cv_table(cv)
    return model


CUE_COLUMNS = [f"{g}{y}" for g in CUE_GROUPS for y in range(3)]


def _save_cv_table(path, tr: FusionTraining):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["fold", "label"] + CUE_COLUMNS) + "\n")
        for f, y, v in zip(tr.fold, tr.labels, tr.vectors):
            fh.write(",".join([str(int(f)), str(int(y))] + [repr(float(x)) for x in v]) + "\n")


def _load_cv_table(path) -> FusionTraining:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FusionTraining(data[:, 2:], data[:, 1].astype(int), data[:, 0].astype(int), [])
