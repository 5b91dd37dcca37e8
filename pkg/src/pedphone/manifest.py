"""Dataset manifests: JSON metadata pointing at frames, gaze vectors and heat-maps.

Schema (version 1)::

    {"version": 1,
     "records": [{"id", "box": [x, y, w, h], "joints": [[x, y] x 8],
                  "gaze": [169 floats] | "path.npy" | "path.txt",
                  "objects": {"left": label, "right": label}, "activity": 0|1|2,
                  "frame": "path.png" (optional), "hands": {"left": [x, y], ...} (optional),
                  "viewpoint": str (optional)}],
     "sequences": [{"id", "tag", "split": "train"|"test" (optional), "frames": [{"box", "joints", "activity",
                    "heatmap": "path.hmap" (optional), "gaze": ... (optional),
                    "frame": "path.png" (optional)}]}]}

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .esvm import OBJECT_LABELS
from .gaze import as_gaze
from .heatmaps import load_heatmaps
from .pose import PedestrianBox, as_joints

SCHEMA_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class PedestrianRecord:
    id: str
    box: PedestrianBox
    joints: np.ndarray
    gaze: np.ndarray
    objects: dict
    activity: int
    frame: str = None
    hands: dict = None
    viewpoint: str = ""
    image: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass
class SequenceFrame:
    box: PedestrianBox
    joints: np.ndarray
    activity: int = 0
    heatmap: str = None
    gaze: np.ndarray = None
    frame: str = None
    maps: np.ndarray = field(default=None, repr=False, compare=False)
    image: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass
class SequenceRecord:
    id: str
    tag: str
    frames: list
    split: str = ""


@dataclass
class DatasetManifest:
    records: list
    sequences: list = field(default_factory=list)
    root: str = "."

    def resolve(self, rel):
        return rel if rel is None or os.path.isabs(rel) else os.path.join(self.root, rel)

    def by_id(self):
        return {r.id: r for r in self.records}


def _fail(rid, fieldname, msg):
    raise ManifestError(f"record {rid!r}, field {fieldname!r}: {msg}")


def _read_gaze(value, root, rid):
    if isinstance(value, str):
        path = value if os.path.isabs(value) else os.path.join(root, value)
        if not os.path.exists(path):
            _fail(rid, "gaze", f"file {path} does not exist")
        vals = np.load(path) if path.endswith(".npy") else np.loadtxt(path)
    else:
        vals = value
    try:
        return as_gaze(vals)
    except (ValueError, TypeError) as exc:
        _fail(rid, "gaze", str(exc))


def _parse_box(raw, rid):
    try:
        x, y, w, h = (float(v) for v in raw)
        return PedestrianBox(x, y, w, h)
    except (ValueError, TypeError) as exc:
        _fail(rid, "box", str(exc))


def _parse_joints(raw, rid):
    try:
        return as_joints(raw)
    except (ValueError, TypeError) as exc:
        _fail(rid, "joints", str(exc))


def _parse_activity(raw, rid):
    if raw not in (0, 1, 2) or isinstance(raw, bool):
        _fail(rid, "activity", f"must be 0, 1 or 2, got {raw!r}")
    return int(raw)


def _check_file(root, rel, rid, fieldname):
    if rel is None:
        return None
    path = rel if os.path.isabs(rel) else os.path.join(root, rel)
    if not os.path.exists(path):
        _fail(rid, fieldname, f"file {path} does not exist")
    return rel


def parse_manifest(doc, root=".") -> DatasetManifest:
    if not isinstance(doc, dict) or "records" not in doc:
        raise ManifestError("manifest must be an object with a 'records' list")
    records = []
    seen = set()
    for i, raw in enumerate(doc["records"]):
        rid = str(raw.get("id", f"#{i}"))
        if "id" not in raw:
            _fail(rid, "id", "missing")
        if rid in seen:
            _fail(rid, "id", "duplicate id")
        seen.add(rid)
        for key in ("box", "joints", "gaze", "objects", "activity"):
            if key not in raw:
                _fail(rid, key, "missing")
        objects = raw["objects"]
        if not isinstance(objects, dict) or set(objects) != {"left", "right"}:
            _fail(rid, "objects", "must map exactly 'left' and 'right' to labels")
        for side, lab in objects.items():
            if lab not in OBJECT_LABELS:
                _fail(rid, "objects", f"{side} label {lab!r} not in {OBJECT_LABELS}")
        hands = raw.get("hands")
        if hands is not None:
            try:
                hands = {k: (float(v[0]), float(v[1])) for k, v in hands.items()}
            except (TypeError, ValueError, IndexError) as exc:
                _fail(rid, "hands", str(exc))
        records.append(PedestrianRecord(
            id=rid,
            box=_parse_box(raw["box"], rid),
            joints=_parse_joints(raw["joints"], rid),
            gaze=_read_gaze(raw["gaze"], root, rid),
            objects=dict(objects),
            activity=_parse_activity(raw["activity"], rid),
            frame=_check_file(root, raw.get("frame"), rid, "frame"),
            hands=hands,
            viewpoint=str(raw.get("viewpoint", "")),
        ))
    sequences = []
    sseen = set()
    for i, raw in enumerate(doc.get("sequences", [])):
        sid = str(raw.get("id", f"seq#{i}"))
        if sid in sseen:
            _fail(sid, "id", "duplicate sequence id")
        sseen.add(sid)
        frames = []
        for t, fr in enumerate(raw.get("frames", [])):
            fid = f"{sid}[{t}]"
            frames.append(SequenceFrame(
                box=_parse_box(fr.get("box"), fid),
                joints=_parse_joints(fr.get("joints"), fid),
                activity=_parse_activity(fr.get("activity", 0), fid),
                heatmap=_check_file(root, fr.get("heatmap"), fid, "heatmap"),
                gaze=None if fr.get("gaze") is None else _read_gaze(fr["gaze"], root, fid),
                frame=_check_file(root, fr.get("frame"), fid, "frame"),
            ))
        if not frames:
            _fail(sid, "frames", "sequence has no frames")
        sequences.append(SequenceRecord(sid, str(raw.get("tag", "")), frames, str(raw.get("split", ""))))
    return DatasetManifest(records, sequences, root)


def load_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(doc, os.path.dirname(os.path.abspath(path)))


def _num(v):
    return float(np.round(float(v), 6))


def record_to_json(r: PedestrianRecord, gaze_inline=True):
    out = {
        "id": r.id,
        "box": [_num(v) for v in r.box.as_tuple()],
        "joints": [[_num(x), _num(y)] for x, y in r.joints],
        "gaze": [_num(v) for v in r.gaze] if gaze_inline else r.gaze,
        "objects": {"left": r.objects["left"], "right": r.objects["right"]},
        "activity": int(r.activity),
    }
    if r.frame is not None:
        out["frame"] = r.frame
    if r.hands is not None:
        out["hands"] = {k: [_num(v[0]), _num(v[1])] for k, v in sorted(r.hands.items())}
    if r.viewpoint:
        out["viewpoint"] = r.viewpoint
    return out


def sequence_to_json(s: SequenceRecord):
    frames = []
    for fr in s.frames:
        d = {
            "box": [_num(v) for v in fr.box.as_tuple()],
            "joints": [[_num(x), _num(y)] for x, y in fr.joints],
            "activity": int(fr.activity),
        }
        if fr.heatmap is not None:
            d["heatmap"] = fr.heatmap
        if fr.gaze is not None:
            d["gaze"] = [_num(v) for v in fr.gaze]
        if fr.frame is not None:
            d["frame"] = fr.frame
        frames.append(d)
    out = {"id": s.id, "tag": s.tag, "frames": frames}
    if s.split:
        out["split"] = s.split
    return out


def manifest_to_json(m: DatasetManifest):
    return {
        "version": SCHEMA_VERSION,
        "records": [record_to_json(r) for r in m.records],
        "sequences": [sequence_to_json(s) for s in m.sequences],
    }


def save_manifest(path, m: DatasetManifest):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest_to_json(m), fh, indent=1, sort_keys=False)
        fh.write("\n")


def stratified_split(labels, test_fraction=0.25, seed=0):
    """Indices (train, test) with per-class fractions preserved.

    Each class contributes ``round(n_c * test_fraction)`` samples to the test
    set, chosen by a seeded permutation; a single-sample class stays in train.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(np.floor(len(idx) * test_fraction + 0.5)) if len(idx) > 1 else 0
        test.extend(idx[:n_test].tolist())
        train.extend(idx[n_test:].tolist())
    return sorted(train), sorted(test)


def split_manifest(m: DatasetManifest, test_fraction=0.25, seed=0):
    train, test = stratified_split([r.activity for r in m.records], test_fraction, seed)
    return [m.records[i] for i in train], [m.records[i] for i in test]


def frame_heatmaps(m: DatasetManifest, fr: SequenceFrame):
    if fr.maps is not None:
        return fr.maps
    if fr.heatmap is None:
        return None
    return load_heatmaps(m.resolve(fr.heatmap))
