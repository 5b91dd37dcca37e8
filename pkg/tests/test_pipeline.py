import numpy as np
import pytest

from pedphone.fusion import expected_refreshes
from pedphone.pipeline import (
    ABLATIONS, ablation_accuracies, classify_sequence, load_model, placement_descriptors, record_image,
    record_query, save_model,
)
from pedphone.pose import hand_windows


def test_own_patch_ranks_first(small_model):
    model, train, _ = small_model
    hits = total = 0
    for r in train[:30]:
        img = record_image(r)
        for side, win in hand_windows(r.box, r.joints).items():
            D, ov = placement_descriptors(img, win)
            keys = [(e.id, side) for e in model.exemplars]
            scores = model.ensemble.member_scores(keys, D, ov)
            hits += keys[int(np.argmax(scores))][0] == r.id
            total += 1
    assert hits / total >= 0.95


def test_model_round_trip(small_model, tmp_path):
    model, _, test = small_model
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    save_model(back, tmp_path / "m2")
    for name in ["esvm.bin", "fusion_k10.bin", "fusion_k25.bin", "cv_cues_k10.csv", "model.json"]:
        assert (tmp_path / "m" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes(), name
    for r in test[:10]:
        q = record_query(r, record_image(r), model.config)
        for fusion in ("map", "svm"):
            a, ca, _ = model.classify(q, 10, fusion)
            b, cb, _ = back.classify(q, 10, fusion)
            assert a == b
            np.testing.assert_allclose(ca.vector(), cb.vector(), atol=1e-12)


def test_classify_rejects_unknown_options(small_model):
    model, _, test = small_model
    q = record_query(test[0], record_image(test[0]), model.config)
    with pytest.raises(KeyError):
        model.classify(q, 50, "svm")
    with pytest.raises(ValueError):
        model.classify(q, 10, "vote")


def test_accuracy_and_ablations_run(small_model):
    model, _, test = small_model
    vecs, labels = [], []
    for r in test:
        q = record_query(r, record_image(r), model.config)
        vecs.append(model.cues(q, 10).vector())
        labels.append(r.activity)
    acc = ablation_accuracies(model, np.array(vecs), labels, 10)
    assert set(acc) == set(ABLATIONS)
    assert acc["pose+hands+gaze"] >= 0.7


def test_sequence_refresh_count(small_model, small_dataset):
    model = small_model[0]
    seq = small_dataset.test_sequences[0]
    frames = [(f.box, f.joints, f.gaze, None if f.image is None else f.image / 255.0) for f in seq.frames]
    labels, calls = classify_sequence(model, frames, 10, "map", period=50)
    assert len(labels) == len(frames)
    assert calls == expected_refreshes(len(frames), 50) == 3
    truth = np.array([f.activity for f in seq.frames])
    assert np.mean(np.array(labels) == truth) > 0.5
