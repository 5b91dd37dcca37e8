import numpy as np
import pytest

from pedphone.gpdm import GpdmConfig, train_gpdm
from pedphone.manifest import split_manifest
from pedphone.pipeline import TrainConfig, record_image, train_activity_model
from pedphone.pose import PedestrianBox, encode_pose
from pedphone.synthetic import SyntheticSpec, generate_synthetic, gpdm_training_sequences


def random_case(rng):
    box = PedestrianBox(rng.uniform(-50, 500), rng.uniform(-50, 500), rng.uniform(20, 200), rng.uniform(50, 400))
    joints = np.column_stack([box.x + rng.uniform(-0.2, 1.2, 8) * box.w, box.y + rng.uniform(-0.2, 1.2, 8) * box.h])
    return box, joints


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(pedestrians_per_class=30, test_sequences=1, sequence_length=120, seed=5)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    train, test = split_manifest(small_dataset.manifest, 0.25, seed=0)
    images = [record_image(r) for r in train]
    model = train_activity_model(train, images, TrainConfig(k_values=(10, 25)))
    return model, train, test


@pytest.fixture(scope="session")
def walking_bank():
    spec = SyntheticSpec(pedestrians_per_class=1, viewpoints=2, train_sequence_length=60)
    bank = []
    for s in gpdm_training_sequences(spec, activities=(0, 1)):
        Y = np.array([encode_pose(f.box, f.joints) for f in s.frames])
        bank.append(train_gpdm(Y, GpdmConfig(max_iter=300), s.tag))
    return bank


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with its measured values."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in name or rep.when not in ("call", "setup"):
                continue
            if outcome == "passed" and rep.when != "call":
                continue
            num = int(name.split("test_criterion_")[1].split("_")[0])
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((num, f"{'PASS' if outcome == 'passed' else 'FAIL'} criterion {num}: {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
