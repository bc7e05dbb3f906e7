import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from torbci.synth import GeneratorSpec, generate_dataset


@pytest.fixture(scope="session")
def small_spec() -> GeneratorSpec:
    """Cheap three-session dataset spec for workflow-level tests."""
    return GeneratorSpec(n_sessions=3, trials_per_session=20, runs_per_session=2, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


def scripted_session(n_subsessions: int, trls: int, session_id: int = 2):
    """Session whose trial payloads carry their own subsession index so a
    scripted learner can look its accuracy up without any real model."""
    from torbci.synth import SessionRecord

    data = np.zeros((n_subsessions * trls, 1, 1), dtype=np.float32)
    for i in range(n_subsessions):
        data[i * trls : (i + 1) * trls] = i
    labels = np.zeros(n_subsessions * trls, dtype=np.uint8)
    return SessionRecord(session_id, data, labels)


class ScriptedLearner:
    """Learner stub returning a pre-scripted accuracy per subsession."""

    def __init__(self, accs, steps_per_block: int = 150):
        self.accs = list(accs)
        self.steps_per_block = steps_per_block
        self.finetuned_on: list[int] = []

    def evaluate(self, data, labels) -> float:
        return float(self.accs[int(data[0, 0, 0])])

    def finetune(self, data, labels) -> int:
        self.finetuned_on.append(int(data[0, 0, 0]))
        return self.steps_per_block
