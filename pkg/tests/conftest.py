import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    from owleyes.corpus import make_toy_corpus

    out = tmp_path_factory.mktemp("corpus")
    make_toy_corpus(out, 12, seed=5)
    return out


@pytest.fixture(scope="session")
def blur_set(toy_corpus, tmp_path_factory):
    """10 blurred + 10 clean desk-size screenshots."""
    from owleyes.synth import generate_dataset

    return generate_dataset(toy_corpus, tmp_path_factory.mktemp("blur"), 10, ["BlurredScreen"], master_seed=3, workers=1)


@pytest.fixture(scope="session")
def trained_checkpoint(blur_set, tmp_path_factory):
    """Desk model fitted to ``blur_set``; flags most blurred shots as bugs."""
    from owleyes.checkpoint import save_checkpoint
    from owleyes.model import DESK, TrainHyper, build_model, train

    model, _ = train(build_model(DESK, 0), blur_set, TrainHyper(epochs=15, batch_size=8, seed=0))
    return save_checkpoint(model, tmp_path_factory.mktemp("model") / "desk.owl")
