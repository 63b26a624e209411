import hashlib
from pathlib import Path

import pytest
from hypothesis import settings

from bitfault import checkpoint, data, quantize, training

settings.register_profile("bitfault", deadline=None)
settings.load_profile("bitfault")

_CACHE = Path(__file__).resolve().parent.parent / ".cache"

# everything that shapes the trained victim; bump to invalidate cached models
_VICTIM_RECIPE = "desk_cnn seed=0 | glyphs 4000/1000 seed=7 noise=0.25 | epochs=5 bs=64 lr=0.02 mom=0.9"


@pytest.fixture(scope="session")
def session_timings():
    """Wall-clock seconds of expensive fixture work, for budget checks."""
    return {}


@pytest.fixture(scope="session")
def desk_dataset():
    return data.synthetic_glyphs()


@pytest.fixture(scope="session")
def desk_victim(desk_dataset, session_timings):
    """Trained float desk CNN, cached on disk across test sessions."""
    tag = hashlib.sha256(_VICTIM_RECIPE.encode()).hexdigest()[:16]
    path = _CACHE / f"desk_victim_{tag}.ckpt"
    if path.exists():
        return checkpoint.load_checkpoint(path)
    import time

    t0 = time.perf_counter()
    result = training.train_victim(training.desk_cnn(seed=0), desk_dataset, training.TrainConfig())
    session_timings["desk_victim_train"] = time.perf_counter() - t0
    assert result.test_top1 >= 0.95, f"victim trained to only {result.test_top1:.4f}"
    _CACHE.mkdir(exist_ok=True)
    checkpoint.save_checkpoint(result.model, path)
    return result.model


@pytest.fixture()
def desk_quantized(desk_victim):
    """Fresh 8-bit quantized copy per test; safe to mutate."""
    return quantize.quantize_model(desk_victim, 8)
