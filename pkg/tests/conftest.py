import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from hyperdet import BackboneSpec, DetectorNet, ModelConfig, TrainConfig, train  # noqa: E402
from hyperdet.data import make_checker_dataset  # noqa: E402

TINY_SPEC = dict(image_size=8, patch_size=4, depth=2, width=6, heads=2, feature_dim=6, n_finetune=2)


def tiny_config(**kw) -> ModelConfig:
    base = dict(backbone=BackboneSpec(**TINY_SPEC), rank=2, embed_dim=4, hidden_dim=8, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def randomize_b_heads(model: DetectorNet, std=0.3, seed=1):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for lin in model.hypernet.head_B.values():
            lin.weight.copy_(torch.randn(lin.weight.shape, generator=g, dtype=lin.weight.dtype) * std)
        model.head.weight.copy_(torch.randn(model.head.weight.shape, generator=g, dtype=model.head.weight.dtype))
    model.invalidate_cache()
    return model


@pytest.fixture
def tiny_model():
    return DetectorNet(tiny_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """A 24-image checker corpus with train and test splits at 16 px."""
    root = tmp_path_factory.mktemp("small_data")
    make_checker_dataset(root, 24, size=16, seed=1, split="train")
    make_checker_dataset(root, 12, size=16, seed=2, split="test")
    return root


@pytest.fixture(scope="session")
def small_checkpoint(tmp_path_factory, small_data):
    """One quick epoch on a 16 px toy backbone; enough to exercise the checkpoint path."""
    out = tmp_path_factory.mktemp("small_ckpt") / "ckpt"
    model = {
        "backbone": dict(image_size=16, patch_size=4, depth=2, width=8, heads=2, feature_dim=8, n_finetune=2),
        "rank": 2, "embed_dim": 4, "hidden_dim": 8,
    }
    cfg = TrainConfig(epochs=1, batch_size=8, rank=2, fine_tuned_blocks=2, train_root=str(small_data),
                      val_root=str(small_data), val_split="test", learning_rate=1e-3, model=model)
    return train(cfg, out)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
