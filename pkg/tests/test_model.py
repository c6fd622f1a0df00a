import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdet import BackboneSpec, DetectorNet, ModelConfig, adapted_forward, generate_lora
from hyperdet.backbone import extract_features, forward
from hyperdet.errors import ConfigError, InputSizeError, ShapeError, UnknownExpertError, UnknownSiteError
from hyperdet.hyperlora import HyperNetwork, LoRALinear, LoRAWeights
from conftest import randomize_b_heads, tiny_config
from oracles import numpy_forward, numpy_lora, numpy_state


def _x(model, seed=0, n=1):
    s = model.cfg.backbone
    r = np.random.default_rng(seed)
    return model.standardize(r.random((n, s.image_size, s.image_size, s.channels)))


def test_site_shapes_and_sites():
    spec = BackboneSpec(depth=4, width=64, n_finetune=2)
    assert spec.fine_tuned_blocks == (2, 3)
    assert spec.sites == [(2, 1), (2, 2), (3, 1), (3, 2)]
    assert spec.site_shapes == {1: (256, 64), 2: (64, 256)}


def test_lora_shapes(tiny_model):
    lw = generate_lora(tiny_model.hypernet, 3, (0, 1))
    assert lw.A.shape == (24, 2) and lw.B.shape == (2, 6)
    assert lw.rank == 2
    assert lw.delta().shape == (24, 6)


def test_generate_all_matches_generate(tiny_model):
    randomize_b_heads(tiny_model)
    allw = tiny_model.hypernet.generate_all(4)
    for site, lw in allw.items():
        one = tiny_model.hypernet.generate(4, site)
        # batched and single-site matmuls may round differently in the last ulp
        torch.testing.assert_close(one.A, lw.A, rtol=1e-13, atol=1e-16)
        torch.testing.assert_close(one.B, lw.B, rtol=1e-13, atol=1e-16)


def test_lora_matches_numpy_oracle(tiny_model):
    randomize_b_heads(tiny_model)
    st_ = numpy_state(tiny_model)
    ref = numpy_lora(st_, tiny_model.cfg, 2)
    for site, lw in tiny_model.hypernet.generate_all(2).items():
        np.testing.assert_allclose(lw.A.detach().numpy(), ref[site][0], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(lw.B.detach().numpy(), ref[site][1], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("expert", [None, 1, 3, 6])
def test_forward_matches_numpy_oracle(tiny_model, expert):
    randomize_b_heads(tiny_model)
    x = _x(tiny_model, seed=5)
    got = float(tiny_model(x, expert)[0].detach())
    ref = numpy_forward(numpy_state(tiny_model), tiny_model.cfg, x[0].numpy().transpose(1, 2, 0), expert)
    assert abs(got - ref) < 1e-12


def test_mean_pooling_matches_oracle():
    cfg = tiny_config(backbone=BackboneSpec(image_size=8, patch_size=4, depth=2, width=6, heads=2,
                                            feature_dim=4, n_finetune=1, pooling="mean"))
    m = randomize_b_heads(DetectorNet(cfg))
    x = _x(m, seed=2)
    got = float(m(x, 2)[0].detach())
    ref = numpy_forward(numpy_state(m), cfg, x[0].numpy().transpose(1, 2, 0), 2)
    assert abs(got - ref) < 1e-12


def test_zero_b_is_identity(tiny_model):
    x = _x(tiny_model, n=3)
    with torch.no_grad():
        base = tiny_model(x, None)
        for e in range(1, 7):
            assert torch.equal(tiny_model(x, e), base)


def test_distinct_experts_after_training_signal(tiny_model):
    randomize_b_heads(tiny_model)
    x = _x(tiny_model)
    with torch.no_grad():
        outs = {e: float(tiny_model(x, e)[0]) for e in range(1, 7)}
    assert len(set(outs.values())) == 6


def test_errors(tiny_model):
    with pytest.raises(UnknownExpertError):
        tiny_model.hypernet.generate(7, (0, 1))
    with pytest.raises(UnknownExpertError):
        tiny_model.hypernet.generate(0, (0, 1))
    with pytest.raises(UnknownSiteError):
        tiny_model.hypernet.generate(1, (5, 1))
    with pytest.raises(UnknownSiteError):
        tiny_model.hypernet.generate(1, (0, 3))
    with pytest.raises(InputSizeError):
        tiny_model(torch.zeros(1, 3, 9, 9, dtype=torch.float64), 1)
    with pytest.raises(ConfigError):
        DetectorNet(tiny_config(rank=4))  # rank must be at most min(d_out, d_in) / 2 = 3


def test_adapted_forward_shape_error():
    W = torch.zeros(4, 3)
    lw = LoRAWeights((0, 1), 1, torch.zeros(4, 2), torch.zeros(2, 5))
    with pytest.raises(ShapeError):
        adapted_forward(torch.zeros(1, 3), W, None, lw)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(0.0, 2.0))
def test_adapted_forward_equals_merged_weight(seed, scale):
    g = torch.Generator().manual_seed(seed)
    W = torch.randn(5, 4, generator=g, dtype=torch.float64)
    b = torch.randn(5, generator=g, dtype=torch.float64)
    A = torch.randn(5, 2, generator=g, dtype=torch.float64)
    B = torch.randn(2, 4, generator=g, dtype=torch.float64)
    x = torch.randn(3, 4, generator=g, dtype=torch.float64)
    got = adapted_forward(x, W, b, LoRAWeights((0, 1), 1, A, B), scale)
    ref = x @ (W + scale * A @ B).T + b
    torch.testing.assert_close(got, ref, rtol=1e-12, atol=1e-12)


def test_lora_linear_base_frozen():
    lin = LoRALinear(4, 6)
    assert not any(p.requires_grad for p in lin.parameters())


def test_backbone_frozen_and_trainable_split(tiny_model):
    frozen = tiny_model.frozen_parameters()
    trainable = tiny_model.trainable_parameters()
    assert frozen and all(not p.requires_grad for p in frozen.values())
    assert set(trainable) >= {"hypernet.tables.task", "hypernet.combiner.weight", "head.weight"}
    assert not any(n.startswith("backbone") for n in trainable)


def test_freeze_embeddings():
    m = DetectorNet(tiny_config(freeze_embeddings=True))
    assert not any(n.startswith("hypernet.tables") for n in m.trainable_parameters())


def test_extra_expert_adds_embed_dim_parameters():
    def count(n_tasks):
        h = HyperNetwork((0, 1), {1: (24, 6), 2: (6, 24)}, 2, embed_dim=4, hidden_dim=8, n_tasks=n_tasks)
        return sum(p.numel() for p in h.parameters() if p.requires_grad)
    assert count(7) - count(6) == 4


def test_seeded_construction_is_deterministic():
    a, b = DetectorNet(tiny_config(seed=7)), DetectorNet(tiny_config(seed=7))
    for (n, p), (_, q) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(p, q), n
    c = DetectorNet(tiny_config(seed=8))
    assert not torch.equal(a.state_dict()["hypernet.tables.task"], c.state_dict()["hypernet.tables.task"])


def test_construction_does_not_touch_global_rng():
    torch.manual_seed(0)
    before = torch.rand(1)
    torch.manual_seed(0)
    DetectorNet(tiny_config())
    assert torch.equal(torch.rand(1), before)


def test_lora_cache_only_without_grad(tiny_model):
    randomize_b_heads(tiny_model)
    tiny_model.eval()
    tiny_model.cache_loras = True
    with torch.no_grad():
        a = tiny_model.loras(2)
        assert tiny_model.loras(2) is a
    assert tiny_model.loras(2) is not a
    tiny_model.train()
    assert not tiny_model._lora_cache


def test_helpers_forward_and_features(tiny_model):
    img = np.random.default_rng(0).random((8, 8, 3))
    s = forward(tiny_model, img, 6)
    assert 0.0 < s < 1.0
    f = extract_features(tiny_model, img, 6)
    assert f.shape == (6,)


def test_config_roundtrip():
    cfg = tiny_config(merge="logit")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        tiny_config(merge="max")
