import json
import math

import numpy as np
import pytest
import torch

from hyperdet import DetectorModel, DetectorNet, detect, detect_batch
from hyperdet.checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from hyperdet.detector import DetectionError, Verdict
from hyperdet.errors import CheckpointError, EmptyResultError
from hyperdet.preprocess import load_image, save_image, view_stack
from conftest import randomize_b_heads, tiny_config


@pytest.fixture
def model():
    return DetectorModel(randomize_b_heads(DetectorNet(tiny_config(seed=4))))


@pytest.fixture
def image():
    return np.random.default_rng(7).random((12, 12, 3))


def replay(model, image):
    """Every expert scored on its own view, one forward pass each."""
    stack = view_stack(image, model.net.cfg.backbone.image_size, model.bank)
    out = {}
    with torch.no_grad():
        for e in range(1, 7):
            out[e] = float(model.net(model.net.standardize(stack[e - 1]), e)[0])
    return out


def test_zero_model_gives_half_scores(image):
    net = DetectorNet(tiny_config())
    with torch.no_grad():
        net.head.weight.zero_()
    v = detect(DetectorModel(net), image)
    assert v.per_expert_scores == [0.5] * 6
    assert v.merged_score == 3.0 and v.normalized_score == 0.5 and v.label == "fake"


def test_merged_score_is_sum_of_independent_passes(model, image):
    v = detect(model, image)
    ref = replay(model, image)
    assert v.experts == [1, 6, 2, 3, 4, 5]
    assert abs(v.merged_score - sum(ref.values())) < 1e-10
    for e, s in zip(v.experts, v.per_expert_scores):
        assert abs(s - ref[e]) < 1e-12
    assert v.experts_evaluated == 5
    assert v.threshold_used == -math.inf


def test_infinite_threshold_runs_one_iteration(model, image):
    v = detect(model, image, math.inf)
    assert v.experts_evaluated == 1
    assert v.experts == [1, 6] and len(v.per_expert_scores) == 2


def test_threshold_at_first_sum(model, image):
    # Probability scores are positive, so the running sum only grows: a threshold
    # met after the first iteration is met for the rest of the loop.
    ref = replay(model, image)
    y1 = ref[1] + ref[6]
    assert detect(model, image, y1).experts_evaluated == 5
    assert detect(model, image, math.nextafter(y1, math.inf)).experts_evaluated == 1


def test_logit_merge_can_break_mid_loop():
    net = randomize_b_heads(DetectorNet(tiny_config(seed=4, merge="logit")))
    m = DetectorModel(net)
    img = np.random.default_rng(7).random((12, 12, 3))
    # Centre the head so that experts 2..5 straddle zero and some logits are negative.
    with torch.no_grad():
        net.head.bias -= float(np.median(detect(m, img).per_expert_scores[2:])) - 0.01
    net.invalidate_cache()
    full = detect(m, img)
    running = np.cumsum([full.per_expert_scores[0] + full.per_expert_scores[1]] + full.per_expert_scores[2:])
    drops = [n for n in range(1, 5) if running[n] < running[n - 1]]
    assert drops
    n = drops[0]
    v = detect(m, img, running[n - 1])
    assert v.experts_evaluated == n + 1
    assert v.merged_score == pytest.approx(running[n], abs=1e-12)


def test_low_threshold_equals_disabled(model, image):
    a, b = detect(model, image, 0.0), detect(model, image)
    a.threshold_used = b.threshold_used
    assert a == b


@pytest.mark.parametrize("order", [(1, 3, 2, 5, 4), (1, 5, 4, 3, 2), (1, 4, 2, 5, 3)])
def test_order_invariance(model, image, order):
    a, b = detect(model, image), detect(model, image, order=order)
    assert abs(a.merged_score - b.merged_score) < 1e-10
    assert a.label == b.label


def test_determinism_and_score_range(model, image):
    a, b = detect(model, image), detect(model, image)
    assert a == b
    assert all(0 < s < 1 for s in a.per_expert_scores)
    assert 0 < a.merged_score < 6


def test_logit_merge():
    m = DetectorModel(randomize_b_heads(DetectorNet(tiny_config(seed=4, merge="logit"))))
    img = np.random.default_rng(0).random((8, 8, 3))
    v = detect(m, img)
    assert v.normalized_score == pytest.approx(1 / (1 + math.exp(-v.merged_score / 6)))


def test_verdict_json_infinity(model, image):
    d = detect(model, image).to_dict()
    assert d["threshold_used"] == "-inf"
    json.dumps(d)


def test_detect_batch(tmp_path, model):
    r = np.random.default_rng(0)
    paths = []
    for n in range(3):
        p = tmp_path / f"im{n}.png"
        save_image(p, r.random((8, 8, 3)))
        paths.append(p)
    results, summary = detect_batch(model, paths)
    assert [x.path for x in results] == [str(p) for p in paths]
    assert summary["n_scored"] == 3
    for p, v in zip(paths, results):
        one = detect(model, load_image(p))
        one.path = str(p)
        assert v == one

    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    results, summary = detect_batch(model, [paths[0], bad, paths[1]])
    assert [type(x) for x in results] == [Verdict, DetectionError, Verdict]
    assert results[1].error == "invalid-image" and summary["n_errors"] == 1
    with pytest.raises(EmptyResultError):
        detect_batch(model, [bad])


# checkpoints -------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, model, image):
    d = save_checkpoint(tmp_path / "ck", model.net, model.bank, train_config={"a": 1}, seed=4, epoch=2,
                        metrics={"m": 1.0})
    net, bank, manifest = load_checkpoint(d)
    assert manifest["epoch"] == 2 and manifest["config"]["train"] == {"a": 1}
    for (n, p), (_, q) in zip(model.net.state_dict().items(), net.state_dict().items()):
        assert torch.equal(p, q), n
    assert bank.to_text() == model.bank.to_text()
    assert detect(DetectorModel(net, bank), image) == detect(model, image)


def test_checkpoint_is_byte_deterministic(tmp_path, model):
    a = save_checkpoint(tmp_path / "a", model.net, model.bank, seed=1)
    b = save_checkpoint(tmp_path / "b", model.net, model.bank, seed=1)
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    assert checkpoint_hash(a) == checkpoint_hash(b)


def test_checkpoint_tamper_and_missing(tmp_path, model):
    d = save_checkpoint(tmp_path / "ck", model.net, model.bank)
    blob = d / "head.safetensors"
    blob.write_bytes(blob.read_bytes()[:-1] + b"\x00")
    with pytest.raises(CheckpointError, match="sha256"):
        load_checkpoint(d)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nowhere")


def test_load_trained_checkpoint(small_checkpoint):
    m = DetectorModel.load(small_checkpoint)
    assert m.checkpoint_hash == checkpoint_hash(small_checkpoint)
    assert not m.net.training
    v = detect(m, np.random.default_rng(0).random((16, 16, 3)))
    assert len(v.per_expert_scores) == 6
