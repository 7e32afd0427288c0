"""Network, loss, gradient, and checkpoint tests."""

import math

import numpy as np
import pytest

from nightrain.denoise import (
    Adam,
    Checkpoint,
    LossWeights,
    NetworkArch,
    TrainConfig,
    TrainerState,
    backward,
    block_table,
    expected_param_count,
    finite_difference_check,
    forward,
    gradients,
    init_network,
    load_checkpoint,
    loss,
    median_denoise,
    save_checkpoint,
    denoise_frame,
)
from nightrain.errors import CheckpointError, ValidationError
from nightrain.quality import SsimConfig
from nightrain.rng import make_rng


def test_init_deterministic():
    arch = NetworkArch()
    a = init_network(arch, seed=7)
    b = init_network(arch, seed=7)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    c = init_network(arch, seed=8)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_param_count_matches_hand_count():
    """Depthwise 9*(1+8+16+32+48+24+9)=1242, pointwise 2704+16, biases 122."""
    arch = NetworkArch()
    net = init_network(arch, seed=0)
    assert expected_param_count(arch) == 4084
    assert net.param_count() == 4084


def test_init_within_fan_in_bound():
    arch = NetworkArch()
    net = init_network(arch, seed=3)
    for name, cin, cout in block_table(arch):
        dw = net.params[f"{name}.dw"]
        pw = net.params[f"{name}.pw"]
        assert np.abs(dw).max() <= math.sqrt(6.0 / 9) + 1e-6
        assert np.abs(pw).max() <= math.sqrt(6.0 / cin) + 1e-6
        assert not net.params[f"{name}.b"].any()
    assert not net.params["head_image.pw"].any()
    assert not net.params["head_mask.pw"].any()


def test_forward_residual_identity_at_init():
    net = init_network(NetworkArch(), seed=5, dtype=np.float64)
    rng = make_rng(50)
    x = rng.uniform(0, 1, (2, 32, 32))
    restored, logits, mask = forward(net, x)
    assert np.array_equal(restored, x)
    assert np.all(mask == 0.5)
    net32 = init_network(NetworkArch(), seed=5)  # float32 twin
    r32, _, _ = forward(net32, x)
    assert np.array_equal(r32, x.astype(np.float32))


def test_forward_shapes_match_input():
    net = init_network(NetworkArch(), seed=1)
    rng = make_rng(51)
    for shape in [(1, 64, 64), (2, 128, 64)]:
        x = rng.uniform(0, 1, shape)
        restored, logits, mask = forward(net, x)
        assert restored.shape == shape
        assert logits.shape == shape
        assert mask.shape == shape


def test_forward_rejects_indivisible_dims():
    net = init_network(NetworkArch(), seed=1)
    with pytest.raises(ValidationError, match="divisible"):
        forward(net, np.zeros((1, 60, 64)))


def test_forward_deterministic():
    net = init_network(NetworkArch(), seed=2)
    rng = make_rng(52)
    x = rng.uniform(0, 1, (2, 32, 32))
    a = forward(net, x)
    b = forward(net, x)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def test_loss_perfect_prediction_limit():
    rng = make_rng(53)
    img = rng.uniform(0, 1, (8, 8))
    mask = (rng.uniform(size=(8, 8)) < 0.5).astype(float)
    w = LossWeights(1.0, 0.5, 0.5)
    total, comps = loss(img, mask, img, mask, w)
    assert comps["mse"] == 0.0
    assert comps["ssim_term"] == 0.0
    assert comps["bce"] == pytest.approx(-math.log(1 - 1e-7), rel=1e-6)
    assert total == pytest.approx(0.5 * comps["bce"], rel=1e-12)


def test_loss_weights_not_all_zero():
    with pytest.raises(ValidationError):
        LossWeights(0.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        LossWeights(-1.0, 0.5, 0.5)


def test_loss_1x1_hand_value():
    """mse = 0.01, bce = -ln 0.5; ssim skipped below window size."""
    w = LossWeights(1.0, 0.0, 1.0)
    total, comps = loss(
        np.array([[0.4]]), np.array([[0.5]]),
        np.array([[0.5]]), np.array([[1.0]]), w,
    )
    assert comps["ssim_term"] == 0.0
    assert comps["mse"] == pytest.approx(0.01, abs=1e-15)
    assert comps["bce"] == pytest.approx(math.log(2.0), abs=1e-12)
    assert total == pytest.approx(0.01 + math.log(2.0), abs=1e-9)
    assert total == pytest.approx(0.703147, abs=1e-6)


def test_loss_decomposition_exact():
    rng = make_rng(54)
    a = rng.uniform(0, 1, (10, 10))
    b = rng.uniform(0, 1, (10, 10))
    mp = rng.uniform(0.1, 0.9, (10, 10))
    mt = (rng.uniform(size=(10, 10)) < 0.5).astype(float)
    w = LossWeights(1.3, 0.7, 2.1)
    total, comps = loss(a, mp, b, mt, w)
    resum = (w.lambda_mse * comps["mse"]
             + w.lambda_percept * comps["ssim_term"]
             + w.lambda_mask * comps["bce"])
    assert total == resum


def test_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        loss(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((5, 4)), np.zeros((4, 4)))


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def test_finite_difference_gradcheck_small():
    max_rel, results = finite_difference_check(seed=1, patch=16, n_params=25)
    assert len(results) == 25
    assert max_rel < 1e-4


def test_gradcheck_detects_wrong_gradients(monkeypatch):
    """The oracle is not vacuous: a 1% systematic error must be flagged."""
    import nightrain.denoise.net as net_mod

    orig = net_mod.pointwise_conv_backward

    def skewed(dy, x, w):
        dx, dw, db = orig(dy, x, w)
        return dx, dw * 1.01, db

    monkeypatch.setattr(net_mod, "pointwise_conv_backward", skewed)
    max_rel, _ = finite_difference_check(seed=0, patch=16, n_params=25)
    assert max_rel >= 1e-4


def test_single_term_gradients_linear():
    """Zeroing two of three weights leaves exactly the single-term gradient,
    and doubling a weight doubles its gradient part."""
    arch = NetworkArch()
    rng = make_rng(55)
    net = init_network(arch, seed=9, dtype=np.float64)
    for name in ("head_image.pw", "head_mask.pw"):
        net.params[name] = rng.uniform(-0.05, 0.05, net.params[name].shape)
    noisy = rng.uniform(0.2, 0.8, (1, 16, 16))
    target = np.clip(noisy + rng.uniform(-0.1, 0.1, noisy.shape), 0, 1)
    mask = (rng.uniform(size=noisy.shape) < 0.3).astype(float)

    _, _, g_mse = gradients(net, noisy, target, mask, LossWeights(1, 0, 0))
    _, _, g_ssim = gradients(net, noisy, target, mask, LossWeights(0, 1, 0))
    _, _, g_bce = gradients(net, noisy, target, mask, LossWeights(0, 0, 1))
    _, _, g_all = gradients(net, noisy, target, mask, LossWeights(1, 1, 1))
    _, _, g_2mse = gradients(net, noisy, target, mask, LossWeights(2, 0, 0))
    for k in g_all:
        assert np.allclose(g_all[k], g_mse[k] + g_ssim[k] + g_bce[k],
                           atol=1e-12), k
        assert np.allclose(g_2mse[k], 2.0 * g_mse[k], atol=1e-12), k


# ---------------------------------------------------------------------------
# Median filter and framing
# ---------------------------------------------------------------------------

def test_median_constant_unchanged():
    img = np.full((10, 10), 0.4)
    assert np.array_equal(median_denoise(img), img)


def test_median_removes_salt_pixel():
    img = np.full((9, 9), 0.2)
    img[4, 4] = 1.0
    out = median_denoise(img, 3)
    assert out[4, 4] == 0.2


def test_median_matches_sort_oracle():
    rng = make_rng(56)
    img = rng.uniform(0, 1, (16, 16))
    out = median_denoise(img, 3)
    pad = np.pad(img, 1, mode="reflect")
    for i in range(16):
        for j in range(16):
            window = sorted(pad[i : i + 3, j : j + 3].ravel().tolist())
            assert out[i, j] == pytest.approx(window[4], abs=1e-15)


def test_median_rejects_even_kernel():
    with pytest.raises(ValidationError):
        median_denoise(np.zeros((4, 4)), 4)


def test_denoise_frame_pads_odd_sizes():
    net = init_network(NetworkArch(), seed=1)
    ckpt = Checkpoint(network=net)
    rng = make_rng(57)
    img = rng.uniform(0, 1, (37, 53))
    out = denoise_frame(ckpt, img)
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 1


def test_denoise_frame_deterministic():
    net = init_network(NetworkArch(), seed=1)
    ckpt = Checkpoint(network=net)
    rng = make_rng(58)
    img = rng.uniform(0, 1, (32, 32))
    assert np.array_equal(denoise_frame(ckpt, img), denoise_frame(ckpt, img))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _trained_like_checkpoint(seed=3):
    net = init_network(NetworkArch(), seed=seed)
    rng = make_rng(seed + 100)
    for k in net.params:
        net.params[k] = (net.params[k]
                         + rng.normal(0, 0.01, net.params[k].shape)).astype(np.float32)
    adam = Adam(net.params)
    return Checkpoint(
        network=net,
        trainer=TrainerState(step=123, stage_index=4, adam_m=adam.m, adam_v=adam.v),
        config_hash="abc123",
        seed=seed,
    )


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    ckpt = _trained_like_checkpoint()
    save_checkpoint(ckpt, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    rng = make_rng(59)
    x = rng.uniform(0, 1, (1, 32, 32))
    r1, l1, m1 = forward(ckpt.network, x)
    r2, l2, m2 = forward(back.network, x)
    assert np.array_equal(r1, r2)
    assert np.array_equal(l1, l2)
    assert np.array_equal(m1, m2)
    assert back.trainer.step == 123
    assert back.trainer.stage_index == 4
    assert back.config_hash == "abc123"
    for k in ckpt.trainer.adam_m:
        assert np.array_equal(back.trainer.adam_m[k], ckpt.trainer.adam_m[k])


def test_checkpoint_truncated_blob_rejected(tmp_path):
    ckpt = _trained_like_checkpoint()
    save_checkpoint(ckpt, tmp_path / "ck")
    blob = (tmp_path / "ck" / "weights.bin").read_bytes()
    (tmp_path / "ck" / "weights.bin").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="truncated|corrupt"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_version_mismatch_rejected(tmp_path):
    import json

    ckpt = _trained_like_checkpoint()
    save_checkpoint(ckpt, tmp_path / "ck")
    man = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    man["format_version"] = 999
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_canonical_tensor_order(tmp_path):
    import json

    ckpt = _trained_like_checkpoint()
    save_checkpoint(ckpt, tmp_path / "ck")
    man = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    param_names = [r["name"] for r in man["tensors"] if r["kind"] == "param"]
    assert param_names == list(ckpt.network.params.keys())
    assert param_names[0] == "enc1.dw"
    assert param_names[-1] == "head_mask.b"


def test_checkpoint_missing_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope")


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(patch_size=20).validate(NetworkArch())
    TrainConfig(patch_size=64).validate(NetworkArch())
