"""Model assembly, cost accounting, checkpoint serialization."""

import numpy as np
import pytest

from gradtable import module_cases
from hsimamba import checkpoint
from hsimamba.gradcheck import gradcheck
from hsimamba.model import ConfigError, ModelConfig, build_model
from hsimamba.optim import AdamW
from hsimamba.profile import count_flops, count_params
from hsimamba.tensor import Tensor


IP = dict(bands=200, num_classes=16)  # defaults: D=64 N=16 ratio=2 P=7


@pytest.fixture
def rng():
    return np.random.default_rng(31)


def test_config_validation_lists_violations():
    with pytest.raises(ConfigError) as e:
        ModelConfig(bands=10, num_classes=1, embed_dim=6, patch=4, num_blocks=0).validate()
    msg = str(e.value)
    for frag in ("num_classes", "bands 10", "patch 4", "num_blocks"):
        assert frag in msg


def test_forward_shapes_indian_pines_config(rng):
    model = build_model(ModelConfig(**IP))
    x = rng.normal(size=(7, 7, 200)).astype(np.float32)
    logits = model(x)  # unbatched patch in, unbatched logits out
    assert logits.shape == (16,)


def test_forward_shapes_houston_config(rng):
    model = build_model(ModelConfig(bands=48, num_classes=20, patch=15))
    x = rng.normal(size=(2, 15, 15, 48)).astype(np.float32)
    assert model(x).shape == (2, 20)


def test_two_blocks_double_block_entries():
    one = count_params(build_model(ModelConfig(**IP)))
    two = count_params(build_model(ModelConfig(**IP, num_blocks=2)))
    block_names = [r.name.split(".", 1)[1] for r in one.rows if r.name.startswith("block1.")]
    for suffix in block_names:
        assert two.row(f"block1.{suffix}").params == one.row(f"block1.{suffix}").params
        assert two.row(f"block2.{suffix}").params == one.row(f"block1.{suffix}").params
    block_total = sum(r.params for r in one.rows if r.name.startswith("block1."))
    assert two.total_params == one.total_params + block_total


def test_param_report_expected_lines():
    report = count_params(build_model(ModelConfig(**IP)))
    assert report.row("block1.dpe").params == 640
    assert report.row("classifier").params == 1040
    assert report.row("block1.cross_attention").params == 0
    assert abs(report.total_params - 72940) / 72940 <= 0.10


def test_param_count_matches_raw_store():
    model = build_model(ModelConfig(**IP))
    report = count_params(model)
    assert report.total_params == sum(p.size for p in model.parameters())
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))


def test_flops_report_formulas():
    model = build_model(ModelConfig(**IP))
    report = count_flops(model)
    # embedding-only: 2*3*3*(200/4)*64*49
    emb = report.row("embedding")
    assert 2 * emb.macs == 2 * 3 * 3 * 50 * 64 * 49 == 2822400
    # pointwise fuse conv: 2*128*64*49
    fuse = report.row("block1.local_conv.fuse")
    assert 2 * fuse.macs == 2 * 128 * 64 * 49 == 802816
    assert report.total_flops == sum(r.flops for r in report.rows)
    assert abs(report.total_macs - 4.19e6) / 4.19e6 <= 0.25


def test_flops_scale_linearly_with_batch():
    model = build_model(ModelConfig(**IP))
    one = count_flops(model, batch=1)
    four = count_flops(model, batch=4)
    assert four.total_flops == 4 * one.total_flops
    assert four.total_params == one.total_params


def test_report_formats():
    model = build_model(ModelConfig(bands=8, num_classes=3, embed_dim=8, patch=3))
    report = count_flops(model)
    text = report.as_text()
    assert "embedding" in text and "total" in text
    kv = report.as_kv()
    assert f"total.params={report.total_params}" in kv.splitlines()
    for line in kv.splitlines():
        key, _, value = line.partition("=")
        assert key and value.lstrip("-").isdigit()


def test_checkpoint_roundtrip_bit_identical(rng, tmp_path):
    cfg = ModelConfig(bands=8, num_classes=3, embed_dim=8, patch=5)
    model = build_model(cfg, seed=3)
    x = rng.normal(size=(2, 5, 5, 8)).astype(np.float32)
    # move the BN stats off their init values
    model.train()
    model(Tensor(x))
    before = model(Tensor(x)).data.copy()

    path = tmp_path / "model.ckpt"
    opt = AdamW(list(model.named_parameters()), lr=1e-3)
    checkpoint.save_model(path, model, opt)

    clone = build_model(cfg, seed=99)
    opt2 = AdamW(list(clone.named_parameters()), lr=1e-3)
    checkpoint.load_model(path, clone, opt2)
    after = clone(Tensor(x)).data
    assert np.array_equal(before, after)
    assert opt2.t == opt.t


def test_checkpoint_architecture_mismatch(rng, tmp_path):
    cfg = ModelConfig(bands=8, num_classes=3, embed_dim=8, patch=5)
    model = build_model(cfg)
    path = tmp_path / "model.ckpt"
    checkpoint.save_model(path, model)
    other = build_model(ModelConfig(bands=8, num_classes=3, embed_dim=8, patch=3))
    with pytest.raises(checkpoint.CheckpointError, match="architecture"):
        checkpoint.load_model(path, other)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.read_entries(path)


def test_checkpoint_binary_layout(tmp_path):
    path = tmp_path / "one.ckpt"
    checkpoint.write_entries(path, [("w", np.arange(3, dtype=np.float32))])
    blob = path.read_bytes()
    assert blob[:4] == b"DMCK"
    # version=1, count=1, namelen=1, 'w', rank=1, extent=3, then 3 f32
    import struct

    assert struct.unpack_from("<II", blob, 4) == (1, 1)
    assert struct.unpack_from("<H", blob, 12) == (1,)
    assert blob[14:15] == b"w"
    assert struct.unpack_from("<B", blob, 15) == (1,)
    assert struct.unpack_from("<I", blob, 16) == (3,)
    assert np.array_equal(np.frombuffer(blob, "<f4", offset=20), [0, 1, 2])


def test_full_model_gradcheck(rng):
    fn, points, eps = module_cases(rng)["full_model"]
    err = gradcheck(fn, points, eps=eps)
    assert err <= 1e-4, f"full model gradcheck: {err:.2e}"
