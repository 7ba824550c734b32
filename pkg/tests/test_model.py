import struct

import numpy as np
import pytest

from complexiris import model as M
from complexiris.ctensor import ComplexTensor


@pytest.fixture(scope="module")
def tiny():
    return M.build(M.tiny_preset(precision=64), seed=3)


def test_tiny_output_shape(tiny):
    x = np.random.default_rng(0).random((2, 64, 256))
    out = tiny.forward(x)
    assert out.shape == (2, 16, 64, 8)
    assert tiny.config.output_shape == (16, 64, 8)


def test_paper_preset_shapes():
    cfg = M.paper_preset()
    assert cfg.output_shape == (8, 32, 20)
    m = M.build(cfg, 0)
    assert m.gabor.weight.value.shape == (7, 7, 1, 64)
    dense0 = dict(m.blocks)["dense0"]
    assert dense0.out_channels == 64 + 6 * 12 == 136


def test_dense_connectivity_channels(tiny):
    for name, blk in tiny.blocks:
        if name.startswith("dense"):
            c0 = blk.layers[0].in_channels
            assert [layer.in_channels for layer in blk.layers] == \
                [c0 + i * tiny.config.growth_rate for i in range(len(blk.layers))]


def test_same_seed_same_weights():
    a, b = M.build(M.tiny_preset(), 5), M.build(M.tiny_preset(), 5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.value.re, pb.value.re) and np.array_equal(pa.value.im, pb.value.im)
    c = M.build(M.tiny_preset(), 6)
    w = lambda m: dict(m.named_parameters())["dense0.layer0.conv1"].value.re
    assert not np.array_equal(w(c), w(a))


def test_zero_image_gives_zero_features(tiny):
    out = tiny.forward(np.zeros((1, 64, 256)))
    assert np.abs(out.re).max() == 0 and np.abs(out.im).max() == 0


def test_eval_forward_is_pure(tiny):
    x = np.random.default_rng(1).random((2, 64, 256))
    before = {k: (v.re.copy(), v.im.copy()) for k, v in tiny.state_dict().items()}
    a, b = tiny.forward(x), tiny.forward(x)
    assert a.allclose(b, rtol=0)
    for k, v in tiny.state_dict().items():
        assert np.array_equal(v.re, before[k][0]) and np.array_equal(v.im, before[k][1])


def test_shift_equivariance_before_pooling(tiny):
    rng = np.random.default_rng(2)
    x = rng.random((1, 64, 256))
    s = 4  # total pooling factor of the tiny preset
    a = tiny.forward_node(x, until="dense0").value.to_complex()
    b = tiny.forward_node(np.roll(x, s, axis=2), until="dense0").value.to_complex()
    margin = 8  # receptive-field radius of the Gabor block plus three 3x3 layers, rounded up
    lo, hi = margin + s, 256 - margin
    assert np.allclose(b[:, margin:-margin, lo:hi], a[:, margin:-margin, lo - s:hi - s], atol=1e-10)


def test_wrong_input_size_rejected(tiny):
    with pytest.raises(ValueError, match="64 x 256"):
        tiny.forward(np.zeros((1, 32, 256)))


def test_invalid_configs():
    with pytest.raises(ValueError):
        M.ModelConfig(dense_layers=())
    with pytest.raises(ValueError):
        M.ModelConfig(transitions=(4,))
    with pytest.raises(ValueError):
        M.ModelConfig(input_h=62)
    with pytest.raises(ValueError):
        M.ModelConfig(gabor_size=6)


def test_config_text_roundtrip():
    cfg = M.paper_preset(real_valued=True, precision=64)
    assert M.ModelConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        M.ModelConfig.from_text("bogus=1\n")


def test_real_variant_keeps_imaginary_zero():
    m = M.build(M.tiny_preset(real_valued=True), 0)
    assert all(p.real_only for p in m.parameters() if not p.name.endswith("gamma_diag"))
    out = m.forward(np.random.default_rng(0).random((2, 64, 256)))
    assert np.abs(out.im).max() == 0
    assert m.gabor.weight.value.im.max() == 0


def test_checkpoint_roundtrip(tmp_path, tiny):
    p1, p2 = tmp_path / "a.cirn", tmp_path / "b.cirn"
    M.save(tiny, p1)
    loaded = M.load(p1)
    M.save(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.config == tiny.config
    for (_, a), (_, b) in zip(tiny.named_parameters(), loaded.named_parameters()):
        assert np.array_equal(a.value.re, b.value.re) and np.array_equal(a.value.im, b.value.im)


def test_checkpoint_size_accounting(tiny):
    data = M.checkpoint_bytes(tiny)
    cfg = tiny.config.to_text().encode()
    expect = 4 + 4 + 4 + len(cfg) + 4
    for name, t in tiny.state_dict().items():
        item = 4 if t.dtype == np.float32 else 8
        expect += 2 + len(name.encode()) + 2 + 4 * t.ndim + 2 * t.size * item
    assert len(data) == expect


def test_checkpoint_errors(tiny):
    data = M.checkpoint_bytes(tiny)
    with pytest.raises(M.CheckpointError, match="bad magic"):
        M.parse_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(M.CheckpointError, match="version"):
        M.parse_checkpoint(data[:4] + struct.pack("<I", 9) + data[8:])
    with pytest.raises(M.CheckpointError, match="truncated|overflow"):
        M.parse_checkpoint(data[:-10])
    with pytest.raises(M.CheckpointError, match="trailing"):
        M.parse_checkpoint(data + b"\0")


def test_checkpoint_dimension_overflow():
    cfg = M.tiny_preset().to_text().encode()
    rec = struct.pack("<H", 1) + b"w" + struct.pack("<BB", 64, 2) + struct.pack("<2I", 2 ** 31, 2 ** 31)
    data = M.MAGIC + struct.pack("<II", 1, len(cfg)) + cfg + struct.pack("<I", 1) + rec
    with pytest.raises(M.CheckpointError, match="overflow"):
        M.parse_checkpoint(data)


def test_state_dict_mismatch_rejected(tiny):
    sd = dict(tiny.state_dict())
    sd.pop("gabor.weight")
    with pytest.raises(ValueError, match="missing"):
        M.build(tiny.config).load_state_dict(sd)


def test_parameter_count_positive(tiny):
    n = tiny.num_parameters()
    assert n == sum(2 * p.value.size for p in tiny.parameters() if not p.real_only) + \
        sum(p.value.size for p in tiny.parameters() if p.real_only)
