import json

import numpy as np
import pytest

from qmpc import oracle
from qmpc.fxp import HIGH, LOW
from qmpc.graph import PrecisionMap, execute
from qmpc.model import (
    MASK_VALUE,
    BlockConfig,
    build_attention,
    build_block,
    build_ffn,
    causal_mask,
    load_weights,
    random_weights,
    run,
    save_weights,
    weight_shapes,
    zero_weights,
)

SMALL = BlockConfig(d_model=8, n_heads=2, d_ff=16, seq_len=4)


def float_block(cfg, w, x):
    """Float64 post-LN block with the same GeLU and exp approximations as the graph."""
    s, h, dh = cfg.seq_len, cfg.n_heads, cfg.d_head

    def heads(z):
        return z.reshape(s, h, dh).transpose(1, 0, 2)

    q, k, v = (heads(x @ w[f"w{n}"] + w[f"b{n}"]) for n in "qkv")
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
    if cfg.mask_mode == "causal":
        scores = scores + causal_mask(s)
    e = oracle.exp_approx(scores - scores.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    ctx = (probs @ v).transpose(1, 0, 2).reshape(s, cfg.d_model)
    r1 = x + ctx @ w["wo"] + w["bo"]
    h1 = oracle.float_ref("layernorm", [r1, w["ln1_g"], w["ln1_b"]])
    hid = h1 @ w["w0"] + w["b0"]
    act = oracle.float_ref(f"gelu_{cfg.gelu_mode}", hid)
    r2 = h1 + act @ w["w1"] + w["b1"]
    return oracle.float_ref("layernorm", [r2, w["ln2_g"], w["ln2_b"]])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            BlockConfig(d_model=10, n_heads=3)
        with pytest.raises(ValueError):
            BlockConfig(seq_len=0)
        with pytest.raises(ValueError):
            BlockConfig(gelu_mode="relu")
        with pytest.raises(ValueError):
            BlockConfig(mask_mode="banded")

    def test_load(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(SMALL.to_dict()))
        assert BlockConfig.load(path) == SMALL
        assert SMALL.d_head == 4


class TestWeights:
    def test_shapes(self):
        w = random_weights(SMALL, 0)
        assert {k: v.shape for k, v in w.items()} == weight_shapes(SMALL)
        assert np.all(zero_weights(SMALL)["ln1_g"] == 1)

    def test_roundtrip(self, tmp_path):
        w = random_weights(SMALL, 1)
        blob = save_weights(w, tmp_path / "w.json")
        assert blob.exists() and blob.suffix == ".bin"
        back = load_weights(tmp_path / "w.json")
        assert set(back) == set(w)
        for k in w:
            np.testing.assert_allclose(back[k], w[k], rtol=1e-6)

    def test_truncated_blob(self, tmp_path):
        save_weights(random_weights(SMALL, 1), tmp_path / "w.json")
        blob = tmp_path / "w.bin"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(ValueError):
            load_weights(tmp_path / "w.json")

    def test_bad_format(self, tmp_path):
        (tmp_path / "w.json").write_text(json.dumps({"format": "float16", "blob": "w.bin", "tensors": []}))
        with pytest.raises(ValueError):
            load_weights(tmp_path / "w.json")


class TestGraphs:
    def test_causal_mask(self):
        m = causal_mask(3)
        assert m[0, 1] == MASK_VALUE and m[1, 0] == 0 and m[2, 2] == 0

    def test_quantized_block_casts(self):
        g = build_block(SMALL)
        assert g.count("softmax") == 1 and g.count("layernorm") == 2
        # only the output crosses a cast: composites cast internally, gelu_quad is linear
        assert g.count("downcast") == 0 and g.count("upcast") == 0
        assert g.node(g.outputs[0]).output_type == LOW

    def test_poly_gelu_adds_casts(self):
        g = build_block(BlockConfig(**{**SMALL.to_dict(), "gelu_mode": "poly"}))
        assert g.count("upcast") == 1 and g.count("downcast") == 1

    def test_uniform_block_types(self):
        g = build_block(SMALL, PrecisionMap.uniform(HIGH))
        assert {n.output_type for n in g.nodes} == {HIGH}

    @pytest.mark.parametrize("gelu,mask", [("quad", "none"), ("poly", "causal")])
    def test_block_tracks_float(self, gelu, mask):
        cfg = BlockConfig(**{**SMALL.to_dict(), "gelu_mode": gelu, "mask_mode": mask})
        w = random_weights(cfg, 2)
        x = np.random.default_rng(3).uniform(-2, 2, (cfg.seq_len, cfg.d_model))
        out = run(build_block(cfg), x, w, seed=4).outputs["y"]
        assert out.shape == x.shape
        assert np.abs(out - float_block(cfg, w, x)).max() < 0.1

    def test_secure_matches_oracle(self):
        w = random_weights(SMALL, 5)
        x = np.random.default_rng(6).uniform(-2, 2, (SMALL.seq_len, SMALL.d_model))
        g = build_block(SMALL)
        sec = run(g, x, w, seed=7).outputs["y"]
        ref = execute(g, {"x": x}, backend="plaintext", params=w).outputs["y"]
        assert np.abs(sec - ref).max() <= 2 ** -5

    def test_sub_blocks(self):
        w = random_weights(SMALL, 8)
        x = np.random.default_rng(9).uniform(-1, 1, (SMALL.seq_len, SMALL.d_model))
        attn = run(build_attention(SMALL), x, w, backend="plaintext").outputs["y"]
        ffn = run(build_ffn(SMALL), x, w, backend="plaintext").outputs["y"]
        assert attn.shape == ffn.shape == x.shape
        want = oracle.float_ref("gelu_quad", x @ w["w0"] + w["b0"]) @ w["w1"] + w["b1"]
        assert np.abs(ffn - want).max() < 0.05
