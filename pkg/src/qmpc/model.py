"""A desk-scale Transformer block expressed as a graph.

The block is post-LN::

    h = LayerNorm(x + Attention(x))
    y = LayerNorm(h + Linear(GeLU(Linear(h, w0, b0)), w1, b1))

with ``Attention(x) = Softmax(Q K^T / sqrt(d_head) + M) V`` per head, followed
by the output projection.  Weights are graph constants bound by name, so one
compiled graph serves any weight set.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, NodeSpec, PrecisionMap, Result, compile_graph, execute

MASK_VALUE = -32.0
GELU_MODES = ("quad", "poly")
MASK_MODES = ("none", "causal")


@dataclass(frozen=True)
class BlockConfig:
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 256
    seq_len: int = 16
    gelu_mode: str = "quad"
    mask_mode: str = "none"

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_ff", "seq_len"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.gelu_mode not in GELU_MODES:
            raise ValueError(f"gelu_mode must be one of {GELU_MODES}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def load(cls, path) -> "BlockConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def weight_shapes(cfg: BlockConfig) -> dict:
    d, f = cfg.d_model, cfg.d_ff
    return {
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,), "wv": (d, d), "bv": (d,),
        "wo": (d, d), "bo": (d,), "ln1_g": (d,), "ln1_b": (d,),
        "w0": (d, f), "b0": (f,), "w1": (f, d), "b1": (d,), "ln2_g": (d,), "ln2_b": (d,),
    }


def random_weights(cfg: BlockConfig, seed: int = 0) -> dict:
    """Gaussian weights with variance ``1/fan_in``, small biases, unit LayerNorm gain."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith("_g"):
            out[name] = 1.0 + 0.1 * rng.standard_normal(shape)
        elif len(shape) == 2:
            out[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
        else:
            out[name] = 0.1 * rng.standard_normal(shape)
    return out


def zero_weights(cfg: BlockConfig) -> dict:
    out = {name: np.zeros(shape) for name, shape in weight_shapes(cfg).items()}
    for name in ("ln1_g", "ln2_g"):
        out[name] = np.ones(out[name].shape)
    return out


def save_weights(weights: dict, manifest_path) -> Path:
    """Write a JSON manifest plus a raw little-endian float32 blob next to it."""
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    entries, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name in sorted(weights):
            arr = np.asarray(weights[name], dtype="<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    manifest = {"format": "float32-le", "blob": blob_path.name, "tensors": entries}
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return blob_path


def load_weights(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "float32-le":
        raise ValueError(f"unsupported weight format {manifest.get('format')!r}")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    out = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 4 * count
        if end > len(blob):
            raise ValueError(f"tensor {e['name']!r} runs past the end of the blob")
        out[e["name"]] = np.frombuffer(blob[e["offset"]:end], dtype="<f4").reshape(e["shape"]).astype(np.float64)
    return out


def causal_mask(seq_len: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, ``MASK_VALUE`` above."""
    return np.triu(np.full((seq_len, seq_len), MASK_VALUE), k=1)


class _Builder:
    def __init__(self):
        self.nodes = []

    def add(self, nid, op, inputs=(), **attrs) -> str:
        self.nodes.append(NodeSpec(nid, op, tuple(inputs), attrs))
        return nid

    def param(self, name) -> str:
        return self.add(name, "const", param=name)

    def linear(self, x, w, b, nid) -> str:
        y = self.add(f"{nid}_mm", "matmul", (x, self.param(w)))
        return self.add(nid, "add", (y, self.param(b)))


def _attention(bld: _Builder, cfg: BlockConfig, x: str) -> str:
    s, h, dh = cfg.seq_len, cfg.n_heads, cfg.d_head
    heads = {}
    for name in "qkv":
        proj = bld.linear(x, f"w{name}", f"b{name}", name)
        split = bld.add(f"{name}_split", "reshape", (proj,), shape=[s, h, dh])
        heads[name] = bld.add(f"{name}_heads", "transpose", (split,), axes=[1, 0, 2])
    kt = bld.add("k_t", "transpose", (heads["k"],), axes=[0, 2, 1])
    scores = bld.add("scores", "matmul", (heads["q"], kt))
    scores = bld.add("scores_scaled", "scale", (scores,), value=1.0 / np.sqrt(dh))
    if cfg.mask_mode == "causal":
        mask = bld.add("mask", "const", value=causal_mask(s).tolist())
        scores = bld.add("scores_masked", "add", (scores, mask))
    probs = bld.add("probs", "softmax", (scores,))
    ctx = bld.add("ctx", "matmul", (probs, heads["v"]))
    ctx = bld.add("ctx_t", "transpose", (ctx,), axes=[1, 0, 2])
    ctx = bld.add("ctx_merged", "reshape", (ctx,), shape=[s, cfg.d_model])
    return bld.linear(ctx, "wo", "bo", "attn")


def _ffn(bld: _Builder, cfg: BlockConfig, x: str) -> str:
    hid = bld.linear(x, "w0", "b0", "ffn_in")
    act = bld.add("gelu", f"gelu_{cfg.gelu_mode}", (hid,))
    return bld.linear(act, "w1", "b1", "ffn_out")


def build_attention(cfg: BlockConfig, pmap: PrecisionMap | None = None) -> Graph:
    bld = _Builder()
    x = bld.add("x", "input")
    out = _attention(bld, cfg, x)
    return compile_graph(Graph(bld.nodes, [out], ["y"]), pmap)


def build_ffn(cfg: BlockConfig, pmap: PrecisionMap | None = None) -> Graph:
    bld = _Builder()
    x = bld.add("x", "input")
    out = _ffn(bld, cfg, x)
    return compile_graph(Graph(bld.nodes, [out], ["y"]), pmap)


def build_block(cfg: BlockConfig, pmap: PrecisionMap | None = None) -> Graph:
    bld = _Builder()
    x = bld.add("x", "input")
    attn = _attention(bld, cfg, x)
    r1 = bld.add("res1", "add", (x, attn))
    h1 = bld.add("ln1", "layernorm", (r1, bld.param("ln1_g"), bld.param("ln1_b")))
    ffn = _ffn(bld, cfg, h1)
    r2 = bld.add("res2", "add", (h1, ffn))
    out = bld.add("ln2", "layernorm", (r2, bld.param("ln2_g"), bld.param("ln2_b")))
    return compile_graph(Graph(bld.nodes, [out], ["y"]), pmap)


def run(graph: Graph, x: np.ndarray, weights: dict, backend: str = "secure", seed: int = 0) -> Result:
    return execute(graph, {"x": x}, backend=backend, params=weights, seed=seed)
