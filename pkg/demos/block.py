"""Toy Transformer block: mixed precision against uniform 64-bit.

Prints where the bytes go in each configuration.
Run: python3 demos/block.py
"""
from collections import Counter

import numpy as np

from qmpc.fxp import HIGH
from qmpc.graph import PrecisionMap, execute
from qmpc.model import BlockConfig, build_block, random_weights

cfg = BlockConfig(d_model=64, n_heads=2, d_ff=256, seq_len=16)
weights = random_weights(cfg, 0)
x = np.random.default_rng(1).uniform(-2, 2, (cfg.seq_len, cfg.d_model))

totals = {}
for mode, pmap in (("quantized", PrecisionMap()), ("uniform64", PrecisionMap.uniform(HIGH))):
    g = build_block(cfg, pmap)
    res = execute(g, {"x": x}, params=weights, seed=0)
    ref = execute(g, {"x": x}, backend="plaintext", params=weights)
    totals[mode] = res.stats.total_bytes
    by_node = Counter()
    for phase, nbytes in res.stats.phase_bytes.items():
        by_node[phase.split("/")[0]] += nbytes
    err = np.abs(res.outputs["y"] - ref.outputs["y"]).max()
    print(f"{mode}: {res.stats.total_bytes} bytes, {res.stats.rounds} rounds, max |secure - oracle| = {err:.4f}")
    for node, nbytes in by_node.most_common(6):
        print(f"    {node:<16}{nbytes:>9}")

print(f"quantized / uniform64 = {totals['quantized'] / totals['uniform64']:.3f}")
