"""Compile the five-op softmax DAG, inspect the inserted casts and run it.

Run: python3 demos/softmax_graph.py
"""
import numpy as np

from qmpc import oracle
from qmpc.graph import PrecisionMap, compile_graph, dump, execute, softmax_dag

typed = compile_graph(softmax_dag(), PrecisionMap())
print(dump(typed))

x = np.random.default_rng(0).normal(size=(8, 10))
secure = execute(typed, {"x": x}, seed=0)
plain = execute(typed, {"x": x}, backend="plaintext")
exact = oracle.float_ref("softmax", x)

print("secure vs fixed-point oracle:", oracle.metrics(secure.outputs["y"], plain.outputs["y"]))
print("secure vs float softmax:     ", oracle.metrics(secure.outputs["y"], exact))
print(f"traffic: {secure.stats.total_bytes} bytes in {secure.stats.rounds} rounds")
for name in ("m", "d.upcast64", "e", "y", "y.downcast32"):
    print(f"  {name:<14}{secure.stats.phase_total(name):>8} bytes")
