"""Moving secret-shared values between FXP_32^8 and FXP_64^18.

Run: python3 demos/casts.py
"""
import numpy as np

from qmpc import oracle
from qmpc.fxp import HIGH, LOW, decode, encode
from qmpc.rss import Runtime
from qmpc.typecast import downcast, upcast, upcast_bits_per_element

rng = np.random.default_rng(0)
vals = rng.uniform(-100, 100, 1024)

# Upcast is interactive but exact.
rt = Runtime(seed=1)
x = encode(vals, LOW)
up = rt.reconstruct(rt.run(lambda p, s: upcast(p, s, HIGH), rt.share(x, LOW)))
print(f"upcast {LOW} -> {HIGH}: exact={up == oracle.upcast(x, LOW, HIGH)}, "
      f"rounds={rt.stats.rounds}, bits/element={rt.stats.total_bytes * 8 / vals.size:g} "
      f"(schedule {upcast_bits_per_element(LOW, HIGH)})")

# Downcast is a local shift of every share.  Each share pair can carry into the
# kept bits, so the result sits 0, 1 or 2 ulps below the exact shift.
rt = Runtime(seed=2)
h = encode(vals, HIGH)
down = rt.reconstruct(rt.run(lambda p, s: downcast(s, LOW), rt.share(h, HIGH)))
with oracle.rounding("floor"):
    carry = -oracle.ulp_diff(down, oracle.downcast(h, HIGH, LOW))
print(f"downcast {HIGH} -> {LOW}: bytes={rt.stats.total_bytes}, "
      f"carry histogram {np.bincount(carry, minlength=3).tolist()} over ulps 0/1/2")
print(f"max |downcast - value| = {np.abs(decode(down, LOW) - vals).max() / LOW.ulp:.2f} ulp")
