"""How much does each control-variate subset shrink E|g|^2 at one parameter value?

We warm up a few low-noise SGD steps on the australian-like data, freeze the
parameters, and probe every subset with weights learned from M pairs.

    python3 demos/variance_at_fixed_w.py [M]
"""

import sys

from cvvi import SUBSETS, resolve_dataset, variance_probe
from cvvi.engine import warmup_path

M = int(sys.argv[1]) if len(sys.argv) > 1 else 100

ds = resolve_dataset("synthetic:australian_like")
w = warmup_path(ds)[-1]
print(f"N={ds.N}, D={ds.D}, probe point after 25 warm-up steps, M={M}")

base = None
for name in SUBSETS:
    res = variance_probe(w, ds, name, M=M, v0=1e-3, n_outer=50, n_rep=20)
    base = res.mean if base is None else base
    print(f"{name:>5}  E|g|^2 = {res.mean:8.4f} +- {res.stderr:.4f}   ratio to none {res.mean / base:.3f}")
