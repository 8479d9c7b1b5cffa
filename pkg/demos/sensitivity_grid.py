"""E|g|^2 over prior strength v0 and sample count M, fresh vs stale moments.

Small M benefits from some regularization; weights learned from moments ten
steps old do worse than fresh ones.

    python3 demos/sensitivity_grid.py
"""

from cvvi import resolve_dataset, sensitivity_sweep

ds = resolve_dataset("synthetic:blobs2d")
v0s = [0.0, 1e-4, 1e-2, 1.0]
Ms = [10, 50, 200]
rows, _ = sensitivity_sweep(ds, "S7", v0s, Ms, lags=[0, 10], n_rep=50)
cell = {(r.v0, r.M, r.lag): r.grad_sq_norm_mean for r in rows}

for lag in (0, 10):
    print(f"lag {lag}" + "".join(f"   v0={v:<7g}" for v in v0s))
    for M in Ms:
        print(f"M={M:<4}" + "".join(f"  {cell[(v, M, lag)]:10.5f}" for v in v0s))
    print()
