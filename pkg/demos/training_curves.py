"""Final ELBO after 500 SGD steps with and without control variates.

A few seeds per subset on the bundled 2-D blobs. The larger learning rate
is where the combined estimator pays off most.

    python3 demos/training_curves.py
"""

import numpy as np

from cvvi import RunConfig, resolve_dataset, run_inference

ds = resolve_dataset("synthetic:blobs2d")
seeds = range(5)

for lr in (0.1, 0.4):
    print(f"lr = {lr}")
    for cvs in ("none", "S4", "S7", "c7"):
        finals = [run_inference(RunConfig(lr=lr, cvs=cvs, seed=s), ds).final_elbo for s in seeds]
        print(f"  {cvs:>5}: {np.mean(finals):9.3f}  (spread {np.std(finals):.3f})")
