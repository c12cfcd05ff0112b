"""
SMOTE, step by step on 2-D points
=================================

Two features keep every synthetic sample visible: each new point must sit
on the straight line between a minority sample and one of its k nearest
same-class neighbors. The script prints the bookkeeping and saves a
before/after scatter plot to demo_output/.
"""

from pathlib import Path

import numpy as np

from demnet import FeatureMatrix, SmoteConfig, smote_balance
from demnet.smote import check_witnesses
from demnet.tensor import RngState

# --- an imbalanced 2-class cloud ---------------------------------------------
rng = RngState(5)
big = rng.uniform_array((200, 2), -1.0, 1.0) + np.array([2.0, 0.0])
small = rng.uniform_array((25, 2), -0.5, 0.5) + np.array([-2.0, 0.0])
x = np.concatenate([big, small]).astype(np.float32)
y = np.array([0] * 200 + [1] * 25, dtype=np.int64)
matrix = FeatureMatrix(x, y)
print(f"before: class 0 has {200}, class 1 has {25}")

# --- balance -------------------------------------------------------------------
result = smote_balance(matrix, SmoteConfig(k=5, seed=42))
print(f"after:  {result.counts_after}, total {len(result.y)}")
print(f"originals kept verbatim: "
      f"{np.array_equal(result.x[:len(x)], x)}")

# --- every synthetic point carries a witness ------------------------------------
print("\nfirst three witnesses (base + lam * (neighbor - base)):")
for w in result.witnesses[:3]:
    base, nb = x[w.base], x[w.neighbor]
    synth = base + np.float32(w.lam) * (nb - base)
    print(f"  class {w.class_id}: rows {w.base}->{w.neighbor}, "
          f"lam={w.lam:.4f}, point=({synth[0]:+.3f}, {synth[1]:+.3f})")

worst = check_witnesses(matrix, result, tol=1e-6)
print(f"\nworst witness residual over {len(result.witnesses)} "
      f"synthetic rows: {worst:.2e}")

# --- picture ---------------------------------------------------------------------
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

out_dir = Path(__file__).resolve().parent / "demo_output"
out_dir.mkdir(exist_ok=True)
fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharex=True, sharey=True)
for ax, title, (px, py) in zip(
        axes, ("before", "after"), ((x, y), (result.x, result.y))):
    for c, color in ((0, "tab:blue"), (1, "tab:orange")):
        pts = px[py == c]
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=4, color=color, label=f"class {c}")
    ax.set_title(f"{title}: {np.bincount(py).tolist()}")
    ax.legend(loc="upper center")
path = out_dir / "smote_before_after.png"
fig.savefig(path, dpi=120, bbox_inches="tight")
print(f"\nscatter saved to {path}")
