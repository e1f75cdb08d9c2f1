"""
Key poses and occlusion labelling on synthetic walkers
======================================================

Builds a key-pose set from a handful of synthetic subjects, then labels a
sequence in which some frames have been blanked out. The labeller follows
the cyclic pose chain and switches to the extra occlusion state wherever
a frame is too far from every key pose.

    python3 demos/01_keyposes_and_labelling.py --out demo_out
"""
import argparse
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gaitrecon.config import toy_config
from gaitrecon.occlusion import occlude_sequence
from gaitrecon.pipeline import fit_keyposes
from gaitrecon.pose_graph import detect_occlusion_runs, label_sequence
from gaitrecon.silhouette import synthetic_corpus

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo_out")
parser.add_argument("--subjects", type=int, default=6)
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

# %%
# Six subjects, three walks each. Every subject has its own limb swing,
# torso size and starting phase.
corpus = synthetic_corpus(args.subjects, 3, 100, seed=1, noise_rate=0.01)
train, probe = corpus[:-1], corpus[-1]
print(f"{len(train)} training sequences of {len(train[0])} frames, frame shape {train[0].frames[0].pixels.shape}")

# %%
# PCA followed by K-means in the projected space. The clusters are kept in
# phase order, so cluster k is the k-th pose of the walking cycle.
cfg = toy_config(seed=0)
kp = fit_keyposes(train, cfg)
print(f"K={kp.k} key poses in a {kp.subspace.basis.shape[0]}-d subspace, tau={kp.occlusion_threshold:.3f}")
print("phase of each key pose:", np.round(kp.phase_means, 2))

templates = kp.decoded_images()
fig, axes = plt.subplots(2, kp.k // 2, figsize=(kp.k, 4))
for ax, img, k in zip(axes.flat, templates, range(1, kp.k + 1)):
    ax.imshow(img, cmap="gray", vmin=0, vmax=1)
    ax.set_title(str(k))
    ax.axis("off")
fig.savefig(out / "keyposes.png", dpi=80)

# %%
# Blank 30% of the held-out walk and label every frame. Blank frames are
# far from every template, so they cost more than tau and fall into the
# occlusion state K+1. Real frames whose stance is poorly covered by the
# templates can exceed tau as well; the reconstruction stage simply
# rebuilds those too.
occluded = occlude_sequence(probe, 0.3, seed=4)
pa = label_sequence(occluded, kp)
truth = occluded.placeholder_mask
print("states:", " ".join(map(str, pa.states[:30])), "...")
print(f"blanked {truth.sum()} frames, labelled {pa.occluded.sum()} as occluded, "
      f"{np.sum(truth & pa.occluded)} of the blanked ones caught")
print("occluded runs (start, length):", detect_occlusion_runs(pa)[:8])

fig, ax = plt.subplots(figsize=(10, 3))
ax.step(np.arange(len(pa)), pa.states, where="mid", label="assigned state")
ax.scatter(np.flatnonzero(truth), np.full(truth.sum(), kp.k + 1.4), marker="v", s=12, color="r",
           label="blanked frame")
ax.set_xlabel("frame")
ax.set_ylabel("state")
ax.legend(loc="lower right")
fig.tight_layout()
fig.savefig(out / "labels.png", dpi=80)
print(f"figures written to {out}")
