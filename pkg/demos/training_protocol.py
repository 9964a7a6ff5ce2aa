r"""
Training protocol and frozen-branch fusion
==========================================

A linear regressor trained with MAE loss and momentum SGD, one random frame
per clip per epoch, validated every few epochs with the best snapshot kept.
The fusion model then learns to ignore a branch that only carries noise.
"""

import numpy as np

from regionablate import synthetic, trainkit
from regionablate.trainkit import FusionModel, Regressor, TrainConfig

rng = np.random.default_rng(0)
weights = rng.normal(0, 0.1, size=(4, 5))
bias = np.full(5, 0.4)
train_clips = synthetic.linear_clips(64, weights, bias, frames=3, rng=1, prefix="t")
val_clips = synthetic.linear_clips(16, weights, bias, frames=3, rng=2, prefix="v")

config = TrainConfig(epochs=1000, lr=0.002, validate_every=100, batch_size=64)
best, history = trainkit.train(Regressor(np.zeros((4, 5)), np.full(5, 0.5)), train_clips, val_clips, config)
for ck in history:
    print(f"epoch {ck.epoch:>4}  train MAE {ck.train_loss:.5f}  val MAE {ck.val_loss:.5f}")
print(f"best snapshot: epoch {best.epoch}")

# Face branch: exact on every frame. Background branch: unrelated to the labels.
fx = synthetic.signal_noise_fixture()
face = np.vstack([c.face for c in fx.val])
bg = np.vstack([c.background for c in fx.val])
start = FusionModel.initialize(fx.face_branch, fx.bg_branch)
print(f"background share before fusion training: {start.bg_share(face, bg):.3f}")

before = fx.bg_branch.digest()
fused, _ = trainkit.train_fusion(fx.face_branch, fx.bg_branch, fx.train, fx.val, TrainConfig(lr=0.01))
print(f"background share after fusion training:  {fused.bg_share(face, bg):.3f}")
print("background branch unchanged:", fused.bg_branch.digest() == before)
