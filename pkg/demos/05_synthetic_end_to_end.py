"""Train the hybrid conv/ConvLSTM stack end to end on synthetic data.

A scaled-down version of the full benchmark: a small corpus, the hybrid
architecture at quarter width, a few epochs. Takes a few minutes on a
laptop CPU. The constant-mean predictor scores R^2 ~ 0 on a large split;
anything clearly above it means the network is reading the latent
articulator state out of the frames. (Going much below quarter width makes
the 0.35 dropout noise drown the gradient signal and training stalls.)
"""

import time

import numpy as np

from sonovox import Model, SynthConfig, TrainConfig, build_architecture, gen_synthetic
from sonovox.data import build_dataset, split_by_utterance
from sonovox.metrics import per_target_r2
from sonovox.train import evaluate, fit

t0 = time.time()
cfg = SynthConfig(n_utterances=10, frames_per_utterance=80, noise_level=0.05, seed=5)
utterances, targets = gen_synthetic(cfg)
ds = build_dataset(utterances, targets, split_by_utterance(10, seed=5))
print(f"dataset ready in {time.time() - t0:.0f}s; "
      f"train/dev/test windows: {ds.size('train')}/{ds.size('dev')}/{ds.size('test')}")

spec = build_architecture("cnn3d_convlstm", width_scale=4)
model = Model.build(spec, seed=0)
print(f"model: {spec.name} at quarter width, {model.param_count():,} parameters")

_, y_dev = ds.materialize("dev")
baseline = per_target_r2(np.zeros_like(y_dev, dtype=np.float64),
                         y_dev.astype(np.float64)).mean()
print(f"constant-mean baseline dev R2: {baseline:+.3f}")

config = TrainConfig(optimizer="adam", learning_rate=1e-3, batch_size=16,
                     max_epochs=6, early_stop_patience=6, seed=0)
t0 = time.time()
result = fit(model, ds, config)
print(f"\ntrained {len(result.history)} epochs in {time.time() - t0:.0f}s")
print("epoch  train_mse  dev_mse  dev_mean_r2")
for h in result.history:
    print(f"{h.epoch:>5}  {h.train_mse:9.4f}  {h.dev_mse:7.4f}  {h.dev_mean_r2:11.4f}")

test = evaluate(model, ds, "test")
print(f"\ntest: mse {test.mse:.4f}, mean R2 {test.mean_r2:.4f} "
      f"(vs baseline {baseline:+.3f})")
