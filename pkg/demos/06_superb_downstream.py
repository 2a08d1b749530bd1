"""The lightweight BLSTM downstream extractor over layer-weighted features.

A frozen backbone provides features at a 20 ms hop; learnable softmax
weights mix its layers for two consumers (the mask estimator and the
speaker head); the mask scales the mixture's complex STFT and the inverse
transform resynthesizes the waveform at the exact input length.

Run:  python demos/06_superb_downstream.py
"""

import tempfile
from pathlib import Path

import torch

from tsekit.aggregation import export_weights
from tsekit.build import build_model
from tsekit.config import from_preset
from tsekit.datasim import simulate
from tsekit.toydata import make_corpus
from tsekit.train_eval import TrainConfig, Trainer, load_training_set

work = Path(tempfile.mkdtemp(prefix="tsekit_demo6_"))
corpus = make_corpus(work / "corpus", n_speakers=3, utts_per_speaker=3, duration=1.0, seed=0)
manifest = simulate(corpus, work / "data", n_mixtures=4, seed=7, split="train")
train_set = load_training_set(manifest, work / "data")

cfg = from_preset("tiny", "superb")
model = build_model(cfg)

# the backbone is frozen by construction in this setup
frozen = all(not p.requires_grad for p in model.backbone.parameters())
print(f"backbone parameters trainable: {not frozen}")

# mask geometry: SSL frames vs STFT frames differ by the valid-conv edge,
# resolved by cropping to the shorter stream and edge-extending the mask
mixture = torch.from_numpy(train_set[0].mixture).unsqueeze(0)
taps = model.backbone.forward_features(mixture)
spec = model.frontend.stft(mixture)
print(f"SSL frames {taps.trf[0].frames} vs STFT frames {spec.frames} (hop {model.cfg.hop})")

trainer = Trainer(
    model,
    train_set,
    None,
    TrainConfig(max_epochs=500, max_steps=200, batch_size=4, seed=0, stop_train_sisdri=4.0),
    work / "run",
)
result = trainer.run()
print(f"\ntrained {result.steps} steps -> train SI-SDRi {result.final_train_si_sdri:.2f} dB")

print("\nlayer weights after training (tap 0 = conv-encoder output):")
print(" ", export_weights(model.extractor_weights, "extractor"))
print(" ", export_weights(model.spk_weights, "spk_enc"))

est = model(mixture, torch.from_numpy(train_set[0].enrollment).unsqueeze(0))
print(f"\noutput length == input length: {est.shape[-1] == mixture.shape[-1]}")
