"""The evaluation metrics, exercised on signals with known answers.

Run:  python demos/07_metrics_tour.py
"""

import numpy as np

from tsekit.train_eval import failure_rate, sdr, si_sdr, si_sdri

rng = np.random.default_rng(0)
ref = rng.standard_normal(8000)
other = rng.standard_normal(8000)
mixture = ref + other

print("scale-invariant SDR (clamped to +-60 dB for reporting):")
print(f"  si_sdr(ref, ref)        = {si_sdr(ref, ref):6.1f} dB   (perfect -> clamp)")
print(f"  si_sdr(ref, 3.7*ref)    = {si_sdr(ref, 3.7 * ref):6.1f} dB   (scale invariant)")
print(f"  si_sdr(ref, mixture)    = {si_sdr(ref, mixture):6.2f} dB   (two equal-power talkers)")
print(f"  si_sdr([1,0], [1,1])    = {si_sdr([1.0, 0.0], [1.0, 1.0]):6.2f} dB   (hand-checkable)")

print("\nimprovement over the unprocessed mixture:")
print(f"  si_sdri(ref, mixture, mixture) = {si_sdri(ref, mixture, mixture):.2f} dB")
print(f"  si_sdri(ref, ref, mixture)     = {si_sdri(ref, ref, mixture):.2f} dB")

print("\ndistortion-filter SDR vs the scale-only metric on a 5-sample delay:")
delayed = np.zeros_like(ref)
delayed[5:] = ref[:-5]
print(f"  sdr(ref, delayed)    = {sdr(ref, delayed):6.1f} dB   (512-tap filter absorbs the shift)")
print(f"  si_sdr(ref, delayed) = {si_sdr(ref, delayed):6.2f} dB   (no filter: the shift is distortion)")
print(f"  sdr snr fallback      = {sdr(ref, delayed, n_filter_taps=None):6.2f} dB")

print("\nfailure rate (share of samples improving by less than 1 dB):")
scores = [0.5, 2.0, 0.9, 3.0, 1.5]
print(f"  failure_rate({scores}) = {failure_rate(scores):.1f}%")
print(f"  failure_rate(all good)              = {failure_rate([1.2, 5.0, 9.9]):.1f}%")
