"""
From waveform to model input
============================

Walks one synthetic utterance through the audio pipeline, then shows how
simulated recognition errors change a transcript.
"""

# %%
# A 440 Hz tone with a click in the middle. The zero-phase band-pass keeps
# the click centred: forward then backward filtering cancels the delay.
import numpy as np

from drsc.dataio import AudioClip, CorruptionSpec, mel_spectrogram, zero_phase_filter
from drsc.dataio.text import corrupt_transcription, word_error_rate

sr = 16000
t = np.arange(sr) / sr
x = 0.3 * np.sin(2 * np.pi * 440 * t)
x[sr // 2] += 1.0
y = zero_phase_filter(AudioClip(x, sr)).samples
print("click stays at sample", int(np.argmax(np.abs(y - 0.3 * np.sin(2 * np.pi * 440 * t)))))

# %%
# Log-Mel features: 256 bins, hop 256, so one second gives 63 frames.
mel = mel_spectrogram(AudioClip(y, sr))
print("mel shape", mel.shape, "loudest bin", int(mel[:, 5].argmax()))

# %%
# Transcript corruption at a target word error rate of 26%.
vocab = "my knee hurts when i walk up the stairs feel dizzy and cold".split()
spec = CorruptionSpec(0.26, 0.6, 0.2, 0.2, seed=0)
refs = ["my knee hurts when i walk up the stairs"] * 200
hyps = [corrupt_transcription(r, spec, vocab, key=str(i)) for i, r in enumerate(refs)]
print(hyps[0])
print("measured WER", round(word_error_rate(refs, hyps), 3))
