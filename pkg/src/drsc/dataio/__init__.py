from drsc.dataio.audio import (AudioClip, STFTSpec, design_bandpass, frame_count, load_audio,
                               mel_filterbank, mel_spectrogram, zero_phase_filter)
from drsc.dataio.cache import FeatureCache, read_arrays, write_arrays
from drsc.dataio.features import FeatureSet, load_features, prepare, synthetic_feature_sets
from drsc.dataio.manifest import SYMPTOMS, Manifest, ManifestEntry, build_manifest
from drsc.dataio.synthetic import SyntheticDataset, make_synthetic_dataset
from drsc.dataio.text import (CorruptionSpec, TextFeature, Vocab, corrupt_transcription,
                              tokenize, word_error_rate)

__all__ = [
    "AudioClip", "STFTSpec", "design_bandpass", "frame_count", "load_audio", "mel_filterbank",
    "mel_spectrogram", "zero_phase_filter", "FeatureCache", "read_arrays", "write_arrays",
    "FeatureSet", "load_features", "prepare", "synthetic_feature_sets", "SYMPTOMS", "Manifest",
    "ManifestEntry", "build_manifest", "SyntheticDataset", "make_synthetic_dataset",
    "CorruptionSpec", "TextFeature", "Vocab", "corrupt_transcription", "tokenize",
    "word_error_rate",
]
