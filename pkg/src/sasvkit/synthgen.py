"""Deterministic synthetic corpora of layered features plus trial lists.

Each corpus is built from a handful of seeded ingredients:

* a corpus-wide base pattern (L x T x D), shared by every utterance;
* one fixed unit direction per speaker, added at every layer and frame;
* one fixed unit artifact direction, added only at ``artifact_layer`` and
  only for spoofed utterances. Spoofs keep their target speaker's
  direction, mimicking a cloned voice: the verification cue survives while
  the artifact betrays the generation process, and it does so in exactly
  one layer so a back-end that learns layer weights has a ground truth to
  find;
* i.i.d. Gaussian noise per utterance, drawn from a per-utterance stream
  derived from (seed, utterance index), so generation order never matters.

The held-out tail of each speaker's utterances feeds an
enrollment/verification trial list covering target, nontarget and spoof
classes. Everything is reproducible bit-for-bit from the seed.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import derived_rng
from .protocol_io import (ManifestEntry, Trial, TrialSet, write_features,
                          write_manifest, write_trials)

__all__ = ["SynthConfig", "SynthResult", "synth_corpus"]

# sub-stream tags for the corpus-level generator
_STREAM_CORPUS = 0
_STREAM_NOISE = 1
_STREAM_TRIALS = 2


@dataclass
class SynthConfig:
    num_speakers: int = 20
    utts_per_speaker: int = 100
    spoof_fraction: float = 0.3
    num_layers: int = 6
    num_frames: int = 20
    feature_dim: int = 16
    speaker_scale: float = 1.0
    spoof_artifact_scale: float = 1.3
    noise_scale: float = 1.0
    artifact_layer: int = 3
    seed: int = 1234
    heldout_per_speaker: int = 30  # tail utterances reserved for trials
    nontarget_per_speaker: int = 20

    def validate(self):
        if self.num_speakers < 1 or self.utts_per_speaker < 1:
            raise ValueError("counts must be >= 1")
        if not (0.0 <= self.spoof_fraction <= 1.0):
            raise ValueError("spoof_fraction must be in [0, 1]")
        if min(self.num_layers, self.num_frames, self.feature_dim) < 1:
            raise ValueError("dimensions must be >= 1")
        if not (0 <= self.artifact_layer < self.num_layers):
            raise ValueError(
                f"artifact_layer {self.artifact_layer} out of range for "
                f"{self.num_layers} layers"
            )
        for name in ("speaker_scale", "spoof_artifact_scale", "noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0 <= self.heldout_per_speaker < self.utts_per_speaker):
            raise ValueError("heldout_per_speaker must leave training utterances")


@dataclass
class SynthResult:
    manifest_path: str
    trials_path: str
    entries: list
    trials: TrialSet
    num_spoof: int


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def spoof_count(cfg):
    """Total spoofed utterances: spoof_fraction rounded half-up."""
    total = cfg.num_speakers * cfg.utts_per_speaker
    return int(math.floor(cfg.spoof_fraction * total + 0.5))


def synth_corpus(cfg, out_dir):
    """Generate features, manifest and trial list under ``out_dir``."""
    cfg.validate()
    os.makedirs(os.path.join(out_dir, "feats"), exist_ok=True)

    L, T, D = cfg.num_layers, cfg.num_frames, cfg.feature_dim
    total = cfg.num_speakers * cfg.utts_per_speaker

    corpus_rng = derived_rng(cfg.seed, _STREAM_CORPUS)
    base = corpus_rng.standard_normal((L, T, D))
    speaker_dirs = np.stack([_unit(corpus_rng.standard_normal(D))
                             for _ in range(cfg.num_speakers)])
    artifact_dir = _unit(corpus_rng.standard_normal(D))
    n_spoof = spoof_count(cfg)
    spoof_flags = np.zeros(total, dtype=bool)
    spoof_flags[corpus_rng.permutation(total)[:n_spoof]] = True

    entries = []
    utt_index = 0
    for s in range(cfg.num_speakers):
        speaker_id = f"spk{s:03d}"
        for u in range(cfg.utts_per_speaker):
            utt_id = f"{speaker_id}_utt{u:03d}"
            is_spoof = bool(spoof_flags[utt_index])
            x = base + cfg.speaker_scale * speaker_dirs[s]
            if is_spoof and cfg.spoof_artifact_scale > 0:
                x = x.copy()
                x[cfg.artifact_layer] += cfg.spoof_artifact_scale * artifact_dir
            noise_rng = derived_rng(cfg.seed, _STREAM_NOISE, utt_index)
            x = x + cfg.noise_scale * noise_rng.standard_normal((L, T, D))
            rel = os.path.join("feats", f"{utt_id}.lft")
            write_features(os.path.join(out_dir, rel), x)
            entries.append(ManifestEntry(utt_id, speaker_id, is_spoof,
                                         os.path.join(out_dir, rel)))
            utt_index += 1

    trials = _build_trials(cfg, entries)

    manifest_path = os.path.join(out_dir, "manifest.txt")
    trials_path = os.path.join(out_dir, "trials.txt")
    write_manifest(manifest_path, entries)
    write_trials(trials_path, trials)
    return SynthResult(manifest_path=manifest_path, trials_path=trials_path,
                       entries=entries, trials=trials, num_spoof=n_spoof)


def _build_trials(cfg, entries):
    """Enrollment/verification trials over each speaker's held-out tail.

    The first held-out bonafide utterance of a speaker enrolls them;
    remaining held-out bonafide utterances give target trials, other
    speakers' held-out bonafide utterances give nontarget trials, and the
    speaker's own held-out spoofs give spoof trials.
    """
    by_speaker = {}
    for en in entries:
        by_speaker.setdefault(en.speaker_id, []).append(en)

    trial_rng = derived_rng(cfg.seed, _STREAM_TRIALS)
    speakers = sorted(by_speaker)
    held = {s: by_speaker[s][len(by_speaker[s]) - cfg.heldout_per_speaker:]
            for s in speakers}
    enroll = {}
    for s in speakers:
        bona = [en for en in held[s] if not en.is_spoof]
        if bona:
            enroll[s] = bona[0]

    trials = []
    idx = 0

    def add(enroll_id, test_id, label):
        nonlocal idx
        trials.append(Trial(f"T{idx:06d}", enroll_id, test_id, label))
        idx += 1

    for s in speakers:
        if s not in enroll:
            continue
        e_id = enroll[s].utt_id
        bona = [en for en in held[s] if not en.is_spoof][1:]
        for en in bona:
            add(e_id, en.utt_id, "target")
        for en in held[s]:
            if en.is_spoof:
                add(e_id, en.utt_id, "spoof")
        others = [t for t in speakers if t != s and t in enroll]
        pool = []
        for t in others:
            pool.extend(en for en in held[t] if not en.is_spoof and en is not enroll[t])
        if pool:
            take = min(cfg.nontarget_per_speaker, len(pool))
            chosen = trial_rng.choice(len(pool), size=take, replace=False)
            for i in sorted(chosen):
                add(e_id, pool[i].utt_id, "nontarget")
    return TrialSet(trials)
