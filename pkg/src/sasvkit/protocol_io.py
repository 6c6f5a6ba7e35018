"""Readers and writers for the on-disk exchange formats.

Three formats live here:

* LFT1 layered-feature files: magic ``LFT1\\0\\0\\0\\0`` (8 bytes), then
  L, T, D as little-endian uint32, then L*T*D little-endian IEEE-754
  float32 values ordered layer-major, then frame, then channel. No
  compression. Values are stored in single precision and promoted to
  float64 on load.
* Trial lists: UTF-8 text, one trial per line,
  ``trial_id enroll_id test_id label`` with label in
  {target, nontarget, spoof, unknown}.
* Score files: UTF-8 text, ``trial_id score`` per line. Scores are written
  with shortest round-trip precision (17 significant digits suffice), so a
  write/read pair is an identity.

Parsers are strict: anything violating a type invariant is rejected with
an error message carrying the file path and, for text formats, the line
number.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC_LFT1 = b"LFT1\x00\x00\x00\x00"
TRIAL_LABELS = ("target", "nontarget", "spoof", "unknown")

__all__ = [
    "FormatError",
    "Trial",
    "TrialSet",
    "ScoreSet",
    "ManifestEntry",
    "write_features",
    "read_features",
    "parse_trials",
    "write_trials",
    "read_scores",
    "write_scores",
    "read_manifest",
    "write_manifest",
]


class FormatError(ValueError):
    """A file violated one of the formats above. Message carries location."""


@dataclass
class Trial:
    trial_id: str
    enroll_id: str
    test_id: str
    label: str


@dataclass
class TrialSet:
    trials: list

    def __post_init__(self):
        seen = set()
        for t in self.trials:
            if t.trial_id in seen:
                raise ValueError(f"duplicate trial_id {t.trial_id!r}")
            seen.add(t.trial_id)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)


@dataclass
class ScoreSet:
    """Per-trial real-valued scores keyed by trial id."""

    entries: dict
    system_tag: str = ""

    def __post_init__(self):
        for tid, s in self.entries.items():
            if not np.isfinite(s):
                raise ValueError(f"non-finite score for trial {tid!r}")

    def __len__(self):
        return len(self.entries)


def write_features(path, data):
    """Write an L x T x D float tensor as an LFT1 file.

    Payload is truncated to float32; read_features(write_features(x))
    reproduces x exactly at stored precision.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("layered features must be a 3-d tensor (L, T, D)")
    L, T, D = arr.shape
    if L < 1 or T < 1 or D < 1:
        raise ValueError(f"invalid feature dimensions L={L} T={T} D={D}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("layered features contain non-finite values")
    payload = arr.astype("<f4").tobytes(order="C")
    try:
        with open(path, "wb") as f:
            f.write(MAGIC_LFT1)
            f.write(struct.pack("<3I", L, T, D))
            f.write(payload)
    except OSError as exc:
        raise FormatError(f"{path}: write failed ({exc})") from exc


def read_features(path):
    """Read an LFT1 file, returning a float64 tensor of shape (L, T, D)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise FormatError(f"{path}: read failed ({exc})") from exc
    if len(raw) < len(MAGIC_LFT1) or raw[: len(MAGIC_LFT1)] != MAGIC_LFT1:
        raise FormatError(f"{path}: bad magic, not an LFT1 file")
    header_end = len(MAGIC_LFT1) + 12
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    L, T, D = struct.unpack("<3I", raw[len(MAGIC_LFT1):header_end])
    if L < 1 or T < 1 or D < 1:
        raise FormatError(f"{path}: invalid dimensions L={L} T={T} D={D}")
    n = L * T * D
    body = raw[header_end:]
    if len(body) < 4 * n:
        raise FormatError(
            f"{path}: truncated payload, expected {n} float32 values, "
            f"got {len(body) // 4}"
        )
    if len(body) > 4 * n:
        raise FormatError(f"{path}: {len(body) - 4 * n} trailing bytes after payload")
    arr = np.frombuffer(body, dtype="<f4", count=n).reshape(L, T, D)
    arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return arr


def parse_trials(path):
    """Parse a trial list file into a TrialSet."""
    trials = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(
                    f"{path}:{lineno}: expected 'trial_id enroll_id test_id label', "
                    f"got {len(parts)} fields"
                )
            trial_id, enroll_id, test_id, label = parts
            if label not in TRIAL_LABELS:
                raise FormatError(
                    f"{path}:{lineno}: unknown label {label!r} "
                    f"(expected one of {', '.join(TRIAL_LABELS)})"
                )
            if trial_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate trial_id {trial_id!r}")
            seen.add(trial_id)
            trials.append(Trial(trial_id, enroll_id, test_id, label))
    return TrialSet(trials)


def write_trials(path, trial_set):
    with open(path, "w", encoding="utf-8") as f:
        for t in trial_set:
            f.write(f"{t.trial_id} {t.enroll_id} {t.test_id} {t.label}\n")


def read_scores(path, system_tag=None):
    """Read a score file into a ScoreSet. Tag defaults to the file stem."""
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(
                    f"{path}:{lineno}: expected 'trial_id score', got {len(parts)} fields"
                )
            tid, stext = parts
            try:
                score = float(stext)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric score {stext!r}") from None
            if not np.isfinite(score):
                raise FormatError(f"{path}:{lineno}: non-finite score {stext!r}")
            if tid in entries:
                raise FormatError(f"{path}:{lineno}: duplicate trial_id {tid!r}")
            entries[tid] = score
    if system_tag is None:
        system_tag = os.path.splitext(os.path.basename(path))[0]
    return ScoreSet(entries=entries, system_tag=system_tag)


def write_scores(path, score_set):
    with open(path, "w", encoding="utf-8") as f:
        for tid, score in score_set.entries.items():
            f.write(f"{tid} {float(score)!r}\n")


@dataclass
class ManifestEntry:
    """One corpus utterance: id, speaker, bonafide/spoof flag, feature path."""

    utt_id: str
    speaker_id: str
    is_spoof: bool
    path: str


def read_manifest(path):
    """Parse a corpus manifest (``utt_id speaker_id {bonafide|spoof} path``).

    Relative feature paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(
                    f"{path}:{lineno}: expected 'utt_id speaker_id flag path', "
                    f"got {len(parts)} fields"
                )
            utt_id, speaker_id, flag, feat_path = parts
            if flag not in ("bonafide", "spoof"):
                raise FormatError(f"{path}:{lineno}: flag must be bonafide or spoof, got {flag!r}")
            if utt_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
            seen.add(utt_id)
            if not os.path.isabs(feat_path):
                feat_path = os.path.join(base, feat_path)
            entries.append(ManifestEntry(utt_id, speaker_id, flag == "spoof", feat_path))
    return entries


def write_manifest(path, entries):
    """Write manifest entries; paths are stored relative to the manifest dir
    when possible so the corpus directory stays relocatable."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        for en in entries:
            p = en.path
            if os.path.isabs(p):
                try:
                    p = os.path.relpath(p, base)
                except ValueError:
                    pass
            flag = "spoof" if en.is_spoof else "bonafide"
            f.write(f"{en.utt_id} {en.speaker_id} {flag} {p}\n")
