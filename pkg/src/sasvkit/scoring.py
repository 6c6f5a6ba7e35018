"""Trial scoring from a trained checkpoint.

Embeds every utterance a trial list touches, then scores each trial:
countermeasure checkpoints emit the bonafide logit of the test utterance,
verification checkpoints emit the cosine similarity between enrollment and
test embeddings, optionally normalized against a cohort (adaptive s-norm).
"""

import numpy as np

from .checkpoint import load_checkpoint
from .losses import AAMHead, CMHead, adaptive_snorm, cosine_score
from .mhfa import mhfa_forward
from .protocol_io import ScoreSet, read_features

__all__ = ["embed_utterances", "score_trials"]


def embed_utterances(manifest, utt_ids, params):
    by_id = {en.utt_id: en for en in manifest}
    missing = sorted(set(utt_ids) - set(by_id))
    if missing:
        raise ValueError(f"manifest is missing utterances: {missing[:5]} "
                         f"({len(missing)} total)")
    out = {}
    for uid in utt_ids:
        e, _ = mhfa_forward(read_features(by_id[uid].path), params)
        out[uid] = e
    return out


def score_trials(manifest, trial_set, checkpoint_path, cohort_manifest=None,
                 snorm_top_k=None, system_tag=None):
    """Score every trial in ``trial_set`` with the given checkpoint.

    The checkpoint's head decides the scoring mode. For verification,
    passing ``cohort_manifest`` switches on adaptive s-norm: cohort
    embeddings are the bonafide utterances of that manifest, and top_k
    defaults to min(200, cohort size).
    """
    params, head = load_checkpoint(checkpoint_path)
    if head is None:
        raise ValueError(f"{checkpoint_path}: checkpoint has no task head; "
                         f"cannot score trials")

    if isinstance(head, CMHead):
        needed = {t.test_id for t in trial_set}
        emb = embed_utterances(manifest, sorted(needed), params)
        entries = {t.trial_id: head.logit(emb[t.test_id]) for t in trial_set}
        return ScoreSet(entries=entries, system_tag=system_tag or "cm")

    assert isinstance(head, AAMHead)
    needed = {t.enroll_id for t in trial_set} | {t.test_id for t in trial_set}
    emb = embed_utterances(manifest, sorted(needed), params)

    cohort = None
    if cohort_manifest is not None:
        cohort_ids = [en.utt_id for en in cohort_manifest if not en.is_spoof]
        if not cohort_ids:
            raise ValueError("cohort manifest has no bonafide utterances")
        cohort_emb = embed_utterances(cohort_manifest, cohort_ids, params)
        cohort = np.stack([cohort_emb[u] for u in cohort_ids])
        if snorm_top_k is None:
            snorm_top_k = min(200, len(cohort_ids))

    def against_cohort(e):
        return np.array([cosine_score(e, c) for c in cohort])

    entries = {}
    cohort_cache = {}
    for t in trial_set:
        raw = cosine_score(emb[t.enroll_id], emb[t.test_id])
        if cohort is None:
            entries[t.trial_id] = raw
            continue
        for uid in (t.enroll_id, t.test_id):
            if uid not in cohort_cache:
                cohort_cache[uid] = against_cohort(emb[uid])
        entries[t.trial_id] = adaptive_snorm(
            raw, cohort_cache[t.enroll_id], cohort_cache[t.test_id], snorm_top_k)
    return ScoreSet(entries=entries, system_tag=system_tag or "asv")
