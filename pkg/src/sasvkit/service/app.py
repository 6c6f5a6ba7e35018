"""FastAPI service exposing the full pipeline.

Each endpoint wraps one core operation: synth, train, score, calibrate,
fuse, eval, gradcheck. Requests reference files on the service host; every
endpoint that writes output also drops a JSON run manifest next to it
(subcommand, resolved config, inputs, outputs, seed, toolkit version), so
any artifact can be traced back to the exact call that produced it.

Core-level validation errors surface as HTTP 400 with a one-line detail.
"""

import json
import os
from functools import wraps

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from .. import calibration as cal_mod
from .. import metrics as metrics_mod
from .. import synthgen, trainer
from ..dsu import DSUConfig
from ..mhfa import MHFAConfig
from ..protocol_io import (FormatError, ScoreSet, parse_trials, read_features,
                           read_manifest, read_scores, write_scores)
from ..scoring import score_trials
from . import schemas

app = FastAPI(
    title="sasvkit",
    description="Spoofing-robust speaker verification back-end pipeline",
    version=__version__,
)

_CORE_ERRORS = (ValueError, FormatError, cal_mod.FitError, FileNotFoundError,
                NotADirectoryError, PermissionError, IsADirectoryError)


def surface_core_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _CORE_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
    return wrapper


def write_run_manifest(path, subcommand, request, inputs, outputs, seed=None):
    doc = {
        "subcommand": subcommand,
        "config": request.model_dump(),
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "toolkit_version": __version__,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


@app.get("/health", response_model=schemas.HealthResponse)
def health():
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/synth", response_model=schemas.SynthResponse)
@surface_core_errors
def synth(req: schemas.SynthRequest):
    cfg = synthgen.SynthConfig(
        num_speakers=req.num_speakers,
        utts_per_speaker=req.utts_per_speaker,
        spoof_fraction=req.spoof_fraction,
        num_layers=req.num_layers,
        num_frames=req.num_frames,
        feature_dim=req.feature_dim,
        speaker_scale=req.speaker_scale,
        spoof_artifact_scale=req.spoof_artifact_scale,
        noise_scale=req.noise_scale,
        artifact_layer=req.artifact_layer,
        seed=req.seed,
        heldout_per_speaker=req.heldout_per_speaker,
        nontarget_per_speaker=req.nontarget_per_speaker,
    )
    result = synthgen.synth_corpus(cfg, req.out_dir)
    rm = write_run_manifest(
        os.path.join(req.out_dir, "run_synth.json"), "synth", req,
        inputs=[], outputs=[result.manifest_path, result.trials_path],
        seed=req.seed)
    return schemas.SynthResponse(
        manifest=result.manifest_path,
        trials=result.trials_path,
        num_utterances=len(result.entries),
        num_spoof=result.num_spoof,
        num_trials=len(result.trials),
        run_manifest=rm,
    )


@app.post("/train", response_model=schemas.TrainResponse)
@surface_core_errors
def train(req: schemas.TrainRequest):
    manifest = read_manifest(req.manifest)
    trials = parse_trials(req.trials)
    if not manifest:
        raise ValueError(f"{req.manifest}: empty manifest")
    probe = read_features(manifest[0].path)
    mhfa_cfg = MHFAConfig(
        num_layers=probe.shape[0],
        input_dim=probe.shape[2],
        num_heads=req.num_heads,
        compression_dim=req.compression_dim,
        embed_dim=req.embed_dim,
    )
    cfg = trainer.TrainConfig(
        max_epochs=req.max_epochs,
        batch_size=req.batch_size,
        base_lr=req.base_lr,
        final_lr=req.final_lr,
        warmup_epochs=req.warmup_epochs,
        weight_decay=req.weight_decay,
        beta1=req.beta1,
        beta2=req.beta2,
        adam_eps=req.adam_eps,
        task=req.task,
        dsu=DSUConfig(probability=req.dsu_p, eps_floor=req.dsu_eps) if req.dsu else None,
        seed=req.seed,
        aam_margin=req.aam_margin,
        aam_scale=req.aam_scale,
        frontend_lr_factor=req.frontend_lr_factor,
    )
    result = trainer.train(manifest, trials, cfg, mhfa_cfg, req.out_dir)
    rm = write_run_manifest(
        os.path.join(req.out_dir, "run_train.json"), "train", req,
        inputs=[req.manifest, req.trials],
        outputs=[result.checkpoint_path, result.log_path], seed=req.seed)
    return schemas.TrainResponse(
        checkpoint=result.checkpoint_path,
        log=result.log_path,
        best_dev_eer=result.best_dev_eer,
        best_epoch=result.best_epoch,
        epochs=[schemas.EpochStats(epoch=e, train_loss=l, dev_eer=d, lr=lr)
                for e, l, d, lr in result.epochs],
        value_layer_weights=result.value_layer_weights,
        wall_seconds=result.wall_seconds,
        run_manifest=rm,
    )


@app.post("/score", response_model=schemas.ScoreResponse)
@surface_core_errors
def score(req: schemas.ScoreRequest):
    manifest = read_manifest(req.manifest)
    trials = parse_trials(req.trials)
    cohort = read_manifest(req.snorm_cohort) if req.snorm_cohort else None
    score_set = score_trials(manifest, trials, req.checkpoint,
                             cohort_manifest=cohort,
                             snorm_top_k=req.snorm_top_k,
                             system_tag=req.system_tag)
    write_scores(req.out, score_set)
    rm = write_run_manifest(
        req.out + ".run.json", "score", req,
        inputs=[req.manifest, req.trials, req.checkpoint],
        outputs=[req.out])
    return schemas.ScoreResponse(scores=req.out, num_trials=len(score_set),
                                 system_tag=score_set.system_tag,
                                 run_manifest=rm)


@app.post("/calibrate", response_model=schemas.CalibrateResponse)
@surface_core_errors
def calibrate(req: schemas.CalibrateRequest):
    score_set = read_scores(req.scores)
    trials = parse_trials(req.trials)
    positive = set(req.positive_labels)
    scores, labels = [], []
    for t in trials:
        if t.label == "unknown" or t.trial_id not in score_set.entries:
            continue
        scores.append(score_set.entries[t.trial_id])
        labels.append(1.0 if t.label in positive else 0.0)
    model = cal_mod.fit_calibration(np.array(scores), np.array(labels),
                                    prior_weighting=req.prior_weighting)
    cal_mod.save_model(req.out_model, model)
    rm = write_run_manifest(
        req.out_model + ".run.json", "calibrate", req,
        inputs=[req.scores, req.trials], outputs=[req.out_model])
    return schemas.CalibrateResponse(model=req.out_model, scale=model.scale,
                                     bias=model.bias, run_manifest=rm)


@app.post("/fuse", response_model=schemas.FuseResponse)
@surface_core_errors
def fuse(req: schemas.FuseRequest):
    if req.strategy not in ("pre", "joint"):
        raise ValueError(f"unknown fusion strategy {req.strategy!r}")
    asv = read_scores(req.asv_scores)
    cm = read_scores(req.cm_scores)
    trials = parse_trials(req.trials)

    sa, sc, y_sasv, y_cm = [], [], [], []
    for t in trials:
        if t.label == "unknown":
            continue
        if t.trial_id in asv.entries and t.trial_id in cm.entries:
            sa.append(asv.entries[t.trial_id])
            sc.append(cm.entries[t.trial_id])
            y_sasv.append(1.0 if t.label == "target" else 0.0)
            y_cm.append(1.0 if t.label in ("target", "nontarget") else 0.0)
    sa, sc = np.array(sa), np.array(sc)
    y_sasv, y_cm = np.array(y_sasv), np.array(y_cm)

    cal_asv = cal_cm = None
    if req.strategy == "pre":
        # each system is first calibrated against its own task labels
        cal_asv = cal_mod.fit_calibration(sa, y_sasv, req.prior_weighting)
        cal_cm = cal_mod.fit_calibration(sc, y_cm, req.prior_weighting)
        sa_fit = cal_mod.apply_affine(sa, cal_asv)
        sc_fit = cal_mod.apply_affine(sc, cal_cm)
    else:
        sa_fit, sc_fit = sa, sc

    model = cal_mod.fit_joint_fusion(sa_fit, sc_fit, y_sasv, req.prior_weighting)
    fused = cal_mod.fuse_scores(asv, cm, model, cal_asv=cal_asv, cal_cm=cal_cm)

    if req.final_calibration:
        sf = np.array([fused.entries[t.trial_id] for t in trials
                       if t.label != "unknown" and t.trial_id in fused.entries])
        yf = np.array([1.0 if t.label == "target" else 0.0 for t in trials
                       if t.label != "unknown" and t.trial_id in fused.entries])
        final = cal_mod.fit_calibration(sf, yf, req.prior_weighting)
        fused = ScoreSet(
            entries={k: cal_mod.apply_affine(v, final) for k, v in fused.entries.items()},
            system_tag=fused.system_tag)

    write_scores(req.out_scores, fused)
    if req.out_model:
        cal_mod.save_model(req.out_model, model)
    rm = write_run_manifest(
        req.out_scores + ".run.json", "fuse", req,
        inputs=[req.asv_scores, req.cm_scores, req.trials],
        outputs=[p for p in (req.out_scores, req.out_model) if p])
    return schemas.FuseResponse(scores=req.out_scores, model=req.out_model,
                                a_asv=model.a_asv, a_cm=model.a_cm,
                                bias=model.bias, strategy=req.strategy,
                                run_manifest=rm)


_METRIC_RENDER = {
    "eer": ("EER(%)", lambda v: f"{100.0 * v:.3f}"),
    "mindcf": ("minDCF", lambda v: f"{v:.5f}"),
    "adcf": ("a-DCF", lambda v: f"{v:.5f}"),
}


def _relabel(labeled, positive_labels, negative_labels):
    """Collapse label groups onto the binary target/nontarget convention."""
    keep, lab = [], []
    for s, l in zip(labeled.scores, labeled.labels):
        if l in positive_labels:
            keep.append(s)
            lab.append("target")
        elif l in negative_labels:
            keep.append(s)
            lab.append("nontarget")
    return metrics_mod.LabeledScores(np.array(keep), np.array(lab))


@app.post("/eval", response_model=schemas.EvalResponse)
@surface_core_errors
def evaluate(req: schemas.EvalRequest):
    score_set = read_scores(req.scores)
    trials = parse_trials(req.trials)
    labeled = metrics_mod.labeled_from_sets(score_set, trials)
    threshold = None
    if req.metric == "eer":
        value = metrics_mod.eer(_relabel(labeled, req.positive_labels,
                                         req.negative_labels))
    elif req.metric == "mindcf":
        value, threshold = metrics_mod.min_dcf(
            _relabel(labeled, req.positive_labels, req.negative_labels),
            p_tar=req.p_tar, c_miss=req.c_miss, c_fa=req.c_fa)
    elif req.metric == "adcf":
        params = metrics_mod.ADCFParams(
            pi_tar=req.adcf_pi_tar, pi_non=req.adcf_pi_non, pi_spf=req.adcf_pi_spf,
            c_miss=req.adcf_c_miss, c_fa_non=req.adcf_c_fa_non,
            c_fa_spf=req.adcf_c_fa_spf)
        value, threshold = metrics_mod.a_dcf(labeled, params)
    else:
        raise ValueError(f"unknown metric {req.metric!r}")

    name, fmt = _METRIC_RENDER[req.metric]
    cols = ["system", "scores", "trials", name]
    vals = [score_set.system_tag or "-", os.path.basename(req.scores),
            os.path.basename(req.trials), fmt(value)]
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    table = ("  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip() + "\n"
             + "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip() + "\n")
    table_tsv = "\t".join(cols) + "\n" + "\t".join(vals) + "\n"
    return schemas.EvalResponse(metric=req.metric, value=value,
                                threshold=threshold,
                                system_tag=score_set.system_tag,
                                table=table, table_tsv=table_tsv)


@app.post("/gradcheck", response_model=schemas.GradcheckResponse)
@surface_core_errors
def gradcheck(req: schemas.GradcheckRequest):
    cases = []
    worst = 0.0
    for offset in range(req.seeds):
        for task in req.tasks:
            for use_dsu in req.dsu_modes:
                err = float(trainer.grad_check(task=task, seed=req.seed + offset,
                                               use_dsu=use_dsu))
                cases.append(schemas.GradcheckCase(task=task, dsu=use_dsu,
                                                   max_rel_error=err))
                worst = max(worst, err)
    return schemas.GradcheckResponse(max_rel_error=worst, cases=cases,
                                     tolerance=req.tolerance,
                                     passed=bool(worst < req.tolerance))
