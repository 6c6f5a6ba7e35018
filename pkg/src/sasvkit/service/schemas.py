"""Pydantic request/response models for the pipeline service.

All path fields refer to the service host's filesystem: this is a
desk-scale service that owns its corpora and model files locally.
"""

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    out_dir: str
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
    heldout_per_speaker: int = 30
    nontarget_per_speaker: int = 20


class SynthResponse(BaseModel):
    manifest: str
    trials: str
    num_utterances: int
    num_spoof: int
    num_trials: int
    run_manifest: str


class TrainRequest(BaseModel):
    manifest: str
    trials: str
    out_dir: str
    task: str = "cm_bce"
    num_heads: int = 4
    compression_dim: int = 8
    embed_dim: int = 16
    max_epochs: int = 8
    batch_size: int = 128
    base_lr: float = 5.0e-4
    final_lr: float = 1.0e-5
    warmup_epochs: int = 2
    weight_decay: float = 1.0e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dsu: bool = False
    dsu_p: float = Field(default=0.5, description="trigger probability when dsu is on")
    dsu_eps: float = 1e-6
    aam_margin: float = 0.2
    aam_scale: float = 30.0
    frontend_lr_factor: Optional[float] = None


class EpochStats(BaseModel):
    epoch: int
    train_loss: float
    dev_eer: float
    lr: float


class TrainResponse(BaseModel):
    checkpoint: str
    log: str
    best_dev_eer: float
    best_epoch: int
    epochs: list[EpochStats]
    value_layer_weights: list[float]
    wall_seconds: float
    run_manifest: str


class ScoreRequest(BaseModel):
    manifest: str
    trials: str
    checkpoint: str
    out: str
    snorm_cohort: Optional[str] = Field(
        default=None, description="manifest of cohort utterances for adaptive s-norm")
    snorm_top_k: Optional[int] = None
    system_tag: Optional[str] = None


class ScoreResponse(BaseModel):
    scores: str
    num_trials: int
    system_tag: str
    run_manifest: str


class CalibrateRequest(BaseModel):
    scores: str
    trials: str
    out_model: str
    positive_labels: list[str] = ["target"]
    prior_weighting: float = 0.5


class CalibrateResponse(BaseModel):
    model: str
    scale: float
    bias: float
    run_manifest: str


class FuseRequest(BaseModel):
    asv_scores: str
    cm_scores: str
    trials: str
    out_scores: str
    out_model: Optional[str] = None
    strategy: str = Field(default="joint", description="'pre' or 'joint'")
    prior_weighting: float = 0.5
    final_calibration: bool = False


class FuseResponse(BaseModel):
    scores: str
    model: str | None
    a_asv: float
    a_cm: float
    bias: float
    strategy: str
    run_manifest: str


class EvalRequest(BaseModel):
    scores: str
    trials: str
    metric: str = Field(description="'eer', 'mindcf' or 'adcf'")
    positive_labels: list[str] = ["target"]
    negative_labels: list[str] = ["nontarget"]
    p_tar: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 1.0
    adcf_pi_tar: float = 0.9405
    adcf_pi_non: float = 0.0095
    adcf_pi_spf: float = 0.05
    adcf_c_miss: float = 1.0
    adcf_c_fa_non: float = 10.0
    adcf_c_fa_spf: float = 10.0


class EvalResponse(BaseModel):
    metric: str
    value: float
    threshold: Optional[float]
    system_tag: str
    table: str
    table_tsv: str


class GradcheckCase(BaseModel):
    task: str
    dsu: bool
    max_rel_error: float


class GradcheckRequest(BaseModel):
    seed: int = 0
    seeds: int = Field(default=1, description="number of consecutive seeds to sweep")
    tasks: list[str] = ["cm_bce", "asv_aam"]
    dsu_modes: list[bool] = [False, True]
    tolerance: float = 1e-4


class GradcheckResponse(BaseModel):
    max_rel_error: float
    cases: list[GradcheckCase]
    tolerance: float
    passed: bool
