"""sasvkit: spoofing-robust speaker verification back-end toolkit.

Core pieces: layer-weighted multi-head attention pooling with analytic
gradients, feature-statistics augmentation for domain robustness, BCE and
angular-margin task heads, an AdamW trainer with warmup + cosine annealing,
detection metrics (EER, minDCF, a-DCF), and logistic score calibration and
fusion. A FastAPI service exposes the whole pipeline; the CLI is a thin
client of that service.
"""

__version__ = "0.1.0"
