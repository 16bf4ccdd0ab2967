from .losses import LossConfig, loss_contrastive, loss_recon_alpha, loss_recon_w, total_loss
from .model import AEConfig, Autoencoder
from .probe import PROBE_COLUMNS, ProbeResult, probe, probe_all, shuffled_control, split_by_model
from .tokens import BIAS_ALPHA, TokenSequence, augment, chunk, detokenize, tokenize
from .train import (
    LayerStats,
    Population,
    TrainConfig,
    TrainResult,
    build_population,
    evaluate_loss,
    load_ae,
    reconstruction_r2,
    save_ae,
    save_embeddings,
    train_ae,
)

__all__ = [
    "AEConfig",
    "Autoencoder",
    "BIAS_ALPHA",
    "LayerStats",
    "LossConfig",
    "PROBE_COLUMNS",
    "Population",
    "ProbeResult",
    "TokenSequence",
    "TrainConfig",
    "TrainResult",
    "augment",
    "build_population",
    "chunk",
    "detokenize",
    "evaluate_loss",
    "load_ae",
    "loss_contrastive",
    "loss_recon_alpha",
    "loss_recon_w",
    "probe",
    "probe_all",
    "reconstruction_r2",
    "save_ae",
    "save_embeddings",
    "shuffled_control",
    "split_by_model",
    "tokenize",
    "total_loss",
]
