"""Position-aware self-supervised pretraining for radar pulse sequences."""

__version__ = "0.1.0"

from .tensor import Parameter, Tensor, backward, no_grad
from .model import (MaskPlan, ModelConfig, RadarPosModel, TokenizedSample,
                    apply_position_mask, plan_mask, toa_positional_encoding)
from .losses import (attention_weights, position_loss, radarpos_loss,
                     smoothed_loss, smoothing_weights)
from .pdw import (DatasetSplit, EmitterSpec, ModeSpec, NoiseParams,
                  PulseDescriptor, SampleRecord, default_emitters,
                  default_modes, generate_sequence, make_split, to_sample)
from .optim import AdamW
from .pretraining import PretrainHyper, masked_position_ce, pretrain
from .finetune import FinetuneSchedule, evaluate, finetune, lr_at
from .metrics import EvalReport, classification_report

__all__ = [
    "AdamW", "DatasetSplit", "EmitterSpec", "EvalReport", "FinetuneSchedule",
    "MaskPlan", "ModeSpec", "ModelConfig", "NoiseParams", "Parameter",
    "PretrainHyper", "PulseDescriptor", "RadarPosModel", "SampleRecord",
    "Tensor", "TokenizedSample", "apply_position_mask", "attention_weights",
    "backward", "classification_report", "default_emitters", "default_modes",
    "evaluate", "finetune", "generate_sequence", "lr_at", "make_split",
    "masked_position_ce", "no_grad", "plan_mask", "position_loss", "pretrain",
    "radarpos_loss", "smoothed_loss", "smoothing_weights", "to_sample",
    "toa_positional_encoding",
]
