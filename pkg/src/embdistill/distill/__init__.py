"""Distillation core: loss, projection head, student nets, optimizer, trainer."""

from .head import ProjectionHead
from .loss import log_power_sum_loss, log_power_sum_loss_grad
from .optim import AdamW, CosineSchedule, LossWindowMonitor
from .student import IdentityStudent, MlpStudent, make_student
from .trainer import DistillConfig, DistillResult, run_distillation

__all__ = [
    "AdamW",
    "CosineSchedule",
    "DistillConfig",
    "DistillResult",
    "IdentityStudent",
    "LossWindowMonitor",
    "MlpStudent",
    "ProjectionHead",
    "log_power_sum_loss",
    "log_power_sum_loss_grad",
    "make_student",
    "run_distillation",
]
