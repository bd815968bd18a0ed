"""Deterministic mini-batch training loop for embedding distillation.

One step: student forward -> projection head forward (train mode) ->
log power-sum loss against the teacher rows -> full analytic backward ->
one AdamW update with cosine-scheduled learning rate and weight decay.
The loop stops at the early-stopping signal or after total_steps updates,
whichever comes first.

Determinism: all randomness flows from config.seed (shuffle generator uses
the seed itself; head and student initializations use seed+1 and seed+2),
so a rerun with identical inputs reproduces the loss trace bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataValidationError
from ..rng import make_rng
from .head import ProjectionHead
from .loss import log_power_sum_loss_grad
from .optim import AdamW, CosineSchedule, LossWindowMonitor
from .student import make_student

DEFAULT_EPOCHS = 10


@dataclass
class DistillConfig:
    alpha: int = 4
    eps_loss: float = 1e-12
    batch_size: int = 32
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    wd_start: float = 0.05
    wd_end: float = 0.5
    total_steps: int | None = None  # None: 10 epochs over the pair set
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    window: int = 100
    max_violations: int = 10
    violation_mode: str = "cumulative"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0
    student_arch: str = "identity"
    student_hidden: tuple = (256,)

    def validate(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.lr_end <= self.lr_start:
            raise ValueError(f"need 0 < lr_end <= lr_start, got {self.lr_end}, {self.lr_start}")
        if self.wd_start > self.wd_end:
            raise ValueError(f"need wd_start <= wd_end, got {self.wd_start}, {self.wd_end}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.total_steps is not None and self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        return self


@dataclass
class DistillResult:
    head: ProjectionHead
    student: object
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    wds: list = field(default_factory=list)
    violation_counts: list = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False

    def trace_records(self):
        """Per-step dicts suitable for a JSON-lines trace."""
        return [
            {"step": t, "loss": loss, "lr": lr, "wd": wd, "violations": v}
            for t, (loss, lr, wd, v) in enumerate(
                zip(self.losses, self.lrs, self.wds, self.violation_counts)
            )
        ]


def _batches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    out = []
    for start in range(0, n, batch_size):
        batch = order[start : start + batch_size]
        if len(batch) >= 2:  # batch norm is undefined on a single row
            out.append(batch)
    return out


def run_distillation(
    student_data: np.ndarray,
    teacher_data: np.ndarray,
    config: DistillConfig | None = None,
    head: ProjectionHead | None = None,
    student=None,
) -> DistillResult:
    """Fit head (and student, if trainable) so head(student(x)) matches the teacher rows.

    ``student_data`` and ``teacher_data`` must be row-aligned. Optional
    ``head``/``student`` arguments supply pre-built modules (e.g. a head
    with a hand-chosen initialization); by default both are constructed
    from the config.
    """
    config = (config or DistillConfig()).validate()
    student_data = np.asarray(student_data, dtype=np.float64)
    teacher_data = np.asarray(teacher_data, dtype=np.float64)
    if student_data.ndim != 2 or teacher_data.ndim != 2:
        raise DataValidationError("student and teacher data must be 2-dimensional arrays")
    if student_data.shape[0] != teacher_data.shape[0]:
        raise DataValidationError(
            f"row count mismatch: {student_data.shape[0]} student vs {teacher_data.shape[0]} teacher"
        )
    n, d_s = student_data.shape
    d_t = teacher_data.shape[1]
    if n < 2:
        raise DataValidationError(f"need at least 2 aligned pairs to train, got {n}")

    shuffle_rng = make_rng(config.seed)
    if head is None:
        head = ProjectionHead(
            d_s, d_t, momentum=config.bn_momentum, eps=config.bn_eps, seed=config.seed + 1
        )
    if head.d_in != d_s or head.d_out != d_t:
        raise DataValidationError(
            f"head maps {head.d_in}->{head.d_out} but data needs {d_s}->{d_t}"
        )
    if student is None:
        student = make_student(
            config.student_arch, d_s, hidden=config.student_hidden, seed=config.seed + 2
        )

    params = dict(head.parameters())
    decay = set(params)  # projection weight, gamma, beta
    for name, p in student.parameters().items():
        key = f"student.{name}"
        params[key] = p
        if not name.startswith("b"):  # network biases are not decayed
            decay.add(key)
    optimizer = AdamW(params, decay, beta1=config.beta1, beta2=config.beta2, eps=config.eps_adam)
    monitor = LossWindowMonitor(config.window, config.max_violations, config.violation_mode)

    steps_per_epoch = len(_batches(n, config.batch_size, make_rng(config.seed)))
    if steps_per_epoch == 0:
        raise DataValidationError("every mini-batch would have fewer than 2 rows; nothing to train on")
    total_steps = config.total_steps if config.total_steps is not None else DEFAULT_EPOCHS * steps_per_epoch
    lr_schedule = CosineSchedule(config.lr_start, config.lr_end, total_steps)
    wd_schedule = CosineSchedule(config.wd_start, config.wd_end, total_steps)

    result = DistillResult(head=head, student=student)
    t = 0
    stop = False
    while t < total_steps and not stop:
        for batch in _batches(n, config.batch_size, shuffle_rng):
            x = student_data[batch]
            target = teacher_data[batch]
            features, student_cache = student.forward(x)
            predicted, head_cache = head.forward(features, train=True)
            loss, grad_pred = log_power_sum_loss_grad(
                predicted, target, alpha=config.alpha, eps=config.eps_loss
            )
            head_grads, grad_features = head.backward(grad_pred, head_cache)
            student_grads, _ = student.backward(grad_features, student_cache)

            grads = dict(head_grads)
            for name, g in student_grads.items():
                grads[f"student.{name}"] = g
            lr = lr_schedule.value(t)
            wd = wd_schedule.value(t)
            optimizer.step(grads, lr, wd)

            result.losses.append(loss)
            result.lrs.append(lr)
            result.wds.append(wd)
            stop_now = monitor.observe(loss)
            result.violation_counts.append(monitor.violations)
            t += 1
            if stop_now:
                result.stopped_early = True
                stop = True
                break
            if t >= total_steps:
                stop = True
                break

    result.steps = t
    return result
