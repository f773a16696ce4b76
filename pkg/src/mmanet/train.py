"""Teacher pretraining and deployment training with MAD and MAR.

Per deployment step the loss is ``L_TL + alpha * L_MAD + beta * L_MAR``:
``L_TL`` is cross-entropy of the deployment head on every sample, ``L_MAD``
is active from the first epoch (``mad.active_during_warmup``), and ``L_MAR``
only after the warm-up epochs, once the weak combinations have been mined.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .data import ModalityDataset, enumerate_patterns, generate_dataset, sample_dropout_patterns
from .errors import MiningStateError, NumericalError
from .mad import mad_loss
from .mar import (
    MiningState,
    class_histogram,
    collect_pattern_predictions,
    finalize_mining,
    mar_loss,
    pattern_divergence,
    regularization_mask,
    update_memory_bank,
)
from .models import DeploymentNet, TeacherNet, build_networks

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    l_tl: float
    l_mad: float = 0.0
    l_mar: float = 0.0
    total: float = 0.0
    alpha: float = 0.0  # weights in effect this epoch
    beta: float = 0.0
    mining: dict | None = None


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError("epoch records must be consecutive")
        self.records.append(rec)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        out = cls()
        for line in text.splitlines():
            if line.strip():
                out.append(EpochRecord(**json.loads(line)))
        return out


@dataclass
class DeploymentResult:
    deployment: DeploymentNet
    log: TrainLog
    mining: MiningState | None


def total_loss(l_tl, l_mad, l_mar, alpha, beta):
    for name, value in (("L_TL", l_tl), ("L_MAD", l_mad), ("L_MAR", l_mar)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericalError(name, f"non-finite loss component ({v})")
    return l_tl + alpha * l_mad + beta * l_mar


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule with optional linear warm-up; ``epoch`` is 1-based."""
    o = cfg.optim
    lr = o.lr * o.gamma ** sum(epoch > m for m in o.milestones)
    if o.lr_warmup_epochs and epoch <= o.lr_warmup_epochs:
        lr *= epoch / o.lr_warmup_epochs
    return lr


def _optimizer(cfg, params):
    o = cfg.optim
    if o.method == "adam":
        return torch.optim.Adam(params, lr=o.lr, weight_decay=o.weight_decay)
    return torch.optim.SGD(params, lr=o.lr, momentum=o.momentum, weight_decay=o.weight_decay)


def _tensors(ds: ModalityDataset):
    return [torch.as_tensor(f, dtype=torch.float64) for f in ds.features], torch.as_tensor(ds.labels)


def _batches(rng, n, batch_size):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield torch.as_tensor(idx)


def init_networks(cfg: TrainConfig, input_dims) -> tuple[TeacherNet, DeploymentNet]:
    torch.manual_seed(cfg.seed)
    return build_networks(input_dims, cfg.data.num_classes, cfg.model)


def load_data(cfg: TrainConfig):
    return generate_dataset(cfg.data)


def pretrain_teacher(cfg: TrainConfig, train: ModalityDataset | None = None, teacher: TeacherNet | None = None):
    """Train the teacher on complete modalities with cross-entropy only."""
    torch.use_deterministic_algorithms(True)
    if train is None:
        train, _ = load_data(cfg)
    if teacher is None:
        teacher, _ = init_networks(cfg, [f.shape[1] for f in train.features])
    x, y = _tensors(train)
    rng = np.random.default_rng([cfg.seed, 0])
    opt = _optimizer(cfg, teacher.parameters())
    history = TrainLog()
    teacher.train()
    for epoch in range(1, cfg.teacher_epochs + 1):
        lr = lr_at(cfg, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        losses = []
        for idx in _batches(rng, len(y), cfg.batch_size):
            _, logits = teacher([f[idx] for f in x])
            loss = F.cross_entropy(logits, y[idx])
            if not torch.isfinite(loss):
                raise NumericalError("L_TL", f"teacher loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        mean = float(np.mean(losses))
        history.append(EpochRecord(epoch, "teacher", lr, mean, total=mean))
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher, history


def _mining_step(state, deployment, eval_x, mining_patterns, epoch, cfg):
    Y_O = collect_pattern_predictions(deployment, eval_x, mining_patterns)
    hist = class_histogram(Y_O, literal_softmax=cfg.mar.literal_softmax_counts)
    g_d = pattern_divergence(hist)
    state = update_memory_bank(state, g_d, epoch, cfg.mar.warmup_epochs)
    info = {"g_d": g_d.tolist(), "counts": hist.counts.tolist()}
    if epoch == cfg.mar.warmup_epochs:
        state = finalize_mining(state)
        info.update(mean_divergence=state.mean_divergence().tolist(), strong_index=state.strong_index)
        log.info("mined strong modality %d from mean divergence %s", state.strong_index, info["mean_divergence"])
    return state, info


def train_deployment(
    cfg: TrainConfig,
    teacher: TeacherNet,
    train: ModalityDataset | None = None,
    deployment: DeploymentNet | None = None,
) -> DeploymentResult:
    """Train the deployment network against a frozen teacher.

    Mining statistics are gathered at the end of every warm-up epoch on a
    fixed training subsample, whatever ``mar.mode`` is; they only drive the
    loss when ``mar.mode == "mar"``.
    """
    torch.use_deterministic_algorithms(True)
    if train is None:
        train, _ = load_data(cfg)
    input_dims = [f.shape[1] for f in train.features]
    if deployment is None:
        _, deployment = init_networks(cfg, input_dims)
    m = train.num_modalities
    x, y = _tensors(train)
    n = len(y)

    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)

    rng = np.random.default_rng([cfg.seed, 1])
    sub_rng = np.random.default_rng([cfg.seed, 2])
    warmup = cfg.mar.warmup_epochs
    eval_idx = torch.as_tensor(np.sort(sub_rng.choice(n, size=min(n, cfg.mar.subsample_size), replace=False)))
    eval_x = [f[eval_idx] for f in x]
    mining_patterns, _ = enumerate_patterns(m)
    state = MiningState.empty(warmup, m)

    opt = _optimizer(cfg, deployment.parameters())
    history = TrainLog()
    alpha = cfg.mad.alpha if cfg.mad.mode != "off" else 0.0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(cfg, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        mar_active = epoch > warmup and cfg.mar.mode != "off"
        if mar_active and cfg.mar.mode == "mar" and not state.frozen:
            raise MiningStateError("weak-combination loss requested before mining was finalized")
        beta = cfg.mar.beta if mar_active else 0.0
        alpha_e = alpha if (epoch > warmup or cfg.mad.active_during_warmup) else 0.0
        deployment.train()
        sums = np.zeros(4)
        nb = 0
        for idx in _batches(rng, n, cfg.batch_size):
            xb = [f[idx] for f in x]
            yb = y[idx]
            patterns = sample_dropout_patterns(len(idx), m, rng, cfg.dropout.policy, cfg.dropout.keep_prob)
            with torch.no_grad():
                z_t, y_t = teacher(xb)
            z_d, y_d, y_r = deployment(xb, patterns)
            l_tl = F.cross_entropy(y_d, yb)
            l_mad = mad_loss(z_t, z_d, y_t, cfg.mad.mode, cfg.mad.signed_discrepancy)
            if mar_active:
                l_mar = mar_loss(y_r, yb, regularization_mask(cfg.mar.mode, patterns, state))
            else:
                l_mar = y_r.sum() * 0.0
            loss = total_loss(l_tl, l_mad, l_mar, alpha_e, beta)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += [l_tl.item(), l_mad.item(), l_mar.item(), loss.item()]
            nb += 1
        means = sums / max(nb, 1)
        mining = None
        if epoch <= warmup:
            state, mining = _mining_step(state, deployment, eval_x, mining_patterns, epoch, cfg)
        history.append(EpochRecord(epoch, "deployment", lr, *map(float, means), alpha=alpha_e, beta=beta,
                                   mining=mining))
    deployment.eval()
    return DeploymentResult(deployment, history, state)


def run_experiment(cfg: TrainConfig, teacher: TeacherNet | None = None):
    """Generate data, pretrain (unless given) a teacher, train a deployment net.

    Returns ``(teacher, result, (train, test))``.
    """
    train, test = load_data(cfg)
    input_dims = [f.shape[1] for f in train.features]
    t_init, d_init = init_networks(cfg, input_dims)
    if teacher is None:
        teacher, _ = pretrain_teacher(cfg, train, t_init)
    result = train_deployment(cfg, teacher, train, d_init)
    return teacher, result, (train, test)
