"""Modality-aware regularization: weak-combination mining and its loss.

During the warm-up epochs the deployment network is evaluated on a fixed
subsample under the all-present pattern and under each single-drop pattern.
The class histograms of those predictions are compared with KL divergence;
the modality whose removal shifts the histogram most is taken as the strong
one.  After warm-up, every combination without the strong modality gets
extra supervision through the regularization head.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import DropoutPattern, enumerate_patterns
from .errors import MiningStateError

log = logging.getLogger(__name__)

EPS_SMOOTH = 1e-6

MODES = ("mar", "sr", "off")


class ClassHistogram(NamedTuple):
    counts: np.ndarray  # (m + 1) x k predicted-class counts
    probs: np.ndarray  # rows sum to one


@dataclass(frozen=True)
class MiningState:
    memory_bank: np.ndarray
    epochs_recorded: int = 0
    strong_index: int | None = None  # 1-based modality index of the strong modality
    omega: tuple[DropoutPattern, ...] | None = None
    frozen: bool = False

    @classmethod
    def empty(cls, warmup_epochs: int, num_modalities: int) -> "MiningState":
        if warmup_epochs < 1:
            raise ValueError("warm-up needs at least one epoch")
        return cls(np.zeros((warmup_epochs, num_modalities)))

    @property
    def warmup_epochs(self) -> int:
        return self.memory_bank.shape[0]

    @property
    def num_modalities(self) -> int:
        return self.memory_bank.shape[1]

    def mean_divergence(self) -> np.ndarray:
        return self.memory_bank[: self.epochs_recorded].mean(axis=0)


@torch.no_grad()
def collect_pattern_predictions(deployment, features, mining_patterns: Sequence[DropoutPattern]) -> np.ndarray:
    """Logits of ``deployment`` under each mining pattern, shape ``(m+1, n, k)``."""
    n = features[0].shape[0]
    if n == 0:
        raise ValueError("evaluation subset is empty")
    was_training = deployment.training
    deployment.eval()
    try:
        out = [deployment(features, p.present)[1].cpu().numpy() for p in mining_patterns]
    finally:
        deployment.train(was_training)
    return np.stack(out)


def class_histogram(Y_O: np.ndarray, eps: float = EPS_SMOOTH, literal_softmax: bool = False) -> ClassHistogram:
    """Predicted-class counts per pattern and their smoothed distributions.

    Argmax ties go to the lowest class index.  With ``literal_softmax`` the
    rows are a softmax of the raw counts instead of smoothed frequencies.
    """
    n_patterns, n, k = Y_O.shape
    pred = Y_O.argmax(axis=2)
    counts = np.stack([np.bincount(row, minlength=k) for row in pred]).astype(np.int64)
    if literal_softmax:
        shifted = counts - counts.max(axis=1, keepdims=True)
        e = np.exp(shifted.astype(float))
        probs = e / e.sum(axis=1, keepdims=True)
    else:
        probs = (counts + eps) / (n + k * eps)
    return ClassHistogram(counts, probs)


def pattern_divergence(hist: ClassHistogram) -> np.ndarray:
    """``KL(P_0 || P_i)`` for each single-drop pattern ``i = 1..m``."""
    p0 = hist.probs[0]
    logp0 = np.log(p0)
    return np.array([np.sum(p0 * (logp0 - np.log(pi))) for pi in hist.probs[1:]])


def update_memory_bank(state: MiningState, g_d: np.ndarray, epoch: int, warmup: int | None = None) -> MiningState:
    """Store ``g_d`` as row ``epoch - 1`` of the memory bank (``epoch`` is 1-based)."""
    warmup = state.warmup_epochs if warmup is None else warmup
    if state.frozen:
        raise MiningStateError("mining is frozen; the memory bank cannot change")
    if not 1 <= epoch <= warmup:
        raise MiningStateError(f"epoch {epoch} lies outside the warm-up window 1..{warmup}")
    g_d = np.asarray(g_d, dtype=float)
    if g_d.shape != (state.num_modalities,):
        raise ValueError(f"divergence vector has shape {g_d.shape}, expected ({state.num_modalities},)")
    bank = state.memory_bank.copy()
    bank[epoch - 1] = g_d
    return dataclasses.replace(state, memory_bank=bank, epochs_recorded=state.epochs_recorded + 1)


def finalize_mining(state: MiningState) -> MiningState:
    if state.frozen:
        raise MiningStateError("mining already finalized")
    if state.epochs_recorded != state.warmup_epochs:
        raise MiningStateError(
            f"only {state.epochs_recorded} of {state.warmup_epochs} warm-up epochs recorded"
        )
    mean = state.mean_divergence()
    w0 = int(np.argmax(mean))
    if np.sum(mean == mean[w0]) > 1:
        log.warning("tie in mean divergence %s; picking modality %d", mean.tolist(), w0 + 1)
    _, full = enumerate_patterns(state.num_modalities)
    omega = tuple(p for p in full if not p.present[w0])
    return dataclasses.replace(state, strong_index=w0 + 1, omega=omega, frozen=True)


def weak_mask(patterns: np.ndarray, state: MiningState) -> np.ndarray:
    """``True`` for samples whose presence row belongs to the weak set."""
    if not state.frozen:
        raise MiningStateError("weak set is undefined before mining is finalized")
    patterns = np.asarray(patterns, dtype=bool)
    weak = {p.present for p in state.omega}
    return np.array([tuple(row) in weak for row in patterns.tolist()], dtype=bool)


def single_modality_mask(patterns: np.ndarray) -> np.ndarray:
    return np.asarray(patterns, dtype=bool).sum(axis=1) == 1


def regularization_mask(mode: str, patterns, state: MiningState | None = None) -> np.ndarray:
    if mode == "mar":
        return weak_mask(patterns, state)
    if mode == "sr":
        return single_modality_mask(patterns)
    if mode == "off":
        return np.zeros(len(patterns), dtype=bool)
    raise ValueError(f"unknown MAR mode {mode!r}")


def mar_loss(y_r: torch.Tensor, labels: torch.Tensor, mask, task_loss=F.cross_entropy) -> torch.Tensor:
    """Task loss of the regularization head over the masked samples only.

    Mean-reduced over the selected rows; an empty selection gives an exact
    zero that still participates in autograd.
    """
    mask = torch.as_tensor(np.asarray(mask, dtype=bool))
    if mask.shape[0] != y_r.shape[0] or labels.shape[0] != y_r.shape[0]:
        raise ValueError("mask, logits and labels must have the same length")
    if not mask.any():
        return y_r.sum() * 0.0
    return task_loss(y_r[mask], labels[mask])


def mining_report(state: MiningState, names: Sequence[str] | None = None) -> dict:
    m = state.num_modalities
    names = list(names or [f"M{j}" for j in range(m)])
    report = {
        "modalities": names,
        "divergence": [
            {"epoch": e + 1, "g_d": state.memory_bank[e].tolist()} for e in range(state.epochs_recorded)
        ],
        "mean_divergence": state.mean_divergence().tolist() if state.epochs_recorded else None,
        "strong_index": state.strong_index,
        "strong_modality": names[state.strong_index - 1] if state.strong_index else None,
        "omega": [p.label(names) for p in state.omega] if state.omega is not None else None,
    }
    return report


def format_mining_report(report: dict) -> str:
    names = report["modalities"]
    lines = ["epoch  " + "  ".join(f"{n:>10}" for n in names)]
    for row in report["divergence"]:
        lines.append(f"{row['epoch']:>5}  " + "  ".join(f"{v:10.6f}" for v in row["g_d"]))
    if report["mean_divergence"] is not None:
        lines.append(" mean  " + "  ".join(f"{v:10.6f}" for v in report["mean_divergence"]))
    if report["strong_index"] is not None:
        lines.append(f"strong modality: {report['strong_modality']} (index {report['strong_index']})")
        lines.append("weak combinations: " + ", ".join(report["omega"]))
    return "\n".join(lines)
