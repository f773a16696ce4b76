"""Encoders, fusion and heads for the teacher and deployment networks.

The deployment network zeroes the *encoded* features of absent modalities
(not the raw inputs), so an encoder bias never leaks through for a missing
modality.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .data import ModalityBatch, apply_dropout

DTYPE = torch.float64


class Encoder(nn.Module):
    """Two-layer perceptron mapping one modality to a ``c``-dim feature."""

    def __init__(self, in_dim, hidden, out_dim):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden, dtype=DTYPE),
            nn.ReLU(),
            nn.Linear(hidden, out_dim, dtype=DTYPE),
            nn.ReLU(),
        )

    def forward(self, x):
        return self.net(x)


_ACTIVATIONS = {"relu": torch.relu, "tanh": torch.tanh}


class ConcatFusion(nn.Module):
    """Concatenate modality features, then one affine map and a pointwise activation.

    Subclass and override :meth:`forward` to plug in another fusion rule;
    the networks only rely on ``out_dim``.
    """

    def __init__(self, num_modalities, feature_dim, out_dim, activation="relu"):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = _ACTIVATIONS[activation]
        self.num_modalities = num_modalities
        self.feature_dim = feature_dim
        self.out_dim = out_dim
        self.proj = nn.Linear(num_modalities * feature_dim, out_dim, dtype=DTYPE)

    def concat(self, features):
        if len(features) != self.num_modalities:
            raise ValueError(f"expected {self.num_modalities} modality features, got {len(features)}")
        for j, f in enumerate(features):
            if f.shape[-1] != self.feature_dim:
                raise ValueError(f"modality {j} feature width {f.shape[-1]} != {self.feature_dim}")
        return torch.cat(list(features), dim=-1)

    def forward(self, features):
        return self.activation(self.proj(self.concat(features)))


def fuse(fusion: nn.Module, features):
    return fusion(features)


def _head(in_dim, num_classes):
    return nn.Linear(in_dim, num_classes, dtype=DTYPE)


class _MultimodalNet(nn.Module):
    def __init__(self, input_dims: Sequence[int], num_classes, hidden=32, feature_dim=16, fused_dim=32,
                 fusion_activation="relu"):
        super().__init__()
        self.input_dims = tuple(input_dims)
        self.num_classes = num_classes
        self.encoders = nn.ModuleList(Encoder(d, hidden, feature_dim) for d in input_dims)
        self.fusion = ConcatFusion(len(input_dims), feature_dim, fused_dim, fusion_activation)
        self.head = _head(fused_dim, num_classes)

    @property
    def num_modalities(self):
        return len(self.encoders)

    def encode(self, features):
        if len(features) != self.num_modalities:
            raise ValueError(f"expected {self.num_modalities} modalities, got {len(features)}")
        return [enc(_as_tensor(x)) for enc, x in zip(self.encoders, features)]


class TeacherNet(_MultimodalNet):
    """Complete-modality network; returns ``(z_t, y_t)``."""

    role = "teacher"

    def forward(self, features):
        if any(x is None for x in features):
            raise ValueError("the teacher needs every modality")
        z = self.fusion(self.encode(features))
        return z, self.head(z)


class DeploymentNet(_MultimodalNet):
    """Dropout-tolerant network with an extra regularization head.

    ``forward`` returns ``(z_d, y_d, y_r)``.  ``y_r`` only feeds the
    weak-combination loss during training and is ignored at inference.
    """

    role = "deployment"

    def __init__(self, input_dims, num_classes, hidden=32, feature_dim=16, fused_dim=32,
                 fusion_activation="relu"):
        super().__init__(input_dims, num_classes, hidden, feature_dim, fused_dim, fusion_activation)
        self.reg_head = _head(fused_dim, num_classes)

    def forward(self, features, patterns):
        patterns = np.asarray(getattr(patterns, "present", patterns), dtype=bool)
        if patterns.ndim == 2 and not patterns.any(axis=1).all():
            raise ValueError("every sample must keep at least one modality")
        if patterns.ndim == 1 and not patterns.any():
            raise ValueError("pattern drops every modality")
        encoded = apply_dropout(self.encode(features), patterns)
        z = self.fusion(encoded)
        return z, self.head(z), self.reg_head(z)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def forward_teacher(teacher: TeacherNet, batch: ModalityBatch):
    if not batch.patterns.all():
        raise ValueError("teacher batches must carry every modality for every sample")
    return teacher(batch.features)


def forward_deployment(deployment: DeploymentNet, batch: ModalityBatch):
    return deployment(batch.features, batch.patterns)


def build_networks(input_dims, num_classes, model_cfg):
    kw = dict(hidden=model_cfg.hidden, feature_dim=model_cfg.feature_dim,
              fusion_activation=model_cfg.fusion_activation)
    teacher = TeacherNet(input_dims, num_classes, fused_dim=model_cfg.teacher_fused_dim, **kw)
    deployment = DeploymentNet(input_dims, num_classes, fused_dim=model_cfg.fused_dim, **kw)
    return teacher, deployment


def parameter_digest(module: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# Checkpoint container: b"MMCK" + u32 header length + JSON header + raw bytes.
# The header lists, per "role/param" key, dtype, shape and byte offset into
# the payload.  Arrays are little-endian C-order.  Byte-stable for equal
# parameters since nothing time- or path-dependent is stored.
_MAGIC = b"MMCK"


def save_checkpoint(path, modules: dict, meta: dict | None = None):
    entries, chunks, offset = [], [], 0
    for role in sorted(modules):
        for name, t in modules[role].state_dict().items():
            arr = np.ascontiguousarray(t.detach().cpu().numpy())
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = arr.tobytes()
            entries.append({
                "key": f"{role}/{name}",
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def read_checkpoint(path):
    """Return ``(arrays, meta)`` where ``arrays`` maps role -> OrderedDict of tensors."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen])
    payload = memoryview(blob)[8 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        role, name = e["key"].split("/", 1)
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        arrays.setdefault(role, OrderedDict())[name] = torch.from_numpy(arr)
    return arrays, header["meta"]


def load_checkpoint(path, modules: dict):
    """Load parameters into ``modules`` (role -> nn.Module) in place; returns meta."""
    arrays, meta = read_checkpoint(path)
    for role, module in modules.items():
        if role not in arrays:
            raise KeyError(f"checkpoint has no parameters for role {role!r}")
        module.load_state_dict(arrays[role])
    return meta
