"""Versioned binary checkpoints: parameters plus optimizer velocities, with
a shape manifest in fixed traversal order. Round trips are bit-exact and a
resumed run reproduces an uninterrupted one bit for bit."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import FUSION_MODES, CMMPModel, ModelDims, init_model
from .trainer import OptimizerState

MAGIC = b"CMMPCK01"
VERSION = 1
_STAGE_TAGS = ("init", "pretrain", "finetune")


class CheckpointFormatError(ValueError):
    """The checkpoint file violates the on-disk format."""


@dataclass
class Checkpoint:
    params: dict            # dotted name -> float64 array
    velocity: dict          # dotted name -> float64 array
    stage: str
    iteration: int
    fusion_mode: str
    score_weights: tuple


def _entries(model: CMMPModel, state: OptimizerState):
    for name, p in model.named_parameters():
        yield f"param/{name}", p.array
    for name, _ in model.named_parameters():
        yield f"velocity/{name}", state.velocity[name]


def save_checkpoint(model: CMMPModel, state: OptimizerState, stage: str,
                    iteration: int, path):
    if stage not in _STAGE_TAGS:
        raise ValueError(f"unknown stage {stage!r}")
    entries = list(_entries(model, state))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIQ", VERSION, _STAGE_TAGS.index(stage), iteration))
        f.write(struct.pack("<Idd", FUSION_MODES.index(model.fusion_mode),
                            *model.score_weights))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 8)
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic: {magic!r}")
        version, stage_id, iteration = struct.unpack("<IIQ", _read_exact(f, 16))
        if version != VERSION:
            raise CheckpointFormatError(f"version mismatch: file has {version}, "
                                        f"reader supports {VERSION}")
        if stage_id >= len(_STAGE_TAGS):
            raise CheckpointFormatError(f"unknown stage id {stage_id}")
        mode_id, w_a, w_m = struct.unpack("<Idd", _read_exact(f, 20))
        if mode_id >= len(FUSION_MODES):
            raise CheckpointFormatError(f"unknown fusion mode id {mode_id}")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        manifest = []
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            manifest.append((name, shape))
        params, velocity = {}, {}
        for name, shape in manifest:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read_exact(f, 8 * n), dtype="<f8").reshape(shape).copy()
            if name.startswith("param/"):
                params[name[len("param/"):]] = arr
            elif name.startswith("velocity/"):
                velocity[name[len("velocity/"):]] = arr
            else:
                raise CheckpointFormatError(f"unknown manifest entry {name!r}")
        if f.read(1):
            raise CheckpointFormatError("trailing data after payloads")
    return Checkpoint(params=params, velocity=velocity,
                      stage=_STAGE_TAGS[stage_id], iteration=int(iteration),
                      fusion_mode=FUSION_MODES[mode_id], score_weights=(w_a, w_m))


def _dims_from_params(params: dict) -> ModelDims:
    try:
        return ModelDims(
            a_dim=params["enc_a.l1.weight"].shape[1],
            m_dim=params["enc_m.l1.weight"].shape[1],
            classes=params["head_a.weight"].shape[0],
            feat_dim=params["enc_a.l2.weight"].shape[0],
            enc_hidden=params["enc_a.l1.weight"].shape[0],
            lstm_hidden=params["gen_a.layer1.w_hh"].shape[1],
        )
    except KeyError as exc:
        raise CheckpointFormatError(f"shape manifest mismatch: missing {exc}") from exc


def restore(ck: Checkpoint):
    """Rebuild (model, optimizer state) from a loaded checkpoint."""
    dims = _dims_from_params(ck.params)
    model = init_model(0, dims, ck.fusion_mode, ck.score_weights)
    apply_checkpoint(ck, model)
    state = OptimizerState(velocity={k: v.copy() for k, v in ck.velocity.items()})
    expected = {name for name, _ in model.named_parameters()}
    if set(state.velocity) != expected:
        raise CheckpointFormatError("shape manifest mismatch: velocity entries "
                                    "do not cover the parameter set")
    return model, state


def apply_checkpoint(ck: Checkpoint, model: CMMPModel):
    """Copy checkpointed parameters into an existing model, validating the
    manifest name-and-shape set against the model's."""
    named = dict(model.named_parameters())
    if set(ck.params) != set(named):
        missing = set(named) ^ set(ck.params)
        raise CheckpointFormatError(f"shape manifest mismatch: {sorted(missing)}")
    for name, arr in ck.params.items():
        if arr.shape != named[name].array.shape:
            raise CheckpointFormatError(
                f"shape manifest mismatch: {name} is {arr.shape}, "
                f"model wants {named[name].array.shape}")
        named[name].array[...] = arr
    return model
