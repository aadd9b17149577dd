"""Stacked DyMoE graph model, forward pass and checkpoint container.

Checkpoint layout (little-endian)::

    magic    8 bytes  b"DYMOECK1"
    header   9 x u32  version, width n, blocks t, k, layers T,
                      n_features, n_classes, mode (0 dense / 1 sparse),
                      flags (bit 0: arrival gates, bit 1: input frozen)
    classes  n_classes x i64
    params   repeated: u32 ndim, ndim x u32 shape, float64 data

Parameters appear in declaration order: input weight, input bias; then per
layer ``W^P`` followed by, for each expert i, ``W^Q W^K W^V W1 b1 W2 b2 g_i
q_i p_i``; then readout weight and bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .diffmath import DiffValue
from .expert import ExpertParams
from .graph import EgoBatch
from .layer import DyMoELayerState, LayerOutput, all_params, layer_forward, new_layer, trainable_params

MAGIC = b"DYMOECK1"
VERSION = 1
MODES = ("dense", "sparse")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelState:
    n_features: int
    width: int
    k: int
    mode: str
    input_w: DiffValue
    input_b: DiffValue
    layers: list[DyMoELayerState]
    readout_w: DiffValue
    readout_b: DiffValue
    classes: list[int] = field(default_factory=list)
    input_frozen: bool = False

    @property
    def t(self) -> int:
        return self.layers[0].t if self.layers else 0

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_index(self, labels) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lookup[int(y)] for y in np.atleast_1d(labels)], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"label {exc.args[0]} not in readout") from None

    def params(self) -> list[DiffValue]:
        out = [self.input_w, self.input_b]
        for layer in self.layers:
            out += all_params(layer)
        return out + [self.readout_w, self.readout_b]

    def trainable(self) -> list[DiffValue]:
        out = [] if self.input_frozen else [self.input_w, self.input_b]
        for layer in self.layers:
            out += trainable_params(layer)
        return out + [self.readout_w, self.readout_b]

    def freeze_input(self) -> None:
        self.input_frozen = True
        for p in (self.input_w, self.input_b):
            p.requires_grad = False
            p.zero_grad()

    def widen_readout(self, new_classes, rng: np.random.Generator) -> None:
        add = [int(c) for c in new_classes if int(c) not in self.classes]
        if not add:
            return
        bound = 1.0 / np.sqrt(self.width)
        w = np.vstack([self.readout_w.data, rng.uniform(-bound, bound, size=(len(add), self.width))])
        b = np.concatenate([self.readout_b.data, rng.uniform(-bound, bound, size=len(add))])
        self.readout_w = dm.parameter(w, name="readout_w")
        self.readout_b = dm.parameter(b, name="readout_b")
        self.classes.extend(add)

    def expert_checksum(self, upto: int) -> float:
        """Sum of the absolute parameters of experts ``0..upto-1`` in every layer."""
        return float(sum(np.abs(p.data).sum() for layer in self.layers
                         for e in layer.experts[:upto] for p in e.params()))


def init_model(n_features: int, width: int, num_layers: int, k: int, mode: str,
               rng: np.random.Generator, use_arrival: bool = True) -> ModelState:
    """Model with no experts yet; call ``add_expert`` on each layer before use."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    bound = 1.0 / np.sqrt(n_features)
    return ModelState(
        n_features=n_features,
        width=width,
        k=k,
        mode=mode,
        input_w=dm.parameter(rng.uniform(-bound, bound, size=(width, n_features)), name="input_w"),
        input_b=dm.parameter(rng.uniform(-bound, bound, size=width), name="input_b"),
        layers=[new_layer(width, k, rng, use_arrival) for _ in range(num_layers)],
        readout_w=dm.parameter(np.zeros((0, width)), name="readout_w"),
        readout_b=dm.parameter(np.zeros(0), name="readout_b"),
    )


@dataclass
class ForwardResult:
    logits: DiffValue
    embeddings: DiffValue
    layer_inputs: list[DiffValue]
    layer_outputs: list[LayerOutput]


def embed_input(model: ModelState, features: np.ndarray) -> DiffValue:
    x = DiffValue(features)
    return dm.add(dm.matmul(x, dm.transpose(model.input_w)), model.input_b)


def forward(model: ModelState, batch: EgoBatch, training: bool = False,
            rng: np.random.Generator | None = None, force_expert: int | None = None,
            exact_beta: bool = False, mode: str | None = None) -> ForwardResult:
    mode = mode or model.mode
    h = embed_input(model, batch.features)
    inputs, outs = [], []
    for depth, (layer, blk) in enumerate(zip(model.layers, batch.layers)):
        inputs.append(h)
        res = layer_forward(
            layer, h, blk, mode=mode, training=training, rng=rng,
            force_expert=force_expert,
            exact_beta_blocks=batch.blocks[depth] if exact_beta else None,
        )
        outs.append(res)
        h = res.h
    logits = dm.add(dm.matmul(h, dm.transpose(model.readout_w)), model.readout_b)
    return ForwardResult(logits=logits, embeddings=h, layer_inputs=inputs, layer_outputs=outs)


# -- checkpoint ------------------------------------------------------------
def _ordered_arrays(model: ModelState) -> list[np.ndarray]:
    out = [model.input_w.data, model.input_b.data]
    for layer in model.layers:
        out.append(layer.proj.data)
        for i, e in enumerate(layer.experts):
            out += [p.data for p in e.params()]
            out += [layer.gates[i].data, layer.noise[i].data, layer.arrival[i].data]
    return out + [model.readout_w.data, model.readout_b.data]


def checkpoint_bytes(model: ModelState) -> bytes:
    use_arrival = model.layers[0].use_arrival if model.layers else True
    flags = int(use_arrival) | (int(model.input_frozen) << 1)
    parts = [MAGIC, struct.pack("<9I", VERSION, model.width, model.t, model.k, len(model.layers),
                                model.n_features, model.num_classes, MODES.index(model.mode), flags)]
    parts.append(np.asarray(model.classes, dtype="<i8").tobytes())
    for arr in _ordered_arrays(model):
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: ModelState, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    return path


def load_checkpoint(path_or_bytes) -> ModelState:
    raw = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) else Path(path_or_bytes).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError("not a DyMoE checkpoint")
    off = 8
    version, n, t, k, n_layers, n_feat, n_cls, mode, flags = struct.unpack_from("<9I", raw, off)
    off += 36
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    classes = np.frombuffer(raw, dtype="<i8", count=n_cls, offset=off).tolist()
    off += 8 * n_cls

    def take():
        nonlocal off
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        return arr

    use_arrival = bool(flags & 1)
    input_w, input_b = take(), take()
    layers = []
    for _ in range(n_layers):
        layer = DyMoELayerState(width=n, k=k, use_arrival=use_arrival)
        layer.proj = dm.parameter(take(), name="proj")
        for _ in range(t):
            arrays = {f: take() for f in ExpertParams.FIELDS}
            layer.experts.append(ExpertParams.from_arrays(arrays))
            layer.gates.append(dm.parameter(take(), name="gate"))
            layer.noise.append(dm.parameter(take(), name="noise"))
            layer.arrival.append(dm.parameter(take(), name="arrival"))
        for e in layer.experts[:-1]:
            e.set_trainable(False)
        layer.frozen_below = max(t - 1, 0)
        layers.append(layer)
    readout_w, readout_b = take(), take()
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes in checkpoint")
    model = ModelState(
        n_features=n_feat, width=n, k=k, mode=MODES[mode],
        input_w=dm.parameter(input_w, name="input_w"), input_b=dm.parameter(input_b, name="input_b"),
        layers=layers,
        readout_w=dm.parameter(readout_w.reshape(n_cls, n), name="readout_w"),
        readout_b=dm.parameter(readout_b, name="readout_b"),
        classes=[int(c) for c in classes],
    )
    if flags & 2:
        model.freeze_input()
    return model
