"""End-to-end training with momentum SGD, plus checkpoint files.

Checkpoint layout (little-endian)::

    b"SCNC" | u32 version | u32 header length | JSON header | float32 arrays

The JSON header holds the model kind, network config, epoch counter, loss
history and a directory of ``{name, shape, offset}`` entries; offsets are
byte positions relative to the start of the array block.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import CheckpointError, InvalidInputError
from .heatmap import HeatmapConfig, target_stack
from .model import MODEL_KINDS, NetConfig, Params, build, forward

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SCNC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 30
    sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidInputError("batch_size and epochs must be >= 1")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")

    @property
    def heatmap_config(self) -> HeatmapConfig:
        return HeatmapConfig(sigma=self.sigma)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)   # parameter name -> array

    @classmethod
    def zeros_like(cls, params: Params) -> "OptimizerState":
        return cls({n: np.zeros_like(t.data) for n, t in params.named_parameters()})


def batch_arrays(samples: Sequence, config: Optional[HeatmapConfig] = None, dtype=np.float32):
    """Stack images to ``[B,1,H,W]`` and, if ``config`` is given, targets to ``[B,N,H,W]``."""
    if not samples:
        raise InvalidInputError("empty batch")
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise InvalidInputError(f"batch images differ in shape: {sorted(shapes)}")
    images = np.stack([s.image for s in samples])[:, None].astype(dtype)
    if config is None:
        return images
    h, w = samples[0].image.shape
    targets = np.stack([target_stack(s.landmarks, h, w, config) for s in samples]).astype(dtype)
    return images, targets


def compute_loss(params: Params, batch: Sequence, heatmap_config: HeatmapConfig = HeatmapConfig()) -> T.Tensor:
    """Mean over the batch of the per-sample heatmap MSE.

    All samples share one shape, so this equals a single MSE over the
    stacked ``[B, N, H, W]`` predictions.
    """
    dtype = next(iter(params.tensors.values())).dtype
    images, targets = batch_arrays(batch, heatmap_config, dtype)
    pred = forward(params, images)
    if pred.shape != targets.shape:
        raise InvalidInputError(f"prediction shape {pred.shape} != target shape {targets.shape}")
    return T.mse_loss(pred, targets)


def loss_and_grads(params: Params, batch: Sequence, heatmap_config: HeatmapConfig = HeatmapConfig()) -> float:
    """Forward + backward; gradients land on ``params``' tensors."""
    with T.Tape() as tape:
        loss = compute_loss(params, batch, heatmap_config)
    T.backward(tape, loss, params.parameters())
    return loss.item()


def sgd_step(params: Params, grads: Optional[dict], state: OptimizerState, hp: Hyperparams) -> None:
    """In place: ``v <- momentum * v - lr * g``, then ``p <- p + v``.

    ``grads`` maps parameter names to arrays; ``None`` uses each tensor's ``.grad``.
    """
    for name, p in params.named_parameters():
        g = p.grad if grads is None else grads[name]
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p.data)
        if g is None or g.shape != p.shape or v.shape != p.shape:
            raise InvalidInputError(f"gradient/velocity shape mismatch for {name}")
        v *= p.data.dtype.type(hp.momentum)
        v -= p.data.dtype.type(hp.learning_rate) * g
        p.data += v


@dataclass
class TrainResult:
    params: Params
    history: list
    state: OptimizerState
    epoch: int


def train(model_kind, dataset: Sequence, hp: Hyperparams = Hyperparams(),
          net_config: Optional[NetConfig] = None,
          on_epoch: Optional[Callable[[int, float], object]] = None) -> TrainResult:
    """Train from a fresh seeded initialisation (or from given ``Params``).

    ``model_kind`` is ``"scn"``, ``"baseline"`` or an existing ``Params``.
    Each epoch shuffles the data with a seeded Fisher-Yates pass and keeps
    the last partial batch. The history holds the sample-weighted mean
    loss of each epoch, measured before each step's update. A truthy
    return from ``on_epoch`` stops training after that epoch.
    """
    if not dataset:
        raise InvalidInputError("cannot train on an empty dataset")
    if isinstance(model_kind, Params):
        params = model_kind
    else:
        if model_kind not in MODEL_KINDS:
            raise InvalidInputError(f"unknown model kind {model_kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
        if net_config is None:
            h, w = dataset[0].image.shape
            net_config = NetConfig(height=h, width=w, n_landmarks=len(dataset[0].landmarks))
        params = build(model_kind, net_config)

    hm = hp.heatmap_config
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(hp.seed)
    order = np.arange(len(dataset))
    history = []
    epochs_run = 0
    for epoch in range(hp.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), hp.batch_size):
            batch = [dataset[i] for i in order[start:start + hp.batch_size]]
            loss = loss_and_grads(params, batch, hm)
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss became {loss} in epoch {epoch}")
            sgd_step(params, None, state, hp)
            total += loss * len(batch)
        history.append(total / len(dataset))
        epochs_run = epoch + 1
        log.debug("epoch %d loss %.6g", epoch, history[-1])
        if on_epoch is not None and on_epoch(epoch, history[-1]):
            break
    return TrainResult(params, history, state, epochs_run)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    kind: str
    config: NetConfig
    params: dict                    # name -> float32 array
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    history: list = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_training(cls, result: TrainResult) -> "Checkpoint":
        p = result.params
        return cls(p.kind, p.config, {n: t.data for n, t in p.named_parameters()},
                   dict(result.state.velocity), result.epoch, list(result.history))

    def to_params(self) -> Params:
        params = build(self.kind, self.config)
        for name, t in params.tensors.items():
            if name not in self.params:
                raise CheckpointError(f"checkpoint lacks parameter {name!r}")
            arr = self.params[name]
            if arr.shape != t.shape:
                raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {t.shape}")
            t.data = np.array(arr, dtype=np.float32)
        return params


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = [(f"param/{n}", a) for n, a in ckpt.params.items()]
    arrays += [(f"velocity/{n}", a) for n, a in ckpt.velocity.items()]
    directory, blobs, offset = [], [], 0
    for name, a in arrays:
        raw = np.ascontiguousarray(a, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "kind": ckpt.kind,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "history": [float(v) for v in ckpt.history],
        "arrays": directory,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", ckpt.version, len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path, expected_kind: Optional[str] = None) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {buf[:4]!r}, not a checkpoint")
    if len(buf) < 12:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    version, hlen = struct.unpack("<II", buf[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if len(buf) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
        kind = header["kind"]
        config = NetConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({exc})") from None
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: checkpoint holds a {kind!r} model, {expected_kind!r} requested")

    body = buf[12 + hlen:]
    params, velocity = {}, {}
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        start, end = entry["offset"], entry["offset"] + 4 * n
        if end > len(body):
            raise CheckpointError(f"{path}: truncated array data for {entry['name']!r}")
        arr = np.frombuffer(body[start:end], dtype="<f4").astype(np.float32).reshape(shape)
        group, _, name = entry["name"].partition("/")
        {"param": params, "velocity": velocity}.get(group, {})[name] = arr
    return Checkpoint(kind, config, params, velocity, int(header.get("epoch", 0)),
                      list(header.get("history", [])), version)
