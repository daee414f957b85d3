"""SpatialConfiguration-Net and a single-stream baseline.

The SCN has two fully convolutional parts. The local-appearance part maps
the image to ``N`` candidate heatmaps at full resolution. The
spatial-configuration part reads those candidates at a coarse resolution
through large kernels and produces ``N`` maps that are upsampled back.
The final heatmaps are the element-wise product of the two.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, InvalidInputError
from .heatmap import extract_landmarks

HEAD_SCALE = 1e-3


@dataclass(frozen=True)
class NetConfig:
    height: int = 64
    width: int = 64
    n_landmarks: int = 8
    la_channels: int = 16
    la_depth: int = 3
    la_kernel: int = 5
    la_head_kernel: int = 5
    sc_channels: int = 16
    sc_factor: int = 4
    sc_kernel: int = 11
    sc_depth: int = 3
    sc_head_bias: float = 0.1
    alpha: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_landmarks < 1:
            raise ConfigError("n_landmarks must be >= 1")
        if self.la_depth < 1 or self.sc_depth < 1:
            raise ConfigError("la_depth and sc_depth must be >= 1")
        if self.la_channels < 1 or self.sc_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.sc_factor < 1:
            raise ConfigError("sc_factor must be >= 1")
        if self.height % self.sc_factor or self.width % self.sc_factor:
            raise ConfigError(
                f"image {self.height}x{self.width} not divisible by sc_factor {self.sc_factor}")
        if self.height % 2 or self.width % 2:
            raise ConfigError("height and width must be even (baseline pools by 2)")
        if self.sc_kernel % 2 == 0 or self.la_kernel % 2 == 0 or self.la_head_kernel % 2 == 0:
            raise ConfigError("kernel sizes must be odd")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


@dataclass
class Params:
    """Named parameter tensors of one network, in a fixed order."""

    config: NetConfig
    tensors: dict = field(default_factory=dict)
    kind = "abstract"

    def parameters(self) -> list:
        return list(self.tensors.values())

    def named_parameters(self):
        return list(self.tensors.items())

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def __getitem__(self, name: str) -> T.Tensor:
        return self.tensors[name]

    def group(self, prefix: str) -> list:
        return [t for n, t in self.tensors.items() if n.startswith(prefix + ".")]

    def astype(self, dtype) -> "Params":
        return type(self)(self.config, {n: T.Tensor(t.data.astype(dtype), requires_grad=True, name=n)
                                        for n, t in self.tensors.items()})

    def copy(self) -> "Params":
        return self.astype(next(iter(self.tensors.values())).dtype)


class ScnParams(Params):
    kind = "scn"


class BaselineParams(Params):
    kind = "baseline"


def _conv_layer(rng, tensors, name, c_in, c_out, k, *, head=False, bias=0.0, dtype=np.float32):
    fan_in = c_in * k * k
    bound = math.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
    if head:
        w *= HEAD_SCALE
    tensors[f"{name}.weight"] = T.Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.weight")
    tensors[f"{name}.bias"] = T.Tensor(np.full(c_out, bias, dtype=dtype), requires_grad=True,
                                       name=f"{name}.bias")


def scn_layer_shapes(cfg: NetConfig) -> list:
    """``(name, c_in, c_out, kernel)`` for every conv layer of the SCN."""
    n, la, sc = cfg.n_landmarks, cfg.la_channels, cfg.sc_channels
    shapes = [(f"la.{i}", 1 if i == 0 else la, la, cfg.la_kernel) for i in range(cfg.la_depth)]
    shapes.append(("la.head", la, n, cfg.la_head_kernel))
    shapes += [(f"sc.{i}", n if i == 0 else sc, sc, cfg.sc_kernel) for i in range(cfg.sc_depth)]
    shapes.append(("sc.head", sc, n, cfg.sc_kernel))
    return shapes


def baseline_layer_shapes(cfg: NetConfig) -> list:
    c, n, k = cfg.la_channels, cfg.n_landmarks, cfg.la_kernel
    return [
        ("enc.0", 1, c, k),
        ("enc.1", c, c, k),
        ("mid.0", c, 2 * c, k),
        ("mid.1", 2 * c, 2 * c, k),
        ("mid.2", 2 * c, 2 * c, k),
        ("dec.0", 3 * c, c, k),
        ("head", c, n, k),
    ]


def _build(cls, shapes, cfg, dtype, head_bias=None):
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, c_in, c_out, k in shapes:
        is_head = name.endswith("head")
        bias = (head_bias or {}).get(name, 0.0)
        _conv_layer(rng, tensors, name, c_in, c_out, k, head=is_head, bias=bias, dtype=dtype)
    return cls(cfg, tensors)


def build_scn(config: NetConfig = NetConfig(), dtype=np.float32) -> ScnParams:
    """Seeded initialisation: He-uniform hidden layers, output heads scaled by 1e-3."""
    if not isinstance(config, NetConfig):
        raise ConfigError("build_scn expects a NetConfig")
    return _build(ScnParams, scn_layer_shapes(config), config, dtype,
                  head_bias={"sc.head": config.sc_head_bias})


def build_baseline(config: NetConfig = NetConfig(), dtype=np.float32) -> BaselineParams:
    if not isinstance(config, NetConfig):
        raise ConfigError("build_baseline expects a NetConfig")
    return _build(BaselineParams, baseline_layer_shapes(config), config, dtype)


def build(kind: str, config: NetConfig = NetConfig(), dtype=np.float32) -> Params:
    if kind == "scn":
        return build_scn(config, dtype)
    if kind == "baseline":
        return build_baseline(config, dtype)
    raise InvalidInputError(f"unknown model kind {kind!r}; valid kinds: scn, baseline")


MODEL_KINDS = ("scn", "baseline")


class ScnOutput(NamedTuple):
    h: T.Tensor
    h_la: T.Tensor
    h_sc: T.Tensor


def _check_image(cfg: NetConfig, image) -> T.Tensor:
    x = T.as_tensor(image)
    want = (1, cfg.height, cfg.width)
    if x.data.ndim == 2:
        x = T.Tensor(x.data[None])
    if x.data.ndim not in (3, 4) or tuple(x.shape[-3:]) != want:
        raise InvalidInputError(f"image shape {x.shape} does not match network input {want}")
    return x


def _conv(params, name, x):
    return T.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])


def scn_forward(params: ScnParams, image) -> ScnOutput:
    """Run both SCN components; accepts ``[1,H,W]`` or a batch ``[B,1,H,W]``."""
    cfg = params.config
    x = _check_image(cfg, image)
    a = cfg.alpha
    for i in range(cfg.la_depth):
        x = T.leaky_relu(_conv(params, f"la.{i}", x), a)
    h_la = _conv(params, "la.head", x)

    s = T.avg_downsample(h_la, cfg.sc_factor)
    for i in range(cfg.sc_depth):
        s = T.leaky_relu(_conv(params, f"sc.{i}", s), a)
    h_sc = T.upsample_nearest(_conv(params, "sc.head", s), cfg.sc_factor)
    return ScnOutput(T.mul(h_la, h_sc), h_la, h_sc)


def baseline_forward(params: BaselineParams, image) -> T.Tensor:
    """Encoder-decoder with one 2x pooling level and a skip connection."""
    cfg = params.config
    x = _check_image(cfg, image)
    a = cfg.alpha
    e = T.leaky_relu(_conv(params, "enc.0", x), a)
    e = T.leaky_relu(_conv(params, "enc.1", e), a)
    m = T.avg_downsample(e, 2)
    for i in range(3):
        m = T.leaky_relu(_conv(params, f"mid.{i}", m), a)
    u = T.upsample_nearest(m, 2)
    d = T.leaky_relu(_conv(params, "dec.0", T.concat([u, e])), a)
    return _conv(params, "head", d)


def forward(params: Params, image) -> T.Tensor:
    """Final heatmap stack for either model kind."""
    if params.kind == "scn":
        return scn_forward(params, image).h
    if params.kind == "baseline":
        return baseline_forward(params, image)
    raise InvalidInputError(f"unknown model kind {params.kind!r}")


def predict(params: Params, image) -> np.ndarray:
    """Landmark coordinates ``(N, 2)`` for one image (or ``(B, N, 2)`` for a batch)."""
    h = forward(params, image).data
    if h.ndim == 4:
        return np.stack([extract_landmarks(m) for m in h])
    return extract_landmarks(h)
