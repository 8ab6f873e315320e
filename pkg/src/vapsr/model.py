"""Model configurations and the network builder.

A :class:`ModelConfig` declaratively describes one network: the feature
extraction conv, a stack of vast-receptive-field attention blocks (VABs),
a grouped refinement conv with a long residual, and a sub-pixel upsampling
head. The same declarative layer plan drives both the runtime network and
the complexity accounting in :mod:`vapsr.analysis`, so parameter counts
are additive by construction.

Block anatomy, in forward order:

    proj_in (width -> expand) -> GELU -> attention -> proj_out -> residual
    -> pixel norm

where the attention branch is either a single dense conv (the early
design stages) or the depthwise-separable large-kernel chain (pointwise
1x1, depthwise 5x5, depthwise dilated k x k), gating the feature it hangs
off via an element-wise product. ``attn_position`` selects whether the
branch sits between the two projections ("mid") or after the second one
("post"); ``attention_order`` selects where the pointwise conv sits in
the chain ("1-5-7" first, "5-7-1" last).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import GradTape, Param, Value
from .errors import ConfigError, ShapeError
from .nn_ops import ConvSpec
from .tensor import STORAGE_DTYPE, Tensor

IN_CHANNELS = 3
OUT_CHANNELS = 3
PIXEL_NORM_EPS = 1e-6
CONFIG_FORMAT_VERSION = 1

ATTENTION_ORDERS = ("1-5-7", "5-7-1")
DW_KERNEL = 5  # the non-dilated depthwise conv in the attention chain


@dataclass(frozen=True)
class ModelConfig:
    """Declarative description of one network variant."""

    scale: int
    n_blocks: int
    width: int
    expand_width: int
    attention_order: str
    attn_kernel: int
    attn_dilation: int
    tail_groups: int
    up_layers: tuple[tuple[int, int], ...]
    variant_tag: str
    body_kernel: int = 1
    attn_style: str = "lka"
    attn_position: str = "mid"
    use_pixel_norm: bool = True
    with_bias: bool = True

    def validate(self) -> None:
        """Raise :class:`ConfigError` naming the first violated invariant."""
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks must be >= 0, got {self.n_blocks}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.expand_width < self.width:
            raise ConfigError(
                f"expand_width ({self.expand_width}) must be >= width ({self.width})"
            )
        if self.attention_order not in ATTENTION_ORDERS:
            raise ConfigError(
                f"attention_order must be one of {ATTENTION_ORDERS}, got "
                f"{self.attention_order!r}"
            )
        if self.attn_style not in ("lka", "single"):
            raise ConfigError(f"attn_style must be 'lka' or 'single', got {self.attn_style!r}")
        if self.attn_position not in ("mid", "post"):
            raise ConfigError(
                f"attn_position must be 'mid' or 'post', got {self.attn_position!r}"
            )
        for field_name, k in (("attn_kernel", self.attn_kernel), ("body_kernel", self.body_kernel)):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{field_name} must be odd and >= 1, got {k}")
        if self.attn_dilation < 1:
            raise ConfigError(f"attn_dilation must be >= 1, got {self.attn_dilation}")
        if self.tail_groups < 1 or self.width % self.tail_groups:
            raise ConfigError(
                f"tail_groups ({self.tail_groups}) must be >= 1 and divide width ({self.width})"
            )
        if not self.up_layers:
            raise ConfigError("up_layers must contain at least one (channels, shuffle) pair")
        ch = self.width
        shuffle_product = 1
        for idx, (c_out, r) in enumerate(self.up_layers):
            if c_out < 1 or r < 1:
                raise ConfigError(f"up_layers[{idx}] has non-positive entries: {(c_out, r)}")
            if c_out % (r * r):
                raise ConfigError(
                    f"up_layers[{idx}]: conv channels {c_out} not divisible by shuffle "
                    f"factor squared {r * r}"
                )
            ch = c_out // (r * r)
            shuffle_product *= r
        if shuffle_product != self.scale:
            raise ConfigError(
                f"product of shuffle factors ({shuffle_product}) != scale ({self.scale})"
            )
        if ch != OUT_CHANNELS:
            raise ConfigError(
                f"up_layers must end at {OUT_CHANNELS} channels, got {ch}"
            )
        if not self.variant_tag:
            raise ConfigError("variant_tag must be a non-empty string")

    # -- JSON round trip ----------------------------------------------------

    def to_json(self) -> str:
        doc = asdict(self)
        doc["up_layers"] = [list(pair) for pair in self.up_layers]
        doc["format_version"] = CONFIG_FORMAT_VERSION
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config JSON must be an object")
        version = doc.pop("format_version", None)
        if version != CONFIG_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported config format_version {version!r} "
                f"(expected {CONFIG_FORMAT_VERSION})"
            )
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        missing = known - set(doc)
        if missing:
            raise ConfigError(f"missing config fields: {sorted(missing)}")
        doc["up_layers"] = tuple(tuple(int(v) for v in pair) for pair in doc["up_layers"])
        config = cls(**doc)
        config.validate()
        return config


# ---------------------------------------------------------------------------
# Layer plan: the single source of truth for parameters and accounting


@dataclass(frozen=True)
class LayerSpec:
    """One accounted operation: a conv, a pixel norm, or a gating product.

    ``area_factor`` is the layer's output area relative to the network
    input area (it grows by r^2 after every sub-pixel shuffle).
    """

    name: str
    kind: str  # "conv" | "norm" | "mul"
    conv: ConvSpec | None = None
    channels: int = 0
    area_factor: int = 1


def _attention_convs(config: ModelConfig, channels: int) -> list[tuple[str, ConvSpec]]:
    bias = config.with_bias
    if config.attn_style == "single":
        return [("attn", ConvSpec(channels, channels, config.attn_kernel,
                                  dilation=config.attn_dilation, has_bias=bias))]
    pw = ("attn_pw", ConvSpec(channels, channels, 1, has_bias=bias))
    dw = ("attn_dw", ConvSpec(channels, channels, DW_KERNEL, groups=channels, has_bias=bias))
    dwd = ("attn_dwd", ConvSpec(channels, channels, config.attn_kernel,
                                dilation=config.attn_dilation, groups=channels, has_bias=bias))
    if config.attention_order == "1-5-7":
        return [pw, dw, dwd]
    return [dw, dwd, pw]


def attention_rf_layers(config: ModelConfig) -> list[tuple[int, int]]:
    """(kernel, dilation) pairs of the attention chain, in forward order."""
    channels = config.expand_width if config.attn_position == "mid" else config.width
    return [(spec.kernel, spec.dilation) for _, spec in _attention_convs(config, channels)]


def layer_plan(config: ModelConfig) -> list[LayerSpec]:
    """Every parameterized or multiply-counted operation, in forward order."""
    config.validate()
    bias = config.with_bias
    w, e = config.width, config.expand_width
    plan: list[LayerSpec] = []
    plan.append(LayerSpec("extract", "conv", ConvSpec(IN_CHANNELS, w, 3, has_bias=bias)))

    attn_ch = e if config.attn_position == "mid" else w
    for i in range(config.n_blocks):
        p = f"block{i:02d}"
        proj_in = LayerSpec(f"{p}.proj_in", "conv", ConvSpec(w, e, config.body_kernel, has_bias=bias))
        proj_out = LayerSpec(f"{p}.proj_out", "conv", ConvSpec(e, w, config.body_kernel, has_bias=bias))
        attn = [LayerSpec(f"{p}.{n}", "conv", s) for n, s in _attention_convs(config, attn_ch)]
        gate = LayerSpec(f"{p}.attn_mul", "mul", channels=attn_ch)
        if config.attn_position == "mid":
            plan += [proj_in, *attn, gate, proj_out]
        else:
            plan += [proj_in, proj_out, *attn, gate]
        if config.use_pixel_norm:
            plan.append(LayerSpec(f"{p}.norm", "norm", channels=w))

    plan.append(LayerSpec("tail", "conv",
                          ConvSpec(w, w, 3, groups=config.tail_groups, has_bias=bias)))

    ch = w
    area = 1
    for idx, (c_out, r) in enumerate(config.up_layers):
        plan.append(LayerSpec(f"up{idx}", "conv",
                              ConvSpec(ch, c_out, 3, has_bias=bias), area_factor=area))
        ch = c_out // (r * r)
        area *= r * r
    return plan


def expected_param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape, in deterministic plan order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in layer_plan(config):
        if layer.kind == "conv":
            shapes[f"{layer.name}.w"] = layer.conv.weight_shape
            if layer.conv.has_bias:
                shapes[f"{layer.name}.b"] = (layer.conv.out_channels,)
        elif layer.kind == "norm":
            shapes[f"{layer.name}.gamma"] = (layer.channels,)
            shapes[f"{layer.name}.beta"] = (layer.channels,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded parameter initialization.

    Conv weights draw from a Kaiming-style fan-in scaled uniform
    U(-b, b) with b = sqrt(6 / fan_in); biases start at zero and the
    pixel-norm affine starts as identity (gamma 1, beta 0). The generator
    is PCG64, so runs are reproducible bit for bit on one platform.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, np.ndarray] = {}
    for name, shape in expected_param_shapes(config).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape).astype(STORAGE_DTYPE)
        elif name.endswith(".gamma"):
            arr = np.ones(shape, dtype=STORAGE_DTYPE)
        else:  # biases and beta
            arr = np.zeros(shape, dtype=STORAGE_DTYPE)
        arr.flags.writeable = False
        params[name] = arr
    return params


# ---------------------------------------------------------------------------
# Runtime network


class Network:
    """An immutable-config network with a replaceable parameter dict."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        config.validate()
        self.config = config
        self._specs = {l.name: l for l in layer_plan(config)}
        self._expected = expected_param_shapes(config)
        self._params: dict[str, np.ndarray] = {}
        self.set_params(params)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self._params

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        extra = set(params) - set(self._expected)
        if extra:
            raise ShapeError(f"unexpected parameters: {sorted(extra)}")
        missing = set(self._expected) - set(params)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, shape in self._expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(
                    f"parameter '{name}' has shape {params[name].shape}, expected {shape}"
                )
        self._params = dict(params)

    def num_params(self) -> int:
        return sum(p.size for p in self._params.values())

    # -- forward ------------------------------------------------------------

    def _conv(self, tape, v: Value, name: str) -> Value:
        spec = self._specs[name].conv
        weight = Param(f"{name}.w", self._params[f"{name}.w"])
        bias = Param(f"{name}.b", self._params[f"{name}.b"]) if spec.has_bias else None
        return ag.conv2d(tape, v, spec, weight, bias, name)

    def _attention(self, tape, v: Value, prefix: str, channels: int) -> Value:
        for name, _spec in _attention_convs(self.config, channels):
            v = self._conv(tape, v, f"{prefix}.{name}")
        return v

    def _block(self, tape, v: Value, index: int) -> Value:
        cfg = self.config
        p = f"block{index:02d}"
        t = self._conv(tape, v, f"{p}.proj_in")
        t = ag.gelu(tape, t, f"{p}.gelu")
        if cfg.attn_position == "mid":
            attn = self._attention(tape, t, p, cfg.expand_width)
            gated = ag.mul(tape, attn, t, f"{p}.attn_mul")
            u = self._conv(tape, gated, f"{p}.proj_out")
        else:
            u = self._conv(tape, t, f"{p}.proj_out")
            attn = self._attention(tape, u, p, cfg.width)
            u = ag.mul(tape, attn, u, f"{p}.attn_mul")
        y = ag.add(tape, u, v, f"{p}.residual")
        if cfg.use_pixel_norm:
            y = ag.pixel_norm(tape, y,
                              Param(f"{p}.norm.gamma", self._params[f"{p}.norm.gamma"]),
                              Param(f"{p}.norm.beta", self._params[f"{p}.norm.beta"]),
                              PIXEL_NORM_EPS, f"{p}.norm")
        return y

    def _features(self, tape, v: Value) -> Value:
        v0 = self._conv(tape, v, "extract")
        h = v0
        for i in range(self.config.n_blocks):
            h = self._block(tape, h, i)
        t = self._conv(tape, h, "tail")
        return ag.add(tape, t, v0, "residual")

    def forward(self, x: Tensor, tape: GradTape | None = None) -> Tensor:
        """Map an (n, 3, h, w) input to (n, 3, h*scale, w*scale).

        No clamping happens inside the network; range handling is an I/O
        concern.
        """
        if x.shape[1] != IN_CHANNELS:
            raise ShapeError(f"input must have {IN_CHANNELS} channels, got {x.shape[1]}")
        v = tape.source(x) if tape is not None else Value(x, None)
        u = self._features(tape, v)
        for idx, (_c, r) in enumerate(self.config.up_layers):
            u = self._conv(tape, u, f"up{idx}")
            u = ag.pixel_shuffle(tape, u, r, f"up{idx}.shuffle")
        if tape is not None:
            tape.output = u
        return u.tensor

    def forward_features(self, x: Tensor) -> Tensor:
        """Pre-upsampler feature map (refinement output plus residual)."""
        if x.shape[1] != IN_CHANNELS:
            raise ShapeError(f"input must have {IN_CHANNELS} channels, got {x.shape[1]}")
        return self._features(None, Value(x, None)).tensor

    def forward_block(self, index: int, x: Tensor, tape: GradTape | None = None) -> Tensor:
        """Run a single VAB on a feature tensor of ``width`` channels."""
        if x.shape[1] != self.config.width:
            raise ShapeError(
                f"block input must have {self.config.width} channels, got {x.shape[1]}"
            )
        v = tape.source(x) if tape is not None else Value(x, None)
        y = self._block(tape, v, index)
        if tape is not None:
            tape.output = y
        return y.tensor

    def forward_attention_branch(self, index: int, x: Tensor,
                                 tape: GradTape | None = None) -> Tensor:
        """Run only the attention chain of one block (no gating product)."""
        channels = (self.config.expand_width if self.config.attn_position == "mid"
                    else self.config.width)
        if x.shape[1] != channels:
            raise ShapeError(f"attention input must have {channels} channels, got {x.shape[1]}")
        v = tape.source(x) if tape is not None else Value(x, None)
        y = self._attention(tape, v, f"block{index:02d}", channels)
        if tape is not None:
            tape.output = y
        return y.tensor


def build(config: ModelConfig, seed: int = 0,
          params: dict[str, np.ndarray] | None = None) -> Network:
    """Build a network from a config, seeding fresh weights unless given."""
    config.validate()
    if params is None:
        params = init_params(config, seed)
    return Network(config, params)


# ---------------------------------------------------------------------------
# Presets: the shipped model zoo
#
# Fields the architecture description leaves open (upsampler widths, the
# attention width of the small model, tail conv grouping, per-scale block
# counts, bias flags) carry the values frozen by the calibration sweep in
# vapsr.analysis; `vapsr calibrate` reproduces the selection.


def _roadmap(tag: str, **overrides) -> ModelConfig:
    base = ModelConfig(
        scale=4, n_blocks=10, width=64, expand_width=64,
        attention_order="5-7-1", attn_kernel=7, attn_dilation=3,
        tail_groups=1, up_layers=((48, 4),), variant_tag=tag,
        body_kernel=3, attn_style="single", attn_position="post",
        use_pixel_norm=False,
    )
    return replace(base, **overrides)


_VAPSR_X4 = ModelConfig(
    scale=4, n_blocks=21, width=48, expand_width=64,
    attention_order="1-5-7", attn_kernel=5, attn_dilation=3,
    tail_groups=1, up_layers=((64, 2), (12, 2)), variant_tag="vapsr_x4",
)

PRESETS: dict[str, ModelConfig] = {
    # final models
    "vapsr_x4": _VAPSR_X4,
    "vapsr_x3": replace(_VAPSR_X4, scale=3, n_blocks=22, tail_groups=2,
                        up_layers=((45, 3), (3, 1)), variant_tag="vapsr_x3"),
    "vapsr_x2": replace(_VAPSR_X4, scale=2, tail_groups=2,
                        up_layers=((60, 2), (3, 1)), variant_tag="vapsr_x2"),
    "vapsr_s": replace(_VAPSR_X4, n_blocks=11, width=32, tail_groups=2,
                       variant_tag="vapsr_s"),
    # design-roadmap stages (all x4)
    "roadmap_i": _roadmap("i", attn_kernel=1, attn_dilation=1),
    "roadmap_ii_k3": _roadmap("ii_k3", attn_kernel=3, attn_dilation=1),
    "roadmap_ii_k9": _roadmap("ii_k9", attn_kernel=9, attn_dilation=1),
    "roadmap_iv_dw": _roadmap("iv_dw", attn_style="lka"),
    "roadmap_iv": _roadmap("iv", attn_style="lka", body_kernel=1),
    "roadmap_v": _roadmap("v", attn_style="lka", body_kernel=1, use_pixel_norm=True),
    "roadmap_vi": _roadmap("vi", attn_style="lka", body_kernel=1,
                           use_pixel_norm=True, attn_position="mid"),
    "roadmap_vi_plus": _roadmap("vi_plus", attn_style="lka", body_kernel=1,
                                use_pixel_norm=True, attn_position="mid", tail_groups=2),
    "roadmap_vi_pp": _roadmap("vi_pp", attn_style="lka", body_kernel=1,
                              use_pixel_norm=True, attn_position="mid", tail_groups=2,
                              width=32),
    "roadmap_vii": _roadmap("vii", attn_style="lka", body_kernel=1,
                            use_pixel_norm=True, attn_position="mid", tail_groups=2,
                            width=32, up_layers=((56, 2), (12, 2))),
    # attention receptive-field / depth sweeps on the stage-vii skeleton
    "rf_k5_b11": _roadmap("k5_b11", attn_style="lka", body_kernel=1,
                          use_pixel_norm=True, attn_position="mid", tail_groups=2,
                          width=32, up_layers=((56, 2), (12, 2)),
                          attn_kernel=5, n_blocks=11),
    "rf_k5_b12": _roadmap("k5_b12", attn_style="lka", body_kernel=1,
                          use_pixel_norm=True, attn_position="mid", tail_groups=2,
                          width=32, up_layers=((56, 2), (12, 2)),
                          attn_kernel=5, n_blocks=12),
    "rf_k9_b9": _roadmap("k9_b9", attn_style="lka", body_kernel=1,
                         use_pixel_norm=True, attn_position="mid", tail_groups=2,
                         width=32, up_layers=((56, 2), (12, 2)),
                         attn_kernel=9, n_blocks=9),
    "rf_k11_b8": _roadmap("k11_b8", attn_style="lka", body_kernel=1,
                          use_pixel_norm=True, attn_position="mid", tail_groups=2,
                          width=32, up_layers=((56, 2), (12, 2)),
                          attn_kernel=11, n_blocks=8),
    # desk-scale model for the toy trainer and tests
    "toy_x4": ModelConfig(
        scale=4, n_blocks=2, width=8, expand_width=16,
        attention_order="1-5-7", attn_kernel=5, attn_dilation=3,
        tail_groups=1, up_layers=((16, 2), (12, 2)), variant_tag="toy",
    ),
}

#: Catalog order: roadmap evolution, then the ablation sweeps, then the
#: shipped models. Consecutive-row deltas in the roadmap report follow
#: this order.
CATALOG_ORDER = (
    "roadmap_i", "roadmap_ii_k3", "roadmap_ii_k9", "roadmap_iv_dw", "roadmap_iv",
    "roadmap_v", "roadmap_vi", "roadmap_vi_plus", "roadmap_vi_pp", "roadmap_vii",
    "rf_k5_b11", "rf_k5_b12", "rf_k9_b9", "rf_k11_b8",
    "vapsr_x4", "vapsr_s",
)


def variant_catalog() -> list[ModelConfig]:
    """All design-roadmap and ablation variants plus the shipped models."""
    return [PRESETS[name] for name in CATALOG_ORDER]
