"""Complexity accounting: parameters, multiply-accumulates, receptive fields.

Everything here is exact integer arithmetic over the same layer plan the
network builder uses, so reported parameter counts equal the number of
scalars in a built network by construction.

Multiply-accumulate convention (documented in every report header):

* one MAC per multiply; additions are not double counted;
* convolutions cost k^2 * (C_in / groups) * C_out per output pixel,
  evaluated at the layer's true output size (which grows through each
  sub-pixel shuffle);
* the element-wise attention product costs C per pixel;
* bias additions, normalization, and activations are excluded.

Totals are quoted for a fixed ground-truth output size (1280x720 by
default), i.e. the network input area is the output area divided by
scale^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product

from .errors import ConfigError, ShapeError
from .model import (
    PRESETS,
    ModelConfig,
    attention_rf_layers,
    layer_plan,
    variant_catalog,
)

DEFAULT_GT_H = 720
DEFAULT_GT_W = 1280


@dataclass(frozen=True)
class LayerCost:
    """Cost of one accounted layer at a fixed output size."""

    name: str
    params: int
    macs: int
    rf_kernel: int
    rf_dilation: int


def _conv_params(spec) -> int:
    p = spec.kernel * spec.kernel * (spec.in_channels // spec.groups) * spec.out_channels
    if spec.has_bias:
        p += spec.out_channels
    return p


def param_count(config: ModelConfig) -> int:
    """Exact number of scalars in a network built from ``config``."""
    total = 0
    for layer in layer_plan(config):
        if layer.kind == "conv":
            total += _conv_params(layer.conv)
        elif layer.kind == "norm":
            total += 2 * layer.channels
    return total


def layer_costs(config: ModelConfig, gt_h: int = DEFAULT_GT_H,
                gt_w: int = DEFAULT_GT_W) -> list[LayerCost]:
    """Per-layer parameter and MAC accounting at the given GT output size."""
    s2 = config.scale * config.scale
    gt_area = gt_h * gt_w
    if gt_h < 1 or gt_w < 1:
        raise ShapeError(f"GT dims must be positive, got {gt_h}x{gt_w}")
    if gt_area % s2:
        raise ShapeError(
            f"GT area {gt_h}x{gt_w} is not divisible by scale^2 ({s2}); "
            "cannot place the network input grid"
        )
    in_area = gt_area // s2

    costs: list[LayerCost] = []
    for layer in layer_plan(config):
        area = in_area * layer.area_factor
        if layer.kind == "conv":
            spec = layer.conv
            macs = spec.kernel * spec.kernel * (spec.in_channels // spec.groups) \
                * spec.out_channels * area
            costs.append(LayerCost(layer.name, _conv_params(spec), macs,
                                   spec.kernel, spec.dilation))
        elif layer.kind == "mul":
            costs.append(LayerCost(layer.name, 0, layer.channels * area, 1, 1))
        elif layer.kind == "norm":
            costs.append(LayerCost(layer.name, 2 * layer.channels, 0, 1, 1))
    return costs


def multi_adds(config: ModelConfig, gt_h: int = DEFAULT_GT_H,
               gt_w: int = DEFAULT_GT_W) -> int:
    """Total MACs for one forward pass producing a gt_h x gt_w image."""
    return sum(c.macs for c in layer_costs(config, gt_h, gt_w))


def receptive_field(layers: list[tuple[int, int]]) -> int:
    """Receptive-field side length of a stride-1 conv stack.

    ``layers`` is a list of (kernel, dilation) pairs; the result is
    1 + sum((k - 1) * d), independent of layer order.
    """
    total = 1
    for k, d in layers:
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"kernels must be odd and >= 1, got {k}")
        if d < 1:
            raise ShapeError(f"dilations must be >= 1, got {d}")
        total += (k - 1) * d
    return total


def attention_receptive_field(config: ModelConfig) -> int:
    """Receptive field of one block's attention chain."""
    return receptive_field(attention_rf_layers(config))


# ---------------------------------------------------------------------------
# Roadmap report


@dataclass(frozen=True)
class RoadmapRow:
    """One catalog variant with its headline costs."""

    tag: str
    params: int
    multi_adds: int
    attention_rf: int
    delta_params: int | None  # vs. the previous catalog row


def roadmap_report(catalog: list[ModelConfig] | None = None,
                   gt_h: int = DEFAULT_GT_H, gt_w: int = DEFAULT_GT_W) -> list[RoadmapRow]:
    """Catalog-ordered cost table with consecutive-stage parameter deltas."""
    if catalog is None:
        catalog = variant_catalog()
    rows: list[RoadmapRow] = []
    prev: int | None = None
    for config in catalog:
        p = param_count(config)
        rows.append(RoadmapRow(
            tag=config.variant_tag,
            params=p,
            multi_adds=multi_adds(config, gt_h, gt_w),
            attention_rf=attention_receptive_field(config),
            delta_params=None if prev is None else p - prev,
        ))
        prev = p
    return rows


# ---------------------------------------------------------------------------
# Calibration of under-specified preset fields
#
# The architecture description pins most of each model but leaves a few
# fields open (upsampler conv widths, the small model's attention width,
# tail conv grouping, per-scale block counts, bias flags). The sweep below
# enumerates candidates for those fields and scores each candidate by the
# sum of relative deviations from the published parameter / Multi-Adds
# totals; the winners are frozen into ``vapsr.model.PRESETS``.


@dataclass(frozen=True)
class Target:
    """Published totals a preset is expected to reproduce."""

    params: int
    params_tol: float
    multi_adds: int | None = None
    multi_adds_tol: float = 0.05


TARGETS: dict[str, Target] = {
    "vapsr_x4": Target(342_000, 0.02, 19_500_000_000),
    "vapsr_x3": Target(337_000, 0.02, 33_600_000_000),
    "vapsr_x2": Target(329_000, 0.02, 74_000_000_000),
    "vapsr_s": Target(155_000, 0.02, 9_000_000_000),
    "roadmap_vi": Target(241_100, 0.03),
    "roadmap_vi_plus": Target(222_700, 0.03),
    "roadmap_vi_pp": Target(152_200, 0.03),
    "roadmap_vii": Target(156_000, 0.03),
    "rf_k5_b11": Target(152_000, 0.03),
    "rf_k5_b12": Target(164_000, 0.03),
    "rf_k9_b9": Target(161_000, 0.03),
    "rf_k11_b8": Target(166_000, 0.03),
}


@dataclass(frozen=True)
class CalibrationRow:
    """One candidate from a calibration sweep."""

    preset: str
    candidate: str
    params: int
    params_dev: float
    multi_adds: int | None
    multi_adds_dev: float | None
    total_dev: float
    selected: bool
    shipped: bool


def _score(config: ModelConfig, target: Target) -> tuple[int, float, int | None, float | None, float]:
    p = param_count(config)
    p_dev = (p - target.params) / target.params
    if target.multi_adds is None:
        return p, p_dev, None, None, abs(p_dev)
    ma = multi_adds(config)
    ma_dev = (ma - target.multi_adds) / target.multi_adds
    return p, p_dev, ma, ma_dev, abs(p_dev) + abs(ma_dev)


def _sweep(preset: str, candidates: list[tuple[str, ModelConfig]]) -> list[CalibrationRow]:
    target = TARGETS[preset]
    shipped = PRESETS[preset]
    scored = []
    for label, config in candidates:
        try:
            config.validate()
        except ConfigError:
            continue
        scored.append((label, config, *_score(config, target)))
    best = min(range(len(scored)), key=lambda i: scored[i][6])
    rows = []
    for i, (label, config, p, p_dev, ma, ma_dev, total) in enumerate(scored):
        rows.append(CalibrationRow(
            preset=preset, candidate=label, params=p, params_dev=p_dev,
            multi_adds=ma, multi_adds_dev=ma_dev, total_dev=total,
            selected=(i == best), shipped=(config == shipped),
        ))
    return rows


def calibration_report() -> list[CalibrationRow]:
    """Enumerate the open design fields and score them against the targets.

    Sweeps run per preset over the fields the description leaves open;
    every other field is held at its stated value (block counts and
    kernels from the ablation tables, widths from the block description).
    """
    rows: list[CalibrationRow] = []

    # x4 flagship: tail grouping, first upsampler width, bias presence.
    base = PRESETS["vapsr_x4"]
    rows += _sweep("vapsr_x4", [
        (f"tail_groups={g},up0={c},bias={b}",
         replace(base, tail_groups=g, up_layers=((c, 2), (12, 2)), with_bias=b))
        for g, c, b in product((1, 2, 4), (48, 56, 64), (True, False))
    ])

    # x3 / x2: block count, tail grouping, first upsampler width.
    base = PRESETS["vapsr_x3"]
    rows += _sweep("vapsr_x3", [
        (f"n_blocks={n},tail_groups={g},up0={c}",
         replace(base, n_blocks=n, tail_groups=g, up_layers=((c, 3), (3, 1))))
        for n, g, c in product((20, 21, 22), (1, 2, 4), (45, 54, 63, 72))
    ])
    base = PRESETS["vapsr_x2"]
    rows += _sweep("vapsr_x2", [
        (f"n_blocks={n},tail_groups={g},up0={c}",
         replace(base, n_blocks=n, tail_groups=g, up_layers=((c, 2), (3, 1))))
        for n, g, c in product((20, 21, 22), (1, 2, 4), (48, 52, 56, 60, 64))
    ])

    # small model: attention width, tail grouping, first upsampler width.
    base = PRESETS["vapsr_s"]
    rows += _sweep("vapsr_s", [
        (f"expand={e},tail_groups={g},up0={c}",
         replace(base, expand_width=e, tail_groups=g, up_layers=((c, 2), (12, 2))))
        for e, g, c in product((48, 56, 64), (1, 2, 4), (48, 56, 64))
    ])

    # roadmap stage vi: feature width and depth of the reconstruction.
    base = PRESETS["roadmap_vi"]
    rows += _sweep("roadmap_vi", [
        (f"width={w},n_blocks={n}",
         replace(base, width=w, expand_width=w, n_blocks=n))
        for w, n in product((32, 48, 64), range(8, 13))
    ])

    # stage vi+: how the tail conv is grouped.
    base = PRESETS["roadmap_vi_plus"]
    rows += _sweep("roadmap_vi_plus", [
        (f"tail_groups={g}", replace(base, tail_groups=g))
        for g in (2, 4, 8, 16)
    ])

    # stage vi++: the narrowed body width of the inverted bottleneck.
    base = PRESETS["roadmap_vi_pp"]
    rows += _sweep("roadmap_vi_pp", [
        (f"width={w}", replace(base, width=w, tail_groups=2))
        for w in (16, 24, 32, 48)
    ])

    # stage vii: first conv width of the two-conv upsampler.
    base = PRESETS["roadmap_vii"]
    rows += _sweep("roadmap_vii", [
        (f"up0={c}", replace(base, up_layers=((c, 2), (12, 2))))
        for c in (32, 40, 48, 56, 64)
    ])

    return rows
