"""Declarative encoder descriptions with shape inference and parameter counts.

Only structure is modelled: no tensors are built. Convolutions use 'same'
padding, so a layer changes spatial size only through its stride; atrous
branches keep the spatial size.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

KINDS = ("conv", "maxpool", "resnet_block", "vgg_block", "aspp", "global_pool_branch")
ASPP_RATES = (1, 6, 12, 18)


class ArchError(ValueError):
    """Malformed spec, bad input size, or declared/inferred scale mismatch."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel: int
    stride: int
    in_ch: int
    out_ch: int
    input_ref: str = "input"
    dilation_rate: int = 1
    repeat: int = 1                  # resnet_block: number of stacked blocks
    scale: Optional[int] = None      # declared downscale relative to the input image
    rates: tuple = ASPP_RATES        # aspp only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArchError(f"{self.name}: unknown kind {self.kind!r}")
        for f in ("kernel", "stride", "in_ch", "out_ch", "dilation_rate", "repeat"):
            if getattr(self, f) < 1:
                raise ArchError(f"{self.name}: {f} must be >= 1, got {getattr(self, f)}")


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple = field(default_factory=tuple)

    def validate(self):
        seen = {"input": None}
        for layer in self.layers:
            if layer.name in seen:
                raise ArchError(f"duplicate layer name {layer.name!r}")
            if layer.input_ref not in seen:
                raise ArchError(f"{layer.name}: input {layer.input_ref!r} is not an earlier layer")
            seen[layer.name] = layer
        return self


@dataclass(frozen=True)
class LayerShape:
    name: str
    height: int
    width: int
    channels: int
    downscale: int


# --------------------------------------------------------------------------
# built-in encoders


def builtin_vggaspp():
    L = LayerSpec
    return ArchSpec("vggaspp", (
        L("VGG_block_1", "vgg_block", 7, 2, 3, 32, "input", scale=2),
        L("VGG_block_2", "vgg_block", 5, 2, 32, 64, "VGG_block_1", scale=4),
        L("VGG_block_3", "vgg_block", 3, 2, 64, 128, "VGG_block_2", scale=8),
        L("VGG_block_4", "vgg_block", 3, 2, 128, 256, "VGG_block_3", scale=16),
        L("maxpool_4", "maxpool", 3, 2, 256, 256, "VGG_block_4", scale=32),
        L("ASPP", "aspp", 3, 1, 256, 256, "maxpool_4", scale=32),
    )).validate()


def builtin_resaspp():
    # first layer takes the RGB image, so 3 input channels
    L = LayerSpec
    return ArchSpec("resaspp", (
        L("enc_block_1", "conv", 7, 2, 3, 64, "input", scale=2),
        L("enc_block_2", "maxpool", 3, 2, 64, 64, "enc_block_1", scale=4),
        L("enc_block_3", "resnet_block", 3, 2, 64, 64, "enc_block_2", repeat=3, scale=8),
        L("enc_block_4", "resnet_block", 3, 2, 64, 128, "enc_block_3", repeat=4, scale=16),
        L("enc_block_5", "maxpool", 3, 2, 128, 128, "enc_block_4", scale=32),
        L("enc_block_6", "aspp", 3, 1, 128, 256, "enc_block_5", scale=32),
    )).validate()


BUILTINS = {"vggaspp": builtin_vggaspp, "resaspp": builtin_resaspp}


def get_builtin(name):
    try:
        return BUILTINS[name.lower()]()
    except KeyError:
        raise ArchError(f"unknown architecture {name!r}; choose from {sorted(BUILTINS)}") from None


# --------------------------------------------------------------------------
# shapes and parameters


def layer_stride(layer):
    if layer.kind in ("aspp", "global_pool_branch"):
        return 1
    return layer.stride


def layer_out_channels(layer):
    if layer.kind == "aspp":
        # branch outputs concatenated with the pooled branch (which keeps in_ch)
        return len(layer.rates) * layer.out_ch + layer.in_ch
    if layer.kind == "maxpool":
        return layer.in_ch
    return layer.out_ch


def infer_shapes(arch, height, width):
    """Per-layer output (H, W, C, downscale); checks each declared scale."""
    if height < 1 or width < 1 or height % 32 or width % 32:
        raise ArchError(f"input {height}x{width} must be positive and divisible by 32")
    arch.validate()
    shapes = {"input": LayerShape("input", height, width, 3, 1)}
    out = []
    for layer in arch.layers:
        src = shapes[layer.input_ref]
        if src.channels != layer.in_ch:
            raise ArchError(f"{layer.name}: expects {layer.in_ch} input channels, "
                            f"{layer.input_ref} gives {src.channels}")
        s = layer_stride(layer)
        if src.height % s or src.width % s:
            raise ArchError(f"{layer.name}: {src.height}x{src.width} not divisible by stride {s}")
        shape = LayerShape(layer.name, src.height // s, src.width // s,
                           layer_out_channels(layer), src.downscale * s)
        if layer.scale is not None and layer.scale != shape.downscale:
            raise ArchError(f"{layer.name}: declared scale {layer.scale}, inferred {shape.downscale}")
        shapes[layer.name] = shape
        out.append(shape)
    return out


def conv_params(k, c_in, c_out):
    return k * k * c_in * c_out + c_out


def _aspp_params(c_in, c_out, rates):
    pooled = conv_params(1, c_in, c_in)
    branches = sum(conv_params(1 if r == 1 else 3, c_in, c_out) for r in rates)
    return pooled + branches


def _resnet_params(layer):
    total = 0
    for i in range(layer.repeat):
        c_in = layer.in_ch if i == 0 else layer.out_ch
        stride = layer.stride if i == layer.repeat - 1 else 1
        total += conv_params(1, c_in, layer.out_ch)
        total += conv_params(layer.kernel, layer.out_ch, layer.out_ch)
        total += conv_params(1, layer.out_ch, layer.out_ch)
        if stride != 1 or c_in != layer.out_ch:
            total += conv_params(1, c_in, layer.out_ch)
    return total


def layer_params(layer):
    if layer.kind == "maxpool":
        return 0
    if layer.kind in ("conv", "global_pool_branch"):
        return conv_params(layer.kernel, layer.in_ch, layer.out_ch)
    if layer.kind == "vgg_block":
        return conv_params(layer.kernel, layer.in_ch, layer.out_ch) + \
            conv_params(layer.kernel, layer.out_ch, layer.out_ch)
    if layer.kind == "resnet_block":
        return _resnet_params(layer)
    if layer.kind == "aspp":
        return _aspp_params(layer.in_ch, layer.out_ch, layer.rates)
    raise ArchError(f"{layer.name}: no parameter rule for {layer.kind!r}")


def count_params(arch):
    """Encoder + ASPP weight and bias count (decoder not included)."""
    return sum(layer_params(layer) for layer in arch.layers)


# --------------------------------------------------------------------------
# rendering


def render_table(arch, height=None, width=None, sep=None):
    """Layer table: Layers, kernel, Ch I/O, Scale, input, params (+ output shape if sized).

    With ``sep`` set, rows are joined by that delimiter instead of padded columns.
    """
    header = ["Layers", "kernel", "Ch I/O", "Scale", "input", "params"]
    shapes = None
    if height is not None and width is not None:
        shapes = infer_shapes(arch, height, width)
        header.append("output")
    rows = []
    for i, layer in enumerate(arch.layers):
        name = layer.name + (f" (x{layer.repeat})" if layer.repeat > 1 else "")
        kernel = "-" if layer.kind == "aspp" else str(layer.kernel)
        row = [name, kernel, f"{layer.in_ch}/{layer.out_ch}",
               str(layer.scale if layer.scale is not None else "-"), layer.input_ref,
               str(layer_params(layer))]
        if shapes is not None:
            s = shapes[i]
            row.append(f"{s.height}x{s.width}x{s.channels}")
        rows.append(row)
    footer = ["total", "", "", "", "", str(count_params(arch))] + ([""] if shapes else [])
    rows.append(footer)
    if sep is not None:
        return "\n".join(sep.join(r) for r in [header] + rows) + "\n"
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines) + "\n"
