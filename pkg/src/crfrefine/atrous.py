"""Atrous ("hole") convolution, receptive-field arithmetic, bilinear upsampling."""
import math
from dataclasses import dataclass

import numpy as np

from .core import as_tensor3


def _check_kernel(kernel):
    k = np.asarray(kernel, dtype=np.float32)
    if k.ndim != 4:
        raise ValueError(f"kernel must be (kh, kw, c_in, c_out), got shape {k.shape}")
    if 0 in k.shape:
        raise ValueError(f"kernel has a zero dimension: {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel has non-finite weights")
    return k


def zero_stuff_kernel(kernel, rate):
    """Insert ``rate - 1`` zeros between taps: size k -> (k - 1) * rate + 1 per axis."""
    if rate < 1:
        raise ValueError("rate must be >= 1")
    k = _check_kernel(kernel)
    kh, kw, cin, cout = k.shape
    out = np.zeros(((kh - 1) * rate + 1, (kw - 1) * rate + 1, cin, cout), dtype=k.dtype)
    out[::rate, ::rate] = k
    return out


def atrous_conv2d(inputs, kernel, input_stride=1, output_stride=1):
    """Convolve with the filter taps spread ``input_stride`` pixels apart.

    ``out[y, x, co] = sum in[y*so + (dy - ch)*si, x*so + (dx - cw)*si, ci] * w[dy, dx, ci, co]``
    with zero padding and ``ch = ((kh - 1) * si) // 2`` (likewise ``cw``), so
    the output is ``ceil(H / so) x ceil(W / so)``.  The filter itself is never
    dilated: each tap reads a strided view of the padded input.
    """
    if input_stride < 1 or output_stride < 1:
        raise ValueError("strides must be >= 1")
    x = as_tensor3(inputs, "input")
    k = _check_kernel(kernel)
    h, w, cin = x.shape
    kh, kw, kcin, cout = k.shape
    if kcin != cin:
        raise ValueError(f"input has {cin} channels, kernel expects {kcin}")
    si, so = input_stride, output_stride
    ph, pw = ((kh - 1) * si) // 2, ((kw - 1) * si) // 2
    oh, ow = math.ceil(h / so), math.ceil(w / so)
    # pad enough that every tap of every output position is in range
    bottom = max(0, (oh - 1) * so + (kh - 1) * si - ph - (h - 1))
    right = max(0, (ow - 1) * so + (kw - 1) * si - pw - (w - 1))
    padded = np.pad(x, ((ph, bottom), (pw, right), (0, 0)))
    out = np.zeros((oh, ow, cout), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            y0, x0 = dy * si, dx * si
            patch = padded[y0:y0 + (oh - 1) * so + 1:so, x0:x0 + (ow - 1) * so + 1:so]
            out += patch @ k[dy, dx].astype(np.float64)
    return out.astype(np.float32)


# --------------------------------------------------------------------------
# receptive fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kernel: int
    stride: int = 1
    input_stride: int = 1
    kind: str = "conv"  # "conv", "pool" or "fc"; only used by padded_receptive_field
    name: str = ""

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.input_stride < 1:
            raise ValueError(f"kernel, stride and input_stride must be >= 1: {self}")


def receptive_field(layers):
    """Return (rf, jump) of a layer chain, convolutional mode.

    rf <- rf + (k - 1) * input_stride * jump; jump <- jump * stride
    """
    rf, jump = 1, 1
    for layer in layers:
        rf += (layer.kernel - 1) * layer.input_stride * jump
        jump *= layer.stride
    return rf, jump


def padded_receptive_field(layers):
    """Receptive field counted the "with zero-padding" way.

    Same-padded convolutions are treated as not enlarging the field; only
    pooling and fully connected layers count.  For VGG-16 this is the
    224-pixel figure (one pool5 cell is 32 px, fc6 spans 7 cells).
    """
    return receptive_field([l for l in layers if l.kind != "conv"])


def _vgg_trunk(hole):
    """VGG-16 conv1_1 .. pool5.  ``hole`` drops pool4/pool5 subsampling and dilates what follows."""
    layers = []
    dilation = 1
    for block, n_conv in enumerate([2, 2, 3, 3, 3], start=1):
        for i in range(1, n_conv + 1):
            layers.append(LayerSpec(3, 1, dilation, "conv", f"conv{block}_{i}"))
        if hole and block >= 4:
            layers.append(LayerSpec(2, 1, dilation, "pool", f"pool{block}"))
            dilation *= 2
        else:
            layers.append(LayerSpec(2, 2, dilation, "pool", f"pool{block}"))
    return layers


def vgg16_layers(fc6_kernel=7, fc6_input_stride=None, hole=False):
    """VGG-16 up to fc6 (as a convolution).

    With ``hole=True`` the network runs at output stride 8 and
    ``fc6_input_stride`` is the dilation of fc6 in stride-8 pixels.
    """
    layers = _vgg_trunk(hole)
    if fc6_input_stride is None:
        fc6_input_stride = 4 if hole else 1
    layers.append(LayerSpec(fc6_kernel, 1, fc6_input_stride, "fc", "fc6"))
    return layers


# name -> (layers, published receptive field, which convention it is quoted in)
PRESETS = {
    "vgg16": (vgg16_layers(7), 404, "conv"),
    "vgg16-padded": (vgg16_layers(7), 224, "padded"),
    "vgg16-fc6-4x4": (vgg16_layers(4), 308, "conv"),
    "deeplab-crf-7x7": (vgg16_layers(7, 4, hole=True), 224, "padded"),
    "deeplab-crf": (vgg16_layers(4, 4, hole=True), 128, "padded"),
    "deeplab-crf-4x4": (vgg16_layers(4, 8, hole=True), 224, "padded"),
    "deeplab-crf-largefov": (vgg16_layers(3, 12, hole=True), 224, "padded"),
}


def preset_receptive_field(name):
    """Return (rf_conv, rf_padded, jump, published, convention) for a preset."""
    layers, published, convention = PRESETS[name]
    rf_conv, jump = receptive_field(layers)
    rf_padded, _ = padded_receptive_field(layers)
    return rf_conv, rf_padded, jump, published, convention


def parse_layer_file(text):
    """One ``k,stride,input_stride`` triple per line; blank lines and '#' comments skipped."""
    layers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'k,stride,input_stride', got {line!r}")
        try:
            k, s, d = (int(p) for p in parts)
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer field in {line!r}") from None
        layers.append(LayerSpec(k, s, d, name=f"layer{len(layers) + 1}"))
    return layers


# --------------------------------------------------------------------------
# upsampling
# --------------------------------------------------------------------------

def _interp_matrix(n_in, factor):
    # output sample o reads source coordinate (o + 0.5) / factor - 0.5, clamped
    coord = (np.arange(n_in * factor) + 0.5) / factor - 0.5
    coord = np.clip(coord, 0, n_in - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coord - lo
    m = np.zeros((n_in * factor, n_in))
    rows = np.arange(n_in * factor)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_upsample(inputs, factor):
    """Half-pixel-aligned bilinear upsampling of an (H, W, C) field by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    x = as_tensor3(inputs, "input")
    if factor == 1:
        return x.copy()
    h, w, _ = x.shape
    ry = _interp_matrix(h, factor)
    rx = _interp_matrix(w, factor)
    out = np.einsum("Yy,yxc->Yxc", ry, x.astype(np.float64))
    out = np.einsum("Xx,Yxc->YXc", rx, out)
    return out.astype(np.float32)
