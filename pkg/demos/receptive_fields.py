"""Receptive fields of VGG-16 and its hole-algorithm variants.

    python3 demos/receptive_fields.py

First the layer-by-layer growth of the field for plain VGG-16, then the
four output-stride-8 variants with their fc6 kernel and dilation, and
finally a check that a dilated filter is the same as a dense filter with
zeros stuffed between its taps.
"""
import numpy as np

from crfrefine.atrous import (
    PRESETS,
    atrous_conv2d,
    padded_receptive_field,
    preset_receptive_field,
    receptive_field,
    vgg16_layers,
    zero_stuff_kernel,
)

layers = vgg16_layers()
print(f"{'layer':10s} {'k':>2s} {'s':>2s} {'d':>3s} {'rf':>5s} {'jump':>5s}")
for i, layer in enumerate(layers, 1):
    rf, jump = receptive_field(layers[:i])
    print(f"{layer.name:10s} {layer.kernel:2d} {layer.stride:2d} {layer.input_stride:3d} {rf:5d} {jump:5d}")

# Counting every 3x3 conv gives 404.  The smaller figures usually quoted for
# these nets ignore the same-padded convolutions and count pooling and fc6 only.
print(f"\nconvolutional mode: {receptive_field(layers)[0]}, "
      f"padded mode: {padded_receptive_field(layers)[0]}\n")

print(f"{'preset':22s} {'fc6':>5s} {'rf':>5s} {'padded':>7s} {'jump':>5s} {'published':>10s}")
for name, (layers, _, _) in PRESETS.items():
    rf, rf_pad, jump, published, convention = preset_receptive_field(name)
    fc6 = layers[-1]
    print(f"{name:22s} {fc6.kernel}/{fc6.input_stride:<3d} {rf:5d} {rf_pad:7d} {jump:5d} "
          f"{published:>6d} ({convention})")

# the efficient path reads strided views; the oracle dilates the filter
rng = np.random.default_rng(0)
x = rng.normal(size=(24, 24, 4)).astype(np.float32)
k = rng.normal(size=(3, 3, 4, 2)).astype(np.float32)
for rate in (1, 2, 4, 12):
    sparse = atrous_conv2d(x, k, input_stride=rate)
    dense = atrous_conv2d(x, zero_stuff_kernel(k, rate))
    print(f"rate {rate:2d}: effective kernel {zero_stuff_kernel(k, rate).shape[0]:2d}x"
          f"{zero_stuff_kernel(k, rate).shape[1]:<2d} max |diff| {np.abs(sparse - dense).max():.1e}")
