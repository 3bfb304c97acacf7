"""Dense reference forward pass, independent of the CeNN simulator.

Built on scipy.ndimage filters rather than the simulator's stencil code so
the two paths share no arithmetic helpers. Saturation is inserted exactly
where the hardware saturates: after every convolution and every partial-sum
accumulate.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .netspec import LayerSpec, NetworkSpec

CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
SQUARE = np.ones((3, 3), dtype=bool)


def clamp(x):
    return np.minimum(np.maximum(x, -1.0), 1.0)


def correlate_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 cross-correlation over the last two axes."""
    w = np.asarray(kernel, dtype=float).reshape((1,) * (x.ndim - 2) + (3, 3))
    return ndimage.correlate(np.asarray(x, dtype=float), w, mode="constant", cval=0.0)


def max_filter(x: np.ndarray, neighborhood: str = "square") -> np.ndarray:
    fp = SQUARE if neighborhood == "square" else CROSS
    fp = fp.reshape((1,) * (x.ndim - 2) + (3, 3))
    return ndimage.maximum_filter(np.asarray(x, dtype=float), footprint=fp, mode="nearest")


def mean_filter(x: np.ndarray, window: str = "2x2") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window == "3x3":
        return ndimage.uniform_filter(x, size=(1,) * (x.ndim - 2) + (3, 3), mode="nearest")
    # window anchored at its top-left cell: self, east, south, south-east
    p = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(0, 1), (0, 1)], mode="edge")
    return (p[..., :-1, :-1] + p[..., :-1, 1:] + p[..., 1:, :-1] + p[..., 1:, 1:]) / 4.0


def subsample(x: np.ndarray) -> np.ndarray:
    r, c = x.shape[-2:]
    return x[..., : r - r % 2 : 2, : c - c % 2 : 2]


def conv_layer(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x: (batch, c_in, rows, cols) -> (batch, c_out, rows, cols), chained saturating sums."""
    c_out, c_in = kernel.shape[:2]
    outs = []
    for i in range(c_out):
        acc = clamp(correlate_same(x[:, 0], kernel[i, 0]) + bias[i])
        for j in range(1, c_in):
            acc = clamp(acc + clamp(correlate_same(x[:, j], kernel[i, j])))
        outs.append(acc)
    return np.stack(outs, axis=1)


def pool_layer(x: np.ndarray, layer: LayerSpec, neighborhood: str = "square") -> np.ndarray:
    if layer.pool_kind == "max_linear":
        y = max_filter(x, neighborhood)
    elif layer.pool_kind == "avg":
        y = mean_filter(x, "2x2")
    else:
        raise NotImplementedError("the dense oracle has no model of GLOBMAX pooling")
    return subsample(y) if layer.downsample else y


def forward(net: NetworkSpec, images, neighborhood: str = "square") -> np.ndarray:
    """Class scores for a batch of images shaped (batch, maps, rows, cols)."""
    x = np.asarray(images, dtype=float)
    for idx, layer in enumerate(net.layers):
        last = idx == len(net.layers) - 1
        if layer.kind == "conv":
            x = conv_layer(x, layer.kernel, layer.bias)
            if last and layer.readout == "center":
                return x[:, :, x.shape[2] // 2, x.shape[3] // 2]
            if last and layer.readout == "mean":
                return x.mean(axis=(2, 3))
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        elif layer.kind == "pool":
            x = pool_layer(x, layer, neighborhood)
        else:
            flat = x.reshape(len(x), -1)
            return flat @ layer.fc_weights.T + layer.fc_bias
    return x.reshape(len(x), -1)
