"""Fully connected tanh network carrying input derivatives.

Besides the value, the forward pass propagates three derivative channels along
fixed input directions: the first and second derivative along a primary
direction and the first derivative along a secondary (time) direction. For a
hidden layer with pre-activation ``z = W a + b`` and ``g = tanh``:

    value   a₀' = g(z₀)
    d1      a₁' = g'(z₀) z₁
    d2      a₂' = g''(z₀) z₁² + g'(z₀) z₂
    dt      aₜ' = g'(z₀) zₜ

with ``z_c = W a_c`` for the derivative channels. The output layer is linear.
The reverse pass returns parameter gradients of any linear functional of the
four output channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from collections.abc import Sequence

CHANNELS = 4


@dataclass
class _LayerCache:
    inputs: list[np.ndarray | None]
    z: list[np.ndarray | None]
    g: tuple[np.ndarray, ...] | None


class TaylorMLP:
    """Multilayer perceptron with derivative channels.

    Parameters live in one flat vector, layer by layer, each layer storing its
    weight matrix (row-major, shape ``(out, in)``) followed by its bias.

    Args:
        sizes: Layer widths from input to output, e.g. ``[17, 64, 64, 1]``.
    """

    def __init__(self, sizes: Sequence[int]):
        if len(sizes) < 2:
            raise ValueError(f"A network needs at least input and output sizes, got {list(sizes)}.")
        self.sizes = tuple(int(s) for s in sizes)
        self._slices = []
        offset = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:], strict=True):
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            self._slices.append((w, b, n_in, n_out))
        self.n_params = offset

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(sizes={list(self.sizes)})"

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Xavier-uniform weights and zero biases."""
        params = np.zeros(self.n_params)
        for w, _b, n_in, n_out in self._slices:
            limit = np.sqrt(6.0 / (n_in + n_out))
            params[w] = rng.uniform(-limit, limit, n_in * n_out)
        return params

    def _weights(self, params: np.ndarray):
        for w, b, n_in, n_out in self._slices:
            yield params[w].reshape(n_out, n_in), params[b]

    def forward(
        self, params: np.ndarray, channels: Sequence[np.ndarray | None]
    ) -> tuple[list[np.ndarray | None], list[_LayerCache]]:
        """Propagate the value and derivative channels.

        Args:
            params: Flat parameter vector.
            channels: ``[value, d1, d2, dt]`` input arrays of shape ``(N, d_in)``;
                ``None`` skips a derivative channel (treated as zero).

        Returns:
            The four output channels of shape ``(N, d_out)`` (``None`` where
            skipped) and the cache for :py:meth:`backward`.
        """
        a = list(channels) + [None] * (CHANNELS - len(channels))
        caches = []
        layers = list(self._weights(params))
        for index, (weight, bias) in enumerate(layers):
            z = [a[0] @ weight.T + bias] + [None if c is None else c @ weight.T for c in a[1:]]
            if index == len(layers) - 1:
                caches.append(_LayerCache(a, z, None))
                a = z
                break
            g0 = np.tanh(z[0])
            g1 = 1.0 - g0**2
            g2 = -2.0 * g0 * g1
            g3 = -2.0 * (g1**2 + g0 * g2)
            caches.append(_LayerCache(a, z, (g0, g1, g2, g3)))
            z1, z2, zt = z[1], z[2], z[3]
            a = [
                g0,
                None if z1 is None else g1 * z1,
                None if z2 is None and z1 is None else _second(g1, g2, z1, z2),
                None if zt is None else g1 * zt,
            ]
        return a, caches

    def backward(
        self, params: np.ndarray, caches: list[_LayerCache], cotangents: Sequence[np.ndarray | None]
    ) -> np.ndarray:
        """Parameter gradient of ``Σ_c <cotangent_c, output_c>``.

        Args:
            params: The parameters used in :py:meth:`forward`.
            caches: Cache returned by :py:meth:`forward`.
            cotangents: Per-channel cotangents of shape ``(N, d_out)`` or ``None``.
        """
        grad = np.zeros(self.n_params)
        bar = list(cotangents) + [None] * (CHANNELS - len(cotangents))
        layers = list(self._weights(params))
        for index in range(len(layers) - 1, -1, -1):
            weight, _bias = layers[index]
            cache = caches[index]
            if cache.g is None:
                zbar = bar
            else:
                zbar = _activation_backward(cache, bar)
            w_slice, b_slice, _n_in, _n_out = self._slices[index]
            w_grad = np.zeros_like(weight)
            for c in range(CHANNELS):
                if zbar[c] is not None and cache.inputs[c] is not None:
                    w_grad += zbar[c].T @ cache.inputs[c]
            grad[w_slice] = w_grad.ravel()
            grad[b_slice] = zbar[0].sum(axis=0) if zbar[0] is not None else 0.0
            bar = [None if zb is None else zb @ weight for zb in zbar]
        return grad


def _second(g1, g2, z1, z2):
    out = 0.0
    if z1 is not None:
        out = g2 * z1**2
    if z2 is not None:
        out = out + g1 * z2
    return out


def _activation_backward(cache: _LayerCache, bar: list[np.ndarray | None]) -> list[np.ndarray | None]:
    """Cotangents of the pre-activations from those of the layer outputs."""
    _g0, g1, g2, g3 = cache.g
    z1, z2, zt = cache.z[1], cache.z[2], cache.z[3]
    a0, a1, a2, at = bar
    z0bar = np.zeros_like(cache.z[0])
    z1bar = None if z1 is None else np.zeros_like(z1)
    z2bar = None if z2 is None else np.zeros_like(z2)
    ztbar = None if zt is None else np.zeros_like(zt)
    if a0 is not None:
        z0bar += a0 * g1
    if a1 is not None and z1 is not None:
        z0bar += a1 * g2 * z1
        z1bar += a1 * g1
    if a2 is not None:
        if z1 is not None:
            z0bar += a2 * g3 * z1**2
            z1bar += 2.0 * a2 * g2 * z1
        if z2 is not None:
            z0bar += a2 * g2 * z2
            z2bar += a2 * g1
    if at is not None and zt is not None:
        z0bar += at * g2 * zt
        ztbar += at * g1
    return [z0bar, z1bar, z2bar, ztbar]
