"""Parameter containers built on :mod:`bevx.tensor`.

A :class:`Module` exposes its learned tensors through ``named_parameters``
with stable dotted names; those names are the checkpoint keys.
"""

import numpy as np

from bevx import tensor as T


class Module:
    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, T.Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, T.Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _param(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class Linear(Module):
    """Affine map over the last axis, weight stored as [in, out]."""

    def __init__(self, fan_in, fan_out, rng=None, bias=True, zero=False):
        if zero or rng is None:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        self.weight = _param(w)
        self.bias = _param(np.zeros(fan_out)) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, rng, kernel=3, stride=1, padding=None):
        fan_in = kernel * kernel * cin
        self.weight = _param(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(kernel, kernel, cin, cout)))
        self.bias = _param(np.zeros(cout))
        self._stride = stride
        self._padding = kernel // 2 if padding is None else padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self._stride, self._padding)

    def macs(self, n, h, w):
        kh, kw, cin, cout = self.weight.shape
        ho = (h + 2 * self._padding - kh) // self._stride + 1
        wo = (w + 2 * self._padding - kw) // self._stride + 1
        return n * ho * wo * kh * kw * cin * cout


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))
        self._eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class MLP(Module):
    """Two-layer perceptron with a GELU in between."""

    def __init__(self, dim, hidden, rng, out_dim=None):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim or dim, rng)

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))
