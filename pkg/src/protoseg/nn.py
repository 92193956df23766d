"""Small layer helpers on top of :mod:`protoseg.tensor`."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, relu


class Linear:
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, fan_in: int | None = None,
                 gain: float = 2.0):
        # gain 2 is He-uniform for layers followed by ReLU; gain 1 suits linear or squashed outputs
        bound = np.sqrt(3.0 * gain / (fan_in or n_in))
        self.weight = Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True,
                             name=f"{name}.weight")
        self.bias = Tensor(np.zeros((1, n_out)), requires_grad=True, name=f"{name}.bias")
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """Linear layers with ReLU between them; ``final_relu`` also rectifies the output."""

    def __init__(self, name: str, widths: list[int], rng: np.random.Generator, final_relu: bool = False):
        last = len(widths) - 2
        self.layers = [Linear(f"{name}.{i}", a, b, rng, gain=2.0 if i < last or final_relu else 1.0)
                       for i, (a, b) in enumerate(zip(widths, widths[1:]))]
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = relu(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def named(params: list[Tensor]) -> dict[str, Tensor]:
    out = {}
    for p in params:
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p
    return out
