"""Layer specifications and a small sequential network container.

The layer set is intentionally narrow: dense, valid conv, transposed conv,
activations, flatten and reshape. Conv / transposed-conv pairs must be
configured so that the transposed side inverts the conv size relation
exactly, i.e. (in - kernel) is divisible by the stride.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

ACTIVATIONS = ("relu", "sigmoid", "identity")

# kind tags shared with the checkpoint format
KIND_TAGS = {"dense": 1, "conv": 2, "transposed-conv": 3,
             "activation": 4, "flatten": 5, "reshape": 6}


def conv_output_extent(extent: int, kernel: int, stride: int) -> int:
    if kernel > extent:
        raise ShapeError(f"kernel extent {kernel} larger than input extent {extent}")
    return (extent - kernel) // stride + 1


@dataclass
class LayerSpec:
    """One layer of the encoder or decoder stack.

    in_shape / out_shape exclude the batch axis. Conv shapes are
    (channels, spatial...); dense shapes are (features,).
    """

    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: tuple[int, ...] = ()
    stride: int = 1
    activation: str = "identity"

    def __post_init__(self):
        if self.kind not in KIND_TAGS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.kind == "conv":
            expect = tuple(conv_output_extent(i, k, self.stride)
                           for i, k in zip(self.in_shape[1:], self.kernel))
            if expect != self.out_shape[1:]:
                raise ShapeError(f"conv out {self.out_shape[1:]} != expected {expect}")
        if self.kind == "transposed-conv":
            expect = tuple((i - 1) * self.stride + k
                           for i, k in zip(self.in_shape[1:], self.kernel))
            if expect != self.out_shape[1:]:
                raise ShapeError(f"transposed-conv out {self.out_shape[1:]} != "
                                 f"expected {expect}")
            # transposed side must invert the conv size relation exactly
            for o, k in zip(self.out_shape[1:], self.kernel):
                if (o - k) % self.stride != 0:
                    raise ShapeError(f"extent {o} with kernel {k} stride {self.stride} "
                                     "is not exactly invertible")

    @property
    def n_params(self) -> int:
        return 2 if self.kind in ("dense", "conv", "transposed-conv") else 0


@dataclass
class Layer:
    """A LayerSpec bound to its parameter tensors (possibly none)."""

    spec: LayerSpec
    name: str
    weights: ad.Tensor | None = None
    bias: ad.Tensor | None = None

    def parameters(self) -> list[tuple[str, int, ad.Tensor]]:
        tag = KIND_TAGS[self.spec.kind]
        out = []
        if self.weights is not None:
            out.append((f"{self.name}.w", tag, self.weights))
        if self.bias is not None:
            out.append((f"{self.name}.b", tag, self.bias))
        return out

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        spec = self.spec
        if spec.kind == "dense":
            return ad.dense(x, self.weights, self.bias)
        if spec.kind == "conv":
            y = ad.conv(x, self.weights, stride=spec.stride)
            return ad.add_channel_bias(y, self.bias)
        if spec.kind == "transposed-conv":
            y = ad.conv_transpose(x, self.weights, stride=spec.stride)
            return ad.add_channel_bias(y, self.bias)
        if spec.kind == "activation":
            if spec.activation == "relu":
                return ad.relu(x)
            if spec.activation == "sigmoid":
                return ad.sigmoid(x)
            return x
        if spec.kind in ("flatten", "reshape"):
            return ad.reshape(x, (x.data.shape[0],) + spec.out_shape)
        raise ShapeError(f"unknown layer kind {spec.kind!r}")


@dataclass
class Sequential:
    """An ordered stack of layers applied in sequence."""

    layers: list[Layer] = field(default_factory=list)

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def parameters(self) -> list[tuple[str, int, ad.Tensor]]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


def glorot_init(rng: np.random.Generator, shape: tuple[int, ...],
                fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def build_layer(spec: LayerSpec, name: str, rng: np.random.Generator) -> Layer:
    """Instantiate a layer, drawing parameters from rng where needed."""
    if spec.kind == "dense":
        n_in, n_out = spec.in_shape[0], spec.out_shape[0]
        w = glorot_init(rng, (n_in, n_out), n_in, n_out)
        return Layer(spec, name, ad.Tensor(w), ad.Tensor(np.zeros(n_out)))
    if spec.kind == "conv":
        c_in, c_out = spec.in_shape[0], spec.out_shape[0]
        kshape = (c_out, c_in) + spec.kernel
        ksize = int(np.prod(spec.kernel))
        w = glorot_init(rng, kshape, c_in * ksize, c_out * ksize)
        return Layer(spec, name, ad.Tensor(w), ad.Tensor(np.zeros(c_out)))
    if spec.kind == "transposed-conv":
        c_in, c_out = spec.in_shape[0], spec.out_shape[0]
        kshape = (c_in, c_out) + spec.kernel
        ksize = int(np.prod(spec.kernel))
        w = glorot_init(rng, kshape, c_in * ksize, c_out * ksize)
        return Layer(spec, name, ad.Tensor(w), ad.Tensor(np.zeros(c_out)))
    return Layer(spec, name)
