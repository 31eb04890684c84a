# File: seqnet/src/layers.py
# Parameter-holding building blocks shared by SeqConv layers, blocks and the network

from __future__ import annotations

from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

from seqnet.src import ops, runtime
from seqnet.src.ops import BatchNormState, Mode
from seqnet.src.tensor import Tensor


class Module:
    """Minimal container: named parameters, named BN buffers and child modules in fixed order."""

    def own_parameters(self) -> Iterable[Tuple[str, Tensor]]:
        return ()

    def own_buffers(self) -> Iterable[Tuple[str, np.ndarray]]:
        return ()

    def children(self) -> Iterable[Tuple[str, "Module"]]:
        return ()

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self.own_parameters():
            yield prefix + name, tensor
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}/")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, array in self.own_buffers():
            yield prefix + name, array
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}/")

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("/"), self
        for name, child in self.children():
            yield from child.named_modules(f"{prefix}{name}/")

    def parameters(self) -> list:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.parameters())

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()


class Conv2d(Module):
    """Bias-free convolution; every conv in these networks is followed by batch norm."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1,
                 padding: Optional[int] = None, groups: int = 1):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        shape = (out_channels, in_channels // groups, kernel, kernel)
        self.weight = Tensor(np.zeros(shape), requires_grad=True)

    @property
    def fan_in(self) -> int:
        return (self.in_channels // self.groups) * self.kernel * self.kernel

    def own_parameters(self):
        return (("weight", self.weight),)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.channels = channels
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.state = BatchNormState.fresh(channels, runtime.dtype())

    def own_parameters(self):
        return (("gamma", self.gamma), ("beta", self.beta))

    def own_buffers(self):
        return (("running_mean", self.state.running_mean), ("running_var", self.state.running_var))

    def reset(self) -> None:
        self.gamma.data[...] = 1
        self.beta.data[...] = 0
        self.state.reset()

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.state, mode)


class ConvBN(Module):
    """Conv followed by BN and, optionally, ReLU."""

    def __init__(self, conv: Conv2d, activate: bool = True):
        self.conv = conv
        self.bn = BatchNorm2d(conv.out_channels)
        self.activate = activate

    def children(self):
        return (("conv", self.conv), ("bn", self.bn))

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        out = self.bn(self.conv(x), mode)
        return ops.relu(out) if self.activate else out


class Linear(Module):
    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(np.zeros((in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def own_parameters(self):
        return (("weight", self.weight), ("bias", self.bias))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)
