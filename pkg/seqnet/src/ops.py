# File: seqnet/src/ops.py
# Differentiable primitives: convolution, batch norm, activations, channel plumbing and losses

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from seqnet.src import runtime
from seqnet.src.errors import InvalidArgumentError, InvalidStateError
from seqnet.src.tensor import Tensor, make_result, report_macs

Mode = Literal["train", "eval"]

# --- Configuration ---
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _check_mode(mode: str, where: str) -> None:
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"ops.{where}: mode must be 'train' or 'eval', got '{mode}'")


def _for_each_group(groups: int, fn: Callable[[int], None]) -> None:
    """Run ``fn`` for every group index; groups write disjoint slices so order never matters."""
    if groups > 1 and runtime.parallel_enabled():
        with ThreadPoolExecutor(max_workers=min(groups, runtime.threads())) as pool:
            list(pool.map(fn, range(groups)))
    else:
        for index in range(groups):
            fn(index)


# --- Convolution ---


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding (NCHW input, OIHW kernel)."""
    if x.ndim != 4:
        raise InvalidArgumentError(f"ops.conv2d: input must be NCHW, got {x.ndim} dimensions")
    if weight.ndim != 4:
        raise InvalidArgumentError(f"ops.conv2d: kernel must be OIHW, got {weight.ndim} dimensions")
    if stride < 1 or padding < 0 or groups < 1:
        raise InvalidArgumentError(
            f"ops.conv2d: need stride >= 1, padding >= 0, groups >= 1 (got {stride}, {padding}, {groups})"
        )
    n, channels, height, width = x.shape
    out_channels, group_in, kh, kw = weight.shape
    if channels % groups:
        raise InvalidArgumentError(f"ops.conv2d: input channels {channels} not divisible by groups {groups}")
    if out_channels % groups:
        raise InvalidArgumentError(f"ops.conv2d: output channels {out_channels} not divisible by groups {groups}")
    if group_in != channels // groups:
        raise InvalidArgumentError(
            f"ops.conv2d: kernel input extent {group_in} != input channels {channels} / groups {groups}"
        )
    if height + 2 * padding < kh or width + 2 * padding < kw:
        raise InvalidArgumentError(
            f"ops.conv2d: kernel {kh}x{kw} larger than padded input {height + 2 * padding}x{width + 2 * padding}"
        )

    group_out = out_channels // groups
    padded = x.data
    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    dtype = np.result_type(x.data, weight.data)
    out = np.empty((n, out_channels, out_h, out_w), dtype=dtype)
    kernel = weight.data

    def forward_group(index: int) -> None:
        cin = slice(index * group_in, (index + 1) * group_in)
        cout = slice(index * group_out, (index + 1) * group_out)
        product = np.tensordot(windows[:, cin], kernel[cout], axes=([1, 4, 5], [1, 2, 3]))
        out[:, cout] = product.transpose(0, 3, 1, 2)

    _for_each_group(groups, forward_group)
    report_macs("conv2d", n * out_h * out_w * out_channels * group_in * kh * kw)

    def backward(grad: np.ndarray):
        grad_x = np.zeros_like(padded, dtype=dtype) if x.requires_grad else None
        grad_w = np.empty_like(kernel, dtype=dtype) if weight.requires_grad else None
        row_stop = stride * (out_h - 1) + 1
        col_stop = stride * (out_w - 1) + 1

        def backward_group(index: int) -> None:
            cin = slice(index * group_in, (index + 1) * group_in)
            cout = slice(index * group_out, (index + 1) * group_out)
            upstream = grad[:, cout]
            if grad_w is not None:
                grad_w[cout] = np.tensordot(upstream, windows[:, cin], axes=([0, 2, 3], [0, 2, 3]))
            if grad_x is not None:
                cols = np.tensordot(upstream, kernel[cout], axes=([1], [0]))
                for i in range(kh):
                    for j in range(kw):
                        grad_x[:, cin, i : i + row_stop : stride, j : j + col_stop : stride] += cols[
                            :, :, :, :, i, j
                        ].transpose(0, 3, 1, 2)

        _for_each_group(groups, backward_group)
        if grad_x is not None and padding:
            grad_x = grad_x[:, :, padding : padding + height, padding : padding + width]
        return grad_x, grad_w

    return make_result(out, (x, weight), backward)


# --- Batch normalization ---


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer. ``tracked`` is false until populated."""

    running_mean: np.ndarray
    running_var: np.ndarray
    tracked: bool = False

    @classmethod
    def fresh(cls, channels: int, dtype=None) -> "BatchNormState":
        dtype = dtype or runtime.dtype()
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), False)

    def reset(self) -> None:
        self.running_mean[...] = 0
        self.running_var[...] = 1
        self.tracked = False


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: Optional[BatchNormState] = None,
    mode: Mode = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel normalization over N, H, W followed by the affine map gamma * x + beta."""
    _check_mode(mode, "batch_norm")
    if x.ndim != 4:
        raise InvalidArgumentError(f"ops.batch_norm: input must be NCHW, got {x.ndim} dimensions")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise InvalidArgumentError(
            f"ops.batch_norm: gamma/beta must have length {channels}, got {gamma.shape} and {beta.shape}"
        )
    if eps <= 0 or not 0 <= momentum <= 1:
        raise InvalidArgumentError(f"ops.batch_norm: need eps > 0 and momentum in [0, 1], got {eps}, {momentum}")

    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if mode == "train":
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state is not None:
            state.running_mean[...] = momentum * state.running_mean + (1 - momentum) * mean
            state.running_var[...] = momentum * state.running_var + (1 - momentum) * var
            state.tracked = True
    else:
        if state is None or not state.tracked:
            raise InvalidStateError("ops.batch_norm: eval mode needs populated running statistics")
        mean = state.running_mean
        var = state.running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    mean = mean.astype(x.dtype, copy=False)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(grad: np.ndarray):
        grad_gamma = (grad * xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        dxhat = grad * gamma.data[None, :, None, None]
        if mode == "train":
            grad_x = (inv_std / count)[None, :, None, None] * (
                count * dxhat
                - dxhat.sum(axis=axes)[None, :, None, None]
                - xhat * (dxhat * xhat).sum(axis=axes)[None, :, None, None]
            )
        else:
            grad_x = dxhat * inv_std[None, :, None, None]
        return grad_x, grad_gamma, grad_beta

    return make_result(out, (x, gamma, beta), backward)


# --- Elementwise ---


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype, copy=False)
    return make_result(out, (x,), lambda grad: (grad * positive,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"ops.add: shapes differ, {a.shape} vs {b.shape}")
    return make_result(a.data + b.data, (a, b), lambda grad: (grad, grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"ops.mul: shapes differ, {a.shape} vs {b.shape}")
    return make_result(a.data * b.data, (a, b), lambda grad: (grad * b.data, grad * a.data))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_result(out, (x,), lambda grad: (np.broadcast_to(grad, x.shape).copy(),))


# --- Channel plumbing ---


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along channels, preserving list order."""
    if not parts:
        raise InvalidArgumentError("ops.concat_channels: need at least one part")
    first = parts[0]
    for index, part in enumerate(parts):
        if part.ndim != 4:
            raise InvalidArgumentError(f"ops.concat_channels: part {index} is not NCHW")
        if (part.shape[0], part.shape[2], part.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise InvalidArgumentError(
                f"ops.concat_channels: part {index} has N,H,W {part.shape[0], part.shape[2], part.shape[3]}, "
                f"expected {first.shape[0], first.shape[2], first.shape[3]}"
            )
    bounds = np.cumsum([0] + [part.shape[1] for part in parts])
    out = np.concatenate([part.data for part in parts], axis=1)

    def backward(grad: np.ndarray):
        return tuple(grad[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return make_result(out, tuple(parts), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    channels = x.shape[1]
    if not 0 <= start < stop <= channels:
        raise InvalidArgumentError(f"ops.slice_channels: invalid range [{start}, {stop}) for {channels} channels")

    def backward(grad: np.ndarray):
        full = np.zeros_like(x.data, dtype=grad.dtype)
        full[:, start:stop] = grad
        return (full,)

    return make_result(x.data[:, start:stop].copy(), (x,), backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise InvalidArgumentError(f"ops.split_channels: sizes {list(sizes)} do not sum to {x.shape[1]}")
    parts, start = [], 0
    for size in sizes:
        parts.append(slice_channels(x, start, start + size))
        start += size
    return parts


def mask_channels(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply every channel by a fixed per-channel factor (0/1 masks in practice)."""
    mask = np.asarray(mask, dtype=x.dtype)
    if mask.shape != (x.shape[1],):
        raise InvalidArgumentError(f"ops.mask_channels: mask length {mask.shape} != channels {x.shape[1]}")
    factor = mask[None, :, None, None]
    return make_result(x.data * factor, (x,), lambda grad: (grad * factor,))


# --- Pooling, classifier and loss ---


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise InvalidArgumentError(f"ops.global_avg_pool: input must be NCHW, got {x.ndim} dimensions")
    area = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad[:, :, None, None] / area, x.shape).copy(),)

    return make_result(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight laid out C x K."""
    if x.ndim != 2 or weight.ndim != 2:
        raise InvalidArgumentError(f"ops.linear: need N x C input and C x K weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise InvalidArgumentError(f"ops.linear: inner extents differ, {x.shape[1]} vs {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise InvalidArgumentError(f"ops.linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    report_macs("linear", x.shape[0] * weight.shape[0] * weight.shape[1])

    def backward(grad: np.ndarray):
        grads = [grad @ weight.data.T, x.data.T @ grad]
        if bias is not None:
            grads.append(grad.sum(axis=0))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise InvalidArgumentError(f"ops.softmax_cross_entropy: logits must be N x K, got {logits.shape}")
    n, classes = logits.shape
    if labels.shape != (n,):
        raise InvalidArgumentError(f"ops.softmax_cross_entropy: need {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InvalidArgumentError(f"ops.softmax_cross_entropy: labels must lie in [0, {classes})")
    labels = labels.astype(np.int64)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    loss = np.asarray((log_norm - picked).mean(), dtype=logits.dtype)

    def backward(grad: np.ndarray):
        probs = np.exp(shifted - log_norm[:, None])
        probs[np.arange(n), labels] -= 1
        return (probs * (grad / n),)

    return make_result(loss, (logits,), backward)


def dropout(x: Tensor, rate: float, mode: Mode, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1 / (1 - rate) in train mode."""
    _check_mode(mode, "dropout")
    if not 0 <= rate < 1:
        raise InvalidArgumentError(f"ops.dropout: rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0:
        return x
    if rng is None:
        raise InvalidArgumentError("ops.dropout: train-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return make_result(x.data * keep, (x,), lambda grad: (grad * keep,))
