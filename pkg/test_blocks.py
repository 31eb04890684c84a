# File: test_blocks.py
# Residual and down-sampling blocks built from SeqConv layers

import numpy as np
import pytest
from pydantic import ValidationError

from seqnet.src import ops
from seqnet.src.blocks import (
    DownsampleBlock,
    DownsampleBlockSpec,
    ResidualBlock,
    ResidualBlockSpec,
    residual_block_forward,
    zero_init_block,
)
from seqnet.src.errors import InvalidArgumentError
from seqnet.src.gradcheck import grad_check
from seqnet.src.layers import BatchNorm2d
from seqnet.src.seqconv import SeqConvConfig
from seqnet.src.tensor import Tape, Tensor


def randomize(module, rng):
    for name, tensor in module.named_parameters():
        if name.endswith("gamma"):
            tensor.data[...] = rng.uniform(0.5, 1.5, size=tensor.shape)
        elif name.endswith("beta"):
            tensor.data[...] = rng.normal(0.0, 0.1, size=tensor.shape)
        else:
            tensor.data[...] = rng.normal(0.0, 0.3, size=tensor.shape)
    return module


@pytest.mark.parametrize("transform,c", [("basic", 1), ("bottleneck", 2)])
def test_zero_initialized_block_is_identity(rng, transform, c):
    spec = ResidualBlockSpec.uniform(16, 4, c=c, transform=transform)
    block = zero_init_block(spec, randomize(ResidualBlock(spec), rng))
    x = Tensor(rng.normal(size=(2, 16, 6, 6)))
    np.testing.assert_array_equal(block(x, "train").data, x.data)


def test_zero_input_gives_zero_output(rng):
    spec = ResidualBlockSpec.uniform(8, 4)
    block = zero_init_block(spec, randomize(ResidualBlock(spec), rng))
    out = block(Tensor(np.zeros((2, 8, 4, 4))), "train")
    np.testing.assert_array_equal(out.data, np.zeros((2, 8, 4, 4)))


def test_zero_init_is_idempotent(rng):
    spec = ResidualBlockSpec.uniform(8, 4)
    block = zero_init_block(spec, randomize(ResidualBlock(spec), rng))
    once = {name: t.data.copy() for name, t in block.named_parameters()}
    zero_init_block(spec, block)
    for name, tensor in block.named_parameters():
        np.testing.assert_array_equal(tensor.data, once[name])


def test_zero_init_can_be_disabled(rng):
    spec = ResidualBlockSpec.uniform(8, 4).model_copy(update={"zero_init": False})
    block = zero_init_block(spec, randomize(ResidualBlock(spec), rng))
    assert np.abs(block.layer2.transforms[0].reading_conv.weight.data).sum() > 0


def test_second_layer_ends_with_bn_only():
    spec = ResidualBlockSpec.uniform(8, 4)
    assert spec.layer1.activate_output
    assert not spec.layer2.activate_output


@pytest.mark.parametrize("transform,c", [("basic", 1), ("bottleneck", 2)])
def test_zero_initialized_body_still_receives_gradients(rng, transform, c):
    spec = ResidualBlockSpec.uniform(8, 4, c=c, transform=transform)
    block = zero_init_block(spec, randomize(ResidualBlock(spec), rng))
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    direction = Tensor(rng.normal(size=(2, 8, 4, 4)))
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(block(x, "train"), direction))
    tape.backward(loss)
    for transform_params in block.layer2.transforms:
        last = transform_params.units[-1][1].conv.weight
        assert not last.data.any()
        assert np.abs(last.grad).max() > 0
        if transform == "bottleneck":
            assert np.abs(transform_params.reading_conv.weight.data).max() > 0


def test_block_width_mismatch_is_rejected(rng):
    spec = ResidualBlockSpec.uniform(8, 4)
    with pytest.raises(InvalidArgumentError, match="block width 8"):
        residual_block_forward(Tensor(rng.normal(size=(1, 12, 4, 4))), spec, ResidualBlock(spec))
    with pytest.raises(InvalidArgumentError):
        ResidualBlockSpec.uniform(10, 4)
    with pytest.raises(ValidationError):
        ResidualBlockSpec(width=8, layer1=SeqConvConfig(groups=2, k=4), layer2=SeqConvConfig(groups=3, k=4))


def test_downsample_adds_groups_and_halves_resolution(rng):
    spec = DownsampleBlockSpec(in_width=16, extension=SeqConvConfig(groups=2, k=4), downsize_groups=3)
    block = randomize(DownsampleBlock(spec), rng)
    assert spec.out_width == 24
    assert block.downsize.conv.weight.shape == (24, 8, 3, 3)
    out = block(Tensor(rng.normal(size=(2, 16, 8, 8))), "train")
    assert out.shape == (2, 24, 4, 4)


def test_downsample_odd_extent_rounds_up(rng):
    spec = DownsampleBlockSpec(in_width=4, downsize_groups=2)
    out = randomize(DownsampleBlock(spec), rng)(Tensor(rng.normal(size=(1, 4, 33, 33))), "train")
    assert out.shape == (1, 4, 17, 17)


def test_downsample_without_extension_keeps_width(rng):
    spec = DownsampleBlockSpec(in_width=8, downsize_groups=1)
    block = DownsampleBlock(spec)
    assert block.extension is None
    assert [name for name, _ in block.children()] == ["downsize"]


def test_downsample_groups_must_divide_width():
    with pytest.raises(ValidationError, match="do not divide"):
        DownsampleBlockSpec(in_width=16, extension=SeqConvConfig(groups=2, k=4), downsize_groups=5)


def test_residual_gradients_match_finite_differences(double):
    rng = np.random.default_rng(11)
    spec = ResidualBlockSpec.uniform(4, 2)
    block = randomize(ResidualBlock(spec), rng)
    x = Tensor(rng.normal(size=(2, 4, 3, 3)))
    direction = Tensor(rng.normal(size=(2, 4, 3, 3)))
    report = grad_check(lambda x_in, *_: ops.sum_all(ops.mul(block(x_in, "train"), direction)), [x] + block.parameters())
    assert report.passed, report


def test_downsample_gradients_match_finite_differences(double):
    rng = np.random.default_rng(12)
    spec = DownsampleBlockSpec(in_width=4, extension=SeqConvConfig(groups=1, k=2), downsize_groups=2)
    block = randomize(DownsampleBlock(spec), rng)
    x = Tensor(rng.normal(size=(2, 4, 4, 4)))
    direction = Tensor(rng.normal(size=(2, 6, 2, 2)))
    report = grad_check(lambda x_in, *_: ops.sum_all(ops.mul(block(x_in, "train"), direction)), [x] + block.parameters())
    assert report.passed, report


def test_running_statistics_are_tracked_in_train_mode(rng):
    spec = ResidualBlockSpec.uniform(8, 4)
    block = randomize(ResidualBlock(spec), rng)
    block(Tensor(rng.normal(size=(2, 8, 4, 4))), "train")
    norms = [m for _, m in block.named_modules() if isinstance(m, BatchNorm2d)]
    assert norms and all(m.state.tracked for m in norms)
    block(Tensor(rng.normal(size=(2, 8, 4, 4))), "eval")
