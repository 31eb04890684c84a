# File: test_checkpoint_heatmap.py
# Checkpoint container round trips and corruption handling; SeqConv weight heat maps

import numpy as np
import pytest

from seqnet.services.checkpoint import (
    MAGIC,
    load_checkpoint,
    restore_training_state,
    save_checkpoint,
    save_training_state,
)
from seqnet.services.heatmap import (
    UNDEFINED,
    compute_heatmap,
    heatmap_filename,
    read_heatmap_csv,
    select_layers,
    write_heatmap_csv,
)
from seqnet.services.trainer import OptimizerState, init_weights
from seqnet.src import runtime
from seqnet.src.errors import CorruptFileError, DataError, InvalidArgumentError
from seqnet.src.model import SeqNetwork
from seqnet.src.seqconv import SeqConvConfig, SeqConvLayer, window_mask


@pytest.fixture
def saved(tmp_path, rng):
    tensors = {
        "a": rng.normal(size=(2, 3)).astype(np.float32),
        "b": rng.normal(size=(4,)),
        "steps": np.arange(3, dtype=np.int64),
    }
    path = save_checkpoint(tmp_path / "c.sqcv", tensors, {"epoch": 4})
    return path, tensors


# --- container ---


def test_container_round_trip(saved):
    path, tensors = saved
    loaded, meta = load_checkpoint(path)
    assert meta == {"epoch": 4}
    assert list(loaded) == list(tensors)
    for name, array in tensors.items():
        assert loaded[name].dtype == array.dtype
        np.testing.assert_array_equal(loaded[name], array)
    assert path.read_bytes()[:8] == MAGIC
    assert not path.with_suffix(".sqcv.partial").exists()


def test_bad_magic(saved):
    path, _ = saved
    raw = bytearray(path.read_bytes())
    raw[0:8] = b"NOTACKPT"
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFileError, match="magic") as info:
        load_checkpoint(path)
    assert info.value.offset == 0


def test_unknown_version(saved):
    path, _ = saved
    raw = bytearray(path.read_bytes())
    raw[8] = 7
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFileError, match="version 7"):
        load_checkpoint(path)


def test_truncated_file(saved):
    path, _ = saved
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CorruptFileError, match="unexpected end"):
        load_checkpoint(path)


def test_trailing_bytes(saved):
    path, _ = saved
    raw = path.read_bytes()
    path.write_bytes(raw + b"\x00\x00")
    with pytest.raises(CorruptFileError, match="trailing") as info:
        load_checkpoint(path)
    assert info.value.offset == len(raw)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_checkpoint(tmp_path / "none.sqcv")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(DataError, match="unsupported dtype"):
        save_checkpoint(tmp_path / "x.sqcv", {"flags": np.zeros(2, dtype=bool)}, {})


# --- training state ---


def test_training_state_round_trip(tmp_path, tiny_spec):
    network = init_weights(tiny_spec, seed=3)
    state = OptimizerState({name: np.full(t.shape, 0.5, dtype=t.dtype) for name, t in network.named_parameters()})
    path = save_training_state(tmp_path / "state.sqcv", network, state, {"epoch": 2})
    restored, restored_state, meta = restore_training_state(path)
    assert meta["epoch"] == 2
    assert restored.spec == tiny_spec
    for name, array in network.state_arrays().items():
        np.testing.assert_array_equal(restored.state_arrays()[name], array)
    assert set(restored_state.velocities) == set(state.velocities)


def test_double_precision_state_restores_as_double(tmp_path, tiny_spec):
    with runtime.settings(precision="double"):
        network = init_weights(tiny_spec)
    path = save_training_state(tmp_path / "double.sqcv", network)
    restored, _, _ = restore_training_state(path)
    assert restored.classifier.weight.dtype == np.float64


def test_state_without_spec_is_corrupt(tmp_path, tiny_spec):
    arrays = {"model/" + name: a for name, a in SeqNetwork(tiny_spec).state_arrays().items()}
    path = save_checkpoint(tmp_path / "nospec.sqcv", arrays, {"epoch": 0})
    with pytest.raises(CorruptFileError, match="no network spec"):
        restore_training_state(path)


def test_state_with_wrong_shapes_is_corrupt(tmp_path, tiny_spec):
    network = SeqNetwork(tiny_spec)
    arrays = {"model/" + name: a for name, a in network.state_arrays().items()}
    arrays["model/fc/bias"] = np.zeros(3, dtype=np.float32)
    path = save_checkpoint(tmp_path / "shape.sqcv", arrays, {"spec": tiny_spec.model_dump(mode="json")})
    with pytest.raises(CorruptFileError, match="fc/bias"):
        restore_training_state(path)


# --- heat maps ---


def constant_layer(groups, k, in_groups):
    layer = SeqConvLayer(SeqConvConfig(groups=groups, k=k), in_groups * k)
    for transform in layer.transforms:
        transform.reading_conv.weight.data[...] = 1.0
    return layer


def test_heatmap_shape_and_defined_cells():
    matrix = compute_heatmap(constant_layer(8, 2, 8))
    assert matrix.values.shape == (8, 15)
    assert matrix.positions == list(range(-7, 8))
    assert (matrix.defined.sum(axis=1) == 8).all()
    for i in range(1, 9):
        expected = window_mask(i, 8, 8).astype(bool)
        np.testing.assert_array_equal(matrix.defined[i - 1, : len(expected)], expected)
    np.testing.assert_array_equal(matrix.values[matrix.defined], 1.0)


@pytest.mark.parametrize("in_groups,window", [(4, 2), (2, 6), (3, 3)])
def test_heatmap_columns_follow_the_window(in_groups, window):
    layer = SeqConvLayer(SeqConvConfig(groups=4, k=2, window=window), in_groups * 2)
    for transform in layer.transforms:
        transform.reading_conv.weight.data[...] = 1.0
    matrix = compute_heatmap(layer)
    visible = min(in_groups, window)
    assert matrix.positions == list(range(1 - visible, 4))
    assert matrix.defined.any(axis=0).all()
    for i in range(1, 5):
        expected = window_mask(i, window, visible).astype(bool)
        np.testing.assert_array_equal(matrix.defined[i - 1, : len(expected)], expected)
        assert not matrix.defined[i - 1, len(expected) :].any()


def test_zero_kernels_give_zero_cells():
    layer = SeqConvLayer(SeqConvConfig(groups=4, k=2), 8)
    matrix = compute_heatmap(layer)
    assert (matrix.values[matrix.defined] == 0).all()
    assert (matrix.values[~matrix.defined] == UNDEFINED).all()


def test_one_slice_changes_one_cell():
    layer = constant_layer(4, 2, 4)
    before = compute_heatmap(layer).values
    # group 3 reads positions -1..2; halve its slice for position 1
    layer.transforms[2].reading_conv.weight.data[:, 4:6] *= 0.5
    after = compute_heatmap(layer).values
    changed = np.argwhere(before != after)
    assert changed.tolist() == [[2, 4]]
    assert after[2, 4] == 0.5


def test_dense_layer_heatmap_is_lower_triangular_block():
    layer = SeqConvLayer(SeqConvConfig(groups=3, k=2, windowed=False), 4)
    for transform in layer.transforms:
        transform.reading_conv.weight.data[...] = 1.0
    matrix = compute_heatmap(layer)
    assert matrix.defined.sum(axis=1).tolist() == [2, 3, 4]


def test_heatmap_csv_round_trip(tmp_path, rng):
    layer = constant_layer(3, 2, 3)
    for transform in layer.transforms:
        weight = transform.reading_conv.weight
        weight.data[...] = rng.normal(size=weight.shape)
    matrix = compute_heatmap(layer, "stage0/block0/layer2")
    path = write_heatmap_csv(matrix, tmp_path / heatmap_filename(matrix.layer))
    assert path.name == "stage0_block0_layer2.csv"
    parsed = read_heatmap_csv(path)
    assert parsed.positions == matrix.positions
    np.testing.assert_array_equal(parsed.values, matrix.values)
    assert path.read_text().splitlines()[0] == "target,-2,-1,0,1,2"


def test_select_layers_by_glob(tiny_spec):
    layers = SeqNetwork(tiny_spec).seqconv_layers()
    chosen = select_layers(layers, "stage*/block0/layer2")
    assert list(chosen) == ["stage0/block0/layer2", "stage1/block0/layer2", "stage2/block0/layer2"]
    with pytest.raises(InvalidArgumentError, match="available"):
        select_layers(layers, "stage9/*")
