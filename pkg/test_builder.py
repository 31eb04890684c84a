# File: test_builder.py
# Network templates, complexity reports, graph listings and spec JSON documents

import json

import numpy as np
import pytest
from pydantic import ValidationError

from seqnet.src.builder import (
    GMAC_UNIT,
    IMAGENET_NAMES,
    ConvSpec,
    NetworkSpec,
    StageSpec,
    build_cifar_template,
    build_imagenet_template,
    count_macs,
    count_params,
    graph_dump,
    load_spec,
    reference_complexity,
    save_spec,
    spec_from_dict,
    spec_from_json,
    spec_to_json,
    ablation_setting,
)
from seqnet.src.errors import ConfigError, InvalidArgumentError
from seqnet.src.model import SeqNetwork
from seqnet.src.tensor import Tensor, mac_counter

# Published sizes: (params, GMACs) for ImageNet and params for CIFAR
IMAGENET_PUBLISHED = {
    "SeqResNeXt-24": (26.2e6, 4.32),
    "SeqResNet-B42": (25.6e6, 5.33),
    "SeqResNet-B22": (11.8e6, 2.73),
}
CIFAR_PUBLISHED = [
    (dict(k=8, r=4, n=1), 1.2e6),
    (dict(k=16, r=10, n=1), 7.6e6),
    (dict(k=16, r=7, n=1, variant="bottleneck"), 0.8e6),
    (dict(k=32, r=12, n=3, variant="bottleneck"), 6.0e6),
]
ABLATION_PUBLISHED = {"S1": 1.2e6, "S2": 1.2e6, "S3": 1.3e6, "S4": 1.3e6}


@pytest.mark.parametrize("name", IMAGENET_NAMES)
def test_imagenet_templates_match_published_complexity(name):
    params, gmacs = IMAGENET_PUBLISHED[name]
    report = count_params(build_imagenet_template(name))
    assert abs(report.total_params - params) / params <= 0.02
    assert abs(report.gmacs - gmacs) / gmacs <= 0.05
    assert report.geometry == (224, 224)


@pytest.mark.parametrize("kwargs,published", CIFAR_PUBLISHED)
def test_cifar_templates_match_published_sizes(kwargs, published):
    total = count_params(build_cifar_template(**kwargs)).total_params
    assert abs(total - published) / published <= 0.10


@pytest.mark.parametrize("setting", sorted(ABLATION_PUBLISHED))
def test_ablation_settings_are_constructible(setting):
    spec = ablation_setting(setting)
    published = ABLATION_PUBLISHED[setting]
    assert abs(count_params(spec).total_params - published) / published <= 0.10


def test_dense_ablation_setting_disables_windows():
    spec = ablation_setting("S2")
    assert [stage.blocks for stage in spec.stages] == [1, 2, 1]
    assert not any(stage.windowed for stage in spec.stages)
    with pytest.raises(InvalidArgumentError, match="S1"):
        ablation_setting("S9")


def test_cifar_stage_widths():
    spec = build_cifar_template(k=8, r=4, n=(1, 2, 3))
    assert [stage.width for stage in spec.stages] == [64, 128, 192]
    assert [stage.blocks for stage in spec.stages] == [1, 2, 3]
    assert spec.head.width == 192
    assert spec.name == "SeqResNet(k=8,r=4,N=1/2/3)"


def test_exact_counts_of_small_cifar_models():
    assert count_params(build_cifar_template(k=4, r=1, n=1)).total_params == 81_466
    assert count_params(build_cifar_template(k=8, r=4, n=1)).total_params == 1_233_370


def test_reference_resnet50():
    report = reference_complexity()
    assert abs(report.total_params - 25.56e6) / 25.56e6 < 0.01
    assert abs(report.gmacs - 3.86) / 3.86 < 0.025
    with pytest.raises(InvalidArgumentError):
        reference_complexity("VGG-16")


def test_single_stem_conv_count():
    spec = NetworkSpec(stem=[ConvSpec(in_channels=3, out_channels=16)])
    report = count_params(spec)
    assert report.total_params == 3 * 16 * 9 + 32 == 464
    assert report.conv_params == 432 and report.bn_params == 32


def test_empty_spec_counts_zero():
    report = count_params(NetworkSpec())
    assert report.total_params == 0
    assert report.macs == 0


def test_counted_params_equal_instantiated_params(tiny_spec):
    for spec in (tiny_spec, build_cifar_template(k=4, r=1, n=(0, 1, 2), variant="bottleneck", windowed=False)):
        assert SeqNetwork(spec).parameter_count() == count_params(spec).total_params


def test_counted_macs_equal_measured_macs(rng, tiny_spec):
    network = SeqNetwork(tiny_spec)
    with mac_counter() as counter:
        network(Tensor(rng.normal(size=(1, 3, 8, 8))), "train")
    assert counter.total == count_macs(tiny_spec, (8, 8))


def test_conv_macs_quadruple_when_resolution_doubles(tiny_spec):
    fc = tiny_spec.head.width * tiny_spec.head.classes
    small = count_macs(tiny_spec, (32, 32)) - fc
    large = count_macs(tiny_spec, (64, 64)) - fc
    assert large == 4 * small


def test_report_table_has_stage_rows_and_total(tiny_spec):
    report = count_params(tiny_spec)
    frame = report.table()
    assert list(frame["name"]) == ["stem", "conv2", "conv3", "conv4", "head", "total"]
    assert frame["params"].iloc[-1] == report.total_params
    assert frame["params"].iloc[:-1].sum() == report.total_params
    assert report.gmacs == report.macs / GMAC_UNIT


def test_graph_dump_lists_every_layer(tiny_spec):
    text = graph_dump(tiny_spec)
    assert text == graph_dump(tiny_spec)
    lines = text.splitlines()
    assert lines[0].startswith("# SeqResNet(k=4,r=1,N=1/1/1)")
    paths = [line.split()[0] for line in lines[1:]]
    assert paths == [
        "stem0",
        "stage0/entry",
        "stage0/block0/layer1",
        "stage0/block0/layer2",
        "stage1/downsample/extension",
        "stage1/downsample/downsize",
        "stage1/block0/layer1",
        "stage1/block0/layer2",
        "stage2/downsample/extension",
        "stage2/downsample/downsize",
        "stage2/block0/layer1",
        "stage2/block0/layer2",
        "head",
        "fc",
    ]
    assert "red*" in lines[2] and "blue*" in lines[3]


def test_spec_json_round_trip(tmp_path, tiny_spec):
    assert spec_from_json(spec_to_json(tiny_spec)) == tiny_spec
    path = tmp_path / "spec.json"
    save_spec(tiny_spec, path)
    assert load_spec(path) == tiny_spec


def test_unknown_keys_are_rejected_with_their_path(tiny_spec):
    payload = json.loads(spec_to_json(tiny_spec))
    payload["stages"][1]["windows"] = 3
    with pytest.raises(ConfigError) as info:
        spec_from_dict(payload, root="network.spec")
    assert info.value.path == "network.spec.stages.1.windows"


def test_malformed_json_is_a_config_error():
    with pytest.raises(ConfigError, match="malformed JSON"):
        spec_from_json("{\"name\": ")


def test_divisibility_errors_name_the_stage():
    with pytest.raises(InvalidArgumentError, match="stage conv2"):
        build_cifar_template(k=5, r=1)
    with pytest.raises(ValidationError, match="stage wide"):
        NetworkSpec(
            stem=[ConvSpec(in_channels=3, out_channels=16)],
            stages=[StageSpec(name="wide", width=16, k=6)],
        )


def test_stage_chain_must_connect():
    with pytest.raises(ValidationError, match="stem conv 1"):
        NetworkSpec(stem=[ConvSpec(in_channels=3, out_channels=16), ConvSpec(in_channels=8, out_channels=16)])


def test_network_without_blocks_is_valid():
    spec = build_cifar_template(k=4, r=1, n=0)
    network = SeqNetwork(spec)
    assert network.residual_blocks() == []
    out = network(Tensor(np.random.default_rng(0).normal(size=(2, 3, 8, 8))), "train")
    assert out.shape == (2, 10)
