import json

import numpy as np
import pytest

from mcumap.ir import (
    GraphParseError, GraphStructureError, parse_graph, serialize_graph,
    validate_graph, value_specs,
)


def doc_single_conv():
    return {
        "name": "single",
        "inputs": [{"name": "x", "shape": [1, 8, 8, 8], "dtype": "i8", "layout": "NCHW"}],
        "constants": {"w": {"shape": [8, 8, 1, 1], "dtype": "i8", "layout": "OIHW",
                            "data": [0] * 64}},
        "nodes": [{"id": "c", "op": "conv2d",
                   "attrs": {"strides": [1, 1], "padding": [0, 0, 0, 0]},
                   "inputs": ["x", "w"]}],
        "outputs": ["c"],
    }


def test_parse_minimal_graph():
    g = parse_graph(json.dumps(doc_single_conv()))
    assert len(g.nodes) == 1 and len(g.constants) == 1
    assert validate_graph(g) == []


def test_dangling_reference_names_the_value():
    doc = doc_single_conv()
    doc["nodes"][0]["inputs"] = ["x9", "w"]
    with pytest.raises(GraphStructureError, match="x9"):
        parse_graph(json.dumps(doc))


def test_malformed_json_reports_position():
    with pytest.raises(GraphParseError, match="line"):
        parse_graph("{ nope")


def test_out_of_order_nodes_rejected():
    doc = doc_single_conv()
    doc["nodes"] = [
        {"id": "r", "op": "relu", "attrs": {}, "inputs": ["c"]},
        doc["nodes"][0],
    ]
    doc["outputs"] = ["r"]
    with pytest.raises(GraphStructureError):
        parse_graph(json.dumps(doc))


def test_roundtrip_identity():
    g = parse_graph(json.dumps(doc_single_conv()))
    text = serialize_graph(g)
    assert serialize_graph(parse_graph(text)) == text


def test_resnet_fixture_shape(resnet8):
    assert len(resnet8.nodes) == 26
    assert validate_graph(resnet8) == []
    text = serialize_graph(resnet8)
    assert serialize_graph(parse_graph(text)) == text


def test_groups_must_divide_channels():
    doc = doc_single_conv()
    doc["nodes"][0]["attrs"]["groups"] = 3
    g = parse_graph(json.dumps(doc))
    assert any("groups must divide channels" in d for d in validate_graph(g))


def test_same_padding_identity_extent():
    doc = doc_single_conv()
    doc["inputs"][0]["shape"] = [1, 4, 32, 32]
    doc["constants"]["w"]["shape"] = [4, 4, 3, 3]
    doc["constants"]["w"]["data"] = [0] * (4 * 4 * 9)
    doc["nodes"][0]["attrs"]["padding"] = [1, 1, 1, 1]
    g = parse_graph(json.dumps(doc))
    assert validate_graph(g) == []
    assert value_specs(g)["c"].shape == (1, 4, 32, 32)


def test_constant_payload_length_checked():
    doc = doc_single_conv()
    doc["constants"]["w"]["data"] = [0] * 63
    g = parse_graph(json.dumps(doc))
    assert any("payload" in d for d in validate_graph(g))


def test_multi_output_reference_rejected():
    doc = doc_single_conv()
    doc["outputs"] = ["c:1"]
    with pytest.raises(GraphStructureError):
        parse_graph(json.dumps(doc))
