import filecmp
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mcumap.cli import main
from mcumap.fixtures import GraphBuilder, build_resnet8
from mcumap.ir import NCHW, parse_graph, serialize_graph

SPEED = ["--max-orderings", "1000", "--search", "genetic"]


def write_identity_graph(path: Path) -> Path:
    b = GraphBuilder("ident", 0)
    b.input("x", (1, 4, 4, 4), NCHW)
    w = np.eye(4).reshape(4, 4, 1, 1)
    wn = b.const("w", w, "i8", "OIHW")
    b.node("c", "conv2d", {"strides": (1, 1), "padding": (0, 0, 0, 0),
                           "dilation": (1, 1), "groups": 1}, ["x", wn])
    b.output("c")
    path.write_text(serialize_graph(b.finish()))
    return path


def test_run_oracle_identity(tmp_path, capsys):
    gpath = write_identity_graph(tmp_path / "g.json")
    x = list(range(1, 65))
    inp = tmp_path / "in.json"
    inp.write_text(json.dumps({"x": x}))
    assert main(["run-oracle", "--graph", str(gpath), "--input", str(inp)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["c"] == x


def test_run_oracle_bad_length(tmp_path, capsys):
    gpath = write_identity_graph(tmp_path / "g.json")
    inp = tmp_path / "in.json"
    inp.write_text(json.dumps({"x": [1, 2, 3]}))
    assert main(["run-oracle", "--graph", str(gpath), "--input", str(inp)]) == 1


def test_missing_graph_names_path(tmp_path, capsys):
    rc = main(["compile", "--graph", str(tmp_path / "nope.json"),
               "--target", "gap9", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "nope.json" in capsys.readouterr().err


def test_compile_writes_files_and_report(tmp_path, capsys):
    gpath = tmp_path / "rn8.json"
    gpath.write_text(serialize_graph(build_resnet8()))
    out = tmp_path / "out"
    rc = main(["compile", "--graph", str(gpath), "--target", "gap9",
               "--out", str(out), "--emit-test-backend", "true"] + SPEED)
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert (out / "match_api.h").exists()
    assert (out / "main.c").exists()
    ne16 = [e for e in report["layers"]
            if e["module"] == "ne16"]
    assert ne16, "expected convolutions on ne16"


def test_compile_exit_2_when_nothing_accelerated(tmp_path):
    b = GraphBuilder("pool", 1)
    b.input("x", (1, 4, 8, 8), NCHW)
    t = b.avgpool("x", 2, 2)
    b.output(t)
    gpath = tmp_path / "g.json"
    gpath.write_text(serialize_graph(b.finish()))
    out = tmp_path / "o"
    rc = main(["compile", "--graph", str(gpath), "--target", "gap9",
               "--out", str(out)])
    assert rc == 2
    assert (out / "main.c").exists()  # fallback program still emitted


def test_out_of_memory_flagged(tmp_path):
    # a bare conv keeps an i32 intermediate alive: 64*96*96*4 B > diana's L2
    b = GraphBuilder("big", 2)
    b.input("x", (1, 3, 96, 96), NCHW)
    t = b.conv("x", 64, 3, 3, (1, 1), (1, 1, 1, 1))
    t = b.requant(t)
    b.output(t)
    gpath = tmp_path / "g.json"
    gpath.write_text(serialize_graph(b.finish()))
    out = tmp_path / "o"
    main(["compile", "--graph", str(gpath), "--target", "diana",
          "--out", str(out)] + SPEED)
    report = json.loads((out / "report.json").read_text())
    assert report["memory"]["arena_bytes"] > 512 * 1024
    assert report["memory"]["out_of_memory"]


def _tree_digest(root: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


def test_compile_byte_identical_across_runs_and_hash_seeds(tmp_path):
    gpath = tmp_path / "rn8.json"
    gpath.write_text(serialize_graph(build_resnet8()))
    outs = []
    for i, hashseed in enumerate(("0", "4242")):
        out = tmp_path / f"out{i}"
        env = dict(os.environ, PYTHONHASHSEED=hashseed)
        r = subprocess.run(
            [sys.executable, "-m", "mcumap.cli", "compile", "--graph", str(gpath),
             "--target", "gap9", "--out", str(out), "--seed", "7",
             "--emit-test-backend", "true"] + SPEED,
            capture_output=True, text=True, env=env)
        assert r.returncode == 0, r.stderr
        outs.append(_tree_digest(out))
    assert outs[0].keys() == outs[1].keys()
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], name


def test_estimate_single_column_and_compile_agreement(tmp_path):
    gpath = tmp_path / "rn8.json"
    gpath.write_text(serialize_graph(build_resnet8()))
    rep = tmp_path / "est.json"
    rc = main(["estimate", "--graph", str(gpath), "--target", "gap9",
               "--l1-sizes", "128k", "--report", str(rep), "--seed", "7"] + SPEED)
    assert rc == 0
    est = json.loads(rep.read_text())
    assert est["l1_sizes"] == [128 * 1024]

    out = tmp_path / "out"
    main(["compile", "--graph", str(gpath), "--target", "gap9", "--out", str(out),
          "--seed", "7"] + SPEED)
    comp = json.loads((out / "report.json").read_text())
    comp_by_nodes = {tuple(e["nodes"]): e for e in comp["layers"]}
    for row in est["layers"]:
        cell = row["per_size"][0]
        entry = comp_by_nodes[tuple(row["nodes"])]
        if cell["module"] == "fallback":
            assert entry["module"] == "fallback"
        else:
            assert cell["module"] == entry["module"]
            assert cell["predicted_cycles"] == entry["predicted_cycles"]


def test_fixture_subcommand_roundtrips(tmp_path):
    out = tmp_path / "dae.json"
    assert main(["fixture", "dae", "--out", str(out)]) == 0
    g = parse_graph(out.read_text())
    assert g.name == "dae"
    assert main(["fixture", "bogus"]) == 1
