import hashlib
import json
import os
import shutil
import subprocess

import pytest

import nbreplay


def write_notebook(path, cells):
    path.write_text(json.dumps({"version": 1, "cells": [{"id": i, "code": c} for i, c in cells]}))
    return str(path)


@pytest.fixture
def project(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "a.txt").write_text("hello world\n")
    cells = [
        ("load", 'client = connect("local")\nraw = read_text("a.txt")\ndf = lines(raw)\nalias = df'),
        ("fns", "fn count(p) = len(words(read_text(p)))"),
        ("tasks", 't = task_fn("count", ["a.txt"], ["a.txt"], [])\n'
                  'c = task_cmd("wc -w a.txt > out.txt", ["a.txt"], ["out.txt"])'),
        ("run", "show(compute([t, c]))"),
    ]
    nb = write_notebook(tmp_path / "nb.json", cells)
    return tmp_path, ws, nb, cells


def test_digests_match_hashlib(tmp_path):
    assert nbreplay.sha256_hex(b"x = 1") == hashlib.sha256(b"x = 1").hexdigest()
    assert nbreplay.cell_code_hash("x = 1   \n\n") == hashlib.sha256(b"x = 1").hexdigest()
    (tmp_path / "a.txt").write_text("hello world\n")
    record = json.dumps(
        {"command": "wc -w a.txt", "inputs": {"a.txt": hashlib.sha256(b"hello world\n").hexdigest()}},
        separators=(",", ":"),
        sort_keys=True,
    )
    expected = hashlib.sha256(record.encode()).hexdigest()
    assert nbreplay.command_fingerprint("wc -w a.txt", ["a.txt"], str(tmp_path)) == expected
    assert nbreplay.command_fingerprint("wc -w  a.txt", ["a.txt"], str(tmp_path)) != expected


def test_canonicalization_and_analysis():
    assert nbreplay.canonicalize_token("subgraphcallable-a1b2c3d4") == "subgraphcallable"
    assert nbreplay.canonicalize_token("finalize-abc123def0") == "finalize"
    rw = nbreplay.analyze('client = connect("local")\nddf = read_text("d.csv")\ndf = lines(ddf)\nraw_df = df')
    assert rw["writes"] == {"client", "ddf", "df", "raw_df"}
    assert rw["reads"] == {"ddf", "df"}


def test_audit_repeat_rollback(project):
    tmp_path, ws, nb, cells = project
    bundle = str(tmp_path / "bundle")
    a = nbreplay.audit(nb, str(ws), bundle)
    assert a["ok"], a["error"]
    assert a["tasks_executed"] == 2
    assert (ws / "out.txt").read_text().split()[0] == "2"

    r = nbreplay.repeat(nb, bundle, str(ws))
    assert r["tasks_executed"] == 0
    assert r["tasks_cached"] == 2
    assert r["cells_executed"] == []

    edited = write_notebook(tmp_path / "edited.json", cells[:1] + [("fns", "fn count(p) = 1 + len(words(read_text(p)))")] + cells[2:])
    r2 = nbreplay.repeat(edited, bundle, str(ws))
    assert r2["cells_executed"] == ["fns", "tasks", "run"]
    assert (r2["tasks_cached"], r2["tasks_executed"]) == (1, 1)

    state = nbreplay.rollback(bundle, str(ws), 0)
    assert set(state["vars"]) == {"client", "raw", "df", "alias"}
    # Names are visited in sorted order; the second binding of one list is a reference.
    assert state["vars"]["df"] == {"ref": state["vars"]["alias"]["id"]}

    rep = nbreplay.inspect(bundle)
    assert rep["post_dedup_bytes"] <= rep["pre_dedup_bytes"]
    assert nbreplay.verify(bundle)["ok"]
    nbreplay.gc(bundle)
    assert nbreplay.verify(bundle)["ok"]


def test_corruption_is_reported(project):
    tmp_path, ws, nb, _ = project
    bundle = tmp_path / "bundle"
    assert nbreplay.audit(nb, str(ws), str(bundle))["ok"]
    blob = next(p for p in (bundle / "blobs").rglob("*") if p.is_file())
    data = bytearray(blob.read_bytes())
    data[0] ^= 1
    blob.write_bytes(bytes(data))
    report = nbreplay.verify(str(bundle))
    assert not report["ok"]
    assert report["bad_blobs"] == [blob.parent.name + blob.name]
    with pytest.raises(nbreplay.CorruptionError):
        nbreplay.repeat(nb, str(bundle), str(ws))


@pytest.mark.skipif(not os.environ.get("NBREPLAY_FIXTURE_TOOL"), reason="fixture generator not available")
def test_mapreduce_fixture(tmp_path):
    ws = tmp_path / "ws"
    subprocess.run([os.environ["NBREPLAY_FIXTURE_TOOL"], "mapreduce", str(ws)], check=True)
    bundle = str(tmp_path / "bundle")
    assert nbreplay.audit(str(ws / "notebook.json"), str(ws), bundle)["ok"]
    r = nbreplay.repeat(str(ws / "modified.json"), bundle, str(ws))
    assert (r["tasks_submitted"], r["tasks_cached"], r["tasks_executed"]) == (13, 12, 1)
    copy = tmp_path / "copy"
    shutil.copytree(tmp_path / "bundle", copy)
    assert nbreplay.verify(str(copy))["ok"]
