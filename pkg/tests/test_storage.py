"""結果ファイルとマニフェストの保存のテスト"""

import hashlib
import json
import os

import pandas as pd
import pytest

from nullspread.storage import RunManifest, atomic_write_text, file_digest, manifest_path, write_frame, write_json


def test_atomic_write_creates_directory(tmp_path):
    path = tmp_path / "nested" / "out.txt"
    atomic_write_text(str(path), "abc\n")
    assert path.read_text(encoding="utf-8") == "abc\n"
    assert [name for name in os.listdir(path.parent) if name.startswith(".tmp-")] == []


def test_write_frame_uses_unix_newlines(tmp_path):
    path = tmp_path / "frame.csv"
    write_frame(pd.DataFrame({"a": [1, 2], "b": [0.1, 0.25]}), str(path))
    assert path.read_bytes() == b"a,b\n1,0.1\n2,0.25\n"


def test_write_json_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        write_json({"x": float("nan")}, str(tmp_path / "x.json"))
    assert not (tmp_path / "x.json").exists()


def test_manifest(tmp_path):
    source = tmp_path / "input.tsv"
    source.write_text("gene_id\n", encoding="utf-8")
    output = str(tmp_path / "result.csv")

    manifest = RunManifest(command="test", config={"alpha1": 0.1}, seed=3)
    manifest.add_input(str(source))
    written = manifest.write(output)

    assert written == manifest_path(output) == f"{output}.manifest.json"
    with open(written, encoding="utf-8") as f:
        data = json.load(f)
    assert data["inputs"][str(source)] == hashlib.sha256(b"gene_id\n").hexdigest()
    assert data["outputs"] == [output]
    assert data["seed"] == 3
    assert file_digest(str(source)) == data["inputs"][str(source)]
