import io
import json
from enum import Enum
from fractions import Fraction

import pytest

from src.chase_phase.common import version_stamp
from src.chase_phase.storage import STDOUT_MARKER, ResultStorage


class _Status(Enum):
    OK = "ok"


@pytest.fixture
def storage(temp_dir) -> ResultStorage:
    return ResultStorage(root=temp_dir)


def test_resolve(storage, temp_dir):
    assert storage.resolve(None) is None
    assert storage.resolve("-") is None
    assert storage.resolve("out/a.json") == temp_dir / "out" / "a.json"
    assert storage.resolve(temp_dir / "b.json") == temp_dir / "b.json"


def test_write_text_creates_directories(storage, temp_dir):
    written = storage.write_text("nested/dir/file.txt", "hello\n")
    assert written == str(temp_dir / "nested" / "dir" / "file.txt")
    assert storage.read_text("nested/dir/file.txt") == "hello\n"


def test_write_to_stream():
    stream = io.StringIO()
    storage = ResultStorage(stream=stream)
    assert storage.write_text(None, "abc") == STDOUT_MARKER
    assert stream.getvalue() == "abc"


def test_read_from_stdout_marker_is_rejected(storage):
    with pytest.raises(ValueError):
        storage.read_text("-")


def test_write_json_adds_version_and_sorts(storage, temp_dir):
    storage.write_json("doc.json", {"b": Fraction(1, 3), "a": 0.25, "status": _Status.OK})
    text = (temp_dir / "doc.json").read_text()
    data = json.loads(text)
    assert data == {"a": "0.25", "b": "1/3", "status": "ok", "version": version_stamp()}
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")


def test_write_json_keeps_existing_version(storage):
    storage.write_json("doc.json", {"version": "pinned"})
    assert storage.read_json("doc.json") == {"version": "pinned"}


def test_write_json_is_byte_identical_on_rerun(storage, temp_dir):
    document = {"x": [1 / 3, Fraction(2, 7)], "y": {"z": None}}
    storage.write_json("one.json", document)
    storage.write_json("two.json", document)
    assert (temp_dir / "one.json").read_bytes() == (temp_dir / "two.json").read_bytes()


def test_write_csv(storage, temp_dir):
    rows = [
        {"k": 1, "C_k": Fraction(1, 4), "flag": True, "status": _Status.OK, "note": "x"},
        {"k": 2, "C_k": 0.125, "flag": None, "status": _Status.OK, "note": "y"},
    ]
    storage.write_csv("table.csv", rows, comments={"version": "v1", "config": {"d": 2}})
    lines = (temp_dir / "table.csv").read_text().splitlines()
    assert lines[0] == "# config: {'d': 2}"
    assert lines[1] == "# version: v1"
    assert lines[2] == "k,C_k,flag,status,note"
    assert lines[3] == "1,1/4,true,ok,x"
    assert lines[4] == "2,0.125,,ok,y"


def test_write_csv_column_order_and_empty_rows(storage, temp_dir):
    storage.write_csv("picked.csv", [{"a": 1, "b": 2}], columns=["b", "a"])
    assert (temp_dir / "picked.csv").read_text() == "b,a\n2,1\n"
    storage.write_csv("empty.csv", [])
    assert (temp_dir / "empty.csv").read_text() == "\n"
