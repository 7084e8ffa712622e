import json

import pytest

from oxflow.cli import main

TUPLE_SRC = "fn main(u: unit) -> u32 {\n  let t: (u32, u32) = (1, 2);\n  t.1 := 3;\n  t.0\n}\n"


@pytest.fixture()
def tuple_file(tmp_path):
    path = tmp_path / "tuple.ox"
    path.write_text(TUPLE_SRC)
    return str(path)


def test_check_ok(tuple_file, capsys):
    assert main(["check", tuple_file, "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["functions"][0]["name"] == "main"
    assert data["functions"][0]["locations"]


def test_check_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ox"
    bad.write_text(
        "fn main(u: unit) -> u32 { let t: (u32, u32) = (1, 2);"
        " let v: (u32, u32) = t; t.0 }"
    )
    assert main(["check", str(bad), "--json"]) == 1
    data = json.loads(capsys.readouterr().out)
    assert data["functions"][0]["errors"]


def test_flow_json_both_engines(tuple_file, capsys):
    assert main(["flow", tuple_file, "--json"]) == 0
    typed_out = json.loads(capsys.readouterr().out)
    assert main(["flow", tuple_file, "--engine", "cfg", "--json"]) == 0
    cfg_out = json.loads(capsys.readouterr().out)
    t1 = typed_out["functions"][0]["exit_theta"]
    t2 = cfg_out["functions"][0]["exit_theta"]
    assert [(r["place"], [d["id"] for d in r["deps"]]) for r in t1] == [
        (r["place"], [d["id"] for d in r["deps"]]) for r in t2
    ]


def test_run_with_init(tmp_path, capsys):
    path = tmp_path / "echo.ox"
    path.write_text("fn main(w: (u32, bool)) -> u32 { w.0 }")
    assert main(["run", str(path), "--init", "[5, true]"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["value"] == 5


def test_slice_cli(tuple_file, capsys):
    assert main(["slice", tuple_file, "--fn", "main", "--var", "t", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["locations"] and data["spans"]


def test_ifc_cli(tmp_path, capsys):
    path = tmp_path / "leaky.ox"
    path.write_text(
        "// @secure\nextern fn read_password(u: unit) -> u32;\n"
        "// @insecure\nextern fn insecure_print(x: u32) -> unit;\n"
        "extern fn is_weak(p: u32) -> bool;\n"
        "fn check(w: u32) -> unit {\n"
        "  let un: unit = ();\n"
        "  let pw: u32 = read_password<>(un);\n"
        "  let weak: bool = is_weak<>(pw);\n"
        "  let msg: u32 = 7;\n"
        "  if weak { insecure_print<>(msg) } else { () }\n"
        "}\n"
    )
    assert main(["ifc", str(path), "--json"]) == 1
    data = json.loads(capsys.readouterr().out)
    assert data["violations"][0]["source"] == "read_password"


def test_cfg_dot(tuple_file, capsys):
    assert main(["cfg", tuple_file, "--dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph")


def test_ni_cli(corpus_dir, capsys):
    assert main([
        "ni", str(corpus_dir), "--trials", "5", "--seed", "1", "--mode", "modular",
    ]) == 0
    assert "total violations: 0" in capsys.readouterr().out


def test_eval_cli(corpus_dir, tmp_path, capsys):
    out_csv = tmp_path / "rows.csv"
    assert main([
        "eval", str(corpus_dir), "--base", "modular",
        "--others", "whole,mutblind,refblind", "--csv", str(out_csv),
    ]) == 0
    assert out_csv.exists()
    header = out_csv.read_text().splitlines()[0]
    assert header == "program,fn,var,mode,size,base_size,pct_increase"


def test_syntax_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "broken.ox"
    bad.write_text("fn main(u: unit) { let x: = 1; x }")
    assert main(["check", str(bad)]) == 2
    assert "syntax error" in capsys.readouterr().err
