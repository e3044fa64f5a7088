import json

import pytest

from mswasm.cli import main

OK_MODULE = """
(module (segment 64) (heap 0)
  (func (local handle) (result i32)
    i32.const 8 new_segment set 0
    get 0 i32.const 7 i32.segstore
    get 0 i32.segload
    get 0 segfree))
"""

TRAP_MODULE = """
(module (segment 64) (heap 0)
  (func (local handle) (result i32)
    get 0 i32.segload))
"""

SAFE_SOURCE = """
module {
  fn main() -> int {
    var (p: ptr<array int>, x: int);
    p := malloc<int>(2);
    *(p + 0) := 11;
    x := *(p + 0);
    free(p);
    x
  }
  heap 0
}
"""

OVERFLOW_SOURCE = """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(2);
    *(p + 9) := 1;
    0
  }
  heap 0
}
"""


@pytest.fixture
def ok_file(tmp_path):
    f = tmp_path / "ok.mswat"
    f.write_text(OK_MODULE)
    return str(f)


def test_parse_roundtrip(ok_file, capsys):
    assert main(["parse", ok_file]) == 0
    out = capsys.readouterr().out
    assert out.startswith("(module")


def test_parse_error_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.mswat"
    f.write_text("(module (func")
    assert main(["parse", str(f)]) == 12


def test_typecheck_ok(ok_file):
    assert main(["typecheck", ok_file]) == 0


def test_typecheck_error_exit_code(tmp_path):
    f = tmp_path / "bad.mswat"
    f.write_text("(module (segment 0) (heap 0) (func (result i32) new_segment))")
    assert main(["typecheck", str(f)]) == 11


def test_run_ok_and_trace_file(ok_file, tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["run", ok_file, "--trace", str(out)]) == 0
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert [l["ev"] for l in lines] == ["salloc", "write", "read", "sfree"]
    assert lines[0] == {"ev": "salloc", "base": 0, "offset": 0, "bound": 8,
                        "valid": True, "id": 0}


def test_run_trap_exit_code(tmp_path):
    f = tmp_path / "trap.mswat"
    f.write_text(TRAP_MODULE)
    assert main(["run", str(f)]) == 10


def test_run_budget_exit_code(tmp_path):
    f = tmp_path / "loop.mswat"
    f.write_text("(module (segment 0) (heap 0)"
                 " (func (result i32) call 1)"
                 " (func (result i32) call 1))")
    assert main(["run", str(f), "--budget", "100"]) == 14


def test_run_baggy_backend(ok_file):
    assert main(["run", ok_file, "--backend", "baggy"]) == 0


def test_check_safe(ok_file):
    assert main(["check", ok_file]) == 0


def test_monitor_safe_and_violation(tmp_path):
    safe = tmp_path / "safe.jsonl"
    safe.write_text('{"ev":"alloc","n":2,"a":0,"c":0,"phi":[0,0]}\n'
                    '{"ev":"read","a":1,"c":0,"s":0}\n')
    assert main(["monitor", str(safe)]) == 0
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"ev":"read","a":1,"c":0,"s":0}\n')
    assert main(["monitor", str(bad)]) == 13


def test_compile_and_run(tmp_path):
    src = tmp_path / "p.uc"
    src.write_text(SAFE_SOURCE)
    out = tmp_path / "p.mswat"
    assert main(["compile", str(src), "-o", str(out)]) == 0
    assert main(["run", str(out)]) == 0
    assert main(["check", str(out)]) == 0


def test_compile_type_error_exit(tmp_path):
    src = tmp_path / "p.uc"
    src.write_text("module { fn main() -> int { var (); let y = n(1) in y } heap 0 }")
    assert main(["compile", str(src)]) == 11


def test_diff_safe_and_unsafe(tmp_path, capsys):
    src = tmp_path / "p.uc"
    src.write_text(SAFE_SOURCE)
    assert main(["diff", str(src), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["related"] is True and payload["src_verdict"] == "safe"

    src.write_text(OVERFLOW_SOURCE)
    assert main(["diff", str(src), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["related"] is True
    assert payload["src_verdict"].startswith("unsafe@")


def test_fuzz_smoke(tmp_path, capsys):
    assert main(["fuzz", "--n", "20", "--seed", "3",
                 "--out", str(tmp_path / "cex")]) == 0
    assert "0 counterexamples" in capsys.readouterr().out


def test_fuzz_attacker_smoke(tmp_path):
    assert main(["fuzz", "--n", "6", "--seed", "0", "--attacker",
                 "--out", str(tmp_path / "cex")]) == 0


def test_fuzz_source_smoke(tmp_path):
    assert main(["fuzz", "--n", "10", "--seed", "0", "--source",
                 "--out", str(tmp_path / "cex")]) == 0


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
