import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mswasm import bytecode as bc
from mswasm.bytecode import (
    FuncDef,
    FuncType,
    ModuleDef,
    OPCODES,
    ParseError,
    ValidationError,
    ValueType,
    parse_module,
    print_module,
)

MINIMAL = "(module (segment 64) (heap 0) (func (result i32) i32.const 7 return))"


def test_minimal_module():
    m = parse_module(MINIMAL)
    assert len(m.funcs) == 1
    assert m.segment_size == 64 and m.heap_size == 0
    f = m.funcs[0]
    assert f.results == (ValueType.I32,)
    assert f.body == (bc.const(ValueType.I32, 7), bc.return_())


def test_alloc_module_parses():
    m = parse_module("(module (segment 64) (heap 0)"
                     " (func (result handle) i32.const 8 new_segment return))")
    assert m.funcs[0].body[1] == bc.new_segment()


def test_call_index_out_of_range():
    with pytest.raises(ValidationError):
        parse_module("(module (segment 0) (heap 0) (func (result i32) call 5))")


def test_local_index_out_of_range():
    with pytest.raises(ValidationError):
        parse_module("(module (segment 0) (heap 0) (func (result i32) get 0))")


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as exc:
        parse_module("(module (segment 64)\n (heap 0) (func bogus))")
    assert exc.value.line == 2


def test_roundtrip_minimal():
    m = parse_module(MINIMAL)
    assert parse_module(print_module(m)) == m


def test_empty_body_prints_as_func():
    m = ModuleDef((FuncDef((), (), (), ()),), (), 0, 0)
    text = print_module(m)
    assert "(func" in text
    assert parse_module(text) == m


NESTED_IF = """\
(module
  (segment 16)
  (heap 0)
  (func (param i32) (result i32)
    get 0
    (if
      (then
        get 0
        (if
          (then
            i32.const 1
          )
          (else
            i32.const 2
          )
        )
      )
      (else
        i32.const 3
      )
    )
  )
)
"""


def test_nested_if_golden():
    m = parse_module(NESTED_IF)
    assert print_module(m) == NESTED_IF
    assert parse_module(print_module(m)) == m


def test_imports_roundtrip():
    src = ("(module (segment 0) (heap 0)"
           " (import (param i32 handle) (result i32))"
           " (func (result i32) i32.const 1))")
    m = parse_module(src)
    assert m.imports == (FuncType((ValueType.I32, ValueType.HANDLE),
                                  (ValueType.I32,)),)
    assert parse_module(print_module(m)) == m
    assert not m.is_whole


def test_every_instruction_roundtrips():
    """Every constructor in the instruction union must have a print and a
    parse case."""
    samples = {
        "nop": bc.nop(),
        "trap": bc.trap(),
        "const": bc.const(ValueType.I64, -3),
        "binop": bc.binop(ValueType.I32, "xor"),
        "get": bc.get(0),
        "set": bc.set_(1),
        "load": bc.load(ValueType.F64),
        "store": bc.store(ValueType.I32),
        "if": bc.if_((bc.nop(),), (bc.trap(),)),
        "call": bc.call(0),
        "return": bc.return_(),
        "segload": bc.segload(ValueType.HANDLE),
        "segstore": bc.segstore(ValueType.F32),
        "slice": bc.slice_(),
        "new_segment": bc.new_segment(),
        "handle_add": bc.handle_add(),
        "segfree": bc.segfree(),
    }
    assert set(samples) == set(OPCODES)
    body = tuple(samples.values())
    f = FuncDef((ValueType.I32,), (ValueType.I32,), (), body)
    m = ModuleDef((FuncDef((), (), (ValueType.I32,), (bc.const(ValueType.I32, 0),)), f),
                  (), 16, 64)
    assert parse_module(print_module(m)) == m


def test_float_literals():
    m = parse_module("(module (segment 0) (heap 0)"
                     " (func (result f64) f64.const -2.5e3))")
    assert m.funcs[0].body[0].literal == -2500.0
    assert parse_module(print_module(m)) == m


def test_handle_const_is_not_parseable():
    with pytest.raises(ParseError):
        parse_module("(module (segment 0) (heap 0) (func handle.const 0))")


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_roundtrip_fuzzed_modules(seed):
    from mswasm.conformance import fuzz_module

    m = fuzz_module(seed)
    assert parse_module(print_module(m)) == m
