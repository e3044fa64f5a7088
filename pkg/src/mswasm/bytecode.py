"""Module structure, instruction set, and the s-expression text format.

A module is a list of functions plus import signatures and declared sizes
for the two memories (flat heap and segment memory).  The text format is
s-expression based and round-trips: parse(print(m)) == m.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field


class ValueType(enum.Enum):
    I32 = "i32"
    I64 = "i64"
    F32 = "f32"
    F64 = "f64"
    HANDLE = "handle"

    def __str__(self) -> str:
        return self.value


# Byte widths; HANDLE is a packed 16-byte record (see segmem).
SIZEOF = {
    ValueType.I32: 4,
    ValueType.I64: 8,
    ValueType.F32: 4,
    ValueType.F64: 8,
    ValueType.HANDLE: 16,
}

INT_OPS = ("add", "sub", "mul", "div_s", "and", "or", "xor", "eq", "lt_s")
FLOAT_OPS = ("add", "sub", "mul", "div", "eq", "lt")
# Operators whose result is an i32 truth value regardless of operand type.
COMPARISON_OPS = ("eq", "lt_s", "lt")


@dataclass(frozen=True)
class Instr:
    """One instruction: an opcode plus its immediates.

    Immediate layout per opcode:
      const    -> ty, literal (int or float)
      binop    -> ty, op (operator name)
      get/set  -> idx
      load/store/segload/segstore -> ty
      if       -> then_body, else_body (tuples of Instr)
      call     -> idx
      nop/trap/return/slice/new_segment/handle_add/segfree -> no immediates
    """

    op: str
    ty: ValueType | None = None
    literal: int | float | None = None
    operator: str | None = None
    idx: int | None = None
    then_body: tuple["Instr", ...] = ()
    else_body: tuple["Instr", ...] = ()


OPCODES = (
    "nop", "trap", "const", "binop", "get", "set", "load", "store",
    "if", "call", "return", "segload", "segstore", "slice",
    "new_segment", "handle_add", "segfree",
)


def nop() -> Instr:
    return Instr("nop")


def trap() -> Instr:
    return Instr("trap")


def const(ty: ValueType, literal: int | float) -> Instr:
    return Instr("const", ty=ty, literal=literal)


def binop(ty: ValueType, operator: str) -> Instr:
    return Instr("binop", ty=ty, operator=operator)


def get(idx: int) -> Instr:
    return Instr("get", idx=idx)


def set_(idx: int) -> Instr:
    return Instr("set", idx=idx)


def load(ty: ValueType) -> Instr:
    return Instr("load", ty=ty)


def store(ty: ValueType) -> Instr:
    return Instr("store", ty=ty)


def if_(then_body, else_body=()) -> Instr:
    return Instr("if", then_body=tuple(then_body), else_body=tuple(else_body))


def call(idx: int) -> Instr:
    return Instr("call", idx=idx)


def return_() -> Instr:
    return Instr("return")


def segload(ty: ValueType) -> Instr:
    return Instr("segload", ty=ty)


def segstore(ty: ValueType) -> Instr:
    return Instr("segstore", ty=ty)


def slice_() -> Instr:
    return Instr("slice")


def new_segment() -> Instr:
    return Instr("new_segment")


def handle_add() -> Instr:
    return Instr("handle_add")


def segfree() -> Instr:
    return Instr("segfree")


@dataclass(frozen=True)
class FuncType:
    params: tuple[ValueType, ...]
    results: tuple[ValueType, ...]

    def __str__(self) -> str:
        ps = " ".join(str(t) for t in self.params)
        rs = " ".join(str(t) for t in self.results)
        return f"[{ps}] -> [{rs}]"


@dataclass(frozen=True)
class FuncDef:
    params: tuple[ValueType, ...]
    locals: tuple[ValueType, ...]
    results: tuple[ValueType, ...]
    body: tuple[Instr, ...]

    @property
    def type(self) -> FuncType:
        return FuncType(self.params, self.results)


@dataclass(frozen=True)
class ModuleDef:
    funcs: tuple[FuncDef, ...]
    imports: tuple[FuncType, ...] = ()
    heap_size: int = 0
    segment_size: int = 0

    @property
    def is_whole(self) -> bool:
        return not self.imports

    def func_types(self) -> list[FuncType]:
        """Callable signatures by index: imports first, then defined funcs."""
        return [t for t in self.imports] + [f.type for f in self.funcs]


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


class ValidationError(Exception):
    """Structural index out of range (local or function index)."""


# ---------------------------------------------------------------------------
# Parsing


_TYPE_NAMES = {t.value: t for t in ValueType}

# Zero-operand instruction spellings.
_PLAIN = {
    "nop": nop,
    "trap": trap,
    "return": return_,
    "slice": slice_,
    "new_segment": new_segment,
    "handle.add": handle_add,
    "segfree": segfree,
}


@dataclass
class _Tok:
    kind: str  # "(", ")", "atom"
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c in " \t\r":
            col += 1
            i += 1
        elif c == ";":  # comment to end of line
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            toks.append(_Tok(c, c, line, col))
            col += 1
            i += 1
        else:
            start = i
            start_col = col
            while i < n and text[i] not in " \t\r\n();":
                i += 1
                col += 1
            toks.append(_Tok("atom", text[start:i], line, start_col))
    return toks


class _Reader:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.pos = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> _Tok:
        t = self.peek()
        if t is None:
            last = self.toks[-1] if self.toks else _Tok("atom", "", 1, 1)
            raise ParseError("unexpected end of input", last.line, last.col)
        self.pos += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise ParseError(f"expected {want!r}, got {t.text!r}", t.line, t.col)
        return t

    def at_open(self, head: str) -> bool:
        t = self.peek()
        if t is None or t.kind != "(":
            return False
        t2 = self.toks[self.pos + 1] if self.pos + 1 < len(self.toks) else None
        return t2 is not None and t2.kind == "atom" and t2.text == head


def _parse_int(tok: _Tok) -> int:
    try:
        return int(tok.text)
    except ValueError:
        raise ParseError(f"expected integer, got {tok.text!r}", tok.line, tok.col)


def _parse_type(tok: _Tok) -> ValueType:
    ty = _TYPE_NAMES.get(tok.text)
    if ty is None:
        raise ParseError(f"unknown value type {tok.text!r}", tok.line, tok.col)
    return ty


def _parse_literal(ty: ValueType, tok: _Tok) -> int | float:
    if ty in (ValueType.F32, ValueType.F64):
        try:
            v = float(tok.text)
        except ValueError:
            raise ParseError(f"bad float literal {tok.text!r}", tok.line, tok.col)
        if ty is ValueType.F32:
            v = struct.unpack("<f", struct.pack("<f", v))[0]
        return v
    try:
        return int(tok.text)
    except ValueError:
        raise ParseError(f"bad integer literal {tok.text!r}", tok.line, tok.col)


def _parse_instr(r: _Reader) -> Instr:
    t = r.peek()
    if t is None:
        raise ParseError("expected instruction", 1, 1)
    if t.kind == "(":  # structured: (if (then ...) (else ...))
        r.next()
        head = r.expect("atom")
        if head.text != "if":
            raise ParseError(f"unknown form {head.text!r}", head.line, head.col)
        r.expect("(")
        r.expect("atom", "then")
        then_body = _parse_instr_list(r)
        r.expect(")")
        else_body: tuple[Instr, ...] = ()
        if r.at_open("else"):
            r.next()
            r.next()
            else_body = _parse_instr_list(r)
            r.expect(")")
        r.expect(")")
        return if_(then_body, else_body)

    tok = r.next()
    word = tok.text
    if word in _PLAIN:
        return _PLAIN[word]()
    if word == "get":
        return get(_parse_int(r.expect("atom")))
    if word == "set":
        return set_(_parse_int(r.expect("atom")))
    if word == "call":
        return call(_parse_int(r.expect("atom")))
    if "." in word:
        ty_name, _, op = word.partition(".")
        ty = _TYPE_NAMES.get(ty_name)
        if ty is None:
            raise ParseError(f"unknown instruction {word!r}", tok.line, tok.col)
        if op == "const":
            if ty is ValueType.HANDLE:
                raise ParseError("no handle literals", tok.line, tok.col)
            return const(ty, _parse_literal(ty, r.expect("atom")))
        if op == "load":
            return load(ty)
        if op == "store":
            return store(ty)
        if op == "segload":
            return segload(ty)
        if op == "segstore":
            return segstore(ty)
        valid_ops = FLOAT_OPS if ty in (ValueType.F32, ValueType.F64) else INT_OPS
        if ty is not ValueType.HANDLE and op in valid_ops:
            return binop(ty, op)
        raise ParseError(f"unknown instruction {word!r}", tok.line, tok.col)
    raise ParseError(f"unknown instruction {word!r}", tok.line, tok.col)


def _parse_instr_list(r: _Reader) -> tuple[Instr, ...]:
    out = []
    while True:
        t = r.peek()
        if t is None or t.kind == ")":
            return tuple(out)
        if t.kind == "(" and not r.at_open("if"):
            return tuple(out)
        out.append(_parse_instr(r))


def _parse_type_list(r: _Reader, head: str) -> tuple[ValueType, ...]:
    """Parse zero or more (head ty*) groups, concatenated."""
    out: list[ValueType] = []
    while r.at_open(head):
        r.next()
        r.next()
        while r.peek() is not None and r.peek().kind == "atom":
            out.append(_parse_type(r.next()))
        r.expect(")")
    return tuple(out)


def _parse_func(r: _Reader) -> FuncDef:
    r.expect("(")
    r.expect("atom", "func")
    params = _parse_type_list(r, "param")
    locals_ = _parse_type_list(r, "local")
    results = _parse_type_list(r, "result")
    body = _parse_instr_list(r)
    r.expect(")")
    return FuncDef(params, locals_, results, body)


def _parse_import(r: _Reader) -> FuncType:
    r.expect("(")
    r.expect("atom", "import")
    params = _parse_type_list(r, "param")
    results = _parse_type_list(r, "result")
    r.expect(")")
    return FuncType(params, results)


def parse_module(text: str) -> ModuleDef:
    """Parse the text format; raises ParseError / ValidationError."""
    r = _Reader(_tokenize(text))
    r.expect("(")
    r.expect("atom", "module")
    segment_size = 0
    heap_size = 0
    if r.at_open("segment"):
        r.next()
        r.next()
        segment_size = _parse_int(r.expect("atom"))
        r.expect(")")
    if r.at_open("heap"):
        r.next()
        r.next()
        heap_size = _parse_int(r.expect("atom"))
        r.expect(")")
    imports = []
    while r.at_open("import"):
        imports.append(_parse_import(r))
    funcs = []
    while r.at_open("func"):
        funcs.append(_parse_func(r))
    r.expect(")")
    extra = r.peek()
    if extra is not None:
        raise ParseError(f"trailing input {extra.text!r}", extra.line, extra.col)
    m = ModuleDef(tuple(funcs), tuple(imports), heap_size, segment_size)
    validate_indices(m)
    return m


def validate_indices(m: ModuleDef) -> None:
    n_callable = len(m.imports) + len(m.funcs)

    def walk(body: tuple[Instr, ...], n_vars: int):
        for ins in body:
            if ins.op in ("get", "set") and not (0 <= ins.idx < n_vars):
                raise ValidationError(
                    f"local index {ins.idx} out of range (have {n_vars})")
            if ins.op == "call" and not (0 <= ins.idx < n_callable):
                raise ValidationError(
                    f"call index {ins.idx} out of range (have {n_callable})")
            if ins.op == "if":
                walk(ins.then_body, n_vars)
                walk(ins.else_body, n_vars)

    for f in m.funcs:
        walk(f.body, len(f.params) + len(f.locals))


# ---------------------------------------------------------------------------
# Printing


def _format_literal(ty: ValueType, lit) -> str:
    if ty in (ValueType.F32, ValueType.F64):
        return repr(float(lit))
    return str(int(lit))


def _print_instr(ins: Instr, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    if ins.op == "if":
        out.append(f"{pad}(if")
        out.append(f"{pad}  (then")
        for i in ins.then_body:
            _print_instr(i, indent + 2, out)
        out.append(f"{pad}  )")
        out.append(f"{pad}  (else")
        for i in ins.else_body:
            _print_instr(i, indent + 2, out)
        out.append(f"{pad}  )")
        out.append(f"{pad})")
        return
    if ins.op == "const":
        text = f"{ins.ty}.const {_format_literal(ins.ty, ins.literal)}"
    elif ins.op == "binop":
        text = f"{ins.ty}.{ins.operator}"
    elif ins.op in ("load", "store", "segload", "segstore"):
        text = f"{ins.ty}.{ins.op}"
    elif ins.op in ("get", "set", "call"):
        text = f"{ins.op} {ins.idx}"
    elif ins.op == "handle_add":
        text = "handle.add"
    else:
        text = ins.op
    out.append(pad + text)


def print_module(m: ModuleDef) -> str:
    """Canonical text form; parse_module(print_module(m)) == m."""
    out = ["(module"]
    out.append(f"  (segment {m.segment_size})")
    out.append(f"  (heap {m.heap_size})")
    for imp in m.imports:
        parts = ["  (import"]
        if imp.params:
            parts.append(f"(param {' '.join(map(str, imp.params))})")
        if imp.results:
            parts.append(f"(result {' '.join(map(str, imp.results))})")
        out.append(" ".join(parts) + ")")
    for f in m.funcs:
        parts = ["  (func"]
        if f.params:
            parts.append(f"(param {' '.join(map(str, f.params))})")
        if f.locals:
            parts.append(f"(local {' '.join(map(str, f.locals))})")
        if f.results:
            parts.append(f"(result {' '.join(map(str, f.results))})")
        out.append(" ".join(parts))
        for ins in f.body:
            _print_instr(ins, 2, out)
        out.append("  )")
    out.append(")")
    return "\n".join(out) + "\n"
