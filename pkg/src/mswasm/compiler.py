"""Type-directed compiler from the C subset to segment-memory bytecode.

Pointers become handles and all data lives in segment memory; the flat
heap is declared but never touched by generated code.  Struct field
access compiles to a slice whose two offsets are computed from the byte
layout, so the resulting handle covers exactly the field.

Since the bytecode has no drop instruction and no handle literals,
every compiled function carries three scratch locals: one to discard
i32s, one to discard handles, and one handle local that is never
written, whose zero-initialized (invalid) value stands in for integers
used at pointer type.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import bytecode as bc
from .bytecode import FuncDef, FuncType, ModuleDef, ValueType
from .minic import (
    ArrayType,
    IntType,
    PtrType,
    SrcModule,
    StructType,
    TAssignPtr,
    TAssignVar,
    TBinOp,
    TDeref,
    TField,
    TFree,
    TIf,
    TIntAsPtr,
    TLetCall,
    TMallocArray,
    TMallocSingle,
    TNum,
    TSeq,
    TVar,
    TypedFn,
    TypedModule,
)

DEFAULT_SEGMENT_SIZE = 1 << 16

_SRC_BINOPS = {"+": "add", "-": "sub", "*": "mul", "/": "div_s",
               "==": "eq", "<": "lt_s"}


def compile_type(ty) -> ValueType:
    if isinstance(ty, IntType):
        return ValueType.I32
    if isinstance(ty, PtrType):
        return ValueType.HANDLE
    raise ValueError(f"not an expression type: {ty}")


@dataclass
class Layout:
    """Byte sizes, alignments, and struct field offsets.

    ints are 4 bytes at 4-byte alignment; pointers are 16-byte handles at
    16-byte alignment (so handle loads through compiled code are always
    aligned); arrays are dense; struct fields sit at padded offsets and the
    struct is padded to its strictest member.
    """

    mod: SrcModule

    def sizeof(self, w) -> int:
        if isinstance(w, IntType):
            return 4
        if isinstance(w, PtrType):
            return 16
        if isinstance(w, ArrayType):
            if w.count is None:
                raise ValueError("array without length has no size")
            return w.count * self.sizeof(w.elem)
        if isinstance(w, StructType):
            size, _ = self._struct_layout(w.name)
            return size
        raise ValueError(f"no size for {w}")

    def alignof(self, w) -> int:
        if isinstance(w, IntType):
            return 4
        if isinstance(w, PtrType):
            return 16
        if isinstance(w, ArrayType):
            return self.alignof(w.elem)
        if isinstance(w, StructType):
            return max(self.alignof(ft) for _, ft in self.mod.struct_fields(w.name))
        raise ValueError(f"no alignment for {w}")

    def _struct_layout(self, sname: str) -> tuple[int, dict[str, tuple[int, int]]]:
        offsets: dict[str, tuple[int, int]] = {}
        off = 0
        for fname, ft in self.mod.struct_fields(sname):
            a = self.alignof(ft)
            off = (off + a - 1) // a * a
            offsets[fname] = (off, self.sizeof(ft))
            off += self.sizeof(ft)
        total_align = self.alignof(StructType(sname))
        size = (off + total_align - 1) // total_align * total_align
        return size, offsets

    def field_offsets(self, sname: str, fname: str) -> tuple[int, int]:
        """(o1, o2) for slicing: o1 bytes skipped at the front, o2 shaved
        off the bound, so the slice covers exactly the field."""
        size, offsets = self._struct_layout(sname)
        o1, fsize = offsets[fname]
        return o1, size - fsize

    def byte_of_cell(self, w, cell: int) -> int:
        """Byte offset of the cell-th value slot inside a region of word
        type w (the cell-level and byte-level views of the same layout)."""
        if isinstance(w, StructType):
            size, offsets = self._struct_layout(w.name)
            off = 0
            for fname, ft in self.mod.struct_fields(w.name):
                n = _cells(self.mod, ft)
                if cell < off + n:
                    base, _ = offsets[fname]
                    return base + self.byte_of_cell(ft, cell - off)
                off += n
            raise ValueError(f"cell {cell} outside struct {w.name}")
        if isinstance(w, ArrayType):
            per = _cells(self.mod, w.elem)
            return (cell // per) * self.sizeof(w.elem) \
                + self.byte_of_cell(w.elem, cell % per)
        if cell != 0:
            raise ValueError(f"cell {cell} in scalar {w}")
        return 0


def _cells(mod: SrcModule, w) -> int:
    from .minic import cells_of
    return cells_of(mod, w)


@dataclass
class _FnCompiler:
    layout: Layout
    let_slots: dict[int, int]  # id(TLetCall node) -> local slot
    drop_i32: int
    drop_handle: int
    null_handle: int

    def drop(self, ty) -> list:
        if isinstance(ty, PtrType):
            return [bc.set_(self.drop_handle)]
        return [bc.set_(self.drop_i32)]

    def compile(self, node, env: dict[str, int]) -> list:
        if isinstance(node, TNum):
            return [bc.const(ValueType.I32, node.n)]
        if isinstance(node, TVar):
            return [bc.get(env[node.name])]
        if isinstance(node, TIntAsPtr):
            # Discard the i32 and put the never-written (invalid) handle
            # local in its place.
            return self.compile(node.e, env) + [bc.set_(self.drop_i32),
                                                bc.get(self.null_handle)]
        if isinstance(node, TSeq):
            return (self.compile(node.a, env) + self.drop(node.a.ty)
                    + self.compile(node.b, env))
        if isinstance(node, TBinOp):
            code = self.compile(node.a, env) + self.compile(node.b, env)
            if node.elem is not None:
                return code + [bc.const(ValueType.I32, self.layout.sizeof(node.elem)),
                               bc.binop(ValueType.I32, "mul"),
                               bc.handle_add()]
            return code + [bc.binop(ValueType.I32, _SRC_BINOPS[node.op])]
        if isinstance(node, TAssignVar):
            return self.compile(node.e, env) + [bc.set_(env[node.name]),
                                                bc.const(ValueType.I32, 0)]
        if isinstance(node, TAssignPtr):
            return (self.compile(node.target, env) + self.compile(node.e, env)
                    + [bc.segstore(compile_type(node.value_ty)),
                       bc.const(ValueType.I32, 0)])
        if isinstance(node, TDeref):
            return self.compile(node.e, env) + [bc.segload(compile_type(node.ty))]
        if isinstance(node, TField):
            o1, o2 = self.layout.field_offsets(node.sname, node.fname)
            return self.compile(node.e, env) + [bc.const(ValueType.I32, o1),
                                                bc.const(ValueType.I32, o2),
                                                bc.slice_()]
        if isinstance(node, TIf):
            return self.compile(node.c, env) + [bc.if_(self.compile(node.t, env),
                                                       self.compile(node.f, env))]
        if isinstance(node, TMallocArray):
            return (self.compile(node.count, env)
                    + [bc.const(ValueType.I32, self.layout.sizeof(node.elem)),
                       bc.binop(ValueType.I32, "mul"),
                       bc.new_segment()])
        if isinstance(node, TMallocSingle):
            return [bc.const(ValueType.I32, self.layout.sizeof(node.wtype)),
                    bc.new_segment()]
        if isinstance(node, TFree):
            return self.compile(node.e, env) + [bc.segfree(),
                                                bc.const(ValueType.I32, 0)]
        if isinstance(node, TLetCall):
            code = self.compile(node.arg, env) if node.arg is not None else []
            slot = self.let_slots[id(node)]
            inner = dict(env)
            inner[node.x] = slot
            return code + [bc.call(node.fn_index),
                           bc.set_(slot)] + self.compile(node.body, inner)
        raise ValueError(f"cannot compile {node!r}")


def compile_fn(layout: Layout, fn: TypedFn) -> FuncDef:
    params = []
    env: dict[str, int] = {}
    if fn.param is not None:
        env[fn.param[0]] = 0
        params.append(compile_type(fn.param[1]))
    locals_: list[ValueType] = []
    for name, ty in fn.locals:
        env[name] = len(params) + len(locals_)
        locals_.append(compile_type(ty))
    # One slot per let occurrence so shadowing and type changes are safe.
    let_slots: dict[int, int] = {}
    for node in _collect_lets(fn.body):
        let_slots[id(node)] = len(params) + len(locals_)
        locals_.append(compile_type(node.x_ty))
    base = len(params) + len(locals_)
    fc = _FnCompiler(layout, let_slots, base, base + 1, base + 2)
    locals_ += [ValueType.I32, ValueType.HANDLE, ValueType.HANDLE]
    body = fc.compile(fn.body, env)
    return FuncDef(tuple(params), tuple(locals_), (compile_type(fn.result),),
                   tuple(body))


def _collect_lets(node) -> list:
    out = []
    for attr in ("a", "b", "c", "t", "f", "e", "target", "count", "arg", "body"):
        child = getattr(node, attr, None)
        if child is not None and hasattr(child, "ty"):
            out.extend(_collect_lets(child))
    if isinstance(node, TLetCall):
        out.append(node)
    return out


def compile_module(tm: TypedModule,
                   segment_size: int = DEFAULT_SEGMENT_SIZE) -> ModuleDef:
    """One bytecode function per source function, main at the first
    defined-function index; imports are carried over positionally."""
    layout = Layout(tm.mod)
    imports = []
    for imp in tm.mod.imports:
        ps = (compile_type(imp.param),) if imp.param is not None else ()
        imports.append(FuncType(ps, (compile_type(imp.result),)))
    funcs = [compile_fn(layout, f) for f in tm.fns]
    return ModuleDef(tuple(funcs), tuple(imports), tm.mod.heap_size, segment_size)
