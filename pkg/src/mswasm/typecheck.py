"""Stack typing for instructions, functions, and whole modules.

Stack types are lists of ValueType with the top of stack LAST.  Code after
an unconditional `trap` or `return` is unreachable and accepted without
checking.  The one non-standard restriction: flat-heap load/store may not
move handle-typed values, so handles can never be forged from raw bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bytecode import (
    COMPARISON_OPS,
    FLOAT_OPS,
    INT_OPS,
    FuncDef,
    FuncType,
    Instr,
    ModuleDef,
    ValueType,
)

StackType = list[ValueType]

# Sentinel result of typing code that ends in trap/return: anything goes after.
UNREACHABLE = None


class TypeError_(Exception):
    def __init__(self, kind: str, msg: str):
        super().__init__(f"{kind}: {msg}")
        self.kind = kind


@dataclass
class TypingContext:
    locals: list[ValueType]            # params ++ declared locals
    functions: list[FuncType]          # imports ++ defined funcs
    results: tuple[ValueType, ...]     # current function's result types


def _binop_arrow(ins: Instr) -> tuple[StackType, StackType]:
    ty = ins.ty
    if ty is ValueType.HANDLE:
        raise TypeError_("binop-on-handle", "arithmetic on handle values")
    ops = FLOAT_OPS if ty in (ValueType.F32, ValueType.F64) else INT_OPS
    if ins.operator not in ops:
        raise TypeError_("bad-operator", f"{ty}.{ins.operator}")
    out = ValueType.I32 if ins.operator in COMPARISON_OPS else ty
    return [ty, ty], [out]


def type_instr(ctx: TypingContext, ins: Instr) -> tuple[StackType, StackType]:
    """The arrow type (consumed, produced) of a single instruction.

    `if` has no fixed arrow; it is handled by type_body.
    """
    op = ins.op
    if op == "nop":
        return [], []
    if op == "trap":
        return [], []
    if op == "const":
        if ins.ty is ValueType.HANDLE:
            raise TypeError_("const-of-handle", "no handle literals")
        return [], [ins.ty]
    if op == "binop":
        return _binop_arrow(ins)
    if op == "get":
        if not (0 <= ins.idx < len(ctx.locals)):
            raise TypeError_("bad-index", f"get {ins.idx}")
        return [], [ctx.locals[ins.idx]]
    if op == "set":
        if not (0 <= ins.idx < len(ctx.locals)):
            raise TypeError_("bad-index", f"set {ins.idx}")
        return [ctx.locals[ins.idx]], []
    if op == "load":
        if ins.ty is ValueType.HANDLE:
            raise TypeError_("handle-forging-load", "handle.load from flat heap")
        return [ValueType.I32], [ins.ty]
    if op == "store":
        if ins.ty is ValueType.HANDLE:
            raise TypeError_("handle-forging-store", "handle.store to flat heap")
        return [ValueType.I32, ins.ty], []
    if op == "call":
        if not (0 <= ins.idx < len(ctx.functions)):
            raise TypeError_("bad-index", f"call {ins.idx}")
        ft = ctx.functions[ins.idx]
        return list(ft.params), list(ft.results)
    if op == "return":
        return list(ctx.results), []
    if op == "segload":
        return [ValueType.HANDLE], [ins.ty]
    if op == "segstore":
        return [ValueType.HANDLE, ins.ty], []
    if op == "slice":
        # handle at the bottom: compiled field access pushes the handle
        # first, then the base offset, then the bound reduction.
        return [ValueType.HANDLE, ValueType.I32, ValueType.I32], [ValueType.HANDLE]
    if op == "new_segment":
        return [ValueType.I32], [ValueType.HANDLE]
    if op == "handle_add":
        return [ValueType.HANDLE, ValueType.I32], [ValueType.HANDLE]
    if op == "segfree":
        return [ValueType.HANDLE], []
    raise TypeError_("bad-opcode", op)


def _apply(stack: StackType, consumes: StackType, produces: StackType) -> StackType:
    if len(stack) < len(consumes):
        raise TypeError_("stack-underflow",
                         f"need {consumes}, have {stack}")
    if consumes:
        got = stack[-len(consumes):]
        if got != consumes:
            raise TypeError_("type-mismatch", f"need {consumes}, have {got}")
        stack = stack[:-len(consumes)]
    return stack + produces


def type_body(ctx: TypingContext, body, stack: StackType):
    """Thread a stack type through an instruction sequence.

    Returns the final stack, or UNREACHABLE when the sequence ended in
    trap/return (in which case trailing instructions were not checked).
    """
    stack = list(stack)
    for ins in body:
        if ins.op == "trap":
            return UNREACHABLE
        if ins.op == "return":
            _apply(stack, list(ctx.results), [])
            return UNREACHABLE
        if ins.op == "if":
            stack = _apply(stack, [ValueType.I32], [])
            then_out = type_body(ctx, ins.then_body, stack)
            else_out = type_body(ctx, ins.else_body, stack)
            if then_out is UNREACHABLE:
                stack = else_out if else_out is not UNREACHABLE else UNREACHABLE
            elif else_out is UNREACHABLE:
                stack = then_out
            elif then_out != else_out:
                raise TypeError_("if-arm-mismatch",
                                 f"then gives {then_out}, else gives {else_out}")
            else:
                stack = then_out
            if stack is UNREACHABLE:
                return UNREACHABLE
            continue
        consumes, produces = type_instr(ctx, ins)
        stack = _apply(stack, consumes, produces)
    return stack


@dataclass(frozen=True)
class WellTyped:
    module: ModuleDef


def typecheck_func(functions: list[FuncType], f: FuncDef) -> None:
    ctx = TypingContext(list(f.params) + list(f.locals), functions, f.results)
    out = type_body(ctx, f.body, [])
    if out is not UNREACHABLE and out != list(f.results):
        raise TypeError_("result-mismatch",
                         f"body gives {out}, declared {list(f.results)}")


def typecheck_module(m: ModuleDef, library: bool = False) -> WellTyped:
    """Check every function; whole modules also need a no-param entry
    (skipped for library=True, e.g. link contexts that only export)."""
    functions = m.func_types()
    errors = []
    for i, f in enumerate(m.funcs):
        try:
            typecheck_func(functions, f)
        except TypeError_ as e:
            errors.append(f"func {len(m.imports) + i}: {e}")
    if errors:
        raise TypeError_("module", "; ".join(errors))
    if m.is_whole and not library:
        if not m.funcs:
            raise TypeError_("no-entry", "whole module has no functions")
        if m.funcs[0].params:
            raise TypeError_("entry-params", "entry function must take no parameters")
    return WellTyped(m)


def is_well_typed(m: ModuleDef) -> bool:
    try:
        typecheck_module(m)
        return True
    except TypeError_:
        return False
