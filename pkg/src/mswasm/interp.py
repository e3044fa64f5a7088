"""Small-step, trace-emitting interpreter.

Execution is deterministic: one rule applies per step, and any failed
premise of a segment operation emits a trap event and halts with an empty
operand stack.  Traces collect the non-silent memory events (reads,
writes, allocations, frees, trap).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

from . import baggy as baggy_mod
from .bytecode import SIZEOF, FuncDef, FuncType, Instr, ModuleDef, ValueType
from .segmem import (
    Handle,
    MemTrap,
    NULL_HANDLE,
    SegmentMemory,
    Tag,
    TaggedByte,
    TrapKind,
    pack_handle,
    unpack_handle,
    wrap_i32,
)

DEFAULT_BUDGET = 10_000_000

_MASKS = {ValueType.I32: 0xFFFFFFFF, ValueType.I64: 0xFFFFFFFFFFFFFFFF}


def _wrap(ty: ValueType, v: int) -> int:
    mask = _MASKS[ty]
    v &= mask
    half = (mask + 1) >> 1
    return v - (mask + 1) if v >= half else v


@dataclass(frozen=True)
class Value:
    ty: ValueType
    v: object  # int, float, or a backend handle

    def __repr__(self) -> str:
        return f"{self.ty}:{self.v!r}"


# -- events -----------------------------------------------------------


@dataclass(frozen=True)
class SAllocEv:
    handle: Handle
    kind = "salloc"


@dataclass(frozen=True)
class SFreeEv:
    handle: Handle
    kind = "sfree"


@dataclass(frozen=True)
class ReadEv:
    ty: ValueType
    handle: Handle
    kind = "read"


@dataclass(frozen=True)
class WriteEv:
    ty: ValueType
    handle: Handle
    kind = "write"


@dataclass(frozen=True)
class TrapEv:
    kind = "trap"


Event = object
Trace = list


def event_to_json(ev) -> str:
    if isinstance(ev, TrapEv):
        return json.dumps({"ev": "trap"}, separators=(",", ":"))
    obj = {"ev": ev.kind}
    if isinstance(ev, (ReadEv, WriteEv)):
        obj["ty"] = str(ev.ty)
    h = ev.handle
    obj.update({"base": h.base, "offset": h.offset, "bound": h.bound,
                "valid": h.valid, "id": h.id})
    return json.dumps(obj, separators=(",", ":"))


def trace_to_jsonl(trace) -> str:
    return "".join(event_to_json(ev) + "\n" for ev in trace)


# -- backends ---------------------------------------------------------


class TaggedBackend:
    """Segment memory with byte tags: full spatial, temporal, and
    handle-integrity checking."""

    name = "tagged"

    def __init__(self, segment_size: int):
        self.mem = SegmentMemory(segment_size)

    def null_handle(self) -> Handle:
        return NULL_HANDLE

    def alloc(self, n: int) -> Handle:
        return self.mem.alloc(n)

    def free(self, h: Handle) -> None:
        self.mem.free(h)

    def handle_add(self, h: Handle, delta: int) -> Handle:
        return h.moved(delta)

    def slice(self, h: Handle, o1: int, o2: int) -> Handle:
        return self.mem.slice_handle(h, o1, o2)

    def load(self, h: Handle, ty: ValueType):
        if ty is ValueType.HANDLE:
            tagged = self.mem.read_bytes(h, SIZEOF[ty])
            if (h.base + h.offset) % SIZEOF[ValueType.HANDLE] != 0:
                raise MemTrap(TrapKind.INTEGRITY, "misaligned handle load")
            return unpack_handle(tagged)
        raw = bytes(b.value for b in self.mem.read_bytes(h, SIZEOF[ty]))
        return _unpack_num(ty, raw)

    def store(self, h: Handle, ty: ValueType, v) -> None:
        if ty is ValueType.HANDLE:
            # Alignment first so the premise is judged before bounds when
            # both fail; either way the step traps.
            self.mem._check_access(h, SIZEOF[ty])
            if (h.base + h.offset) % SIZEOF[ValueType.HANDLE] != 0:
                raise MemTrap(TrapKind.INTEGRITY, "misaligned handle store")
            payload = [TaggedByte(b, Tag.HANDLE) for b in pack_handle(v)]
        else:
            payload = [TaggedByte(b, Tag.DATA) for b in _pack_num(ty, v)]
        self.mem.write_bytes(h, payload)

    def view(self, h: Handle) -> Handle:
        return h


class BaggyBackend:
    """Buddy-slot memory; see baggy module for the guarantees traded away."""

    name = "baggy"

    def __init__(self, segment_size: int):
        self.mem = baggy_mod.BuddyMemory(size=max(16, segment_size))

    def null_handle(self):
        return baggy_mod.NULL_BAGGY

    def alloc(self, n: int):
        return self.mem.alloc(n)

    def free(self, h) -> None:
        self.mem.free(h)

    def handle_add(self, h, delta: int):
        return self.mem.handle_add(h, delta)

    def slice(self, h, o1: int, o2: int):
        return self.mem.slice_handle(h, o1, o2)

    def load(self, h, ty: ValueType):
        if ty is ValueType.HANDLE:
            return baggy_mod.unpack_baggy(self.mem.read(h, 8))
        return _unpack_num(ty, self.mem.read(h, SIZEOF[ty]))

    def store(self, h, ty: ValueType, v) -> None:
        if ty is ValueType.HANDLE:
            self.mem.write(h, baggy_mod.pack_baggy(v))
        else:
            self.mem.write(h, _pack_num(ty, v))

    def view(self, h) -> Handle:
        return self.mem.view(h)


BACKENDS = {"tagged": TaggedBackend, "baggy": BaggyBackend}

_NUM_FMT = {ValueType.I32: "<i", ValueType.I64: "<q",
            ValueType.F32: "<f", ValueType.F64: "<d"}


def _pack_num(ty: ValueType, v) -> bytes:
    return struct.pack(_NUM_FMT[ty], v)


def _unpack_num(ty: ValueType, raw: bytes):
    return struct.unpack(_NUM_FMT[ty], raw)[0]


# -- machine state ----------------------------------------------------


class InterpBug(AssertionError):
    """A stuck state outside a trap: impossible for well-typed modules."""


class InitError(Exception):
    pass


class LinkError(Exception):
    pass


@dataclass
class Frame:
    locals: list[Value]
    code: list[Instr]        # reversed: next instruction is code[-1]
    operands: list[Value]
    func: FuncDef
    func_index: int


@dataclass
class Config:
    module: ModuleDef
    heap: bytearray
    backend: object
    frames: list[Frame]
    trapped: bool = False
    results: list[Value] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.trapped or not self.frames


def zero_value(ty: ValueType, backend) -> Value:
    if ty in (ValueType.F32, ValueType.F64):
        return Value(ty, 0.0)
    if ty is ValueType.HANDLE:
        return Value(ty, backend.null_handle())
    return Value(ty, 0)


def _new_frame(m: ModuleDef, idx: int, args: list[Value], backend) -> Frame:
    f = m.funcs[idx]
    locs = list(args) + [zero_value(t, backend) for t in f.locals]
    return Frame(locs, list(reversed(f.body)), [], f, idx)


def init_state(m: ModuleDef, backend_name: str = "tagged",
               segment_size: int | None = None) -> Config:
    """Initial configuration: zeroed memories, empty allocator, one frame
    for function 0."""
    if m.imports:
        raise InitError("module has imports; link it first")
    if not m.funcs:
        raise InitError("no entry function")
    if m.funcs[0].params:
        raise InitError("entry function must take no parameters")
    size = m.segment_size if segment_size is None else segment_size
    backend = BACKENDS[backend_name](size)
    return Config(m, bytearray(m.heap_size), backend,
                  [_new_frame(m, 0, [], backend)])


def _trap(config: Config) -> TrapEv:
    config.trapped = True
    config.frames = []
    return TrapEv()


def _binop_int(ty: ValueType, op: str, a: int, b: int):
    if op == "add":
        return _wrap(ty, a + b)
    if op == "sub":
        return _wrap(ty, a - b)
    if op == "mul":
        return _wrap(ty, a * b)
    if op == "div_s":
        if b == 0:
            return None  # trap
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        if q != _wrap(ty, q):
            return None  # overflow: int_min / -1
        return q
    mask = _MASKS[ty]
    if op == "and":
        return _wrap(ty, (a & mask) & (b & mask))
    if op == "or":
        return _wrap(ty, (a & mask) | (b & mask))
    if op == "xor":
        return _wrap(ty, (a & mask) ^ (b & mask))
    if op == "eq":
        return 1 if a == b else 0
    if op == "lt_s":
        return 1 if a < b else 0
    raise InterpBug(f"operator {ty}.{op}")


def _binop_float(ty: ValueType, op: str, a: float, b: float):
    if op == "eq":
        return 1 if a == b else 0
    if op == "lt":
        return 1 if a < b else 0
    if op == "add":
        r = a + b
    elif op == "sub":
        r = a - b
    elif op == "mul":
        r = a * b
    elif op == "div":
        if b == 0.0:
            if a == 0.0 or math.isnan(a):
                r = math.nan
            else:
                r = math.copysign(math.inf, a) * math.copysign(1.0, b)
        else:
            r = a / b
    else:
        raise InterpBug(f"operator {ty}.{op}")
    if ty is ValueType.F32:
        r = struct.unpack("<f", struct.pack("<f", r))[0]
    return r


def step(config: Config) -> Event | None:
    """Execute one instruction; returns the emitted event (None for the
    silent ones).  Mutates config."""
    if config.terminal:
        raise InterpBug("step on terminal configuration")
    frame = config.frames[-1]

    if not frame.code:
        # Fell off the end: implicit return of the declared results.
        return _do_return(config, frame)

    ins = frame.code.pop()
    op = ins.op
    ops = frame.operands

    if op == "nop":
        return None
    if op == "trap":
        return _trap(config)
    if op == "const":
        ops.append(Value(ins.ty, ins.literal))
        return None
    if op == "binop":
        b, a = ops.pop(), ops.pop()
        if ins.ty in (ValueType.F32, ValueType.F64):
            r = _binop_float(ins.ty, ins.operator, a.v, b.v)
        else:
            r = _binop_int(ins.ty, ins.operator, a.v, b.v)
        if r is None:
            return _trap(config)
        out_ty = ValueType.I32 if ins.operator in ("eq", "lt_s", "lt") else ins.ty
        ops.append(Value(out_ty, r))
        return None
    if op == "get":
        ops.append(frame.locals[ins.idx])
        return None
    if op == "set":
        frame.locals[ins.idx] = ops.pop()
        return None
    if op == "load":
        assert ins.ty is not ValueType.HANDLE, "handle load from flat heap"
        n = ops.pop().v
        if not (0 <= n and n + SIZEOF[ins.ty] < len(config.heap)):
            return _trap(config)
        ops.append(Value(ins.ty, _unpack_num(ins.ty, bytes(config.heap[n:n + SIZEOF[ins.ty]]))))
        return None
    if op == "store":
        assert ins.ty is not ValueType.HANDLE, "handle store to flat heap"
        v = ops.pop()
        n = ops.pop().v
        if not (0 <= n and n + SIZEOF[ins.ty] < len(config.heap)):
            return _trap(config)
        config.heap[n:n + SIZEOF[ins.ty]] = _pack_num(ins.ty, v.v)
        return None
    if op == "if":
        n = ops.pop()
        body = ins.then_body if n.v != 0 else ins.else_body
        frame.code.extend(reversed(body))
        return None
    if op == "call":
        target = config.module.funcs[ins.idx]
        k = len(target.params)
        args = ops[len(ops) - k:]
        del ops[len(ops) - k:]
        config.frames.append(_new_frame(config.module, ins.idx, args, config.backend))
        return None
    if op == "return":
        return _do_return(config, frame)

    backend = config.backend
    if op == "segload":
        h = ops.pop().v
        try:
            v = backend.load(h, ins.ty)
        except MemTrap:
            return _trap(config)
        ops.append(Value(ins.ty, v))
        return ReadEv(ins.ty, backend.view(h))
    if op == "segstore":
        v = ops.pop()
        h = ops.pop().v
        try:
            backend.store(h, ins.ty, v.v)
        except MemTrap:
            return _trap(config)
        return WriteEv(ins.ty, backend.view(h))
    if op == "slice":
        o2 = ops.pop().v
        o1 = ops.pop().v
        h = ops.pop().v
        try:
            ops.append(Value(ValueType.HANDLE, backend.slice(h, o1, o2)))
        except MemTrap:
            return _trap(config)
        return None
    if op == "new_segment":
        n = ops.pop().v
        try:
            h = backend.alloc(n)
        except MemTrap:
            return _trap(config)
        ops.append(Value(ValueType.HANDLE, h))
        return SAllocEv(backend.view(h))
    if op == "handle_add":
        n = ops.pop().v
        h = ops.pop().v
        try:
            ops.append(Value(ValueType.HANDLE, backend.handle_add(h, n)))
        except MemTrap:
            return _trap(config)
        return None
    if op == "segfree":
        h = ops.pop().v
        view = backend.view(h)
        try:
            backend.free(h)
        except MemTrap:
            return _trap(config)
        return SFreeEv(view)

    raise InterpBug(f"unknown opcode {op}")


def _do_return(config: Config, frame: Frame):
    k = len(frame.func.results)
    results = frame.operands[len(frame.operands) - k:] if k else []
    config.frames.pop()
    if config.frames:
        config.frames[-1].operands.extend(results)
    else:
        config.results = results
    return None


@dataclass
class RunResult:
    trace: list
    outcome: str            # "ok" | "trap" | "budget"
    config: Config

    @property
    def results(self) -> list[Value]:
        return self.config.results


def run(m: ModuleDef, backend: str = "tagged", budget: int = DEFAULT_BUDGET,
        segment_size: int | None = None) -> RunResult:
    """Run a whole module from function 0, collecting its event trace."""
    config = init_state(m, backend, segment_size)
    trace: list = []
    steps = 0
    while not config.terminal:
        if steps >= budget:
            return RunResult(trace, "budget", config)
        ev = step(config)
        steps += 1
        if ev is not None:
            trace.append(ev)
    outcome = "trap" if config.trapped else "ok"
    return RunResult(trace, outcome, config)


# -- linking ----------------------------------------------------------


def _rewrite_calls(body, remap) -> tuple[Instr, ...]:
    out = []
    for ins in body:
        if ins.op == "call":
            out.append(Instr("call", idx=remap(ins.idx)))
        elif ins.op == "if":
            out.append(Instr("if", then_body=_rewrite_calls(ins.then_body, remap),
                             else_body=_rewrite_calls(ins.else_body, remap)))
        else:
            out.append(ins)
    return tuple(out)


def link(m: ModuleDef, ctx: ModuleDef) -> ModuleDef:
    """Fill m's imports with ctx's functions (positionally, by type).

    The result is a whole module: m's own functions first (entry stays at
    index 0), then all of ctx's, with call indices rewritten.
    """
    if not ctx.is_whole:
        raise LinkError("context module must be whole")
    k = len(m.imports)
    if len(ctx.funcs) < k:
        raise LinkError(f"context exports {len(ctx.funcs)} functions, need {k}")
    for j in range(k):
        if ctx.funcs[j].type != m.imports[j]:
            raise LinkError(
                f"import {j}: expected {m.imports[j]}, got {ctx.funcs[j].type}")
    n = len(m.funcs)

    def remap_m(idx: int) -> int:
        return idx - k if idx >= k else n + idx

    def remap_ctx(idx: int) -> int:
        return n + idx

    funcs = [FuncDef(f.params, f.locals, f.results, _rewrite_calls(f.body, remap_m))
             for f in m.funcs]
    funcs += [FuncDef(f.params, f.locals, f.results, _rewrite_calls(f.body, remap_ctx))
              for f in ctx.funcs]
    return ModuleDef(tuple(funcs), (),
                     max(m.heap_size, ctx.heap_size),
                     max(m.segment_size, ctx.segment_size))
