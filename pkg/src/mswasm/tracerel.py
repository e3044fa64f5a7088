"""Builds the abstract-event image of an execution trace.

Each allocation event extends a growing bijection from (segment byte
address, segment id) pairs to colored abstract addresses; reads and writes
then expand to one abstract event per byte, all colored and shaded from
the handle's base address.  Abstract addresses are the segment addresses
themselves: colors already disambiguate reuse, so the identity embedding
is the simplest witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bytecode import SIZEOF
from .interp import ReadEv, SAllocEv, SFreeEv, TrapEv, WriteEv
from .monitor import AAlloc, AFree, ARead, AWrite, SAFE, Safe, Violation, check_trace


def constant_shading(index: int, handle, size: int) -> tuple[int, ...]:
    """Every location the same shade: enough for flat segment memory."""
    return (0,) * size


@dataclass(frozen=True)
class Unrelatable:
    index: int      # offending event's position in the concrete trace
    reason: str


@dataclass
class BijectionDelta:
    """(base address, id) <-> (abstract address, color, shade); grows as
    allocations are related and is injective in both directions."""

    fwd: dict[tuple[int, int], tuple[int, int, int]] = field(default_factory=dict)
    rev: dict[tuple[int, int, int], tuple[int, int]] = field(default_factory=dict)
    next_color: int = 0

    def fresh_color(self) -> int:
        c = self.next_color
        self.next_color += 1
        return c

    def extend(self, key: tuple[int, int], val: tuple[int, int, int]) -> None:
        if key in self.fwd or val in self.rev:
            raise AssertionError(f"bijection collision at {key} -> {val}")
        self.fwd[key] = val
        self.rev[val] = key


def relate_trace(trace, shading=constant_shading):
    """Returns (abs_events, sources, delta) or Unrelatable.

    abs_events[i] came from trace[sources[i]]; a read or write of a
    multi-byte value contributes several abstract events with the same
    source index.
    """
    delta = BijectionDelta()
    abs_events: list = []
    sources: list[int] = []
    for i, ev in enumerate(trace):
        if isinstance(ev, TrapEv):
            continue  # relates to the empty trace
        h = ev.handle
        if isinstance(ev, SAllocEv):
            n = h.bound
            color = delta.fresh_color()
            shades = shading(i, h, n)
            addr = h.base  # identity embedding
            for j in range(n):
                delta.extend((h.base + j, h.id), (addr + j, color, shades[j]))
            if n == 0:
                # Keep frees of empty segments relatable.
                delta.extend((h.base, h.id), (addr, color, 0))
            abs_events.append(AAlloc(n, addr, color, tuple(shades)))
            sources.append(i)
        elif isinstance(ev, (ReadEv, WriteEv)):
            entry = delta.fwd.get((h.base, h.id))
            if entry is None:
                return Unrelatable(i, f"no image for base {h.base} id {h.id}")
            base_addr, color, shade = entry
            addr = base_addr + h.offset
            width = SIZEOF[ev.ty]
            cls = ARead if isinstance(ev, ReadEv) else AWrite
            for j in range(width):
                abs_events.append(cls(addr + j, color, shade))
                sources.append(i)
        elif isinstance(ev, SFreeEv):
            entry = delta.fwd.get((h.base, h.id))
            if entry is None:
                return Unrelatable(i, f"no image for base {h.base} id {h.id}")
            base_addr, color, _ = entry
            abs_events.append(AFree(base_addr, color))
            sources.append(i)
        else:
            raise TypeError(f"not a trace event: {ev!r}")
    return abs_events, sources, delta


@dataclass(frozen=True)
class TraceViolation:
    violation: Violation
    trace_index: int  # index of the concrete event it came from


def check_ms(trace, shading=constant_shading):
    """Safety of the related abstract trace: SAFE, TraceViolation, or
    Unrelatable."""
    related = relate_trace(trace, shading)
    if isinstance(related, Unrelatable):
        return related
    abs_events, sources, _ = related
    verdict = check_trace(abs_events)
    if isinstance(verdict, Safe):
        return SAFE
    return TraceViolation(verdict, sources[verdict.index])


def is_safe(trace) -> bool:
    return isinstance(check_ms(trace), Safe)
