"""Tagged segment memory: per-byte data/handle tags, a deterministic
first-fit allocator with never-reused segment ids, and handle packing.

Access checks and their trap classification (checked in this order):
  integrity  -- the handle's valid flag is false
  temporal   -- the handle's id is not currently allocated
  spatial    -- the handle's window escapes its segment, or the offset
                is outside [0, bound - size]
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple

HANDLE_BYTES = 16
ALIGN = 16
MAX_ID = (1 << 31) - 1

_U32 = 0xFFFFFFFF


def wrap_i32(v: int) -> int:
    v &= _U32
    return v - (1 << 32) if v >= (1 << 31) else v


class Tag(enum.IntEnum):
    DATA = 0
    HANDLE = 1


class TaggedByte(NamedTuple):
    value: int
    tag: Tag


@dataclass(frozen=True)
class Handle:
    """Fat pointer into segment memory.

    No invariant ties offset to bound: out-of-bounds handles are legal
    values and only trap when used.
    """

    base: int       # u32 byte address of the accessible window
    offset: int     # i32, may be negative or past the bound
    bound: int      # u32 window length in bytes
    valid: bool
    id: int         # 31-bit allocation identifier, never reused

    def moved(self, delta: int) -> "Handle":
        return Handle(self.base, wrap_i32(self.offset + delta),
                      self.bound, self.valid, self.id)


NULL_HANDLE = Handle(0, 0, 0, False, 0)


class TrapKind(enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    INTEGRITY = "integrity"
    OOM = "oom"


class MemTrap(Exception):
    def __init__(self, kind: TrapKind, msg: str = ""):
        super().__init__(f"{kind.value}: {msg}" if msg else kind.value)
        self.kind = kind


def pack_handle(h: Handle) -> bytes:
    """16-byte little-endian record; id in bits 0..30 of the last word,
    valid flag in bit 31."""
    word = (h.id & MAX_ID) | ((1 << 31) if h.valid else 0)
    return struct.pack("<IiII", h.base & _U32, wrap_i32(h.offset),
                       h.bound & _U32, word)


def unpack_handle(tagged: list[TaggedByte]) -> Handle:
    """Decode 16 tagged bytes; corruption shows up as valid=False, never
    as an error."""
    if len(tagged) != HANDLE_BYTES:
        raise ValueError(f"need {HANDLE_BYTES} bytes, got {len(tagged)}")
    raw = bytes(b.value for b in tagged)
    base, offset, bound, word = struct.unpack("<IiII", raw)
    all_handle_tags = all(b.tag is Tag.HANDLE for b in tagged)
    valid = all_handle_tags and bool(word >> 31)
    return Handle(base, offset, bound, valid, word & MAX_ID)


def unpack_handle_raw(raw: bytes) -> Handle:
    base, offset, bound, word = struct.unpack("<IiII", raw)
    return Handle(base, offset, bound, bool(word >> 31), word & MAX_ID)


@dataclass
class AllocatorState:
    """Free ranges and live segments partition [0, size); ids are issued
    from a counter and never handed out twice."""

    free: list[tuple[int, int]]          # sorted disjoint (start, length)
    allocated: dict[int, tuple[int, int]]  # id -> (base, size)
    next_id: int = 0

    @classmethod
    def empty(cls, size: int) -> "AllocatorState":
        return cls(free=[(0, size)] if size > 0 else [], allocated={})

    def take_id(self) -> int:
        if self.next_id > MAX_ID:
            raise RuntimeError("segment id space exhausted")
        i = self.next_id
        self.next_id += 1
        return i

    def find_fit(self, n: int) -> int | None:
        """Lowest aligned base where n bytes fit, or None."""
        for start, length in self.free:
            base = (start + ALIGN - 1) & ~(ALIGN - 1)
            if base + n <= start + length:
                return base
        return None

    def carve(self, base: int, n: int) -> None:
        for i, (start, length) in enumerate(self.free):
            if start <= base and base + n <= start + length:
                pieces = []
                if base > start:
                    pieces.append((start, base - start))
                if start + length > base + n:
                    pieces.append((base + n, start + length - (base + n)))
                self.free[i:i + 1] = pieces
                return
        raise AssertionError("carve outside free space")

    def release(self, base: int, n: int) -> None:
        if n == 0:
            return
        self.free.append((base, n))
        self.free.sort()
        merged = [self.free[0]]
        for start, length in self.free[1:]:
            last_start, last_len = merged[-1]
            if last_start + last_len == start:
                merged[-1] = (last_start, last_len + length)
            else:
                merged.append((start, length))
        self.free = merged


class SegmentMemory:
    """Fixed-size array of tagged bytes plus the allocator."""

    def __init__(self, size: int):
        self.size = size
        self.data = bytearray(size)
        self.tags = bytearray(size)  # 0 = DATA, 1 = HANDLE
        self.alloc_state = AllocatorState.empty(size)

    # -- allocation ---------------------------------------------------

    def alloc(self, n: int) -> Handle:
        if n < 0:
            raise MemTrap(TrapKind.OOM, f"negative size {n}")
        base = self.alloc_state.find_fit(n)
        if base is None:
            raise MemTrap(TrapKind.OOM, f"no free range fits {n} bytes")
        self.alloc_state.carve(base, n)
        self.data[base:base + n] = bytes(n)
        self.tags[base:base + n] = bytes(n)
        seg_id = self.alloc_state.take_id()
        self.alloc_state.allocated[seg_id] = (base, n)
        return Handle(base, 0, n, True, seg_id)

    def free(self, h: Handle) -> None:
        if not h.valid:
            raise MemTrap(TrapKind.INTEGRITY, "free via corrupted handle")
        if h.id not in self.alloc_state.allocated:
            raise MemTrap(TrapKind.TEMPORAL, f"id {h.id} not allocated")
        base, n = self.alloc_state.allocated[h.id]
        if h.offset != 0 or h.base != base:
            raise MemTrap(TrapKind.SPATIAL, "free not at segment start")
        del self.alloc_state.allocated[h.id]
        self.data[base:base + n] = bytes(n)
        self.tags[base:base + n] = bytes(n)
        self.alloc_state.release(base, n)

    # -- access -------------------------------------------------------

    def _check_access(self, h: Handle, size: int) -> int:
        if not h.valid:
            raise MemTrap(TrapKind.INTEGRITY, "access via corrupted handle")
        rec = self.alloc_state.allocated.get(h.id)
        if rec is None:
            raise MemTrap(TrapKind.TEMPORAL, f"id {h.id} not allocated")
        seg_base, seg_size = rec
        if not (seg_base <= h.base and h.base + h.bound <= seg_base + seg_size):
            raise MemTrap(TrapKind.SPATIAL, "window escapes segment")
        if not (0 <= h.offset and h.offset + size <= h.bound):
            raise MemTrap(TrapKind.SPATIAL,
                          f"offset {h.offset}+{size} outside bound {h.bound}")
        return h.base + h.offset

    def read_bytes(self, h: Handle, size: int) -> list[TaggedByte]:
        a = self._check_access(h, size)
        return [TaggedByte(self.data[a + j], Tag(self.tags[a + j]))
                for j in range(size)]

    def write_bytes(self, h: Handle, payload: list[TaggedByte]) -> None:
        a = self._check_access(h, len(payload))
        for j, tb in enumerate(payload):
            self.data[a + j] = tb.value
            self.tags[a + j] = int(tb.tag)

    def slice_handle(self, h: Handle, o1: int, o2: int) -> Handle:
        """Narrow the window: base grows by o1, bound shrinks by o2."""
        if not (0 <= o1 < h.bound):
            raise MemTrap(TrapKind.SPATIAL, f"slice base offset {o1}")
        if not (0 <= o2 <= h.bound):
            raise MemTrap(TrapKind.SPATIAL, f"slice bound cut {o2}")
        return Handle(h.base + o1, h.offset, h.bound - o2, h.valid, h.id)

    def dump(self, base: int, size: int) -> bytes:
        """Raw bytes, no checks; post-mortem inspection only."""
        return bytes(self.data[base:base + size])
