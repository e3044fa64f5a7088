"""Power-of-two-slot enforcement backend: checks happen when handles are
modified, not when memory is accessed.

Handles are packed 64-bit values: bits 0-47 hold an absolute byte position
in one growable backing store, bits 48-53 the log2 of the slot size, and
bit 63 marks a position that has strayed outside its slot.  Strays of up
to half a slot are tolerated (marked, usable again once moved back
inside); farther strays trap.  Accesses through unmarked handles are only
checked against the backing store as a whole, so reads past a slot's end
into a neighbouring slot succeed, freed slots remain readable, and stored
handles are raw bytes: spatial protection is slot-granular and temporal
safety and handle integrity are deliberately absent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .segmem import Handle, MemTrap, TrapKind

MIN_ORDER = 4  # smallest slot is 16 bytes
_ADDR_MASK = (1 << 48) - 1
_MARK_BIT = 1 << 63


@dataclass(frozen=True)
class BaggyHandle:
    packed: int

    @property
    def addr(self) -> int:
        return self.packed & _ADDR_MASK

    @property
    def order(self) -> int:
        return (self.packed >> 48) & 0x3F

    @property
    def slot_size(self) -> int:
        return 1 << self.order

    @property
    def marked(self) -> bool:
        return bool(self.packed & _MARK_BIT)

    @property
    def slot_base(self) -> int:
        """Recover the owning slot's base.

        Unmarked positions sit inside their (size-aligned) slot.  Marked
        positions sit within half a slot of one end; which end is encoded
        by the position's residue: the below-slot stray window is
        [base - size/2, base) and the above-slot window is
        [base + size, base + 3*size/2), so residues >= size/2 mean below.
        """
        size = self.slot_size
        aligned = self.addr & ~(size - 1)
        if not self.marked:
            return aligned
        if self.addr % size >= size // 2:
            return aligned + size
        return aligned - size

    def with_addr(self, addr: int, marked: bool) -> "BaggyHandle":
        packed = (addr & _ADDR_MASK) | (self.order << 48)
        if marked:
            packed |= _MARK_BIT
        return BaggyHandle(packed)


NULL_BAGGY = BaggyHandle(0)


def _order_for(n: int) -> int:
    order = MIN_ORDER
    while (1 << order) < n:
        order += 1
    return order


class BuddyMemory:
    """Single growable byte store carved by a binary buddy allocator."""

    def __init__(self, size: int = 1 << 16, cap: int = 1 << 26):
        size = max(16, 1 << (size - 1).bit_length())
        self.cap = cap
        self.data = bytearray(size)
        self.free_lists: dict[int, list[int]] = {size.bit_length() - 1: [0]}
        self.allocated: dict[int, int] = {}  # slot base -> order

    @property
    def size(self) -> int:
        return len(self.data)

    def _grow(self) -> None:
        old = self.size
        if old * 2 > self.cap:
            raise MemTrap(TrapKind.OOM, "backing store at cap")
        self.data.extend(bytes(old))
        # The new upper half is one free block of the old total size.
        self.free_lists.setdefault(old.bit_length() - 1, []).append(old)

    def _take_block(self, order: int) -> int:
        for k in sorted(self.free_lists):
            if k >= order and self.free_lists[k]:
                base = min(self.free_lists[k])
                self.free_lists[k].remove(base)
                while k > order:
                    k -= 1
                    self.free_lists.setdefault(k, []).append(base + (1 << k))
                return base
        self._grow()
        return self._take_block(order)

    def alloc(self, n: int) -> BaggyHandle:
        if n < 0:
            raise MemTrap(TrapKind.OOM, f"negative size {n}")
        order = _order_for(n)
        if (1 << order) > self.cap:
            raise MemTrap(TrapKind.OOM, f"{n} bytes above cap")
        base = self._take_block(order)
        self.allocated[base] = order
        self.data[base:base + (1 << order)] = bytes(1 << order)
        return BaggyHandle((base & _ADDR_MASK) | (order << 48))

    def free(self, h: BaggyHandle) -> None:
        if h.marked:
            raise MemTrap(TrapKind.INTEGRITY, "free via marked handle")
        base = h.slot_base
        if h.addr != base:
            raise MemTrap(TrapKind.SPATIAL, "free not at slot start")
        order = self.allocated.get(base)
        if order is None or order != h.order:
            raise MemTrap(TrapKind.TEMPORAL, "slot not allocated")
        del self.allocated[base]
        while order < self.size.bit_length() - 1:
            buddy = base ^ (1 << order)
            bucket = self.free_lists.get(order, [])
            if buddy in bucket:
                bucket.remove(buddy)
                base = min(base, buddy)
                order += 1
            else:
                break
        self.free_lists.setdefault(order, []).append(base)

    # -- handle-modifying checks ---------------------------------------

    def handle_add(self, h: BaggyHandle, delta: int) -> BaggyHandle:
        base = h.slot_base
        size = h.slot_size
        addr = h.addr + delta
        if base <= addr < base + size:
            return h.with_addr(addr, marked=False)
        if base - size // 2 <= addr < base or base + size <= addr < base + size + size // 2:
            return h.with_addr(addr, marked=True)
        raise MemTrap(TrapKind.SPATIAL, "strayed too far from slot")

    def slice_handle(self, h: BaggyHandle, o1: int, o2: int) -> BaggyHandle:
        # Slot metadata cannot be narrowed; only the position moves.
        return self.handle_add(h, o1)

    # -- access: no slot check at all ----------------------------------

    def _check_use(self, h: BaggyHandle, size: int) -> int:
        if h.marked:
            raise MemTrap(TrapKind.SPATIAL, "access via marked handle")
        if h.addr + size > self.size:
            raise MemTrap(TrapKind.SPATIAL, "outside backing store")
        return h.addr

    def read(self, h: BaggyHandle, size: int) -> bytes:
        a = self._check_use(h, size)
        return bytes(self.data[a:a + size])

    def write(self, h: BaggyHandle, payload: bytes) -> None:
        a = self._check_use(h, len(payload))
        self.data[a:a + len(payload)] = payload

    def view(self, h: BaggyHandle) -> Handle:
        """Present a slot-relative view for trace events; the slot base
        doubles as the id since this backend has no allocation ids."""
        base = h.slot_base
        return Handle(base, h.addr - base, h.slot_size, not h.marked, base & 0x7FFFFFFF)


def pack_baggy(h: BaggyHandle) -> bytes:
    return struct.pack("<Q", h.packed)


def unpack_baggy(raw: bytes) -> BaggyHandle:
    return BaggyHandle(struct.unpack("<Q", raw)[0])
