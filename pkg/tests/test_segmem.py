import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mswasm.segmem import (
    Handle,
    MemTrap,
    SegmentMemory,
    Tag,
    TaggedByte,
    TrapKind,
    pack_handle,
    unpack_handle,
)

from oracles import NaiveMemoryOracle


def data(*bs):
    return [TaggedByte(b, Tag.DATA) for b in bs]


def test_first_alloc_from_empty():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    assert h == Handle(0, 0, 8, True, 0)


def test_zero_length_alloc_traps_on_use():
    mem = SegmentMemory(64)
    h = mem.alloc(0)
    assert h.bound == 0 and h.valid
    with pytest.raises(MemTrap) as e:
        mem.read_bytes(h, 1)
    assert e.value.kind is TrapKind.SPATIAL


def test_free_then_realloc_same_base_new_id():
    mem = SegmentMemory(64)
    h1 = mem.alloc(8)
    h2 = mem.alloc(8)
    mem.free(h1)
    h3 = mem.alloc(8)
    assert h3.base == h1.base
    assert h3.id not in (h1.id, h2.id)


def test_alloc_bases_are_16_aligned():
    mem = SegmentMemory(256)
    bases = [mem.alloc(5).base for _ in range(4)]
    assert all(b % 16 == 0 for b in bases)
    assert bases == sorted(bases)


def test_free_restores_whole_memory():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    mem.free(h)
    assert mem.alloc_state.free == [(0, 64)]
    assert mem.alloc_state.allocated == {}


def test_double_free_traps():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    mem.free(h)
    with pytest.raises(MemTrap) as e:
        mem.free(h)
    assert e.value.kind is TrapKind.TEMPORAL


def test_free_of_corrupted_handle_traps():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    bad = Handle(h.base, h.offset, h.bound, False, h.id)
    with pytest.raises(MemTrap) as e:
        mem.free(bad)
    assert e.value.kind is TrapKind.INTEGRITY


def test_fresh_segment_reads_zero_data_bytes():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    assert mem.read_bytes(h, 4) == data(0, 0, 0, 0)


def test_out_of_bounds_read_traps_spatial():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    with pytest.raises(MemTrap) as e:
        mem.read_bytes(Handle(h.base, 5, 8, True, h.id), 4)
    assert e.value.kind is TrapKind.SPATIAL


def test_boundary_access_succeeds():
    # offset + size == bound is the last legal access
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    assert len(mem.read_bytes(Handle(h.base, 4, 8, True, h.id), 4)) == 4


def test_read_after_free_traps_temporal():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    mem.free(h)
    with pytest.raises(MemTrap) as e:
        mem.read_bytes(h, 1)
    assert e.value.kind is TrapKind.TEMPORAL


def test_freed_bytes_are_zeroed():
    mem = SegmentMemory(64)
    h = mem.alloc(8)
    mem.write_bytes(h, data(1, 2, 3, 4, 5, 6, 7, 8))
    mem.free(h)
    h2 = mem.alloc(8)
    assert mem.read_bytes(h2, 8) == data(0, 0, 0, 0, 0, 0, 0, 0)


def test_window_escaping_segment_traps():
    # a slice may move the window past the allocation; use must trap
    mem = SegmentMemory(64)
    h = mem.alloc(16)
    sliced = mem.slice_handle(h, 12, 0)  # window [12, 28) of a 16-byte segment
    assert sliced.bound == 16
    with pytest.raises(MemTrap) as e:
        mem.read_bytes(sliced, 8)
    assert e.value.kind is TrapKind.SPATIAL


def test_slice_premises():
    mem = SegmentMemory(64)
    h = mem.alloc(64)
    with pytest.raises(MemTrap):
        mem.slice_handle(h, 64, 0)  # base offset must stay below the bound
    with pytest.raises(MemTrap):
        mem.slice_handle(h, -1, 0)
    with pytest.raises(MemTrap):
        mem.slice_handle(h, 0, 65)  # cannot cut more than the whole bound
    s = mem.slice_handle(h, 8, 16)
    assert (s.base, s.offset, s.bound, s.id) == (h.base + 8, 0, 48, h.id)


def test_oom_when_nothing_fits():
    mem = SegmentMemory(32)
    mem.alloc(20)
    with pytest.raises(MemTrap) as e:
        mem.alloc(16)
    assert e.value.kind is TrapKind.OOM


# -- handle packing ---------------------------------------------------


def test_pack_layout():
    raw = pack_handle(Handle(0, 0, 8, True, 0))
    assert raw[0:8] == bytes(8)
    assert raw[8:12] == bytes([8, 0, 0, 0])        # bound, little endian
    assert raw[12:16] == bytes([0, 0, 0, 0x80])    # id 0 with valid bit 31


def test_pack_negative_offset():
    raw = pack_handle(Handle(4, -4, 8, False, 3))
    assert raw[4:8] == b"\xfc\xff\xff\xff"
    assert raw[12:16] == bytes([3, 0, 0, 0])


@given(st.integers(0, 2**32 - 1), st.integers(-2**31, 2**31 - 1),
       st.integers(0, 2**32 - 1), st.booleans(), st.integers(0, 2**31 - 1))
def test_pack_unpack_roundtrip(base, offset, bound, valid, seg_id):
    h = Handle(base, offset, bound, valid, seg_id)
    tagged = [TaggedByte(b, Tag.HANDLE) for b in pack_handle(h)]
    assert unpack_handle(tagged) == h


def test_flipped_tag_invalidates():
    h = Handle(0, 0, 8, True, 0)
    tagged = [TaggedByte(b, Tag.HANDLE) for b in pack_handle(h)]
    tagged[5] = TaggedByte(tagged[5].value, Tag.DATA)
    assert unpack_handle(tagged).valid is False


def test_all_zero_data_bytes_decode_invalid():
    assert unpack_handle(data(*([0] * 16))).valid is False


# -- differential against the naive oracle ----------------------------


def test_backend_matches_naive_oracle():
    from oracles import run_backend_differential
    for seed in range(60):
        run_backend_differential(SegmentMemory(256), random.Random(seed), steps=40)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 48), min_size=0, max_size=10))
def test_alloc_free_restores_partition(sizes):
    """Allocating then freeing everything restores one free range."""
    mem = SegmentMemory(1024)
    hs = []
    for n in sizes:
        hs.append(mem.alloc(n))
    for h in hs:
        mem.free(h)
    assert mem.alloc_state.free == ([(0, 1024)] if 1024 else [])
    assert mem.alloc_state.allocated == {}


def test_tag_alloc_soundness_invariant():
    """No valid handle with an unissued id is ever decodable from tagged
    segment bytes."""
    rng = random.Random(7)
    mem = SegmentMemory(256)
    live = [mem.alloc(32), mem.alloc(48)]
    for _ in range(200):
        h = rng.choice(live)
        if rng.random() < 0.5:
            inner = rng.choice(live)
            off = rng.randrange(0, h.bound - 15) // 16 * 16
            try:
                mem.write_bytes(
                    Handle(h.base, off, h.bound, True, h.id),
                    [TaggedByte(b, Tag.HANDLE) for b in pack_handle(inner)])
            except MemTrap:
                pass
        else:
            off = rng.randrange(0, h.bound)
            try:
                mem.write_bytes(Handle(h.base, off, h.bound, True, h.id),
                                data(rng.randrange(256)))
            except MemTrap:
                pass
        for base in range(0, mem.size - 15, 16):
            tagged = [TaggedByte(mem.data[base + j], Tag(mem.tags[base + j]))
                      for j in range(16)]
            decoded = unpack_handle(tagged)
            if decoded.valid:
                assert decoded.id < mem.alloc_state.next_id
