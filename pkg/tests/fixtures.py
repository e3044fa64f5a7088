"""Source-program fixtures shared by the unit and acceptance tests."""


def trim_copy_program(n_in: int, dst_cap: int = 1024) -> str:
    """Copy n_in ints into a dst_cap-element buffer through a recursive
    loop; overflows dst when n_in > dst_cap."""
    return f"""
module {{
  struct St {{ s: ptr<array int>, d: ptr<array int>, i: int }}
  fn main() -> int {{
    var (src: ptr<array int>, dst: ptr<array int>, st: ptr<struct St>);
    src := malloc<int>({n_in});
    dst := malloc<int>({dst_cap});
    st := malloc(struct St);
    *(st.s) := src;
    *(st.d) := dst;
    *(st.i) := 0;
    let r = copy(st) in r
  }}
  fn copy(st: ptr<struct St>) -> int {{
    var (i: int);
    i := *(st.i);
    if i < {n_in} {{
      *(*(st.d) + i) := *(*(st.s) + i);
      *(st.i) := i + 1;
      let r = copy(st) in r
    }} else {{ 0 }}
  }}
  heap 0
}}
"""


def user_record_program(write_index: int) -> str:
    """A 32-slot name buffer next to an id field; writes name[write_index]
    after setting id to 77.  write_index >= 32 is an intra-object
    overflow that must not be able to reach the id."""
    return f"""
module {{
  struct User {{ name: array 32 int, id: int }}
  fn main() -> int {{
    var (u: ptr<struct User>, nm: ptr<array 32 int>);
    u := malloc(struct User);
    *(u.id) := 77;
    nm := u.name;
    *(nm + {write_index}) := 99;
    *(u.id)
  }}
  heap 0
}}
"""


UAF_READ = """
module {
  fn main() -> int {
    var (p: ptr<array int>, x: int);
    p := malloc<int>(2);
    *(p + 0) := 5;
    free(p);
    x := *(p + 0);
    x
  }
  heap 0
}
"""


# One program per violation class; each must compile to a run whose trace
# is the related safe prefix plus exactly one trap.
UNSAFE_SUITE = {
    "array-overflow-write": """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(2);
    *(p + 0) := 1;
    *(p + 5) := 1;
    0
  }
  heap 0
}
""",
    "array-underflow-read": """
module {
  fn main() -> int {
    var (p: ptr<array int>, x: int);
    p := malloc<int>(4);
    x := *(p + (0 - 1));
    x
  }
  heap 0
}
""",
    "uaf-read": UAF_READ,
    "uaf-write": """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(2);
    free(p);
    *(p + 0) := 9;
    0
  }
  heap 0
}
""",
    "double-free": """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(3);
    free(p);
    free(p);
    0
  }
  heap 0
}
""",
    "forged-read": """
module {
  fn main() -> int {
    var (x: int);
    x := *(4);
    x
  }
  heap 8
}
""",
    "forged-write": """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(2);
    *(3) := 1;
    0
  }
  heap 8
}
""",
    "forged-free": """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(2);
    free(7);
    0
  }
  heap 0
}
""",
    "struct-field-overflow": user_record_program(32),
    "dangling-after-realloc": """
module {
  fn main() -> int {
    var (p: ptr<array int>, q: ptr<array int>, x: int);
    p := malloc<int>(4);
    free(p);
    q := malloc<int>(4);
    *(q + 0) := 8;
    x := *(p + 0);
    x
  }
  heap 0
}
""",
    "negative-offset-deref": """
module {
  fn main() -> int {
    var (p: ptr<array int>);
    p := malloc<int>(4);
    *(p + (0 - 2)) := 1;
    0
  }
  heap 0
}
""",
    "zero-length-deref": """
module {
  fn main() -> int {
    var (p: ptr<array int>, x: int);
    p := malloc<int>(0);
    x := *(p + 0);
    x
  }
  heap 0
}
""",
    "stale-slice-after-free": """
module {
  struct Pair { a: int, b: int }
  fn main() -> int {
    var (s: ptr<struct Pair>, f: ptr<int>, x: int);
    s := malloc(struct Pair);
    f := s.a;
    *(f) := 3;
    free(s);
    x := *(f);
    x
  }
  heap 0
}
""",
}
