"""Segment-memory bytecode toolkit: checker, interpreter, safety monitor,
and a small C-subset compiler with a differential test harness."""

__version__ = "0.1.0"
