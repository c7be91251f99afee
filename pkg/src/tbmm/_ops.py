"""Floating-point operation accounting.

Kernels call :func:`charge` with an estimate of the work they performed.
Charges go to the counter installed by :func:`counting` in the current
context, so concurrent runs in different threads never share a tally.
"""

from __future__ import annotations

import contextlib
import contextvars

_active: contextvars.ContextVar["OpCounter | None"] = contextvars.ContextVar(
    "tbmm_op_counter", default=None
)


class OpCounter:
    """Running tally of charged flops, optionally split by kernel tag."""

    def __init__(self):
        self.flops = 0
        self.by_tag: dict[str, int] = {}

    def add(self, flops, tag=None):
        flops = int(flops)
        self.flops += flops
        if tag is not None:
            self.by_tag[tag] = self.by_tag.get(tag, 0) + flops

    def calls(self, tag):
        return self.by_tag.get(tag + "#calls", 0)


def charge(flops, tag=None):
    counter = _active.get()
    if counter is not None:
        counter.add(flops, tag)
        if tag is not None:
            counter.by_tag[tag + "#calls"] = counter.by_tag.get(tag + "#calls", 0) + 1


@contextlib.contextmanager
def counting(counter):
    """Route charges to ``counter`` (``None`` suspends accounting)."""
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)
