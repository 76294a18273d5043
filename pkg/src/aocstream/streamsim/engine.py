"""Discrete-event kernel: bounded FIFOs and generator processes.

A process is a generator that yields one of

* ``int``: stay busy for that many cycles,
* a :class:`Fifo`: pop one token (blocks while empty),
* ``(fifos, token)``: push the token to every FIFO at once (blocks until all
  have room).

Wake-ups at equal timestamps run in the order they were scheduled, so runs
are deterministic.
"""
from __future__ import annotations

import heapq
from collections import deque

from ..errors import Deadlock


class Fifo:
    __slots__ = ("name", "capacity", "items", "pushed", "popped", "peak", "pop_waiter",
                 "push_waiters")

    def __init__(self, name, capacity=4):
        if capacity < 1:
            raise ValueError(f"fifo {name}: capacity must be >= 1")
        self.name = name
        self.capacity = capacity
        self.items = deque()
        self.pushed = 0
        self.popped = 0
        self.peak = 0
        self.pop_waiter = None
        self.push_waiters = []

    def __len__(self):
        return len(self.items)

    def __repr__(self):
        return f"Fifo({self.name!r}, {len(self.items)}/{self.capacity})"


class Proc:
    __slots__ = ("name", "gen", "done", "pending", "blocked_on", "blocked_since", "busy",
                 "wait_empty", "wait_full")

    def __init__(self, name, gen):
        self.name = name
        self.gen = gen
        self.done = False
        self.pending = None
        self.blocked_on = None
        self.blocked_since = 0
        self.busy = 0
        self.wait_empty = 0
        self.wait_full = 0


class Engine:
    def __init__(self, trace=None):
        self.now = 0
        self.procs = []
        self.trace = trace
        self._heap = []
        self._seq = 0

    def spawn(self, name, gen):
        p = Proc(name, gen)
        self.procs.append(p)
        self._wake(p, 0)
        return p

    def _wake(self, p, t):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, p))

    def run(self):
        heap = self._heap
        while heap:
            t, _, p = heapq.heappop(heap)
            self.now = t
            self._resume(p)
        stuck = [p for p in self.procs if not p.done]
        if stuck:
            waits = [(p.name, p.blocked_on[0].name, p.blocked_on[1]) for p in stuck
                     if p.blocked_on is not None]
            desc = ", ".join(f"{n} waits on {f} ({k})" for n, f, k in waits)
            raise Deadlock(f"deadlock at cycle {self.now}: {desc}", wait_set=waits)
        return self.now

    def _block(self, p, fifo, kind, cmd):
        p.pending = cmd
        p.blocked_on = (fifo, kind)
        p.blocked_since = self.now
        if self.trace is not None:
            self.trace.append(f"{self.now} {p.name} block {kind} {fifo.name}")

    def _resume(self, p):
        now = self.now
        if p.blocked_on is not None:
            waited = now - p.blocked_since
            if p.blocked_on[1] == "empty":
                p.wait_empty += waited
            else:
                p.wait_full += waited
            p.blocked_on = None
        cmd = p.pending
        p.pending = None
        value = None
        gen = p.gen
        trace = self.trace
        while True:
            if cmd is None:
                try:
                    cmd = gen.send(value)
                except StopIteration:
                    p.done = True
                    return
                value = None
            kind = type(cmd)
            if kind is int:
                if cmd:
                    p.busy += cmd
                    self._wake(p, now + cmd)
                    return
                cmd = None
            elif kind is Fifo:
                items = cmd.items
                if not items:
                    cmd.pop_waiter = p
                    self._block(p, cmd, "empty", cmd)
                    return
                value = items.popleft()
                cmd.popped += 1
                if trace is not None:
                    trace.append(f"{now} {p.name} pop {cmd.name} {value[:4]}")
                if cmd.push_waiters:
                    for w in cmd.push_waiters:
                        self._wake(w, now)
                    cmd.push_waiters.clear()
                cmd = None
            else:
                fifos, tok = cmd
                full = None
                for f in fifos:
                    if len(f.items) >= f.capacity:
                        full = f
                        break
                if full is not None:
                    full.push_waiters.append(p)
                    self._block(p, full, "full", cmd)
                    return
                for f in fifos:
                    f.items.append(tok)
                    f.pushed += 1
                    if len(f.items) > f.peak:
                        f.peak = len(f.items)
                    if f.pop_waiter is not None:
                        self._wake(f.pop_waiter, now)
                        f.pop_waiter = None
                    if trace is not None:
                        trace.append(f"{now} {p.name} push {f.name} {tok[:4]}")
                cmd = None
