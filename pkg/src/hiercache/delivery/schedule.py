"""Symbols, schedules and the two-layer link timeline.

The server link and the ``K1`` relay links transmit concurrently.  Each
link sends its symbols in order; a symbol starts once its link is free and
its dependencies allow it.  A relay symbol that forwards a server symbol
either waits for the whole source (store-and-forward, used at bit level)
or streams it as it arrives (cut-through, the fluid model used for
expected-mass schedules).
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from ..errors import CyclicDependency
from ..model import NetworkConfig, UserId, mask_members
from ..placement import BITS, TermKey

SERVER = 0

STORE_AND_FORWARD = "store-and-forward"
CUT_THROUGH = "cut-through"


class Phase(str, Enum):
    TRANSMISSION_I = "TransmissionI"
    TRANSMISSION_II = "TransmissionII"
    TRANSMISSION_II_FORWARD = "TransmissionII-forward"
    TRANSMISSION_II_FILL = "TransmissionII-fill"
    TRANSMISSION_III = "TransmissionIII"
    STARTUP_FILL = "TransmissionIII-startup"
    PIPELINE = "Pipeline"
    PIPELINE_FORWARD = "Pipeline-forward"
    TYCOON = "HCC-tycoon"
    RELAY_DELIVERY = "HCC-relay-delivery"
    BROADCAST = "HCC-broadcast"
    BROADCAST_FORWARD = "HCC-broadcast-forward"


@dataclass(frozen=True)
class Term:
    """A slice ``[offset, offset+length)`` of the bits selected by ``key``."""

    key: TermKey
    offset: float
    length: float

    def window(self, a: float, b: float) -> "Term | None":
        if a >= self.length:
            return None
        return Term(self.key, self.offset + a, min(b, self.length) - a)

    def label(self, cfg: NetworkConfig, full_length: float | None = None) -> str:
        k = self.key
        q = "*" if k.relays is None else "{" + ".".join(str(r + 1) for r in mask_members(k.relays)) + "}"
        users = ",".join(str(UserId.from_index(u, cfg.users_per_relay)) for u in mask_members(k.users))
        s = "{" + users + "}"
        if k.scope == 0:
            s = "*"
        elif k.scope is not None:
            s += "@" + str(mask_members(k.scope)[0] // cfg.users_per_relay + 1)
        out = f"{k.file}:{q}:{s}"
        if k.part != 1:
            out += "#2"
        if self.offset or (full_length is not None and self.length != full_length):
            out += f"[{self.offset!r}+{self.length!r}]"
        return out


@dataclass
class Symbol:
    """One XOR transmission on one link."""

    id: int
    link: int  # 0 = server, i = relay i
    terms: tuple[Term, ...]
    length: float
    phase: Phase
    depends_on: tuple[int, ...] = ()
    forwards: int | None = None  # server symbol this relay symbol re-sends
    after: tuple[int, ...] = ()  # barriers: always wait for full completion

    @property
    def all_deps(self) -> tuple[int, ...]:
        return self.depends_on + tuple(d for d in self.after if d not in self.depends_on)

    @property
    def link_name(self) -> str:
        return "server" if self.link == SERVER else f"relay{self.link}"


@dataclass
class Schedule:
    cfg: NetworkConfig
    mode: str
    scheme: str
    unit: float
    symbols: list[Symbol] = field(default_factory=list)

    def add(self, link: int, terms: Iterable[Term], length: float, phase: Phase,
            depends_on: Iterable[int] = (), forwards: int | None = None) -> Symbol:
        sym = Symbol(len(self.symbols), link, tuple(terms), length, phase,
                     tuple(depends_on), forwards)
        self.symbols.append(sym)
        return sym

    def by_link(self) -> dict[int, list[Symbol]]:
        out: dict[int, list[Symbol]] = {SERVER: []}
        for i in range(1, self.cfg.n_relays + 1):
            out[i] = []
        for s in self.symbols:
            out[s.link].append(s)
        return out

    @property
    def default_forwarding(self) -> str:
        return STORE_AND_FORWARD if self.mode == BITS else CUT_THROUGH

    def without(self, symbol_id: int) -> "Schedule":
        """Copy with one symbol removed and references to it dropped."""
        out = Schedule(self.cfg, self.mode, self.scheme, self.unit)
        remap = {}
        for s in self.symbols:
            if s.id == symbol_id:
                continue
            remap[s.id] = len(out.symbols)
            out.symbols.append(Symbol(
                remap[s.id], s.link, s.terms, s.length, s.phase,
                tuple(remap[d] for d in s.depends_on if d in remap),
                remap.get(s.forwards),
                tuple(remap[d] for d in s.after if d in remap),
            ))
        return out


@dataclass
class Timeline:
    start: dict[int, float]
    end: dict[int, float]
    forwarding: str


@dataclass
class DelayReport:
    """Delay of one executed schedule, in files (busy time divided by ``F``)."""

    scheme: str
    r1: float
    r2: float
    makespan: float
    diagnostics: dict[str, float] = field(default_factory=dict)


def timeline(schedule: Schedule, forwarding: str | None = None) -> Timeline:
    """Start and end time of every symbol (list scheduling per link)."""
    forwarding = forwarding or schedule.default_forwarding
    links = schedule.by_link()
    order = sorted(links)
    ptr = {l: 0 for l in order}
    free = {l: 0.0 for l in order}
    start: dict[int, float] = {}
    end: dict[int, float] = {}
    left = len(schedule.symbols)
    while left:
        moved = False
        for l in order:
            seq = links[l]
            while ptr[l] < len(seq):
                sym = seq[ptr[l]]
                if any(d not in end for d in sym.all_deps):
                    break
                t = free[l]
                for d in sym.depends_on:
                    if forwarding == CUT_THROUGH and d == sym.forwards:
                        t = max(t, start[d], end[d] - sym.length)
                    else:
                        t = max(t, end[d])
                for d in sym.after:
                    t = max(t, end[d])
                start[sym.id] = t
                end[sym.id] = free[l] = t + sym.length
                ptr[l] += 1
                left -= 1
                moved = True
        if not moved:
            stuck = [links[l][ptr[l]].id for l in order if ptr[l] < len(links[l])]
            raise CyclicDependency(f"no symbol can start; blocked heads {stuck}")
    return Timeline(start, end, forwarding)


def makespan(schedule: Schedule, forwarding: str | None = None) -> DelayReport:
    tl = timeline(schedule, forwarding)
    unit = schedule.unit
    busy: dict[int, float] = defaultdict(float)
    phase_busy: dict[tuple[int, str], float] = defaultdict(float)
    first_start: dict[int, float] = {}
    for s in schedule.symbols:
        busy[s.link] += s.length
        phase_busy[(s.link, s.phase.value)] += s.length
        if s.link != SERVER:
            first_start.setdefault(s.link, tl.start[s.id])
    relays = range(1, schedule.cfg.n_relays + 1)
    r1 = busy[SERVER] / unit
    r2 = max((busy[i] for i in relays), default=0.0) / unit
    span = max(tl.end.values(), default=0.0) / unit

    diag: dict[str, float] = {}
    for phase in sorted({p for _, p in phase_busy}):
        diag[f"server:{phase}"] = phase_busy[(SERVER, phase)] / unit
        diag[f"relay_max:{phase}"] = max(phase_busy[(i, phase)] for i in relays) / unit
    diag = {k: v for k, v in diag.items() if v}
    diag["redundant_slot_reuse"] = max(
        phase_busy[(i, Phase.TRANSMISSION_II_FILL.value)] for i in relays) / unit
    diag["relay_idle_at_start"] = max(first_start.values(), default=0.0) / unit
    # Extra delay from relays sending one packet behind the server, measured
    # against the same schedule run with streaming (cut-through) relays.
    diag["startup_lag"] = 0.0
    if tl.forwarding == STORE_AND_FORWARD:
        fluid = max(timeline(schedule, CUT_THROUGH).end.values(), default=0.0) / unit
        diag["startup_lag"] = span - fluid
    return DelayReport(schedule.scheme, r1, r2, span, diag)


CSV_COLUMNS = ["symbol_id", "link", "phase", "start", "length_bits", "xor_terms", "depends_on"]


def export_csv(schedule: Schedule, out=None, forwarding: str | None = None) -> str:
    """Write the schedule as CSV (one row per symbol, id order); returns the text."""
    tl = timeline(schedule, forwarding)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in schedule.symbols:
        w.writerow([
            s.id,
            s.link_name,
            s.phase.value,
            repr(tl.start[s.id]),
            repr(s.length),
            ";".join(t.label(schedule.cfg) for t in s.terms),
            ";".join(str(d) for d in s.all_deps),
        ])
    text = buf.getvalue()
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w", newline="") as fh:
                fh.write(text)
    return text
