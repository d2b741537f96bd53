"""Delivery schedules: the concurrent relay-assisted scheme, the three
sequential HCC baselines and plain pipeline forwarding.

Builders work on term sizes taken from the placement, so the same code
emits expected-mass schedules (fractional placement) and bit-exact ones
(random placement).  Bit-level server symbols are cut into packets of
``packet_bits`` so relays can forward packet by packet while the server
keeps sending.
"""

from __future__ import annotations

import warnings
from itertools import combinations

from ..analytics import hcc_c_alpha_beta
from ..errors import DegenerateWarning, InconsistentPlacement
from ..model import Demand, NetworkConfig, members_mask, subsets_lex
from ..placement import BITS, Placement, TermKey
from .schedule import CUT_THROUGH, SERVER, Phase, Schedule, Symbol, Term

DEFAULT_PACKET_BITS = 256

_SHAPE = ("n_files", "n_relays", "users_per_relay", "relay_mem", "user_mem")


class _Builder:
    def __init__(self, scheme: str, cfg: NetworkConfig, placement: Placement,
                 demand: Demand, packet_bits: int | None):
        _check_inputs(cfg, placement, demand)
        self.p = placement
        self.cfg = c = placement.cfg
        self.k2 = c.users_per_relay
        self.want = demand.by_index(self.k2)
        self.sched = Schedule(c, placement.mode, scheme, placement.unit)
        self.packet = packet_bits if placement.mode == BITS else None

    # ------------------------------------------------------------ helpers
    def users_of(self, relay: int) -> list[int]:
        return list(range(relay * self.k2, (relay + 1) * self.k2))

    def sized(self, keys) -> list[Term]:
        out = []
        for key in keys:
            size = self.p.term_size(key)
            if size > 0:
                out.append(Term(key, 0, size))
        return out

    def server(self, terms: list[Term], phase: Phase) -> list[Symbol]:
        """Broadcast the XOR of ``terms`` (split into packets at bit level)."""
        if not terms:
            return []
        total = max(t.length for t in terms)
        step = self.packet or total
        out = []
        a = 0
        while a < total:
            b = min(a + step, total)
            parts = [w for w in (t.window(a, b) for t in terms) if w is not None]
            sym = self.sched.add(SERVER, parts, max(t.length for t in parts), phase)
            out.append(sym)
            a = b
        return out

    def forward(self, relay: int, src: Symbol, keep, phase: Phase) -> Symbol | None:
        kept = [t for t in src.terms if keep(t)]
        if not kept:
            return None
        return self.sched.add(relay + 1, kept, max(t.length for t in kept), phase,
                              depends_on=(src.id,), forwards=src.id)

    def relay_send(self, relay: int, terms: list[Term], length: float, phase: Phase) -> Symbol:
        return self.sched.add(relay + 1, terms, length, phase)

    def start_of(self, src: Symbol, length: float) -> float:
        """Earliest start of a forward of ``src`` (server times are fixed)."""
        end = _server_end(self.sched, src.id)
        if self.sched.default_forwarding == CUT_THROUGH:
            return end - min(src.length, length)
        return end

    def finish(self) -> Schedule:
        return self.sched

    def make_sequential(self) -> None:
        """Every relay waits for the last server symbol before its first send."""
        server = [s.id for s in self.sched.symbols if s.link == SERVER]
        if not server:
            return
        last = server[-1]
        seen = set()
        for s in self.sched.symbols:
            if s.link != SERVER and s.link not in seen:
                seen.add(s.link)
                s.after = s.after + (last,)


def _server_end(sched: Schedule, sid: int) -> float:
    t = 0.0
    for s in sched.symbols:
        if s.link == SERVER:
            t += s.length
            if s.id == sid:
                return t
    raise KeyError(sid)


def _check_inputs(cfg: NetworkConfig, placement: Placement, demand: Demand) -> None:
    pc = placement.cfg
    for name in _SHAPE:
        if getattr(cfg, name) != getattr(pc, name):
            raise InconsistentPlacement(
                f"placement {name}={getattr(pc, name)!r} but config has {getattr(cfg, name)!r}")
    if placement.mode == BITS and cfg.file_bits != pc.file_bits:
        raise InconsistentPlacement("placement and config disagree on file_bits")
    want = demand.files
    if len(want) != pc.n_users:
        raise InconsistentPlacement(f"demand covers {len(want)} users, network has {pc.n_users}")
    for user, f in want.items():
        if not 1 <= user.relay <= pc.n_relays or not 1 <= user.slot <= pc.users_per_relay:
            raise InconsistentPlacement(f"demand names unknown user {user}")
        if not isinstance(f, int) or not 1 <= f <= pc.n_files:
            raise InconsistentPlacement(f"user {user} requests file {f!r} outside the library")


class _FillStream:
    """Relay-resident XOR symbols consumed front to back in arbitrary slices."""

    def __init__(self, symbols: list[list[Term]]):
        self.items = [(terms, max(t.length for t in terms)) for terms in symbols if terms]
        self.idx = 0
        self.pos = 0

    def take(self, amount: float) -> list[tuple[list[Term], float]]:
        out = []
        while amount > 0 and self.idx < len(self.items):
            terms, total = self.items[self.idx]
            avail = total - self.pos
            use = min(avail, amount)
            parts = [w for w in (t.window(self.pos, self.pos + use) for t in terms) if w is not None]
            out.append((parts, use))
            amount -= use
            if use == avail:
                self.idx += 1
                self.pos = 0
            else:
                self.pos += use
        return out

    def rest(self) -> list[tuple[list[Term], float]]:
        return self.take(float("inf"))


# ---------------------------------------------------------------- pipeline

def _pipeline_symbols(b: _Builder, parts: tuple[int, ...], phase: Phase):
    """Single-layer decentralized symbols for all users, relays ignored.

    Returns ``(symbol, user mask)`` pairs.
    """
    K = b.cfg.n_users
    out = []
    for part in parts:
        for s in range(1, K + 1):
            for S in combinations(range(K), s):
                smask = members_mask(S)
                keys = [TermKey(b.want[u], part, None, smask & ~(1 << u)) for u in S]
                for sym in b.server(b.sized(keys), phase):
                    out.append((sym, smask))
    return out


def _forward_useful(b: _Builder, items, phase: Phase) -> None:
    K1 = b.cfg.n_relays
    for sym, smask in items:
        for i in range(K1):
            if smask & members_mask(b.users_of(i)):
                b.forward(i, sym, lambda t: True, phase)


def _present_parts(p: Placement) -> tuple[int, ...]:
    c = p.cfg
    if p.mode == BITS:
        sizes = ((1, p.split), (2, c.file_bits - p.split))
    else:
        sizes = ((1, c.alpha), (2, 1 - c.alpha))
    return tuple(part for part, w in sizes if w > 0)


def build_schedule_pipeline(cfg: NetworkConfig, placement: Placement, demand: Demand,
                            packet_bits: int = DEFAULT_PACKET_BITS) -> Schedule:
    """Relays forward every server symbol that concerns one of their users."""
    b = _Builder("pipeline", cfg, placement, demand, packet_bits)
    items = _pipeline_symbols(b, _present_parts(placement), Phase.PIPELINE)
    _forward_useful(b, items, Phase.PIPELINE_FORWARD)
    return b.finish()


# ---------------------------------------------------------------- HCC

def build_schedule_hcc(variant: str, cfg: NetworkConfig, placement: Placement, demand: Demand,
                       packet_bits: int = DEFAULT_PACKET_BITS) -> Schedule:
    """Sequential baselines: server phase first, then relay phase.

    ``A`` treats each relay as one user wanting all files below it and lets
    relays serve their users afterwards; ``B`` ignores relay caches; ``C``
    runs ``A`` on part 1 of every file and ``B`` on part 2.
    """
    variant = variant.upper()
    if variant not in ("A", "B", "C"):
        raise ValueError(f"unknown HCC variant {variant!r}")
    pc = placement.cfg
    if variant == "A" and pc.alpha != 1.0:
        raise InconsistentPlacement("HCC-A needs a placement with alpha = 1")
    if variant == "C":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWarning)
            a, bt = hcc_c_alpha_beta(cfg)
        if abs(pc.alpha - a) > 1e-12 or abs(pc.beta - bt) > 1e-12:
            raise InconsistentPlacement(
                f"HCC-C needs alpha, beta = {a!r}, {bt!r}; placement has {pc.alpha!r}, {pc.beta!r}")
    b = _Builder(f"hcc-{variant.lower()}", cfg, placement, demand, packet_bits)
    parts = _present_parts(placement)
    if variant == "B":
        items = _pipeline_symbols(b, parts, Phase.BROADCAST)
        _forward_useful(b, items, Phase.BROADCAST_FORWARD)
    else:
        if 1 in parts:
            _tycoon_server(b)
        items = []
        if 2 in parts:
            items = _pipeline_symbols(b, (2,), Phase.BROADCAST)
        if 1 in parts:
            _tycoon_relays(b)
        _forward_useful(b, items, Phase.BROADCAST_FORWARD)
    b.make_sequential()
    return b.finish()


def _tycoon_server(b: _Builder) -> None:
    K1, k2 = b.cfg.n_relays, b.k2
    for j in range(k2):
        for r in range(1, K1 + 1):
            for R in combinations(range(K1), r):
                rmask = members_mask(R)
                keys = [TermKey(b.want[i * k2 + j], 1, rmask & ~(1 << i), 0, 0) for i in R]
                b.server(b.sized(keys), Phase.TYCOON)


def _tycoon_relays(b: _Builder) -> None:
    K1, k2 = b.cfg.n_relays, b.k2
    for i in range(K1):
        users = b.users_of(i)
        scope = members_mask(users)
        for s in range(1, k2 + 1):
            for S in combinations(users, s):
                smask = members_mask(S)
                terms = b.sized(TermKey(b.want[u], 1, None, smask & ~(1 << u), scope) for u in S)
                if terms:
                    b.relay_send(i, terms, max(t.length for t in terms), Phase.RELAY_DELIVERY)


# ---------------------------------------------------------------- proposed

def _relay_resident(b: _Builder, i: int) -> list[list[Term]]:
    """Relay ``i``'s own XOR symbols for bits it caches (relay set contains ``i``)."""
    K1, K = b.cfg.n_relays, b.cfg.n_users
    mine = b.users_of(i)
    others = [u for u in range(K) if u not in mine]
    out = []
    for R in subsets_lex(range(K1)):
        if i not in R:
            continue
        rmask = members_mask(R)
        for s in range(1, b.k2 + 1):
            for Si in combinations(mine, s):
                for t in range(len(others), -1, -1):
                    for T in combinations(others, t):
                        base = members_mask(T)
                        keys = [TermKey(b.want[u], 1, rmask, members_mask(Si) & ~(1 << u) | base)
                                for u in Si]
                        terms = b.sized(keys)
                        if terms:
                            out.append(terms)
    return out


def _components(b: _Builder, i: int, s: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(own-user set, other-user set) pairs of relay ``i`` in emission order."""
    mine = b.users_of(i)
    others = [u for u in range(b.cfg.n_users) if u not in mine]
    return [(Si, T)
            for Si in combinations(mine, s)
            for t in range(len(others), -1, -1)
            for T in combinations(others, t)]


def build_schedule_proposed(cfg: NetworkConfig, placement: Placement, demand: Demand,
                            packet_bits: int = DEFAULT_PACKET_BITS,
                            startup_fill: bool = False) -> Schedule:
    """Concurrent two-layer delivery with relay-side fill of idle slots.

    Part 2 of every file (when ``alpha < 1``) is pipelined first.  Part 1
    then goes out in three transmissions: coded symbols whose per-relay
    components relays forward (I), uncached-at-relay symbols that relays
    forward when useful and otherwise use to send their own cached content
    (II), and the remaining relay-cached content with the server idle (III).

    With ``startup_fill`` each relay also sends its own content while it
    waits for its first server symbol.
    """
    b = _Builder("proposed", cfg, placement, demand, packet_bits)
    c = b.cfg
    K1, K = c.n_relays, c.n_users
    fills = [_FillStream(_relay_resident(b, i)) for i in range(K1)]
    started = [False] * K1

    def fwd(i, src, keep, phase):
        if not started[i]:
            started[i] = True
            kept = [t for t in src.terms if keep(t)]
            if startup_fill and kept:
                wait = b.start_of(src, max(t.length for t in kept))
                for terms, length in fills[i].take(wait):
                    b.relay_send(i, terms, length, Phase.STARTUP_FILL)
        return b.forward(i, src, keep, phase)

    parts = _present_parts(placement)
    if 2 in parts:
        for sym, smask in _pipeline_symbols(b, (2,), Phase.PIPELINE):
            for i in range(K1):
                if smask & members_mask(b.users_of(i)):
                    fwd(i, sym, lambda t: True, Phase.PIPELINE_FORWARD)

    if 1 in parts:
        # Transmission I: relays in R each forward their own component.
        for r in range(K1, 1, -1):
            for R in combinations(range(K1), r):
                rmask = members_mask(R)
                for s in range(1, b.k2 + 1):
                    comps = {i: _components(b, i, s) for i in R}
                    for k in range(len(comps[R[0]])):
                        keys = []
                        for i in R:
                            Si, T = comps[i][k]
                            base = members_mask(Si) | members_mask(T)
                            keys += [TermKey(b.want[u], 1, rmask & ~(1 << i), base & ~(1 << u))
                                     for u in Si]
                        for sym in b.server(b.sized(keys), Phase.TRANSMISSION_I):
                            for i in R:
                                own = rmask & ~(1 << i)
                                fwd(i, sym, lambda t, own=own: t.key.relays == own,
                                    Phase.TRANSMISSION_I)

        # Transmission II: bits no relay holds.
        for s in range(1, K + 1):
            for S in combinations(range(K), s):
                smask = members_mask(S)
                keys = [TermKey(b.want[u], 1, 0, smask & ~(1 << u)) for u in S]
                for sym in b.server(b.sized(keys), Phase.TRANSMISSION_II):
                    for i in range(K1):
                        if smask & members_mask(b.users_of(i)):
                            fwd(i, sym, lambda t: True, Phase.TRANSMISSION_II_FORWARD)
                        else:
                            for terms, length in fills[i].take(sym.length):
                                b.relay_send(i, terms, length, Phase.TRANSMISSION_II_FILL)

    # Transmission III: what relays still hold for their users.
    for i in range(K1):
        for terms, length in fills[i].rest():
            b.relay_send(i, terms, length, Phase.TRANSMISSION_III)
    return b.finish()


# ---------------------------------------------------------------- registry

def build_schedule(scheme: str, cfg: NetworkConfig, placement: Placement, demand: Demand,
                   packet_bits: int = DEFAULT_PACKET_BITS, **kw) -> Schedule:
    if scheme in ("proposed", "proposed-opt"):
        return build_schedule_proposed(cfg, placement, demand, packet_bits, **kw)
    if scheme in ("hcc-a", "hcc-b", "hcc-c"):
        return build_schedule_hcc(scheme[-1], cfg, placement, demand, packet_bits)
    if scheme == "pipeline":
        return build_schedule_pipeline(cfg, placement, demand, packet_bits)
    raise ValueError(f"unknown scheme {scheme!r}")


def placement_split(scheme: str, cfg: NetworkConfig) -> tuple[float, float]:
    """The (alpha, beta) a scheme's placement uses."""
    if scheme == "proposed":
        return cfg.alpha, cfg.beta
    if scheme == "hcc-c":
        return hcc_c_alpha_beta(cfg)
    if scheme in ("hcc-a", "hcc-b", "pipeline"):
        return 1.0, 1.0
    raise ValueError(f"scheme {scheme!r} has no fixed split")
