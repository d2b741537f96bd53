"""Bit-exact execution of a schedule: relays build their payloads from what
they hold, users peel XORs against their caches and compare the result
with the library."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import DecodeFailure
from ..model import Demand, NetworkConfig, SubfileId, UserId, mask_members
from ..placement import BITS, Placement
from .schedule import SERVER, STORE_AND_FORWARD, Schedule, Symbol, Term, timeline


@dataclass
class DecodeResult:
    user: UserId
    file: int
    exact: bool
    missing_bits: int
    missing_classes: list[str]
    digest: str


class _Knowledge:
    """Bits one node holds: a known-flag and a value per (file, position)."""

    def __init__(self, placement: Placement, files_mask_fn):
        N, F = placement.cfg.n_files, placement.cfg.file_bits
        self.p = placement
        self.known = np.zeros((N, F), dtype=bool)
        for n in range(N):
            self.known[n] = files_mask_fn(n)
        self.value = np.where(self.known, placement.library, 0).astype(np.uint8)

    def positions(self, t: Term) -> np.ndarray:
        pos = self.p.term_positions(t.key)
        return pos[int(t.offset):int(t.offset) + int(t.length)]

    def has(self, t: Term) -> bool:
        return bool(self.known[t.key.file - 1, self.positions(t)].all())

    def bits(self, t: Term) -> np.ndarray:
        return self.value[t.key.file - 1, self.positions(t)]

    def learn(self, t: Term, bits: np.ndarray) -> None:
        pos = self.positions(t)
        self.value[t.key.file - 1, pos] = bits[:len(pos)]
        self.known[t.key.file - 1, pos] = True

    def strip(self, payload: np.ndarray, terms) -> np.ndarray:
        out = payload.copy()
        for t in terms:
            b = self.bits(t)
            out[:len(b)] ^= b
        return out

    def absorb(self, pending: list) -> None:
        """Peel every pending (terms, payload) with exactly one unknown term."""
        progress = True
        while progress and pending:
            progress = False
            rest = []
            for terms, payload in pending:
                unknown = [t for t in terms if not self.has(t)]
                if len(unknown) == 1:
                    u = unknown[0]
                    known = [t for t in terms if t is not u]
                    self.learn(u, self.strip(payload, known)[:int(u.length)])
                    progress = True
                elif unknown:
                    rest.append((terms, payload))
            pending[:] = rest


def _xor(terms, source: _Knowledge, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.uint8)
    for t in terms:
        b = source.bits(t)
        out[:len(b)] ^= b
    return out


def decode_all(schedule: Schedule, placement: Placement, demand: Demand
               ) -> dict[UserId, DecodeResult]:
    """Run ``schedule`` bit by bit and check every user's reconstruction.

    Raises :class:`DecodeFailure` when a relay is asked to send content it
    cannot build, or when a user ends without its full file.
    """
    if placement.mode != BITS or placement.library is None:
        raise ValueError("decoding needs a bit-level placement with its library")
    cfg = placement.cfg
    k2 = cfg.users_per_relay
    lib = placement.library
    tl = timeline(schedule, STORE_AND_FORWARD)
    links = schedule.by_link()

    truth = _Knowledge(placement, lambda n: np.ones(cfg.file_bits, dtype=bool))
    payload: dict[int, np.ndarray] = {}
    for s in links[SERVER]:
        payload[s.id] = _xor(s.terms, truth, int(s.length))

    server_by_end = sorted(links[SERVER], key=lambda s: tl.end[s.id])
    for i in range(1, cfg.n_relays + 1):
        bit = 1 << (i - 1)
        node = _Knowledge(placement, lambda n: (placement._rmask[n] & bit) != 0)
        pending: list = []
        heard = 0
        for sym in links[i]:
            while heard < len(server_by_end) and tl.end[server_by_end[heard].id] <= tl.start[sym.id]:
                src = server_by_end[heard]
                pending.append((src.terms, payload[src.id]))
                heard += 1
            node.absorb(pending)
            payload[sym.id] = _relay_payload(sym, node, payload, schedule)

    results = {}
    for u in range(cfg.n_users):
        user = UserId.from_index(u, k2)
        bit = 1 << u
        node = _Knowledge(placement, lambda n: (placement._umask[n] & bit) != 0)
        node.absorb([(s.terms, payload[s.id]) for s in links[user.relay]])
        f = demand[user] - 1
        missing = np.flatnonzero(~node.known[f])
        got = node.value[f]
        digest = hashlib.sha256(np.packbits(got).tobytes()).hexdigest()
        want = hashlib.sha256(np.packbits(lib[f]).tobytes()).hexdigest()
        classes = _classes_of(placement, f, missing)
        results[user] = DecodeResult(user, f + 1, len(missing) == 0 and digest == want,
                                     len(missing), classes, digest)
    bad = [r for r in results.values() if not r.exact]
    if bad:
        r = bad[0]
        raise DecodeFailure(f"user{r.user}", r.missing_classes or ["(wrong bits)"])
    return results


def _relay_payload(sym: Symbol, node: _Knowledge, payload, schedule: Schedule) -> np.ndarray:
    L = int(sym.length)
    if sym.forwards is not None:
        src = schedule.symbols[sym.forwards]
        kept = set(sym.terms)
        stripped = [t for t in src.terms if t not in kept]
        lacking = [t for t in stripped if not node.has(t)]
        if lacking:
            raise DecodeFailure(sym.link_name, [t.label(schedule.cfg) for t in lacking])
        out = node.strip(payload[src.id], stripped)
        if out[L:].any():
            raise DecodeFailure(sym.link_name, [f"symbol {sym.id} leaves residue past its length"])
        return out[:L]
    lacking = [t for t in sym.terms if not node.has(t)]
    if lacking:
        raise DecodeFailure(sym.link_name, [t.label(schedule.cfg) for t in lacking])
    return _xor(sym.terms, node, L)


def _classes_of(placement: Placement, f: int, positions: np.ndarray) -> list[str]:
    if len(positions) == 0:
        return []
    cfg: NetworkConfig = placement.cfg
    k2 = cfg.users_per_relay
    keys = Counter(
        (int(placement._rmask[f][p]), int(placement._umask[f][p]), 2 if p >= placement.split else 1)
        for p in positions
    )
    out = []
    for (r, u, part), _ in sorted(keys.items()):
        sid = SubfileId(f + 1, tuple(x + 1 for x in mask_members(r)),
                        tuple(UserId.from_index(x, k2) for x in mask_members(u)), part)
        out.append(str(sid))
    return out
