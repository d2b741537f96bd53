"""Cache placement: random bit-level placement, expected-mass placement and
the two-relay centralized fixture.

Every file is split at bit ``floor(alpha*F)``: positions below it form
part 1 (served with relay help), the rest part 2 (served by forwarding).
Relays only cache part 1.  A user spends ``floor(beta*M2*F/N)`` bits of
its per-file budget on part 1 and the remainder on part 2; whatever does
not fit in one part goes to the other.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytics import split_fractions
from .model import (
    NetworkConfig,
    SubfileId,
    UserId,
    subsets_lex,
)

BITS = "bits"
FRACTIONAL = "fractional"


def _popcount(x: int) -> int:
    return bin(x).count("1")


@dataclass(frozen=True)
class TermKey:
    """Selects the bits of ``file`` whose caching pattern matches.

    ``relays`` is an exact relay mask, or ``None`` to ignore relay caches.
    User caches are matched on ``users & scope == users_mask``; ``scope`` of
    ``None`` means all users.
    """

    file: int
    part: int
    relays: int | None
    users: int
    scope: int | None = None


@dataclass
class CacheState:
    """Content held by one relay or user.

    Bit-level: ``bits[file]`` is the sorted array of cached positions.
    Fractional: ``masses`` maps each cached subfile class to its size as a
    fraction of ``F``.
    """

    owner: str
    mode: str
    bits: dict[int, np.ndarray] | None = None
    masses: dict[SubfileId, float] | None = None
    budget_bits: int | None = None

    def cached_fraction(self, file: int, file_bits: int = 1) -> float:
        if self.mode == BITS:
            return len(self.bits[file]) / file_bits
        return sum(m for sid, m in self.masses.items() if sid.file == file)

    def within_budget(self, cache_files: float, file_bits: int) -> bool:
        used = sum(len(v) for v in self.bits.values())
        return used <= cache_files * file_bits + 1e-9


@dataclass
class Placement:
    """Outcome of the placement phase for every relay and user.

    Use :func:`decentralized_place`, :func:`fractional_place` or
    :func:`centralized_fixture` to build one.
    """

    cfg: NetworkConfig
    mode: str
    library: np.ndarray | None = None  # (N, F) uint8 bits, bit-level only
    split: int = 0  # first bit of part 2
    _classes: list[dict[int, np.ndarray]] = field(default_factory=list, repr=False)
    _rmask: list[np.ndarray] = field(default_factory=list, repr=False)
    _umask: list[np.ndarray] = field(default_factory=list, repr=False)
    _memo: dict = field(default_factory=dict, repr=False)

    # ---------------------------------------------------------- geometry
    @property
    def unit(self) -> float:
        """Size of one file in this placement's length unit."""
        return float(self.cfg.file_bits) if self.mode == BITS else 1.0

    @property
    def alpha(self) -> float:
        return self.cfg.alpha

    @property
    def beta(self) -> float:
        return self.cfg.beta

    def effective_fractions(self) -> tuple[float, float, float]:
        """Relay and user cache fractions inside part 1, user fraction inside part 2."""
        c = self.cfg
        return split_fractions(c.n_files, c.relay_mem, c.user_mem, c.alpha, c.beta)

    # ---------------------------------------------------------- term sizes
    def term_size(self, key: TermKey) -> float:
        if self.mode == BITS:
            return len(self.term_positions(key))
        memo_key = ("size", key.part, key.relays, key.users, key.scope)
        hit = self._memo.get(memo_key)
        if hit is None:
            hit = self._memo[memo_key] = self._expected_mass(key)
        return hit

    def _expected_mass(self, key: TermKey) -> float:
        c = self.cfg
        K1, K = c.n_relays, c.n_users
        m1, m2, m2b = self.effective_fractions()
        n_scope = K if key.scope is None else _popcount(key.scope)
        s = _popcount(key.users)
        if key.part == 1:
            weight, m = c.alpha, m2
            if key.relays is None:
                relay_factor = 1.0
            else:
                q = _popcount(key.relays)
                relay_factor = m1 ** q * (1 - m1) ** (K1 - q)
        else:
            weight, m = 1 - c.alpha, m2b
            relay_factor = 1.0 if key.relays in (None, 0) else 0.0
        if weight == 0.0:
            return 0.0
        return weight * relay_factor * m ** s * (1 - m) ** (n_scope - s)

    def term_positions(self, key: TermKey) -> np.ndarray:
        """Bit positions selected by ``key``, ascending (bit-level only)."""
        memo_key = ("pos", key)
        hit = self._memo.get(memo_key)
        if hit is not None:
            return hit
        K = self.cfg.n_users
        rel_shift = K
        part_bit = 1 << (self.cfg.n_relays + K)
        scope = (1 << K) - 1 if key.scope is None else key.scope
        chunks = []
        for ck, pos in self._classes[key.file - 1].items():
            part = 2 if ck & part_bit else 1
            if part != key.part:
                continue
            if key.relays is not None and (ck >> rel_shift) & ((1 << self.cfg.n_relays) - 1) != key.relays:
                continue
            if (ck & ((1 << K) - 1)) & scope != key.users:
                continue
            chunks.append(pos)
        if not chunks:
            out = np.empty(0, dtype=np.int64)
        elif len(chunks) == 1:
            out = chunks[0]
        else:
            out = np.sort(np.concatenate(chunks))
        self._memo[memo_key] = out
        return out

    # ---------------------------------------------------------- class tables
    def class_sizes(self, file: int) -> dict[SubfileId, float]:
        """Size of every nonempty-capable subfile class of ``file``.

        Bit-level sizes are bit counts; fractional sizes are masses.
        """
        c = self.cfg
        K1, K, k2 = c.n_relays, c.n_users, c.users_per_relay
        out: dict[SubfileId, float] = {}
        if self.mode == BITS:
            parts = [p for p, size in ((1, self.split), (2, c.file_bits - self.split)) if size]
        else:
            parts = [p for p, w in ((1, c.alpha), (2, 1 - c.alpha)) if w > 0]
        for part in parts:
            relay_sets = list(subsets_lex(range(K1))) if part == 1 else [()]
            for q in relay_sets:
                qm = sum(1 << r for r in q)
                for s in subsets_lex(range(K)):
                    sm = sum(1 << u for u in s)
                    sid = SubfileId(
                        file,
                        tuple(r + 1 for r in q),
                        tuple(UserId.from_index(u, k2) for u in s),
                        part,
                    )
                    out[sid] = self.term_size(TermKey(file, part, qm, sm))
        return out

    def nodes(self) -> list[str]:
        c = self.cfg
        names = [f"relay{i}" for i in range(1, c.n_relays + 1)]
        names += [f"user{UserId.from_index(u, c.users_per_relay)}" for u in range(c.n_users)]
        return names

    @property
    def caches(self) -> list[CacheState]:
        """Cache state of every relay then every user."""
        hit = self._memo.get("caches")
        if hit is None:
            hit = self._memo["caches"] = [self.cache_state(n) for n in self.nodes()]
        return hit

    def cache_state(self, node: str) -> CacheState:
        c = self.cfg
        if node.startswith("relay"):
            idx = int(node[5:]) - 1
            budget = math.floor(c.relay_mem * c.file_bits / c.n_files)
            masks, is_relay = self._rmask, True
        else:
            r, s = node[4:].split(".")
            idx = UserId(int(r), int(s)).index(c.users_per_relay)
            budget = math.floor(c.user_mem * c.file_bits / c.n_files)
            masks, is_relay = self._umask, False
        bit = 1 << idx
        if self.mode == BITS:
            bits = {n + 1: np.flatnonzero(masks[n] & bit) for n in range(c.n_files)}
            return CacheState(node, BITS, bits=bits, budget_bits=budget * c.n_files)
        masses = {}
        for f in range(1, c.n_files + 1):
            for sid, m in self.class_sizes(f).items():
                if is_relay:
                    held = idx + 1 in sid.relays
                else:
                    held = any(u.index(c.users_per_relay) == idx for u in sid.users)
                if held and m > 0:
                    masses[sid] = m
        return CacheState(node, FRACTIONAL, masses=masses)

    def user_cached_positions(self, user: int, file: int) -> np.ndarray:
        return np.flatnonzero(self._umask[file - 1] & (1 << user))

    def relay_cached_positions(self, relay: int, file: int) -> np.ndarray:
        return np.flatnonzero(self._rmask[file - 1] & (1 << relay))

    @classmethod
    def from_masks(cls, cfg: NetworkConfig, library: np.ndarray | None,
                   rmask: list[np.ndarray], umask: list[np.ndarray], split: int) -> "Placement":
        """Bit-level placement from per-file relay/user membership masks."""
        p = cls(cfg=cfg, mode=BITS, library=library, split=split)
        K, K1 = cfg.n_users, cfg.n_relays
        part_bit = np.int64(1 << (K1 + K))
        idx = np.arange(cfg.file_bits, dtype=np.int64)
        for n in range(cfg.n_files):
            r = np.asarray(rmask[n], dtype=np.int64)
            u = np.asarray(umask[n], dtype=np.int64)
            key = (r << K) | u
            key = np.where(idx >= split, key | part_bit, key)
            order = np.argsort(key, kind="stable")
            skey = key[order]
            uniq, starts = np.unique(skey, return_index=True)
            bounds = list(starts) + [len(skey)]
            p._classes.append({
                int(k): order[bounds[t]:bounds[t + 1]] for t, k in enumerate(uniq)
            })
            p._rmask.append(r)
            p._umask.append(u)
        return p


def random_library(cfg: NetworkConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    return rng.integers(0, 2, size=(cfg.n_files, cfg.file_bits), dtype=np.uint8)


def decentralized_place(cfg: NetworkConfig, seed: int,
                        library: np.ndarray | None = None) -> Placement:
    """Independent uniform random caching at bit level.

    For each file, each relay then each of its users draws its positions;
    the library and the positions use separate streams of ``seed`` so the
    placement never depends on file content.
    """
    F, N = cfg.file_bits, cfg.n_files
    K1, K2 = cfg.n_relays, cfg.users_per_relay
    if library is None:
        library = random_library(cfg, seed)
    library = np.asarray(library, dtype=np.uint8)
    if library.shape != (N, F):
        raise ValueError(f"library shape {library.shape} != {(N, F)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])

    split = math.floor(cfg.alpha * F)
    relay_bits = min(math.floor(cfg.relay_mem * F / N), split)
    user_total = math.floor(cfg.user_mem * F / N)
    user_p1 = math.floor(cfg.beta * cfg.user_mem * F / N)
    # a share that does not fit its part spills into the other one
    user_p1 = min(max(user_p1, user_total - (F - split)), split, user_total)
    user_p2 = min(user_total - user_p1, F - split)

    rmask, umask = [], []
    for n in range(N):
        r = np.zeros(F, dtype=np.int64)
        u = np.zeros(F, dtype=np.int64)
        for i in range(K1):
            r[rng.choice(split, size=relay_bits, replace=False)] |= 1 << i
            for j in range(K2):
                bit = np.int64(1 << (i * K2 + j))
                u[rng.choice(split, size=user_p1, replace=False)] |= bit
                if user_p2:
                    u[split + rng.choice(F - split, size=user_p2, replace=False)] |= bit
        rmask.append(r)
        umask.append(u)
    return Placement.from_masks(cfg, library, rmask, umask, split)


def fractional_place(cfg: NetworkConfig) -> Placement:
    """Every subfile class gets exactly its expected share of the file."""
    return Placement(cfg=cfg, mode=FRACTIONAL)


FIXTURE_CONFIG = NetworkConfig(n_files=4, n_relays=2, users_per_relay=2,
                               relay_mem=2, user_mem=0, file_bits=2)


def centralized_fixture(file_bits: int = 2, seed: int = 0,
                        library: np.ndarray | None = None
                        ) -> tuple[np.ndarray, Placement, NetworkConfig]:
    """Four files, two relays with two users each; relay ``i`` caches the
    ``i``-th half of every file and users cache nothing."""
    if file_bits < 2 or file_bits % 2:
        raise ValueError("file_bits must be an even number >= 2")
    cfg = FIXTURE_CONFIG.replace(file_bits=file_bits)
    if library is None:
        library = random_library(cfg, seed)
    half = file_bits // 2
    r = np.zeros(file_bits, dtype=np.int64)
    r[:half] = 1
    r[half:] = 2
    rmask = [r.copy() for _ in range(4)]
    umask = [np.zeros(file_bits, dtype=np.int64) for _ in range(4)]
    placement = Placement.from_masks(cfg, np.asarray(library, dtype=np.uint8),
                                     rmask, umask, split=file_bits)
    return placement.library, placement, cfg


# ---------------------------------------------------------------- binary dump
#
# Layout (little endian):
#   magic   8 bytes  b"HCCACHE\0"
#   version u8       1
#   header  u32 N, u64 F, u32 K1, u32 K2, u64 split, u32 node_count
#   nodes   u8 kind (0 relay, 1 user), u32 relay, u32 slot (0 for relays),
#           then per file: u32 run_count, run_count * (u64 start, u64 length)

MAGIC = b"HCCACHE\0"
VERSION = 1


def _runs(pos: np.ndarray) -> list[tuple[int, int]]:
    if len(pos) == 0:
        return []
    breaks = np.flatnonzero(np.diff(pos) != 1) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [len(pos)]))
    return [(int(pos[a]), int(b - a)) for a, b in zip(starts, ends)]


def dump_caches(placement: Placement, path: str | Path) -> None:
    if placement.mode != BITS:
        raise ValueError("only bit-level placements can be dumped")
    c = placement.cfg
    out = bytearray(MAGIC)
    out += struct.pack("<B", VERSION)
    nodes = placement.nodes()
    out += struct.pack("<IQIIQI", c.n_files, c.file_bits, c.n_relays,
                       c.users_per_relay, placement.split, len(nodes))
    for state in placement.caches:
        if state.owner.startswith("relay"):
            out += struct.pack("<BII", 0, int(state.owner[5:]), 0)
        else:
            r, s = state.owner[4:].split(".")
            out += struct.pack("<BII", 1, int(r), int(s))
        for f in range(1, c.n_files + 1):
            runs = _runs(state.bits[f])
            out += struct.pack("<I", len(runs))
            for start, length in runs:
                out += struct.pack("<QQ", start, length)
    Path(path).write_bytes(bytes(out))


def load_caches(path: str | Path, cfg: NetworkConfig,
                library: np.ndarray | None = None) -> Placement:
    """Rebuild a bit-level placement from :func:`dump_caches` output.

    ``cfg`` supplies the cache sizes and split fractions, which the dump
    does not carry; its shape fields must match the header.
    """
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError("not a cache dump (bad magic)")
    (version,) = struct.unpack_from("<B", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported dump version {version}")
    off = 9
    N, F, K1, K2, split, count = struct.unpack_from("<IQIIQI", data, off)
    off += struct.calcsize("<IQIIQI")
    if (N, F, K1, K2) != (cfg.n_files, cfg.file_bits, cfg.n_relays, cfg.users_per_relay):
        raise ValueError("dump header does not match the config")
    rmask = [np.zeros(F, dtype=np.int64) for _ in range(N)]
    umask = [np.zeros(F, dtype=np.int64) for _ in range(N)]
    for _ in range(count):
        kind, relay, slot = struct.unpack_from("<BII", data, off)
        off += 9
        if kind == 0:
            target, bit = rmask, 1 << (relay - 1)
        else:
            target, bit = umask, 1 << UserId(relay, slot).index(K2)
        for n in range(N):
            (nruns,) = struct.unpack_from("<I", data, off)
            off += 4
            for _ in range(nruns):
                start, length = struct.unpack_from("<QQ", data, off)
                off += 16
                target[n][start:start + length] |= bit
    return Placement.from_masks(cfg, library, rmask, umask, split)
