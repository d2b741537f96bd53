"""Two-layer network instance, user indexing, demands and subfile classes.

Users are numbered ``0 .. K1*K2-1`` internally, user ``(relay i, slot j)``
(both 1-based) having index ``(i-1)*K2 + (j-1)``.  Relay ``i`` has index
``i-1``.  Sets of relays and users are carried around as integer bitmasks;
the public :class:`SubfileId` converts them to sorted tuples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterator, Sequence

from .errors import (
    ConfigError,
    WorstCaseInfeasible,
    WorstCaseInfeasibleWarning,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


@dataclass(frozen=True)
class NetworkConfig:
    """Parameters of one two-layer caching network.

    ``relay_mem`` and ``user_mem`` are cache sizes measured in files.
    ``alpha`` is the fraction of every file handled by the relay-assisted
    subsystem and ``beta`` the fraction of each user cache given to it.
    """

    n_files: int
    n_relays: int
    users_per_relay: int
    relay_mem: float
    user_mem: float
    file_bits: int = 10_000
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def n_users(self) -> int:
        return self.n_relays * self.users_per_relay

    def replace(self, **changes) -> "NetworkConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True, order=True)
class UserId:
    relay: int
    slot: int

    def index(self, users_per_relay: int) -> int:
        return (self.relay - 1) * users_per_relay + (self.slot - 1)

    @classmethod
    def from_index(cls, idx: int, users_per_relay: int) -> "UserId":
        return cls(idx // users_per_relay + 1, idx % users_per_relay + 1)

    def __str__(self) -> str:
        return f"{self.relay}.{self.slot}"


@dataclass(frozen=True)
class Demand:
    """Requested file (1-based) of every user."""

    files: dict[UserId, int] = field(default_factory=dict)

    def __getitem__(self, user: UserId) -> int:
        return self.files[user]

    def by_index(self, users_per_relay: int) -> list[int]:
        """Demands as a list indexed by internal user index."""
        out = [0] * len(self.files)
        for user, f in self.files.items():
            out[user.index(users_per_relay)] = f
        return out

    def is_distinct(self) -> bool:
        return len(set(self.files.values())) == len(self.files)


@dataclass(frozen=True, order=True)
class SubfileId:
    """Bits of ``file`` cached by exactly the relays ``relays`` and users ``users``.

    ``part`` is 1 for the relay-assisted share of the file and 2 for the
    share handled by plain forwarding (only present when ``alpha < 1``).
    """

    file: int
    relays: tuple[int, ...]
    users: tuple[UserId, ...]
    part: int = 1

    def __str__(self) -> str:
        q = ".".join(str(r) for r in self.relays)
        s = ",".join(str(u) for u in self.users)
        tag = "" if self.part == 1 else "#2"
        return f"{self.file}:{{{q}}}:{{{s}}}{tag}"


# ---------------------------------------------------------------- bitmasks

def mask_members(mask: int) -> list[int]:
    """Indices of the set bits, ascending."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def members_mask(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


def relay_users_mask(relay: int, users_per_relay: int) -> int:
    """Mask of the users attached to relay index ``relay`` (0-based)."""
    return ((1 << users_per_relay) - 1) << (relay * users_per_relay)


def subsets_lex(items: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """All subsets of ``items`` in lexicographic order of their sorted tuples.

    The empty set comes first, then ``(a,) < (a, b) < (a, b, c) < (a, c) < (b,)``.
    """
    items = sorted(items)

    def rec(start: int, prefix: tuple[int, ...]):
        yield prefix
        for k in range(start, len(items)):
            yield from rec(k + 1, prefix + (items[k],))

    return rec(0, ())


def subsets_of_size(items: Sequence[int], size: int) -> Iterator[tuple[int, ...]]:
    return combinations(sorted(items), size)


# ---------------------------------------------------------------- operations

_RANGES = {
    "n_files": "N >= 1",
    "n_relays": "K1 >= 1",
    "users_per_relay": "K2 >= 1",
}


def validate_config(cfg: NetworkConfig) -> NetworkConfig:
    """Return ``cfg`` if every invariant holds, else raise :class:`ConfigError`.

    Fewer files than users is legal for simulation and only triggers a
    :class:`WorstCaseInfeasibleWarning`.
    """
    problems = []
    for name in ("n_files", "n_relays", "users_per_relay"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"OutOfRange({name}): {v!r}, need {_RANGES[name]}")
    if not isinstance(cfg.file_bits, int) or cfg.file_bits < 1:
        problems.append(f"OutOfRange(file_bits): {cfg.file_bits!r}, need F >= 1")
    n = cfg.n_files if isinstance(cfg.n_files, int) else 0
    for name in ("relay_mem", "user_mem"):
        v = getattr(cfg, name)
        if not _is_real(v) or not 0 <= v <= n:
            problems.append(f"OutOfRange({name}): {v!r} not in [0, N={n}]")
    for name in ("alpha", "beta"):
        v = getattr(cfg, name)
        if not _is_real(v) or not 0 <= v <= 1:
            problems.append(f"OutOfRange({name}): {v!r} not in [0, 1]")
    if problems:
        raise ConfigError(problems)
    if cfg.n_files < cfg.n_users:
        warnings.warn(
            f"WorstCaseInfeasible: N={cfg.n_files} < K1*K2={cfg.n_users}; "
            "demands must repeat files",
            WorstCaseInfeasibleWarning,
            stacklevel=2,
        )
    return cfg


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def worst_case_demand(cfg: NetworkConfig) -> Demand:
    """User ``(i, j)`` requests file ``(i-1)*K2 + j``."""
    if cfg.n_files < cfg.n_users:
        raise WorstCaseInfeasible(
            f"N={cfg.n_files} < K1*K2={cfg.n_users}: no all-distinct demand"
        )
    k2 = cfg.users_per_relay
    return Demand({
        UserId(i, j): (i - 1) * k2 + j
        for i in range(1, cfg.n_relays + 1)
        for j in range(1, k2 + 1)
    })


def cyclic_demand(cfg: NetworkConfig) -> Demand:
    """Demand that reuses files round-robin when ``N < K1*K2``."""
    k2 = cfg.users_per_relay
    return Demand({
        UserId(i, j): ((i - 1) * k2 + j - 1) % cfg.n_files + 1
        for i in range(1, cfg.n_relays + 1)
        for j in range(1, k2 + 1)
    })


def enumerate_subfile_classes(cfg: NetworkConfig, file: int) -> list[SubfileId]:
    """Every (relay set, user set) class of ``file``: ``2**K1 * 2**(K1*K2)`` ids.

    Ordered by relay set, then user set, each in lexicographic order of the
    sorted member indices.
    """
    k2 = cfg.users_per_relay
    users = [UserId.from_index(u, k2) for u in range(cfg.n_users)]
    relay_sets = list(subsets_lex(range(1, cfg.n_relays + 1)))
    user_sets = [tuple(users[u] for u in s) for s in subsets_lex(range(cfg.n_users))]
    return [SubfileId(file, q, s) for q in relay_sets for s in user_sets]


CONFIG_KEYS = ("n_files", "k1", "k2", "m1", "m2", "file_bits", "alpha", "beta", "seed")
_REQUIRED = ("n_files", "k1", "k2", "m1", "m2")


def load_config(path: str | Path) -> tuple[NetworkConfig, int]:
    """Read a TOML key/value file with the keys in :data:`CONFIG_KEYS`.

    Returns the validated config and the RNG seed (default 0).
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> tuple[NetworkConfig, int]:
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    missing = [k for k in _REQUIRED if k not in raw]
    problems = [f"unknown key {k!r}" for k in unknown]
    problems += [f"missing key {k!r}" for k in missing]
    if problems:
        raise ConfigError(problems)
    cfg = NetworkConfig(
        n_files=raw["n_files"],
        n_relays=raw["k1"],
        users_per_relay=raw["k2"],
        relay_mem=raw["m1"],
        user_mem=raw["m2"],
        file_bits=raw.get("file_bits", 10_000),
        alpha=raw.get("alpha", 1.0),
        beta=raw.get("beta", 1.0),
    )
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError([f"OutOfRange(seed): {seed!r}, need an unsigned integer"])
    return validate_config(cfg), seed


def dump_config(cfg: NetworkConfig, seed: int = 0) -> str:
    """Inverse of :func:`load_config`."""
    vals = {
        "n_files": cfg.n_files, "k1": cfg.n_relays, "k2": cfg.users_per_relay,
        "m1": cfg.relay_mem, "m2": cfg.user_mem, "file_bits": cfg.file_bits,
        "alpha": cfg.alpha, "beta": cfg.beta, "seed": seed,
    }
    return "".join(f"{k} = {v!r}\n" for k, v in vals.items())
