"""Closed-form rates, delays, bounds and thresholds for the two-layer network.

All rates are in units of files (bits transmitted divided by ``F``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import DegenerateWarning, DomainError, NotTwoRelay
from .model import NetworkConfig


@dataclass(frozen=True)
class RatePair:
    r1: float
    r2: float

    @property
    def sequential(self) -> float:
        return self.r1 + self.r2


@dataclass(frozen=True)
class ProposeComponents:
    rs1: float
    rs2: float
    rs3: float
    re: float
    r_prime: float
    r_double_prime: float
    # rs2 evaluated with the library size N instead of alpha*N
    rs2_full_library: float = 0.0

    @property
    def delay(self) -> float:
        return self.r_prime + self.r_double_prime


@dataclass(frozen=True)
class GapReport:
    regime: str
    guaranteed_gap: float
    hcc_delay: float
    propose_delay: float
    alpha: float
    beta: float

    @property
    def achieved_gap(self) -> float:
        return self.hcc_delay - self.propose_delay


def rate_r(m: float, k: int) -> float:
    """Single-layer decentralized delivery rate for ``k`` users caching a fraction ``m``.

    ``((1-m)/m) * (1 - (1-m)**k)``, continued to ``k`` at ``m = 0``.
    ``k = 0`` gives 0.
    """
    if not 0.0 <= m <= 1.0 or math.isnan(m):
        raise DomainError(f"cache fraction {m!r} outside [0, 1]")
    if k < 0:
        raise DomainError(f"user count {k!r} is negative")
    if k == 0 or m == 1.0:
        return 0.0
    if m == 0.0:
        return float(k)
    # -expm1(k*log1p(-m)) == 1 - (1-m)**k without cancellation for small m
    return max((1.0 - m) * -math.expm1(k * math.log1p(-m)) / m, 0.0)


def _fraction(num: float, den: float) -> float:
    """``num/den`` clamped to [0, 1]; an empty subsystem counts as fully cached."""
    if den <= 0:
        return 1.0
    return min(max(num / den, 0.0), 1.0)


def split_fractions(n_files: float, relay_mem: float, user_mem: float,
                    alpha: float, beta: float) -> tuple[float, float, float]:
    """Cache fractions inside each part of the ``alpha`` file split.

    Returns the relay and user fractions of part 1 and the user fraction of
    part 2.  A user share larger than its part spills over to the other
    part instead of being wasted.  An empty part counts as fully cached.
    """
    p1, p2 = alpha * n_files, (1 - alpha) * n_files
    u1, u2 = beta * user_mem, (1 - beta) * user_mem
    u1, u2 = u1 + max(u2 - p2, 0.0), u2 + max(u1 - p1, 0.0)
    return _fraction(relay_mem, p1), _fraction(u1, p1), _fraction(u2, p2)


def _check_split(alpha: float, beta: float) -> None:
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name}={v!r} outside [0, 1]")


def hcc_a_rates(cfg: NetworkConfig) -> RatePair:
    N, K1, K2 = cfg.n_files, cfg.n_relays, cfg.users_per_relay
    return RatePair(
        K2 * rate_r(cfg.relay_mem / N, K1),
        rate_r(cfg.user_mem / N, K2),
    )


def hcc_b_rates(cfg: NetworkConfig) -> RatePair:
    N, K2 = cfg.n_files, cfg.users_per_relay
    m2 = cfg.user_mem / N
    return RatePair(rate_r(m2, cfg.n_users), rate_r(m2, K2))


def hcc_c_rates(cfg: NetworkConfig, alpha: float, beta: float) -> RatePair:
    """Mixture of HCC-A on an ``alpha`` share of each file and HCC-B on the rest.

    The second-layer HCC-A term serves ``K2`` users per relay.
    """
    _check_split(alpha, beta)
    N, K1, K2, K = cfg.n_files, cfg.n_relays, cfg.users_per_relay, cfg.n_users
    M1, M2 = cfg.relay_mem, cfg.user_mem
    m1, m2, m2b = split_fractions(N, M1, M2, alpha, beta)
    r1 = r2 = 0.0
    if alpha > 0:
        r1 += alpha * K2 * rate_r(m1, K1)
        r2 += alpha * rate_r(m2, K2)
    if alpha < 1:
        r1 += (1 - alpha) * rate_r(m2b, K)
        r2 += (1 - alpha) * rate_r(m2b, K2)
    return RatePair(r1, r2)


def hcc_c_alpha_beta(cfg: NetworkConfig) -> tuple[float, float]:
    N, K2 = cfg.n_files, cfg.users_per_relay
    M1, M2 = cfg.relay_mem, cfg.user_mem
    total = M1 + M2 * K2
    if total < N:
        if total == 0:
            warnings.warn("Degenerate: M1 + M2*K2 = 0, using (0, 0)", DegenerateWarning,
                          stacklevel=2)
            return 0.0, 0.0
        return M1 / total, 0.0
    if M1 <= N / 4:
        return M1 / N, M1 / N
    return M1 / N, 0.25


def hcc_c_delay(cfg: NetworkConfig) -> float:
    return hcc_c_rates(cfg, *hcc_c_alpha_beta(cfg)).sequential


def propose_components(cfg: NetworkConfig, alpha: float | None = None,
                       beta: float | None = None) -> ProposeComponents:
    """Rate components of the concurrent scheme for the split ``(alpha, beta)``.

    Defaults to ``cfg.alpha`` / ``cfg.beta``.  Cache fractions of the first
    subsystem are taken relative to its ``alpha*N`` library.
    """
    alpha = cfg.alpha if alpha is None else alpha
    beta = cfg.beta if beta is None else beta
    _check_split(alpha, beta)
    N, K1, K2, K = cfg.n_files, cfg.n_relays, cfg.users_per_relay, cfg.n_users
    M1, M2 = cfg.relay_mem, cfg.user_mem

    m1, m2, m2b = split_fractions(N, M1, M2, alpha, beta)
    rs1 = rs2 = rs3 = re = rs2_full = 0.0
    if alpha > 0:
        miss1 = (1 - m1) ** K1
        r_local = rate_r(m2, K2)
        rs1 = alpha * (rate_r(m1, K1) - K1 * miss1) * r_local
        rs1 = max(rs1, 0.0)  # rounding near m1 -> 0
        rs2 = alpha * miss1 * rate_r(m2, K)
        rs3 = alpha * m1 * r_local
        re = alpha * miss1 * (1 - m2) ** K2 * rate_r(m2, (K1 - 1) * K2)
        rs2_full = alpha * (1 - min(M1 / N, 1.0)) ** K1 * rate_r(m2, K)
    r_pp = 0.0
    if alpha < 1:
        r_pp = (1 - alpha) * rate_r(m2b, K)
    r_p = rs1 + rs2 + max(rs3 - re, 0.0)
    return ProposeComponents(rs1, rs2, rs3, re, r_p, r_pp, rs2_full)


def propose_delay(cfg: NetworkConfig, alpha: float | None = None,
                  beta: float | None = None) -> float:
    return propose_components(cfg, alpha, beta).delay


def optimize_propose(cfg: NetworkConfig, grid_steps: int = 101) -> tuple[float, float, float]:
    """Grid search over ``(alpha, beta)`` followed by one 10x finer local pass.

    Ties go to the smaller alpha, then the smaller beta.
    """
    if grid_steps < 2:
        raise ValueError("grid_steps must be at least 2")
    h = 1.0 / (grid_steps - 1)
    axis = [k * h for k in range(grid_steps)]
    axis[-1] = 1.0
    best = _scan(cfg, axis, axis, None)
    a0, b0 = best[0], best[1]
    fine = h / 10
    a_axis = _local_axis(a0, h, fine)
    b_axis = _local_axis(b0, h, fine)
    best = _scan(cfg, a_axis, b_axis, best)
    return best


def _local_axis(center: float, half: float, step: float) -> list[float]:
    pts = []
    for k in range(-10, 11):
        x = center + k * step
        if -1e-12 <= x <= 1 + 1e-12:
            pts.append(min(max(x, 0.0), 1.0))
    return sorted(set(pts))


def _scan(cfg, a_axis, b_axis, best):
    # strict improvement beyond rounding noise keeps the earliest (smallest) point
    candidates = [] if best is None else [best]
    for a in a_axis:
        for b in b_axis:
            candidates.append((a, b, propose_delay(cfg, a, b)))
    candidates.sort(key=lambda c: (c[0], c[1]))
    out = None
    for c in candidates:
        if out is None or c[2] < out[2] - 1e-12:
            out = c
    return out


def two_relay_delay(cfg: NetworkConfig) -> float:
    """Concurrent-scheme delay for two relays at ``alpha = beta = 1``.

    The plateau condition compares the relay-resident load with the idle
    time during redundant server symbols; with ``K2`` users per relay the
    user-miss factor is ``(1 - M2/N)**K2``.
    """
    if cfg.n_relays != 2:
        raise NotTwoRelay(f"K1={cfg.n_relays}, need K1=2")
    N, K2 = cfg.n_files, cfg.users_per_relay
    x, m2 = min(cfg.relay_mem / N, 1.0), min(cfg.user_mem / N, 1.0)
    if x >= (1 - x) ** 2 * (1 - m2) ** K2:
        return rate_r(m2, K2)
    return x * (1 - x) * rate_r(m2, K2) + (1 - x) ** 2 * rate_r(m2, 2 * K2)


def m1_threshold(m2: float, k1: int = 2, k2: int = 2) -> float:
    """Smallest relay cache fraction ``x`` with ``x >= (1-x)**2 * (1-m2)**k2``.

    Beyond it the two-relay delay no longer depends on the relay cache.
    """
    if k1 != 2:
        raise NotTwoRelay(f"k1={k1}, the threshold is defined for two relays")
    if not 0.0 <= m2 <= 1.0:
        raise DomainError(f"m2={m2!r} outside [0, 1]")
    c = (1 - m2) ** k2
    if c == 0.0:
        return 0.0
    # root of c*x^2 - (2c+1)*x + c in [0, 1], written to avoid cancellation
    x = 2 * c / ((2 * c + 1) + math.sqrt(4 * c + 1))
    xb = _bisect_threshold(c)
    if abs(x - xb) > 1e-12:
        raise ArithmeticError(f"threshold mismatch: closed form {x} vs bisection {xb}")
    return x


def _bisect_threshold(c: float) -> float:
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid >= (1 - mid) ** 2 * c:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return hi


def lower_bound(cfg: NetworkConfig) -> float:
    """Cut-set lower bound on the optimal delay, clamped at 0."""
    N, K1, K2 = cfg.n_files, cfg.n_relays, cfg.users_per_relay
    M1, M2 = cfg.relay_mem, cfg.user_mem
    best = 0.0
    for s1 in range(1, K1 + 1):
        for s2 in range(1, K2 + 1):
            d = N // (s1 * s2)
            if d == 0:
                continue
            best = max(best, s1 * s2 - (s1 * M1 + s1 + s2 * M2) / d)
    for s in range(1, K2 + 1):
        d = N // s
        if d == 0:
            continue
        best = max(best, s - s * M2 / d)
    return best


def regime(cfg: NetworkConfig) -> str:
    N, K2 = cfg.n_files, cfg.users_per_relay
    M1, M2 = cfg.relay_mem, cfg.user_mem
    if M1 + M2 * K2 < N:
        return "II"
    return "I" if M1 <= N / 4 else "III"


def gap_report(cfg: NetworkConfig) -> GapReport:
    """Guaranteed improvement over HCC-C in the config's regime.

    Both schemes are evaluated at the split HCC-C picks for that regime.
    """
    N, K2 = cfg.n_files, cfg.users_per_relay
    M1, M2 = cfg.relay_mem, cfg.user_mem
    reg = regime(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        alpha, beta = hcc_c_alpha_beta(cfg)
    if reg == "I":
        gap = (1 - M1 / N) * rate_r(min(M2 / N, 1.0), K2)
    elif reg == "II":
        total = M1 + M2 * K2
        gap = 0.0 if total == 0 else M2 * K2 / total * rate_r(total / (N * K2), K2)
    else:
        gap = 0.0 if M1 >= N else (1 - M1 / N) * rate_r(_fraction(3 * M2, 4 * (N - M1)), K2)
    return GapReport(
        regime=reg,
        guaranteed_gap=gap,
        hcc_delay=hcc_c_rates(cfg, alpha, beta).sequential,
        propose_delay=propose_delay(cfg, alpha, beta),
        alpha=alpha,
        beta=beta,
    )


def pipeline_delay(cfg: NetworkConfig) -> float:
    return rate_r(min(cfg.user_mem / cfg.n_files, 1.0), cfg.n_users)
