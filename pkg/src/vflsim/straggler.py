"""Backup-worker straggler mitigation with bounded staleness.

The guest stops waiting once the first K - beta host shares of a round
have arrived and fills the missing slots from a cache of each host's
most recent share.  Staleness (iterations since the cached share was
fresh) is bounded: a host whose cache entry has reached the maximum
age forces the round to block on that host instead, which is the
synchronous fallback that keeps the stale-synchronous discipline.

A "drop" mode exists purely as a comparison baseline: missing shares
are omitted from the residual entirely rather than compensated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

if TYPE_CHECKING:  # pragma: no cover
    from .protocol import ForwardShare, ResidualShare

logger = logging.getLogger(__name__)

MODE_STALE = "stale"
MODE_DROP = "drop"
DEFAULT_MAX_STALENESS = 2


@dataclass
class CachedShare:
    share: "ForwardShare"
    iteration: int


@dataclass
class BackupCache:
    """Latest forward share per host, with staleness bookkeeping."""

    entries: dict[str, CachedShare] = field(default_factory=dict)

    def update(self, host_id: str, share: "ForwardShare", iteration: int) -> None:
        """Keep the newest share per host (late arrivals still count)."""
        current = self.entries.get(host_id)
        if current is None or iteration > current.iteration:
            self.entries[host_id] = CachedShare(share=share, iteration=iteration)

    def age(self, host_id: str, current_iteration: int) -> Optional[int]:
        """Iterations since the cached share was fresh; None if empty."""
        entry = self.entries.get(host_id)
        if entry is None:
            return None
        return current_iteration - entry.iteration

    def get(self, host_id: str) -> CachedShare:
        return self.entries[host_id]


@dataclass
class ReceiveLog:
    """What one round's share collection actually used."""

    iteration: int
    arrival_order: list[str] = field(default_factory=list)
    compensated: list[str] = field(default_factory=list)
    blocked_on: list[str] = field(default_factory=list)
    staleness_ages: dict[str, int] = field(default_factory=dict)

    @property
    def t(self) -> int:
        """Number of fresh shares used."""
        return len(self.arrival_order)


@dataclass
class QuorumDecision:
    ready: bool
    fresh_hosts: list[str] = field(default_factory=list)
    compensated: list[str] = field(default_factory=list)
    blocked_on: list[str] = field(default_factory=list)
    ages: dict[str, int] = field(default_factory=dict)


def staleness_guard(ages: dict[str, int], max_age: int) -> list[str]:
    """Hosts whose compensation would violate the staleness bound.

    A host at age == max_age (or beyond, or with no cache entry at
    all, signalled by a negative age) must be waited for.
    """
    if max_age < 1:
        raise ValueError("max_age must be >= 1")
    return sorted(h for h, age in ages.items() if age < 0 or age >= max_age)


def evaluate_quorum(arrived: Sequence[str], all_hosts: Sequence[str], beta: int,
                    cache: BackupCache, iteration: int, max_age: int,
                    mode: str = MODE_STALE, batch_period: int = 1) -> QuorumDecision:
    """Decide whether the guest may proceed with the shares seen so far.

    ``arrived`` lists hosts whose round-``iteration`` share has been
    delivered, in arrival order.  With backup enabled the guest
    proceeds once K - beta fresh shares are in, compensating the rest
    from the cache -- every fresh share that made it by decision time
    is used fresh.  Iteration 1 has no cache, so callers pass beta=0
    there.

    ``batch_period`` is the mini-batch cycle length: a cached share can
    only stand in when it was computed on the same samples as the
    current round, i.e. when its age is a multiple of the period.
    Incompatible cache entries force a wait, exactly like the
    staleness cap.
    """
    K = len(all_hosts)
    if not 0 <= beta < max(K, 1):
        raise ValueError(f"require 0 <= beta < K (beta={beta}, K={K})")
    if mode not in (MODE_STALE, MODE_DROP):
        raise ValueError(f"unknown backup mode {mode!r}")
    fresh = list(arrived)
    missing = [h for h in all_hosts if h not in fresh]
    if not missing:
        return QuorumDecision(ready=True, fresh_hosts=fresh)
    if len(fresh) < K - beta:
        return QuorumDecision(ready=False, fresh_hosts=fresh)
    if mode == MODE_DROP:
        return QuorumDecision(ready=True, fresh_hosts=fresh, compensated=[])
    ages = {}
    for h in missing:
        age = cache.age(h, iteration)
        ages[h] = -1 if age is None else age
    blocked = set(staleness_guard(ages, max_age))
    blocked.update(h for h, a in ages.items() if a > 0 and a % batch_period != 0)
    if blocked:
        return QuorumDecision(ready=False, fresh_hosts=fresh, blocked_on=sorted(blocked),
                              ages={h: a for h, a in ages.items() if a >= 0})
    return QuorumDecision(ready=True, fresh_hosts=fresh, compensated=sorted(missing),
                          ages=ages)


def collect_shares(decision: QuorumDecision, fresh_shares: dict[str, "ForwardShare"],
                   cache: BackupCache, iteration: int) -> tuple[list["ForwardShare"], ReceiveLog]:
    """Materialize the share slots for a ready quorum decision.

    Fresh shares come first in arrival order, then cached stale shares
    for the compensated hosts.  Raises if compensation is requested for
    a host with an empty cache slot (only possible at iteration 1,
    where callers must fall back to a full wait).
    """
    if not decision.ready:
        raise ValueError("cannot collect shares from a non-ready decision")
    shares = [fresh_shares[h] for h in decision.fresh_hosts]
    log = ReceiveLog(iteration=iteration, arrival_order=list(decision.fresh_hosts),
                     compensated=list(decision.compensated),
                     blocked_on=list(decision.blocked_on))
    for h in decision.compensated:
        if h not in cache.entries:
            raise LookupError(f"no cached share for host {h!r}; full wait required")
        entry = cache.get(h)
        shares.append(entry.share)
        log.staleness_ages[h] = iteration - entry.iteration
    return shares, log


def compensated_residual(fresh: Sequence["ForwardShare"], stale: Sequence["ForwardShare"],
                         guest_u, y, rule: str, pk, rng=None,
                         iteration: int = 1) -> "ResidualShare":
    """Residual from a mix of fresh and stale shares.

    Identical math to the vanilla residual; the stale shares simply
    stand in for the hosts that were not waited for.  Thin wrapper so
    the mixing contract is testable on its own.
    """
    from .protocol import guest_residual  # local import avoids a module cycle

    return guest_residual(list(fresh) + list(stale), guest_u, y, rule=rule, pk=pk,
                          rng=rng, iteration=iteration, allow_stale=True)


def warn_liveness(host_id: str, iteration: int, warnings_sink: list[str]) -> None:
    """Record (and log) that a round is blocking on an at-cap host."""
    message = (f"iteration {iteration}: blocking on host {host_id!r} whose backup "
               f"reached the staleness cap; host may be unreachable")
    warnings_sink.append(message)
    logger.warning(message)
