"""Deterministic discrete-event simulation of a heterogeneous network.

Links have a baseline bandwidth and, per iteration, a probabilistic
slowdown to baseline/divisor (default 10).  Every bandwidth draw is a
pure function of (seed, iteration, link key), so identical
configurations replay identical event traces bit for bit.

Transfer time is payload-driven: message sizes come from the bit-exact
serialization widths of their ciphertext payloads.  There is no packet
or TCP modeling; an optional constant per-message latency exists and
defaults to zero.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .paillier import KeyPair, PrivateKey

#: Fixed envelope overhead per message (type, src, dst, iteration tags).
HEADER_BYTES = 16


class MessageSecurityError(TypeError):
    """A private key was placed into a protocol message payload."""


def _contains_private_key(obj: Any, depth: int = 0) -> bool:
    if depth > 6:
        return False
    if isinstance(obj, (PrivateKey, KeyPair)):
        return True
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return any(
            _contains_private_key(getattr(obj, f.name), depth + 1)
            for f in dataclasses.fields(obj)
        )
    if isinstance(obj, dict):
        return any(_contains_private_key(v, depth + 1) for v in obj.values())
    if isinstance(obj, (list, tuple, set)):
        return any(_contains_private_key(v, depth + 1) for v in obj)
    return False


@dataclass(frozen=True)
class ProtocolMessage:
    """Typed, sized envelope routed through the simulated network."""

    msg_type: str
    src: str
    dst: str
    iteration: int
    payload: Any

    def __post_init__(self):
        if _contains_private_key(self.payload):
            raise MessageSecurityError("refusing to assemble a message containing a private key")

    @property
    def size_bytes(self) -> int:
        if self.payload is None:
            return HEADER_BYTES
        return HEADER_BYTES + self.payload.serialized_size()


@dataclass(frozen=True)
class SimEvent:
    """A message delivery (or a bare wake-up) at a simulated instant."""

    deliver_at: float
    seq: int
    msg: Optional[ProtocolMessage]
    src: str
    dst: str


@dataclass
class LinkModel:
    """Per-link bandwidth with probabilistic slowdown.

    ``scope`` selects how draws are keyed: ``"link"`` draws per
    unordered endpoint pair, ``"party"`` draws once per fluctuating
    party (the non-guest, non-arbiter endpoint) so all of that party's
    links slow down together.
    """

    baseline_bandwidth: float = 10e6  # bits per second
    slowdown_prob: float = 0.0
    bottleneck_divisor: float = 10.0
    latency_s: float = 0.0
    scope: str = "link"

    def __post_init__(self):
        if not 0 <= self.slowdown_prob <= 1:
            raise ValueError("slowdown_prob must be in [0, 1]")
        if self.bottleneck_divisor <= 1:
            raise ValueError("bottleneck_divisor must be > 1")
        if self.scope not in ("link", "party"):
            raise ValueError("scope must be 'link' or 'party'")

    def link_key(self, src: str, dst: str) -> str:
        if self.scope == "party":
            movable = [p for p in (src, dst) if p not in ("guest", "arbiter")]
            if len(movable) == 1:
                return movable[0]
        return "|".join(sorted((src, dst)))

    def bandwidth(self, seed: int, iteration: int, src: str, dst: str) -> float:
        """Deterministic per-iteration draw for the link carrying src->dst."""
        if self.slowdown_prob == 0.0:
            return self.baseline_bandwidth
        u = _unit_draw(seed, iteration, self.link_key(src, dst))
        if u < self.slowdown_prob:
            return self.baseline_bandwidth / self.bottleneck_divisor
        return self.baseline_bandwidth

    def transfer_time(self, size_bytes: int, seed: int, iteration: int,
                      src: str, dst: str) -> float:
        bw = self.bandwidth(seed, iteration, src, dst)
        return self.latency_s + size_bytes * 8 / bw


def _unit_draw(seed: int, iteration: int, key: str) -> float:
    """Uniform [0, 1) value derived from a stable hash of the inputs."""
    digest = hashlib.sha256(f"{seed}|{iteration}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


@dataclass
class SimClock:
    """Simulated time plus per-party busy-until markers."""

    now: float = 0.0
    busy_until: dict[str, float] = field(default_factory=dict)

    def advance(self, t: float) -> None:
        if t < self.now:
            raise ValueError("simulated clock cannot move backwards")
        self.now = t

    def busy(self, party: str) -> float:
        return self.busy_until.get(party, 0.0)

    def occupy(self, party: str, until: float) -> None:
        self.busy_until[party] = max(self.busy(party), until)


class Network:
    """Event queue, clock, and trace for one simulated run."""

    def __init__(self, link: LinkModel, seed: int):
        self.link = link
        self.seed = seed
        self.clock = SimClock()
        self._heap: list[tuple[float, int, SimEvent]] = []
        self._seq = 0
        self.trace: list[dict] = []
        self.total_bytes = 0
        self.total_messages = 0

    def send(self, msg: ProtocolMessage, at: float) -> SimEvent:
        """Schedule delivery; transfer time comes from the serialized size."""
        duration = self.link.transfer_time(msg.size_bytes, self.seed, msg.iteration,
                                           msg.src, msg.dst)
        event = SimEvent(deliver_at=at + duration, seq=self._seq, msg=msg,
                         src=msg.src, dst=msg.dst)
        self._push(event)
        self.total_bytes += msg.size_bytes
        self.total_messages += 1
        self.trace.append({
            "type": msg.msg_type,
            "src": msg.src,
            "dst": msg.dst,
            "iteration": msg.iteration,
            "size_bytes": msg.size_bytes,
            "sent_at": at,
            "delivered_at": event.deliver_at,
        })
        return event

    def wake(self, party: str, at: float) -> SimEvent:
        """Schedule a bare wake-up callback (no message, no transfer)."""
        event = SimEvent(deliver_at=at, seq=self._seq, msg=None, src=party, dst=party)
        self._push(event)
        return event

    def _push(self, event: SimEvent) -> None:
        heapq.heappush(self._heap, (event.deliver_at, event.seq, event))
        self._seq += 1

    def __bool__(self) -> bool:
        return bool(self._heap)

    def pop_group(self) -> tuple[float, list[SimEvent]]:
        """All events sharing the earliest timestamp, in sequence order.

        Grouping lets simultaneous deliveries be observed together, so
        a quorum decision at time t sees every share that arrived at t.
        """
        if not self._heap:
            raise IndexError("event queue is empty")
        t = self._heap[0][0]
        group = []
        while self._heap and self._heap[0][0] == t:
            group.append(heapq.heappop(self._heap)[2])
        self.clock.advance(t)
        return t, group

    def export_trace(self, path: str) -> None:
        """One JSON record per message: src, dst, size, send/deliver times."""
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def round_comm_time(K: int, beta: int, slowdown_prob: float,
                    bottleneck_divisor: float = 10.0, payload_bits: float = 10e6,
                    baseline_bandwidth: float = 10e6, rounds: int = 10_000,
                    seed: int = 0) -> list[float]:
    """Per-round guest wait for the first K - beta host transfers.

    Each round draws one bandwidth per host link and the guest waits
    for the (K - beta)-th fastest transfer of one forward-share
    payload.  With payload_bits == baseline_bandwidth the result is in
    fast-transfer time units.
    """
    if not 0 <= beta < K:
        raise ValueError("require 0 <= beta < K")
    link = LinkModel(baseline_bandwidth=baseline_bandwidth, slowdown_prob=slowdown_prob,
                     bottleneck_divisor=bottleneck_divisor)
    waits = []
    for r in range(rounds):
        times = sorted(
            payload_bits / link.bandwidth(seed, r, f"host_{k + 1}", "guest")
            for k in range(K)
        )
        waits.append(times[K - beta - 1])
    return waits


def expected_round_wait(K: int, beta: int, slowdown_prob: float,
                        bottleneck_divisor: float = 10.0) -> float:
    """Exact expectation of the (K - beta)-th order statistic.

    With s slow links out of K, the wait is fast time unless s > beta.
    Summing binomial probabilities gives the closed form used by the
    comparison reports.
    """
    from math import comb

    p = slowdown_prob
    expectation = 0.0
    for s in range(K + 1):
        prob = comb(K, s) * p**s * (1 - p) ** (K - s)
        wait = 1.0 if s <= beta else bottleneck_divisor
        expectation += prob * wait
    return expectation
