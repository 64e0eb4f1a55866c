"""Guest/Host/Arbiter state machines and the simulated training loop.

One training round:

1. every data party computes its local forward scores u_i = theta . x_i
   in plaintext, encrypts them, and the hosts send them to the guest;
2. the guest aggregates an encrypted per-sample residual [[d_i]]
   (waiting only for the first K - beta host shares when backup
   workers are enabled) and broadcasts it;
3. every party computes its encrypted gradient X^T [[d]] + [[lambda
   theta]] and sends it to the arbiter;
4. the arbiter, sole holder of the private key, decrypts each gradient
   and returns it to its owning party only;
5. parties apply theta <- theta - mu * g (optionally rmsprop on the
   decrypted gradient).

Everything is driven through the deterministic event simulation in
:mod:`vflsim.netsim`; identical (config, seed) pairs replay identical
traces.

Loss monitoring: the tracked encrypted loss splits into L_A + L_B +
L_AB.  Paillier cannot multiply two ciphertexts, so the cross-host
part of L_A (the squares of summed host scores) is approximated by the
sum of per-host squares, each computed host-side in plaintext and sent
encrypted.  This is a monitoring surrogate only -- it is exact for
K <= 1 -- and gradients are exact regardless.  Derived ciphertexts are
not re-randomized before sending (fresh encryptions are); relationship
hiding between rounds is out of scope for the simulation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from random import Random
from typing import Optional, Sequence

import numpy as np

from . import compression, paillier
from .counters import count_as, use_counter
from .data import VerticalDataset
from .enc_linalg import (CipherVector, cv_add, cv_dot_plain, cv_scalar_mul,
                         encrypt_vector, encrypted_gradient_matvec)
from .metrics import CostModel, RunMetrics
from .netsim import LinkModel, Network, ProtocolMessage
from .paillier import Ciphertext, KeyPair, PrivateKey, PublicKey
from .straggler import (DEFAULT_MAX_STALENESS, MODE_DROP, MODE_STALE, BackupCache,
                        ReceiveLog, collect_shares, evaluate_quorum, warn_liveness)

RULE_LINEAR = "linear"
RULE_LOGISTIC_TAYLOR = "logistic_taylor"

OPTIMIZER_SGD = "sgd"
OPTIMIZER_RMSPROP = "rmsprop"

GUEST = "guest"
ARBITER = "arbiter"

MSG_SHARE = "forward_share"
MSG_RESIDUAL = "residual"
MSG_GRADIENT = "gradient"
MSG_PLAIN_GRADIENT = "decrypted_gradient"

_FLOAT_BYTES = 8


class ProtocolError(RuntimeError):
    """Configuration inconsistency or protocol contract violation."""


def host_id(k: int) -> str:
    return f"host_{k}"


# ---------------------------------------------------------------------------
# configuration and model state
# ---------------------------------------------------------------------------


@dataclass
class HyperParams:
    """Training knobs: step size, regularization, schedule, residual rule."""

    learning_rate: float = 0.05
    reg_lambda: float = 0.0
    max_iterations: int = 50
    batch_size: int = 1024
    residual_rule: str = RULE_LINEAR
    optimizer: str = OPTIMIZER_SGD

    def validate(self, m: int) -> None:
        if self.learning_rate <= 0:
            raise ProtocolError("learning_rate must be positive")
        if self.reg_lambda < 0:
            raise ProtocolError("reg_lambda must be non-negative")
        if self.max_iterations < 1:
            raise ProtocolError("max_iterations must be positive")
        if not 1 <= self.batch_size:
            raise ProtocolError("batch_size must be positive")
        if self.batch_size > m:
            raise ProtocolError(f"batch_size {self.batch_size} exceeds sample count {m}")
        if self.residual_rule not in (RULE_LINEAR, RULE_LOGISTIC_TAYLOR):
            raise ProtocolError(f"unknown residual rule {self.residual_rule!r}")
        if self.optimizer not in (OPTIMIZER_SGD, OPTIMIZER_RMSPROP):
            raise ProtocolError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ModelParams:
    """Per-party weight vector; changed only through apply_update."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ProtocolError("model parameters must be finite")
        object.__setattr__(self, "theta", theta)

    def __len__(self) -> int:
        return self.theta.shape[0]


def apply_update(params: ModelParams, gradient: np.ndarray,
                 learning_rate: float) -> ModelParams:
    """theta_{j+1} = theta_j - mu * gradient."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != params.theta.shape:
        raise ProtocolError(f"gradient shape {gradient.shape} does not match "
                            f"parameter shape {params.theta.shape}")
    if not np.all(np.isfinite(gradient)):
        raise ProtocolError("non-finite gradient")
    return ModelParams(params.theta - learning_rate * gradient)


@dataclass
class Optimizer:
    """Plaintext update rule applied to decrypted gradients."""

    kind: str = OPTIMIZER_SGD
    learning_rate: float = 0.05
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    _cache: Optional[np.ndarray] = field(default=None, repr=False)

    def step(self, params: ModelParams, gradient: np.ndarray) -> ModelParams:
        if self.kind == OPTIMIZER_SGD:
            return apply_update(params, gradient, self.learning_rate)
        gradient = np.asarray(gradient, dtype=float)
        if self._cache is None:
            self._cache = np.zeros_like(gradient)
        self._cache = self.rms_decay * self._cache + (1 - self.rms_decay) * gradient**2
        scaled = gradient / (np.sqrt(self._cache) + self.rms_epsilon)
        return apply_update(params, scaled, self.learning_rate)


@dataclass
class ProtocolConfig:
    """Topology and scheme switches for one simulated run."""

    num_hosts: int
    backup_workers: int = 0
    backup_mode: str = MODE_STALE
    max_staleness: int = DEFAULT_MAX_STALENESS
    pca_ratios: Optional[list[float]] = None  # guest first, then hosts; 1.0 = off
    key_bits: int = paillier.DEFAULT_KEY_BITS
    allow_small_keys: bool = False
    track_loss: bool = True
    plain_mode: bool = False
    seed: int = 0

    def validate(self, dataset: VerticalDataset) -> None:
        if self.num_hosts != dataset.num_hosts:
            raise ProtocolError(f"config expects {self.num_hosts} hosts, dataset has "
                                f"{dataset.num_hosts}")
        if self.num_hosts > 0 and not 0 <= self.backup_workers < self.num_hosts:
            raise ProtocolError("require 0 <= backup_workers < num_hosts")
        if self.num_hosts == 0 and self.backup_workers != 0:
            raise ProtocolError("backup workers require at least one host")
        if self.backup_mode not in (MODE_STALE, MODE_DROP):
            raise ProtocolError(f"unknown backup mode {self.backup_mode!r}")
        if self.max_staleness < 1:
            raise ProtocolError("max_staleness must be >= 1")
        if self.pca_ratios is not None:
            if len(self.pca_ratios) != dataset.num_hosts + 1:
                raise ProtocolError("pca_ratios must list guest plus every host")
            for r in self.pca_ratios:
                if not 0 < r <= 1:
                    raise ProtocolError(f"pca ratio {r} out of (0, 1]")


# ---------------------------------------------------------------------------
# wire payloads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardShare:
    """A party's encrypted forward scores for one round.

    ``u_sq_sum_enc`` (the encrypted batch sum of squared scores) rides
    along only when loss monitoring is on; it feeds the L_A surrogate.
    """

    party_id: str
    iteration: int
    u_enc: CipherVector
    theta_sq_enc: Ciphertext
    u_sq_sum_enc: Optional[Ciphertext] = None

    def serialized_size(self) -> int:
        per = paillier.ciphertext_size(self.u_enc.public_key)
        count = len(self.u_enc) + 1 + (1 if self.u_sq_sum_enc is not None else 0)
        return count * per


@dataclass(frozen=True)
class ResidualShare:
    iteration: int
    d_enc: CipherVector

    def serialized_size(self) -> int:
        return self.d_enc.serialized_size()


@dataclass(frozen=True)
class LossParts:
    """Encrypted loss decomposition L = L_A + L_B + L_AB."""

    l_a: Ciphertext
    l_b: Ciphertext
    l_ab: Ciphertext
    l_total: Ciphertext

    def serialized_size(self) -> int:
        return 4 * paillier.ciphertext_size(self.l_total.public_key)


@dataclass(frozen=True)
class GradientMessage:
    party_id: str
    iteration: int
    g_enc: CipherVector
    loss: Optional[LossParts] = None

    def serialized_size(self) -> int:
        size = self.g_enc.serialized_size()
        if self.loss is not None:
            size += self.loss.serialized_size()
        return size


@dataclass(frozen=True)
class PlainGradient:
    """Arbiter reply: one party's decrypted gradient (guest also gets loss)."""

    party_id: str
    iteration: int
    gradient: np.ndarray
    loss_value: Optional[float] = None

    def serialized_size(self) -> int:
        size = len(self.gradient) * _FLOAT_BYTES
        if self.loss_value is not None:
            size += _FLOAT_BYTES
        return size


@dataclass(frozen=True)
class PlainShare:
    """Plain-mode stand-in for ForwardShare (no encryption)."""

    party_id: str
    iteration: int
    u: np.ndarray
    theta_sq: float
    u_sq_sum: float = 0.0

    def serialized_size(self) -> int:
        return (len(self.u) + 2) * _FLOAT_BYTES


@dataclass(frozen=True)
class PlainVector:
    values: np.ndarray

    def serialized_size(self) -> int:
        return len(self.values) * _FLOAT_BYTES


# ---------------------------------------------------------------------------
# round operations (unit-testable, also used by the simulation)
# ---------------------------------------------------------------------------


def forward(pk: PublicKey, party_id: str, iteration: int, X_batch: np.ndarray,
            params: ModelParams, rng: Optional[Random] = None,
            with_loss_share: bool = False) -> ForwardShare:
    """Local scores u_i = theta . x_i, computed plain then encrypted.

    Costs exactly ``m_batch + 1`` encryptions (one extra when the loss
    share is requested).
    """
    X_batch = np.asarray(X_batch, dtype=float)
    if X_batch.ndim != 2 or X_batch.shape[1] != len(params):
        raise ProtocolError(f"batch shape {X_batch.shape} does not match parameter "
                            f"count {len(params)}")
    u = X_batch @ params.theta
    u_enc = encrypt_vector(pk, u, rng)
    theta_sq_enc = paillier.encrypt(pk, float(params.theta @ params.theta), rng)
    u_sq = None
    if with_loss_share:
        u_sq = paillier.encrypt(pk, float(u @ u), rng)
    return ForwardShare(party_id=party_id, iteration=iteration, u_enc=u_enc,
                        theta_sq_enc=theta_sq_enc, u_sq_sum_enc=u_sq)


def normalize_labels(y: np.ndarray, rule: str) -> np.ndarray:
    """Map labels to the encoding the residual rule expects.

    The linear rule takes labels as-is.  The logistic rule needs
    -1/+1; 0/1 labels are converted, anything else is rejected.
    """
    y = np.asarray(y, dtype=float)
    if rule == RULE_LINEAR:
        return y
    values = set(np.unique(y))
    if values <= {0.0, 1.0}:
        return 2.0 * y - 1.0
    if values <= {-1.0, 1.0}:
        return y
    raise ProtocolError(f"logistic labels must be 0/1 or -1/+1, got values {sorted(values)}")


def residual_prep(guest_u: np.ndarray, y: np.ndarray, rule: str) -> np.ndarray:
    """The guest's plaintext contribution to the residual.

    linear:          d_i = sum_k u_i^k + (u_i^B - y_i)
    logistic_taylor: d_i = 0.25 * (sum_k u_i^k + u_i^B) - 0.5 * y_i,
                     labels in {-1, +1}
    """
    if rule == RULE_LINEAR:
        return guest_u - y
    if rule == RULE_LOGISTIC_TAYLOR:
        values = set(np.unique(y))
        if not values <= {-1.0, 1.0}:
            raise ProtocolError("logistic_taylor requires labels in {-1, +1}")
        return 0.25 * guest_u - 0.5 * y
    raise ProtocolError(f"unknown residual rule {rule!r}")


def residual_from_prepared(host_shares: Sequence[ForwardShare], prep_enc: CipherVector,
                           rule: str, iteration: int) -> ResidualShare:
    """Combine host shares with the guest's encrypted prep vector."""
    for share in host_shares:
        if len(share.u_enc) != len(prep_enc):
            raise ProtocolError("share batch length mismatch")
    if not host_shares:
        return ResidualShare(iteration=iteration, d_enc=prep_enc)
    total = host_shares[0].u_enc
    for share in host_shares[1:]:
        total = cv_add(total, share.u_enc)
    if rule == RULE_LOGISTIC_TAYLOR:
        total = cv_scalar_mul(total, 0.25)
    return ResidualShare(iteration=iteration, d_enc=cv_add(total, prep_enc))


def guest_residual(host_shares: Sequence[ForwardShare], guest_u: np.ndarray,
                   y: np.ndarray, rule: str, pk: PublicKey,
                   rng: Optional[Random] = None, iteration: int = 1,
                   expected_hosts: Optional[int] = None,
                   backup_workers: int = 0, allow_stale: bool = False) -> ResidualShare:
    """Aggregate the encrypted per-sample residual [[d_i]].

    ``expected_hosts`` enforces the share-count precondition: exactly K
    shares without backup, at least K - beta with backup.  Mixed
    iteration tags are a contract violation unless ``allow_stale`` is
    set (the compensated path mixes ages on purpose).
    """
    if expected_hosts is not None:
        got = len(host_shares)
        if backup_workers == 0 and got != expected_hosts:
            raise ProtocolError(f"expected {expected_hosts} host shares, got {got}")
        if got < expected_hosts - backup_workers:
            raise ProtocolError(f"need at least {expected_hosts - backup_workers} "
                                f"host shares, got {got}")
    iterations = {s.iteration for s in host_shares}
    if len(iterations) > 1 and not allow_stale:
        raise ProtocolError(f"shares from mixed iterations {sorted(iterations)}")
    prep = residual_prep(np.asarray(guest_u, dtype=float), np.asarray(y, dtype=float), rule)
    prep_enc = encrypt_vector(pk, prep, rng)
    return residual_from_prepared(host_shares, prep_enc, rule, iteration)


def encrypted_loss(host_shares: Sequence[ForwardShare], guest_u: np.ndarray,
                   y: np.ndarray, guest_theta_sq: float, reg_lambda: float,
                   pk: PublicKey, rng: Optional[Random] = None) -> LossParts:
    """Encrypted squared-error loss decomposition (monitoring).

    L_B is computed plaintext at the guest and encrypted whole.  L_AB
    is exact: 2 * sum_i sum_k [[u_i^k]] * (u_i^B - y_i) via scalar
    multiplications.  L_A uses the per-host squared-score sums from the
    forward shares; cross-host products are not representable under
    additive encryption, so for K > 1 this term is a documented
    surrogate (exact for K <= 1).
    """
    guest_u = np.asarray(guest_u, dtype=float)
    y = np.asarray(y, dtype=float)
    err = guest_u - y
    l_b_plain = float(err @ err + reg_lambda / 2 * guest_theta_sq)
    l_b = paillier.encrypt(pk, l_b_plain, rng)
    if host_shares:
        for share in host_shares:
            if share.u_sq_sum_enc is None:
                raise ProtocolError("forward share lacks the loss component")
        u_sq_total = host_shares[0].u_sq_sum_enc
        theta_sq_total = host_shares[0].theta_sq_enc
        for share in host_shares[1:]:
            u_sq_total = paillier.add(u_sq_total, share.u_sq_sum_enc)
            theta_sq_total = paillier.add(theta_sq_total, share.theta_sq_enc)
        l_a = paillier.add(u_sq_total, paillier.scalar_mul(theta_sq_total, reg_lambda / 2))
        l_ab = cv_dot_plain(host_shares[0].u_enc, 2.0 * err)
        for share in host_shares[1:]:
            l_ab = paillier.add(l_ab, cv_dot_plain(share.u_enc, 2.0 * err))
    else:
        l_a = paillier.encrypt(pk, 0.0, rng)
        l_ab = paillier.encrypt(pk, 0.0, rng)
    l_total = paillier.add(paillier.add(l_a, l_b), l_ab)
    return LossParts(l_a=l_a, l_b=l_b, l_ab=l_ab, l_total=l_total)


def party_gradient(d: ResidualShare, X_batch: np.ndarray, params: ModelParams,
                   reg_lambda: float, pk: PublicKey, party_id: str,
                   rng: Optional[Random] = None) -> GradientMessage:
    """[[grad]] = X^T [[d]] + [[lambda * theta]], counted on the gradient path."""
    X_batch = np.asarray(X_batch, dtype=float)
    if X_batch.shape != (len(d.d_enc), len(params)):
        raise ProtocolError(f"batch shape {X_batch.shape} does not match residual "
                            f"length {len(d.d_enc)} and parameter count {len(params)}")
    with count_as("gradient"):
        g_enc = encrypted_gradient_matvec(d.d_enc, X_batch)
        reg_enc = encrypt_vector(pk, reg_lambda * params.theta, rng)
        g_enc = cv_add(g_enc, reg_enc)
    return GradientMessage(party_id=party_id, iteration=d.iteration, g_enc=g_enc)


def arbiter_decrypt(sk: PrivateKey, messages: Sequence[GradientMessage]
                    ) -> tuple[dict[str, np.ndarray], Optional[float]]:
    """Decrypt each party's gradient (and the tracked loss, if attached).

    Each party receives only its own vector; the loss costs one extra
    decryption.
    """
    gradients: dict[str, np.ndarray] = {}
    loss_value: Optional[float] = None
    for msg in messages:
        if msg.party_id in gradients:
            raise ProtocolError(f"duplicate gradient from {msg.party_id!r}")
        gradients[msg.party_id] = np.array(
            [paillier.decrypt(sk, c) for c in msg.g_enc.elements], dtype=float
        )
        if msg.loss is not None:
            loss_value = float(paillier.decrypt(sk, msg.loss.l_total))
    return gradients, loss_value


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with ties averaged (Mann-Whitney form)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    positive = labels == np.max(labels)
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0 or len(set(np.unique(labels))) < 2:
        raise ValueError("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2 + 1
        i = j + 1
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# objective used for monitoring and oracles
# ---------------------------------------------------------------------------


def plaintext_objective(scores: np.ndarray, y: np.ndarray, rule: str,
                        theta_sq_total: float, reg_lambda: float) -> float:
    """Training objective whose exact gradient is the protocol's residual path.

    linear:          1/2 sum (s - y)^2        + lambda/2 ||theta||^2
    logistic_taylor: sum log2 - y s / 2 + s^2 / 8  + lambda/2 ||theta||^2
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    reg = reg_lambda / 2 * theta_sq_total
    if rule == RULE_LINEAR:
        return float(0.5 * np.sum((scores - y) ** 2) + reg)
    return float(np.sum(math.log(2) - 0.5 * y * scores + 0.125 * scores**2) + reg)


# ---------------------------------------------------------------------------
# party state machines
# ---------------------------------------------------------------------------


@dataclass
class PartyState:
    """Data-plane state shared by guest and hosts."""

    party_id: str
    X: np.ndarray
    params: ModelParams
    optimizer: Optimizer
    plan: Optional[compression.CompressionPlan] = None
    Z: Optional[np.ndarray] = None          # compressed X, memoized
    params_c: Optional[np.ndarray] = None   # compressed theta for this round
    round: int = 0
    done: bool = False
    gradient_history: list[np.ndarray] = field(default_factory=list)
    theta_history: list[np.ndarray] = field(default_factory=list)

    def active_matrix(self) -> np.ndarray:
        return self.Z if self.plan is not None else self.X

    def active_params(self) -> np.ndarray:
        return self.params_c if self.plan is not None else self.params.theta

    def refresh_compression_plan(self) -> Optional[compression.CompressionPlan]:
        """Per-round plan refresh; memoized because the local data is static."""
        if self.plan is not None:
            self.params_c = compression.compress_params(self.plan, self.params.theta)
        return self.plan

    def receive_gradient(self, pg: PlainGradient) -> np.ndarray:
        """Validate routing, decompress, record; returns the full gradient."""
        if pg.party_id != self.party_id:
            raise ProtocolError(f"gradient for {pg.party_id!r} routed to "
                                f"{self.party_id!r}")
        if self.plan is not None:
            full = compression.decompress_gradient(self.plan, pg.gradient)
        else:
            full = np.asarray(pg.gradient, dtype=float)
        self.gradient_history.append(full.copy())
        return full

    def update(self, gradient: np.ndarray) -> None:
        self.params = self.optimizer.step(self.params, gradient)
        self.theta_history.append(self.params.theta.copy())
        self.refresh_compression_plan()


def attach_compression(party: PartyState, plan: compression.CompressionPlan) -> PartyState:
    """Route a party's forward and gradient paths through a PCA plan."""
    if plan.n != party.X.shape[1]:
        raise ProtocolError(f"plan is {plan.k}x{plan.n} but party has "
                            f"{party.X.shape[1]} features")
    party.plan = plan
    party.Z = compression.compress_data(plan, party.X)
    party.refresh_compression_plan()
    return party


@dataclass
class GuestRoundState:
    """Guest-side scratch state for the round in flight."""

    iteration: int
    prep_done: bool = False
    proceeded: bool = False
    guest_u: Optional[np.ndarray] = None
    prep_enc: Optional[CipherVector] = None
    prep_plain: Optional[np.ndarray] = None
    arrivals: list[str] = field(default_factory=list)
    fresh_shares: dict[str, ForwardShare] = field(default_factory=dict)
    blocked_warned: set[str] = field(default_factory=set)


# ---------------------------------------------------------------------------
# training result
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    guest: PartyState
    hosts: list[PartyState]
    metrics: RunMetrics
    receive_logs: list[ReceiveLog]
    network: Network

    def all_parties(self) -> list[PartyState]:
        return [self.guest] + list(self.hosts)

    def full_scores(self, dataset: VerticalDataset) -> np.ndarray:
        scores = dataset.guest_X @ self.guest.params.theta
        for host, X in zip(self.hosts, dataset.host_Xs):
            scores = scores + X @ host.params.theta
        return scores


def _derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def batch_indices(m: int, batch_size: int, iteration: int, seed: int) -> np.ndarray:
    """Contiguous batches over one seed-fixed shuffle, cycling per round.

    All parties derive the identical schedule from the run seed, which
    is what keeps the feature partitions row-aligned per batch.
    """
    perm = np.random.default_rng(_derive_seed(seed, "batch")).permutation(m)
    n_batches = max(1, math.ceil(m / batch_size))
    b = (iteration - 1) % n_batches
    return perm[b * batch_size: min((b + 1) * batch_size, m)]


# ---------------------------------------------------------------------------
# the simulated run
# ---------------------------------------------------------------------------


class _Simulation:
    def __init__(self, dataset: VerticalDataset, hp: HyperParams, config: ProtocolConfig,
                 link: LinkModel, cost: CostModel, other_seconds: float):
        dataset.validate()
        hp.validate(dataset.m)
        config.validate(dataset)
        self.dataset = dataset
        self.hp = hp
        self.config = config
        self.cost = cost
        self.link = link
        self.metrics = RunMetrics(other_seconds_per_iteration=other_seconds)
        self.net = Network(link=link, seed=_derive_seed(config.seed, "net"))
        self.enc_rng = Random(_derive_seed(config.seed, "encrypt"))
        self.y = normalize_labels(dataset.y, hp.residual_rule)

        if config.plain_mode:
            self.keypair: Optional[KeyPair] = None
        else:
            self.keypair = paillier.keygen(config.key_bits,
                                           seed=_derive_seed(config.seed, "keygen"),
                                           allow_small=config.allow_small_keys)

        ratios = config.pca_ratios or [1.0] * (dataset.num_hosts + 1)
        self.guest = self._make_party(GUEST, dataset.guest_X, ratios[0])
        self.hosts = [
            self._make_party(host_id(k + 1), X, ratios[k + 1])
            for k, X in enumerate(dataset.host_Xs)
        ]
        self.host_ids = [h.party_id for h in self.hosts]
        self.parties = {p.party_id: p for p in [self.guest] + self.hosts}

        self.cache = BackupCache()
        self.guest_round: Optional[GuestRoundState] = None
        self.receive_logs: list[ReceiveLog] = []
        self._idle_since: dict[str, float] = {}
        self._wake_at: Optional[float] = None
        self._completed: dict[int, int] = {}
        self._batches: dict[int, np.ndarray] = {}
        self._early_shares: dict[int, list] = {}  # shares from hosts running ahead

    # -- setup -------------------------------------------------------------

    def _make_party(self, pid: str, X: np.ndarray, ratio: float) -> PartyState:
        params = ModelParams(np.zeros(X.shape[1]))
        party = PartyState(party_id=pid, X=X, params=params,
                           optimizer=Optimizer(kind=self.hp.optimizer,
                                               learning_rate=self.hp.learning_rate))
        if ratio < 1.0:
            plan = compression.fit_pca(X, compression.ratio_to_k(ratio, X.shape[1]))
            attach_compression(party, plan)
        return party

    def batch(self, iteration: int) -> np.ndarray:
        idx = self._batches.get(iteration)
        if idx is None:
            idx = batch_indices(self.dataset.m, self.hp.batch_size, iteration,
                                self.config.seed)
            self._batches[iteration] = idx
        return idx

    @property
    def pk(self) -> PublicKey:
        return self.keypair.public_key

    # -- work execution with cost accounting --------------------------------

    def _work(self, pid: str, iteration: int, earliest: float, fn,
              preamble_other: float = 0.0) -> float:
        """Run a party's compute step, charging phases and scheduling sends."""
        clock = self.net.clock
        start = max(earliest, clock.busy(pid))
        if pid != ARBITER:
            idle_since = self._idle_since.get(pid)
            if idle_since is not None and start > idle_since:
                self.metrics.attribute(iteration, "communication", start - idle_since)
            self._idle_since[pid] = None
        if preamble_other:
            self.metrics.begin_iteration(iteration)
        counter = self.metrics.counter_for(iteration)
        before = counter.snapshot()
        sends: list[ProtocolMessage] = []
        with use_counter(counter):
            flops = fn(sends)
        after = counter.snapshot()
        comp = self.cost.compute_seconds(after["enc_mul"] - before["enc_mul"],
                                         after["enc_add"] - before["enc_add"],
                                         flops or 0.0)
        enc = self.cost.crypto_seconds(after["encryptions"] - before["encryptions"],
                                       after["decryptions"] - before["decryptions"])
        self.metrics.attribute(iteration, "computation", comp)
        self.metrics.attribute(iteration, "encryption", enc)
        end = start + preamble_other + comp + enc
        clock.occupy(pid, end)
        for msg in sends:
            self.net.send(msg, at=end)
        party = self.parties.get(pid)
        if party is not None and not party.done:
            self._idle_since[pid] = end
        return end

    # -- party round logic ---------------------------------------------------

    def _host_start_round(self, host: PartyState, iteration: int, at: float) -> None:
        def fn(sends):
            host.round = iteration
            batch = self.batch(iteration)
            Xb = host.active_matrix()[batch]
            theta = host.active_params()
            u = Xb @ theta
            flops = 2.0 * Xb.shape[0] * Xb.shape[1]
            if iteration == 1 and host.plan is not None:
                # one-time cost of building Z = X W^T (refreshes are memoized)
                flops += 2.0 * host.X.shape[0] * host.X.shape[1] * host.plan.k
            if self.config.plain_mode:
                payload: object = PlainShare(party_id=host.party_id, iteration=iteration,
                                             u=u, theta_sq=float(theta @ theta),
                                             u_sq_sum=float(u @ u))
            else:
                payload = forward(self.pk, host.party_id, iteration, Xb,
                                  ModelParams(theta), self.enc_rng,
                                  with_loss_share=self.config.track_loss)
            sends.append(ProtocolMessage(MSG_SHARE, host.party_id, GUEST, iteration,
                                         payload))
            return flops

        self._work(host.party_id, iteration, at, fn)

    def _guest_start_round(self, iteration: int, at: float) -> None:
        def fn(sends):
            self.guest.round = iteration
            self.guest_round = GuestRoundState(iteration=iteration)
            state = self.guest_round
            for payload in self._early_shares.pop(iteration, []):
                if payload.party_id not in state.fresh_shares:
                    state.fresh_shares[payload.party_id] = payload
                    state.arrivals.append(payload.party_id)
            batch = self.batch(iteration)
            Xb = self.guest.active_matrix()[batch]
            theta = self.guest.active_params()
            state.guest_u = Xb @ theta
            flops = 2.0 * Xb.shape[0] * Xb.shape[1] + len(batch)
            if iteration == 1 and self.guest.plan is not None:
                flops += 2.0 * self.guest.X.shape[0] * self.guest.X.shape[1] * self.guest.plan.k
            prep = residual_prep(state.guest_u, self.y[batch], self.hp.residual_rule)
            if self.config.plain_mode:
                state.prep_plain = prep
            else:
                state.prep_enc = encrypt_vector(self.pk, prep, self.enc_rng)
            state.prep_done = True
            return flops

        self._work(GUEST, iteration, at, fn, preamble_other=self.metrics.other_seconds_per_iteration)

    def _on_share(self, payload, iteration: int) -> None:
        """Bookkeeping only; costs nothing and never blocks the guest."""
        self.cache.update(payload.party_id, payload, iteration)
        state = self.guest_round
        current = state.iteration if state is not None else 0
        if iteration == current:
            if payload.party_id not in state.fresh_shares:
                state.fresh_shares[payload.party_id] = payload
                state.arrivals.append(payload.party_id)
        elif iteration > current:
            # a host running ahead of the guest; hold for that round
            self._early_shares.setdefault(iteration, []).append(payload)

    def _try_proceed(self, now: float) -> None:
        state = self.guest_round
        if state is None or not state.prep_done or state.proceeded or self.guest.done:
            return
        busy = self.net.clock.busy(GUEST)
        if busy > now:
            if self._wake_at is None or self._wake_at > busy:
                self.net.wake(GUEST, busy)
                self._wake_at = busy
            return
        self._wake_at = None
        beta = 0 if state.iteration == 1 else self.config.backup_workers
        n_batches = max(1, math.ceil(self.dataset.m / self.hp.batch_size))
        decision = evaluate_quorum(state.arrivals, self.host_ids, beta, self.cache,
                                   state.iteration, self.config.max_staleness,
                                   self.config.backup_mode, batch_period=n_batches)
        rec = self.metrics.record_for(state.iteration)
        if not decision.ready:
            for h in decision.blocked_on:
                if h not in state.blocked_warned:
                    state.blocked_warned.add(h)
                    if h not in rec.blocked_hosts:
                        rec.blocked_hosts.append(h)
                    warn_liveness(h, state.iteration, self.metrics.liveness_warnings)
            return
        state.proceeded = True
        self._guest_proceed(state, decision, now)

    def _guest_proceed(self, state: GuestRoundState, decision, at: float) -> None:
        iteration = state.iteration

        def fn(sends):
            shares, log = collect_shares(decision, state.fresh_shares, self.cache,
                                         iteration)
            self.receive_logs.append(log)
            rec = self.metrics.record_for(iteration)
            rec.compensated_hosts = list(log.compensated)
            rec.staleness_ages = dict(log.staleness_ages)
            for h, age in log.staleness_ages.items():
                self.metrics.compensation_events.append(
                    {"iteration": iteration, "host": h, "age": age}
                )
            flops = 0.0
            if self.config.plain_mode:
                flops += self._guest_proceed_plain(state, shares, sends)
            else:
                flops += self._guest_proceed_encrypted(state, shares, sends)
            return flops

        self._work(GUEST, iteration, at, fn)

    def _guest_proceed_encrypted(self, state: GuestRoundState, shares, sends) -> float:
        iteration = state.iteration
        batch = self.batch(iteration)
        theta = self.guest.active_params()
        d = residual_from_prepared(shares, state.prep_enc, self.hp.residual_rule,
                                   iteration)
        for hid in self.host_ids:
            sends.append(ProtocolMessage(MSG_RESIDUAL, GUEST, hid, iteration, d))
        loss_parts = None
        if self.config.track_loss:
            with count_as("loss"):
                loss_parts = encrypted_loss(shares, state.guest_u, self.y[batch],
                                            float(theta @ theta), self.hp.reg_lambda,
                                            self.pk, self.enc_rng)
        Xb = self.guest.active_matrix()[batch]
        msg = party_gradient(d, Xb, ModelParams(theta), self.hp.reg_lambda, self.pk,
                             GUEST, self.enc_rng)
        msg = replace(msg, loss=loss_parts)
        sends.append(ProtocolMessage(MSG_GRADIENT, GUEST, ARBITER, iteration, msg))
        return 0.0

    def _guest_proceed_plain(self, state: GuestRoundState, shares, sends) -> float:
        iteration = state.iteration
        batch = self.batch(iteration)
        m = len(batch)
        d = state.prep_plain.copy()
        host_sum = np.zeros(m)
        for share in shares:
            host_sum += share.u
        if self.hp.residual_rule == RULE_LOGISTIC_TAYLOR:
            d += 0.25 * host_sum
        else:
            d += host_sum
        flops = float(m * (len(shares) + 2))
        for hid in self.host_ids:
            sends.append(ProtocolMessage(MSG_RESIDUAL, GUEST, hid, iteration,
                                         PlainVector(values=d)))
        loss_value = None
        if self.config.track_loss:
            err = host_sum + state.guest_u - self.y[batch]
            theta_sq = sum(float(s.theta_sq) for s in shares) + float(
                self.guest.active_params() @ self.guest.active_params()
            )
            loss_value = float(err @ err + self.hp.reg_lambda / 2 * theta_sq)
            flops += 3.0 * m
        Xb = self.guest.active_matrix()[batch]
        theta = self.guest.active_params()
        g = Xb.T @ d + self.hp.reg_lambda * theta
        flops += 2.0 * Xb.shape[0] * Xb.shape[1]
        sends.append(ProtocolMessage(
            MSG_GRADIENT, GUEST, ARBITER, iteration,
            PlainGradient(party_id=GUEST, iteration=iteration, gradient=g,
                          loss_value=loss_value),
        ))
        return flops

    def _host_on_residual(self, host: PartyState, payload, iteration: int,
                          at: float) -> None:
        def fn(sends):
            batch = self.batch(iteration)
            Xb = host.active_matrix()[batch]
            theta = host.active_params()
            if self.config.plain_mode:
                g = Xb.T @ payload.values + self.hp.reg_lambda * theta
                sends.append(ProtocolMessage(
                    MSG_GRADIENT, host.party_id, ARBITER, iteration,
                    PlainGradient(party_id=host.party_id, iteration=iteration,
                                  gradient=g),
                ))
                return 2.0 * Xb.shape[0] * Xb.shape[1]
            msg = party_gradient(payload, Xb, ModelParams(theta), self.hp.reg_lambda,
                                 self.pk, host.party_id, self.enc_rng)
            sends.append(ProtocolMessage(MSG_GRADIENT, host.party_id, ARBITER,
                                         iteration, msg))
            return 0.0

        self._work(host.party_id, iteration, at, fn)

    def _arbiter_on_gradient(self, payload, iteration: int, at: float) -> None:
        def fn(sends):
            if self.config.plain_mode:
                reply = payload  # nothing to decrypt; route straight back
            else:
                gradients, loss_value = arbiter_decrypt(self.keypair.private_key,
                                                        [payload])
                reply = PlainGradient(party_id=payload.party_id, iteration=iteration,
                                      gradient=gradients[payload.party_id],
                                      loss_value=loss_value)
            sends.append(ProtocolMessage(MSG_PLAIN_GRADIENT, ARBITER, reply.party_id,
                                         iteration, reply))
            return 0.0

        self._work(ARBITER, iteration, at, fn)

    def _party_on_plain_gradient(self, party: PartyState, payload: PlainGradient,
                                 iteration: int, at: float) -> None:
        def fn(sends):
            full = party.receive_gradient(payload)
            party.update(full)
            flops = 2.0 * len(full)
            if party.plan is not None:
                flops += 2.0 * party.plan.k * party.plan.n
            if party.party_id == GUEST and payload.loss_value is not None:
                self.metrics.record_for(iteration).loss_decrypted = payload.loss_value
            return flops

        end = self._work(party.party_id, iteration, at, fn)
        self._round_completed(party, iteration)
        if iteration >= self.hp.max_iterations:
            party.done = True
            self._idle_since[party.party_id] = None
            return
        if party.party_id == GUEST:
            self._guest_start_round(iteration + 1, end)
        else:
            self._host_start_round(party, iteration + 1, end)

    def _round_completed(self, party: PartyState, iteration: int) -> None:
        self._completed[iteration] = self._completed.get(iteration, 0) + 1
        if self._completed[iteration] == len(self.parties):
            self._evaluate(iteration)

    def _evaluate(self, iteration: int) -> None:
        """Harness-side plaintext evaluation; costs no simulated time."""
        scores = self.dataset.guest_X @ self.guest.params.theta
        for host, X in zip(self.hosts, self.dataset.host_Xs):
            scores = scores + X @ host.params.theta
        theta_sq = float(sum(p.params.theta @ p.params.theta for p in self.parties.values()))
        rec = self.metrics.record_for(iteration)
        rec.objective = plaintext_objective(scores, self.y, self.hp.residual_rule,
                                            theta_sq, self.hp.reg_lambda)
        try:
            rec.auc = auc(scores, self.y)
        except ValueError:
            rec.auc = None

    # -- event loop ----------------------------------------------------------

    def run(self) -> TrainingResult:
        for host in self.hosts:
            self._host_start_round(host, 1, 0.0)
        self._guest_start_round(1, 0.0)
        self._try_proceed(0.0)

        while self.net:
            now, group = self.net.pop_group()
            for event in group:
                msg = event.msg
                if msg is None:
                    continue
                if msg.msg_type == MSG_SHARE:
                    self._on_share(msg.payload, msg.iteration)
                elif msg.msg_type == MSG_RESIDUAL:
                    host = self.parties[msg.dst]
                    self._host_on_residual(host, msg.payload, msg.iteration, now)
                elif msg.msg_type == MSG_GRADIENT:
                    self._arbiter_on_gradient(msg.payload, msg.iteration, now)
                elif msg.msg_type == MSG_PLAIN_GRADIENT:
                    party = self.parties[msg.dst]
                    self._party_on_plain_gradient(party, msg.payload, msg.iteration, now)
                else:
                    raise ProtocolError(f"unroutable message type {msg.msg_type!r}")
            self._try_proceed(self.net.clock.now)

        unfinished = [p.party_id for p in self.parties.values() if not p.done]
        if unfinished:
            raise ProtocolError(f"simulation drained with unfinished parties: {unfinished}")

        self.metrics.total_sim_seconds = max(
            self.net.clock.busy(pid) for pid in list(self.parties) + [ARBITER]
        )
        self.metrics.total_bytes = self.net.total_bytes
        self.metrics.total_messages = self.net.total_messages
        return TrainingResult(guest=self.guest, hosts=self.hosts, metrics=self.metrics,
                              receive_logs=self.receive_logs, network=self.net)


def run_training(dataset: VerticalDataset, hp: HyperParams, config: ProtocolConfig,
                 link: Optional[LinkModel] = None, cost_model: Optional[CostModel] = None,
                 other_seconds: float = 2.0) -> TrainingResult:
    """Execute a full simulated training run.

    Validates the dataset alignment, hyper-parameters, and protocol
    configuration before round 1, then drives the event loop to
    completion and returns final per-party parameters plus metrics.
    """
    import time

    link = link or LinkModel()
    cost_model = cost_model or CostModel()
    sim = _Simulation(dataset, hp, config, link, cost_model, other_seconds)
    wall_start = time.perf_counter()
    result = sim.run()
    result.metrics.wall_runtime_s = time.perf_counter() - wall_start
    return result
