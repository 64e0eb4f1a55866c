"""Per-iteration phase breakdown, op counters, and run reports.

Simulated time is charged from operation counts through a
:class:`CostModel` (seconds per encrypted multiplication, addition,
encryption, decryption, and plain flop), which makes the breakdown
deterministic instead of wall-clock-noisy.  Default costs were
calibrated by micro-benchmark at 1024-bit keys; :func:`calibrate`
re-measures them on the current machine.

Phases:

* computation  -- encrypted arithmetic (mul/add) plus plaintext flops
* encryption   -- encrypt and decrypt spans only
* communication-- time parties spend idle waiting for messages
* other        -- fixed per-iteration constant (IO / scheduling)

The per-iteration identity ``total == computation + encryption +
communication + other`` holds exactly by construction.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

from .counters import OpCounter

PHASES = ("computation", "encryption", "communication", "other")


@dataclass(frozen=True)
class CostModel:
    """Simulated seconds per counted operation."""

    enc_mul_s: float = 1.0e-4
    enc_add_s: float = 2.7e-5
    encrypt_s: float = 1.6e-3
    decrypt_s: float = 1.6e-3
    flop_s: float = 1.0e-9

    def compute_seconds(self, enc_mul: int, enc_add: int, flops: float) -> float:
        return enc_mul * self.enc_mul_s + enc_add * self.enc_add_s + flops * self.flop_s

    def crypto_seconds(self, encryptions: int, decryptions: int) -> float:
        return encryptions * self.encrypt_s + decryptions * self.decrypt_s


def calibrate(key_bits: int = 1024, samples: int = 50, seed: int = 0) -> CostModel:
    """Micro-benchmark the homomorphic primitives on this machine."""
    from . import paillier

    kp = paillier.keygen(key_bits, seed=seed, allow_small=True)
    pk, sk = kp.public_key, kp.private_key

    t0 = time.perf_counter()
    cts = [paillier.encrypt(pk, 1.0 + i) for i in range(samples)]
    encrypt_s = (time.perf_counter() - t0) / samples

    t0 = time.perf_counter()
    for c in cts:
        paillier.scalar_mul(c, 1.2345)
    enc_mul_s = (time.perf_counter() - t0) / samples

    t0 = time.perf_counter()
    acc = cts[0]
    for c in cts:
        acc = paillier.add(acc, c)
    enc_add_s = (time.perf_counter() - t0) / samples

    t0 = time.perf_counter()
    for c in cts:
        paillier.decrypt(sk, c)
    decrypt_s = (time.perf_counter() - t0) / samples

    return CostModel(enc_mul_s=enc_mul_s, enc_add_s=enc_add_s,
                     encrypt_s=encrypt_s, decrypt_s=decrypt_s)


@dataclass
class PhaseBreakdown:
    """Simulated seconds attributed to the four phases of one iteration."""

    computation_s: float = 0.0
    encryption_s: float = 0.0
    communication_s: float = 0.0
    other_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.computation_s + self.encryption_s + self.communication_s + self.other_s

    def add(self, phase: str, duration: float) -> None:
        if duration < 0:
            raise ValueError(f"negative duration {duration} for phase {phase!r}")
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        setattr(self, phase + "_s", getattr(self, phase + "_s") + duration)

    def as_dict(self) -> dict:
        return {
            "computation_s": self.computation_s,
            "encryption_s": self.encryption_s,
            "communication_s": self.communication_s,
            "other_s": self.other_s,
            "total_s": self.total_s,
        }


@dataclass
class IterationRecord:
    iteration: int
    phases: PhaseBreakdown = field(default_factory=PhaseBreakdown)
    ops: OpCounter = field(default_factory=OpCounter)
    loss_decrypted: Optional[float] = None
    objective: Optional[float] = None
    auc: Optional[float] = None
    compensated_hosts: list[str] = field(default_factory=list)
    staleness_ages: dict[str, int] = field(default_factory=dict)
    blocked_hosts: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "phases": self.phases.as_dict(),
            "ops": self.ops.snapshot(),
            "ops_by_label": {k: v.snapshot() for k, v in sorted(self.ops.by_label.items())},
            "loss_decrypted": self.loss_decrypted,
            "objective": self.objective,
            "auc": self.auc,
            "compensated_hosts": self.compensated_hosts,
            "staleness_ages": dict(sorted(self.staleness_ages.items())),
            "blocked_hosts": self.blocked_hosts,
        }


class RunMetrics:
    """Accumulator for one simulated run.

    ``attribute`` books a duration into exactly one phase of one
    iteration; ``counter_for`` hands out the per-iteration op counter
    (all feeding the run-level counter); ``snapshot`` freezes the
    record list for reporting.
    """

    def __init__(self, other_seconds_per_iteration: float = 2.0):
        self.other_seconds_per_iteration = other_seconds_per_iteration
        self.records: dict[int, IterationRecord] = {}
        self.run_ops = OpCounter()
        self.compensation_events: list[dict] = []
        self.liveness_warnings: list[str] = []
        self.total_sim_seconds = 0.0
        self.total_bytes = 0
        self.total_messages = 0
        self.wall_runtime_s: Optional[float] = None

    def record_for(self, iteration: int) -> IterationRecord:
        rec = self.records.get(iteration)
        if rec is None:
            rec = IterationRecord(iteration=iteration,
                                  ops=OpCounter(parent=self.run_ops))
            self.records[iteration] = rec
        return rec

    def counter_for(self, iteration: int) -> OpCounter:
        return self.record_for(iteration).ops

    def attribute(self, iteration: int, phase: str, duration: float) -> None:
        self.record_for(iteration).phases.add(phase, duration)

    def begin_iteration(self, iteration: int) -> None:
        self.attribute(iteration, "other", self.other_seconds_per_iteration)

    def snapshot(self) -> list[IterationRecord]:
        return [self.records[j] for j in sorted(self.records)]

    # -- aggregate views ---------------------------------------------------

    def phase_totals(self) -> dict[str, float]:
        totals = {p: 0.0 for p in PHASES}
        for rec in self.records.values():
            for p in PHASES:
                totals[p] += getattr(rec.phases, p + "_s")
        totals["total"] = sum(totals[p] for p in PHASES)
        return totals

    def loss_history(self) -> list[Optional[float]]:
        return [rec.loss_decrypted for rec in self.snapshot()]

    def objective_history(self) -> list[Optional[float]]:
        return [rec.objective for rec in self.snapshot()]

    def auc_history(self) -> list[Optional[float]]:
        return [rec.auc for rec in self.snapshot()]

    def max_staleness(self) -> int:
        ages = [age for rec in self.records.values() for age in rec.staleness_ages.values()]
        return max(ages, default=0)

    # -- serialization -----------------------------------------------------

    def to_jsonl(self, path: str) -> None:
        """One JSON record per iteration; fields documented in the README."""
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.snapshot():
                fh.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")

    def summary(self) -> dict:
        totals = self.phase_totals()
        objectives = [v for v in self.objective_history() if v is not None]
        aucs = [v for v in self.auc_history() if v is not None]
        return {
            "iterations": len(self.records),
            "computation_s": totals["computation"],
            "encryption_s": totals["encryption"],
            "communication_s": totals["communication"],
            "other_s": totals["other"],
            "phase_total_s": totals["total"],
            "sim_time_s": self.total_sim_seconds,
            "enc_mul": self.run_ops.enc_mul,
            "enc_add": self.run_ops.enc_add,
            "encryptions": self.run_ops.encryptions,
            "decryptions": self.run_ops.decryptions,
            "gradient_enc_mul": self.run_ops.labeled("gradient").enc_mul,
            "bytes_sent": self.total_bytes,
            "messages": self.total_messages,
            "final_objective": objectives[-1] if objectives else None,
            "final_auc": aucs[-1] if aucs else None,
            "compensations": len(self.compensation_events),
            "max_staleness": self.max_staleness(),
            "blocked_rounds": sum(
                1 for rec in self.records.values() if rec.blocked_hosts
            ),
        }


def load_jsonl(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def reduction_percent(reference: float, new: float) -> float:
    """Percentage reduction from a reference value, rounded to 0.1."""
    if reference == 0:
        raise ValueError("reference value must be nonzero")
    return round((reference - new) / reference * 100, 1)


def comparison_report(mode_summaries: dict[str, dict],
                      reference: Optional[dict[str, dict]] = None) -> list[dict]:
    """Comparison table across run modes (Origin / Backup / PCA / Ours).

    One row per quantity -- Comp., Comm., and their Sum -- with one
    column per mode, plus reduction percentages against the first mode.
    ``reference`` optionally supplies external values per mode to
    compute reductions against (same row keys).
    """
    modes = list(mode_summaries)
    if not modes:
        raise ValueError("no run summaries given")
    base = modes[0]
    rows = []
    for label, key in (("Comp.", "computation_s"), ("Comm.", "communication_s")):
        row = {"quantity": label}
        for mode in modes:
            row[mode] = mode_summaries[mode][key]
            if mode != base:
                row[f"{mode}_reduction_pct"] = reduction_percent(
                    mode_summaries[base][key], mode_summaries[mode][key]
                )
        rows.append(row)
    sum_row = {"quantity": "Sum"}
    for mode in modes:
        sum_row[mode] = (mode_summaries[mode]["computation_s"]
                         + mode_summaries[mode]["communication_s"])
        if mode != base:
            base_sum = mode_summaries[base]["computation_s"] + mode_summaries[base]["communication_s"]
            sum_row[f"{mode}_reduction_pct"] = reduction_percent(base_sum, sum_row[mode])
    rows.append(sum_row)

    if reference:
        for row in rows:
            label = row["quantity"]
            for mode in modes:
                ref_val = reference.get(mode, {}).get(label)
                if ref_val is not None:
                    row[f"{mode}_vs_reference_pct"] = reduction_percent(ref_val, row[mode])
    return rows


def write_report_csv(rows: list[dict], path: str) -> None:
    import csv

    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
