"""Run configuration: schema, defaults, validation, and file round-trip.

Configs are JSON files.  Validation is strict and happens in full
before any work starts: unknown keys are rejected, every value is
range-checked, and the fully defaulted ("effective") config is echoed
into the output directory so a run can be reproduced from its own
artifacts.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from .data import VerticalDataset, assemble, load_csv, synth, vertical_split
from .metrics import CostModel
from .netsim import LinkModel
from .protocol import (OPTIMIZER_RMSPROP, OPTIMIZER_SGD, RULE_LINEAR,
                       RULE_LOGISTIC_TAYLOR, HyperParams, ProtocolConfig)
from .straggler import MODE_DROP, MODE_STALE

ENV_ALLOW_SMALL_KEYS = "VFLSIM_ALLOW_SMALL_KEYS"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class DatasetConfig:
    """Either synthetic generator parameters or per-party CSV paths."""

    source: str = "synth"  # "synth" | "csv"
    # synth parameters
    m: int = 500
    n: int = 12
    intrinsic_rank: int = 8
    noise: float = 0.1
    margin: float = 1.0
    # csv parameters
    guest_path: Optional[str] = None
    host_paths: list[str] = field(default_factory=list)
    id_column: str = "id"
    label_column: str = "y"
    standardize: bool = False


@dataclass
class RunConfig:
    """Every knob of one experiment; see config_reference for field docs."""

    key_bits: int = 2048
    num_hosts: int = 2
    feature_counts: list[int] = field(default_factory=lambda: [4, 4, 4])
    backup_workers: int = 0
    backup_mode: str = MODE_STALE
    max_staleness: int = 2
    slowdown_prob: float = 0.0
    baseline_bandwidth: float = 10e6
    bottleneck_divisor: float = 10.0
    latency_s: float = 0.0
    slowdown_scope: str = "link"
    pca_ratios: Optional[list[float]] = None  # defaults to all-off for every party
    learning_rate: float = 0.05
    reg_lambda: float = 0.0
    residual_rule: str = RULE_LINEAR
    optimizer: str = OPTIMIZER_RMSPROP
    batch_size: int = 1024
    max_iterations: int = 50
    seed: int = 0
    track_loss: bool = True
    plain_mode: bool = False
    other_seconds: float = 2.0
    allow_small_keys: bool = False
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cost_model: Optional[dict[str, float]] = None
    output_dir: Optional[str] = None

    # ------------------------------------------------------------------

    def validate(self) -> None:
        if self.num_hosts < 0:
            raise ConfigError("num_hosts must be >= 0")
        if len(self.feature_counts) != self.num_hosts + 1:
            raise ConfigError("feature_counts must list the guest plus every host")
        if any(c < 1 for c in self.feature_counts):
            raise ConfigError("every party needs at least one feature")
        if self.num_hosts > 0 and not 0 <= self.backup_workers < self.num_hosts:
            raise ConfigError("require 0 <= backup_workers < num_hosts")
        if self.backup_mode not in (MODE_STALE, MODE_DROP):
            raise ConfigError(f"backup_mode must be stale or drop, got {self.backup_mode!r}")
        if self.max_staleness < 1:
            raise ConfigError("max_staleness must be >= 1")
        if not 0 <= self.slowdown_prob <= 1:
            raise ConfigError("slowdown_prob must be in [0, 1]")
        if self.baseline_bandwidth <= 0:
            raise ConfigError("baseline_bandwidth must be positive")
        if self.bottleneck_divisor <= 1:
            raise ConfigError("bottleneck_divisor must be > 1")
        if self.slowdown_scope not in ("link", "party"):
            raise ConfigError("slowdown_scope must be link or party")
        if self.pca_ratios is None:
            self.pca_ratios = [1.0] * (self.num_hosts + 1)
        if len(self.pca_ratios) != self.num_hosts + 1:
            raise ConfigError("pca_ratios must list the guest plus every host")
        for r in self.pca_ratios:
            if not 0 < r <= 1:
                raise ConfigError(f"pca ratio {r} outside (0, 1]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.reg_lambda < 0:
            raise ConfigError("reg_lambda must be >= 0")
        if self.residual_rule not in (RULE_LINEAR, RULE_LOGISTIC_TAYLOR):
            raise ConfigError("residual_rule must be linear or logistic_taylor")
        if self.optimizer not in (OPTIMIZER_SGD, OPTIMIZER_RMSPROP):
            raise ConfigError("optimizer must be sgd or rmsprop")
        if self.batch_size < 1 or self.max_iterations < 1:
            raise ConfigError("batch_size and max_iterations must be positive")
        if self.other_seconds < 0:
            raise ConfigError("other_seconds must be >= 0")
        if self.dataset.source not in ("synth", "csv"):
            raise ConfigError("dataset.source must be synth or csv")
        if self.dataset.source == "csv":
            if not self.dataset.guest_path:
                raise ConfigError("csv dataset needs dataset.guest_path")
            if len(self.dataset.host_paths) != self.num_hosts:
                raise ConfigError("dataset.host_paths must list one file per host")
        else:
            if sum(self.feature_counts) != self.dataset.n:
                raise ConfigError(
                    f"feature_counts sum to {sum(self.feature_counts)} but dataset.n "
                    f"is {self.dataset.n}"
                )
        if self.cost_model is not None:
            unknown = set(self.cost_model) - set(CostModel.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown cost_model fields: {sorted(unknown)}")

    # ------------------------------------------------------------------

    def effective_allow_small_keys(self) -> bool:
        return self.allow_small_keys or os.environ.get(ENV_ALLOW_SMALL_KEYS, "") == "1"

    def build_dataset(self) -> VerticalDataset:
        dc = self.dataset
        if dc.source == "synth":
            X, y = synth(dc.m, dc.n, dc.intrinsic_rank, noise=dc.noise,
                         margin=dc.margin, seed=self.seed)
            return vertical_split(X, y, self.feature_counts, seed=self.seed)
        guest = load_csv(dc.guest_path, id_column=dc.id_column,
                         label_column=dc.label_column, standardize=dc.standardize)
        hosts = [load_csv(p, id_column=dc.id_column, standardize=dc.standardize)
                 for p in dc.host_paths]
        ds = assemble(guest, hosts)
        if [X.shape[1] for X in ds.party_matrices()] != list(self.feature_counts):
            raise ConfigError("feature_counts do not match the loaded CSV columns")
        return ds

    def hyperparams(self) -> HyperParams:
        return HyperParams(learning_rate=self.learning_rate, reg_lambda=self.reg_lambda,
                           max_iterations=self.max_iterations, batch_size=self.batch_size,
                           residual_rule=self.residual_rule, optimizer=self.optimizer)

    def protocol_config(self) -> ProtocolConfig:
        ratios = None if all(r == 1.0 for r in self.pca_ratios) else list(self.pca_ratios)
        return ProtocolConfig(num_hosts=self.num_hosts, backup_workers=self.backup_workers,
                              backup_mode=self.backup_mode, max_staleness=self.max_staleness,
                              pca_ratios=ratios, key_bits=self.key_bits,
                              allow_small_keys=self.effective_allow_small_keys(),
                              track_loss=self.track_loss, plain_mode=self.plain_mode,
                              seed=self.seed)

    def link_model(self) -> LinkModel:
        return LinkModel(baseline_bandwidth=self.baseline_bandwidth,
                         slowdown_prob=self.slowdown_prob,
                         bottleneck_divisor=self.bottleneck_divisor,
                         latency_s=self.latency_s, scope=self.slowdown_scope)

    def cost(self) -> CostModel:
        if self.cost_model is None:
            return CostModel()
        return CostModel(**{**asdict(CostModel()), **self.cost_model})

    def to_dict(self) -> dict:
        payload = asdict(self)
        return payload

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _from_mapping(payload: dict[str, Any]) -> RunConfig:
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    payload = dict(payload)
    if "dataset" in payload:
        ds_payload = payload["dataset"]
        if not isinstance(ds_payload, dict):
            raise ConfigError("dataset must be an object")
        ds_known = set(DatasetConfig.__dataclass_fields__)
        ds_unknown = set(ds_payload) - ds_known
        if ds_unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(ds_unknown)}")
        payload["dataset"] = DatasetConfig(**ds_payload)
    return RunConfig(**payload)


def load_config(path: str, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Parse, apply overrides, and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if overrides:
        payload.update(overrides)
    config = _from_mapping(payload)
    config.validate()
    return config


def default_config() -> RunConfig:
    config = RunConfig()
    config.validate()
    return config


#: (field, description) pairs for the generated reference file.
_FIELD_DOCS = [
    ("key_bits", "Paillier modulus size; 512/1024/2048/3072 (2048 default)"),
    ("num_hosts", "number of feature-holding host parties (K)"),
    ("feature_counts", "features per party, guest first; must sum to dataset.n for synth"),
    ("backup_workers", "slowest hosts a round may skip (beta); 0 disables backup"),
    ("backup_mode", "stale = fill skipped hosts from cache, drop = omit them (comparison baseline)"),
    ("max_staleness", "maximum age of a cached share before the round blocks on that host"),
    ("slowdown_prob", "per-iteration probability a link drops to baseline/divisor"),
    ("baseline_bandwidth", "link bandwidth in bits/second"),
    ("bottleneck_divisor", "slowdown factor during fluctuation (default 10)"),
    ("latency_s", "constant per-message latency, default 0 (pure bandwidth model)"),
    ("slowdown_scope", "link = draw per link pair, party = draw once per host"),
    ("pca_ratios", "compression ratio per party, guest first; 1.0 = off (the default)"),
    ("learning_rate", "gradient step size (mu)"),
    ("reg_lambda", "L2 regularization coefficient (lambda)"),
    ("residual_rule", "linear | logistic_taylor (labels 0/1 or -1/+1)"),
    ("optimizer", "sgd = plain update, rmsprop = per-coordinate scaling of decrypted gradients"),
    ("batch_size", "samples per round (clipped batches cycle a seed-fixed shuffle)"),
    ("max_iterations", "training rounds"),
    ("seed", "master seed: keys, encryption randomness, bandwidth draws, data"),
    ("track_loss", "assemble and decrypt the monitoring loss each round"),
    ("plain_mode", "run without encryption (runtime-composition baseline)"),
    ("other_seconds", "constant per-iteration overhead charged to the Other phase"),
    ("allow_small_keys", f"permit sub-512-bit keys (also env {ENV_ALLOW_SMALL_KEYS}=1)"),
    ("dataset", "synth generator parameters or per-party csv paths"),
    ("cost_model", "optional per-op simulated seconds overrides"),
    ("output_dir", "default output directory (CLI --out overrides)"),
]


def write_config_reference(path: str) -> None:
    """Human-readable list of every key, its default, and what it does."""
    defaults = default_config().to_dict()
    lines = ["vflsim run configuration reference", "=" * 36, ""]
    for name, doc in _FIELD_DOCS:
        lines.append(f"{name}")
        lines.append(f"    default: {json.dumps(defaults[name], sort_keys=True)}")
        lines.append(f"    {doc}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
