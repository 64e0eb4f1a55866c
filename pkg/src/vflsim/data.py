"""Vertically partitioned datasets: CSV ingestion, splitting, synthesis.

A vertical dataset is one aligned sample set whose feature columns are
divided among parties; only the guest holds labels.  Alignment (same
record count, same record-id order) is validated before every run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input file or inconsistent vertical partition."""


class AlignmentError(DataError):
    """Parties disagree on sample count or record-id order."""


@dataclass
class PartyTable:
    """One party's slice: record ids, features, and labels if it owns them."""

    ids: np.ndarray
    X: np.ndarray
    y: Optional[np.ndarray] = None


@dataclass
class VerticalDataset:
    """Aligned feature partition: guest first, then K host matrices."""

    guest_X: np.ndarray
    host_Xs: list[np.ndarray]
    y: np.ndarray
    record_ids: np.ndarray
    column_permutation: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.validate()

    @property
    def m(self) -> int:
        return self.guest_X.shape[0]

    @property
    def n_total(self) -> int:
        return self.guest_X.shape[1] + sum(X.shape[1] for X in self.host_Xs)

    @property
    def num_hosts(self) -> int:
        return len(self.host_Xs)

    @property
    def feature_counts(self) -> list[int]:
        return [self.guest_X.shape[1]] + [X.shape[1] for X in self.host_Xs]

    def party_matrices(self) -> list[np.ndarray]:
        return [self.guest_X] + list(self.host_Xs)

    def validate(self) -> None:
        m = self.guest_X.shape[0]
        for i, X in enumerate(self.host_Xs):
            if X.shape[0] != m:
                raise AlignmentError(f"host {i + 1} has {X.shape[0]} rows, guest has {m}")
        if self.y.shape[0] != m:
            raise AlignmentError(f"label vector has {self.y.shape[0]} entries, expected {m}")
        if self.record_ids.shape[0] != m:
            raise AlignmentError("record-id sequence length mismatch")
        for X in [self.guest_X] + self.host_Xs:
            if not np.all(np.isfinite(X)):
                raise DataError("non-finite feature values")


def load_csv(path: str, id_column: str = "id", label_column: Optional[str] = None,
             feature_columns: Optional[Sequence[str]] = None,
             standardize: bool = False) -> PartyTable:
    """Load one party's table from a delimited text file.

    The file must have a header row; features must be numeric.  Hosts
    have no label column.  Parse failures report the offending line
    number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if id_column not in header:
            raise DataError(f"{path}: missing id column {id_column!r}")
        id_idx = header.index(id_column)
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise DataError(f"{path}: missing label column {label_column!r}")
            label_idx = header.index(label_column)
        if feature_columns is None:
            feat_names = [h for h in header if h != id_column and h != label_column]
        else:
            missing = [c for c in feature_columns if c not in header]
            if missing:
                raise DataError(f"{path}: missing feature columns {missing}")
            feat_names = list(feature_columns)
        feat_idx = [header.index(c) for c in feat_names]

        ids, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            ids.append(row[id_idx])
            try:
                rows.append([float(row[i]) for i in feat_idx])
                if label_idx is not None:
                    labels.append(float(row[label_idx]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from None

    id_arr = np.array(ids)
    if len(np.unique(id_arr)) != len(id_arr):
        raise DataError(f"{path}: duplicate record ids")
    X = np.array(rows, dtype=float) if rows else np.zeros((0, len(feat_idx)))
    if standardize:
        X = standardize_columns(X)
    y = np.array(labels, dtype=float) if label_idx is not None else None
    return PartyTable(ids=id_arr, X=X, y=y)


def save_csv(path: str, table: PartyTable, id_column: str = "id",
             label_column: Optional[str] = None) -> None:
    """Write a party table back to delimited text (inverse of load_csv)."""
    n_feat = table.X.shape[1]
    header = [id_column] + [f"f{i}" for i in range(n_feat)]
    if label_column is not None:
        header.append(label_column)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(table.X.shape[0]):
            row = [str(table.ids[i])] + [repr(float(v)) for v in table.X[i]]
            if label_column is not None:
                row.append(repr(float(table.y[i])))
            writer.writerow(row)


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Per-column zero mean, unit variance (constant columns left at zero)."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return (X - mean) / std


def assemble(guest: PartyTable, hosts: Sequence[PartyTable]) -> VerticalDataset:
    """Combine per-party tables, enforcing the alignment invariant."""
    if guest.y is None:
        raise DataError("guest table must carry labels")
    for i, h in enumerate(hosts):
        if h.ids.shape != guest.ids.shape or not np.array_equal(h.ids, guest.ids):
            raise AlignmentError(f"host {i + 1} record-id order differs from guest")
    return VerticalDataset(
        guest_X=guest.X,
        host_Xs=[h.X for h in hosts],
        y=guest.y,
        record_ids=guest.ids,
    )


def vertical_split(X: np.ndarray, y: np.ndarray, party_feature_counts: Sequence[int],
                   seed: int = 0) -> VerticalDataset:
    """Shuffle columns by seed and hand contiguous blocks to the parties.

    The first count goes to the guest (which also receives the labels).
    The permutation is retained so :func:`reassemble` can invert it.
    """
    X = np.asarray(X, dtype=float)
    counts = list(party_feature_counts)
    if sum(counts) != X.shape[1]:
        raise DataError(f"party feature counts {counts} do not sum to {X.shape[1]}")
    perm = np.random.default_rng(seed).permutation(X.shape[1])
    shuffled = X[:, perm]
    blocks = []
    offset = 0
    for c in counts:
        blocks.append(shuffled[:, offset: offset + c])
        offset += c
    return VerticalDataset(
        guest_X=blocks[0],
        host_Xs=blocks[1:],
        y=np.asarray(y, dtype=float),
        record_ids=np.arange(X.shape[0]),
        column_permutation=perm,
    )


def reassemble(ds: VerticalDataset) -> np.ndarray:
    """Invert :func:`vertical_split`, restoring the original column order."""
    joined = np.hstack(ds.party_matrices())
    if ds.column_permutation is None:
        return joined
    inverse = np.argsort(ds.column_permutation)
    return joined[:, inverse]


def synth(m: int, n: int, intrinsic_rank: int, noise: float = 0.0,
          margin: float = 1.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic labeled data with controllable rank and separability.

    Rows of X live in an ``intrinsic_rank``-dimensional subspace (before
    the optional Gaussian noise).  Labels come from a ground-truth
    linear rule inside that subspace; each sample is pushed ``margin``
    units away from the decision boundary along the rule direction, so
    larger margins survive more noise.  Labels are 0/1.
    """
    if intrinsic_rank > n or intrinsic_rank < 1:
        raise DataError(f"intrinsic_rank must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((intrinsic_rank, n))
    coords = rng.standard_normal((m, intrinsic_rank))
    X = coords @ basis
    w = rng.standard_normal(intrinsic_rank) @ basis  # rule inside the row space
    w /= np.linalg.norm(w)
    scores = X @ w
    y = (scores > 0).astype(float)
    X = X + margin * np.sign(scores)[:, None] * w[None, :]
    if noise > 0:
        X = X + noise * rng.standard_normal((m, n))
    return X, y
