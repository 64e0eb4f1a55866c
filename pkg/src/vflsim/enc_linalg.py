"""Vector operations over Paillier ciphertexts.

A :class:`CipherVector` is an ordered sequence of ciphertexts under one
public key.  The operations here are the building blocks of encrypted
gradient computation; their operation counts are exact and feed the
cost analysis:

* ``cv_add``                     -- enc_add += length
* ``cv_dot_plain``               -- enc_mul += m, enc_add += m - 1
* ``encrypted_gradient_matvec``  -- enc_mul += m * n (one column at a time)

The matvec deliberately does no ciphertext packing or batching: the
cost model counts one encrypted multiplication per (sample, feature)
pair, and that count is exactly what feature compression reduces.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random
from typing import Optional, Sequence

import numpy as np

from . import paillier
from .counters import OpCounter  # re-exported; counters live with the vector ops
from .paillier import Ciphertext, PrivateKey, PublicKey

__all__ = [
    "CipherVector",
    "OpCounter",
    "cv_add",
    "cv_scalar_mul",
    "cv_dot_plain",
    "encrypted_gradient_matvec",
    "encrypt_vector",
    "decrypt_vector",
]


@dataclass(frozen=True)
class CipherVector:
    """Immutable sequence of ciphertexts sharing one public key."""

    elements: tuple[Ciphertext, ...]

    def __post_init__(self):
        if not self.elements:
            raise ValueError("CipherVector must not be empty")
        pk = self.elements[0].public_key
        if any(c.public_key != pk for c in self.elements[1:]):
            raise ValueError("all elements must share one public key")

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, i: int) -> Ciphertext:
        return self.elements[i]

    @property
    def public_key(self) -> PublicKey:
        return self.elements[0].public_key

    def serialized_size(self) -> int:
        return len(self.elements) * paillier.ciphertext_size(self.public_key)


def encrypt_vector(pk: PublicKey, values: Sequence[float],
                   rng: Optional[Random] = None) -> CipherVector:
    return CipherVector(tuple(paillier.encrypt(pk, float(v), rng) for v in values))


def decrypt_vector(sk: PrivateKey, v: CipherVector) -> np.ndarray:
    return np.array([paillier.decrypt(sk, c) for c in v.elements], dtype=float)


def cv_add(a: CipherVector, b: CipherVector) -> CipherVector:
    """Element-wise homomorphic addition of equal-length vectors."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return CipherVector(tuple(paillier.add(x, y) for x, y in zip(a.elements, b.elements)))


def cv_scalar_mul(v: CipherVector, s: float) -> CipherVector:
    """Multiply every element by one plaintext scalar (enc_mul += length)."""
    return CipherVector(tuple(paillier.scalar_mul(c, s) for c in v.elements))


def cv_dot_plain(d: CipherVector, x_col: Sequence[float]) -> Ciphertext:
    """Homomorphic inner product of an encrypted vector with a plain one.

    Computes sum_i [[d_i]] * x_i, i.e. one gradient coordinate for a
    single feature column.
    """
    if len(d) != len(x_col):
        raise ValueError(f"length mismatch: {len(d)} vs {len(x_col)}")
    acc = paillier.scalar_mul(d[0], float(x_col[0]))
    for c, x in zip(d.elements[1:], x_col[1:]):
        acc = paillier.add(acc, paillier.scalar_mul(c, float(x)))
    return acc


def encrypted_gradient_matvec(d: CipherVector, X: np.ndarray) -> CipherVector:
    """Column-major X^T [[d]]: one encrypted inner product per feature.

    For an m x n matrix this performs exactly m * n encrypted
    multiplications, the dominant cost of a training round.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(d):
        raise ValueError(f"shape mismatch: matrix {X.shape} vs vector length {len(d)}")
    return CipherVector(tuple(cv_dot_plain(d, X[:, j]) for j in range(X.shape[1])))
