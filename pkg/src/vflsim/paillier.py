"""Paillier additive homomorphic cryptosystem over fixed-point reals.

The scheme is the g = n + 1 variant: encryption is a single modular
multiplication, ``E(m) = (1 + n*m) * r^n mod n^2``, and decryption uses
the Carmichael value ``lambda = phi(n)`` with ``mu = phi(n)^-1 mod n``.
Real numbers are encoded as ``mantissa * 16^exponent`` with negatives
wrapped into the top third of the plaintext space; the middle third is
a forbidden band used to detect overflow at decode time.

Homomorphic operations work on :class:`Ciphertext` values and report
into the active :class:`~vflsim.counters.OpCounter`:

* ``add(a, b)``        -- ciphertext product, decrypts to the plaintext sum
* ``scalar_mul(c, s)`` -- ciphertext power, decrypts to the plaintext product

All key and ciphertext objects are immutable and safe to share across
threads.  Determinism: given an explicit ``seed`` / ``rng``, key
generation and encryption randomness are fully reproducible.
"""

from __future__ import annotations

import base64
import json
import math
import secrets
import struct
import sys
from dataclasses import dataclass
from random import Random
from typing import Optional, Union

from .counters import tick

try:
    import gmpy2

    _HAVE_GMPY2 = True
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _HAVE_GMPY2 = False

ENCODING_BASE = 16
_LOG2_BASE = math.log2(ENCODING_BASE)
_FLOAT_MANTISSA_BITS = sys.float_info.mant_dig

#: Key sizes accepted outside test builds.
ALLOWED_KEY_BITS = (512, 1024, 2048, 3072)
DEFAULT_KEY_BITS = 2048

Real = Union[int, float]


class OverflowEncodingError(OverflowError):
    """Value does not fit the encodable plaintext range."""


# ---------------------------------------------------------------------------
# big-integer arithmetic (gmpy2 when available, pure Python otherwise)
# ---------------------------------------------------------------------------

if _HAVE_GMPY2:

    def powmod(base: int, exp: int, mod: int) -> int:
        return int(gmpy2.powmod(base, exp, mod))

    def invert(a: int, mod: int) -> int:
        return int(gmpy2.invert(a, mod))

    def _is_prime(n: int) -> bool:
        return bool(gmpy2.is_prime(n, 40))

else:

    def powmod(base: int, exp: int, mod: int) -> int:
        return pow(base, exp, mod)

    def invert(a: int, mod: int) -> int:
        return pow(a, -1, mod)

    _SMALL_PRIMES = (3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)

    def _is_prime(n: int) -> bool:
        if n < 2:
            return False
        for p in _SMALL_PRIMES:
            if n % p == 0:
                return n == p
        d, r = n - 1, 0
        while d % 2 == 0:
            d //= 2
            r += 1
        rng = Random(n)  # witness choice only affects soundness, not determinism
        for _ in range(40):
            a = rng.randrange(2, n - 1)
            x = pow(a, d, n)
            if x in (1, n - 1):
                continue
            for _ in range(r - 1):
                x = pow(x, 2, n)
                if x == n - 1:
                    break
            else:
                return False
        return True


def _random_prime(rng: Random, bits: int) -> int:
    """Draw candidates from ``rng`` until one is prime.

    The two top bits are forced so the product of two such primes has
    exactly ``2*bits`` bits.
    """
    while True:
        candidate = rng.getrandbits(bits)
        candidate |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if _is_prime(candidate):
            return candidate


# ---------------------------------------------------------------------------
# keys
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PublicKey:
    """Paillier modulus and derived constants (g is fixed to n + 1)."""

    n: int
    key_bits: int
    n_squared: int
    g: int
    max_int: int

    @classmethod
    def from_modulus(cls, n: int) -> "PublicKey":
        return cls(n=n, key_bits=n.bit_length(), n_squared=n * n, g=n + 1, max_int=n // 3 - 1)

    def __repr__(self) -> str:
        return f"PublicKey({self.key_bits} bits)"

    @property
    def ciphertext_bytes(self) -> int:
        """Fixed width of a serialized ciphertext value."""
        return (2 * self.key_bits + 7) // 8


class PrivateKey:
    """Decryption key; constructible only together with its public key.

    Never placed in protocol messages -- message assembly rejects any
    payload containing a PrivateKey (see :mod:`vflsim.netsim`).
    """

    __slots__ = ("public_key", "_lam", "_mu")

    def __init__(self, public_key: PublicKey, lam: int, mu: int):
        self.public_key = public_key
        self._lam = lam
        self._mu = mu

    def __repr__(self) -> str:
        return f"PrivateKey(for {self.public_key!r})"


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    private_key: PrivateKey


def keygen(key_bits: int = DEFAULT_KEY_BITS, seed: Optional[int] = None,
           allow_small: bool = False) -> KeyPair:
    """Generate a Paillier key pair with an exactly ``key_bits``-bit modulus.

    ``seed`` makes the generation deterministic.  Key sizes outside
    :data:`ALLOWED_KEY_BITS` are rejected unless ``allow_small`` is set
    (intended for tests only).
    """
    if key_bits not in ALLOWED_KEY_BITS and not allow_small:
        raise ValueError(
            f"key_bits must be one of {ALLOWED_KEY_BITS} (got {key_bits}); "
            "pass allow_small=True for test-sized keys"
        )
    if key_bits < 16 or key_bits % 2:
        raise ValueError("key_bits must be an even integer >= 16")
    rng = Random(seed) if seed is not None else Random(secrets.randbits(256))
    half = key_bits // 2
    while True:
        p = _random_prime(rng, half)
        q = _random_prime(rng, half)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == key_bits:
            break
    public = PublicKey.from_modulus(n)
    lam = (p - 1) * (q - 1)
    mu = invert(lam, n)
    return KeyPair(public_key=public, private_key=PrivateKey(public, lam, mu))


# ---------------------------------------------------------------------------
# fixed-point encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodedNumber:
    """Fixed-point representation ``mantissa * 16^exponent`` modulo n."""

    mantissa: int
    exponent: int


def _shift_round(magnitude: int, shift: int) -> int:
    """magnitude * 2**-shift, round half to even (matches round())."""
    if shift <= 0:
        return magnitude << -shift
    q, r = divmod(magnitude, 1 << shift)
    if 2 * r > (1 << shift) or (2 * r == (1 << shift) and q % 2):
        q += 1
    return q


def _scaled_int(value: Real, exponent: int) -> int:
    """round(value * 16**-exponent) computed exactly.

    Base-16 scale factors are powers of two, so the scaling is a pure
    shift of the value's binary expansion; going through float
    multiplication would overflow for extreme exponents.
    """
    if isinstance(value, int):
        magnitude, shift = abs(value), 4 * exponent
    else:
        mant, bin_exp = math.frexp(abs(value))
        magnitude = int(mant * (1 << _FLOAT_MANTISSA_BITS))
        shift = _FLOAT_MANTISSA_BITS - bin_exp + 4 * exponent
    scaled = _shift_round(magnitude, shift)
    return -scaled if value < 0 else scaled


def encode(pk: PublicKey, value: Real, precision: Optional[float] = None,
           max_exponent: Optional[int] = None) -> EncodedNumber:
    """Encode a real into the Paillier plaintext space.

    Floats are captured with the full double-precision significand by
    default; ints encode exactly at exponent 0.  Raises
    :class:`OverflowEncodingError` when the scaled integer leaves the
    signed range ``[-max_int, max_int]``.
    """
    if precision is None:
        if isinstance(value, int):
            prec_exponent = 0
        elif isinstance(value, float):
            if not math.isfinite(value):
                raise ValueError("cannot encode non-finite value")
            bin_exp = math.frexp(value)[1]
            prec_exponent = math.floor((bin_exp - _FLOAT_MANTISSA_BITS) / _LOG2_BASE)
        else:
            raise TypeError(f"cannot encode type {type(value).__name__}")
    else:
        prec_exponent = math.floor(math.log(precision, ENCODING_BASE))
    exponent = prec_exponent if max_exponent is None else min(max_exponent, prec_exponent)
    int_rep = _scaled_int(value, exponent)
    if abs(int_rep) > pk.max_int:
        raise OverflowEncodingError(
            f"value {value!r} exceeds the encodable range at exponent {exponent}"
        )
    return EncodedNumber(mantissa=int_rep % pk.n, exponent=exponent)


def decode(pk: PublicKey, encoded: EncodedNumber) -> Real:
    """Invert :func:`encode`; raises OverflowError inside the forbidden band."""
    mantissa = encoded.mantissa
    if mantissa >= pk.n:
        raise ValueError("mantissa out of field range")
    if mantissa <= pk.max_int:
        signed = mantissa
    elif mantissa >= pk.n - pk.max_int:
        signed = mantissa - pk.n
    else:
        raise OverflowError("overflow detected in decoded value (forbidden band)")
    if encoded.exponent >= 0:
        return signed * ENCODING_BASE ** encoded.exponent
    return signed / ENCODING_BASE ** -encoded.exponent


def max_encodable(pk: PublicKey) -> int:
    """Largest magnitude encodable at exponent 0."""
    return pk.max_int


# ---------------------------------------------------------------------------
# ciphertexts and homomorphic operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ciphertext:
    """A Paillier ciphertext carrying the fixed-point exponent in clear."""

    value: int
    exponent: int
    public_key: PublicKey

    def __post_init__(self):
        if not 0 < self.value < self.public_key.n_squared:
            raise ValueError("ciphertext value out of range")


def _randbelow_n(pk: PublicKey, rng: Optional[Random]) -> int:
    if rng is None:
        return secrets.randbelow(pk.n - 1) + 1
    return rng.randrange(1, pk.n)


def _raw_encrypt(pk: PublicKey, mantissa: int, rng: Optional[Random]) -> int:
    # g = n + 1 collapses g^m to one multiplication: (1 + n*m) mod n^2
    nude = (1 + pk.n * mantissa) % pk.n_squared
    r = _randbelow_n(pk, rng)
    return nude * powmod(r, pk.n, pk.n_squared) % pk.n_squared


def encrypt(pk: PublicKey, value: Union[Real, EncodedNumber],
            rng: Optional[Random] = None) -> Ciphertext:
    """Encode (if needed) and encrypt ``value`` under ``pk``.

    Encryption is randomized: two encryptions of the same value differ
    as integers.  Pass a seeded ``rng`` for reproducible runs.
    """
    encoded = value if isinstance(value, EncodedNumber) else encode(pk, value)
    tick("encryptions")
    return Ciphertext(value=_raw_encrypt(pk, encoded.mantissa, rng),
                      exponent=encoded.exponent, public_key=pk)


def decrypt(sk: PrivateKey, c: Ciphertext) -> Real:
    """Decrypt and decode.

    A ciphertext produced under a different key decrypts to garbage that
    is not flagged here; callers detect it through tolerance checks.
    """
    pk = sk.public_key
    if c.public_key is not pk and c.public_key != pk:
        raise ValueError("ciphertext was produced under a different public key")
    tick("decryptions")
    u = powmod(c.value, sk._lam, pk.n_squared)
    mantissa = ((u - 1) // pk.n) * sk._mu % pk.n
    return decode(pk, EncodedNumber(mantissa=mantissa, exponent=c.exponent))


def _rescale_to(c: Ciphertext, new_exponent: int) -> Ciphertext:
    """Lower the exponent of ``c`` without changing its plaintext."""
    if new_exponent > c.exponent:
        raise ValueError("can only rescale toward a smaller exponent")
    if new_exponent == c.exponent:
        return c
    factor = ENCODING_BASE ** (c.exponent - new_exponent)
    value = powmod(c.value, factor, c.public_key.n_squared)
    return Ciphertext(value=value, exponent=new_exponent, public_key=c.public_key)


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition; aligns exponents toward the smaller one."""
    if a.public_key != b.public_key:
        raise ValueError("ciphertexts under different public keys")
    if a.exponent > b.exponent:
        a = _rescale_to(a, b.exponent)
    elif b.exponent > a.exponent:
        b = _rescale_to(b, a.exponent)
    tick("enc_add")
    value = a.value * b.value % a.public_key.n_squared
    return Ciphertext(value=value, exponent=a.exponent, public_key=a.public_key)


def scalar_mul(c: Ciphertext, s: Real) -> Ciphertext:
    """Homomorphic multiplication by a plaintext scalar."""
    pk = c.public_key
    encoded = encode(pk, s)
    tick("enc_mul")
    if encoded.mantissa >= pk.n - pk.max_int:
        # negative scalar: exponentiate the ciphertext inverse by |s|
        neg_value = invert(c.value, pk.n_squared)
        value = powmod(neg_value, pk.n - encoded.mantissa, pk.n_squared)
    else:
        value = powmod(c.value, encoded.mantissa, pk.n_squared)
    return Ciphertext(value=value, exponent=c.exponent + encoded.exponent, public_key=pk)


def obfuscate(c: Ciphertext, rng: Optional[Random] = None) -> Ciphertext:
    """Re-randomize a derived ciphertext (multiplies by a fresh r^n)."""
    pk = c.public_key
    r = _randbelow_n(pk, rng)
    value = c.value * powmod(r, pk.n, pk.n_squared) % pk.n_squared
    return Ciphertext(value=value, exponent=c.exponent, public_key=pk)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_EXPONENT_STRUCT = struct.Struct(">i")


def ciphertext_size(pk: PublicKey) -> int:
    """Serialized length in bytes: fixed-width value plus 32-bit exponent."""
    return pk.ciphertext_bytes + _EXPONENT_STRUCT.size


def serialize(c: Ciphertext) -> bytes:
    """Big-endian fixed-width value followed by a signed 32-bit exponent."""
    width = c.public_key.ciphertext_bytes
    return c.value.to_bytes(width, "big") + _EXPONENT_STRUCT.pack(c.exponent)


def deserialize(pk: PublicKey, data: bytes) -> Ciphertext:
    expected = ciphertext_size(pk)
    if len(data) != expected:
        raise ValueError(f"ciphertext blob must be {expected} bytes, got {len(data)}")
    value = int.from_bytes(data[: pk.ciphertext_bytes], "big")
    (exponent,) = _EXPONENT_STRUCT.unpack(data[pk.ciphertext_bytes:])
    return Ciphertext(value=value, exponent=exponent, public_key=pk)


# ---------------------------------------------------------------------------
# key export (PEM-like base64 text blocks)
# ---------------------------------------------------------------------------


def _pem_wrap(tag: str, payload: dict) -> str:
    body = base64.b64encode(json.dumps(payload, sort_keys=True).encode()).decode()
    lines = [body[i: i + 64] for i in range(0, len(body), 64)]
    return f"-----BEGIN {tag}-----\n" + "\n".join(lines) + f"\n-----END {tag}-----\n"


def _pem_unwrap(tag: str, text: str) -> dict:
    begin, end = f"-----BEGIN {tag}-----", f"-----END {tag}-----"
    if begin not in text or end not in text:
        raise ValueError(f"not a {tag} block")
    body = text.split(begin, 1)[1].split(end, 1)[0].replace("\n", "")
    return json.loads(base64.b64decode(body))


def export_public_key(pk: PublicKey) -> str:
    return _pem_wrap("VFL PAILLIER PUBLIC KEY", {"bits": pk.key_bits, "n": hex(pk.n)})


def import_public_key(text: str) -> PublicKey:
    payload = _pem_unwrap("VFL PAILLIER PUBLIC KEY", text)
    return PublicKey.from_modulus(int(payload["n"], 16))


def export_private_key(sk: PrivateKey, allow_unsafe: bool = False) -> str:
    """Text export of the private key. Refuses unless explicitly unlocked."""
    if not allow_unsafe:
        raise PermissionError("private key export requires allow_unsafe=True")
    pk = sk.public_key
    return _pem_wrap(
        "VFL PAILLIER PRIVATE KEY",
        {"bits": pk.key_bits, "n": hex(pk.n), "lambda": hex(sk._lam), "mu": hex(sk._mu)},
    )


def import_private_key(text: str) -> PrivateKey:
    payload = _pem_unwrap("VFL PAILLIER PRIVATE KEY", text)
    pk = PublicKey.from_modulus(int(payload["n"], 16))
    return PrivateKey(pk, int(payload["lambda"], 16), int(payload["mu"], 16))
