import numpy as np
import pytest

from vflsim.counters import OpCounter, use_counter
from vflsim.enc_linalg import (CipherVector, cv_add, cv_dot_plain, cv_scalar_mul,
                               decrypt_vector, encrypt_vector,
                               encrypted_gradient_matvec)
from vflsim.paillier import encrypt


@pytest.fixture
def keys(key256):
    return key256.public_key, key256.private_key


class TestCipherVector:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            CipherVector(())

    def test_rejects_mixed_keys(self, key128, key256):
        a = encrypt(key128.public_key, 1.0)
        b = encrypt(key256.public_key, 1.0)
        with pytest.raises(ValueError, match="one public key"):
            CipherVector((a, b))

    def test_roundtrip(self, keys):
        pk, sk = keys
        values = [1.5, -2.25, 0.0, 7.0]
        np.testing.assert_allclose(decrypt_vector(sk, encrypt_vector(pk, values)), values)

    def test_serialized_size(self, keys):
        pk, _ = keys
        v = encrypt_vector(pk, [1.0, 2.0, 3.0])
        assert v.serialized_size() == 3 * (2 * 256 // 8 + 4)


class TestCvAdd:
    def test_elementwise(self, keys):
        pk, sk = keys
        got = cv_add(encrypt_vector(pk, [1, 2]), encrypt_vector(pk, [3, 4]))
        np.testing.assert_allclose(decrypt_vector(sk, got), [4, 6])

    def test_zero_identity(self, keys):
        pk, sk = keys
        v = [0.5, -1.25, 3.0]
        got = cv_add(encrypt_vector(pk, v), encrypt_vector(pk, [0, 0, 0]))
        np.testing.assert_allclose(decrypt_vector(sk, got), v)

    def test_counter_increases_by_length(self, keys):
        pk, _ = keys
        a, b = encrypt_vector(pk, [1] * 7), encrypt_vector(pk, [2] * 7)
        counter = OpCounter()
        with use_counter(counter):
            cv_add(a, b)
        assert counter.enc_add == 7

    def test_length_mismatch(self, keys):
        pk, _ = keys
        with pytest.raises(ValueError, match="length mismatch"):
            cv_add(encrypt_vector(pk, [1]), encrypt_vector(pk, [1, 2]))


class TestCvDotPlain:
    def test_basic(self, keys):
        pk, sk = keys
        d = encrypt_vector(pk, [1, 1])
        got = cv_dot_plain(d, [2, 3])
        from vflsim.paillier import decrypt
        assert decrypt(sk, got) == pytest.approx(5)

    def test_zero_column(self, keys):
        pk, sk = keys
        from vflsim.paillier import decrypt
        got = cv_dot_plain(encrypt_vector(pk, [1.5, -2.0, 3.0]), [0, 0, 0])
        assert decrypt(sk, got) == pytest.approx(0)

    def test_counter_contract(self, keys):
        pk, _ = keys
        d = encrypt_vector(pk, list(range(100)))
        counter = OpCounter()
        with use_counter(counter):
            cv_dot_plain(d, [0.5] * 100)
        assert counter.enc_mul == 100
        assert counter.enc_add == 99

    def test_length_mismatch(self, keys):
        pk, _ = keys
        with pytest.raises(ValueError):
            cv_dot_plain(encrypt_vector(pk, [1, 2]), [1, 2, 3])


class TestMatvec:
    def test_mul_count_is_m_times_n(self, keys):
        pk, _ = keys
        rng = np.random.default_rng(0)
        d = encrypt_vector(pk, rng.normal(size=20))
        X = rng.normal(size=(20, 5))
        counter = OpCounter()
        with use_counter(counter):
            encrypted_gradient_matvec(d, X)
        assert counter.enc_mul == 20 * 5
        assert counter.enc_add == 5 * 19

    def test_identity_columns_select_entries(self, keys):
        pk, sk = keys
        values = [1.5, -2.0, 0.75]
        d = encrypt_vector(pk, values)
        X = np.eye(3)
        got = decrypt_vector(sk, encrypted_gradient_matvec(d, X))
        np.testing.assert_allclose(got, values)

    def test_matches_plaintext_matvec(self, keys):
        pk, sk = keys
        rng = np.random.default_rng(1)
        dvals = rng.normal(size=5)
        X = rng.normal(size=(5, 3))
        got = decrypt_vector(sk, encrypted_gradient_matvec(encrypt_vector(pk, dvals), X))
        np.testing.assert_allclose(got, X.T @ dvals, atol=5 * 1e-12)

    def test_shape_mismatch(self, keys):
        pk, _ = keys
        d = encrypt_vector(pk, [1, 2, 3])
        with pytest.raises(ValueError, match="shape mismatch"):
            encrypted_gradient_matvec(d, np.zeros((4, 2)))


class TestCvScalarMul:
    def test_scales_every_element(self, keys):
        pk, sk = keys
        got = cv_scalar_mul(encrypt_vector(pk, [1.0, -2.0, 4.0]), 0.25)
        np.testing.assert_allclose(decrypt_vector(sk, got), [0.25, -0.5, 1.0])

    def test_counter(self, keys):
        pk, _ = keys
        counter = OpCounter()
        with use_counter(counter):
            cv_scalar_mul(encrypt_vector(pk, [1, 2, 3]), 2.0)
        assert counter.enc_mul == 3


class TestLabeledCounting:
    def test_labels_feed_sub_counters_and_parents(self, keys):
        pk, _ = keys
        from vflsim.counters import count_as

        parent = OpCounter()
        child = OpCounter(parent=parent)
        d = encrypt_vector(pk, [1.0, 2.0])
        with use_counter(child), count_as("gradient"):
            cv_dot_plain(d, [1.0, 1.0])
        assert child.labeled("gradient").enc_mul == 2
        assert parent.labeled("gradient").enc_mul == 2
        assert parent.enc_mul == 2
