"""Block ciphers for the encrypted array.

Two interchangeable ciphers sit behind the same ``encrypt``/``decrypt``
surface:

- :class:`AeadCipher` is the production cipher: AES-GCM with a fresh random
  96-bit nonce per message, so every ciphertext is authenticated and two
  encryptions of the same block collide with probability far below 2**-64.
- :class:`TransparentCipher` keeps the plaintext readable (identity transform
  plus a random 16-byte tag) so audit runs can watch block movement without
  ciphertext noise, while still producing fresh bytes per encryption.

Both produce fixed-overhead ciphertexts: ``len(ct) == len(block) + overhead``.
"""

from __future__ import annotations

import hashlib
import os
import secrets

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..errors import IntegrityError, ParameterError

NONCE_SIZE = 12
TAG_SIZE = 16
AEAD_OVERHEAD = NONCE_SIZE + TAG_SIZE
TRANSPARENT_OVERHEAD = 16

_VALID_KEY_SIZES = (16, 24, 32)


def generate_key(size: int = 32) -> bytes:
    """Generate a fresh AES key from the OS entropy source."""
    if size not in _VALID_KEY_SIZES:
        raise ParameterError(f"key size must be one of {_VALID_KEY_SIZES}, got {size}")
    return secrets.token_bytes(size)


def derive_subkey(master: bytes, label: str, size: int = 32) -> bytes:
    """Derive an independent subkey from a master key for the given label."""
    return hashlib.blake2b(label.encode(), key=master, digest_size=size).digest()


def _random_bytes(rng, count: int) -> bytes:
    if rng is None:
        return os.urandom(count)
    return rng.randbytes(count)


class AeadCipher:
    """AES-GCM with a random nonce per message.

    Layout: ``nonce (12) || ciphertext+tag``. Decryption authenticates and
    raises :class:`IntegrityError` on any mismatch.
    """

    overhead = AEAD_OVERHEAD

    def __init__(self, key: bytes):
        if len(key) not in _VALID_KEY_SIZES:
            raise ParameterError(f"key must be {_VALID_KEY_SIZES} bytes, got {len(key)}")
        self._aead = AESGCM(key)

    def encrypt(self, block: bytes, rng=None) -> bytes:
        nonce = _random_bytes(rng, NONCE_SIZE)
        return nonce + self._aead.encrypt(nonce, block, None)

    def decrypt(self, ciphertext: bytes) -> bytes:
        if len(ciphertext) < self.overhead:
            raise IntegrityError("ciphertext shorter than cipher overhead")
        try:
            return self._aead.decrypt(ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:], None)
        except InvalidTag as exc:
            raise IntegrityError("authentication failed") from exc


class TransparentCipher:
    """Audit-mode cipher: plaintext stays visible, a random tag keeps
    ciphertext bytes fresh per encryption.

    Layout: ``tag (16) || block``. There is no key and no authentication;
    use only where the privacy analysis excludes ciphertext contents. A
    default rng may be bound at construction (audit loops bind their trial
    stream; tag bytes never influence transcripts).
    """

    overhead = TRANSPARENT_OVERHEAD

    def __init__(self, key: bytes | None = None, rng=None):
        # Key accepted and ignored so the two ciphers are drop-in swappable.
        del key
        self._rng = rng

    def encrypt(self, block: bytes, rng=None) -> bytes:
        return _random_bytes(rng or self._rng, TRANSPARENT_OVERHEAD) + block

    def decrypt(self, ciphertext: bytes) -> bytes:
        if len(ciphertext) < self.overhead:
            raise IntegrityError("ciphertext shorter than cipher overhead")
        return ciphertext[TRANSPARENT_OVERHEAD:]


def encrypt(key: bytes, block: bytes, rng=None) -> bytes:
    """One-shot AES-GCM encryption of ``block`` under ``key``."""
    return AeadCipher(key).encrypt(block, rng)


def decrypt(key: bytes, ciphertext: bytes) -> bytes:
    """One-shot AES-GCM decryption; raises IntegrityError on bad key/bytes."""
    return AeadCipher(key).decrypt(ciphertext)
