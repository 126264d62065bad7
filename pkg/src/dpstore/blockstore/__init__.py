"""Encrypted block array with memory, file and remote backends."""

from .array import FileArray, MemoryArray, ServerArray
from .cipher import (
    AEAD_OVERHEAD,
    AeadCipher,
    TransparentCipher,
    decrypt,
    derive_subkey,
    encrypt,
    generate_key,
)
from .remote import RemoteArray
from .server import BlockStoreServer

__all__ = [
    "AEAD_OVERHEAD",
    "AeadCipher",
    "BlockStoreServer",
    "FileArray",
    "MemoryArray",
    "RemoteArray",
    "ServerArray",
    "TransparentCipher",
    "decrypt",
    "derive_subkey",
    "encrypt",
    "generate_key",
]
