"""Exception types shared across the package."""


class DpStoreError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(DpStoreError, ValueError):
    """A scheme parameter is out of its documented domain."""


class AddressError(DpStoreError, IndexError):
    """A cell address is outside the array's 1-based range."""


class FrameError(DpStoreError, ValueError):
    """A payload or wire frame has the wrong shape or length."""


class IntegrityError(DpStoreError):
    """Authenticated decryption failed (wrong key or corrupted bytes)."""


class CapacityError(DpStoreError):
    """A client-side structure (super root) is at capacity."""


class SizeError(DpStoreError):
    """An exact-enumeration instance is too large to enumerate."""


class WireProtocolError(DpStoreError):
    """The remote peer answered with an unexpected or malformed frame."""
