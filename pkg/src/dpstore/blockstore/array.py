"""Fixed-record cell arrays: the server side of the balls-and-bins storage.

An array holds ``cells`` records of exactly ``record_size`` bytes each and
supports two operations, download and upload, addressed 1-based. Cells read
as zero bytes until first written. Every backend counts its operations so
benchmarks can source transfer numbers from the storage layer instead of
trusting scheme self-reports.
"""

from __future__ import annotations

import os

from ..errors import AddressError, FrameError, ParameterError


class ServerArray:
    """Common bounds-checking, length-checking and op-counting logic.

    Subclasses implement ``_read_cell``/``_write_cell`` with a 0-based index.
    """

    def __init__(self, cells: int, record_size: int):
        if cells < 1:
            raise ParameterError(f"cells must be >= 1, got {cells}")
        if record_size < 1:
            raise ParameterError(f"record_size must be >= 1, got {record_size}")
        self._cells = cells
        self._record_size = record_size
        self.downloads = 0
        self.uploads = 0

    @property
    def cells(self) -> int:
        return self._cells

    @property
    def record_size(self) -> int:
        return self._record_size

    def reset_counters(self) -> None:
        self.downloads = 0
        self.uploads = 0

    @property
    def op_count(self) -> int:
        return self.downloads + self.uploads

    def _check_addr(self, addr: int) -> int:
        if not 1 <= addr <= self._cells:
            raise AddressError(f"address {addr} out of range [1, {self._cells}]")
        return addr - 1

    def download(self, addr: int) -> bytes:
        """Return the current content of cell ``addr`` (1-based)."""
        index = self._check_addr(addr)
        self.downloads += 1
        return self._read_cell(index)

    def upload(self, addr: int, payload: bytes) -> None:
        """Store ``payload`` in cell ``addr`` (1-based); last write wins."""
        index = self._check_addr(addr)
        if len(payload) != self._record_size:
            raise FrameError(
                f"payload length {len(payload)} != record size {self._record_size}"
            )
        self.uploads += 1
        self._write_cell(index, bytes(payload))

    def _read_cell(self, index: int) -> bytes:
        raise NotImplementedError

    def _write_cell(self, index: int, payload: bytes) -> None:
        raise NotImplementedError


class MemoryArray(ServerArray):
    """In-process array; one bytes object per cell."""

    def __init__(self, cells: int, record_size: int):
        super().__init__(cells, record_size)
        self._zero = bytes(record_size)
        self._data: list[bytes] = [self._zero] * cells

    def _read_cell(self, index: int) -> bytes:
        return self._data[index]

    def _write_cell(self, index: int, payload: bytes) -> None:
        self._data[index] = payload


class FileArray(ServerArray):
    """Single preallocated file of fixed-size records.

    Cell ``addr`` lives at byte offset ``(addr - 1) * record_size``. There is
    no journaling; crash consistency is out of scope.
    """

    def __init__(self, path: str, cells: int, record_size: int):
        super().__init__(cells, record_size)
        self._path = path
        size = cells * record_size
        if not os.path.exists(path):
            with open(path, "wb") as handle:
                handle.truncate(size)
        elif os.path.getsize(path) != size:
            raise ParameterError(
                f"backing file {path} has size {os.path.getsize(path)}, expected {size}"
            )
        self._file = open(path, "r+b")

    @property
    def path(self) -> str:
        return self._path

    def _read_cell(self, index: int) -> bytes:
        self._file.seek(index * self._record_size)
        return self._file.read(self._record_size)

    def _write_cell(self, index: int, payload: bytes) -> None:
        self._file.seek(index * self._record_size)
        self._file.write(payload)

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "FileArray":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
