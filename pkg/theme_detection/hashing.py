from pathlib import Path
from typing import Iterable

from nacl.hashlib import blake2b

DIGEST_SIZE = 32
CHUNK_SIZE = 1 << 20


class ContentHasher:
    """Incremental BLAKE2b-256 over bytes, strings and files."""

    def __init__(self) -> None:
        self._state = blake2b(digest_size=DIGEST_SIZE)

    def update(self, data: bytes | str) -> "ContentHasher":
        if isinstance(data, str):
            data = data.encode()

        # Length prefix keeps ("ab", "c") and ("a", "bc") apart.
        self._state.update(len(data).to_bytes(8, "little"))
        self._state.update(data)
        return self

    def update_file(self, path: Path | str) -> "ContentHasher":
        with open(path, "rb") as file:
            while chunk := file.read(CHUNK_SIZE):
                self._state.update(chunk)
        return self

    def hexdigest(self) -> str:
        return self._state.hexdigest()


def digest_bytes(data: bytes | str) -> str:
    """Hex digest of a single payload."""

    if isinstance(data, str):
        data = data.encode()

    state = blake2b(digest_size=DIGEST_SIZE)
    state.update(data)
    return state.hexdigest()


def digest_file(path: Path | str) -> str:
    """Hex digest of file content. Equal content gives equal digests regardless of path."""

    state = blake2b(digest_size=DIGEST_SIZE)
    with open(path, "rb") as file:
        while chunk := file.read(CHUNK_SIZE):
            state.update(chunk)
    return state.hexdigest()


def digest_parts(parts: Iterable[bytes | str]) -> str:
    hasher = ContentHasher()
    for part in parts:
        hasher.update(part)
    return hasher.hexdigest()
