import logging
import os
import threading
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import Field, ValidationError

from theme_detection.hashing import digest_bytes
from theme_detection.misc import dumps_stable
from theme_detection.model.model import BaseModel

LOG = logging.getLogger(__name__)

ENTRY_NAME = "entry.json"


class Stage(str, Enum):
    INGEST = "ingest"
    REPRESENT = "represent"
    ENCODE = "encode"
    CLUSTER = "cluster"
    EVALUATE = "evaluate"


class CacheEntry(BaseModel):
    """Index of one cached stage result. Written after its payloads, so it marks completion."""

    stage: Stage = Field(..., description="Stage that produced the payloads.")
    key: str = Field(..., description="Stage cache key.")
    digests: dict[str, str] = Field(..., description="Payload name to content digest.")
    meta: dict[str, Any] = Field(default_factory=dict, description="Small stage outputs.")

    @property
    def digest(self) -> str:
        """Digest over all payload digests, used as the upstream digest of later stages."""

        return digest_bytes(dumps_stable(self.digests, indent=None))


class ArtifactStorage(ABC):
    def __init__(self) -> None:
        self.lock = threading.Lock()

    @staticmethod
    def gen_key(stage: Stage, key: str) -> str:
        return f"{stage.value}:{key}"

    @abstractmethod
    def read(self, stage: Stage, key: str, name: str) -> bytes:
        """Payload bytes. Raises KeyError when missing."""

    @abstractmethod
    def write(self, stage: Stage, key: str, name: str, data: bytes) -> None: ...

    @abstractmethod
    def delete(self, stage: Stage, key: str) -> None: ...

    def store(
        self,
        stage: Stage,
        key: str,
        payloads: dict[str, bytes],
        meta: dict[str, Any] | None = None,
    ) -> CacheEntry:
        """Store stage payloads and their entry."""

        entry = CacheEntry(
            stage=stage,
            key=key,
            digests={name: digest_bytes(data) for name, data in sorted(payloads.items())},
            meta=meta or {},
        )

        with self.lock:
            for name, data in payloads.items():
                self.write(stage, key, name, data)
            self.write(stage, key, ENTRY_NAME, dumps_stable(entry.model_dump(mode="json")).encode())

        LOG.debug("Stored %s %s (%d payloads)", stage.value, key[:12], len(payloads))
        return entry

    def load(self, stage: Stage, key: str) -> tuple[CacheEntry, dict[str, bytes]] | None:
        """Cached entry and payloads, or None on a miss.

        Payloads are re-hashed on read. An entry whose payloads do not match their digests is
        deleted and reported as a miss.
        """

        with self.lock:
            try:
                entry = CacheEntry.model_validate_json(self.read(stage, key, ENTRY_NAME))
                payloads = {name: self.read(stage, key, name) for name in entry.digests}
            except KeyError:
                return None
            except ValidationError:
                LOG.warning("Unreadable cache entry %s, recomputing", self.gen_key(stage, key))
                self.delete(stage, key)
                return None

            stale = [
                name for name, data in payloads.items() if digest_bytes(data) != entry.digests[name]
            ]
            if stale:
                LOG.warning(
                    "Stale cache entry %s (%s), recomputing",
                    self.gen_key(stage, key),
                    ", ".join(sorted(stale)),
                )
                self.delete(stage, key)
                return None

        LOG.debug("Cache hit %s", self.gen_key(stage, key))
        return entry, payloads


class DictArtifactStorage(ArtifactStorage):
    def __init__(self) -> None:
        super().__init__()
        self.storage: dict[str, dict[str, bytes]] = {}

    def read(self, stage: Stage, key: str, name: str) -> bytes:
        return self.storage[self.gen_key(stage, key)][name]

    def write(self, stage: Stage, key: str, name: str, data: bytes) -> None:
        self.storage.setdefault(self.gen_key(stage, key), {})[name] = data

    def delete(self, stage: Stage, key: str) -> None:
        self.storage.pop(self.gen_key(stage, key), None)


class FileArtifactStorage(ArtifactStorage):
    """Entries under `<root>/<stage>/<key>/`, one file per payload."""

    def __init__(self, root: Path | str) -> None:
        super().__init__()
        self.root = Path(root)

    def entry_dir(self, stage: Stage, key: str) -> Path:
        return self.root / stage.value / key

    def read(self, stage: Stage, key: str, name: str) -> bytes:
        try:
            return (self.entry_dir(stage, key) / name).read_bytes()
        except FileNotFoundError as e:
            raise KeyError(self.gen_key(stage, key)) from e

    def write(self, stage: Stage, key: str, name: str, data: bytes) -> None:
        path = self.entry_dir(stage, key) / name
        path.parent.mkdir(parents=True, exist_ok=True)

        tmp = path.with_name(f".{name}.tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)

    def delete(self, stage: Stage, key: str) -> None:
        directory = self.entry_dir(stage, key)
        if not directory.is_dir():
            return
        for path in directory.iterdir():
            path.unlink()
        directory.rmdir()
