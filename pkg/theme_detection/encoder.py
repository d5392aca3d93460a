import asyncio
import logging
import ssl
from typing import Sequence

import certifi
import httpx
import numpy as np
from pydantic import Field, ValidationError

from theme_detection.errors import DataError
from theme_detection.hashing import digest_bytes
from theme_detection.model.model import BaseModel
from theme_detection.model.vectors import VectorSet

LOG = logging.getLogger(__name__)


class EncoderUnavailableError(DataError):
    def __init__(self, failed_batches: list[int], cause: BaseException | None = None) -> None:
        super().__init__(f"encoder unavailable, failed batches: {failed_batches}")
        self.failed_batches = failed_batches
        self.cause = cause


class EncoderResponseError(DataError):
    pass


class EncodeRequest(BaseModel):
    texts: list[str] = Field(..., description="Texts to encode")


class EncodeResponse(BaseModel):
    vectors: list[list[float]] = Field(..., description="One vector per request text")


class EncoderClient:
    """JSON-over-HTTP sentence encoder client.

    Texts are de-duplicated by content hash before batching, so identical texts share one vector.
    Batches run concurrently up to `max_in_flight`; transient failures are retried with
    exponential backoff.
    """

    RETRY_STATUS: frozenset[int] = frozenset({429, 500, 502, 503, 504})
    """Statuses worth retrying."""

    @property
    def request_headers(self) -> dict[str, str]:
        return {
            "Content-Type": "application/json",
            "Accept": "application/json",
        }

    def __init__(
        self,
        endpoint: str,
        batch_size: int = 64,
        timeout: float = 30.0,
        max_in_flight: int = 4,
        retries: int = 3,
        backoff: float = 0.5,
        transport: httpx.AsyncBaseTransport | None = None,
    ) -> None:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")

        self.endpoint = endpoint
        self.batch_size = batch_size
        self.timeout = timeout
        self.max_in_flight = max(1, max_in_flight)
        self.retries = max(0, retries)
        self.backoff = backoff
        self.transport = transport
        self.ssl_context = ssl.create_default_context(cafile=certifi.where())

        self.cache: dict[str, np.ndarray] = {}

    async def post_batch(
        self, client: httpx.AsyncClient, index: int, texts: list[str]
    ) -> np.ndarray:
        """Send one batch, retrying transient failures."""

        payload = EncodeRequest(texts=texts).model_dump(mode="json")
        attempt = 0

        while True:
            try:
                response = await client.post(self.endpoint, json=payload)
                if response.status_code in self.RETRY_STATUS:
                    raise httpx.HTTPStatusError(
                        f"retryable status {response.status_code}",
                        request=response.request,
                        response=response,
                    )
                response.raise_for_status()
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                retryable = (
                    not isinstance(e, httpx.HTTPStatusError)
                    or e.response.status_code in self.RETRY_STATUS
                )
                if not retryable or attempt >= self.retries:
                    LOG.error(
                        "Encoder batch %d failed after %d attempts: %s", index, attempt + 1, e
                    )
                    raise
                delay = self.backoff * 2**attempt
                attempt += 1
                LOG.warning(
                    "Encoder batch %d failed (%s), retry %d in %.2fs", index, e, attempt, delay
                )
                await asyncio.sleep(delay)

        try:
            vectors = EncodeResponse.model_validate_json(response.content).vectors
        except ValidationError as e:
            raise EncoderResponseError(f"batch {index}: malformed response") from e

        if len(vectors) != len(texts):
            raise EncoderResponseError(
                f"batch {index}: {len(vectors)} vectors for {len(texts)} texts"
            )
        if len({len(v) for v in vectors}) > 1:
            raise EncoderResponseError(f"batch {index}: vectors of different dimensions")

        LOG.debug("Encoder batch %d: %d texts", index, len(texts))
        return np.asarray(vectors, dtype=np.float64)

    async def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Vectors for `texts` in input order.

        :raises EncoderUnavailableError: Some batches exhausted their retries.
        :raises EncoderResponseError: The endpoint returned inconsistent dimensions.
        """

        keys = [digest_bytes(text) for text in texts]

        pending: dict[str, str] = {}
        for key, text in zip(keys, texts, strict=True):
            if key not in self.cache and key not in pending:
                pending[key] = text
        if len(pending) < len(texts):
            LOG.debug(
                "Encoder cache: %d of %d texts already known",
                len(texts) - len(pending),
                len(texts),
            )

        items = list(pending.items())
        batches = [items[i : i + self.batch_size] for i in range(0, len(items), self.batch_size)]
        semaphore = asyncio.Semaphore(self.max_in_flight)

        async with httpx.AsyncClient(
            headers=self.request_headers,
            timeout=self.timeout,
            transport=self.transport,
            verify=self.ssl_context,
        ) as client:

            async def run(index: int, batch: list[tuple[str, str]]) -> np.ndarray:
                async with semaphore:
                    return await self.post_batch(client, index, [text for _, text in batch])

            results = await asyncio.gather(
                *(run(index, batch) for index, batch in enumerate(batches)),
                return_exceptions=True,
            )

        failed = [i for i, result in enumerate(results) if isinstance(result, BaseException)]
        for result in results:
            if isinstance(result, EncoderResponseError):
                raise result
        if failed:
            cause = results[failed[0]]
            raise EncoderUnavailableError(
                failed, cause if isinstance(cause, BaseException) else None
            )

        dims = {self.cache[next(iter(self.cache))].shape[0]} if self.cache else set()
        dims |= {
            result.shape[1]
            for result in results
            if isinstance(result, np.ndarray) and result.size
        }
        if len(dims) > 1:
            raise EncoderResponseError(f"encoder returned vectors of dimensions {sorted(dims)}")

        for batch, result in zip(batches, results, strict=True):
            for (key, _), vector in zip(batch, result, strict=True):
                self.cache[key] = vector

        if not keys:
            return np.zeros((0, next(iter(dims), 0)), dtype=np.float64)
        return np.stack([self.cache[key] for key in keys])


def fetch_embeddings(
    endpoint: str,
    texts: Sequence[str],
    batch_size: int = 64,
    ids: Sequence[str] | None = None,
    client: EncoderClient | None = None,
    **kwargs,
) -> VectorSet:
    """Encode `texts` with a remote encoder into a VectorSet (ids default to row numbers)."""

    client = client or EncoderClient(endpoint, batch_size=batch_size, **kwargs)
    vectors = asyncio.run(client.embed(texts))
    ids = list(ids) if ids is not None else [str(i) for i in range(len(texts))]

    LOG.info("Fetched %d embeddings from %s", len(texts), endpoint)
    return VectorSet(ids=ids, vectors=vectors)
