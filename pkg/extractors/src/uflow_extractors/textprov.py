"""Text-embedding providers producing 1536-d vectors.

The toy provider is an independent implementation of the documented
hash-bucket algorithm and must stay bit-for-bit interchangeable with the
main library's embedder:

1. lowercase, tokenize as maximal runs of Unicode alphanumerics
   (``re.findall(r"[^\\W_]+", text.lower())``);
2. per token ``h = sha256(utf-8)``, bucket ``int.from_bytes(h[:8], "little")
   % 1536``, sign +1 if ``h[8]`` is even else -1;
3. accumulate signed counts in float64, L2-normalize in float64, cast to
   float32; no tokens -> unit vector with 1.0 at index 0.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
import requests

TEXT_DIM = 1536


class ProviderError(RuntimeError):
    pass


class TextProvider:
    name = "abstract"
    dim = TEXT_DIM

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class ToyTextProvider(TextProvider):
    name = "toy"

    def embed(self, text: str) -> np.ndarray:
        acc = np.zeros(TEXT_DIM, dtype=np.float64)
        tokens = re.findall(r"[^\W_]+", text.lower())
        if not tokens:
            out = np.zeros(TEXT_DIM, dtype=np.float32)
            out[0] = 1.0
            return out
        for token in tokens:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:8], "little") % TEXT_DIM
            acc[bucket] += 1.0 if digest[8] % 2 == 0 else -1.0
        norm = float(np.sqrt(np.dot(acc, acc)))
        if norm == 0.0:
            out = np.zeros(TEXT_DIM, dtype=np.float32)
            out[0] = 1.0
            return out
        return (acc / norm).astype(np.float32)


class HttpTextProvider(TextProvider):
    name = "http"

    def __init__(self, url: str, timeout: float = 10.0):
        if not url:
            raise ProviderError("http text provider needs a URL")
        self.url = url
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = requests.post(self.url, json={"text": text}, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ProviderError(f"text provider failed: {exc}") from exc
        vec = np.asarray(payload.get("embedding"), dtype=np.float32)
        if vec.shape != (TEXT_DIM,):
            raise ProviderError(
                f"provider dimension {vec.shape} does not match ({TEXT_DIM},)"
            )
        return vec


def get_text_provider(name: str, url: str | None = None) -> TextProvider:
    if name == "toy":
        return ToyTextProvider()
    if name == "http":
        return HttpTextProvider(url or "")
    raise ProviderError(f"unknown text provider {name!r}")


def embed_texts(descriptions: list[str], provider: TextProvider) -> np.ndarray:
    """Embed every description; empty descriptions are an error."""
    out = np.zeros((len(descriptions), TEXT_DIM), dtype=np.float32)
    for i, text in enumerate(descriptions):
        if not text or not text.strip():
            raise ProviderError(f"description {i} is empty")
        vec = provider.embed(text)
        if vec.shape != (TEXT_DIM,):
            raise ProviderError(
                f"provider {provider.name!r} returned {vec.shape}, "
                f"expected ({TEXT_DIM},)"
            )
        out[i] = vec
    return out
