"""Clients for the external embedding and LLM services.

Every network call in the package goes through this module. Each service
has an HTTP backend (JSON over POST) and a deterministic stub so the whole
pipeline can run offline.

Wire formats
------------
embedding  POST {"texts": [...], "task_instruction": "..."}
           -> {"vectors": [[float, ...], ...], "dim": int}
keywords   POST {"title", "abstract", "n_keywords", "prompt"} -> {"text": "kw1, kw2, ..."}
verifier   POST {"prompt"} -> {"text": "{\"clusters\": [[1, 2]]}"}
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import AuthorMention
from .errors import ContractError, TransportError, VerifierUnavailable
from .lexical import tokenize

log = logging.getLogger(__name__)

QUERY_INSTRUCTION = (
    "Given a submission title and abstract, retrieve reviewers whose expertise "
    "profile matches and who are familiar with the work."
)
REVIEWER_INSTRUCTION = "Given a reviewer profile, retrieve papers that match the reviewer's expertise."

# Pinned: changing this list changes every stub keyword profile.
STOPWORDS = frozenset("""
a about after all also an and any are as at be been but by can do for from
has have in into is it its more not of on or our such than that the their
these this to using via was we were which while will with how
""".split())

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class EmbeddingRequest:
    texts: tuple[str, ...]
    task_instruction: str = ""


@dataclass(frozen=True)
class EmbeddingResponse:
    vectors: np.ndarray  # (len(texts), dim) float64
    dim: int


@dataclass(frozen=True)
class KeywordRequest:
    title: str
    abstract: str
    n_keywords: int = 5


@dataclass(frozen=True)
class KeywordResponse:
    keywords: tuple[str, ...]


@dataclass
class ClientConfig:
    embedding_url: str | None = None
    keyword_url: str | None = None
    auth_token: str | None = None
    retries: int = 2
    timeout: float = 30.0
    max_in_flight: int = 4
    backoff: float = 0.5
    prompt_dir: str | None = None

    @classmethod
    def from_env(cls, environ=None) -> "ClientConfig":
        env = os.environ if environ is None else environ
        cfg = cls(
            embedding_url=env.get("REVRANK_EMBEDDING_URL"),
            keyword_url=env.get("REVRANK_KEYWORD_URL"),
            auth_token=env.get("REVRANK_AUTH_TOKEN"),
            prompt_dir=env.get("REVRANK_PROMPT_DIR"),
        )
        if "REVRANK_RETRIES" in env:
            cfg.retries = int(env["REVRANK_RETRIES"])
        if "REVRANK_TIMEOUT" in env:
            cfg.timeout = float(env["REVRANK_TIMEOUT"])
        return cfg


def load_template(name: str, prompt_dir: str | None = None) -> str:
    if prompt_dir:
        return Path(prompt_dir, name).read_text(encoding="utf-8")
    return resources.files("revrank").joinpath("templates", name).read_text(encoding="utf-8")


def render_keyword_prompt(template: str, title: str, abstract: str, n: int) -> str:
    return template.replace("{title}", title).replace("{abstract}", abstract).replace("{N}", str(n))


def parse_keyword_reply(reply: str, n_keywords: int | None = None) -> list[str]:
    keywords = [part.strip() for part in reply.split(",")]
    keywords = [k for k in keywords if k]
    if not keywords:
        raise ContractError("keyword reply holds no comma-separated keywords", raw=reply)
    if n_keywords is not None and len(keywords) > n_keywords:
        log.debug("keyword reply had %d items, keeping %d", len(keywords), n_keywords)
        keywords = keywords[:n_keywords]
    return keywords


def validate_embeddings(payload, n_texts: int, expected_dim: int | None = None) -> EmbeddingResponse:
    if not isinstance(payload, dict) or "vectors" not in payload:
        raise ContractError("embedding response lacks 'vectors'", raw=payload)
    try:
        vectors = np.asarray(payload["vectors"], dtype=np.float64)
    except (TypeError, ValueError):
        raise ContractError("embedding vectors are not a numeric matrix", raw=payload) from None
    if vectors.ndim != 2 or vectors.shape[0] != n_texts:
        raise ContractError(f"expected {n_texts} vectors, got shape {vectors.shape}", raw=payload)
    dim = payload.get("dim", vectors.shape[1])
    if not isinstance(dim, int) or dim <= 0 or vectors.shape[1] != dim:
        raise ContractError(f"vector length {vectors.shape[1]} disagrees with dim {dim!r}", raw=payload)
    if expected_dim is not None and dim != expected_dim:
        raise ContractError(f"service dim {dim} != configured dim {expected_dim}", raw=payload)
    if not np.all(np.isfinite(vectors)):
        raise ContractError("embedding response contains NaN or Inf", raw=payload)
    return EmbeddingResponse(vectors, dim)


# -- transport ---------------------------------------------------------------


class _Malformed(Exception):
    pass


class HttpTransport:
    """POSTs JSON, retrying network failures and undecodable replies."""

    def __init__(self, config: ClientConfig):
        self.config = config
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def post(self, url: str, body: dict) -> dict:
        if not url:
            raise TransportError("no endpoint configured")
        data = json.dumps(body).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        attempts = self.config.retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    req = urllib.request.Request(url, data=data, headers=headers, method="POST")
                    with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                        raw = resp.read()
                try:
                    return json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, ValueError) as exc:
                    raise _Malformed(f"undecodable reply: {exc}") from None
            except (urllib.error.URLError, OSError, _Malformed) as exc:
                last = exc
                log.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1, attempts, exc)
        raise TransportError(f"POST {url} failed after {attempts} attempt(s): {last}")


# -- embeddings --------------------------------------------------------------


class Embedder(Protocol):
    dim: int

    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse: ...


class StubEmbedder:
    """Hashed bag of tokens, L2-normalized. Ignores the task instruction.

    Each token adds 1 to bucket ``fnv1a_64(token) % dim``. A text without
    tokens falls back to the bucket of the empty string so every vector is
    a unit vector.
    """

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        tokens = tokenize(text) or [""]
        for token, count in Counter(tokens).items():
            v[fnv1a_64(token.encode("utf-8")) % self.dim] += count
        return v / math.sqrt(float(v @ v))

    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse:
        if not req.texts:
            raise ValueError("no texts to embed")
        return EmbeddingResponse(np.stack([self.vector(t) for t in req.texts]), self.dim)


class HttpEmbedder:
    def __init__(self, config: ClientConfig, dim: int | None = None, transport: HttpTransport | None = None):
        self.config = config
        self.dim = dim
        self.transport = transport or HttpTransport(config)

    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse:
        if not req.texts:
            raise ValueError("no texts to embed")
        payload = self.transport.post(
            self.config.embedding_url,
            {"texts": list(req.texts), "task_instruction": req.task_instruction},
        )
        resp = validate_embeddings(payload, len(req.texts), self.dim)
        if self.dim is None:
            self.dim = resp.dim
        return resp


def embed(req: EmbeddingRequest, backend: Embedder) -> EmbeddingResponse:
    return backend.embed(req)


def embed_texts(backend: Embedder, texts: Sequence[str], instruction: str = "", batch_size: int = 64) -> np.ndarray:
    chunks = [
        backend.embed(EmbeddingRequest(tuple(texts[i:i + batch_size]), instruction)).vectors
        for i in range(0, len(texts), batch_size)
    ]
    if not chunks:
        return np.zeros((0, backend.dim or 0))
    return np.concatenate(chunks)


# -- keywords ----------------------------------------------------------------


class KeywordExtractor(Protocol):
    def extract(self, req: KeywordRequest) -> KeywordResponse: ...


class StubKeywordExtractor:
    """Most frequent non-stopword tokens of title + abstract; ties alphabetical."""

    def extract(self, req: KeywordRequest) -> KeywordResponse:
        if not (req.title.strip() or req.abstract.strip()):
            raise ValueError("title and abstract are both empty")
        counts = Counter(t for t in tokenize(f"{req.title} {req.abstract}") if t not in STOPWORDS)
        ranked = sorted(counts, key=lambda t: (-counts[t], t))[: req.n_keywords]
        if not ranked:
            raise ContractError("no keyword candidates in text", raw=f"{req.title} {req.abstract}")
        return KeywordResponse(tuple(ranked))


class HttpKeywordExtractor:
    def __init__(self, config: ClientConfig, transport: HttpTransport | None = None):
        self.config = config
        self.transport = transport or HttpTransport(config)
        self.template = load_template("keyword_prompt.txt", config.prompt_dir)

    def extract(self, req: KeywordRequest) -> KeywordResponse:
        if not (req.title.strip() or req.abstract.strip()):
            raise ValueError("title and abstract are both empty")
        prompt = render_keyword_prompt(self.template, req.title, req.abstract, req.n_keywords)
        payload = self.transport.post(self.config.keyword_url, {
            "title": req.title,
            "abstract": req.abstract,
            "n_keywords": req.n_keywords,
            "prompt": prompt,
        })
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise ContractError("keyword response lacks a 'text' string", raw=payload)
        return KeywordResponse(tuple(parse_keyword_reply(payload["text"], req.n_keywords)))


def extract_keywords(req: KeywordRequest, backend: KeywordExtractor) -> KeywordResponse:
    return backend.extract(req)


# -- identity verification ---------------------------------------------------

_ORG_NOISE = frozenset({"of", "the", "and", "for", "at", "inc", "ltd", "llc", "co", "corp",
                        "corporation", "group", "company", "gmbh"})
_DEPT_WORDS = frozenset({"dept", "department", "school", "faculty", "lab", "laboratory",
                         "division", "college", "cs", "ee", "computer", "science", "engineering",
                         "electrical", "center", "centre", "institute", "university"})


def _org_tokens(affiliation: str) -> list[str]:
    return [t for t in tokenize(affiliation) if t not in _ORG_NOISE]


def same_institution(a: str, b: str) -> bool:
    """Heuristic institution equivalence used by the stub verifier.

    Equal after dropping filler and corporate suffixes, an acronym of the
    other's words ("MIT" vs "Massachusetts Institute of Technology"), or
    one's distinctive words contained in the other's ("Stanford" vs
    "Dept. of CS, Stanford").
    """
    ta, tb = _org_tokens(a), _org_tokens(b)
    if not ta or not tb:
        return False
    if ta == tb:
        return True
    for short, long in ((ta, tb), (tb, ta)):
        if len(short) == 1 and len(long) > 1 and short[0] == "".join(w[0] for w in long):
            return True
    core_a = set(ta) - _DEPT_WORDS
    core_b = set(tb) - _DEPT_WORDS
    return bool(core_a and core_b) and (core_a <= core_b or core_b <= core_a)


class StubVerifier:
    def verify(self, a: AuthorMention, b: AuthorMention) -> bool:
        if not a.affiliation or not b.affiliation:
            return False
        return same_institution(a.affiliation, b.affiliation)


class HttpVerifier:
    """Asks the LLM service to cluster the two instances by institution."""

    def __init__(self, config: ClientConfig, transport: HttpTransport | None = None):
        self.config = config
        self.transport = transport or HttpTransport(config)
        self.template = load_template("disambiguation_prompt.txt", config.prompt_dir)

    def verify(self, a: AuthorMention, b: AuthorMention) -> bool:
        instances = [
            {"id": 1, "name": a.name, "affiliation": a.affiliation or ""},
            {"id": 2, "name": b.name, "affiliation": b.affiliation or ""},
        ]
        prompt = self.template.replace("{instances}", json.dumps(instances, ensure_ascii=False))
        try:
            payload = self.transport.post(self.config.keyword_url, {"prompt": prompt})
            clusters = json.loads(payload["text"])["clusters"]
            for cluster in clusters:
                ids = {int(i) for i in cluster}
                if 1 in ids:
                    return 2 in ids
        except TransportError as exc:
            raise VerifierUnavailable(str(exc)) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise VerifierUnavailable(f"unusable verifier reply: {exc}") from None
        raise VerifierUnavailable("verifier reply omitted instance 1")
