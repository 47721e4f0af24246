"""Quality backends: the five-operation contract, a seeded simulated oracle,
and a JSON-over-HTTP client (plus a small server adapter for loopback use).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import BackendError, InputError, ProtocolError, UnknownRefError
from .kernels import ndtr

log = logging.getLogger(__name__)

PROB_CLIP = 1e-6
EMBED_DIM = 64
RBF_BANDWIDTH = 0.5

LEVEL_WORDS = {1: "bad", 2: "poor", 3: "fair", 4: "good", 5: "excellent"}
WORD_LEVELS = {w: k for k, w in LEVEL_WORDS.items()}
CONTENT_VOCAB = (
    "portrait", "landscape", "architecture", "street", "food", "animal",
    "plant", "sky", "water", "night", "indoor", "vehicle", "text", "crowd",
    "macro", "pattern",
)
N_TAGS = 3
BOILERPLATE = (
    "Let's think step by step.",
    "Let's tackle this step by step.",
    "First, I will look at the whole image carefully.",
)

_LEVEL_RE = re.compile(r"\b(" + "|".join(LEVEL_WORDS.values()) + r")\b", re.IGNORECASE)
_CONTENT_RE = re.compile(r"content:\s*([^.]*)", re.IGNORECASE)
_QUALITY_RE = re.compile(r"quality level:\s*(\w+)", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class ImageRef:
    id: str
    payload: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ImageRef":
        return cls(str(d["id"]), str(d.get("payload", "")))


@dataclass(frozen=True)
class Assessment:
    reasoning: str
    raw_score: float

    def __post_init__(self):
        if not math.isfinite(self.raw_score):
            raise ProtocolError(f"non-finite raw score {self.raw_score!r}")


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InputError("embedding must be a nonempty vector")
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-6:
            raise InputError("embedding must have unit L2 norm")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def normalized(cls, values) -> "Embedding":
        v = np.asarray(values, dtype=float)
        norm = float(np.linalg.norm(v))
        if not math.isfinite(norm) or norm == 0.0:
            raise InputError("cannot normalize a zero or non-finite vector")
        return cls(v / norm)

    def __eq__(self, other):
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True, eq=False)
class SyntheticItem:
    id: str
    q: float
    content: np.ndarray

    def __post_init__(self):
        if not 1.0 <= self.q <= 5.0:
            raise InputError(f"latent quality {self.q} outside [1, 5]")

    @property
    def tags(self) -> list[str]:
        order = sorted(range(len(self.content)), key=lambda k: (-self.content[k], k))
        return [CONTENT_VOCAB[k % len(CONTENT_VOCAB)] for k in order[:N_TAGS]]

    def to_dict(self) -> dict:
        return {"id": self.id, "q": self.q, "content": [float(c) for c in self.content]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticItem":
        return cls(str(d["id"]), float(d["q"]), np.asarray(d["content"], dtype=float))


@dataclass(frozen=True)
class SimBackendConfig:
    quantization_levels: int | None = 5  # None: continuous scores
    score_noise: float = 0.5
    comparator_scale: float = 1.0
    comparator_noise: float = 0.0  # beta concentration; 0 disables
    embed_quality_weight: float = 0.5
    rng_seed: int = 0
    embed_dim: int = EMBED_DIM
    prob_clip: float = PROB_CLIP

    def __post_init__(self):
        if self.quantization_levels is not None and self.quantization_levels < 1:
            raise InputError("quantization_levels must be a positive integer")
        if self.score_noise < 0 or self.comparator_noise < 0:
            raise InputError("noise parameters must be non-negative")
        if self.comparator_scale <= 0:
            raise InputError("comparator_scale must be positive")
        if not 0.0 <= self.embed_quality_weight <= 1.0:
            raise InputError("embed_quality_weight must lie in [0, 1]")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise InputError("embed_dim must be an even integer >= 2")


class QualityBackend(Protocol):
    def assess(self, ref: ImageRef) -> Assessment: ...
    def compare(self, a: ImageRef, b: ImageRef) -> float: ...
    def summarize(self, reasoning: str) -> str: ...
    def reflect(self, ref: ImageRef, reasoning: str, initial: float, target: float) -> str: ...
    def embed(self, text: str) -> Embedding: ...


def level_of(score: float) -> int:
    """Nearest integer quality level in 1..5."""
    return int(min(max(math.floor(score + 0.5), 1), 5))


def clip_probability(p: float, eps: float = PROB_CLIP) -> float:
    return min(max(p, eps), 1.0 - eps)


def derived_rng(seed: int, *keys) -> np.random.Generator:
    """Generator that depends only on ``seed`` and ``keys``."""
    digest = hashlib.blake2b("\x1f".join(map(str, keys)).encode(), digest_size=8).digest()
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])


def render_description(tags: Sequence[str], level: int) -> str:
    word = LEVEL_WORDS[level]
    return (f"Content: {', '.join(tags)}. Texture detail and distortions suggest {word} quality. "
            f"Quality level: {word}.")


def strip_boilerplate(text: str) -> str:
    out = text.strip()
    changed = True
    while changed:
        changed = False
        for phrase in BOILERPLATE:
            if out.startswith(phrase):
                out = out[len(phrase):].lstrip()
                changed = True
    return out


def parse_description(text: str) -> tuple[list[str], int | None]:
    """Content tags and quality level mentioned in a description."""
    tags: list[str] = []
    m = _CONTENT_RE.search(text)
    if m:
        tags = [t.strip().lower() for t in m.group(1).split(",") if t.strip()]
    level = None
    m = _QUALITY_RE.search(text)
    if m and m.group(1).lower() in WORD_LEVELS:
        level = WORD_LEVELS[m.group(1).lower()]
    else:
        words = _LEVEL_RE.findall(text)
        if words:
            level = WORD_LEVELS[words[-1].lower()]
    return tags, level


def _hash_bucket(token: str, dim: int) -> tuple[int, float]:
    h = hashlib.blake2b(token.encode(), digest_size=8).digest()
    return int.from_bytes(h[:4], "little") % dim, (1.0 if h[4] & 1 else -1.0)


def rbf_profile(level: float, dim: int, bandwidth: float = RBF_BANDWIDTH) -> np.ndarray:
    centers = np.linspace(1.0, 5.0, dim)
    return np.exp(-((level - centers) ** 2) / (2.0 * bandwidth ** 2))


def embed_description(text: str, quality_weight: float, dim: int = EMBED_DIM) -> Embedding:
    """Deterministic text embedding: hashed content tags and an RBF code of the level."""
    if not text or not text.strip():
        raise InputError("cannot embed empty text")
    half = dim // 2
    tags, level = parse_description(text)
    content = np.zeros(half)
    tokens = tags if tags else ([] if level is not None else _TOKEN_RE.findall(text.lower()))
    for tok in tokens:
        k, sign = _hash_bucket(tok, half)
        content[k] += sign
    quality = rbf_profile(level, half) if level is not None else np.zeros(half)
    cn, qn = np.linalg.norm(content), np.linalg.norm(quality)
    if cn > 0:
        content /= cn
    if qn > 0:
        quality /= qn
    vec = np.concatenate([math.sqrt(1.0 - quality_weight) * content,
                          math.sqrt(quality_weight) * quality])
    if not np.any(vec):
        # the weighted-out block was the only informative one
        vec = np.concatenate([content, quality])
    if not np.any(vec):
        raise InputError(f"text carries no embeddable tokens: {text!r}")
    return Embedding.normalized(vec)


class SimulatedBackend:
    """Seeded stand-in for a vision-language scorer over synthetic items.

    Scores are quantized to a few levels (the collapse being corrected), the
    comparator follows the probit preference model, and every output is a
    pure function of its inputs and ``config.rng_seed``.
    """

    def __init__(self, items: Iterable[SyntheticItem] | Mapping[str, SyntheticItem],
                 config: SimBackendConfig | None = None):
        if isinstance(items, Mapping):
            items = items.values()
        self.items: dict[str, SyntheticItem] = {}
        for it in items:
            if it.id in self.items:
                raise InputError(f"duplicate synthetic item id {it.id!r}")
            self.items[it.id] = it
        self.config = config or SimBackendConfig()
        L = self.config.quantization_levels
        if L is None:
            self._levels = None
        elif L == 1:
            self._levels = np.array([3.0])
        else:
            self._levels = np.linspace(1.0, 5.0, L)

    def resolve(self, ref: ImageRef) -> SyntheticItem:
        item = self.items.get(ref.payload) or self.items.get(ref.id)
        if item is None:
            raise UnknownRefError(f"unknown image ref {ref.id!r}")
        return item

    def quantize(self, value: float) -> float:
        value = min(max(value, 1.0), 5.0)
        if self._levels is None:
            return value
        return float(self._levels[int(np.argmin(np.abs(self._levels - value)))])

    def assess(self, ref: ImageRef) -> Assessment:
        item = self.resolve(ref)
        cfg = self.config
        noise = derived_rng(cfg.rng_seed, "assess", item.id).standard_normal() if cfg.score_noise else 0.0
        raw = self.quantize(item.q + cfg.score_noise * noise)
        reasoning = f"{BOILERPLATE[0]} {BOILERPLATE[2]} " + render_description(item.tags, level_of(raw))
        return Assessment(reasoning, raw)

    def compare(self, a: ImageRef, b: ImageRef) -> float:
        qa, qb = self.resolve(a).q, self.resolve(b).q
        cfg = self.config
        p = clip_probability(ndtr((qa - qb) / cfg.comparator_scale), cfg.prob_clip)
        if cfg.comparator_noise > 0:
            rng = derived_rng(cfg.rng_seed, "compare", a.id, b.id)
            p = float(rng.beta(cfg.comparator_noise * p, cfg.comparator_noise * (1.0 - p)))
        return clip_probability(p, cfg.prob_clip)

    def summarize(self, reasoning: str) -> str:
        if not reasoning.strip():
            log.warning("summarize called with empty reasoning")
            return ""
        return strip_boilerplate(reasoning)

    def reflect(self, ref: ImageRef, reasoning: str, initial: float, target: float) -> str:
        self.resolve(ref)
        desc = self.summarize(reasoning)
        if target == initial:
            return desc
        word = LEVEL_WORDS[level_of(target)]
        revised, n = _LEVEL_RE.subn(word, desc)
        if n == 0:
            revised = f"{desc} Quality level: {word}.".strip()
        return revised

    def embed(self, text: str) -> Embedding:
        return embed_description(text, self.config.embed_quality_weight, self.config.embed_dim)


def generate_world(n: int, seed: int, content_dim: int = len(CONTENT_VOCAB)) -> list[SyntheticItem]:
    """``n`` items with latent quality uniform on [1, 5] and random unit content vectors."""
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    q = rng.uniform(1.0, 5.0, n)
    c = rng.standard_normal((n, content_dim))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return [SyntheticItem(f"item-{k}", float(q[k]), c[k]) for k in range(n)]


# --- remote backend -------------------------------------------------------

class ExternalBackend:
    """Client for a quality service speaking JSON over HTTP, one endpoint per operation."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 2,
                 prob_clip: float = PROB_CLIP, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.prob_clip = prob_clip
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, op: str, body: dict) -> dict:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(f"/{op}", json=body)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code >= 500:
                last = BackendError(f"/{op}: HTTP {resp.status_code}")
                continue
            if resp.status_code == 404:
                raise UnknownRefError(f"/{op}: {resp.text.strip() or 'not found'}")
            if resp.status_code >= 400:
                raise BackendError(f"/{op}: HTTP {resp.status_code}: {resp.text.strip()}")
            try:
                data = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"/{op}: response is not JSON") from exc
            if not isinstance(data, dict):
                raise ProtocolError(f"/{op}: response must be a JSON object")
            return data
        raise BackendError(f"/{op}: giving up after {self.retries + 1} attempts: {last}")

    @staticmethod
    def _field(data: dict, key: str, op: str):
        if key not in data:
            raise ProtocolError(f"/{op}: response lacks {key!r}")
        return data[key]

    def assess(self, ref: ImageRef) -> Assessment:
        data = self._post("assess", {"image_ref": ref.to_dict()})
        raw = self._field(data, "raw_score", "assess")
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            raise ProtocolError("/assess: raw_score must be a number")
        return Assessment(str(self._field(data, "reasoning", "assess")), float(raw))

    def compare(self, a: ImageRef, b: ImageRef) -> float:
        data = self._post("compare", {"image_a": a.to_dict(), "image_b": b.to_dict()})
        p = self._field(data, "p_a", "compare")
        if not isinstance(p, (int, float)) or isinstance(p, bool) or not 0.0 < p < 1.0:
            raise ProtocolError(f"/compare: p_a must lie strictly inside (0, 1), got {p!r}")
        return clip_probability(float(p), self.prob_clip)

    def summarize(self, reasoning: str) -> str:
        if not reasoning.strip():
            log.warning("summarize called with empty reasoning")
            return ""
        return str(self._field(self._post("summarize", {"reasoning": reasoning}), "description", "summarize"))

    def reflect(self, ref: ImageRef, reasoning: str, initial: float, target: float) -> str:
        body = {"image_ref": ref.to_dict(), "reasoning": reasoning,
                "initial_score": initial, "target_score": target}
        return str(self._field(self._post("reflect", body), "description", "reflect"))

    def embed(self, text: str) -> Embedding:
        if not text:
            raise InputError("cannot embed empty text")
        vec = self._field(self._post("embed", {"text": text}), "vector", "embed")
        try:
            arr = np.asarray(vec, dtype=float)
            return Embedding.normalized(arr)
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"/embed: bad vector: {exc}") from exc


def _dispatch(backend: QualityBackend, op: str, body: dict) -> dict:
    if op == "assess":
        a = backend.assess(ImageRef.from_dict(body["image_ref"]))
        return {"reasoning": a.reasoning, "raw_score": a.raw_score}
    if op == "compare":
        return {"p_a": backend.compare(ImageRef.from_dict(body["image_a"]),
                                       ImageRef.from_dict(body["image_b"]))}
    if op == "summarize":
        return {"description": backend.summarize(body["reasoning"])}
    if op == "reflect":
        return {"description": backend.reflect(ImageRef.from_dict(body["image_ref"]), body["reasoning"],
                                               float(body["initial_score"]), float(body["target_score"]))}
    if op == "embed":
        return {"vector": backend.embed(body["text"]).values.tolist()}
    raise KeyError(op)


def make_server(backend: QualityBackend, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """HTTP server exposing ``backend`` over the wire protocol.

    Call ``serve_forever`` (e.g. on a daemon thread) and ``shutdown`` when done.
    """

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug(fmt, *args)

        def _reply(self, status: int, payload) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            op = self.path.strip("/")
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                self._reply(200, _dispatch(backend, op, body))
            except UnknownRefError as exc:
                self._reply(404, {"error": str(exc)})
            except KeyError as exc:
                self._reply(400 if op in {"assess", "compare", "summarize", "reflect", "embed"} else 404,
                            {"error": f"missing {exc}"})
            except (ValueError, InputError) as exc:
                self._reply(400, {"error": str(exc)})

    return ThreadingHTTPServer((host, port), Handler)


def start_server(backend: QualityBackend, host: str = "127.0.0.1", port: int = 0):
    """Start ``make_server`` on a daemon thread; returns ``(server, base_url)``."""
    server = make_server(backend, host, port)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, f"http://{server.server_address[0]}:{server.server_address[1]}"
