"""
Chat/VQA model servers behind one client.

Wire format (JSON POST)::

    {"model": ..., "stream": false,
     "messages": [{"role": ..., "content": ..., "images": [<base64>]}],
     "options": {"temperature": ..., "seed": ..., "num_predict": ...}}
    -> {"message": {"content": ...}}

Responses are cached by a digest of the canonical request, one JSON file per
key. ``mock://`` endpoints are served in-process by ``MockTransport``.
"""
import base64
import binascii
import hashlib
import io
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Protocol, Tuple, Union

import requests
from PIL import Image, UnidentifiedImageError

from . import prompts
from .errors import (
    BackendError,
    BackendTimeoutError,
    InvalidRequestError,
    MalformedResponseError,
    NoRuleMatchedError,
    UpstreamError,
)
from .questions import BANK
from .settings import Settings

logger = logging.getLogger(__name__)


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    text: str
    images: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = Settings.TEMPERATURE
    seed: int = Settings.SEED
    max_tokens: int = Settings.MAX_TOKENS

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidRequestError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise InvalidRequestError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: Tuple[Message, ...]
    params: DecodingParams = DecodingParams()

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if sum(1 for m in self.messages if m.images) > 1:
            raise InvalidRequestError("At most one message may carry images")
        for m in self.messages:
            for payload in m.images:
                _check_image_payload(payload)

    @property
    def text(self) -> str:
        return "\n".join(m.text for m in self.messages)

    @property
    def images(self) -> Tuple[str, ...]:
        return tuple(p for m in self.messages for p in m.images)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model_id: str
    latency_ms: int
    from_cache: bool


def user_request(model_id: str, text: str, images: Tuple[str, ...] = (),
                 params: DecodingParams = DecodingParams()) -> ChatRequest:
    return ChatRequest(model_id, (Message(Role.USER, text, images),), params)


def _check_image_payload(payload: str) -> None:
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            im.verify()
    except (binascii.Error, ValueError, OSError, UnidentifiedImageError) as e:
        raise InvalidRequestError(f"Image payload is not a valid base64 image: {e}") from e


def image_digest(payload: str) -> str:
    return hashlib.sha256(base64.b64decode(payload)).hexdigest()


# CACHE
# ///////////////////////////////////////////////////////////////
def canonical_request(req: ChatRequest) -> dict:
    return {
        "model": req.model_id,
        "messages": [
            {"role": m.role.value, "text": m.text,
             "images": [image_digest(p) for p in m.images]}
            for m in req.messages
        ],
        "params": {
            "temperature": float(req.params.temperature),
            "seed": int(req.params.seed),
            "max_tokens": int(req.params.max_tokens),
        },
    }


def digest_canonical(canonical: Mapping) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def cache_key(req: ChatRequest) -> str:
    return digest_canonical(canonical_request(req))


class ResponseCache:
    """One JSON file per key under ``directory``; in memory when no directory is given."""

    def __init__(self, directory: Optional[Union[str, Path]] = None):
        self.directory = Path(directory) if directory else None
        self._memory: Dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        if self.directory is None:
            with self._lock:
                return self._memory.get(key)
        path = self._path(key)
        if not path.is_file():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            logger.warning(f"Ignoring unreadable cache entry {path}: {e}")
            return None

    def put(self, key: str, record: dict) -> None:
        if self.directory is None:
            with self._lock:
                self._memory[key] = record
            return
        # readers never see a partially written entry
        with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=self.directory,
                                         suffix=".tmp", delete=False) as temp_file:
            json.dump(record, temp_file, sort_keys=True, indent=2)
        os.replace(temp_file.name, self._path(key))

    def keys(self):
        if self.directory is None:
            with self._lock:
                return sorted(self._memory)
        return sorted(p.stem for p in self.directory.glob("*.json"))

    def __len__(self) -> int:
        return len(self.keys())


# TRANSPORTS
# ///////////////////////////////////////////////////////////////
class Transport(Protocol):
    endpoint: str

    def complete(self, req: ChatRequest) -> str:
        ...


class HttpTransport:
    def __init__(self, endpoint: str, timeout_s: float = Settings.TIMEOUT_S,
                 bearer_token: Optional[str] = None,
                 session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.bearer_token = bearer_token
        self.session = session or requests.Session()

    def payload(self, req: ChatRequest) -> dict:
        messages = []
        for m in req.messages:
            entry = {"role": m.role.value, "content": m.text}
            if m.images:
                entry["images"] = list(m.images)
            messages.append(entry)
        return {
            "model": req.model_id,
            "messages": messages,
            "stream": False,
            "options": {
                "temperature": req.params.temperature,
                "seed": req.params.seed,
                "num_predict": req.params.max_tokens,
            },
        }

    def complete(self, req: ChatRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.bearer_token:
            headers["Authorization"] = f"Bearer {self.bearer_token}"
        try:
            resp = self.session.post(self.endpoint, json=self.payload(req),
                                     headers=headers, timeout=self.timeout_s)
        except requests.exceptions.Timeout as e:
            raise BackendTimeoutError(f"{self.endpoint} timed out after {self.timeout_s}s") from e
        except requests.exceptions.ConnectionError as e:
            raise BackendTimeoutError(f"{self.endpoint} unreachable: {e}") from e
        except requests.exceptions.RequestException as e:
            raise BackendError(f"Request to {self.endpoint} failed: {e}") from e

        if resp.status_code >= 400:
            raise UpstreamError(resp.status_code, resp.text)
        try:
            content = resp.json()["message"]["content"]
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedResponseError(
                f"{self.endpoint} returned no message.content: {resp.text[:200]!r}") from e
        if content is None:
            content = ""
        if not isinstance(content, str):
            raise MalformedResponseError(f"message.content is {type(content).__name__}, not text")
        return content


@dataclass(frozen=True)
class MockRule:
    pattern: str
    reply: str

    def matches(self, text: str) -> bool:
        return re.search(self.pattern, text, re.IGNORECASE | re.DOTALL) is not None


@dataclass(frozen=True)
class MockScript:
    """
    Rules for the in-process mock.

    Explicit ``rules`` are tried first (first match wins). With
    ``default_rules`` the mock then answers the pipeline prompts itself:
    image questions get a seeded Bernoulli draw biased by the location's true
    class (``truth`` maps image digest -> gully present), aggregation prompts
    get "yes" iff a strict majority of quoted answers is Yes.
    """
    rules: Tuple[MockRule, ...] = ()
    truth: Mapping[str, bool] = field(default_factory=dict)
    positive_bias: float = Settings.MOCK_POSITIVE_BIAS
    negative_bias: float = Settings.MOCK_NEGATIVE_BIAS
    question_bias: Mapping[int, Tuple[float, float]] = field(default_factory=dict)
    default_rules: bool = True


CHANNEL_PHRASE = "clear channel formation"
_ANSWER = re.compile(r"Answer: (Yes|No answer|No)\b")


def _bernoulli(location: str, question_index: int, seed: int, p: float) -> bool:
    h = hashlib.sha256(f"{location}:{question_index}:{seed}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2 ** 64 < p


def _yes_probability(script: MockScript, location: str, question_index: int) -> float:
    present = script.truth.get(location)
    if present is None:
        return 0.5
    pos, neg = script.question_bias.get(question_index,
                                        (script.positive_bias, script.negative_bias))
    return pos if present else neg


def _question_index(text: str) -> Optional[int]:
    if prompts.DIRECT_MARKER in text or prompts.DESCRIPTIVE_MARKER in text:
        return 0
    for q in BANK:
        if q.text in text:
            return q.index
    return None


def mock_reply(req: ChatRequest, script: MockScript) -> str:
    text = req.text
    for rule in script.rules:
        if rule.matches(text):
            return rule.reply
    if not script.default_rules:
        raise NoRuleMatchedError(f"No mock rule matches {text[:80]!r}")

    if prompts.AGGREGATION_MARKER in text:
        answers = _ANSWER.findall(text)
        yes = sum(1 for a in answers if a == "Yes")
        return "yes" if 2 * yes > len(answers) else "no"
    if prompts.ADJUDICATION_MARKER in text:
        return "yes" if CHANNEL_PHRASE in text else "no"

    q = _question_index(text)
    if not req.images or q is None:
        raise NoRuleMatchedError(f"No mock rule matches {text[:80]!r}")
    location = image_digest(req.images[0])
    yes = _bernoulli(location, q, req.params.seed, _yes_probability(script, location, q))
    if prompts.DESCRIPTIVE_MARKER in text:
        if yes:
            return (f"Across the six images there is a {CHANNEL_PHRASE} winding "
                    "through the lower part of the field that reappears in several years.")
        return "The field surface looks uniform across the six images with no persistent channels."
    if q == 0:
        verdict = "yes" if yes else "no"
        return f"Looking at all six images together. Conclusion: {verdict}"
    return "Yes." if yes else "No."


def mock_send(req: ChatRequest, script: MockScript) -> ChatResponse:
    return ChatResponse(mock_reply(req, script), req.model_id, 0, False)


class MockTransport:
    """Deterministic in-process backend with call instrumentation."""

    def __init__(self, script: MockScript = MockScript(), delay_s: float = 0.0,
                 fail_when: Optional[Callable[[ChatRequest], bool]] = None):
        self.endpoint = Settings.MOCK_URL
        self.script = script
        self.delay_s = delay_s
        self.fail_when = fail_when
        self.calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if self.delay_s:
                time.sleep(self.delay_s)
            if self.fail_when is not None and self.fail_when(req):
                raise BackendTimeoutError("mock backend timed out")
            return mock_reply(req, self.script)
        finally:
            with self._lock:
                self.in_flight -= 1


# CLIENT
# ///////////////////////////////////////////////////////////////
@dataclass(frozen=True)
class SendPolicy:
    timeout_s: float = Settings.TIMEOUT_S
    retries: int = Settings.RETRIES
    max_in_flight: int = Settings.JOBS
    backoff_s: float = Settings.BACKOFF_S


def _retryable(error: BackendError) -> bool:
    if isinstance(error, BackendTimeoutError):
        return True
    return isinstance(error, UpstreamError) and (error.status == 429 or error.status >= 500)


class ChatClient:
    """Cache lookup, bounded parallelism and retries in front of one transport."""

    def __init__(self, transport: Transport, policy: SendPolicy = SendPolicy(),
                 cache: Optional[ResponseCache] = None,
                 sleep: Callable[[float], None] = time.sleep):
        if policy.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.transport = transport
        self.policy = policy
        self.cache = cache if cache is not None else ResponseCache()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(policy.max_in_flight)
        self._lock = threading.Lock()
        self.upstream_calls = 0
        self.cache_hits = 0
        self.in_flight = 0
        self.peak_in_flight = 0

    @property
    def endpoint(self) -> str:
        return self.transport.endpoint

    def send(self, req: ChatRequest) -> ChatResponse:
        key = cache_key(req)
        cached = self.cache.get(key)
        if cached is not None:
            with self._lock:
                self.cache_hits += 1
            logger.debug(f"cache hit {key[:12]} ({req.model_id})")
            return ChatResponse(cached["text"], req.model_id, 0, True)

        start = time.perf_counter()
        text = self._call_with_retries(req)
        latency_ms = int((time.perf_counter() - start) * 1000)
        self.cache.put(key, {
            "key": key,
            "endpoint": self.endpoint,
            "model_id": req.model_id,
            "request": canonical_request(req),
            "text": text,
        })
        return ChatResponse(text, req.model_id, latency_ms, False)

    def _call_once(self, req: ChatRequest) -> str:
        with self._slots:
            with self._lock:
                self.upstream_calls += 1
                self.in_flight += 1
                self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                return self.transport.complete(req)
            finally:
                with self._lock:
                    self.in_flight -= 1

    def _call_with_retries(self, req: ChatRequest) -> str:
        attempts = max(1, self.policy.retries)
        for attempt in range(attempts):
            try:
                return self._call_once(req)
            except BackendError as e:
                if not _retryable(e) or attempt == attempts - 1:
                    raise
                delay = self.policy.backoff_s * 2 ** attempt
                logger.debug(f"{self.endpoint}: attempt {attempt + 1}/{attempts} failed "
                             f"({e}); retrying in {delay:.2f}s")
                self._sleep(delay)
        raise BackendError(f"{self.endpoint}: no attempt made")


def make_client(endpoint: str, policy: SendPolicy = SendPolicy(),
                cache: Optional[ResponseCache] = None,
                script: Optional[MockScript] = None,
                bearer_token: Optional[str] = None) -> ChatClient:
    if endpoint.startswith(Settings.MOCK_URL):
        transport: Transport = MockTransport(script or MockScript())
    else:
        transport = HttpTransport(endpoint, policy.timeout_s, bearer_token)
    return ChatClient(transport, policy, cache)


def send(req: ChatRequest, endpoint: str, policy: SendPolicy = SendPolicy(),
         cache: Optional[ResponseCache] = None) -> ChatResponse:
    return make_client(endpoint, policy, cache).send(req)
