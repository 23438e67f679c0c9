"""
Run configuration: defaults from ``Settings``, overridden by a JSON config
file, then by environment variables, then by command-line flags.
"""
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Tuple, Union
from urllib.parse import urlparse

from .errors import GullyError, InvalidValueError
from .questions import parse_question_set
from .settings import Settings

logger = logging.getLogger(__name__)

PIPELINES = ("A", "B", "C")
SPLITS = ("dev", "test")
UNPARSEABLE_POLICIES = ("positive", "negative", "error")


def configure_logging(level: int = logging.INFO, log_file: Optional[str] = None) -> None:
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=level,
        format=Settings.LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


@dataclass(frozen=True)
class RunConfig:
    pipeline: str = Settings.PIPELINE
    split: str = Settings.SPLIT
    questions: str = Settings.QUESTIONS
    backend_url: str = Settings.BACKEND_URL
    vlm: str = Settings.VLM_MODEL
    llm: str = Settings.LLM_MODEL
    temperature: float = Settings.TEMPERATURE
    seed: int = Settings.SEED
    max_tokens: int = Settings.MAX_TOKENS
    timeout_s: float = Settings.TIMEOUT_S
    retries: int = Settings.RETRIES
    backoff_s: float = Settings.BACKOFF_S
    jobs: int = Settings.JOBS
    cache_dir: Optional[str] = None
    api_token: Optional[str] = field(default=None, repr=False)
    unparseable: str = Settings.UNPARSEABLE
    grid: Tuple[int, int] = Settings.GRID
    separator: int = Settings.SEPARATOR_WIDTH
    mock_positive_bias: float = Settings.MOCK_POSITIVE_BIAS
    mock_negative_bias: float = Settings.MOCK_NEGATIVE_BIAS
    config_file: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("api_token")  # credentials stay out of artifacts
        d["grid"] = list(self.grid)
        d["vlm"] = "@".join(self.vlm_ref())
        d["llm"] = "@".join(self.llm_ref())
        return d

    def vlm_ref(self) -> Tuple[str, str]:
        return parse_model_ref(self.vlm, self.backend_url)

    def llm_ref(self) -> Tuple[str, str]:
        return parse_model_ref(self.llm, self.backend_url)

    def uses_mock(self) -> bool:
        return any(url.startswith(Settings.MOCK_URL)
                   for _, url in (self.vlm_ref(), self.llm_ref()))


def _check_url(field_name: str, url: str) -> str:
    if url.startswith(Settings.MOCK_URL):
        return url
    parsed = urlparse(url)
    if parsed.scheme not in ("http", "https") or not parsed.netloc:
        raise InvalidValueError(field_name, url, "expected an http(s):// or mock:// URL")
    return url


def parse_model_ref(ref: str, default_url: str) -> Tuple[str, str]:
    """``model@url`` or a bare model id served at ``default_url``."""
    model, sep, url = ref.partition("@")
    if not model:
        raise InvalidValueError("model", ref, "empty model id")
    return model, _check_url("model", url if sep else default_url)


def load_config_file(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidValueError("config", str(path), f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise InvalidValueError("config", str(path), "expected a JSON object")
    mock = doc.pop("mock", None) or {}
    if "positive_bias" in mock:
        doc["mock_positive_bias"] = mock["positive_bias"]
    if "negative_bias" in mock:
        doc["mock_negative_bias"] = mock["negative_bias"]
    return doc


def _coerce(name: str, value, default):
    try:
        if name == "grid":
            if isinstance(value, str):
                value = value.lower().split("x")
            rows, cols = (int(v) for v in value)
            return rows, cols
        if default is None or isinstance(default, str):
            return None if value is None else str(value)
        if isinstance(default, bool):
            return bool(value)
        return type(default)(value)
    except (TypeError, ValueError):
        raise InvalidValueError(name, value) from None


def _validate(c: RunConfig) -> None:
    if c.pipeline not in PIPELINES:
        raise InvalidValueError("pipeline", c.pipeline, f"choose from {', '.join(PIPELINES)}")
    if c.split not in SPLITS:
        raise InvalidValueError("split", c.split, "choose dev or test")
    if c.unparseable not in UNPARSEABLE_POLICIES:
        raise InvalidValueError("unparseable", c.unparseable,
                                f"choose from {', '.join(UNPARSEABLE_POLICIES)}")
    try:
        parse_question_set(c.questions)
    except GullyError as e:
        raise InvalidValueError("questions", c.questions, str(e)) from e
    _check_url("backend_url", c.backend_url)
    c.vlm_ref()
    c.llm_ref()
    if c.temperature < 0:
        raise InvalidValueError("temperature", c.temperature, "must be >= 0")
    for name in ("max_tokens", "retries", "jobs"):
        if getattr(c, name) < 1:
            raise InvalidValueError(name, getattr(c, name), "must be >= 1")
    if c.timeout_s <= 0:
        raise InvalidValueError("timeout_s", c.timeout_s, "must be > 0")
    if min(c.grid) < 1:
        raise InvalidValueError("grid", c.grid, "rows and cols must be >= 1")
    if c.separator < 0:
        raise InvalidValueError("separator", c.separator, "must be >= 0")
    for name in ("mock_positive_bias", "mock_negative_bias"):
        if not 0.0 <= getattr(c, name) <= 1.0:
            raise InvalidValueError(name, getattr(c, name), "must lie in [0, 1]")


def resolve_config(flags: Mapping, env: Mapping[str, str],
                   file: Optional[Mapping] = None) -> RunConfig:
    """
    Merge configuration sources. Later sources win:
    ``Settings`` defaults < config file < environment < flags.
    Flags whose value is None count as unset.
    """
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    merged = {}
    for name, value in (file or {}).items():
        if name not in known:
            raise InvalidValueError(name, value, "unknown config key")
        merged[name] = value
    if env.get(Settings.ENV_BACKEND_URL):
        merged["backend_url"] = env[Settings.ENV_BACKEND_URL]
    if env.get(Settings.ENV_CACHE_DIR):
        merged["cache_dir"] = env[Settings.ENV_CACHE_DIR]
    if env.get(Settings.ENV_API_TOKEN):
        merged["api_token"] = env[Settings.ENV_API_TOKEN]
    merged.update({k: v for k, v in flags.items() if k in known and v is not None})

    values = {name: _coerce(name, value, getattr(defaults, name))
              for name, value in merged.items()}
    if "pipeline" in values:
        values["pipeline"] = values["pipeline"].upper()
    if "split" in values:
        values["split"] = values["split"].lower()
    config = RunConfig(**values)
    _validate(config)
    return config


def environment() -> Mapping[str, str]:
    return os.environ
