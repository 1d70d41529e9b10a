"""Run configuration: one flat key-value file plus flag overrides.

The config file is line-oriented `key = value` with # comments. Secrets
never appear in it; a config names the environment variable that holds a
token (embedding.token_env / llm.token_env) and the value is read at
client-construction time only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .embedding import (
    DeterministicProvider,
    EmbeddingProvider,
    HttpProvider,
    PrecomputedFileProvider,
)
from .errors import ConfigError
from .evaluation import load_reference
from .llm import HttpChatClient, LlmClient, OracleClient, PromptTemplate, ScriptedClient

DEFAULT_K = 5
DEFAULT_TAU = 0.75
DEFAULT_TEMPERATURE = 0.7

EMBEDDING_KINDS = ("deterministic", "file", "http")
LLM_KINDS = ("oracle", "scripted", "http-chat")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; defaults are k=5, tau=0.75, temperature 0.7."""

    source_dump: str | None = None
    source_name: str = "SOURCE"
    target_dump: str | None = None
    target_name: str = "TARGET"
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    seed: int = 0
    out: str = "out"
    embedding_kind: str = "deterministic"
    embedding_dim: int = 32
    embedding_seed: int | None = None
    embedding_file: str | None = None
    embedding_url: str | None = None
    embedding_batch_size: int = 64
    embedding_timeout: float = 30.0
    embedding_token_env: str | None = None
    llm_kind: str = "oracle"
    llm_url: str | None = None
    llm_model: str | None = None
    llm_temperature: float = DEFAULT_TEMPERATURE
    llm_max_concurrency: int = 4
    llm_timeout: float = 60.0
    llm_token_env: str | None = None
    llm_reference: str | None = None
    llm_flip_probability: float = 0.0
    llm_replies: str | None = None
    prompt_template: str | None = None
    eval_reference: str | None = None
    match_workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.embedding_kind not in EMBEDDING_KINDS:
            raise ConfigError(
                f"embedding.kind must be one of {EMBEDDING_KINDS}, "
                f"got {self.embedding_kind!r}"
            )
        if self.llm_kind not in LLM_KINDS:
            raise ConfigError(
                f"llm.kind must be one of {LLM_KINDS}, got {self.llm_kind!r}"
            )
        if self.match_workers < 1:
            raise ConfigError(f"match.workers must be >= 1, got {self.match_workers}")


# config-file key <-> RunConfig field
_KEY_TO_FIELD = {
    "source.dump": "source_dump",
    "source.name": "source_name",
    "target.dump": "target_dump",
    "target.name": "target_name",
    "k": "k",
    "tau": "tau",
    "seed": "seed",
    "out": "out",
    "embedding.kind": "embedding_kind",
    "embedding.dim": "embedding_dim",
    "embedding.seed": "embedding_seed",
    "embedding.file": "embedding_file",
    "embedding.url": "embedding_url",
    "embedding.batch_size": "embedding_batch_size",
    "embedding.timeout": "embedding_timeout",
    "embedding.token_env": "embedding_token_env",
    "llm.kind": "llm_kind",
    "llm.url": "llm_url",
    "llm.model": "llm_model",
    "llm.temperature": "llm_temperature",
    "llm.max_concurrency": "llm_max_concurrency",
    "llm.timeout": "llm_timeout",
    "llm.token_env": "llm_token_env",
    "llm.reference": "llm_reference",
    "llm.flip_probability": "llm_flip_probability",
    "llm.replies": "llm_replies",
    "prompt.template": "prompt_template",
    "eval.reference": "eval_reference",
    "match.workers": "match_workers",
}
_FIELD_TO_KEY = {field: key for key, field in _KEY_TO_FIELD.items()}


def load_config_file(path: str) -> dict[str, str]:
    """Parse `key = value` lines; # comments and blank lines are skipped."""
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw_lines = handle.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for line_no, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(
                f"{path}:{line_no}: expected 'key = value', got {line!r}"
            )
        key = key.strip()
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _convert(key: str, field_name: str, text: str):
    field_type = {f.name: f.type for f in fields(RunConfig)}[field_name]
    try:
        if field_name in ("k", "seed", "embedding_dim", "embedding_seed",
                          "embedding_batch_size", "llm_max_concurrency",
                          "match_workers"):
            return int(text)
        if field_name in ("tau", "llm_temperature", "llm_flip_probability",
                          "embedding_timeout", "llm_timeout"):
            return float(text)
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: cannot parse {text!r} as {field_type}"
        ) from None
    return text


def build_config(
    values: dict[str, str] | None = None, **overrides
) -> RunConfig:
    """Build a RunConfig from file values plus keyword overrides.

    Unknown keys raise ConfigError so typos fail fast.
    """
    kwargs: dict = {}
    for key, text in (values or {}).items():
        field_name = _KEY_TO_FIELD.get(key)
        if field_name is None:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[field_name] = _convert(key, field_name, text)
    for field_name, value in overrides.items():
        if field_name not in _FIELD_TO_KEY:
            raise ConfigError(f"unknown config field {field_name!r}")
        if value is not None:
            kwargs[field_name] = value
    return RunConfig(**kwargs)


def snapshot(config: RunConfig) -> str:
    """Serialize a config as sorted `key = value` lines, omitting unset keys.

    Loading the snapshot back through build_config reproduces the config.
    """
    lines = []
    for field_name, key in sorted(_FIELD_TO_KEY.items(), key=lambda kv: kv[1]):
        value = getattr(config, field_name)
        if value is None:
            continue
        if isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def build_provider(config: RunConfig) -> EmbeddingProvider:
    if config.embedding_kind == "deterministic":
        seed = (
            config.embedding_seed
            if config.embedding_seed is not None
            else config.seed
        )
        return DeterministicProvider(dim=config.embedding_dim, seed=seed)
    if config.embedding_kind == "file":
        if not config.embedding_file:
            raise ConfigError("embedding.kind=file requires embedding.file")
        return PrecomputedFileProvider(config.embedding_file)
    if not config.embedding_url:
        raise ConfigError("embedding.kind=http requires embedding.url")
    return HttpProvider(
        url=config.embedding_url,
        dim=config.embedding_dim,
        batch_size=config.embedding_batch_size,
        timeout=config.embedding_timeout,
        token_env=config.embedding_token_env,
    )


def build_llm_client(config: RunConfig, log_path: str | None = None) -> LlmClient:
    if config.llm_kind == "oracle":
        if not config.llm_reference:
            raise ConfigError(
                "llm.kind=oracle requires llm.reference (path to the reference "
                "alignment the oracle answers from)"
            )
        reference = load_reference(config.llm_reference)
        return OracleClient(
            reference.pairs,
            flip_probability=config.llm_flip_probability,
            seed=config.seed,
            log_path=log_path,
        )
    if config.llm_kind == "scripted":
        if not config.llm_replies:
            raise ConfigError(
                "llm.kind=scripted requires llm.replies (path to a file with "
                "one reply per line)"
            )
        with open(config.llm_replies, "r", encoding="utf-8") as handle:
            replies = [line.rstrip("\n") for line in handle]
        return ScriptedClient(replies, log_path=log_path)
    if not config.llm_url or not config.llm_model:
        raise ConfigError("llm.kind=http-chat requires llm.url and llm.model")
    return HttpChatClient(
        url=config.llm_url,
        model=config.llm_model,
        temperature=config.llm_temperature,
        max_concurrency=config.llm_max_concurrency,
        timeout=config.llm_timeout,
        token_env=config.llm_token_env,
        log_path=log_path,
    )


def load_template(config: RunConfig) -> PromptTemplate:
    if config.prompt_template:
        if not os.path.exists(config.prompt_template):
            raise ConfigError(
                f"prompt.template file {config.prompt_template!r} does not exist"
            )
        return PromptTemplate.from_file(config.prompt_template)
    return PromptTemplate.default()
