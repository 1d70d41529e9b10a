"""Prompt rendering, chat clients, and yes/no verdict parsing.

One fixed binary prompt asks whether two concepts are equivalent. Three
client kinds answer it: a remote chat-completion endpoint, a deterministic
oracle backed by a reference alignment (for tests and simulation), and a
scripted client that replays canned replies. All clients share request
accounting and exchange logging.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import requests

from .errors import (
    ConfigError,
    EndpointUnavailable,
    InvalidParameter,
    MissingPlaceholder,
)

logger = logging.getLogger(__name__)

PLACEHOLDERS = ("src_onto_name", "tgt_onto_name", "source_entity", "target_entity")

DEFAULT_PROMPT_TEMPLATE = (
    "You are a helpful expert in ontology matching, which involves determining "
    "equivalence correspondences between concepts from different ontologies. "
    "The source ontology is called {src_onto_name} and the target ontology is "
    "called {tgt_onto_name}.\n"
    "\n"
    "Classify whether the following concepts are equivalent:\n"
    "\n"
    "Source concept: {source_entity}\n"
    "\n"
    "Target concept: {target_entity}\n"
    "\n"
    "If so, answer 'Yes', without adding any type of explanation. "
    "Otherwise, answer 'No'.\n"
)

_PLACEHOLDER_RE = re.compile(
    r"\{(" + "|".join(PLACEHOLDERS) + r")\}"
)


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with the four placeholders, each appearing exactly once."""

    text: str

    def __post_init__(self):
        for name in PLACEHOLDERS:
            count = self.text.count("{" + name + "}")
            if count == 0:
                raise MissingPlaceholder(
                    f"template lacks the {{{name}}} placeholder"
                )
            if count > 1:
                raise MissingPlaceholder(
                    f"template must contain {{{name}}} exactly once, found {count}"
                )

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(DEFAULT_PROMPT_TEMPLATE)

    @classmethod
    def from_file(cls, path: str) -> "PromptTemplate":
        with open(path, "r", encoding="utf-8") as handle:
            return cls(handle.read())


def render_prompt(
    template: PromptTemplate,
    src_onto: str,
    tgt_onto: str,
    src_label: str,
    tgt_label: str,
) -> str:
    """Fill the four placeholders in one pass; byte-stable for equal inputs.

    A single-pass regex substitution means placeholder-like text inside a
    label is never re-expanded.
    """
    for name, value in (
        ("src_onto", src_onto),
        ("tgt_onto", tgt_onto),
        ("src_label", src_label),
        ("tgt_label", tgt_label),
    ):
        if not value:
            raise InvalidParameter(f"render_prompt requires nonempty {name}")
    values = {
        "src_onto_name": src_onto,
        "tgt_onto_name": tgt_onto,
        "source_entity": src_label,
        "target_entity": tgt_label,
    }
    return _PLACEHOLDER_RE.sub(lambda match: values[match.group(1)], template.text)


class Verdict(enum.Enum):
    YES = "Yes"
    NO = "No"
    UNPARSEABLE = "Unparseable"


def parse_reply(text: str) -> Verdict:
    """Map a raw reply to a verdict.

    The first whitespace-delimited token, stripped of surrounding punctuation
    and casefolded, decides: "yes" -> YES, "no" -> NO, anything else (or an
    empty reply) -> UNPARSEABLE.
    """
    tokens = text.split()
    if not tokens:
        return Verdict.UNPARSEABLE
    word = tokens[0].strip(string.punctuation).casefold()
    if word == "yes":
        return Verdict.YES
    if word == "no":
        return Verdict.NO
    return Verdict.UNPARSEABLE


@dataclass(frozen=True)
class LlmVerdict:
    value: Verdict
    raw: str
    latency_s: float
    attempts: int

    @property
    def is_yes(self) -> bool:
        return self.value is Verdict.YES


class LlmClient:
    """Base client: verdict parsing, request accounting, exchange logging.

    query_count is a monotone counter of completed classification requests;
    an Unparseable reply still counts. Subclasses implement _respond and may
    be called from several threads; the counter and the log are synchronized.
    """

    def __init__(self, log_path: str | None = None):
        self._count_lock = threading.Lock()
        self._query_count = 0
        self.exchanges: list[dict] = []
        self._log_path = log_path
        if log_path:
            os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)

    @property
    def query_count(self) -> int:
        with self._count_lock:
            return self._query_count

    def _respond(
        self, prompt: str, pair: tuple[str, str] | None
    ) -> tuple[str, int]:
        raise NotImplementedError

    def classify(
        self, prompt: str, pair: tuple[str, str] | None = None
    ) -> LlmVerdict:
        start = time.perf_counter()
        reply, attempts = self._respond(prompt, pair)
        latency = time.perf_counter() - start
        verdict = LlmVerdict(
            value=parse_reply(reply), raw=reply, latency_s=latency, attempts=attempts
        )
        record = {
            "pair": list(pair) if pair else None,
            "prompt": prompt,
            "reply": reply,
            "verdict": verdict.value.value,
            "latency_s": round(latency, 6),
            "attempts": attempts,
        }
        with self._count_lock:
            self._query_count += 1
            self.exchanges.append(record)
            if self._log_path:
                with open(self._log_path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        return verdict


def classify_equivalence(
    client: LlmClient, prompt: str, pair: tuple[str, str] | None = None
) -> LlmVerdict:
    """Submit one rendered prompt; pair is metadata for oracle-kind clients."""
    return client.classify(prompt, pair=pair)


class OracleClient(LlmClient):
    """Answers Yes iff the queried id pair is in the reference alignment.

    An optional flip probability simulates an imperfect model: each pair's
    verdict flips when sha256("{seed}:{src}:{tgt}") maps below the
    probability, so the decision is per-pair deterministic and independent
    of query order or thread interleaving.
    """

    def __init__(
        self,
        reference_pairs: Iterable[tuple[str, str]],
        flip_probability: float = 0.0,
        seed: int = 0,
        log_path: str | None = None,
    ):
        super().__init__(log_path=log_path)
        if not 0.0 <= flip_probability <= 1.0:
            raise InvalidParameter(
                f"flip_probability must be in [0, 1], got {flip_probability}"
            )
        self._pairs = frozenset((str(s), str(t)) for s, t in reference_pairs)
        self._flip = float(flip_probability)
        self._seed = int(seed)

    def _flip_decision(self, source_id: str, target_id: str) -> bool:
        digest = hashlib.sha256(
            f"{self._seed}:{source_id}:{target_id}".encode("utf-8")
        ).digest()
        fraction = int.from_bytes(digest[:8], "big") / 2.0**64
        return fraction < self._flip

    def _respond(
        self, prompt: str, pair: tuple[str, str] | None
    ) -> tuple[str, int]:
        if pair is None:
            raise InvalidParameter(
                "the oracle client needs the (source_id, target_id) pair; "
                "prompts alone carry only labels"
            )
        member = (pair[0], pair[1]) in self._pairs
        if self._flip and self._flip_decision(pair[0], pair[1]):
            member = not member
        return ("Yes" if member else "No"), 1


def make_oracle(
    reference,
    flip_probability: float = 0.0,
    seed: int = 0,
    log_path: str | None = None,
) -> OracleClient:
    """Build an oracle client from a reference alignment or a pair iterable."""
    pairs = getattr(reference, "pairs", reference)
    return OracleClient(
        pairs, flip_probability=flip_probability, seed=seed, log_path=log_path
    )


class ScriptedClient(LlmClient):
    """Replays a fixed reply sequence; raises once the script runs out."""

    def __init__(self, replies: Sequence[str], log_path: str | None = None):
        super().__init__(log_path=log_path)
        self._replies = list(replies)
        self._next = 0
        self._script_lock = threading.Lock()

    def _respond(
        self, prompt: str, pair: tuple[str, str] | None
    ) -> tuple[str, int]:
        with self._script_lock:
            if self._next >= len(self._replies):
                raise InvalidParameter(
                    f"scripted client exhausted after {len(self._replies)} replies"
                )
            reply = self._replies[self._next]
            self._next += 1
        return reply, 1


class HttpChatClient(LlmClient):
    """Chat-completion endpoint client.

    Sends one user message per classification and reads the first choice's
    message content. Transport errors and 5xx responses retry with
    exponential backoff; after the retry budget (or on any other bad
    response) EndpointUnavailable is raised. At most max_concurrency
    requests are in flight at once.
    """

    def __init__(
        self,
        url: str,
        model: str,
        temperature: float = 0.7,
        max_concurrency: int = 4,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
        token_env: str | None = None,
        log_path: str | None = None,
    ):
        super().__init__(log_path=log_path)
        if max_concurrency < 1:
            raise InvalidParameter(
                f"max_concurrency must be >= 1, got {max_concurrency}"
            )
        self._url = url
        self._model = model
        self._temperature = float(temperature)
        self._timeout = float(timeout)
        self._max_retries = int(max_retries)
        self._backoff = float(backoff_seconds)
        self._gate = threading.Semaphore(max_concurrency)
        self._headers = {"Content-Type": "application/json"}
        if token_env:
            token = os.environ.get(token_env)
            if not token:
                raise ConfigError(
                    f"environment variable {token_env} is not set; it must hold "
                    "the chat endpoint token"
                )
            self._headers["Authorization"] = f"Bearer {token}"

    def _respond(
        self, prompt: str, pair: tuple[str, str] | None
    ) -> tuple[str, int]:
        payload = {
            "model": self._model,
            "temperature": self._temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error = "no attempt made"
        with self._gate:
            for attempt in range(1, self._max_retries + 1):
                if attempt > 1:
                    time.sleep(self._backoff * 2 ** (attempt - 2))
                try:
                    response = requests.post(
                        self._url,
                        json=payload,
                        headers=self._headers,
                        timeout=self._timeout,
                    )
                except requests.RequestException as exc:
                    last_error = f"transport error: {exc}"
                    logger.warning(
                        "chat request failed (attempt %d): %s", attempt, exc
                    )
                    continue
                if response.status_code >= 500:
                    last_error = f"server error {response.status_code}"
                    logger.warning(
                        "chat endpoint returned %d (attempt %d)",
                        response.status_code,
                        attempt,
                    )
                    continue
                if response.status_code != 200:
                    raise EndpointUnavailable(
                        f"chat endpoint rejected the request "
                        f"({response.status_code}): {response.text[:200]}"
                    )
                try:
                    content = response.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise EndpointUnavailable(
                        f"chat endpoint returned an unusable payload: {exc}"
                    ) from exc
                if not isinstance(content, str):
                    raise EndpointUnavailable(
                        "chat endpoint returned a non-text message content"
                    )
                return content, attempt
        raise EndpointUnavailable(
            f"chat endpoint unreachable after {self._max_retries} attempts "
            f"({last_error})"
        )
