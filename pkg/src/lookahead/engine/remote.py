"""HTTP completion backend speaking a minimal JSON wire protocol.

Request body: ``{"prompt", "max_tokens", "stop", "seed"}``.
Response body: ``{"text", "finish_reason"}`` with finish_reason "stop" or "length".
"""

from __future__ import annotations

import json
import logging
import socket
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

from ..errors import BackendError, ConfigError
from .trace import BOUNDARY, EOS, StepText, Trace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    path: str = "/v1/completions"
    timeout: float = 30.0
    max_tokens: int = 256
    seed: int = 0
    cost: float = 1.0

    def __post_init__(self) -> None:
        if not self.url.startswith(("http://", "https://")):
            raise ConfigError("url", f"expected an http(s) URL, got {self.url!r}")
        if self.timeout <= 0:
            raise ConfigError("timeout", "must be positive")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens", "must be >= 1")
        if self.cost <= 0:
            raise ConfigError("cost", "must be positive")

    @property
    def endpoint(self) -> str:
        return self.url.rstrip("/") + "/" + self.path.lstrip("/")


class RemoteBackend:
    """Step backend over HTTP; ``cost`` is the declared per-step time in T units."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self.cost = config.cost

    def _post(self, payload: dict) -> dict:
        endpoint = self.config.endpoint
        context = {"endpoint": endpoint, "prompt_chars": len(payload["prompt"])}
        req = urllib.request.Request(
            endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                raw = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise BackendError(f"{endpoint}: timed out after {self.config.timeout}s", context) from exc
        except urllib.error.HTTPError as exc:
            raise BackendError(f"{endpoint}: HTTP {exc.code}", context) from exc
        except (urllib.error.URLError, OSError) as exc:
            raise BackendError(f"{endpoint}: transport failure ({exc})", context) from exc
        try:
            body = json.loads(raw)
            text = body["text"]
            reason = body["finish_reason"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(f"{endpoint}: malformed response {raw[:200]!r}", context) from exc
        if not isinstance(text, str) or reason not in ("stop", "length"):
            raise BackendError(f"{endpoint}: malformed response {raw[:200]!r}", context)
        return body

    def complete(self, prompt: str, stop: list[str] | None = None) -> tuple[str, str]:
        body = self._post(
            {
                "prompt": prompt,
                "max_tokens": self.config.max_tokens,
                "stop": list(stop or []),
                "seed": self.config.seed,
            }
        )
        return body["text"], body["finish_reason"]

    def generate_step(self, prefix: Trace, branch: int = 0) -> StepText:
        payload = {
            "prompt": prefix.text,
            "max_tokens": self.config.max_tokens,
            "stop": [BOUNDARY],
            "seed": self.config.seed + branch,
        }
        body = self._post(payload)
        text, reason = body["text"], body["finish_reason"]
        idx = text.find(BOUNDARY)
        if idx >= 0:
            return StepText(text[: idx + len(BOUNDARY)])
        if reason == "stop":
            # Server consumed the stop sequence; an empty completion ends generation.
            return StepText(text + BOUNDARY) if text else EOS
        log.debug("completion hit max_tokens without a boundary at %s", self.config.endpoint)
        return StepText(text, truncated=True)

    def calibrate(self, prompt: str = "calibration", runs: int = 3, reference_seconds: float | None = None) -> float:
        """Set ``cost`` from mean measured latency, divided by ``reference_seconds`` when given."""
        probe = Trace().extend(StepText(prompt))
        started = time.perf_counter()
        for _ in range(runs):
            self.generate_step(probe)
        mean = (time.perf_counter() - started) / runs
        self.cost = mean / reference_seconds if reference_seconds else mean
        return self.cost


def remote_backend(config: EndpointConfig) -> RemoteBackend:
    return RemoteBackend(config)
