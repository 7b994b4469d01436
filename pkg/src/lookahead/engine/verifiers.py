"""Step verifiers: decide whether a draft step may stand in for the target's."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Protocol

import numpy as np

from ..errors import BackendError, ConfigError
from .trace import StepText, trim_boundary


class Verifier(Protocol):
    def decide(self, target_step: StepText, draft_step: StepText) -> bool: ...


def verify(verifier: Verifier, target_step: StepText, draft_step: StepText) -> bool:
    return bool(verifier.decide(target_step, draft_step))


def ngrams(tokens: tuple[str, ...], n: int) -> set[tuple[str, ...]]:
    if len(tokens) < n:
        return {tokens} if tokens else set()
    return {tokens[i : i + n] for i in range(len(tokens) - n + 1)}


def jaccard(a: StepText, b: StepText, n: int = 1) -> float:
    sa, sb = ngrams(a.tokens, n), ngrams(b.tokens, n)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class ExactMatch:
    def decide(self, target_step: StepText, draft_step: StepText) -> bool:
        return trim_boundary(target_step.text) == trim_boundary(draft_step.text)


@dataclass(frozen=True)
class NgramSimilarity:
    """Jaccard similarity of token n-gram sets against ``threshold``."""

    n: int = 1
    threshold: float = 0.85

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("n", "must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold", "must lie in [0, 1]")

    def decide(self, target_step: StepText, draft_step: StepText) -> bool:
        return jaccard(target_step, draft_step, self.n) >= self.threshold


class RandomAccept:
    """Accept with probability ``p`` from a seeded stream (order-dependent)."""

    def __init__(self, p: float, seed: int = 0):
        if not 0.0 <= p <= 1.0:
            raise ConfigError("p", "must lie in [0, 1]")
        self.p = float(p)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)

    def decide(self, target_step: StepText, draft_step: StepText) -> bool:
        return bool(self._rng.random() < self.p)


def default_score(draft_step: StepText, target_step: StepText) -> float:
    return float(round(9 * jaccard(draft_step, target_step)))


@dataclass(frozen=True)
class ScoreThreshold:
    """Accept iff ``score_fn(draft, target) >= threshold`` on a 0-9 scale."""

    threshold: float = 7.0
    score_fn: Callable[[StepText, StepText], float] = default_score

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 9.0:
            raise ConfigError("threshold", "must lie in [0, 9]")

    def decide(self, target_step: StepText, draft_step: StepText) -> bool:
        return self.score_fn(draft_step, target_step) >= self.threshold


def load_judge_template() -> str:
    return resources.files("lookahead.engine").joinpath("assets/judge_prompt.txt").read_text("utf-8")


class Completer(Protocol):
    def complete(self, prompt: str) -> tuple[str, str]: ...


@dataclass
class JudgeAdapter:
    """LLM-as-judge: render the template with (s1=target, s2=draft), accept on an "ali" prefix.

    Replies starting with neither "ali" nor "unali" are rejected and counted
    in ``malformed``.
    """

    backend: Completer
    template: str = field(default_factory=load_judge_template)
    malformed: int = 0
    calls: int = 0

    def render(self, target_step: StepText, draft_step: StepText) -> str:
        return self.template.format(trim_boundary(target_step.text), trim_boundary(draft_step.text))

    def decide(self, target_step: StepText, draft_step: StepText) -> bool:
        self.calls += 1
        try:
            reply, _ = self.backend.complete(self.render(target_step, draft_step))
        except BackendError:
            raise
        except Exception as exc:  # non-transport failure inside a custom completer
            raise BackendError(f"judge backend failed: {exc}") from exc
        head = reply.lstrip().lstrip("[").lower()
        if head.startswith("ali"):
            return True
        if not head.startswith("unali"):
            self.malformed += 1
        return False


def parse_verifier(spec: str, seed: int = 0) -> Verifier:
    """Build a verifier from ``NAME[:k=v,...]``, e.g. ``ngram:n=2,threshold=0.95``.

    The judge verifier needs a live backend and is built in code, not here.
    """
    name, _, rest = spec.partition(":")
    params: dict[str, str] = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("verifier", f"parameter {item!r} is not key=value")
        params[key.strip()] = value.strip()
    name = name.strip().lower()
    try:
        if name in ("exact", "exactmatch"):
            verifier: Verifier = ExactMatch()
        elif name in ("ngram", "ngramsimilarity"):
            verifier = NgramSimilarity(n=int(params.pop("n", 1)), threshold=float(params.pop("threshold", 0.85)))
        elif name in ("random", "randomaccept"):
            verifier = RandomAccept(p=float(params.pop("p", 0.5)), seed=int(params.pop("seed", seed)))
        elif name in ("score", "scorethreshold"):
            verifier = ScoreThreshold(threshold=float(params.pop("threshold", 7)))
        else:
            raise ConfigError("verifier", f"unknown verifier {name!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("verifier", f"bad parameter value in {spec!r}: {exc}") from exc
    if params:
        raise ConfigError("verifier", f"unknown parameters {sorted(params)} for {name!r}")
    return verifier
