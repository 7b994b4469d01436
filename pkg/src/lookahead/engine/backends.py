"""Model backends: the interface and deterministic corpus-replay mocks."""

from __future__ import annotations

import hashlib
import random
import string
from typing import Protocol, Sequence, runtime_checkable

from ..errors import ConfigError, check_probability
from .trace import BOUNDARY, EOS, StepText, Trace, split_steps

CORRUPTION_MARK = "† "


@runtime_checkable
class ModelBackend(Protocol):
    """Produces the next reasoning step for a prefix.

    ``cost`` is the declared virtual time of one step in units of the
    target's step time T.  Implementations must be deterministic in
    (prefix, branch) for a fixed configuration.
    """

    cost: float

    def generate_step(self, prefix: Trace, branch: int = 0) -> StepText: ...


def step_cost(backend: ModelBackend, step: StepText) -> float:
    return backend.cost if step.cost is None else step.cost


def hash_uniform(seed: int, *parts: bytes | int) -> float:
    """Counter-style uniform in [0, 1) from BLAKE2b over (seed, parts)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for part in parts:
        h.update(part if isinstance(part, bytes) else int(part).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little") / 2.0**64


def corrupt(step: StepText) -> StepText:
    """Marked variant of ``step``; never byte-equal to the original."""
    return StepText(CORRUPTION_MARK + step.text)


def canonical(text: str) -> str:
    return text[len(CORRUPTION_MARK) :] if text.startswith(CORRUPTION_MARK) else text


class CorpusBackend:
    """Replays a fixed step sequence.

    The next step for a prefix is ``corpus[len(prefix)]`` provided the prefix
    matches the corpus once corruption marks are stripped; any other prefix
    gets end-of-generation.  With ``corruption_prob > 0`` each produced step
    is independently replaced by its marked variant, keyed on
    (seed, prefix digest, branch).
    """

    def __init__(
        self,
        corpus: Sequence[StepText | str],
        cost: float = 1.0,
        corruption_prob: float = 0.0,
        seed: int = 0,
    ):
        self.corpus = [s.text if isinstance(s, StepText) else s for s in corpus]
        self.cost = float(cost)
        self.corruption_prob = check_probability("corruption_prob", corruption_prob, closed_low=True)
        self.seed = int(seed)
        self._valid: dict[bytes, bool] = {b"\x00" * 16: True}

    def _on_corpus(self, prefix: Trace) -> bool:
        pending = []
        for node in prefix.nodes():
            known = self._valid.get(node.digest)
            if known is not None:
                break
            pending.append(node)
        else:
            known = True
        valid = known
        for node in reversed(pending):
            pos = node.length - 1
            valid = valid and pos < len(self.corpus) and canonical(node.step.text) == self.corpus[pos]
            self._valid[node.digest] = valid
        return valid

    def generate_step(self, prefix: Trace, branch: int = 0) -> StepText:
        if prefix.length >= len(self.corpus) or not self._on_corpus(prefix):
            return EOS
        step = StepText(self.corpus[prefix.length])
        if self.corruption_prob > 0.0 and hash_uniform(self.seed, prefix.digest, branch) < self.corruption_prob:
            return corrupt(step)
        return step


def make_mock_backends(
    corpus: Sequence[StepText | str] | str,
    corruption_prob: float,
    seed: int,
    draft_cost: float = 0.2,
    target_cost: float = 1.0,
) -> tuple[CorpusBackend, CorpusBackend]:
    """Target replays the corpus exactly; draft corrupts each step with ``corruption_prob``."""
    steps = split_steps(corpus) if isinstance(corpus, str) else list(corpus)
    if not steps:
        raise ConfigError("corpus", "must contain at least one step")
    texts = [s.text if isinstance(s, StepText) else s for s in steps]
    if any(t.startswith(CORRUPTION_MARK) for t in texts):
        raise ConfigError("corpus", "steps may not start with the corruption marker")
    if not 0.0 <= corruption_prob < 1.0:
        raise ConfigError("corruption_prob", f"must lie in [0, 1), got {corruption_prob!r}")
    target = CorpusBackend(texts, cost=target_cost, seed=seed)
    draft = CorpusBackend(texts, cost=draft_cost, corruption_prob=corruption_prob, seed=seed)
    return target, draft


_WORDS = [
    "so", "then", "we", "get", "the", "sum", "is", "equal", "to", "x", "y", "let",
    "check", "step", "factor", "divide", "both", "sides", "by", "two", "three",
    "hence", "answer", "term", "product", "square", "root", "value", "total", "now",
]


def random_corpus(n_steps: int, seed: int, min_words: int = 6, max_words: int = 14) -> list[str]:
    """Synthetic chain-of-thought: ``n_steps`` word salads joined by blank lines."""
    rng = random.Random(seed)
    steps = []
    for i in range(n_steps):
        words = [rng.choice(_WORDS) for _ in range(rng.randint(min_words, max_words))]
        words.append(f"= {rng.randint(0, 999)}{rng.choice(string.ascii_lowercase)}")
        text = " ".join(words)
        steps.append(text + BOUNDARY if i < n_steps - 1 else text)
    return steps
