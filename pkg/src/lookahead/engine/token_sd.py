"""Token-level speculative sampling and its use inside step generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..errors import DomainError, NumericError, check_positive_int, check_probability
from .backends import ModelBackend, hash_uniform
from .trace import StepText, Trace

TABLE_ATOL = 1e-9


@dataclass(frozen=True)
class Token:
    id: int
    text: str


class TokenModel(Protocol):
    """Next-token distributions; set ``validated = True`` to skip per-call sum checks."""

    vocab_size: int

    def next_token_probs(self, prefix: Sequence[int]) -> np.ndarray: ...


def _check_distribution(name: str, probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0) or not np.isfinite(probs).all():
        raise NumericError(f"{name}: not a probability vector")
    if abs(probs.sum() - 1.0) > TABLE_ATOL:
        raise NumericError(f"{name}: sums to {probs.sum()!r}, not 1")
    return probs


class TableTokenModel:
    """Unigram (shape V) or bigram (shape V x V, row = previous token) table.

    For a bigram table the first token is drawn from ``start`` (uniform when
    omitted).
    """

    def __init__(self, table: np.ndarray, start: np.ndarray | None = None):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim == 1:
            _check_distribution("table", table)
        elif table.ndim == 2 and table.shape[0] == table.shape[1]:
            for i, row in enumerate(table):
                _check_distribution(f"table[{i}]", row)
        else:
            raise DomainError("table", f"expected shape (V,) or (V, V), got {table.shape}")
        self.table = table
        self.vocab_size = table.shape[-1]
        self.validated = True
        if table.ndim == 2:
            if start is None:
                start = np.full(self.vocab_size, 1.0 / self.vocab_size)
            self.start = _check_distribution("start", start)
            if self.start.size != self.vocab_size:
                raise DomainError("start", "length differs from the table's vocabulary")
        else:
            self.start = table

    def next_token_probs(self, prefix: Sequence[int]) -> np.ndarray:
        if self.table.ndim == 1:
            return self.table
        if not prefix:
            return self.start
        return self.table[prefix[-1]]


def acceptance_tables(alpha2: float, vocab: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Unigram (P, Q) with sum_x min(P(x), Q(x)) == alpha2.

    P is uniform; Q moves mass 1 - alpha2 from the first half of the
    vocabulary onto the second half.
    """
    alpha2 = check_probability("alpha2", alpha2)
    vocab = check_positive_int("vocab", vocab, minimum=2)
    half = vocab // 2
    p = np.full(vocab, 1.0 / vocab)
    shift = 1.0 - alpha2
    low = p[:half].sum()
    high = p[half:].sum()
    if shift > low:
        raise DomainError("alpha2", f"needs alpha2 >= {1 - low:.3f} for vocab={vocab}")
    q = p.copy()
    q[:half] *= (low - shift) / low
    q[half:] *= (high + shift) / high
    return p, q / q.sum()


@dataclass
class TokenSDStats:
    rounds: int = 0
    proposed: int = 0
    accepted: int = 0
    emitted: int = 0


def _sample(rng: np.random.Generator, probs: np.ndarray) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, probs.size - 1)


def _checker(model: TokenModel, name: str):
    if getattr(model, "validated", False):
        return model.next_token_probs
    return lambda ctx: _check_distribution(name, model.next_token_probs(ctx))


def token_sd_generate(
    target: TokenModel,
    draft: TokenModel,
    k2: int,
    prefix: Sequence[int],
    rng: np.random.Generator,
    max_tokens: int = 64,
    boundary: int | None = None,
    stats: TokenSDStats | None = None,
) -> list[int]:
    """Generate one step's tokens with speculative sampling.

    Each round the draft proposes ``k2`` tokens; proposal x is kept with
    probability min(1, P(x)/Q(x)); the first rejection is replaced by a draw
    from norm(max(P - Q, 0)); when all are kept one bonus token comes from P.
    Generation stops after ``boundary`` or at ``max_tokens``.
    """
    if k2 < 0 or int(k2) != k2:
        raise DomainError("k2", f"must be a nonnegative integer, got {k2!r}")
    max_tokens = check_positive_int("max_tokens", max_tokens)
    if target.vocab_size != draft.vocab_size:
        raise DomainError("vocab", f"target has {target.vocab_size} symbols, draft {draft.vocab_size}")
    ctx = list(prefix)
    out: list[int] = []
    p_dist = _checker(target, "target")
    q_dist = _checker(draft, "draft")

    def push(tok: int) -> bool:
        ctx.append(tok)
        out.append(tok)
        return tok == boundary or len(out) >= max_tokens

    while True:
        if stats is not None:
            stats.rounds += 1
        proposals, q_rows = [], []
        for _ in range(k2):
            q = q_dist(ctx + proposals)
            proposals.append(_sample(rng, q))
            q_rows.append(q)
        finished = False
        for i, x in enumerate(proposals):
            p = p_dist(ctx)
            q = q_rows[i]
            if stats is not None:
                stats.proposed += 1
            if rng.random() * q[x] < p[x]:
                if stats is not None:
                    stats.accepted += 1
                if push(x):
                    finished = True
                    break
                continue
            residual = np.maximum(p - q, 0.0)
            finished = push(_sample(rng, residual if residual.sum() > 0 else p))
            break
        else:
            p = p_dist(ctx)
            finished = push(_sample(rng, p))
        if finished:
            if stats is not None:
                stats.emitted += len(out)
            return out


@dataclass(frozen=True)
class TokenSDConfig:
    """Nested token speculation: parallel dimension ``k2`` (k2 - 1 draft tokens per round)."""

    k2: int
    alpha2: float = 0.7
    c2: float = 0.1
    tokens_per_step: int = 64
    vocab: int = 10

    def __post_init__(self) -> None:
        check_positive_int("k2", self.k2)
        check_probability("alpha2", self.alpha2)
        check_probability("c2", self.c2)
        check_positive_int("tokens_per_step", self.tokens_per_step)


class TokenSDBackend:
    """Step backend whose per-step time comes from simulated token speculation.

    Step text is delegated to ``inner``.  Each step is ``tokens_per_step``
    tokens produced by :func:`token_sd_generate` over tables with acceptance
    ``alpha2``; one round costs 1 + (k2 - 1) c2 target-token times, and the
    step cost is ``inner.cost * round_time / tokens_per_step``.
    """

    def __init__(self, inner: ModelBackend, config: TokenSDConfig, seed: int = 0):
        self.inner = inner
        self.config = config
        self.seed = int(seed)
        self.cost = inner.cost
        p, q = acceptance_tables(config.alpha2, config.vocab)
        self._target = TableTokenModel(p)
        self._draft = TableTokenModel(q)
        self.stats = TokenSDStats()

    def generate_step(self, prefix: Trace, branch: int = 0) -> StepText:
        step = self.inner.generate_step(prefix, branch)
        if step.eos:
            return step
        cfg = self.config
        key = int(hash_uniform(self.seed, prefix.digest, branch) * 2.0**53)
        rng = np.random.default_rng(key)
        stats = TokenSDStats()
        token_sd_generate(
            self._target, self._draft, cfg.k2 - 1, [], rng, max_tokens=cfg.tokens_per_step, stats=stats
        )
        self.stats.rounds += stats.rounds
        self.stats.proposed += stats.proposed
        self.stats.accepted += stats.accepted
        self.stats.emitted += stats.emitted
        round_time = 1.0 + (cfg.k2 - 1) * cfg.c2
        cost = self.inner.cost * stats.rounds * round_time / cfg.tokens_per_step
        return StepText(step.text, step.eos, step.truncated, cost=cost)
