from __future__ import annotations

from lookahead.engine.backends import CorpusBackend, corrupt
from lookahead.engine.trace import StepText, Trace


class ScriptedDraft:
    """Corpus draft that corrupts chosen (prefix length, branch) positions."""

    def __init__(self, corpus, cost: float, bad=lambda length, branch: False):
        self.inner = CorpusBackend(corpus, cost=cost)
        self.cost = cost
        self.bad = bad

    def generate_step(self, prefix: Trace, branch: int = 0) -> StepText:
        step = self.inner.generate_step(prefix, branch)
        if not step.eos and self.bad(prefix.length, branch):
            return corrupt(step)
        return step


class Failing:
    def __init__(self, cost: float = 1.0):
        self.cost = cost

    def generate_step(self, prefix, branch=0):
        raise RuntimeError("boom")


def two_accepts_then_reject(c: float):
    """Async gamma=3 cycle: two drafts accepted, the third rejected."""
    from lookahead.engine.pipeline import PipelineConfig, run_pipeline

    corpus = ["s1\n\n", "s2\n\n", "s3"]
    target = CorpusBackend(corpus, cost=1.0)
    draft = ScriptedDraft(corpus, cost=c, bad=lambda n, b: n == 2)
    return run_pipeline(PipelineConfig(gamma=3, mode="async"), draft, target)
