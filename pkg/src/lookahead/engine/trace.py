"""Reasoning steps, step splitting and append-only traces."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator

BOUNDARY = "\n\n"


@dataclass(frozen=True)
class StepText:
    """One reasoning step.

    ``text`` keeps its trailing boundary marker, if any.  ``cost`` overrides
    the producing backend's declared per-step cost (used when nested token
    speculation makes the cost vary per step).
    """

    text: str
    eos: bool = False
    truncated: bool = False
    cost: float | None = field(default=None, compare=False)

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.text.split())

    def __str__(self) -> str:
        return self.text


EOS = StepText("", eos=True)


def split_steps(text: str) -> list[StepText]:
    """Split on the blank-line boundary, keeping each boundary on the step before it.

    >>> [s.text for s in split_steps("a\\n\\nb\\n\\nc")]
    ['a\\n\\n', 'b\\n\\n', 'c']
    """
    steps = []
    start = 0
    while True:
        idx = text.find(BOUNDARY, start)
        if idx < 0:
            break
        steps.append(StepText(text[start : idx + len(BOUNDARY)]))
        start = idx + len(BOUNDARY)
    if start < len(text):
        steps.append(StepText(text[start:]))
    return steps


def trim_boundary(text: str) -> str:
    while text.endswith(BOUNDARY):
        text = text[: -len(BOUNDARY)]
    return text


class Trace:
    """Persistent, append-only sequence of steps.

    ``extend`` returns a new trace sharing its parent, so speculative
    branches cost O(1) each.  ``digest`` is a chained BLAKE2b fingerprint of
    the step texts and identifies a prefix by content.
    """

    __slots__ = ("parent", "step", "length", "digest", "done")

    def __init__(self, parent: Trace | None = None, step: StepText | None = None, done: bool = False):
        self.parent = parent
        self.step = step
        self.done = done
        if parent is None:
            self.length = 0
            self.digest = b"\x00" * 16
        else:
            assert step is not None
            self.length = parent.length + 1
            self.digest = hashlib.blake2b(
                parent.digest + step.text.encode("utf-8"), digest_size=16
            ).digest()

    @classmethod
    def from_steps(cls, steps: Iterable[StepText | str]) -> Trace:
        trace = cls()
        for step in steps:
            trace = trace.extend(step if isinstance(step, StepText) else StepText(step))
        return trace

    def extend(self, step: StepText) -> Trace:
        if self.done:
            raise ValueError("cannot extend a finished trace")
        if step.eos:
            raise ValueError("end-of-generation is not a step")
        return Trace(self, step)

    def extend_all(self, steps: Iterable[StepText]) -> Trace:
        trace = self
        for step in steps:
            trace = trace.extend(step)
        return trace

    def finish(self) -> Trace:
        if self.done:
            return self
        finished = Trace.__new__(Trace)
        finished.parent = self.parent
        finished.step = self.step
        finished.length = self.length
        finished.digest = self.digest
        finished.done = True
        return finished

    def nodes(self) -> Iterator[Trace]:
        """Yield non-root nodes from the newest back to the first step."""
        node: Trace | None = self
        while node is not None and node.parent is not None:
            yield node
            node = node.parent

    @property
    def steps(self) -> list[StepText]:
        out = [node.step for node in self.nodes()]
        out.reverse()
        return out  # type: ignore[return-value]

    @property
    def text(self) -> str:
        return "".join(step.text for step in self.steps)

    def __len__(self) -> int:
        return self.length

    def __repr__(self) -> str:
        return f"Trace(length={self.length}, done={self.done})"
