from __future__ import annotations

import math

import pytest

from lookahead.engine.backends import (
    CORRUPTION_MARK,
    CorpusBackend,
    ModelBackend,
    corrupt,
    hash_uniform,
    make_mock_backends,
    random_corpus,
)
from lookahead.engine.trace import StepText, Trace
from lookahead.errors import ConfigError

CORPUS = ["one\n\n", "two\n\n", "three\n\n", "four"]


class TestCorpusBackend:
    def test_replays_continuation(self):
        target, _ = make_mock_backends(CORPUS, 0.0, seed=0)
        trace = Trace()
        out = []
        while True:
            s = target.generate_step(trace)
            if s.eos:
                break
            out.append(s.text)
            trace = trace.extend(s)
        assert out == CORPUS

    def test_off_corpus_prefix_ends(self):
        target, _ = make_mock_backends(CORPUS, 0.0, seed=0)
        assert target.generate_step(Trace.from_steps(["nope\n\n"])).eos
        assert target.generate_step(Trace.from_steps(CORPUS)).eos

    def test_corrupted_prefix_still_on_corpus(self):
        target, _ = make_mock_backends(CORPUS, 0.0, seed=0)
        prefix = Trace().extend(corrupt(StepText("one\n\n")))
        assert target.generate_step(prefix).text == "two\n\n"

    def test_zero_corruption_equals_target(self):
        target, draft = make_mock_backends(random_corpus(50, 1), 0.0, seed=3)
        trace = Trace()
        for _ in range(50):
            s = target.generate_step(trace)
            assert draft.generate_step(trace) == s
            trace = trace.extend(s)

    def test_corruption_rate(self):
        corpus = random_corpus(10_000, 2)
        target, draft = make_mock_backends(corpus, 0.4, seed=5)
        trace = Trace()
        bad = 0
        for step in corpus:
            d = draft.generate_step(trace)
            if d.text != step:
                bad += 1
                assert d.text.startswith(CORRUPTION_MARK) and d.text != step
            trace = trace.extend(StepText(step))
        se = math.sqrt(0.4 * 0.6 / len(corpus))
        assert abs(bad / len(corpus) - 0.4) < 3 * se

    def test_deterministic(self):
        corpus = random_corpus(200, 2)
        a = make_mock_backends(corpus, 0.5, seed=5)[1]
        b = make_mock_backends(corpus, 0.5, seed=5)[1]
        trace = Trace()
        for step in corpus:
            assert a.generate_step(trace, 1) == b.generate_step(trace, 1)
            trace = trace.extend(StepText(step))

    def test_protocol(self):
        assert isinstance(CorpusBackend(CORPUS), ModelBackend)

    def test_validation(self):
        with pytest.raises(ConfigError, match="corpus"):
            make_mock_backends([], 0.1, 0)
        with pytest.raises(ConfigError, match="corruption_prob"):
            make_mock_backends(CORPUS, 1.0, 0)
        with pytest.raises(ConfigError, match="corpus"):
            make_mock_backends([CORRUPTION_MARK + "x"], 0.1, 0)

    def test_string_corpus(self):
        target, _ = make_mock_backends("a\n\nb", 0.0, 0)
        assert target.generate_step(Trace()).text == "a\n\n"


def test_hash_uniform_range_and_spread():
    values = [hash_uniform(7, i) for i in range(10_000)]
    assert all(0.0 <= v < 1.0 for v in values)
    assert abs(sum(values) / len(values) - 0.5) < 0.01


def test_random_corpus_shape():
    corpus = random_corpus(5, 0)
    assert len(corpus) == 5
    assert all(s.endswith("\n\n") for s in corpus[:-1]) and not corpus[-1].endswith("\n\n")
    assert random_corpus(5, 0) == corpus
