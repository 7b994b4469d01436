"""Step-level speculation: sync cycles, the async virtual-clock pipeline, multi-branch drafting.

All times are virtual and expressed in units of the target's per-step cost
T (``target.cost``).  Backends declare costs; nothing here reads a real
clock.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field

from ..analytics import Mode
from ..errors import BackendError, ConfigError, CycleError
from .backends import ModelBackend, step_cost
from .token_sd import TokenSDBackend, TokenSDConfig
from .trace import StepText, Trace
from .verifiers import ExactMatch, Verifier, verify

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    gamma: int = 3
    W: int = 1
    mode: Mode = Mode.SYNC
    token_sd: TokenSDConfig | None = None
    verifier: Verifier = field(default_factory=ExactMatch)
    max_steps: int = 10_000
    verify_cost: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        for key in ("gamma", "W", "max_steps"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(key, f"must be a positive integer, got {value!r}")
        if self.verify_cost < 0:
            raise ConfigError("verify_cost", "must be >= 0")
        if self.W > 1 and self.mode is Mode.ASYNC:
            raise ConfigError("W", "multi-branch drafting is only supported in sync mode")


@dataclass
class CycleOutcome:
    """One speculation cycle; ``j_star`` drafts were accepted before the decisive step.

    ``done`` marks a cycle cut short by end-of-generation or the step cap;
    only then may ``emitted`` hold fewer than ``j_star + 1`` steps.
    """

    j_star: int
    emitted: list[StepText]
    wall_time: float
    verified: int = 0
    accepted: int = 0
    compute_units: float = 0.0
    done: bool = False


@dataclass
class GenerationReport:
    output_text: str
    total_wall_time: float
    cycles: list[CycleOutcome]
    accept_rate: float
    measured_speedup: float
    compute_units: float = 0.0
    proposed: int = 0
    accepted: int = 0
    emitted_steps: int = 0
    baseline_wall_time: float = 0.0
    judge_malformed: int = 0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self, include_cycles: bool = True) -> dict:
        out = asdict(self)
        if include_cycles:
            out["cycles"] = [
                {
                    "j_star": c.j_star,
                    "emitted": [s.text for s in c.emitted],
                    "wall_time": c.wall_time,
                    "verified": c.verified,
                    "accepted": c.accepted,
                    "compute_units": c.compute_units,
                    "done": c.done,
                }
                for c in self.cycles
            ]
        else:
            out.pop("cycles")
        return out

    def to_json(self, include_cycles: bool = True) -> str:
        return json.dumps(self.to_dict(include_cycles), indent=2, sort_keys=False)


def _call(backend: ModelBackend, prefix: Trace, branch: int, role: str, partial: dict) -> StepText:
    try:
        return backend.generate_step(prefix, branch)
    except Exception as exc:
        raise CycleError(f"{role} backend failed at prefix length {prefix.length}: {exc}", partial) from exc


def _decide(verifier: Verifier, target_step: StepText, draft_step: StepText, partial: dict) -> bool:
    try:
        return verify(verifier, target_step, draft_step)
    except Exception as exc:
        raise CycleError(f"verifier failed: {exc}", partial) from exc


def run_sync_cycle(
    config: PipelineConfig,
    draft: ModelBackend,
    target: ModelBackend,
    verifier: Verifier,
    trace: Trace,
) -> CycleOutcome:
    """One synchronous lookahead cycle.

    The draft proposes up to gamma steps sequentially (stopping early at
    end-of-generation); the target then produces s_0..s_m on the draft
    prefixes in parallel.  Wall time is the draft chain plus the slowest
    target call plus ``verify_cost`` per verification.
    """
    if trace.done:
        raise ValueError("trace is already done")
    T = target.cost
    partial: dict = {"drafts": [], "targets": []}
    drafts: list[StepText] = []
    prefixes = [trace]
    draft_time = 0.0
    for _ in range(config.gamma):
        d = _call(draft, prefixes[-1], 0, "draft", partial)
        draft_time += step_cost(draft, d)
        if d.eos:
            break
        drafts.append(d)
        partial["drafts"].append(d)
        prefixes.append(prefixes[-1].extend(d))
    targets = []
    for j in range(len(drafts) + 1):
        s = _call(target, prefixes[j], 0, "target", partial)
        targets.append(s)
        partial["targets"].append(s)
    target_time = max(step_cost(target, s) for s in targets)
    compute = draft_time + sum(step_cost(target, s) for s in targets)

    emitted: list[StepText] = []
    verified = 0
    done = False
    j_star = len(drafts)
    for j, s in enumerate(targets):
        if s.eos:
            j_star, done = j, True
            break
        if j == len(drafts):
            emitted.append(s)
            break
        verified += 1
        if _decide(verifier, s, drafts[j], partial):
            emitted.append(drafts[j])
            continue
        emitted.append(s)
        j_star = j
        break
    wall = (draft_time + target_time + verified * config.verify_cost) / T
    return CycleOutcome(j_star, emitted, wall, verified, j_star, compute / T, done)


def run_multibranch_cycle(
    config: PipelineConfig,
    draft: ModelBackend,
    target: ModelBackend,
    verifier: Verifier,
    trace: Trace,
) -> CycleOutcome:
    """Sync cycle with W draft candidates per position.

    A position is accepted when any candidate passes the verifier; the
    lowest-index passing candidate is kept.  The W candidates run in
    parallel, so a position costs the slowest candidate on the clock and the
    sum of all W on the compute counter.  Positions past the first rejection
    are charged one draft step of latency so the cycle time matches the
    single-branch cycle.
    """
    if trace.done:
        raise ValueError("trace is already done")
    T = target.cost
    partial: dict = {"kept": [], "targets": []}
    prefix = trace
    emitted: list[StepText] = []
    draft_time = target_time = compute = 0.0
    verified = accepted = 0
    done = False
    j_star = config.gamma
    positions = 0
    for j in range(config.gamma + 1):
        s = _call(target, prefix, 0, "target", partial)
        partial["targets"].append(s)
        target_time = max(target_time, step_cost(target, s))
        compute += step_cost(target, s)
        if s.eos:
            j_star, done = j, True
            break
        if j == config.gamma:
            emitted.append(s)
            break
        candidates = [_call(draft, prefix, b, "draft", partial) for b in range(config.W)]
        positions += 1
        draft_time += max(step_cost(draft, d) for d in candidates)
        compute += sum(step_cost(draft, d) for d in candidates)
        verified += 1
        kept = None
        for d in candidates:
            if not d.eos and _decide(verifier, s, d, partial):
                kept = d
                break
        if kept is None:
            emitted.append(s)
            j_star = j
            break
        accepted += 1
        emitted.append(kept)
        partial["kept"].append(kept)
        prefix = prefix.extend(kept)
    draft_time += (config.gamma - positions) * draft.cost
    wall = (draft_time + target_time + verified * config.verify_cost) / T
    return CycleOutcome(j_star, emitted, wall, verified, accepted, compute / T, done)


def _output_text(trace: Trace, input: Trace) -> str:
    return "".join(s.text for s in trace.steps[input.length :])


def _finish_report(
    trace: Trace,
    input: Trace,
    cycles: list[CycleOutcome],
    wall: float,
    proposed: int,
    accepted: int,
    compute: float,
    verifier: Verifier | None,
) -> GenerationReport:
    # Baseline: one T per emitted step, so speedup is steps per unit wall time.
    n = trace.length - input.length
    speedup = n / wall if wall > 0 else 1.0
    return GenerationReport(
        output_text=_output_text(trace, input),
        total_wall_time=wall,
        cycles=cycles,
        accept_rate=accepted / proposed if proposed else 1.0,
        measured_speedup=speedup,
        compute_units=compute,
        proposed=proposed,
        accepted=accepted,
        emitted_steps=n,
        baseline_wall_time=float(n),
        judge_malformed=getattr(verifier, "malformed", 0),
    )


def run_sync_pipeline(
    config: PipelineConfig,
    draft: ModelBackend,
    target: ModelBackend,
    verifier: Verifier,
    input: Trace,
) -> GenerationReport:
    cycle_fn = run_multibranch_cycle if config.W > 1 else run_sync_cycle
    trace = input
    cycles: list[CycleOutcome] = []
    wall = compute = 0.0
    proposed = accepted = 0
    limit = input.length + config.max_steps
    while not trace.done and trace.length < limit:
        outcome = cycle_fn(config, draft, target, verifier, trace)
        room = limit - trace.length
        if len(outcome.emitted) > room:
            outcome.emitted = outcome.emitted[:room]
            outcome.done = True
        trace = trace.extend_all(outcome.emitted)
        if outcome.emitted:
            wall += outcome.wall_time
        compute += outcome.compute_units
        proposed += outcome.verified
        accepted += outcome.accepted
        cycles.append(outcome)
        if outcome.done and trace.length < limit:
            trace = trace.finish()
    return _finish_report(trace, input, cycles, wall, proposed, accepted, compute, verifier)


# Event kinds, ordered for tie-breaking at equal timestamps.
_TARGET, _VERIFY, _DRAFT = 0, 1, 2


class _AsyncRun:
    """Discrete-event state for :func:`run_async_pipeline`.

    A pair j = (draft step j, target step j) starts once draft step j - 1 is
    complete and fewer than ``depth`` target calls are in flight; both
    members condition on the same prefix.  Pair j is verified once both are
    complete and pair j - 1 was accepted.  A rejection commits the target
    step, cancels all in-flight work and starts a new stage.
    """

    def __init__(self, config, draft, target, verifier, input):
        self.config = config
        self.draft = draft
        self.target = target
        self.verifier = verifier
        self.T = target.cost
        ratio = draft.cost / target.cost
        cap = math.ceil(1.0 / ratio - 1e-9) if ratio < 1.0 else 1
        self.depth = max(1, min(cap, config.gamma))
        self.limit = input.length + config.max_steps
        self.committed = input
        self.events: list = []
        self.seq = 0
        self.cycles: list[CycleOutcome] = []
        self.proposed = self.accepted = 0
        self.compute = 0.0
        self.last_commit = 0.0
        self.finished = False

    def push(self, t: float, kind: int, j: int) -> None:
        heapq.heappush(self.events, (t, kind, j, self.stage, self.seq))
        self.seq += 1

    def new_stage(self, t: float) -> None:
        self.stage = getattr(self, "stage", -1) + 1
        self.stage_start = t
        self.prefixes = [self.committed]
        self.drafts: list[StepText | None] = []
        self.targets: list[StepText | None] = []
        self.draft_done: list[bool] = []
        self.target_done: list[bool] = []
        self.in_flight = 0
        self.next_verify = 0
        self.verify_pending = False
        self.stage_emitted: list[StepText] = []
        self.stage_verified = 0
        self.maybe_start(t)

    def partial(self) -> dict:
        return {"committed": self.committed.length, "stage": self.stage, "drafts": list(self.drafts)}

    def maybe_start(self, t: float) -> None:
        while True:
            j = len(self.drafts)
            if self.prefixes[0].length + j >= self.limit or self.in_flight >= self.depth:
                return
            if j > 0:
                prev = self.drafts[j - 1]
                if not self.draft_done[j - 1] or prev is None or prev.eos:
                    return
            prefix = self.prefixes[j]
            d = _call(self.draft, prefix, 0, "draft", self.partial())
            s = _call(self.target, prefix, 0, "target", self.partial())
            self.drafts.append(d)
            self.targets.append(s)
            self.draft_done.append(False)
            self.target_done.append(False)
            self.prefixes.append(prefix if d.eos else prefix.extend(d))
            self.in_flight += 1
            dc, tc = step_cost(self.draft, d), step_cost(self.target, s)
            self.compute += dc + tc
            self.push(t + tc, _TARGET, j)
            self.push(t + dc, _DRAFT, j)

    def ready(self, j: int) -> bool:
        return j < len(self.drafts) and self.draft_done[j] and self.target_done[j]

    def close_stage(self, t: float, j_star: int, done: bool) -> None:
        if self.stage_emitted:
            self.last_commit = t
        self.cycles.append(
            CycleOutcome(
                j_star=j_star,
                emitted=self.stage_emitted,
                wall_time=(t - self.stage_start) / self.T,
                verified=self.stage_verified,
                accepted=j_star,
                compute_units=0.0,
                done=done,
            )
        )

    def commit(self, step: StepText) -> None:
        self.committed = self.committed.extend(step)
        self.stage_emitted.append(step)

    def on_verify(self, t: float, j: int) -> None:
        s, d = self.targets[j], self.drafts[j]
        assert s is not None and d is not None
        if s.eos:
            self.close_stage(t, j, True)
            self.committed = self.committed.finish()
            self.finished = True
            return
        self.stage_verified += 1
        self.proposed += 1
        ok = not d.eos and _decide(self.verifier, s, d, self.partial())
        if ok:
            self.accepted += 1
            self.commit(d)
        else:
            self.commit(s)
        if self.committed.length >= self.limit:
            self.close_stage(t, j, True)
            self.finished = True
            return
        if not ok:
            self.close_stage(t, j, False)
            self.new_stage(t)
            return
        self.last_commit = t
        self.next_verify = j + 1
        self.schedule_verify(t)
        self.maybe_start(t)

    def schedule_verify(self, t: float) -> None:
        if not self.verify_pending and self.ready(self.next_verify):
            self.verify_pending = True
            self.push(t + self.config.verify_cost * self.T, _VERIFY, self.next_verify)

    def run(self) -> None:
        self.new_stage(0.0)
        while self.events and not self.finished:
            t, kind, j, stage, _ = heapq.heappop(self.events)
            if stage != self.stage:
                continue
            if kind == _TARGET:
                self.target_done[j] = True
                self.in_flight -= 1
                self.schedule_verify(t)
                self.maybe_start(t)
            elif kind == _DRAFT:
                self.draft_done[j] = True
                self.schedule_verify(t)
                self.maybe_start(t)
            else:
                self.verify_pending = False
                self.on_verify(t, j)


def run_async_pipeline(
    config: PipelineConfig,
    draft: ModelBackend,
    target: ModelBackend,
    verifier: Verifier,
    input: Trace,
) -> GenerationReport:
    """Asynchronous lookahead on a virtual clock.

    Total wall time is the timestamp of the last committed step, in T units.
    Each stage (from a restart to its decisive target step) is reported as one
    :class:`CycleOutcome`.
    """
    if config.mode is not Mode.ASYNC:
        raise ConfigError("mode", f"run_async_pipeline needs mode=async, got {config.mode.value}")
    if input.done:
        raise ValueError("input trace is already done")
    run = _AsyncRun(config, draft, target, verifier, input)
    run.run()
    wall = run.last_commit / run.T
    trace = run.committed
    return _finish_report(
        trace, input, run.cycles, wall, run.proposed, run.accepted, run.compute / run.T, verifier
    )


def run_autoregressive_baseline(target: ModelBackend, input: Trace, max_steps: int) -> GenerationReport:
    """Target-only decoding; wall time is one T per emitted step, accept_rate is 1.0 by convention."""
    if max_steps < 1:
        raise ConfigError("max_steps", "must be >= 1")
    trace = input
    for _ in range(max_steps):
        try:
            s = target.generate_step(trace)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"target backend failed: {exc}", {"prefix_length": trace.length}) from exc
        if s.eos:
            trace = trace.finish()
            break
        trace = trace.extend(s)
    n = trace.length - input.length
    return GenerationReport(
        output_text=_output_text(trace, input),
        total_wall_time=float(n),
        cycles=[],
        accept_rate=1.0,
        measured_speedup=1.0,
        compute_units=float(n),
        emitted_steps=n,
        baseline_wall_time=float(n),
    )


def wrap_token_sd(
    draft: ModelBackend, target: ModelBackend, token_sd: TokenSDConfig, seed: int
) -> tuple[ModelBackend, ModelBackend]:
    """Run both models' steps through nested token speculation (independent streams)."""
    return TokenSDBackend(draft, token_sd, seed=seed * 2 + 1), TokenSDBackend(target, token_sd, seed=seed * 2)


def run_pipeline(
    config: PipelineConfig,
    draft: ModelBackend,
    target: ModelBackend,
    input: Trace | None = None,
    seed: int = 0,
) -> GenerationReport:
    """Dispatch on ``config.mode``; wraps backends for nested token speculation when configured.

    ``measured_speedup`` is always relative to target-only decoding of the
    unwrapped target.
    """
    input = input if input is not None else Trace()
    base_T = target.cost
    if config.token_sd is not None:
        draft, target = wrap_token_sd(draft, target, config.token_sd, seed)
    runner = run_async_pipeline if config.mode is Mode.ASYNC else run_sync_pipeline
    report = runner(config, draft, target, config.verifier, input)
    # Backends are wrapped without changing declared cost, so T is unchanged.
    assert target.cost == base_T
    log.info(
        "mode=%s gamma=%d W=%d steps=%d wall=%.4f speedup=%.4f accept=%.4f",
        config.mode.value,
        config.gamma,
        config.W,
        report.emitted_steps,
        report.total_wall_time,
        report.measured_speedup,
        report.accept_rate,
    )
    return report
