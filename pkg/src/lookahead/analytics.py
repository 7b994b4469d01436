"""Closed-form speedup models for step-level and token-level speculation.

Notation used throughout:

* ``alpha1`` / ``c1``: acceptance rate and draft/target cost ratio of whole
  reasoning steps; ``k1`` is the lookahead depth.
* ``alpha2`` / ``c2``: the same quantities for token-level speculative
  decoding; ``k2`` is the number of tokens scored in parallel.

Every function is pure and evaluated in float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError, check_positive_int, check_probability

# Upper bound of F(y) on (0, 1); the mild constraint requires both ratios above it.
MILD_CONSTRAINT_BOUND = 1.157
DEFAULT_GAMMA_MAX = 64


class Mode(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


class GConvention(str, enum.Enum):
    """Which form of the token-level speedup g(gamma) to evaluate.

    ``BACKGROUND`` counts gamma drafted tokens plus one bonus token;
    ``APPENDIX`` counts gamma tokens scored by the target in parallel.
    """

    BACKGROUND = "background"
    APPENDIX = "appendix"


class Regime(str, enum.Enum):
    HYBRID_OPTIMAL = "HybridOptimal"
    TOKEN_ONLY_OPTIMAL = "TokenOnlyOptimal"
    STEP_ONLY_OPTIMAL = "StepOnlyOptimal"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class SpecParams:
    alpha1: float
    alpha2: float
    c1: float
    c2: float

    def __post_init__(self) -> None:
        for name in ("alpha1", "alpha2", "c1", "c2"):
            object.__setattr__(self, name, check_probability(name, getattr(self, name)))


@dataclass(frozen=True)
class AllocationResult:
    k1: int
    k2: int
    parallel_dim_f: int
    parallel_dim_g: int
    speedup: float
    mode: Mode
    budget: int


@dataclass(frozen=True)
class TheoremReport:
    eq_step_level_holds: bool
    eq_token_level_holds: bool
    preconditions_met: bool
    predicted_regime: Regime


def _one_minus_pow(alpha: float, k: float) -> float:
    # 1 - alpha**k without cancellation when alpha**k is close to 1.
    return -math.expm1(k * math.log(alpha))


def ceil_inverse(c: float) -> int:
    """ceil(1/c), snapping reciprocals that are integral up to rounding noise."""
    inv = 1.0 / c
    nearest = round(inv)
    if abs(inv - nearest) <= 1e-9 * max(1.0, inv):
        return int(nearest)
    return math.ceil(inv)


def token_speedup_g(
    alpha2: float,
    c2: float,
    gamma2: int,
    convention: GConvention = GConvention.APPENDIX,
) -> float:
    """Token-level speculative decoding speedup.

    Background: (1 - a^(g+1)) / ((1 - a)(1 + c g)),  g >= 0.
    Appendix:   (1 - a^g) / ((1 - a)(1 - c + c g)),  g >= 1.

    ``c2 = 0`` is accepted (the free-draft limit).
    """
    alpha2 = check_probability("alpha2", alpha2)
    c2 = check_probability("c2", c2, closed_low=True)
    convention = GConvention(convention)
    if convention is GConvention.BACKGROUND:
        gamma2 = check_positive_int("gamma2", gamma2, minimum=0)
        return _one_minus_pow(alpha2, gamma2 + 1) / ((1.0 - alpha2) * (1.0 + c2 * gamma2))
    gamma2 = check_positive_int("gamma2", gamma2)
    return _geometric_speedup(alpha2, c2, gamma2)


def _geometric_speedup(alpha: float, c: float, k: int) -> float:
    return _one_minus_pow(alpha, k) / ((1.0 - alpha) * (1.0 - c + c * k))


def step_speedup_sync(alpha1: float, c1: float, k1: int) -> float:
    """Sync lookahead speedup (1 - a^k) / ((1 - a)(1 - c + c k)).

    ``k1`` counts target generations issued in parallel per cycle, so a
    cycle drafts ``k1 - 1`` steps.
    """
    alpha1 = check_probability("alpha1", alpha1)
    c1 = check_probability("c1", c1)
    k1 = check_positive_int("k1", k1)
    return _geometric_speedup(alpha1, c1, k1)


def async_saturated_speedup(alpha1: float, c1: float) -> float:
    """Asymptotic async speedup when drafting never saturates (S1)."""
    alpha1 = check_probability("alpha1", alpha1)
    c1 = check_probability("c1", c1)
    return 1.0 / (c1 + (1.0 - c1) * (1.0 - alpha1))


def async_depth_limited_speedup(alpha1: float, c1: float, k1: int) -> float:
    """Asymptotic async speedup when at most ``k1`` targets run at once (S2).

    Evaluated for any k1 >= 1; :func:`step_speedup_async` only uses it
    below ceil(1/c1).
    """
    alpha1 = check_probability("alpha1", alpha1)
    c1 = check_probability("c1", c1)
    k1 = check_positive_int("k1", k1)
    a_k = alpha1**k1
    bracket = alpha1 - alpha1 ** (k1 + 1) - k1 * (1.0 - alpha1) * a_k
    return _one_minus_pow(alpha1, k1) / ((1.0 - alpha1) + c1 * bracket)


def step_speedup_async(alpha1: float, c1: float, k1: int) -> float:
    alpha1 = check_probability("alpha1", alpha1)
    c1 = check_probability("c1", c1)
    k1 = check_positive_int("k1", k1)
    if k1 >= ceil_inverse(c1):
        return async_saturated_speedup(alpha1, c1)
    return async_depth_limited_speedup(alpha1, c1, k1)


def step_speedup(alpha1: float, c1: float, k1: int, mode: Mode) -> float:
    if Mode(mode) is Mode.SYNC:
        return step_speedup_sync(alpha1, c1, k1)
    return step_speedup_async(alpha1, c1, k1)


def combined_speedup_h(params: SpecParams, k1: int, k2: int, mode: Mode) -> float:
    """h(k1, k2) = f(k1) * g(k2), with g in the appendix convention."""
    f = step_speedup(params.alpha1, params.c1, k1, mode)
    g = token_speedup_g(params.alpha2, params.c2, k2, GConvention.APPENDIX)
    return f * g


def parallel_dim_f(c1: float, k1: int, mode: Mode) -> int:
    c1 = check_probability("c1", c1)
    k1 = check_positive_int("k1", k1)
    if Mode(mode) is Mode.SYNC:
        return k1
    return min(ceil_inverse(c1), k1)


def optimal_allocation(params: SpecParams, M: int, mode: Mode) -> AllocationResult:
    """Exhaustive search of h(k1, k2) subject to ParallelDim_f * k2 <= M.

    k1 ranges over [1, M] (sync) or [1, max(M, ceil(1/c1))] (async), k2 over
    [1, M].  Ties go to the smaller k1, then the smaller k2.
    """
    M = check_positive_int("M", M)
    mode = Mode(mode)
    k1_max = M if mode is Mode.SYNC else max(M, ceil_inverse(params.c1))
    g_values = [
        token_speedup_g(params.alpha2, params.c2, k2, GConvention.APPENDIX) for k2 in range(1, M + 1)
    ]
    best: tuple[float, int, int, int] | None = None
    for k1 in range(1, k1_max + 1):
        dim_f = parallel_dim_f(params.c1, k1, mode)
        k2_cap = M // dim_f
        if k2_cap < 1:
            continue
        f = step_speedup(params.alpha1, params.c1, k1, mode)
        for k2 in range(1, k2_cap + 1):
            h = f * g_values[k2 - 1]
            if best is None or h > best[0]:
                best = (h, k1, k2, dim_f)
    assert best is not None  # (1, 1) is always feasible
    h, k1, k2, dim_f = best
    return AllocationResult(
        k1=k1, k2=k2, parallel_dim_f=dim_f, parallel_dim_g=k2, speedup=h, mode=mode, budget=M
    )


def mild_constraint_holds(params: SpecParams) -> bool:
    return (
        min((1 + params.alpha1) / (1 + params.c1), (1 + params.alpha2) / (1 + params.c2))
        > MILD_CONSTRAINT_BOUND
    )


def _halving_ratio(alpha: float, c: float, M: int) -> float:
    # (1 + a^(M/2)) (1 - c + c M/2) / (1 - c + c M) == g(M) / g(M/2)
    half = M // 2
    return (1.0 + alpha**half) * (1.0 - c + c * half) / (1.0 - c + c * M)


def hybrid_conditions_sync(params: SpecParams, M: int) -> TheoremReport:
    """Evaluate the sync hybrid-optimality conditions at an even budget M >= 4.

    The step-level condition compares (1+a1)/(1+c1) against the token-side
    halving ratio; the token-level condition is its mirror image.  Regimes:
    both hold -> hybrid, step condition fails -> token-only, token condition
    fails -> step-only.  Without the mild constraint the regime is
    indeterminate.
    """
    M = check_positive_int("M", M, minimum=4)
    if M % 2:
        raise DomainError("M", f"must be even, got {M}")
    step_ok = (1 + params.alpha1) / (1 + params.c1) >= _halving_ratio(params.alpha2, params.c2, M)
    token_ok = (1 + params.alpha2) / (1 + params.c2) >= _halving_ratio(params.alpha1, params.c1, M)
    pre = mild_constraint_holds(params)
    if not pre:
        regime = Regime.INDETERMINATE
    elif step_ok and token_ok:
        regime = Regime.HYBRID_OPTIMAL
    elif not step_ok and token_ok:
        regime = Regime.TOKEN_ONLY_OPTIMAL
    elif step_ok and not token_ok:
        regime = Regime.STEP_ONLY_OPTIMAL
    else:
        regime = Regime.INDETERMINATE
    return TheoremReport(
        eq_step_level_holds=step_ok,
        eq_token_level_holds=token_ok,
        preconditions_met=pre,
        predicted_regime=regime,
    )


def indeterminate_report() -> TheoremReport:
    """Report used when the budget does not satisfy the hybrid-condition preconditions."""
    return TheoremReport(False, False, False, Regime.INDETERMINATE)


def log_derivative_a(alpha: float, x: float) -> float:
    """a(alpha, x) = -ln(alpha) * x alpha^x / (1 - alpha^x), for x >= 1."""
    alpha = check_probability("alpha", alpha)
    x = float(x)
    if not x >= 1.0:
        raise DomainError("x", f"must be >= 1, got {x!r}")
    return -math.log(alpha) * x * alpha**x / _one_minus_pow(alpha, x)


def token_optimum_gamma(alpha2: float, c2: float, gamma_max: int = DEFAULT_GAMMA_MAX) -> int:
    """Integer argmax of g (appendix convention) over 1..gamma_max."""
    alpha2 = check_probability("alpha2", alpha2)
    c2 = check_probability("c2", c2)
    gamma_max = check_positive_int("gamma_max", gamma_max, minimum=2)
    if alpha2 <= c2:
        raise DomainError("alpha2", f"must exceed c2 ({c2!r}), got {alpha2!r}")
    best_gamma, best_value = 1, _geometric_speedup(alpha2, c2, 1)
    for gamma in range(2, gamma_max + 1):
        value = _geometric_speedup(alpha2, c2, gamma)
        if value > best_value:
            best_gamma, best_value = gamma, value
    return best_gamma


def mild_constraint_F(y: float) -> float:
    """F(y) = 2 - y + (y - 2 + 1/y) ln(1 - y) on 0 < y < 1."""
    y = float(y)
    if not 0.0 < y < 1.0:
        raise DomainError("y", f"must lie in (0, 1), got {y!r}")
    return 2.0 - y + (y - 2.0 + 1.0 / y) * math.log1p(-y)


def expected_accept_run(alpha: float) -> float:
    """E[X] = alpha / (1 - alpha) for P(X = k) = alpha^k (1 - alpha)."""
    alpha = check_probability("alpha", alpha)
    return alpha / (1.0 - alpha)


def expected_ceil_term(alpha: float, gamma: int) -> float:
    """E[ceil((X + 1) / gamma)] = 1 / (1 - alpha^gamma)."""
    alpha = check_probability("alpha", alpha)
    gamma = check_positive_int("gamma", gamma)
    return 1.0 / _one_minus_pow(alpha, gamma)


def expected_mod_term(alpha: float, gamma: int) -> float:
    """E[X mod gamma] for the geometric accept run X."""
    alpha = check_probability("alpha", alpha)
    gamma = check_positive_int("gamma", gamma)
    if gamma == 1:
        return 0.0
    a_g = alpha**gamma
    numerator = alpha - alpha ** (gamma + 1) - gamma * (1.0 - alpha) * a_g
    return numerator / ((1.0 - alpha) * _one_minus_pow(alpha, gamma))
