"""Lexicographic objectives, hypothesis proposers and the loop's stopping rules."""
from abc import ABC, abstractmethod
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
import logging

from app.schemas.optimization import (
    SYNTHESIS_GRID,
    Exhausted,
    HistoryEntry,
    Hypothesis,
    OptimizationState,
    Outcome,
    Scalar,
)
from app.schemas.procedure import MinimizeGoal, Objective, ThresholdGoal

logger = logging.getLogger(__name__)


# ==================== Lexicographic order ====================

def _metric(outcome: Outcome, metric: str) -> float:
    if metric == "yield":
        return outcome.stepwise_yield if outcome.stepwise_yield is not None else 0.0
    return outcome.time


def meets(outcome: Outcome, goal: ThresholdGoal) -> bool:
    return _metric(outcome, goal.metric) >= goal.value


def meets_all(outcome: Outcome, obj: Objective) -> bool:
    return all(meets(outcome, g) for g in obj.thresholds)


def lex_key(outcome: Outcome, obj: Objective) -> Tuple:
    """Sort key where larger is better, one component per goal."""
    key = []
    for goal in obj.goals:
        if isinstance(goal, ThresholdGoal):
            key.append((1, 0.0) if meets(outcome, goal) else (0, _metric(outcome, goal.metric)))
        else:
            key.append(-_metric(outcome, goal.metric))
    return tuple(key)


def lex_compare(a: Outcome, b: Outcome, obj: Objective) -> int:
    """1 if a is better than b, -1 if worse, 0 if the goals cannot tell them apart."""
    ka, kb = lex_key(a, obj), lex_key(b, obj)
    return (ka > kb) - (ka < kb)


# ==================== Proposers ====================

def _same(a: Scalar, b: Scalar) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return a == b
    return abs(float(a) - float(b)) < 1e-9


def _normalized(params: Mapping[str, Scalar]) -> Tuple:
    return tuple(sorted(
        (k, v if isinstance(v, str) else round(float(v), 9)) for k, v in params.items()
    ))


class ProposerStrategy(ABC):
    """Suggests the next parameter change; the slot where a model-driven planner would sit."""

    @abstractmethod
    def propose(self, state: OptimizationState, seed: int = 0) -> Union[Hypothesis, Exhausted]:
        """Return a Hypothesis never tried before, or Exhausted."""


def propose_default(
    state: OptimizationState,
    defaults: Optional[Mapping[str, Scalar]] = None,
    grid: Optional[Mapping[str, Sequence[Scalar]]] = None,
) -> Union[Hypothesis, Exhausted]:
    """
    Coordinate search over the discrete grid.

    Starting from the dimension under the cursor, propose the first grid value
    that differs from the current base and whose full parameter vector is not
    in history. The base is the frontier's params, or `defaults` before any
    experiment ran.
    """
    grid = grid or SYNTHESIS_GRID
    frontier = state.frontier_entry
    base = dict(frontier.params if frontier else (defaults or {}))
    tried = {_normalized(p) for p in state.tried()}
    dims = list(grid)

    for position in range(state.dim_cursor, len(dims)):
        dim = dims[position]
        if dim in state.exhausted_dims or dim not in base:
            continue
        for value in grid[dim]:
            if _same(value, base[dim]):
                continue
            candidate = {**base, dim: value}
            if _normalized(candidate) in tried:
                continue
            return Hypothesis(
                rationale=f"try {dim}={value} (currently {base[dim]})",
                deltas={dim: value},
                dimension=dim,
            )
    return Exhausted()


class CoordinateProposer(ProposerStrategy):
    """Default proposer: one dimension at a time, in grid order."""

    def __init__(self, defaults: Mapping[str, Scalar], grid: Optional[Mapping[str, Sequence[Scalar]]] = None):
        self.defaults = dict(defaults)
        self.grid = dict(grid or SYNTHESIS_GRID)

    def propose(self, state: OptimizationState, seed: int = 0) -> Union[Hypothesis, Exhausted]:
        return propose_default(state, self.defaults, self.grid)

    def dimension_index(self, dim: str) -> int:
        return list(self.grid).index(dim)


# ==================== Loop bookkeeping ====================

def record_iteration(
    state: OptimizationState,
    entries: List[HistoryEntry],
    obj: Objective,
    hypothesis: Optional[Hypothesis] = None,
) -> str:
    """
    Append one iteration's results, move the frontier and apply the stop rules.

    Returns:
        The decision recorded in the journal
    """
    previous, previous_rank = state.frontier_entry, state.frontier
    state.history.extend(entries)
    state.frontier = frontier_rank(state.history, obj)
    improved = state.frontier != previous_rank

    if previous is not None and obj.thresholds and meets_all(previous.outcome, obj):
        if any(not meets_all(entry.outcome, obj) for entry in entries):
            state.halted = True
            state.halt_reason = "regression below a met threshold"
            return "halt: regression"

    if hypothesis is not None and hypothesis.dimension and not improved:
        state.exhausted_dims.add(hypothesis.dimension)

    frontier = state.frontier_entry
    if obj.thresholds and meets_all(frontier.outcome, obj) and not obj.minimizes:
        state.halted = True
        state.halt_reason = "all thresholds met"
        return "objective met"

    if previous is None:
        return "fan-out" if len(entries) > 1 else "baseline"
    return "improved" if improved else "no improvement"


def pool_outcomes(outcomes: Sequence[Outcome]) -> Outcome:
    """Collapse replicate outcomes of one candidate: mean yield, latest finish, all-positive."""
    if not outcomes:
        raise ValueError("cannot pool an empty outcome list")
    yields = [o.stepwise_yield for o in outcomes if o.stepwise_yield is not None]
    verdicts = [o.positive for o in outcomes if o.positive is not None]
    return Outcome(
        stepwise_yield=sum(yields) / len(yields) if yields else None,
        time=max(o.time for o in outcomes),
        positive=all(verdicts) if verdicts else None,
    )


def frontier_rank(history: Sequence[HistoryEntry], obj: Objective) -> Optional[int]:
    """Index of the lexicographic best entry (first one on ties)."""
    best = None
    for index, entry in enumerate(history):
        if best is None or lex_compare(entry.outcome, history[best].outcome, obj) > 0:
            best = index
    return best


def objective_summary(obj: Objective) -> List[str]:
    return [
        f"{g.metric} >= {g.value}" if isinstance(g, ThresholdGoal) else f"min {g.metric}"
        for g in obj.goals
    ]


class OptimizerService:
    """Bookkeeping of one optimization request under its objective."""

    def __init__(self, objective: Objective):
        self.objective = objective

    def record(
        self,
        state: OptimizationState,
        entries: List[HistoryEntry],
        hypothesis: Optional[Hypothesis] = None,
    ) -> str:
        decision = record_iteration(state, entries, self.objective, hypothesis)
        logger.debug(f"Recorded {len(entries)} result(s): {decision}")
        return decision

    def pool(self, outcomes: Sequence[Outcome]) -> Outcome:
        return pool_outcomes(outcomes)

    def summary(self) -> List[str]:
        return objective_summary(self.objective)
