"""State management for the closed optimization loop using LangGraph."""
from typing import Any, Dict, List, Optional, Tuple, TypedDict

from app.core.exceptions import LabError
from app.schemas.optimization import Hypothesis, OptimizationState, Outcome
from app.schemas.procedure import Procedure, Request
from app.schemas.program import Program
from app.schemas.schedule import EventTrace, Schedule


class JournalEntry(TypedDict):
    """One line of the optimization journal."""
    iteration: int
    procedure_id: str
    params: Dict[str, Any]
    stepwise_yield: Optional[float]
    time_min: float
    decision: str


class OptimizationLoopState(TypedDict):
    """Complete state of one request's design-experiment-optimize loop."""

    # Request
    request: Request
    run_id: str
    seed: int
    budget: int

    # Current iteration
    iteration: int
    current_stage: str
    candidates: List[Procedure]
    hypothesis: Optional[Hypothesis]
    programs: List[Program]
    program_candidates: List[int]  # program position -> candidate position
    schedule: Optional[Schedule]
    trace: Optional[EventTrace]
    outcomes: List[Outcome]

    # Loop memory
    opt_state: OptimizationState
    procedures: List[Procedure]  # parallel to opt_state.history
    runs: List[Tuple[Schedule, EventTrace]]
    journal: List[JournalEntry]
    decision: str
    done: bool

    # Errors
    error: Optional[LabError]
    errors: List[str]


def create_initial_state(request: Request, run_id: str, seed: int, budget: int) -> OptimizationLoopState:
    """Create initial state for the optimization workflow."""
    return OptimizationLoopState(
        request=request,
        run_id=run_id,
        seed=seed,
        budget=budget,
        iteration=0,
        current_stage="INITIALIZED",
        candidates=[],
        hypothesis=None,
        programs=[],
        program_candidates=[],
        schedule=None,
        trace=None,
        outcomes=[],
        opt_state=OptimizationState(),
        procedures=[],
        runs=[],
        journal=[],
        decision="",
        done=False,
        error=None,
        errors=[],
    )
