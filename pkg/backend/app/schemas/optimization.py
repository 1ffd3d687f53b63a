"""Closed-loop optimization state, hypotheses and outcomes."""
from typing import Dict, List, Optional, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

Scalar = Union[float, int, str]


class Outcome(BaseModel):
    """What the simulated lab reports for one program."""
    model_config = ConfigDict(frozen=True)

    stepwise_yield: Optional[float] = Field(default=None, ge=0, le=1)
    time: float = Field(ge=0)
    reads: Optional[Tuple[str, ...]] = None
    positive: Optional[bool] = None


class Hypothesis(BaseModel):
    model_config = ConfigDict(frozen=True)

    rationale: str
    deltas: Dict[str, Scalar]
    dimension: str = ""

    @field_validator("deltas")
    @classmethod
    def not_empty(cls, deltas: Dict[str, Scalar]) -> Dict[str, Scalar]:
        if not deltas:
            raise ValueError("a hypothesis must change at least one parameter")
        return deltas


class Exhausted(BaseModel):
    """Proposer has nothing left to try."""
    model_config = ConfigDict(frozen=True)

    reason: str = "search space exhausted"


class HistoryEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    procedure_id: str
    params: Dict[str, Scalar]
    outcome: Outcome
    decision: str = ""


class OptimizationState(BaseModel):
    history: List[HistoryEntry] = Field(default_factory=list)
    frontier: Optional[int] = None  # index into history
    exhausted_dims: Set[str] = Field(default_factory=set)
    dim_cursor: int = 0
    halted: bool = False
    halt_reason: str = ""
    iteration: int = 0

    @property
    def frontier_entry(self) -> Optional[HistoryEntry]:
        return None if self.frontier is None else self.history[self.frontier]

    def tried(self) -> List[Dict[str, Scalar]]:
        return [entry.params for entry in self.history]


# Discrete search grid, in coordinate-search order
SYNTHESIS_GRID: Dict[str, List[Scalar]] = {
    "buffer": ["lysis", "bw"],
    "tween20": [0.0, 0.05],
    "cocl2": [0.25, 0.5, 1.0],
    "tdt": [1, 2],
    "terminator": [1, 2],
    "cycle_time": [20, 15, 10],
}
