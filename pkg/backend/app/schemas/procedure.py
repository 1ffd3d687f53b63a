"""Chemical-level procedure IR, objectives, requests and reagent inventory."""
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

Scalar = Union[float, int, str]

# Synthesis cycle constants (volumes in µL, times in minutes)
EXTENSION_VOLUME = 20.0
DEBLOCK_VOLUME = 20.0
DEBLOCK_TIME = 5.0
EXTENSION_TEMP = 37.0
WASH_VOLUME = 50.0
CYCLE_WASH_REPEATS = 2


class Container(BaseModel):
    """A tube or well address on the deck."""
    model_config = ConfigDict(frozen=True)

    zone: str = "bench"
    row: int = Field(default=1, ge=0)
    col: int = Field(default=1, ge=0)

    def __str__(self) -> str:
        return f"{self.zone}/{self.row}.{self.col}"

    def sort_key(self) -> Tuple[str, int, int]:
        return (self.zone, self.row, self.col)


class _StepBase(BaseModel):
    model_config = ConfigDict(frozen=True)

    # field name -> procedure parameter name
    param_refs: Dict[str, str] = Field(default_factory=dict)

    def resolved(self, params: Dict[str, Scalar]) -> "_StepBase":
        """Copy of the step with referenced procedure parameters substituted."""
        if not self.param_refs:
            return self
        update = {field: params[name] for field, name in self.param_refs.items()}
        return self.model_copy(update=update)


class TransferStep(_StepBase):
    kind: Literal["transfer"] = "transfer"
    reagent: str
    volume: float = Field(gt=0)
    src: Container
    dst: Container


class IncubateStep(_StepBase):
    kind: Literal["incubate"] = "incubate"
    temp: float
    duration: float = Field(gt=0)
    requires_sealed: bool = False
    container: Container = Field(default_factory=Container)


class MeasureStep(_StepBase):
    kind: Literal["measure"] = "measure"
    modality: Literal["fluorescence", "sequencing"] = "fluorescence"
    container: Container = Field(default_factory=Container)


class WashStep(_StepBase):
    kind: Literal["wash"] = "wash"
    buffer: str
    repeats: int = Field(default=1, ge=1)
    container: Container = Field(default_factory=Container)


class MixStep(_StepBase):
    kind: Literal["mix"] = "mix"
    volume: float = Field(default=10.0, gt=0)
    container: Container = Field(default_factory=Container)


class SealStep(_StepBase):
    kind: Literal["seal"] = "seal"
    container: Container = Field(default_factory=Container)


class UnsealStep(_StepBase):
    kind: Literal["unseal"] = "unseal"
    container: Container = Field(default_factory=Container)


class SynthesisCycleStep(_StepBase):
    """One single-nucleotide extension + deblock cycle."""
    kind: Literal["synthesis_cycle"] = "synthesis_cycle"
    base: Literal["A", "C", "G", "T"]
    buffer: str = "lysis"
    cycle_time: float = Field(default=20.0, gt=0)
    container: Container = Field(default_factory=Container)


class ThermalCycleStep(_StepBase):
    kind: Literal["thermal_cycle"] = "thermal_cycle"
    cycles: int = Field(ge=1)
    requires_sealed: bool = False
    container: Container = Field(default_factory=Container)


Step = Annotated[
    Union[
        TransferStep,
        IncubateStep,
        MeasureStep,
        WashStep,
        MixStep,
        SealStep,
        UnsealStep,
        SynthesisCycleStep,
        ThermalCycleStep,
    ],
    Field(discriminator="kind"),
]


# ==================== Objectives ====================

class ThresholdGoal(BaseModel):
    model_config = ConfigDict(frozen=True)

    goal: Literal["threshold"] = "threshold"
    metric: Literal["yield"] = "yield"
    value: float = Field(gt=0, le=1)


class MinimizeGoal(BaseModel):
    model_config = ConfigDict(frozen=True)

    goal: Literal["minimize"] = "minimize"
    metric: Literal["time"] = "time"


Goal = Annotated[Union[ThresholdGoal, MinimizeGoal], Field(discriminator="goal")]


class Objective(BaseModel):
    """Ordered goal list; earlier goals dominate later ones."""
    model_config = ConfigDict(frozen=True)

    goals: Tuple[Goal, ...] = Field(min_length=1)

    @property
    def thresholds(self) -> List[ThresholdGoal]:
        return [g for g in self.goals if isinstance(g, ThresholdGoal)]

    @property
    def minimizes(self) -> bool:
        return any(isinstance(g, MinimizeGoal) for g in self.goals)


def default_objective() -> Objective:
    return Objective(goals=(ThresholdGoal(value=0.98), MinimizeGoal()))


class Procedure(BaseModel):
    model_config = ConfigDict(frozen=True)

    procedure_id: str
    task: str
    steps: Tuple[Step, ...] = Field(min_length=1)
    params: Dict[str, Scalar] = Field(default_factory=dict)
    objective: Objective = Field(default_factory=default_objective)

    @model_validator(mode="after")
    def check_param_refs(self) -> "Procedure":
        for index, step in enumerate(self.steps):
            for field, name in step.param_refs.items():
                if name not in self.params:
                    raise ValueError(
                        f"step {index} ({step.kind}) references unknown parameter '{name}'"
                    )
                if field not in type(step).model_fields:
                    raise ValueError(f"step {index} ({step.kind}) has no field '{field}'")
        return self

    def with_params(self, overrides: Dict[str, Scalar], procedure_id: Optional[str] = None) -> "Procedure":
        params = {**self.params, **overrides}
        return self.model_copy(update={
            "params": params,
            "procedure_id": procedure_id or self.procedure_id,
        })

    def resolved_steps(self) -> List[Step]:
        return [step.resolved(self.params) for step in self.steps]


# ==================== Requests ====================

class Request(BaseModel):
    model_config = ConfigDict(frozen=True)

    request_id: str
    user_id: str = "anonymous"
    task: str
    params: Dict[str, Scalar] = Field(default_factory=dict)
    data_payload: Optional[bytes] = None
    objective: Objective = Field(default_factory=default_objective)
    submit_time: float = Field(default=0.0, ge=0)
    replicates: int = Field(default=1, ge=1)
    mode: Literal["single", "optimize"] = "single"


# ==================== Inventory ====================

class ReagentInventory(BaseModel):
    """Reagent stock with a per-request reservation ledger."""
    model_config = ConfigDict(frozen=True)

    quantities: Dict[str, float] = Field(default_factory=dict)
    ledger: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def non_negative(self) -> "ReagentInventory":
        for reagent, amount in self.quantities.items():
            if amount < 0:
                raise ValueError(f"negative stock for {reagent}: {amount}")
        return self

    def available(self, reagent: str) -> float:
        return self.quantities.get(reagent, 0.0)


class Feasible(BaseModel):
    model_config = ConfigDict(frozen=True)

    feasible: Literal[True] = True
    demand: Dict[str, float] = Field(default_factory=dict)


class Infeasible(BaseModel):
    model_config = ConfigDict(frozen=True)

    feasible: Literal[False] = False
    missing: Tuple[Tuple[str, float], ...]
