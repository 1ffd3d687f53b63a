"""Hardware-level program IR and lint reports."""
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.procedure import Container

Scalar = Union[float, int, str]


class Invocation(BaseModel):
    """One atomic-service call; instrument binding is left to the scheduler."""
    model_config = ConfigDict(frozen=True)

    invocation_id: int = Field(ge=0)
    capability: str
    params: Dict[str, Scalar] = Field(default_factory=dict)
    reads: Tuple[Container, ...] = ()
    writes: Tuple[Container, ...] = ()
    depends_on: Tuple[int, ...] = ()
    est_duration: Optional[float] = None
    requires_sealed: bool = False
    step_index: int = 0
    step_kind: str = ""
    merged_count: int = Field(default=1, ge=1)
    # "<request_id>#<invocation_id>" of every invocation folded into this one
    sources: Tuple[str, ...] = ()

    @property
    def containers(self) -> Tuple[Container, ...]:
        return tuple(sorted(set(self.reads) | set(self.writes), key=Container.sort_key))


class Program(BaseModel):
    model_config = ConfigDict(frozen=True)

    program_id: str
    request_id: str
    task: str = ""
    provenance: str = ""
    params: Dict[str, Scalar] = Field(default_factory=dict)
    submit_time: float = 0.0
    invocations: Tuple[Invocation, ...] = ()

    def invocation(self, invocation_id: int) -> Invocation:
        return self.invocations[invocation_id]

    @property
    def request_ids(self) -> List[str]:
        return self.request_id.split("+")

    @property
    def est_total(self) -> Optional[float]:
        """Critical-path length in minutes once durations are bound."""
        if any(inv.est_duration is None for inv in self.invocations):
            return None
        finish: Dict[int, float] = {}
        for inv in self.invocations:
            start = max((finish[d] for d in inv.depends_on), default=0.0)
            finish[inv.invocation_id] = start + inv.est_duration
        return max(finish.values(), default=0.0)


class LintFinding(BaseModel):
    model_config = ConfigDict(frozen=True)

    severity: Literal["error", "warning"]
    rule: str
    invocation_id: int
    message: str


class LintReport(BaseModel):
    findings: List[LintFinding] = Field(default_factory=list)

    @property
    def errors(self) -> List[LintFinding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.findings

    def extend(self, other: "LintReport") -> "LintReport":
        return LintReport(findings=[*self.findings, *other.findings])
