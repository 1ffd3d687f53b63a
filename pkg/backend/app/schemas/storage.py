"""DNA storage workload schemas."""
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Strand(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    sequence: str  # index field + payload


class StorageHeader(BaseModel):
    """Out-of-band metadata needed to decode; kept in the run manifest."""
    model_config = ConfigDict(frozen=True)

    strand_count: int = Field(ge=0)
    byte_length: int = Field(ge=0)
    payload_nt: int
    index_nt: int

    @property
    def strand_length(self) -> int:
        return self.index_nt + self.payload_nt


class StrandSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    strands: Tuple[Strand, ...] = ()
    header: StorageHeader

    @model_validator(mode="after")
    def dense_and_uniform(self) -> "StrandSet":
        for position, strand in enumerate(self.strands):
            if strand.index != position:
                raise ValueError(f"strand indices must be dense, got {strand.index} at {position}")
            if len(strand.sequence) != self.header.strand_length:
                raise ValueError(f"strand {strand.index} length differs from {self.header.strand_length}")
        return self

    @property
    def sequences(self) -> List[str]:
        return [s.sequence for s in self.strands]


class StorageReport(BaseModel):
    recovered: bytes
    agreement: Dict[int, float]
    step_count: int
    instruments_used: int
    wall_clock_min: float
    write_makespan_min: float = 0.0
    read_makespan_min: float = 0.0

    @property
    def mean_agreement(self) -> float:
        if not self.agreement:
            return 1.0
        return sum(self.agreement.values()) / len(self.agreement)
