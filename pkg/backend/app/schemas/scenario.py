"""Scenario file schema: one replayable experiment setup."""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field

from app.config import settings
from app.schemas.procedure import Objective

Scalar = Union[float, int, str]


class SurfaceConfig(BaseModel):
    """Yield surface coefficients for enzymatic synthesis."""
    base: float = 0.90
    bw_buffer: float = 0.03
    tween20: float = 0.02
    cocl2_high: float = 0.015
    cocl2_mid: float = 0.007
    tdt_double: float = 0.01
    terminator_double: float = 0.01
    cap: float = 0.985
    time_factors: Dict[float, float] = Field(default_factory=lambda: {20.0: 1.0, 15.0: 0.97, 10.0: 0.90})
    noise_sigma: float = Field(default=0.0, ge=0)


class ChannelConfig(BaseModel):
    deletion: float = Field(default=0.0235, ge=0, le=1)
    insertion: float = Field(default=0.0025, ge=0, le=1)
    substitution: float = Field(default=0.0012, ge=0, le=1)


class RequestSpec(BaseModel):
    """A request as written in a scenario; `task` may use the `task(p=v)` grammar."""
    request_id: str
    user_id: str = "anonymous"
    task: str
    params: Dict[str, Scalar] = Field(default_factory=dict)
    objective: Optional[Objective] = None
    submit_time: float = Field(default=0.0, ge=0)
    replicates: int = Field(default=1, ge=1)
    mode: Literal["single", "optimize"] = "single"


class StorageConfig(BaseModel):
    payload: Optional[str] = None
    coverage: int = Field(default_factory=lambda: settings.DEFAULT_COVERAGE, ge=1)
    payload_nt: int = Field(default_factory=lambda: settings.PAYLOAD_NT)
    index_nt: int = Field(default_factory=lambda: settings.INDEX_NT)
    write_task: str = "storage_write"
    read_task: str = "storage_read"


class ScenarioConfig(BaseModel):
    name: str
    registry: str
    templates: str
    inventory: str
    requests: List[RequestSpec] = Field(default_factory=list)
    policy: Literal["serial_queue", "dynamic"] = "dynamic"
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    budget: int = Field(default_factory=lambda: settings.DEFAULT_BUDGET, ge=1)
    surface: SurfaceConfig = Field(default_factory=SurfaceConfig)
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    # request_id -> fluorescence ground truth
    ground_truth: Dict[str, bool] = Field(default_factory=dict)
    storage: Optional[StorageConfig] = None

    # resolved at load time
    base_dir: Path = Field(default=Path("."), exclude=True)

    def path(self, relative: str) -> Path:
        candidate = Path(relative)
        return candidate if candidate.is_absolute() else self.base_dir / candidate
