"""Instrument registry schemas: atomic services, instruments and the registry."""
from typing import Dict, FrozenSet, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import settings

Scalar = Union[float, int, str]

NUMERIC_TYPES = {"temperature", "duration", "volume", "well", "count"}


class ParamSpec(BaseModel):
    """One parameter accepted by an atomic service."""
    model_config = ConfigDict(frozen=True)

    name: str
    type: Literal["temperature", "duration", "volume", "well", "count", "label"]
    range: Optional[Tuple[float, float]] = None
    choices: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def check_range(self) -> "ParamSpec":
        if self.type in NUMERIC_TYPES:
            if self.range is None:
                raise ValueError(f"numeric parameter '{self.name}' needs a range")
            low, high = self.range
            if low > high:
                raise ValueError(f"parameter '{self.name}' has an empty range [{low}, {high}]")
        elif self.choices is not None and not self.choices:
            raise ValueError(f"label parameter '{self.name}' has an empty choice list")
        return self

    def accepts(self, value: Scalar) -> bool:
        if self.type == "label":
            return isinstance(value, str) and (self.choices is None or value in self.choices)
        if isinstance(value, str) or isinstance(value, bool):
            return False
        low, high = self.range
        return low <= value <= high


class DurationModel(BaseModel):
    """Affine duration: base_min + per_unit_min * params[quantity]."""
    model_config = ConfigDict(frozen=True)

    base_min: float = Field(ge=0)
    per_unit_min: float = Field(default=0.0, ge=0)
    quantity: Optional[str] = None

    def minutes(self, params: Mapping[str, Scalar]) -> float:
        if self.quantity is None or self.per_unit_min == 0:
            return self.base_min
        return self.base_min + self.per_unit_min * float(params.get(self.quantity, 0))

    def ticks(self, params: Mapping[str, Scalar]) -> int:
        """Duration in scheduler ticks (tenths of a minute), never below one tick."""
        return max(1, int(round(self.minutes(params) * settings.TICKS_PER_MINUTE)))


class AtomicService(BaseModel):
    model_config = ConfigDict(frozen=True)

    service_id: str
    instrument_id: str
    name: str
    description: str = ""
    params_schema: Tuple[ParamSpec, ...] = ()
    capability_tags: FrozenSet[str]
    duration_model: DurationModel

    @field_validator("capability_tags")
    @classmethod
    def tags_not_empty(cls, tags: FrozenSet[str]) -> FrozenSet[str]:
        if not tags:
            raise ValueError("an atomic service needs at least one capability tag")
        return tags

    def param(self, name: str) -> Optional[ParamSpec]:
        for spec in self.params_schema:
            if spec.name == name:
                return spec
        return None

    def accepts(self, params: Mapping[str, Scalar]) -> bool:
        """True when every given parameter is declared and inside its range."""
        for name, value in params.items():
            spec = self.param(name)
            if spec is None or not spec.accepts(value):
                return False
        return True

    def ticks(self, params: Mapping[str, Scalar]) -> int:
        return self.duration_model.ticks(params)


class Instrument(BaseModel):
    model_config = ConfigDict(frozen=True)

    instrument_id: str
    kind: str
    zone: str = "bench"
    channels: int = Field(default=1, ge=1)
    exclusive: bool = True
    services: Tuple[AtomicService, ...]

    @model_validator(mode="after")
    def check_services(self) -> "Instrument":
        if not self.services:
            raise ValueError(f"instrument '{self.instrument_id}' declares no services")
        for service in self.services:
            if service.instrument_id != self.instrument_id:
                raise ValueError(
                    f"service '{service.service_id}' does not belong to '{self.instrument_id}'"
                )
        return self


class Registry(BaseModel):
    """Immutable view over the lab's instruments, indexed by capability tag."""
    model_config = ConfigDict(frozen=True)

    instruments: Dict[str, Instrument]
    tag_index: Dict[str, Tuple[str, ...]]
    services: Dict[str, AtomicService]

    def service(self, service_id: str) -> AtomicService:
        return self.services[service_id]

    def instrument_of(self, service_id: str) -> Instrument:
        return self.instruments[self.services[service_id].instrument_id]

    def all_tags(self) -> List[str]:
        return sorted(self.tag_index)
