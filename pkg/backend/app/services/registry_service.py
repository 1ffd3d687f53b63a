"""Instrument registry: load descriptor files and answer capability queries."""
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Set, Union
import logging

import yaml
from pydantic import ValidationError

from app.core.exceptions import (
    DuplicateIdError,
    EmptyRegistryError,
    RegistryParseError,
    UnknownServiceError,
)
from app.schemas.instrument import AtomicService, DurationModel, Instrument, ParamSpec, Registry, Scalar

logger = logging.getLogger(__name__)


def build_registry(instruments: Iterable[Instrument]) -> Registry:
    """Index instruments by id and capability tag.

    Raises:
        DuplicateIdError: two instruments or two services share an id
        EmptyRegistryError: no instruments given
    """
    by_id: Dict[str, Instrument] = {}
    services: Dict[str, AtomicService] = {}
    tag_index: Dict[str, Set[str]] = defaultdict(set)

    for instrument in instruments:
        if instrument.instrument_id in by_id:
            raise DuplicateIdError("instrument", instrument.instrument_id)
        by_id[instrument.instrument_id] = instrument
        for service in instrument.services:
            if service.service_id in services:
                raise DuplicateIdError("service", service.service_id)
            services[service.service_id] = service
            for tag in service.capability_tags:
                tag_index[tag].add(service.service_id)

    if not by_id:
        raise EmptyRegistryError()

    return Registry(
        instruments=by_id,
        services=services,
        tag_index={tag: tuple(sorted(ids)) for tag, ids in sorted(tag_index.items())},
    )


def _parse_instrument(raw: dict) -> Instrument:
    instrument_id = raw["instrument_id"]
    services = []
    for svc in raw.get("services") or []:
        duration = svc.get("duration") or {}
        services.append(AtomicService(
            service_id=f"{instrument_id}.{svc['name']}",
            instrument_id=instrument_id,
            name=svc["name"],
            description=svc.get("description", ""),
            params_schema=tuple(ParamSpec(**p) for p in svc.get("params") or []),
            capability_tags=frozenset(svc.get("capability_tags") or []),
            duration_model=DurationModel(**duration),
        ))
    return Instrument(
        instrument_id=instrument_id,
        kind=raw.get("kind", instrument_id),
        zone=raw.get("zone", "bench"),
        channels=raw.get("channels", 1),
        exclusive=raw.get("exclusive", True),
        services=tuple(services),
    )


def load_registry(file_path: Union[str, Path]) -> Registry:
    """
    Load a registry descriptor (YAML tree of instrument blocks).

    Args:
        file_path: path to a `.reg` file

    Returns:
        Registry with the tag index built
    """
    path = Path(file_path)
    try:
        document = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise RegistryParseError(f"cannot read registry {path}: {e}")

    if document is None:
        raise EmptyRegistryError()
    if not isinstance(document, dict) or not isinstance(document.get("instruments", []), list):
        raise RegistryParseError(f"{path}: expected a mapping with an 'instruments' list")

    try:
        instruments = [_parse_instrument(raw) for raw in document.get("instruments") or []]
    except (KeyError, TypeError, ValidationError) as e:
        raise RegistryParseError(f"{path}: {e}")

    registry = build_registry(instruments)
    logger.info(
        f"Loaded registry {path.name}: {len(registry.instruments)} instruments, "
        f"{len(registry.services)} services, {len(registry.tag_index)} tags"
    )
    return registry


def services_with_capability(reg: Registry, tag: str) -> List[AtomicService]:
    """Services carrying `tag`, service_id ascending. Unknown tags give []."""
    return [reg.services[sid] for sid in reg.tag_index.get(tag, ())]


def equivalents(reg: Registry, service_id: str) -> List[AtomicService]:
    """Services (other than `service_id`) whose tags are a superset of its tags."""
    if service_id not in reg.services:
        raise UnknownServiceError(service_id)
    tags = reg.services[service_id].capability_tags
    return [
        svc for sid, svc in sorted(reg.services.items())
        if sid != service_id and svc.capability_tags >= tags
    ]


def capable_services(reg: Registry, tag: str, params: Mapping[str, Scalar]) -> List[AtomicService]:
    """Services carrying `tag` that accept `params`, cheapest first (service_id tie-break)."""
    capable = [svc for svc in services_with_capability(reg, tag) if svc.accepts(params)]
    return sorted(capable, key=lambda svc: (svc.ticks(params), svc.service_id))


def check_registry(reg: Registry) -> List[str]:
    """Consistency problems in a loaded registry (empty when sound)."""
    problems = []
    rebuilt = build_registry(reg.instruments.values())
    if rebuilt.tag_index != reg.tag_index:
        problems.append("tag index does not mirror declared service tags")
    for instrument in reg.instruments.values():
        for service in instrument.services:
            if reg.services.get(service.service_id) != service:
                problems.append(f"service {service.service_id} missing from the service map")
    return problems
