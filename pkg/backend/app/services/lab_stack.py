"""Scenario loading and the assembled engine stack."""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union
import hashlib
import logging

import yaml
from pydantic import ValidationError

from app.core.exceptions import LabError, ScenarioError
from app.schemas.instrument import Registry
from app.schemas.scenario import ScenarioConfig
from app.services.inventory_service import InventoryService, load_inventory
from app.services.registry_service import load_registry
from app.services.sim_lab_service import ErrorChannel, SimLab, YieldSurface
from app.services.template_service import TemplateKB, load_templates

logger = logging.getLogger(__name__)


def scenario_files(config: ScenarioConfig, config_path: Path) -> List[Path]:
    files = [config_path, config.path(config.registry), config.path(config.templates), config.path(config.inventory)]
    if config.storage and config.storage.payload:
        files.append(config.path(config.storage.payload))
    return files


def scenario_hash(files: List[Path]) -> str:
    """SHA-256 over the bytes of every file a scenario loads, in load order."""
    digest = hashlib.sha256()
    for path in files:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text())
        config = ScenarioConfig.model_validate({**(document or {}), "base_dir": path.resolve().parent})
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}")
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario {path}: {e}")

    for referenced in scenario_files(config, path)[1:]:
        if not referenced.exists():
            raise ScenarioError(f"{path.name} references missing file {referenced}")
    return config


@dataclass
class LabStack:
    """Everything a run needs, built from one scenario."""
    config: ScenarioConfig
    registry: Registry
    kb: TemplateKB
    inventory: InventoryService
    lab: SimLab
    config_path: Path
    digest: str = ""

    @classmethod
    def from_scenario(cls, path: Union[str, Path], seed: Optional[int] = None,
                      policy: Optional[str] = None, budget: Optional[int] = None) -> "LabStack":
        path = Path(path)
        config = load_scenario(path)
        overrides = {k: v for k, v in {"seed": seed, "policy": policy, "budget": budget}.items() if v is not None}
        if overrides:
            config = config.model_copy(update=overrides)

        try:
            registry = load_registry(config.path(config.registry))
            kb = load_templates(config.path(config.templates))
            inventory = InventoryService(load_inventory(config.path(config.inventory)))
        except LabError as e:
            raise ScenarioError(f"{path.name}: {e}")

        coverage = config.storage.coverage if config.storage else 1
        try:
            channel = ErrorChannel(config.channel)
        except ValueError as e:
            raise ScenarioError(f"{path.name}: {e}")
        lab = SimLab(
            surface=YieldSurface(config.surface),
            channel=channel,
            ground_truth=config.ground_truth,
            coverage=coverage,
        )
        stack = cls(
            config=config,
            registry=registry,
            kb=kb,
            inventory=inventory,
            lab=lab,
            config_path=path,
            digest=scenario_hash(scenario_files(config, path)),
        )
        logger.info(f"Scenario {config.name}: seed={config.seed} policy={config.policy} "
                    f"provenance={lab.provenance()}")
        return stack
