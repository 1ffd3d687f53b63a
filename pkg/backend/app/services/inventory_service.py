"""Reagent inventory: demand estimation, feasibility screening and reservations."""
from collections import defaultdict
from pathlib import Path
from typing import Dict, Sequence, Union
import logging
import threading

import yaml
from pydantic import ValidationError

from app.core.exceptions import InsufficientReagentError, ProcedureError
from app.schemas.procedure import (
    CYCLE_WASH_REPEATS,
    DEBLOCK_VOLUME,
    EXTENSION_VOLUME,
    WASH_VOLUME,
    Feasible,
    Infeasible,
    Procedure,
    ReagentInventory,
    SynthesisCycleStep,
    TransferStep,
    WashStep,
)

logger = logging.getLogger(__name__)


def reagent_demand(p: Procedure) -> Dict[str, float]:
    """Total reagent consumption of a procedure, summed over its steps."""
    demand: Dict[str, float] = defaultdict(float)
    for step in p.resolved_steps():
        if isinstance(step, TransferStep):
            demand[step.reagent] += step.volume
        elif isinstance(step, WashStep):
            demand[f"{step.buffer}_buffer"] += WASH_VOLUME * step.repeats
        elif isinstance(step, SynthesisCycleStep):
            demand[f"extension_mix_{step.base}"] += EXTENSION_VOLUME
            demand["deblock_mix"] += DEBLOCK_VOLUME
            # two washes per cycle
            demand[f"{step.buffer}_buffer"] += 2 * WASH_VOLUME * CYCLE_WASH_REPEATS
    return dict(sorted(demand.items()))


def screen_feasibility(p: Procedure, inv: ReagentInventory, copies: int = 1) -> Union[Feasible, Infeasible]:
    """Compare the demand of `copies` runs of `p` against stock without touching the inventory."""
    demand = {reagent: needed * copies for reagent, needed in reagent_demand(p).items()}
    missing = tuple(
        (reagent, needed - inv.available(reagent))
        for reagent, needed in demand.items()
        if needed > inv.available(reagent)
    )
    if missing:
        return Infeasible(missing=missing)
    return Feasible(demand=demand)


def reserve(inv: ReagentInventory, p: Procedure, request_id: str) -> ReagentInventory:
    """Decrement stock by the procedure's demand and record it against `request_id`."""
    demand = reagent_demand(p)
    for reagent, needed in demand.items():
        if needed > inv.available(reagent):
            raise InsufficientReagentError(reagent, needed, inv.available(reagent)).attributed(request_id)

    quantities = dict(inv.quantities)
    for reagent, needed in demand.items():
        quantities[reagent] = inv.available(reagent) - needed

    ledger = {rid: dict(amounts) for rid, amounts in inv.ledger.items()}
    entry = ledger.setdefault(request_id, {})
    for reagent, needed in demand.items():
        entry[reagent] = entry.get(reagent, 0.0) + needed

    return ReagentInventory(quantities=quantities, ledger=ledger)


def release(inv: ReagentInventory, request_id: str) -> ReagentInventory:
    """Return everything reserved under `request_id` to stock."""
    if request_id not in inv.ledger:
        return inv
    quantities = dict(inv.quantities)
    for reagent, amount in inv.ledger[request_id].items():
        quantities[reagent] = quantities.get(reagent, 0.0) + amount
    ledger = {rid: dict(a) for rid, a in inv.ledger.items() if rid != request_id}
    return ReagentInventory(quantities=quantities, ledger=ledger)


def load_inventory(file_path: Union[str, Path]) -> ReagentInventory:
    path = Path(file_path)
    try:
        document = yaml.safe_load(path.read_text()) or {}
        reagents = document.get("reagents", {})
        return ReagentInventory(quantities={k: float(v) for k, v in reagents.items()})
    except (OSError, yaml.YAMLError, AttributeError, ValueError, ValidationError) as e:
        raise ProcedureError(f"cannot load inventory {path}: {e}")


class InventoryService:
    """Single mutation point for the lab's reagent stock.

    Screening is a read; reserve, release and replenish are serialized.
    """

    def __init__(self, inventory: ReagentInventory):
        self._inventory = inventory
        self._lock = threading.Lock()

    @property
    def inventory(self) -> ReagentInventory:
        return self._inventory

    def screen(self, p: Procedure, copies: int = 1) -> Union[Feasible, Infeasible]:
        return screen_feasibility(p, self._inventory, copies)

    def reserve(self, p: Procedure, request_id: str) -> ReagentInventory:
        return self.reserve_all(p, [request_id])

    def reserve_all(self, p: Procedure, request_ids: Sequence[str]) -> ReagentInventory:
        """Reserve one run of `p` per request id, all or none."""
        with self._lock:
            inventory = self._inventory
            for request_id in request_ids:
                inventory = reserve(inventory, p, request_id)
            self._inventory = inventory
            for request_id in request_ids:
                logger.info(f"Reserved reagents for {request_id}: {inventory.ledger[request_id]}")
            return self._inventory

    def release(self, request_id: str) -> ReagentInventory:
        with self._lock:
            self._inventory = release(self._inventory, request_id)
            return self._inventory

    def replenish(self, reagent: str, amount: float) -> ReagentInventory:
        """Top up one reagent (the only manual intervention the lab accepts)."""
        if amount <= 0:
            raise ProcedureError(f"replenish amount must be positive, got {amount}")
        with self._lock:
            quantities = dict(self._inventory.quantities)
            quantities[reagent] = quantities.get(reagent, 0.0) + amount
            self._inventory = ReagentInventory(quantities=quantities, ledger=self._inventory.ledger)
            logger.info(f"Replenished {reagent} by {amount:g}")
            return self._inventory
