"""Simulated laboratory: yield surface, sequencing error channel and run outcomes."""
from typing import Dict, List, Mapping, Optional, Sequence
import logging
import zlib

import numpy as np

from app.schemas.optimization import Outcome
from app.schemas.program import Program
from app.schemas.scenario import ChannelConfig, SurfaceConfig
from app.schemas.schedule import Schedule

logger = logging.getLogger(__name__)

BASES = "ACGT"
_CODE = {base: code for code, base in enumerate(BASES)}


def _seed_for(seed: int, *keys: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, *(zlib.crc32(k.encode()) for k in keys)])


class YieldSurface:
    """Stepwise synthesis yield as a function of the protocol parameters."""

    def __init__(self, config: Optional[SurfaceConfig] = None):
        self.config = config or SurfaceConfig()

    def time_factor(self, cycle_time: float) -> float:
        factors = self.config.time_factors
        if float(cycle_time) in factors:
            return factors[float(cycle_time)]
        nearest = min(factors, key=lambda t: (abs(t - float(cycle_time)), t))
        return factors[nearest]

    def mean(self, params: Mapping) -> float:
        c = self.config
        value = c.base
        if params.get("buffer") == "bw":
            value += c.bw_buffer
        if float(params.get("tween20", 0)) >= 0.05:
            value += c.tween20
        cocl2 = float(params.get("cocl2", 0.25))
        if cocl2 >= 1.0:
            value += c.cocl2_high
        elif cocl2 >= 0.5:
            value += c.cocl2_mid
        if float(params.get("tdt", 1)) >= 2:
            value += c.tdt_double
        if float(params.get("terminator", 1)) >= 2:
            value += c.terminator_double
        value = min(value, c.cap)
        return value * self.time_factor(params.get("cycle_time", 20))

    def __call__(self, params: Mapping, rng: Optional[np.random.Generator] = None) -> float:
        value = self.mean(params)
        if self.config.noise_sigma > 0 and rng is not None:
            value += rng.normal(0.0, self.config.noise_sigma)
        return float(np.clip(value, 0.0, 1.0))


class ErrorChannel:
    """Per-base deletion, insertion and substitution probabilities."""

    def __init__(self, config: Optional[ChannelConfig] = None):
        self.config = config or ChannelConfig()
        total = self.config.deletion + self.config.insertion + self.config.substitution
        if total > 1:
            raise ValueError(f"channel probabilities sum to {total:.4f} > 1")

    @property
    def rates(self) -> Dict[str, float]:
        return self.config.model_dump()

    def draw(self, n: int, rng: np.random.Generator):
        """Event masks (deleted, inserted, substituted) plus the random bases they use."""
        c = self.config
        u = rng.random(n)
        inserted_bases = rng.integers(0, 4, n)
        shifts = rng.integers(1, 4, n)
        deleted = u < c.deletion
        inserted = (u >= c.deletion) & (u < c.deletion + c.insertion)
        substituted = (u >= c.deletion + c.insertion) & (u < c.deletion + c.insertion + c.substitution)
        return deleted, inserted, substituted, inserted_bases, shifts


def corrupt(seq: str, channel: ErrorChannel, seed) -> str:
    """
    Pass a sequence through the error channel.

    Args:
        seq: non-empty sequence over ACGT
        channel: error channel
        seed: int or SeedSequence

    Returns:
        The corrupted read; inserted bases land before the position that drew them
    """
    rng = np.random.default_rng(seed)
    codes = np.fromiter((_CODE[b] for b in seq), dtype=np.int64, count=len(seq))
    deleted, inserted, substituted, inserted_bases, shifts = channel.draw(len(seq), rng)

    bases = np.where(substituted, (codes + shifts) % 4, codes)
    pairs = np.stack([inserted_bases, bases], axis=1)
    keep = np.stack([inserted, ~deleted], axis=1)
    return "".join(BASES[i] for i in pairs[keep])


def sequence_strands(
    strands: Sequence[str],
    coverage: int,
    channel: ErrorChannel,
    seed: int,
) -> List[str]:
    """`coverage` reads per strand, each seeded by (seed, strand index, read index)."""
    if coverage < 1:
        raise ValueError("coverage must be at least 1")
    reads = []
    for strand_index, strand in enumerate(strands):
        for read_index in range(coverage):
            reads.append(corrupt(strand, channel, np.random.SeedSequence([seed, strand_index, read_index])))
    return reads


def profile_errors(n: int, channel: ErrorChannel, seed: int) -> Dict[str, float]:
    """Empirical per-base error rates over `n` simulated positions."""
    rng = np.random.default_rng(seed)
    deleted, inserted, substituted, _, _ = channel.draw(n, rng)
    return {
        "deletion": float(deleted.mean()),
        "insertion": float(inserted.mean()),
        "substitution": float(substituted.mean()),
    }


class SimLab:
    """Stand-in for the physical platform."""

    def __init__(
        self,
        surface: Optional[YieldSurface] = None,
        channel: Optional[ErrorChannel] = None,
        ground_truth: Optional[Dict[str, bool]] = None,
        coverage: int = 1,
    ):
        self.surface = surface or YieldSurface()
        self.channel = channel or ErrorChannel()
        self.ground_truth = ground_truth or {}
        self.coverage = coverage

    def provenance(self) -> Dict:
        return {
            "surface": self.surface.config.model_dump(),
            "channel": self.channel.rates,
            "coverage": self.coverage,
        }

    def run(
        self,
        prog: Program,
        schedule: Schedule,
        seed: int,
        strands: Optional[Sequence[str]] = None,
    ) -> Outcome:
        """
        Realize the outcome of one program executed under `schedule`.

        Args:
            prog: program (unconsolidated) whose outcome is wanted
            schedule: the run it was part of
            seed: run seed
            strands: sequences present in the sample, for sequencing programs

        Returns:
            Outcome with time = schedule makespan
        """
        kinds = {inv.step_kind for inv in prog.invocations}
        capabilities = {inv.capability for inv in prog.invocations}

        stepwise_yield = None
        if "synthesis_cycle" in kinds:
            rng = np.random.default_rng(_seed_for(seed, prog.program_id))
            stepwise_yield = self.surface(prog.params, rng)

        positive = None
        if "optical.fluorescence" in capabilities:
            request_id = prog.request_id.split("/")[0]
            positive = self.ground_truth.get(request_id, False)

        reads = None
        if "sequencing.read" in capabilities and strands is not None:
            reads = tuple(sequence_strands(strands, self.coverage, self.channel, seed))

        return Outcome(
            stepwise_yield=stepwise_yield,
            time=schedule.makespan_min,
            reads=reads,
            positive=positive,
        )
