"""Bytes <-> strands codec with read clustering and consensus decoding."""
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import distance

from app.config import settings
from app.core.exceptions import PayloadTooLargeError, StorageError, UnrecoverableStrandError
from app.schemas.storage import StorageHeader, Strand, StrandSet

logger = logging.getLogger(__name__)

BASES = "ACGT"  # A=00 C=01 G=10 T=11
PAD_BASE = "A"


def bytes_to_bases(data: bytes) -> str:
    return "".join(BASES[(byte >> shift) & 0b11] for byte in data for shift in (6, 4, 2, 0))


def bases_to_bytes(seq: str) -> bytes:
    values = [BASES.index(b) for b in seq]
    usable = len(values) - len(values) % 4
    return bytes(
        (values[i] << 6) | (values[i + 1] << 4) | (values[i + 2] << 2) | values[i + 3]
        for i in range(0, usable, 4)
    )


def index_to_bases(index: int, width: int) -> str:
    digits = []
    for _ in range(width):
        digits.append(BASES[index & 0b11])
        index >>= 2
    return "".join(reversed(digits))


def strand_count(byte_length: int, payload_nt: int) -> int:
    return math.ceil(8 * byte_length / (2 * payload_nt))


def encode(data: bytes, payload_nt: int = None, index_nt: int = None) -> StrandSet:
    """
    Split bytes into fixed-length strands with a base-4 index prefix.

    Args:
        data: payload
        payload_nt: payload nucleotides per strand (even, >= 8)
        index_nt: width of the index field

    Returns:
        StrandSet whose header must travel out of band
    """
    payload_nt = payload_nt or settings.PAYLOAD_NT
    index_nt = index_nt or settings.INDEX_NT
    if payload_nt < 8 or payload_nt % 2:
        raise StorageError(f"payload_nt must be even and >= 8, got {payload_nt}")

    count = strand_count(len(data), payload_nt)
    if count > 4 ** index_nt:
        raise PayloadTooLargeError(count, index_nt)

    bases = bytes_to_bases(data)
    strands = []
    for index in range(count):
        chunk = bases[index * payload_nt:(index + 1) * payload_nt].ljust(payload_nt, PAD_BASE)
        strands.append(Strand(index=index, sequence=index_to_bases(index, index_nt) + chunk))

    header = StorageHeader(strand_count=count, byte_length=len(data), payload_nt=payload_nt, index_nt=index_nt)
    logger.info(f"Encoded {len(data)} bytes into {count} strands of {header.strand_length} nt")
    return StrandSet(strands=tuple(strands), header=header)


# ==================== Clustering ====================

def assign_index(read: str, indices: Dict[str, int], max_distance: int) -> Optional[int]:
    """Strand index whose field best matches the read prefix, or None if ambiguous/too far."""
    width = len(next(iter(indices)))
    exact = indices.get(read[:width])
    if exact is not None:
        return exact

    best, best_index, tied = max_distance + 1, None, False
    for field, index in indices.items():
        d = min(distance.levenshtein(read[:w], field) for w in (width - 1, width, width + 1))
        if d < best:
            best, best_index, tied = d, index, False
        elif d == best:
            tied = True
    return None if tied or best_index is None else best_index


def cluster_reads(reads: Sequence[str], header: StorageHeader, max_distance: int = None) -> Dict[int, List[str]]:
    max_distance = settings.MAX_INDEX_DISTANCE if max_distance is None else max_distance
    indices = {index_to_bases(i, header.index_nt): i for i in range(header.strand_count)}
    clusters: Dict[int, List[str]] = {i: [] for i in range(header.strand_count)}
    if not indices:
        return clusters
    for read in reads:
        index = assign_index(read, indices, max_distance)
        if index is not None:
            clusters[index].append(read)
    return clusters


# ==================== Consensus ====================

def banded_projection(read: str, draft: str, band: int) -> Optional[List[Optional[str]]]:
    """Align `read` to `draft` within a diagonal band; the read base (or None) per draft position."""
    m, n = len(read), len(draft)
    if abs(m - n) > band:
        return None
    inf = m + n + 1
    # cost[i][j]: read[:i] vs draft[:j]
    cost = [[inf] * (n + 1) for _ in range(m + 1)]
    move = [[""] * (n + 1) for _ in range(m + 1)]
    cost[0][0] = 0
    for i in range(m + 1):
        for j in range(max(0, i - band), min(n, i + band) + 1):
            if i == 0 and j == 0:
                continue
            options = []
            if i and j:
                options.append((cost[i - 1][j - 1] + (read[i - 1] != draft[j - 1]), "diag"))
            if i:
                options.append((cost[i - 1][j] + 1, "ins"))
            if j:
                options.append((cost[i][j - 1] + 1, "del"))
            cost[i][j], move[i][j] = min(options)

    projected: List[Optional[str]] = [None] * n
    i, j = m, n
    while i or j:
        step = move[i][j]
        if step == "diag":
            projected[j - 1] = read[i - 1]
            i, j = i - 1, j - 1
        elif step == "ins":
            i -= 1
        else:
            j -= 1
    return projected


def consensus(reads: Sequence[str], length: int, band: int = None) -> Tuple[str, float]:
    """
    Position-wise plurality over length-corrected reads.

    Returns:
        (consensus sequence, mean fraction of reads agreeing with it)
    """
    band = settings.CONSENSUS_BAND if band is None else band
    exact = [r for r in reads if len(r) == length]
    pool = exact or list(reads)
    columns = [Counter() for _ in range(length)]
    for read in pool:
        for position, base in enumerate(read[:length]):
            columns[position][base] += 1
    draft = "".join(col.most_common(1)[0][0] if col else PAD_BASE for col in columns)

    votes = [Counter() for _ in range(length)]
    for read in reads:
        projected = list(read) if len(read) == length else banded_projection(read, draft, band)
        if projected is None:
            continue
        for position, base in enumerate(projected):
            if base is not None:
                votes[position][base] += 1

    sequence, agreement = [], []
    for position, column in enumerate(votes):
        if not column:
            sequence.append(draft[position])
            agreement.append(0.0)
            continue
        # ties break towards the lowest base for determinism
        base, count = min(column.items(), key=lambda item: (-item[1], item[0]))
        sequence.append(base)
        agreement.append(count / sum(column.values()))
    return "".join(sequence), sum(agreement) / length if length else 1.0


def decode_with_agreement(reads: Sequence[str], header: StorageHeader) -> Tuple[bytes, Dict[int, float]]:
    clusters = cluster_reads(reads, header)
    payload, agreement = [], {}
    for index in range(header.strand_count):
        cluster = clusters[index]
        if not cluster:
            raise UnrecoverableStrandError(index)
        sequence, agreement[index] = consensus(cluster, header.strand_length)
        payload.append(sequence[header.index_nt:])
    data = bases_to_bytes("".join(payload))[:header.byte_length]
    return data, agreement


def decode(reads: Sequence[str], header: StorageHeader) -> bytes:
    """
    Recover the payload from noisy reads.

    Raises:
        UnrecoverableStrandError: no read clusters onto some strand index
    """
    data, _ = decode_with_agreement(reads, header)
    return data
