"""Block DAG storage and consensus bookkeeping.

A ChainStore is one node's view of every block it has accepted: a tree of
hash-pointer records rooted at genesis, with cumulative work per block and
a selected tip.  Tip selection is most-cumulative-work with a first-seen
tie break, so replaying the same insertion sequence always reproduces the
same tip at every step.

Also provided: the timestamp acceptance rules (median-past-time and the
two-hour future bound), the periodic difficulty retarget rule, and the CSV
chain-dump format.
"""

import csv
from dataclasses import dataclass
from typing import Iterable, Optional

GENESIS_ID = 0
GENESIS_MINER = -1


class ChainError(Exception):
    """Base class for chain-state violations."""


class UnknownBlock(ChainError):
    """A block id was referenced that the store has never seen."""


class DuplicateBlock(ChainError):
    """A block id was inserted twice."""


class MissingParent(ChainError):
    """A block arrived before its parent (orphan)."""


@dataclass(frozen=True)
class Block:
    """One node of the block DAG.

    `timestamp` is the consensus timestamp the miner wrote into the block
    (integer unix-style seconds, subject to the acceptance rules), while
    `found_at` is the ground-truth simulation instant of discovery and is
    not consensus data.
    """

    id: int
    parent: Optional[int]  # None only for genesis
    height: int
    miner: int
    timestamp: int
    difficulty: float
    found_at: float


def make_genesis(difficulty: float, timestamp: int = 0) -> Block:
    return Block(GENESIS_ID, None, 0, GENESIS_MINER, timestamp, difficulty, 0.0)


@dataclass
class ConsensusRules:
    """Tunable consensus constants.

    max_future_offset: how far (seconds) a timestamp may lead the local
        clock; the bound is inclusive (exactly +offset is accepted).
    mpt_window: how many trailing ancestors feed the median-past-time rule.
    retarget_interval: blocks per difficulty-adjustment window.
    target_spacing: intended seconds between blocks.
    retarget_clamp: per-adjustment bound on the correction ratio.
    """

    max_future_offset: float = 7200.0
    mpt_window: int = 11
    retarget_interval: int = 2016
    target_spacing: float = 600.0
    retarget_clamp: float = 4.0

    def __post_init__(self):
        if self.max_future_offset <= 0:
            raise ValueError("max_future_offset must be positive")
        if self.mpt_window <= 0:
            raise ValueError("mpt_window must be positive")
        if self.retarget_interval <= 0:
            raise ValueError("retarget_interval must be positive")
        if self.target_spacing <= 0:
            raise ValueError("target_spacing must be positive")
        if self.retarget_clamp < 1:
            raise ValueError("retarget_clamp must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ConsensusRules":
        known = {
            "max_future_offset", "mpt_window", "retarget_interval",
            "target_spacing", "retarget_clamp",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown consensus rule keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TipChange:
    """Outcome of one insertion: where the tip was, where it is now, and
    how many trailing blocks of the old canonical path were abandoned."""

    old_tip: int
    new_tip: int
    reorg_depth: int

    @property
    def changed(self) -> bool:
        return self.new_tip != self.old_tip


class ChainStore:
    """Per-node view of all known blocks plus the selected tip.

    Insertion is parents-first: an orphan raises MissingParent and it is
    the caller's job to buffer it until the parent shows up (the simulator
    keeps a pending pool per node for exactly that).  Single-writer: all
    mutations must come from the thread that owns the store.
    """

    def __init__(self, genesis: Block):
        if genesis.height != 0 or genesis.parent is not None:
            raise ChainError("genesis must have height 0 and no parent")
        self.blocks: dict[int, Block] = {genesis.id: genesis}
        self.work: dict[int, float] = {genesis.id: genesis.difficulty}
        self.first_seen: dict[int, int] = {genesis.id: 0}
        self.tip: int = genesis.id
        self._arrivals = 1

    def __contains__(self, block_id: int) -> bool:
        return block_id in self.blocks

    def get(self, block_id: int) -> Block:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise UnknownBlock(f"unknown block id {block_id}") from None

    def tip_block(self) -> Block:
        return self.blocks[self.tip]

    def insert(self, block: Block) -> TipChange:
        """Store a block, recompute cumulative work, re-select the tip.

        The tip moves only when the newcomer has strictly more work than
        the current tip; at equal work the earlier-seen block wins.
        """
        if block.id in self.blocks:
            raise DuplicateBlock(f"block id {block.id} already present")
        if block.parent not in self.blocks:
            raise MissingParent(f"parent {block.parent} of block {block.id} not present")
        parent = self.blocks[block.parent]
        if block.height != parent.height + 1:
            raise ChainError(
                f"block {block.id} height {block.height} does not extend parent height {parent.height}"
            )
        if block.difficulty <= 0:
            raise ChainError("block difficulty must be positive")

        self.blocks[block.id] = block
        self.work[block.id] = self.work[block.parent] + block.difficulty
        self.first_seen[block.id] = self._arrivals
        self._arrivals += 1

        old_tip = self.tip
        depth = 0
        if self.work[block.id] > self.work[old_tip]:
            if block.parent != old_tip:
                fork = self.fork_point(old_tip, block.id)
                depth = self.blocks[old_tip].height - self.blocks[fork].height
            self.tip = block.id
        return TipChange(old_tip, self.tip, depth)

    def fork_point(self, a: int, b: int) -> int:
        """Deepest common ancestor of two blocks."""
        ba, bb = self.get(a), self.get(b)
        while ba.height > bb.height:
            ba = self.blocks[ba.parent]
        while bb.height > ba.height:
            bb = self.blocks[bb.parent]
        while ba.id != bb.id:
            ba = self.blocks[ba.parent]
            bb = self.blocks[bb.parent]
        return ba.id

    def ancestor_at(self, block_id: int, height: int) -> Block:
        """Ancestor of a block at an exact height on its own branch."""
        b = self.get(block_id)
        if height > b.height or height < 0:
            raise UnknownBlock(f"no ancestor of {block_id} at height {height}")
        while b.height > height:
            b = self.blocks[b.parent]
        return b

    def path_from_genesis(self, block_id: Optional[int] = None) -> list[int]:
        """Block ids from genesis to the given block (default: the tip)."""
        b = self.get(self.tip if block_id is None else block_id)
        path = []
        while True:
            path.append(b.id)
            if b.parent is None:
                break
            b = self.blocks[b.parent]
        path.reverse()
        return path


def median_past_time(store: ChainStore, parent_id: int, window: int = 11) -> int:
    """Median timestamp of the last `window` blocks ending at (and
    including) `parent_id`.

    Near genesis, fewer than `window` ancestors exist and all available
    ones are used.  For an even count the lower-middle element is taken,
    so the result is always an actual recorded timestamp.
    """
    b = store.get(parent_id)
    stamps = []
    for _ in range(window):
        stamps.append(b.timestamp)
        if b.parent is None:
            break
        b = store.blocks[b.parent]
    stamps.sort()
    return stamps[(len(stamps) - 1) // 2]


def validate_timestamp(
    block: Block,
    store: ChainStore,
    local_clock: float,
    rules: ConsensusRules,
) -> Optional[str]:
    """Check a block's timestamp against a node's local clock.

    Returns None on acceptance, or the name of the violated rule:
    "mpt" when the timestamp is not strictly greater than the median past
    time of its ancestors, "future" when it leads the local clock by more
    than the allowed offset.  A timestamp earlier than the parent's is
    fine as long as it clears the median, so negative inter-block deltas
    are representable and never rejected by themselves.

    An unknown parent raises MissingParent: orphanhood is a delivery-order
    problem, not a rule violation.
    """
    if block.parent not in store:
        raise MissingParent(f"parent {block.parent} of block {block.id} not present")
    if block.timestamp <= median_past_time(store, block.parent, rules.mpt_window):
        return "mpt"
    if block.timestamp > local_clock + rules.max_future_offset:
        return "future"
    return None


def retarget(difficulty: float, first_ts: int, last_ts: int, rules: ConsensusRules) -> float:
    """New difficulty after one adjustment window.

    Scales the current difficulty by expected span / actual span, where the
    expected span is retarget_interval * target_spacing and the actual span
    is the timestamp distance across the window.  The correction ratio is
    clamped to [1/retarget_clamp, retarget_clamp]; a nonpositive span (legal
    under adversarial timestamps) clamps to the maximum upward step instead
    of crashing.
    """
    if difficulty <= 0:
        raise ValueError("difficulty must be positive")
    expected = rules.retarget_interval * rules.target_spacing
    actual = last_ts - first_ts
    if actual <= 0:
        ratio = rules.retarget_clamp
    else:
        ratio = expected / actual
        ratio = min(max(ratio, 1.0 / rules.retarget_clamp), rules.retarget_clamp)
    return difficulty * ratio


BLOCK_CSV_FIELDS = (
    "id", "parent", "height", "miner", "timestamp",
    "difficulty", "cumulative_work", "found_at",
)


def blocks_to_rows(blocks: Iterable[Block]) -> list[list]:
    """Rows of the chain-dump format, one per block, parents first.

    Cumulative work is recomputed from the parent links, so the input must
    list every parent before its children (id order from a simulation run
    satisfies that).  Genesis writes an empty parent field.
    """
    work: dict[int, float] = {}
    rows = []
    for b in blocks:
        if b.parent is None:
            work[b.id] = b.difficulty
        else:
            if b.parent not in work:
                raise MissingParent(f"parent {b.parent} of block {b.id} not listed first")
            work[b.id] = work[b.parent] + b.difficulty
        rows.append([
            b.id,
            "" if b.parent is None else b.parent,
            b.height,
            b.miner,
            b.timestamp,
            repr(b.difficulty),
            repr(work[b.id]),
            repr(b.found_at),
        ])
    return rows


def write_blocks_csv(blocks: Iterable[Block], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BLOCK_CSV_FIELDS)
        w.writerows(blocks_to_rows(blocks))
