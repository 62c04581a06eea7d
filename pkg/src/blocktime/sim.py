"""Deterministic discrete-event simulator of competing block producers.

Miners generate blocks as exponential processes whose rates follow their
hash-rate share and the difficulty prescribed by their current tip.  Found
blocks propagate to every other node with configurable delay; each node
validates timestamps against its own (possibly skewed) clock, inserts into
its ChainStore, and re-selects its tip.  Miners re-anchor and redraw their
next discovery whenever their node's tip moves, which by memorylessness is
distributionally identical to continuing the pending draw.

A run is a pure function of (config, seed): one RNG stream is consumed in
event order and event ties are broken by a global sequence number, so two
runs with the same inputs produce bit-identical traces.
"""

import csv
import heapq
import itertools
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .analytic import theta_from_difficulty
from .chain import (
    Block,
    ChainStore,
    ConsensusRules,
    make_genesis,
    median_past_time,
    retarget,
    validate_timestamp,
)

# Advisory threshold for local clocks that stray from network time (ten
# minutes); such nodes only get a warning, never a penalty.
CLOCK_WARN_OFFSET = 600.0

HONEST = "honest"
FIXED_SKEW = "fixed_skew"

_EV_FOUND = 0
_EV_DELIVER = 1


class ConfigError(ValueError):
    """Raised for an invalid simulation configuration before any event runs."""


@dataclass
class MinerSpec:
    """One block producer: its share of the global hash rate, the offset of
    its local clock, and how it stamps the blocks it finds.

    Strategy "honest" stamps with the local clock; "fixed_skew" adds `skew`
    seconds on top (a miner that deliberately stamps ahead or behind).  In
    both cases the stamp is clamped up to median-past-time + 1 so the block
    stays acceptable even when the local clock has fallen behind the chain.
    """

    id: int
    share: float
    clock_offset: float = 0.0
    strategy: str = HONEST
    skew: float = 0.0

    def __post_init__(self):
        if not 0 < self.share <= 1:
            raise ConfigError(f"miner {self.id}: share must be in (0, 1]")
        if self.strategy not in (HONEST, FIXED_SKEW):
            raise ConfigError(f"miner {self.id}: unknown strategy {self.strategy!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "MinerSpec":
        strategy = d.get("strategy", HONEST)
        skew = 0.0
        if isinstance(strategy, dict):
            if set(strategy) != {FIXED_SKEW}:
                raise ConfigError(f"bad strategy object: {strategy}")
            skew = float(strategy[FIXED_SKEW])
            strategy = FIXED_SKEW
        return cls(
            id=int(d["id"]),
            share=float(d["share"]),
            clock_offset=float(d.get("clock_offset", 0.0)),
            strategy=strategy,
            skew=skew,
        )


@dataclass
class DelayModel:
    """Propagation delay between nodes: a single scalar for every pair, or
    a full per-pair matrix (seconds, row = sender, column = receiver)."""

    kind: str
    tau: float = 0.0
    matrix: Optional[list[list[float]]] = None

    @classmethod
    def fixed(cls, tau: float) -> "DelayModel":
        if tau < 0:
            raise ConfigError("delay must be nonnegative")
        return cls("fixed", tau=float(tau))

    @classmethod
    def per_pair(cls, matrix) -> "DelayModel":
        m = [[float(x) for x in row] for row in matrix]
        n = len(m)
        if n == 0 or any(len(row) != n for row in m):
            raise ConfigError("per-pair delay matrix must be square and nonempty")
        if any(x < 0 for row in m for x in row):
            raise ConfigError("delay must be nonnegative")
        return cls("per_pair", matrix=m)

    @classmethod
    def from_dict(cls, d: dict) -> "DelayModel":
        if set(d) == {"fixed"}:
            return cls.fixed(d["fixed"])
        if set(d) == {"per_pair"}:
            return cls.per_pair(d["per_pair"])
        raise ConfigError(f"delay must be {{'fixed': tau}} or {{'per_pair': matrix}}, got {d}")

    def delay(self, src: int, dst: int) -> float:
        if self.kind == "fixed":
            return self.tau
        return self.matrix[src][dst]

    def max_delay(self) -> float:
        if self.kind == "fixed":
            return self.tau
        return max(x for row in self.matrix for x in row)


@dataclass
class StopRule:
    """Run until the first node's canonical height reaches `blocks`, or
    until `duration` simulation-seconds have elapsed (then drain)."""

    blocks: Optional[int] = None
    duration: Optional[float] = None

    def __post_init__(self):
        if (self.blocks is None) == (self.duration is None):
            raise ConfigError("stop rule needs exactly one of blocks/duration")
        if self.blocks is not None and self.blocks <= 0:
            raise ConfigError("stop block count must be positive")
        if self.duration is not None and self.duration <= 0:
            raise ConfigError("stop duration must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "StopRule":
        if set(d) == {"blocks"}:
            return cls(blocks=int(d["blocks"]))
        if set(d) == {"duration"}:
            return cls(duration=float(d["duration"]))
        raise ConfigError(f"stop must be {{'blocks': n}} or {{'duration': s}}, got {d}")


@dataclass
class SimConfig:
    """Complete description of one simulation scenario.

    `hashrate_steps` is a list of (height, factor) pairs: once a miner's
    tip reaches `height`, the nominal hash rate it mines with is multiplied
    by `factor` (steps compound).  This is how scenarios model capacity
    joining or leaving the network between retarget windows.
    """

    miners: list[MinerSpec]
    nodes: int
    delay: DelayModel
    rules: ConsensusRules
    initial_difficulty: float
    nominal_hashrate: float
    stop: StopRule
    seed: int
    retarget_enabled: bool = True
    hashrate_steps: list[tuple[int, float]] = field(default_factory=list)

    def validate(self) -> None:
        if not self.miners:
            raise ConfigError("at least one miner is required")
        total = sum(m.share for m in self.miners)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"miner shares must sum to 1 (got {total!r})")
        if len({m.id for m in self.miners}) != len(self.miners):
            raise ConfigError("miner ids must be unique")
        if self.nodes < len(self.miners):
            raise ConfigError("need at least one node per miner")
        if self.delay.kind == "per_pair" and len(self.delay.matrix) != self.nodes:
            raise ConfigError("per-pair delay matrix size must match node count")
        if self.initial_difficulty <= 0:
            raise ConfigError("initial difficulty must be positive")
        if self.nominal_hashrate <= 0:
            raise ConfigError("nominal hash rate must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for h, f in self.hashrate_steps:
            if h <= 0 or f <= 0:
                raise ConfigError("hashrate steps need positive height and factor")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {
            "miners", "nodes", "delay", "rules", "initial_difficulty",
            "nominal_hashrate", "stop", "seed", "retarget_enabled",
            "hashrate_steps",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            miners = [MinerSpec.from_dict(m) for m in d["miners"]]
            cfg = cls(
                miners=miners,
                nodes=int(d.get("nodes", len(miners))),
                delay=DelayModel.from_dict(d["delay"]),
                rules=ConsensusRules.from_dict(d.get("rules", {})),
                initial_difficulty=float(d["initial_difficulty"]),
                nominal_hashrate=float(d["nominal_hashrate"]),
                stop=StopRule.from_dict(d["stop"]),
                seed=int(d["seed"]),
                retarget_enabled=bool(d.get("retarget_enabled", True)),
                hashrate_steps=[(int(h), float(f)) for h, f in d.get("hashrate_steps", [])],
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key: {exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)


class TipEvent(NamedTuple):
    time: float
    node: int
    new_tip: int
    reorg_depth: int


class Rejection(NamedTuple):
    time: float
    node: int
    block: int
    reason: str


class ClockAdvisory(NamedTuple):
    node: int
    offset: float
    message: str


class ForkEpisode(NamedTuple):
    """Competing same-parent blocks discovered within one propagation
    window.  `winner` is the competitor that ended up on the canonical
    chain, or None when the race was still unresolved at stop."""

    window_start: float
    blocks: tuple
    winner: Optional[int]


@dataclass
class SimTrace:
    """Everything a run produced, immutable once returned.

    blocks is indexed by block id and includes stale blocks; tip_events
    records every per-node tip change (reorg_depth 0 = plain extension);
    difficulty_history records each retarget as (boundary height, new
    difficulty for the following window).
    """

    config: SimConfig
    blocks: list[Block]
    tip_events: list[TipEvent]
    fork_episodes: list[ForkEpisode]
    difficulty_history: list[tuple[int, float]]
    warnings: list[ClockAdvisory]
    rejections: list[Rejection]
    final_tips: list[int]

    def agreement(self) -> bool:
        """True when every node ended on the same tip."""
        return len(set(self.final_tips)) == 1

    def canonical_path(self, node: int = 0) -> list[int]:
        """Block ids from genesis to the node's final tip."""
        path = []
        bid = self.final_tips[node]
        while bid is not None:
            path.append(bid)
            bid = self.blocks[bid].parent
        path.reverse()
        return path

    def canonical_height(self, node: int = 0) -> int:
        return self.blocks[self.final_tips[node]].height

    def canonical_deltas(self, node: int = 0) -> np.ndarray:
        """Ground-truth inter-discovery times along the canonical chain."""
        found = np.array([self.blocks[b].found_at for b in self.canonical_path(node)])
        return np.diff(found)

    def max_reorg_depth(self) -> int:
        return max((e.reorg_depth for e in self.tip_events), default=0)

    def miner_block_counts(self, node: int = 0) -> dict[int, int]:
        """Canonical blocks per miner (genesis excluded)."""
        counts: dict[int, int] = {}
        for bid in self.canonical_path(node)[1:]:
            m = self.blocks[bid].miner
            counts[m] = counts.get(m, 0) + 1
        return counts

    def final_difficulty(self, node: int = 0) -> float:
        return self.blocks[self.final_tips[node]].difficulty

    def summary(self) -> dict:
        return {
            "seed": self.config.seed,
            "blocks_created": len(self.blocks) - 1,
            "canonical_height": self.canonical_height(),
            "fork_episodes": len(self.fork_episodes),
            "max_reorg_depth": self.max_reorg_depth(),
            "final_difficulty": self.final_difficulty(),
            "rejections": len(self.rejections),
            "agreement": self.agreement(),
        }

    # ---- trace exports -------------------------------------------------

    def write_csvs(self, outdir, fmt: str = "csv") -> list[str]:
        """Write blocks/tip_changes/forks/difficulty files into `outdir`.

        fmt "csv" writes the delimited format (LF endings, `.` decimals,
        header row); "json" writes the same values as arrays of objects.
        Returns the written paths.
        """
        os.makedirs(outdir, exist_ok=True)
        tables = {
            "blocks": (
                ("id", "parent", "height", "miner", "timestamp",
                 "difficulty", "cumulative_work", "found_at"),
                self._block_rows(),
            ),
            "tip_changes": (
                ("time", "node", "new_tip", "reorg_depth"),
                [[repr(e.time), e.node, e.new_tip, e.reorg_depth] for e in self.tip_events],
            ),
            "forks": (
                ("window_start", "blocks", "winner"),
                [[repr(f.window_start), "|".join(str(b) for b in f.blocks),
                  "" if f.winner is None else f.winner] for f in self.fork_episodes],
            ),
            "difficulty": (
                ("height", "difficulty"),
                [[h, repr(d)] for h, d in self.difficulty_history],
            ),
        }
        written = []
        for name, (fields, rows) in tables.items():
            if fmt == "csv":
                path = os.path.join(outdir, f"{name}.csv")
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(fields)
                    w.writerows(rows)
            elif fmt == "json":
                path = os.path.join(outdir, f"{name}.json")
                records = [dict(zip(fields, _json_cells(row))) for row in rows]
                with open(path, "w") as fh:
                    json.dump(records, fh, indent=1)
                    fh.write("\n")
            else:
                raise ValueError(f"unknown format {fmt!r}")
            written.append(path)
        return written

    def _block_rows(self) -> list[list]:
        work: dict[int, float] = {}
        rows = []
        for b in self.blocks:
            work[b.id] = b.difficulty + (0.0 if b.parent is None else work[b.parent])
            rows.append([
                b.id, "" if b.parent is None else b.parent, b.height, b.miner,
                b.timestamp, repr(b.difficulty), repr(work[b.id]), repr(b.found_at),
            ])
        return rows


def _json_cells(row):
    # CSV cells carry floats as repr strings; decode them back for JSON so
    # both formats parse to identical values.
    out = []
    for cell in row:
        if isinstance(cell, str) and cell:
            try:
                out.append(float(cell))
                continue
            except ValueError:
                pass
        out.append(None if cell == "" else cell)
    return out


class _Node:
    __slots__ = ("index", "store", "clock_offset", "pending", "miners")

    def __init__(self, index: int, store: ChainStore, clock_offset: float):
        self.index = index
        self.store = store
        self.clock_offset = clock_offset
        self.pending: dict[int, list[Block]] = {}
        self.miners: list[int] = []


def run(config: SimConfig) -> SimTrace:
    """Execute one scenario to quiescence and return its trace."""
    config.validate()
    return _Engine(config).run()


class _Engine:
    def __init__(self, config: SimConfig):
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        self.rules = config.rules
        genesis = make_genesis(config.initial_difficulty)
        self.blocks: list[Block] = [genesis]
        self.children: dict[int, list[int]] = defaultdict(list)
        self.nodes: list[_Node] = []
        for i in range(config.nodes):
            offset = config.miners[i].clock_offset if i < len(config.miners) else 0.0
            self.nodes.append(_Node(i, ChainStore(genesis), offset))
        for i, _m in enumerate(config.miners):
            self.nodes[i].miners.append(i)
        self.miner_node = list(range(len(config.miners)))
        self.versions = [0] * len(config.miners)
        self.heap: list = []
        self.seq = itertools.count()
        self.draining = False
        # caches shared across nodes: both are pure functions of the block DAG
        self.next_diff: dict[int, float] = {}
        self.mpt: dict[int, int] = {}
        self.tip_events: list[TipEvent] = []
        self.rejections: list[Rejection] = []
        self.difficulty_history: list[tuple[int, float]] = [(0, config.initial_difficulty)]
        self.warnings = [
            ClockAdvisory(n.index, n.clock_offset,
                          "local clock differs from network time by more than 10 minutes")
            for n in self.nodes if abs(n.clock_offset) > CLOCK_WARN_OFFSET
        ]

    # ---- difficulty and rates -------------------------------------------

    def child_difficulty(self, tip: Block) -> float:
        """Difficulty prescribed for the next block on this tip's branch."""
        if (not self.cfg.retarget_enabled
                or tip.height == 0
                or tip.height % self.rules.retarget_interval != 0):
            return tip.difficulty
        cached = self.next_diff.get(tip.id)
        if cached is not None:
            return cached
        # full-window span: from the previous boundary block to this one,
        # i.e. retarget_interval whole intervals, no off-by-one
        first = tip
        for _ in range(self.rules.retarget_interval):
            first = self.blocks[first.parent]
        d = retarget(tip.difficulty, first.timestamp, tip.timestamp, self.rules)
        self.next_diff[tip.id] = d
        self.difficulty_history.append((tip.height, d))
        return d

    def miner_rate(self, miner_idx: int, tip: Block) -> float:
        h = self.cfg.nominal_hashrate
        for height, factor in self.cfg.hashrate_steps:
            if tip.height >= height:
                h *= factor
        theta = theta_from_difficulty(self.child_difficulty(tip))
        return self.cfg.miners[miner_idx].share * h * theta

    # ---- event scheduling -----------------------------------------------

    def schedule_find(self, miner_idx: int, now: float) -> None:
        """(Re)draw the miner's next discovery on its node's current tip.

        Bumping the version lazily cancels whatever discovery event was
        pending for this miner.
        """
        self.versions[miner_idx] += 1
        tip = self.nodes[self.miner_node[miner_idx]].store.tip_block()
        rate = self.miner_rate(miner_idx, tip)
        dt = self.rng.exponential(1.0 / rate)
        heapq.heappush(self.heap, (
            now + dt, next(self.seq), _EV_FOUND,
            miner_idx, tip.id, self.versions[miner_idx],
        ))

    def on_tip_change(self, node: _Node, now: float) -> None:
        if self.draining:
            return
        for m in node.miners:
            self.schedule_find(m, now)

    # ---- event handlers ---------------------------------------------------

    def handle_found(self, now: float, miner_idx: int, parent_id: int, version: int) -> None:
        if self.draining or version != self.versions[miner_idx]:
            return
        spec = self.cfg.miners[miner_idx]
        node = self.nodes[self.miner_node[miner_idx]]
        parent = self.blocks[parent_id]
        mpt = self.mpt.get(parent_id)
        if mpt is None:
            mpt = median_past_time(node.store, parent_id, self.rules.mpt_window)
            self.mpt[parent_id] = mpt
        local = now + spec.clock_offset
        if spec.strategy == FIXED_SKEW:
            local += spec.skew
        block = Block(
            id=len(self.blocks),
            parent=parent_id,
            height=parent.height + 1,
            miner=spec.id,
            timestamp=max(math.floor(local), mpt + 1),
            difficulty=self.child_difficulty(parent),
            found_at=now,
        )
        self.blocks.append(block)
        self.children[parent_id].append(block.id)
        if (self.cfg.retarget_enabled and block.height > 0
                and block.height % self.rules.retarget_interval == 0):
            self.child_difficulty(block)  # compute and record the retarget now

        # own node accepts its own block without re-validation
        tc = node.store.insert(block)
        if tc.changed:
            self.tip_events.append(TipEvent(now, node.index, tc.new_tip, tc.reorg_depth))
            self.check_stop(node)
            self.on_tip_change(node, now)

        src = node.index
        for dst in range(self.cfg.nodes):
            if dst != src:
                heapq.heappush(self.heap, (
                    now + self.cfg.delay.delay(src, dst),
                    next(self.seq), _EV_DELIVER, dst, block.id, 0,
                ))

    def handle_deliver(self, now: float, node_idx: int, block_id: int) -> None:
        node = self.nodes[node_idx]
        block = self.blocks[block_id]
        if block.id in node.store:
            return
        if block.parent not in node.store:
            node.pending.setdefault(block.parent, []).append(block)
            return
        tip_moved = False
        queue = [block]
        while queue:
            b = queue.pop(0)
            reason = validate_timestamp(b, node.store, now + node.clock_offset, self.rules)
            if reason is not None:
                # dropped for good; descendants stay parked in the pending
                # pool and never become part of this node's view
                self.rejections.append(Rejection(now, node_idx, b.id, reason))
                continue
            tc = node.store.insert(b)
            if tc.changed:
                self.tip_events.append(TipEvent(now, node_idx, tc.new_tip, tc.reorg_depth))
                tip_moved = True
            queue.extend(node.pending.pop(b.id, ()))
        if tip_moved:
            self.check_stop(node)
            self.on_tip_change(node, now)

    def check_stop(self, node: _Node) -> None:
        stop = self.cfg.stop
        if (stop.blocks is not None and node.index == 0
                and node.store.tip_block().height >= stop.blocks):
            self.draining = True

    # ---- main loop --------------------------------------------------------

    def run(self) -> SimTrace:
        for m in range(len(self.cfg.miners)):
            self.schedule_find(m, 0.0)
        duration = self.cfg.stop.duration
        while self.heap:
            now, _, kind, a, b, c = heapq.heappop(self.heap)
            if kind == _EV_FOUND:
                if duration is not None and now > duration:
                    continue  # discovery falls past the horizon: never happens
                self.handle_found(now, a, b, c)
            else:
                self.handle_deliver(now, a, b)
        episodes = self.collect_episodes()
        return SimTrace(
            config=self.cfg,
            blocks=self.blocks,
            tip_events=self.tip_events,
            fork_episodes=episodes,
            difficulty_history=self.difficulty_history,
            warnings=self.warnings,
            rejections=self.rejections,
            final_tips=[n.store.tip for n in self.nodes],
        )

    def collect_episodes(self) -> list[ForkEpisode]:
        canonical = set()
        bid = self.nodes[0].store.tip
        while bid is not None:
            canonical.add(bid)
            bid = self.blocks[bid].parent
        episodes = []
        for parent_id, kids in self.children.items():
            if len(kids) < 2:
                continue
            kids = sorted(kids, key=lambda i: self.blocks[i].found_at)
            winner = next((k for k in kids if k in canonical), None)
            episodes.append(ForkEpisode(
                window_start=self.blocks[kids[0]].found_at,
                blocks=tuple(kids),
                winner=winner,
            ))
        episodes.sort(key=lambda e: e.window_start)
        return episodes
