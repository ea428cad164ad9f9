"""Record-retrieval task scored by IoU times rescaled Kendall tau.

Each task owns a small table of rows with a colour, a size and a distinct
sort key. The agent runs canned queries (filter x order) and submits the
last result. Some request words are ambiguous between two filters whose row
sets overlap, and "sorted" does not say which direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Trajectory
from ..metrics import iou_kendall_reward
from .base import ActionEntry, ActionTable, EnvConfigError, Environment, TaskInstance

COLORS = ("red", "blue", "green")
SIZES = ("small", "large")
FILTERS = ("all",) + COLORS + SIZES
ORDERS = ("asc", "desc")
FILTER_WORDS = {"all": "everything", "red": "red", "blue": "blue", "green": "green", "small": "small", "large": "large"}
ORDER_WORDS = {"asc": "ascending", "desc": "descending"}
AMBIGUOUS_FILTERS = {"red": "primary", "small": "primary", "blue": "basic", "large": "basic"}
AMBIGUOUS_ORDER = "sorted"
MIN_ROWS_PER_FILTER = 2
MAX_TABLE_DRAWS = 1000


@dataclass(frozen=True)
class Table:
    colors: tuple[str, ...]
    sizes: tuple[str, ...]
    keys: tuple[int, ...]
    gold_filter: str
    gold_order: str


def run_query(table: Table, filt: str, order: str) -> tuple[int, ...]:
    rows = [
        i for i in range(len(table.keys))
        if filt == "all" or table.colors[i] == filt or table.sizes[i] == filt
    ]
    rows.sort(key=lambda i: table.keys[i], reverse=order == "desc")
    return tuple(rows)


@dataclass
class _World:
    last_query: tuple[str, str] | None = None
    last_result: tuple[int, ...] | None = None
    submission: tuple[int, ...] | None = None


class SetQuery(Environment):
    kind = "setquery"

    def _build(self) -> None:
        if self.config.size < len(COLORS) * MIN_ROWS_PER_FILTER:
            raise EnvConfigError(f"setquery needs at least {len(COLORS) * MIN_ROWS_PER_FILTER} table rows")
        self.queries = [(f, o) for f in FILTERS for o in ORDERS]
        self.submit_id = len(self.queries)

    def _tokens(self) -> list[str]:
        toks = ["request", "think", "run-query", "submit-result", "query", "submit", "result", "empty", "submitted"]
        toks += list(FILTER_WORDS.values()) + list(ORDER_WORDS.values()) + sorted(set(AMBIGUOUS_FILTERS.values()))
        toks.append(AMBIGUOUS_ORDER)
        toks += [f"f:{f}" for f in FILTERS] + [f"o:{o}" for o in ORDERS]
        toks += [f"row{i}" for i in range(self.config.size)]
        toks += self._reflection_words()
        return toks

    def _reflection_words(self) -> list[str]:
        return [f"filter:{f}" for f in FILTERS] + [f"order:{o}" for o in ORDERS] + ["submit-now"]

    def _action_table(self) -> ActionTable:
        v = self.vocab
        think = v.ids(["think", "run-query"])
        entries = [ActionEntry("query", v.ids([f"f:{f}", f"o:{o}"]), think) for f, o in self.queries]
        entries.append(ActionEntry("submit", (), v.ids(["think", "submit-result"])))
        return ActionTable(tuple(entries))

    def query_id(self, filt: str, order: str) -> int:
        return self.queries.index((filt, order))

    def _draw_table(self, rng: np.random.Generator) -> tuple[tuple[str, ...], tuple[str, ...], tuple[int, ...]]:
        n = self.config.size
        for _ in range(MAX_TABLE_DRAWS):
            colors = tuple(COLORS[int(c)] for c in rng.integers(len(COLORS), size=n))
            sizes = tuple(SIZES[int(s)] for s in rng.integers(len(SIZES), size=n))
            counts = [colors.count(c) for c in COLORS] + [sizes.count(s) for s in SIZES]
            if min(counts) >= MIN_ROWS_PER_FILTER:
                keys = tuple(int(k) for k in rng.permutation(n))
                return colors, sizes, keys
        raise EnvConfigError(f"could not draw a {n}-row table with every filter non-trivial")

    def _make_task(self, index: int, rng: np.random.Generator) -> TaskInstance:
        colors, sizes, keys = self._draw_table(rng)
        filt = FILTERS[int(rng.integers(len(FILTERS)))]
        order = ORDERS[int(rng.integers(len(ORDERS)))]
        amb = self.config.ambiguity_rate
        fword = AMBIGUOUS_FILTERS[filt] if filt in AMBIGUOUS_FILTERS and rng.random() < amb else FILTER_WORDS[filt]
        oword = AMBIGUOUS_ORDER if rng.random() < amb else ORDER_WORDS[order]
        tokens = self.vocab.ids(["request", fword, oword])
        return TaskInstance(f"setquery-{self.config.seed}-{index}", tokens, Table(colors, sizes, keys, filt, order))

    def gold(self, task: TaskInstance) -> tuple[int, ...]:
        t = task.hidden_spec
        return run_query(t, t.gold_filter, t.gold_order)

    def _initial_world(self, task: TaskInstance) -> _World:
        return _World()

    def _transition(self, task: TaskInstance, world: _World, action_id: int) -> tuple[list[str], bool]:
        if action_id == self.submit_id:
            world.submission = world.last_result if world.last_result is not None else ()
            return ["submitted"], True
        filt, order = self.queries[action_id]
        world.last_query = (filt, order)
        world.last_result = run_query(task.hidden_spec, filt, order)
        return ["result", *([f"row{i}" for i in world.last_result] or ["empty"])], False

    def _score(self, task: TaskInstance, world: _World) -> float:
        return iou_kendall_reward(world.submission or (), self.gold(task))

    def _passes(self, task: TaskInstance, world: _World) -> bool:
        return world.submission is not None and world.submission == self.gold(task)

    def _optimal_action(self, task: TaskInstance, world: _World) -> int:
        t = task.hidden_spec
        if world.last_query == (t.gold_filter, t.gold_order):
            return self.submit_id
        return self.query_id(t.gold_filter, t.gold_order)

    def _diagnose(self, task: TaskInstance, world: _World, traj: Trajectory) -> str:
        t = task.hidden_spec
        if world.last_query is None or world.last_query[0] != t.gold_filter:
            return f"filter:{t.gold_filter}"
        if world.last_query[1] != t.gold_order:
            return f"order:{t.gold_order}"
        return "submit-now"
