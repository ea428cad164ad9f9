"""Multi-hop question answering over a small functional knowledge graph.

Every entity has exactly one neighbour per relation. A task's table is
``Search[topic]``, four ``Lookup[focus, r]`` slots and ``Finish[focus]``. The
lookups are ordered by the question as two (asked relation, sibling) pairs:
the final pair holds the last hop, and a two-hop question puts its first hop
in the first pair, so a slot means the same thing in every task. Entity names
are two tokens (family, given name) and siblings land in one family, so
following the wrong sibling earns partial F1.

An open question names only its first relation, in the first pair, and does
not say whether the final pair continues it; lookups then report no
progress, so only feedback from a failed trial settles when to stop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import StateText, Trajectory
from ..metrics import exact_match, f1, normalize_answer
from .base import ActionEntry, ActionTable, EnvConfigError, Environment, TaskInstance

RELATION_PAIRS = (("birthplace", "deathplace"), ("author", "editor"), ("founder", "funder"))
FAMILIES = ("river", "house", "count", "lake", "mount", "saint", "fort", "port", "glen", "king", "bay", "cape")
_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()
SLOT_ROLES = ("first-a", "first-b", "final-a", "final-b")  # a = asked relation, b = its sibling


def _given_names(n: int) -> list[str]:
    names = []
    for c1 in _ONSETS:
        for v1 in _VOWELS:
            for c2 in _ONSETS:
                for v2 in ("a", "o", "en", "ir"):
                    names.append(f"{c1}{v1}{c2}{v2}")
                    if len(names) == n:
                        return names
    raise EnvConfigError(f"cannot name {n} entities")


@dataclass(frozen=True)
class Question:
    start: int
    relations: tuple[int, ...]
    answer: int
    order: tuple[int, ...]  # relation behind each lookup slot
    stated: bool = True  # False for an open question


@dataclass
class _World:
    focus: int
    path: list[int] = field(default_factory=list)  # relations followed since the last search
    submitted: tuple[str, ...] | None = None


class GraphQA(Environment):
    kind = "graphqa"

    SEARCH = 0
    FINISH = 1 + len(SLOT_ROLES)

    def _build(self) -> None:
        n = self.config.size
        if n < 6:
            raise EnvConfigError("graphqa needs at least 6 entities (two families of three)")
        rng = np.random.default_rng([self.config.seed, 101])
        self.relations = [r for pair in RELATION_PAIRS for r in pair]
        self.sibling = {i: i ^ 1 for i in range(len(self.relations))}
        n_fam = min(len(FAMILIES), max(2, n // 5))
        self.family_of = [i % n_fam for i in range(n)]
        self.names = [(FAMILIES[self.family_of[i]], g) for i, g in enumerate(_given_names(n))]
        members = [[i for i in range(n) if self.family_of[i] == f] for f in range(n_fam)]
        # graph[e][r] = neighbour of e along relation r; siblings land in one family
        self.graph = np.zeros((n, len(self.relations)), dtype=int)
        for e in range(n):
            for p in range(len(RELATION_PAIRS)):
                pool = []
                while len(pool) < 2:
                    fam = members[int(rng.integers(n_fam))]
                    pool = [m for m in fam if m != e]
                a, b = rng.choice(pool, size=2, replace=False)
                self.graph[e, 2 * p], self.graph[e, 2 * p + 1] = a, b

    def _words(self, hop: int) -> list[str]:
        return [f"q{hop}:{r}" for r in self.relations]

    def _tokens(self) -> list[str]:
        toks = ["hops:1", "hops:2", "hops:open", "search-topic", "follow-relation", "answer-now",
                "search", "lookup", "finish", "answered"]
        toks += self._words(1) + self._words(2)
        toks += [f"rel:{r}" for r in self.relations]
        toks += [f"slot:{x}" for x in SLOT_ROLES]
        toks += ["partial", "complete", "overshot"]
        toks += [w for name in self.names for w in name]
        toks += self._reflection_words()
        return toks

    def _reflection_words(self) -> list[str]:
        # gold is always an asked relation, so hints only ever name "a" slots
        return ["hint:first=a", "hint:final=a", "hint:finish-sooner"]

    def _table_for(self, order: tuple[int, ...]) -> ActionTable:
        v = self.vocab
        entries = [ActionEntry("search", (), v.ids(["search-topic"]))]
        entries += [ActionEntry("lookup", v.ids([f"slot:{role}", f"rel:{self.relations[r]}"]),
                                v.ids(["follow-relation"])) for role, r in zip(SLOT_ROLES, order)]
        entries.append(ActionEntry("finish", (), v.ids(["answer-now"])))
        return ActionTable(tuple(entries))

    def _action_table(self) -> ActionTable:
        return self._table_for(tuple(range(len(SLOT_ROLES))))

    def _task_table(self, task: TaskInstance) -> ActionTable:
        return self._table_for(task.hidden_spec.order)

    def _make_task(self, index: int, rng: np.random.Generator) -> TaskInstance:
        n_rel = len(self.relations)
        start = int(rng.integers(self.config.size))
        hops = 1 + int(rng.integers(2))
        rels = [int(rng.integers(n_rel))]
        if hops == 2:
            # second hop comes from a different sibling pair, so the four readings are distinct
            r2 = int(rng.integers(n_rel - 2))
            rels.append(r2 + 2 * (r2 >= rels[0] // 2 * 2))
        stated = rng.random() >= self.config.ambiguity_rate
        order = [x for r in rels for x in (r, self.sibling[r])]
        # a one-hop question fills the other pair with the next unused one; stated, its hop is the final pair
        spare = [r for r in range(n_rel) if r not in order][: len(SLOT_ROLES) - len(order)]
        order = spare + order if stated and hops == 1 else order + spare
        words = [f"q{hop}:{self.relations[r]}" for hop, r in enumerate(rels, start=1)]
        if not stated:
            words = words[:1]
        answer = start
        for r in rels:
            answer = int(self.graph[answer, r])
        tokens = self.vocab.ids([f"hops:{hops if stated else 'open'}", *self.names[start], *words])
        return TaskInstance(f"graphqa-{self.config.seed}-{index}", tokens,
                            Question(start, tuple(rels), answer, tuple(order), stated))

    def _initial_world(self, task: TaskInstance) -> _World:
        return _World(task.hidden_spec.start)

    def _transition(self, task: TaskInstance, world: _World, action_id: int) -> tuple[list[str], bool]:
        if action_id == self.SEARCH:
            world.focus, world.path = task.hidden_spec.start, []
            return list(self.names[world.focus]), False
        if action_id == self.FINISH:
            world.submitted = self.names[world.focus]
            return ["answered"], True
        r = task.hidden_spec.order[action_id - 1]
        world.focus = int(self.graph[world.focus, r])
        world.path.append(r)
        return [*self.names[world.focus], *self._progress(task, world)], False

    @staticmethod
    def _progress(task: TaskInstance, world: _World) -> list[str]:
        """Compare the walk with the hop count the question states; silent for open questions."""
        if not task.hidden_spec.stated:
            return []
        extra = len(world.path) - len(task.hidden_spec.relations)
        return ["partial"] if extra < 0 else ["complete"] if extra == 0 else ["overshot"]

    def _submission(self, world: _World):
        return normalize_answer(world.submitted or ())

    def _gold(self, task: TaskInstance):
        return normalize_answer(self.names[task.hidden_spec.answer])

    def _score(self, task: TaskInstance, world: _World) -> float:
        return f1(self._submission(world), self._gold(task))

    def _passes(self, task: TaskInstance, world: _World) -> bool:
        return world.submitted is not None and exact_match(self._submission(world), self._gold(task)) == 1

    def optimal_action_id(self, task: TaskInstance, state: StateText) -> int:
        """The expert reads an open question as continuing into the final pair
        unless its most recent feedback on stopping says finish sooner."""
        q = task.hidden_spec
        target = q.relations
        if not q.stated:
            target = (q.relations[0], q.order[SLOT_ROLES.index("final-a")])
            stop, go = self.vocab.ids(["hint:finish-sooner", "hint:final=a"])
            for t in reversed(state.reflection_tokens):
                if t in (stop, go):
                    target = target[:1] if t == stop else target
                    break
        return self._next_action(task, target, self.replay(task, state.trail))

    def _optimal_action(self, task: TaskInstance, world: _World) -> int:
        return self._next_action(task, task.hidden_spec.relations, world)

    def _next_action(self, task: TaskInstance, target, world: _World) -> int:
        target = list(target)
        path = world.path
        if path != target[: len(path)]:
            return self.SEARCH
        if len(path) == len(target):
            return self.FINISH
        return 1 + task.hidden_spec.order.index(target[len(path)])

    def _hop_hint(self, task: TaskInstance, hop: int) -> str:
        slot = task.hidden_spec.order.index(task.hidden_spec.relations[hop])
        return f"hint:{SLOT_ROLES[slot].replace('-', '=')}"

    def _diagnose(self, task: TaskInstance, world: _World, traj: Trajectory) -> str:
        target = task.hidden_spec.relations
        for i, r in enumerate(world.path):
            if i >= len(target):
                return "hint:finish-sooner"
            if r != target[i]:
                return self._hop_hint(task, i)
        if len(world.path) < len(target):
            return self._hop_hint(task, len(world.path))
        return "hint:finish-sooner"
