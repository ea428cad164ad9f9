"""Household search task: find an object, carry it to a lamp, switch the lamp on.

The goal predicate is checked when a present lamp is used, which ends the
trial. Object placement is hidden; each object type has a preferred location
(shared across tasks of one world) but is elsewhere half of the time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Trajectory
from .base import NOTHING_HAPPENS, ActionEntry, ActionTable, EnvConfigError, Environment, TaskInstance

OBJECTS = ("bowl", "mug", "book", "pen", "apple", "key")
TOOLS = ("desklamp", "floorlamp")
FURNITURE = ("desk", "shelf", "drawer", "bed", "countertop", "cabinet", "sidetable", "dresser")
PREFERRED_PROB = 0.5


@dataclass(frozen=True)
class Layout:
    target: str
    tool: str
    placement: tuple[tuple[str, int], ...]  # (object, location index) for every object and tool


@dataclass
class _World:
    placement: dict
    location: int | None = None
    holding: str | None = None
    used: str | None = None


class GridHouse(Environment):
    kind = "gridhouse"

    def _build(self) -> None:
        n = self.config.size
        if n < 3:
            raise EnvConfigError("gridhouse needs at least 3 locations")
        self.locations = [f"{FURNITURE[i % len(FURNITURE)]}-{i // len(FURNITURE) + 1}" for i in range(n)]
        rng = np.random.default_rng([self.config.seed, 202])
        self.preferred = {o: int(rng.integers(n)) for o in OBJECTS + TOOLS}

    def _tokens(self) -> list[str]:
        toks = ["task", "examine", "under", "think", "go-look", "pick-up", "put-down", "use-tool",
                "goto", "take", "put", "use", "you-see", "nothing", "you-pick-up", "you-put", "you-turn-on",
                NOTHING_HAPPENS]
        toks += self.locations + list(OBJECTS) + list(TOOLS)
        toks += self._reflection_words()
        return toks

    def _reflection_words(self) -> list[str]:
        return ([f"order-{o}-first" for o in OBJECTS] + [f"target-at:{l}" for l in self.locations]
                + [f"tool-at:{l}" for l in self.locations])

    def _action_table(self) -> ActionTable:
        v = self.vocab
        entries = [ActionEntry("goto", (v.id(l),), v.ids(["think", "go-look"])) for l in self.locations]
        entries += [ActionEntry("take", (v.id(o),), v.ids(["think", "pick-up"])) for o in OBJECTS]
        entries.append(ActionEntry("put", (), v.ids(["think", "put-down"])))
        entries += [ActionEntry("use", (v.id(t),), v.ids(["think", "use-tool"])) for t in TOOLS]
        return ActionTable(tuple(entries))

    # slot helpers
    def goto_id(self, loc: int) -> int:
        return loc

    def take_id(self, obj: str) -> int:
        return len(self.locations) + OBJECTS.index(obj)

    @property
    def put_id(self) -> int:
        return len(self.locations) + len(OBJECTS)

    def use_id(self, tool: str) -> int:
        return self.put_id + 1 + TOOLS.index(tool)

    def _make_task(self, index: int, rng: np.random.Generator) -> TaskInstance:
        n = len(self.locations)
        target = OBJECTS[int(rng.integers(len(OBJECTS)))]
        tool = TOOLS[int(rng.integers(len(TOOLS)))]
        placement = []
        for o in OBJECTS + TOOLS:
            loc = self.preferred[o] if rng.random() < PREFERRED_PROB else int(rng.integers(n))
            placement.append((o, loc))
        tokens = self.vocab.ids(["task", "examine", target, "under", tool])
        return TaskInstance(f"gridhouse-{self.config.seed}-{index}", tokens, Layout(target, tool, tuple(placement)))

    def _initial_world(self, task: TaskInstance) -> _World:
        return _World(dict(task.hidden_spec.placement))

    def _visible(self, world: _World) -> list[str]:
        return [o for o in OBJECTS + TOOLS if world.placement.get(o) == world.location]

    def _transition(self, task: TaskInstance, world: _World, action_id: int) -> tuple[list[str], bool]:
        n = len(self.locations)
        if action_id < n:
            world.location = action_id
            seen = self._visible(world)
            return [self.locations[action_id], "you-see", *(seen or ["nothing"])], False
        if action_id < self.put_id:
            obj = OBJECTS[action_id - n]
            if world.holding is None and world.location is not None and world.placement.get(obj) == world.location:
                world.holding = obj
                world.placement[obj] = None
                return ["you-pick-up", obj], False
            return [NOTHING_HAPPENS], False
        if action_id == self.put_id:
            if world.holding is None or world.location is None:
                return [NOTHING_HAPPENS], False
            obj, world.holding = world.holding, None
            world.placement[obj] = world.location
            return ["you-put", obj], False
        tool = TOOLS[action_id - self.put_id - 1]
        if world.location is not None and world.placement.get(tool) == world.location:
            world.used = tool
            return ["you-turn-on", tool], True
        return [NOTHING_HAPPENS], False

    def _passes(self, task: TaskInstance, world: _World) -> bool:
        spec = task.hidden_spec
        return world.used == spec.tool and world.holding == spec.target

    def _score(self, task: TaskInstance, world: _World) -> float:
        return 1.0 if self._passes(task, world) else 0.0

    def _optimal_action(self, task: TaskInstance, world: _World) -> int:
        spec = task.hidden_spec
        if world.holding is not None and world.holding != spec.target:
            return self.put_id
        if world.holding is None:
            loc = world.placement[spec.target]
            return self.take_id(spec.target) if world.location == loc else self.goto_id(loc)
        loc = world.placement[spec.tool]
        return self.use_id(spec.tool) if world.location == loc else self.goto_id(loc)

    def _diagnose(self, task: TaskInstance, world: _World, traj: Trajectory) -> str:
        spec = task.hidden_spec
        tool_hint = f"tool-at:{self.locations[world.placement[spec.tool]]}"
        if world.used == spec.tool and world.holding != spec.target:
            return f"order-{spec.target}-first"
        if world.used is not None and world.used != spec.tool:
            return tool_hint
        if world.holding != spec.target:
            return f"target-at:{self.locations[world.placement[spec.target]]}"
        return tool_hint
