"""Screen-graph exploration with depth-first, breadth-first or random strategies.

A declarative graph of app screens stands in for driving a real device: each
screen names its screenshot, and each edge is a labelled action leading to
another screen.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from owleyes.errors import GraphValidationError
from owleyes.rng import SplitMix64

STRATEGIES = ("dfs", "bfs", "random")


@dataclass(frozen=True)
class Screen:
    screenshot: str
    hierarchy: Optional[str] = None


@dataclass
class AppGraph:
    start: str
    screens: dict  # id -> Screen
    edges: dict = field(default_factory=dict)  # id -> [(action, target id)]

    def successors(self, sid):
        return [dst for _, dst in self.edges.get(sid, [])]


@dataclass
class Trace:
    visited: list
    step_count: int
    strategy: str
    seed: Optional[int] = None

    def to_dict(self):
        return {"strategy": self.strategy, "seed": self.seed, "step_count": self.step_count, "visited": self.visited}


def load_app_graph(json_text: str) -> AppGraph:
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise GraphValidationError(f"malformed app graph JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise GraphValidationError("app graph must be a JSON object")
    raw_screens = obj.get("screens") or {}
    if not isinstance(raw_screens, dict) or not raw_screens:
        raise GraphValidationError("app graph has no screens")
    screens = {}
    for sid, s in raw_screens.items():
        if isinstance(s, str):
            s = {"screenshot": s}
        if not isinstance(s, dict) or "screenshot" not in s:
            raise GraphValidationError(f"screen {sid!r} lacks a screenshot path", [sid])
        screens[sid] = Screen(screenshot=s["screenshot"], hierarchy=s.get("hierarchy"))
    start = obj.get("start")
    if start not in screens:
        raise GraphValidationError(f"start screen {start!r} is not defined", [start])

    edges = {}
    dangling = []
    for src, outs in (obj.get("edges") or {}).items():
        if src not in screens:
            dangling.append(src)
            continue
        lst = []
        for e in outs:
            dst = e.get("to") if isinstance(e, dict) else e
            if dst not in screens:
                dangling.append(dst)
                continue
            lst.append((e.get("action", "") if isinstance(e, dict) else "", dst))
        edges[src] = lst
    if dangling:
        names = sorted(set(map(str, dangling)))
        raise GraphValidationError(f"edges reference unknown screens: {', '.join(names)}", names)
    return AppGraph(start=start, screens=screens, edges=edges)


def _dfs(g, budget):
    visited, seen = [], set()
    stack = [g.start]
    steps = 0
    while stack and len(visited) < budget:
        sid = stack.pop()
        if sid in seen:
            continue
        seen.add(sid)
        visited.append(sid)
        steps += 1
        stack.extend(reversed([d for d in g.successors(sid) if d not in seen]))
    return visited, steps


def _bfs(g, budget):
    visited, seen = [g.start], {g.start}
    queue = deque([g.start])
    steps = 1
    while queue and len(visited) < budget:
        sid = queue.popleft()
        for dst in g.successors(sid):
            if dst not in seen and len(visited) < budget:
                seen.add(dst)
                visited.append(dst)
                queue.append(dst)
                steps += 1
    return visited, steps


def _random(g, budget, seed):
    """Follow a uniformly chosen untried edge from the current screen.

    When the current screen has none left, restart from the start screen;
    when that is exhausted too, jump to any visited screen that still has
    untried edges.  Stops at the budget or when no untried edge remains.
    """
    rng = SplitMix64(seed)
    untried = {sid: list(range(len(g.edges.get(sid, [])))) for sid in g.screens}
    visited, seen = [g.start], {g.start}
    current = g.start
    steps = 0
    while len(visited) < budget:
        if not untried[current]:
            current = g.start
        if not untried[current]:
            frontier = [s for s in visited if untried[s]]
            if not frontier:
                break
            current = frontier[rng.randbelow(len(frontier))]
        options = untried[current]
        k = options.pop(rng.randbelow(len(options)))
        current = g.edges[current][k][1]
        steps += 1
        if current not in seen:
            seen.add(current)
            visited.append(current)
    return visited, steps


def explore(g: AppGraph, strategy: str = "dfs", budget: int = 100, seed: int = 0) -> Trace:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if budget <= 0:
        raise ValueError("budget must be positive")
    if strategy == "dfs":
        visited, steps = _dfs(g, budget)
    elif strategy == "bfs":
        visited, steps = _bfs(g, budget)
    else:
        visited, steps = _random(g, budget, seed)
    return Trace(visited=visited, step_count=steps, strategy=strategy, seed=seed if strategy == "random" else None)
