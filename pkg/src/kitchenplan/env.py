"""Deterministic two-chef kitchen gridworld.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row; arrays are
indexed ``[y, x]``. Agents choose a *target cell* each tick. A target that is
an interactive tile orthogonally adjacent to the agent triggers the
interaction table; any other target moves the agent one BFS step toward it.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from kitchenplan._accel import UNREACHED, bfs_distances

HORIZON = 400
COOK_TIME = 20
SOUP_REWARD = 20
MAX_ONIONS = 3


class Tile(IntEnum):
    FLOOR = 0
    WALL = 1
    ONION_STORAGE = 2
    PLATE_DISPENSER = 3
    POT = 4
    SHARED_BAR = 5
    SERVING_COUNTER = 6


class Item(IntEnum):
    NONE = 0
    ONION = 1
    PLATE = 2
    SOUP = 3


INTERACTIVE = frozenset(
    {Tile.ONION_STORAGE, Tile.PLATE_DISPENSER, Tile.POT, Tile.SHARED_BAR, Tile.SERVING_COUNTER}
)

_CHAR_TO_TILE = {
    "#": Tile.WALL,
    ".": Tile.FLOOR,
    "O": Tile.ONION_STORAGE,
    "D": Tile.PLATE_DISPENSER,
    "P": Tile.POT,
    "B": Tile.SHARED_BAR,
    "S": Tile.SERVING_COUNTER,
}
_TILE_TO_CHAR = {v: k for k, v in _CHAR_TO_TILE.items()}

# Up, Down, Left, Right: the fixed tie-break order for movement.
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))

Cell = tuple[int, int]


class LayoutError(ValueError):
    """A layout violates one of the structural invariants."""


class InputError(ValueError):
    """An action or argument is malformed."""


class LifecycleError(RuntimeError):
    """A finished episode was stepped."""


@dataclass(frozen=True)
class Layout:
    name: str
    rows: tuple[str, ...]
    agent_starts: tuple[Cell, Cell]

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    @cached_property
    def tiles(self) -> np.ndarray:
        grid = np.array([[_CHAR_TO_TILE[ch] for ch in row] for row in self.rows], dtype=np.int8)
        grid.setflags(write=False)
        return grid

    @cached_property
    def floor(self) -> np.ndarray:
        mask = self.tiles == Tile.FLOOR
        mask.setflags(write=False)
        return mask

    def tile(self, cell: Cell) -> Tile:
        x, y = cell
        return Tile(int(self.tiles[y, x]))

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def cells_of(self, kind: Tile) -> tuple[Cell, ...]:
        """Cells of one tile kind in row-major order."""
        ys, xs = np.nonzero(self.tiles == kind)
        return tuple((int(x), int(y)) for y, x in zip(ys, xs))

    @cached_property
    def pots(self) -> tuple[Cell, ...]:
        return self.cells_of(Tile.POT)

    @cached_property
    def bars(self) -> tuple[Cell, ...]:
        return self.cells_of(Tile.SHARED_BAR)

    @cached_property
    def pot_index(self) -> dict[Cell, int]:
        return {c: i for i, c in enumerate(self.pots)}

    @cached_property
    def bar_index(self) -> dict[Cell, int]:
        return {c: i for i, c in enumerate(self.bars)}

    def neighbors(self, cell: Cell) -> Iterable[Cell]:
        x, y = cell
        for dx, dy in MOVES:
            nxt = (x + dx, y + dy)
            if self.in_bounds(nxt):
                yield nxt

    def floor_neighbors(self, cell: Cell) -> tuple[Cell, ...]:
        return tuple(n for n in self.neighbors(cell) if self.tile(n) == Tile.FLOOR)

    def to_text(self) -> str:
        rows = [list(r) for r in self.rows]
        for i, (x, y) in enumerate(self.agent_starts):
            rows[y][x] = str(i + 1)
        return "\n".join("".join(r) for r in rows) + "\n"

    @cached_property
    def digest_bytes(self) -> bytes:
        return hashlib.blake2b(self.to_text().encode(), digest_size=8).digest()

    @lru_cache(maxsize=4096)
    def reachable(self, start: Cell, blocked: Cell | None) -> frozenset[Cell]:
        """Floor cells 4-connected to ``start`` with ``blocked`` removed."""
        passable = self.floor.copy()
        if blocked is not None:
            passable[blocked[1], blocked[0]] = False
        passable[start[1], start[0]] = True
        dist = bfs_distances(passable, [(start[1], start[0])])
        ys, xs = np.nonzero(dist != UNREACHED)
        return frozenset((int(x), int(y)) for y, x in zip(ys, xs))

    def validate(self) -> None:
        if not self.rows or any(len(r) != len(self.rows[0]) for r in self.rows):
            raise LayoutError("layout must be rectangular")
        h, w = self.height, self.width
        tiles = self.tiles
        border = np.ones((h, w), dtype=bool)
        border[1:-1, 1:-1] = False
        if np.any(border & (tiles == Tile.FLOOR)):
            raise LayoutError("border cells must never be Floor")
        for kind in INTERACTIVE:
            for cell in self.cells_of(kind):
                if not self.floor_neighbors(cell):
                    raise LayoutError(
                        f"interactive tile {kind.name} at {cell} is not adjacent to any Floor cell"
                    )
        if len(self.agent_starts) != 2:
            raise LayoutError("exactly two agent starts are required")
        if self.agent_starts[0] == self.agent_starts[1]:
            raise LayoutError("agent starts must be distinct")
        for cell in self.agent_starts:
            if not self.in_bounds(cell) or self.tile(cell) != Tile.FLOOR:
                raise LayoutError(f"agent start {cell} must be a Floor cell")


def parse_layout(text: str, name: str = "custom") -> Layout:
    """Parse the plain-text layout format (one char per tile, digits mark starts)."""
    lines = [ln.rstrip("\r") for ln in text.strip("\n").split("\n")]
    if not lines or any(not ln for ln in lines):
        raise LayoutError("layout text is empty or has blank rows")
    starts: dict[int, Cell] = {}
    rows = []
    for y, line in enumerate(lines):
        row = []
        for x, ch in enumerate(line):
            if ch in "12":
                if int(ch) in starts:
                    raise LayoutError(f"agent start {ch} appears twice")
                starts[int(ch)] = (x, y)
                row.append(".")
            elif ch in _CHAR_TO_TILE:
                row.append(ch)
            else:
                raise LayoutError(f"unknown tile character {ch!r} at ({x},{y})")
        rows.append("".join(row))
    if sorted(starts) != [1, 2]:
        raise LayoutError("layout must mark agent starts 1 and 2")
    layout = Layout(name=name, rows=tuple(rows), agent_starts=(starts[1], starts[2]))
    layout.validate()
    return layout


def load_layout(name_or_path: str | Path) -> Layout:
    """Load a shipped layout by name, or any layout file by path."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return parse_layout(path.read_text(), name=path.stem)
    ref = resources.files("kitchenplan") / "layouts" / f"{name_or_path}.txt"
    if not ref.is_file():
        raise FileNotFoundError(f"no shipped layout named {name_or_path!r}")
    return parse_layout(ref.read_text(), name=str(name_or_path))


class PotState(NamedTuple):
    contents: int = 0
    timer: int = 0
    finished: bool = False

    @property
    def cooking(self) -> bool:
        return self.timer > 0

    @property
    def fillable(self) -> bool:
        return self.contents < MAX_ONIONS and self.timer == 0 and not self.finished


class EventKind(IntEnum):
    PICK_ONION = 0
    PICK_PLATE = 1
    PLACE_BAR = 2
    TAKE_BAR = 3
    POT_ADD = 4
    PLATE_SOUP = 5
    DELIVER = 6


class Event(NamedTuple):
    agent: int
    kind: EventKind
    cell: Cell
    item: Item


@dataclass(frozen=True)
class GridState:
    """Immutable snapshot of the world. ``events`` describe the transition that
    produced this state and are excluded from equality and hashing."""

    layout: Layout
    positions: tuple[Cell, Cell]
    held: tuple[Item, Item]
    pots: tuple[PotState, ...]
    bar_items: tuple[Item, ...]
    timestep: int = 0
    deliveries: int = 0
    horizon: int = HORIZON
    events: tuple[Event, ...] = field(default=(), compare=False)

    @property
    def episode_reward(self) -> int:
        return SOUP_REWARD * self.deliveries

    @property
    def done(self) -> bool:
        return self.timestep >= self.horizon

    def bar_map(self) -> dict[Cell, Item]:
        return dict(zip(self.layout.bars, self.bar_items))

    def check_invariants(self) -> None:
        for pot in self.pots:
            assert 0 <= pot.contents <= MAX_ONIONS, pot
            assert 0 <= pot.timer <= COOK_TIME, pot
            if pot.timer > 0:
                assert pot.contents == MAX_ONIONS and not pot.finished, pot
            if pot.finished:
                assert pot.contents == MAX_ONIONS and pot.timer == 0, pot
        a, b = self.positions
        assert a != b, "agents overlap"
        for cell in self.positions:
            assert self.layout.tile(cell) == Tile.FLOOR, cell
        assert len(self.bar_items) == len(self.layout.bars)


@dataclass(frozen=True)
class TargetAction:
    target: Cell

    def one_hot(self, height: int, width: int) -> np.ndarray:
        grid = np.zeros((height, width), dtype=np.float64)
        grid[self.target[1], self.target[0]] = 1.0
        return grid

    @classmethod
    def from_one_hot(cls, grid: np.ndarray) -> "TargetAction":
        if grid.sum() != 1 or np.count_nonzero(grid) != 1:
            raise InputError("one-hot target must have exactly one hot cell")
        y, x = np.unravel_index(int(np.argmax(grid)), grid.shape)
        return cls((int(x), int(y)))

    @classmethod
    def from_index(cls, index: int, width: int) -> "TargetAction":
        return cls((int(index % width), int(index // width)))


def reset(layout: Layout, seed: int = 0, horizon: int = HORIZON) -> GridState:
    """Initial state. The dynamics are deterministic, so ``seed`` only tags the
    episode; identical ``(layout, seed)`` pairs give identical states."""
    layout.validate()
    del seed
    return GridState(
        layout=layout,
        positions=tuple(layout.agent_starts),
        held=(Item.NONE, Item.NONE),
        pots=tuple(PotState() for _ in layout.pots),
        bar_items=tuple(Item.NONE for _ in layout.bars),
        horizon=horizon,
    )


def _as_cell(action) -> Cell:
    if isinstance(action, TargetAction):
        return action.target
    x, y = action
    return (int(x), int(y))


def _interact(state_parts: dict, agent: int, cell: Cell, layout: Layout) -> Event | None:
    """Fire the interaction table; returns the event or None for a no-op."""
    held = state_parts["held"]
    hand = held[agent]
    kind = layout.tile(cell)
    if kind == Tile.ONION_STORAGE:
        if hand == Item.NONE:
            held[agent] = Item.ONION
            return Event(agent, EventKind.PICK_ONION, cell, Item.ONION)
    elif kind == Tile.PLATE_DISPENSER:
        if hand == Item.NONE:
            held[agent] = Item.PLATE
            return Event(agent, EventKind.PICK_PLATE, cell, Item.PLATE)
    elif kind == Tile.SHARED_BAR:
        bar = state_parts["bar"]
        i = layout.bar_index[cell]
        if hand != Item.NONE and bar[i] == Item.NONE:
            bar[i] = hand
            held[agent] = Item.NONE
            return Event(agent, EventKind.PLACE_BAR, cell, hand)
        if hand == Item.NONE and bar[i] != Item.NONE:
            item = bar[i]
            bar[i] = Item.NONE
            held[agent] = item
            return Event(agent, EventKind.TAKE_BAR, cell, item)
    elif kind == Tile.POT:
        pots = state_parts["pots"]
        i = layout.pot_index[cell]
        pot = pots[i]
        if hand == Item.ONION and pot.fillable:
            contents = pot.contents + 1
            pots[i] = PotState(contents, COOK_TIME if contents == MAX_ONIONS else 0, False)
            held[agent] = Item.NONE
            return Event(agent, EventKind.POT_ADD, cell, Item.ONION)
        if hand == Item.PLATE and pot.finished:
            pots[i] = PotState()
            held[agent] = Item.SOUP
            return Event(agent, EventKind.PLATE_SOUP, cell, Item.SOUP)
    elif kind == Tile.SERVING_COUNTER:
        if hand == Item.SOUP:
            held[agent] = Item.NONE
            state_parts["deliveries"] += 1
            return Event(agent, EventKind.DELIVER, cell, Item.SOUP)
    return None


def _move(layout: Layout, pos: Cell, target: Cell, blocked: Cell) -> Cell:
    """One BFS step from ``pos`` toward ``target`` (or toward the nearest Floor
    cell adjacent to it when the target is not Floor)."""
    if layout.tile(target) == Tile.FLOOR:
        goals = [target]
    else:
        goals = list(layout.floor_neighbors(target))
    goals = [g for g in goals if g != blocked]
    if not goals or pos in goals:
        return pos
    passable = layout.floor.copy()
    passable[blocked[1], blocked[0]] = False
    dist = bfs_distances(passable, [(g[1], g[0]) for g in goals])
    here = dist[pos[1], pos[0]]
    if here == UNREACHED:
        return pos
    for dx, dy in MOVES:
        nxt = (pos[0] + dx, pos[1] + dy)
        if layout.in_bounds(nxt) and dist[nxt[1], nxt[0]] == here - 1:
            return nxt
    return pos  # pragma: no cover - a BFS predecessor always exists


def step(state: GridState, actions: Sequence) -> tuple[GridState, int, bool]:
    """Advance one tick. Agents resolve in index order; returns ``(state, reward, done)``."""
    if state.done:
        raise LifecycleError("cannot step a finished episode; call reset()")
    if len(actions) != len(state.positions):
        raise InputError(f"expected {len(state.positions)} actions, got {len(actions)}")
    layout = state.layout
    targets = [_as_cell(a) for a in actions]
    for t in targets:
        if not layout.in_bounds(t):
            raise InputError(f"target {t} is outside the {layout.width}x{layout.height} grid")

    parts = {
        "held": list(state.held),
        "bar": list(state.bar_items),
        "pots": list(state.pots),
        "deliveries": state.deliveries,
    }
    positions = list(state.positions)
    events: list[Event] = []
    for i, target in enumerate(targets):
        pos = positions[i]
        other = positions[1 - i]
        kind = layout.tile(target)
        adjacent = abs(pos[0] - target[0]) + abs(pos[1] - target[1]) == 1
        if kind in INTERACTIVE and adjacent:
            ev = _interact(parts, i, target, layout)
            if ev is not None:
                events.append(ev)
        else:
            positions[i] = _move(layout, pos, target, other)

    pots = []
    for pot in parts["pots"]:
        if pot.contents == MAX_ONIONS and pot.timer > 0:
            timer = pot.timer - 1
            pot = PotState(pot.contents, timer, timer == 0)
        pots.append(pot)

    reward = SOUP_REWARD * (parts["deliveries"] - state.deliveries)
    new = GridState(
        layout=layout,
        positions=tuple(positions),
        held=tuple(Item(h) for h in parts["held"]),
        pots=tuple(pots),
        bar_items=tuple(Item(b) for b in parts["bar"]),
        timestep=state.timestep + 1,
        deliveries=parts["deliveries"],
        horizon=state.horizon,
        events=tuple(events),
    )
    return new, reward, new.done


def legal_targets(state: GridState, agent: int) -> frozenset[Cell]:
    """Reachable Floor cells plus interactive tiles adjacent to them."""
    layout = state.layout
    reach = layout.reachable(state.positions[agent], state.positions[1 - agent])
    out = set(reach)
    for cell in reach:
        for n in layout.neighbors(cell):
            if layout.tile(n) in INTERACTIVE:
                out.add(n)
    out.add(state.positions[agent])
    return frozenset(out)


def legal_mask(state: GridState, agent: int) -> np.ndarray:
    mask = np.zeros((state.layout.height, state.layout.width), dtype=bool)
    for x, y in legal_targets(state, agent):
        mask[y, x] = True
    return mask


def state_hash(state: GridState) -> int:
    """Stable 64-bit digest of the world state (events excluded)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(state.layout.digest_bytes)
    for x, y in state.positions:
        h.update(struct.pack("<hh", x, y))
    h.update(bytes(int(i) for i in state.held))
    for pot in state.pots:
        h.update(struct.pack("<bbb", pot.contents, pot.timer, int(pot.finished)))
    h.update(bytes(int(i) for i in state.bar_items))
    h.update(struct.pack("<iii", state.timestep, state.deliveries, state.horizon))
    return int.from_bytes(h.digest(), "little")


def room_of(state: GridState, agent: int) -> frozenset[Cell]:
    """Floor cells the agent can reach ignoring the other chef."""
    return state.layout.reachable(state.positions[agent], None)


def can_reach_tile(state: GridState, agent: int, kind: Tile) -> bool:
    layout = state.layout
    room = room_of(state, agent)
    return any(n in room for c in layout.cells_of(kind) for n in layout.floor_neighbors(c))


def render(state: GridState) -> str:
    """ASCII picture for logs and debugging."""
    rows = [list(r) for r in state.layout.rows]
    for cell, item in state.bar_map().items():
        if item != Item.NONE:
            rows[cell[1]][cell[0]] = "obs"[item - 1]
    for i, (x, y) in enumerate(state.positions):
        rows[y][x] = "12"[i]
    return "\n".join("".join(r) for r in rows)
