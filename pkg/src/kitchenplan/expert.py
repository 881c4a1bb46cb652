"""Hand-written shortest-path controller for each subgoal kind.

Used as a reference oracle in tests (what a perfect low-level policy would do)
and to hand-simulate plan sequences; never used to train the learned policy.
"""
from __future__ import annotations

from kitchenplan.env import Cell, GridState, Item, Tile, legal_targets
from kitchenplan.subgoals import SubgoalKind as K


def _dist_map(state: GridState, agent: int) -> dict[Cell, int]:
    layout = state.layout
    start = state.positions[agent]
    blocked = state.positions[1 - agent]
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for c in frontier:
            for n in layout.floor_neighbors(c):
                if n not in dist and n != blocked:
                    dist[n] = dist[c] + 1
                    nxt.append(n)
        frontier = nxt
    return dist


def _nearest(state: GridState, agent: int, cells) -> Cell | None:
    """Closest tile among ``cells`` whose adjacent floor is reachable."""
    dist = _dist_map(state, agent)
    best = None
    for cell in sorted(cells):
        if state.layout.tile(cell) == Tile.FLOOR:
            d = dist.get(cell)
        else:
            ds = [dist[f] for f in state.layout.floor_neighbors(cell) if f in dist]
            d = min(ds) if ds else None
        if d is not None and (best is None or d < best[0]):
            best = (d, cell)
    return None if best is None else best[1]


def _bars_with(state: GridState, item: Item) -> list[Cell]:
    return [c for c, it in state.bar_map().items() if it == item]


def _pots(state: GridState, pred) -> list[Cell]:
    return [c for c, p in zip(state.layout.pots, state.pots) if pred(p)]


def _adjacent_floor(state: GridState, kind: Tile) -> list[Cell]:
    return sorted({f for c in state.layout.cells_of(kind) for f in state.layout.floor_neighbors(c)})


def expert_target(state: GridState, agent: int, kind: K) -> Cell:
    hand = state.held[agent]
    here = state.positions[agent]
    layout = state.layout
    target: Cell | None = None
    if kind in (K.FETCH_ONION_TO_BAR, K.FETCH_PLATE_TO_BAR):
        want = Item.ONION if kind == K.FETCH_ONION_TO_BAR else Item.PLATE
        source = Tile.ONION_STORAGE if want == Item.ONION else Tile.PLATE_DISPENSER
        if hand == want:
            target = _nearest(state, agent, _bars_with(state, Item.NONE))
        elif hand == Item.NONE:
            target = _nearest(state, agent, layout.cells_of(source))
    elif kind == K.WAIT_AT_BAR:
        target = _nearest(state, agent, _adjacent_floor(state, Tile.SHARED_BAR))
    elif kind == K.BAR_ONION_TO_POT:
        if hand == Item.ONION:
            target = _nearest(state, agent, _pots(state, lambda p: p.fillable))
        elif hand == Item.NONE:
            target = _nearest(state, agent, _bars_with(state, Item.ONION))
    elif kind == K.BAR_PLATE_HOLD:
        if hand == Item.NONE:
            target = _nearest(state, agent, _bars_with(state, Item.PLATE))
    elif kind == K.PLATE_SOUP_FROM_POT:
        if hand == Item.PLATE:
            target = _nearest(state, agent, _pots(state, lambda p: p.finished))
        elif hand == Item.NONE:
            target = _nearest(state, agent, _bars_with(state, Item.PLATE))
    elif kind == K.DELIVER_SOUP:
        if hand == Item.SOUP:
            target = _nearest(state, agent, layout.cells_of(Tile.SERVING_COUNTER))
        elif hand == Item.NONE:
            target = _nearest(state, agent, _bars_with(state, Item.SOUP))
    elif kind == K.WAIT_NEAR_POT:
        target = _nearest(state, agent, _adjacent_floor(state, Tile.POT))
    if target is None or target not in legal_targets(state, agent):
        return here
    return target
