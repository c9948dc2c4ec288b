"""Grid-world warehouse benchmark: robots that fetch racks to a feed point and back."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import GenerationFailure, InvalidConfig
from .logic import Formula, parse_cosafe
from .model import Mdp
from .solver import MorapInstance

HEADINGS = ((0, 1), (1, 0), (0, -1), (-1, 0))  # N, E, S, W
MAX_RETRIES = 10


@dataclass(frozen=True)
class WarehouseConfig:
    W: int = 6
    H: int = 6
    n: int = 2
    slip: float = 0.05
    racks: tuple[tuple[int, int], ...] | None = None
    feed: tuple[int, int] | None = None
    seed: int = 0
    deadline: int | None = -1  # -1 selects the default bound; None disables it

    def __post_init__(self):
        if self.W < 1 or self.H < 1:
            raise InvalidConfig("grid must be at least 1x1")
        if self.n < 1:
            raise InvalidConfig("at least one agent is required")
        if not 0 <= self.slip < 1:
            raise InvalidConfig("slip probability must lie in [0, 1)")
        racks = self.racks
        if racks is None:
            racks = tuple((k % self.W, self.H - 1 - k // self.W) for k in range(self.n))
        racks = tuple((int(x), int(y)) for x, y in racks)
        feed = tuple(int(v) for v in (self.feed if self.feed is not None else (self.W - 1, 0)))
        for x, y in racks + (feed,):
            if not (0 <= x < self.W and 0 <= y < self.H):
                raise InvalidConfig(f"cell {(x, y)} lies outside the {self.W}x{self.H} grid")
        if len(set(racks)) != len(racks):
            raise InvalidConfig("rack cells must be distinct")
        if feed in racks:
            raise InvalidConfig("the feed cell cannot be a rack")
        if len(racks) < self.n:
            raise InvalidConfig(f"{self.n} tasks need at least {self.n} racks")
        if self.deadline is not None and self.deadline != -1 and self.deadline < 1:
            raise InvalidConfig("deadline must be positive")
        object.__setattr__(self, "racks", racks)
        object.__setattr__(self, "feed", feed)

    @property
    def step_bound(self) -> int | None:
        if self.deadline == -1:
            return 4 * (self.W + self.H) + 8
        return self.deadline

    @property
    def num_states(self) -> int:
        return self.W * self.H * 8

    def to_json(self) -> dict:
        d = asdict(self)
        d["racks"] = [list(r) for r in self.racks]
        d["feed"] = list(self.feed)
        d["deadline"] = self.step_bound
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "WarehouseConfig":
        known = {"W", "H", "n", "slip", "racks", "feed", "seed", "deadline"}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
        kw = dict(obj)
        if kw.get("racks") is not None:
            kw["racks"] = tuple(tuple(r) for r in kw["racks"])
        if kw.get("feed") is not None:
            kw["feed"] = tuple(kw["feed"])
        return cls(**kw)


def state_index(cfg: WarehouseConfig, x: int, y: int, heading: int, carrying: bool) -> int:
    return ((y * cfg.W + x) * 4 + heading) * 2 + int(carrying)


def decode_state(cfg: WarehouseConfig, s: int) -> tuple[int, int, int, bool]:
    carrying = bool(s % 2)
    s //= 2
    heading = s % 4
    cell = s // 4
    return cell % cfg.W, cell // cfg.W, heading, carrying


def initial_cells(cfg: WarehouseConfig, seed: int | None = None) -> list[tuple[int, int]]:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    reserved = set(cfg.racks) | {cfg.feed}
    free = [(x, y) for y in range(cfg.H) for x in range(cfg.W) if (x, y) not in reserved]
    pool = free if len(free) >= cfg.n else [(x, y) for y in range(cfg.H) for x in range(cfg.W)]
    if len(pool) < cfg.n:
        raise InvalidConfig("grid too small for distinct start cells")
    pick = rng.choice(len(pool), size=cfg.n, replace=False)
    return [pool[int(k)] for k in pick]


def generate_agent(cfg: WarehouseConfig, start: tuple[int, int]) -> tuple[Mdp, np.ndarray]:
    rack_of = {cell: k for k, cell in enumerate(cfg.racks)}
    choices = []
    labels = []
    for s in range(cfg.num_states):
        x, y, h, carrying = decode_state(cfg, s)
        lab = set()
        if (x, y) in rack_of:
            lab.add(f"at_rack_{rack_of[(x, y)]}")
        if (x, y) == cfg.feed:
            lab.add("at_feed")
        if carrying:
            lab.add("carrying")
        labels.append(lab)
        choices.append((s, "rotL", [(state_index(cfg, x, y, (h - 1) % 4, carrying), 1.0)]))
        choices.append((s, "rotR", [(state_index(cfg, x, y, (h + 1) % 4, carrying), 1.0)]))
        dx, dy = HEADINGS[h]
        nx, ny = x + dx, y + dy
        if 0 <= nx < cfg.W and 0 <= ny < cfg.H and cfg.slip < 1:
            moved = state_index(cfg, nx, ny, h, carrying)
            to = [(moved, 1.0 - cfg.slip)] + ([(s, cfg.slip)] if cfg.slip > 0 else [])
        else:
            to = [(s, 1.0)]
        choices.append((s, "fwd", to))
        if (x, y) in rack_of:
            if carrying:
                choices.append((s, "unload", [(state_index(cfg, x, y, h, False), 1.0)]))
            else:
                choices.append((s, "load", [(state_index(cfg, x, y, h, True), 1.0)]))
    init = state_index(cfg, start[0], start[1], 0, False)
    mdp = Mdp.from_choices(cfg.num_states, init, choices, labels)
    return mdp, -np.ones(mdp.num_choices)


def generate_task(cfg: WarehouseConfig, rack: int) -> Formula:
    if not 0 <= rack < len(cfg.racks):
        raise InvalidConfig(f"rack index {rack} out of range")
    r = f"at_rack_{rack}"
    return parse_cosafe(f"F({r} & carrying & F(at_feed & carrying & F({r} & !carrying)))")


def generate_instance(cfg: WarehouseConfig) -> MorapInstance:
    """Instance with ``n`` robots and one replenishment task per rack among the first ``n``.

    Start cells are drawn from the seed; if the result is not reward-finite
    the draw is repeated with derived seeds.
    """
    tasks = [generate_task(cfg, k) for k in range(cfg.n)]
    for attempt in range(MAX_RETRIES):
        starts = initial_cells(cfg, cfg.seed + attempt * 7919)
        agents, costs = zip(*(generate_agent(cfg, s) for s in starts))
        inst = MorapInstance(list(agents), list(costs), tasks, cfg.step_bound)
        if all(inst.product(i, j).reward_finite for i in range(inst.n) for j in range(inst.n)):
            inst.config = cfg
            inst.starts = starts
            return inst
    raise GenerationFailure(
        f"no reward-finite instance after {MAX_RETRIES} attempts; robots can idle forever "
        "unless a deadline is set")
