"""Language-grounded target policy.

Descriptions (manual sentences plus the subgoal sentence) are embedded as
hashed bags of words; every entity cell queries them with attention and the
attended value is written into an ``h x w x d`` grid.  Two consecutive grids
are stacked and a 3x3 convolution scores every cell as a movement target.
A value head reads the mean-pooled stack.  Everything runs in float64 numpy
with a hand-written backward pass.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from kitchenplan._accel import conv3x3_backward, conv3x3_forward
from kitchenplan.env import GridState, Item, Tile, TargetAction, legal_mask

log = logging.getLogger(__name__)

VOCAB = 512
DIM = 16
N_HELD = len(Item)

# Entity symbols placed on the grid; EGO is the acting chef's own cell.
SYMBOLS = (
    "onion_storage", "plate_dispenser", "serving_counter",
    "pot_empty", "pot_partial", "pot_cooking", "pot_ready",
    "bar_empty", "bar_onion", "bar_plate", "bar_soup",
    "partner", "ego",
)
SYM = {name: i for i, name in enumerate(SYMBOLS)}
N_SYM = len(SYMBOLS)
EGO = SYM["ego"]
NO_ENTITY = -1

_STATIC = {
    Tile.ONION_STORAGE: SYM["onion_storage"],
    Tile.PLATE_DISPENSER: SYM["plate_dispenser"],
    Tile.SERVING_COUNTER: SYM["serving_counter"],
}
_BAR = {Item.NONE: SYM["bar_empty"], Item.ONION: SYM["bar_onion"],
        Item.PLATE: SYM["bar_plate"], Item.SOUP: SYM["bar_soup"]}

PARAM_SHAPES: dict[str, tuple[int, ...]] = {
    "embed": (VOCAB, DIM),
    "key": (DIM, DIM),
    "value": (DIM, DIM),
    "query": (N_SYM, DIM),
    "query_held": (N_HELD, DIM),
    "ego": (N_HELD, DIM),
    "conv_w": (3, 3, 2 * DIM),
    "ctx": (2 * DIM, 2 * DIM),
    "value_w": (2 * DIM,),
    "value_b": (1,),
}

CHECKPOINT_MAGIC = b"KPCK"
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite values in layer {layer!r}")
        self.layer = layer


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(name)


# --------------------------------------------------------------------------
# parameters and checkpoints

@dataclass
class PolicyParams:
    groups: dict[str, np.ndarray]

    @classmethod
    def init(cls, seed: int = 0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        g = {
            "embed": rng.normal(0.0, 1.0, PARAM_SHAPES["embed"]),
            "key": rng.normal(0.0, 1.0 / np.sqrt(DIM), (DIM, DIM)),
            "value": rng.normal(0.0, 1.0 / np.sqrt(DIM), (DIM, DIM)),
            "query": rng.normal(0.0, 1.0, PARAM_SHAPES["query"]),
            "query_held": rng.normal(0.0, 0.5, PARAM_SHAPES["query_held"]),
            "ego": rng.normal(0.0, 0.5, PARAM_SHAPES["ego"]),
            "conv_w": rng.normal(0.0, 0.1, PARAM_SHAPES["conv_w"]),
            "ctx": rng.normal(0.0, 0.1 / np.sqrt(2 * DIM), PARAM_SHAPES["ctx"]),
            "value_w": rng.normal(0.0, 0.1, PARAM_SHAPES["value_w"]),
            "value_b": np.zeros(1),
        }
        return cls(g)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.groups[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.groups.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.groups.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.groups[k].ravel() for k in PARAM_SHAPES])

    def digest(self) -> str:
        return hashlib.sha256(self.flat().astype("<f8").tobytes()).hexdigest()


def save_checkpoint(params: PolicyParams, path: str | Path, meta: dict | None = None) -> str:
    """Write ``KPCK | u16 version | u32 manifest length | manifest | f64 LE data``
    and the sha256 of the file to ``<path>.sha256``; returns the digest."""
    manifest = json.dumps({
        "groups": [[k, list(PARAM_SHAPES[k])] for k in PARAM_SHAPES],
        "dtype": "<f8",
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")
    blob = (CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(manifest)) + manifest
            + params.flat().astype("<f8").tobytes())
    path = Path(path)
    path.write_bytes(blob)
    digest = hashlib.sha256(blob).hexdigest()
    Path(str(path) + ".sha256").write_text(digest + "\n", encoding="utf-8")
    return digest


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path, verify: bool = True) -> tuple[PolicyParams, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a policy checkpoint")
    version, mlen = struct.unpack("<HI", blob[4:10])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if verify:
        side = Path(str(path) + ".sha256")
        if side.exists() and side.read_text().strip() != hashlib.sha256(blob).hexdigest():
            raise CheckpointError(f"digest mismatch for {path}")
    manifest = json.loads(blob[10:10 + mlen])
    raw = blob[10 + mlen:]
    if len(raw) % 8:
        raise CheckpointError(f"{path}: truncated data block")
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    expected = sum(int(np.prod(shape)) for _, shape in manifest["groups"])
    if expected != data.size:
        raise CheckpointError(f"{path}: data block holds {data.size} values, manifest needs {expected}")
    groups, offset = {}, 0
    for name, shape in manifest["groups"]:
        n = int(np.prod(shape))
        groups[name] = data[offset:offset + n].reshape(shape).copy()
        offset += n
    if offset != data.size or set(groups) != set(PARAM_SHAPES):
        raise CheckpointError("checkpoint manifest does not match the data block")
    return PolicyParams(groups), manifest.get("meta", {})


# --------------------------------------------------------------------------
# text encoding

_WORD = re.compile(r"[a-z0-9]+")


@lru_cache(maxsize=4096)
def token_bucket(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little") % VOCAB


def sentence_buckets(text: str) -> tuple[int, ...]:
    toks = _WORD.findall(text.lower())
    if not toks:
        raise ValueError(f"sentence has no tokens: {text!r}")
    return tuple(token_bucket(t) for t in toks)


def averaging_matrix(sentences: Sequence[str]) -> np.ndarray:
    """Row j averages the embedding rows of sentence j's token buckets."""
    A = np.zeros((len(sentences), VOCAB))
    for j, s in enumerate(sentences):
        b = sentence_buckets(s)
        np.add.at(A[j], list(b), 1.0 / len(b))
    return A


def encode_texts(texts: Sequence[str], params: PolicyParams) -> tuple[np.ndarray, np.ndarray]:
    if not texts:
        raise ValueError("encode_texts needs at least one sentence")
    emb = averaging_matrix(texts) @ params["embed"]
    return emb @ params["key"], emb @ params["value"]


# --------------------------------------------------------------------------
# observations

@dataclass(frozen=True)
class Observation:
    sym: np.ndarray  # (H, W) int, NO_ENTITY where nothing is placed
    pos: tuple[int, int]  # (row, col) of the acting chef
    held: int


@lru_cache(maxsize=32)
def _static_symbols(layout) -> np.ndarray:
    grid = np.full((layout.height, layout.width), NO_ENTITY, dtype=np.int16)
    for y, row in enumerate(layout.rows):
        for x in range(len(row)):
            s = _STATIC.get(layout.tile((x, y)))
            if s is not None:
                grid[y, x] = s
    return grid


def _pot_symbol(pot) -> int:
    if pot.finished:
        return SYM["pot_ready"]
    if pot.cooking:
        return SYM["pot_cooking"]
    return SYM["pot_partial"] if pot.contents else SYM["pot_empty"]


def observe(state: GridState, agent: int) -> Observation:
    layout = state.layout
    grid = _static_symbols(layout).copy()
    for (x, y), pot in zip(layout.pots, state.pots):
        grid[y, x] = _pot_symbol(pot)
    for (x, y), item in zip(layout.bars, state.bar_items):
        grid[y, x] = _BAR[item]
    px, py = state.positions[1 - agent]
    grid[py, px] = SYM["partner"]
    x, y = state.positions[agent]
    return Observation(grid, (y, x), int(state.held[agent]))


# --------------------------------------------------------------------------
# batched forward / backward

@dataclass
class Batch:
    """Aligned per-sample arrays; ``*_prev`` describe the previous tick."""

    sym: np.ndarray        # (B, H, W)
    pos: np.ndarray        # (B, 2)
    held: np.ndarray       # (B,)
    sym_prev: np.ndarray
    pos_prev: np.ndarray
    held_prev: np.ndarray
    goal: np.ndarray       # (B,) index into ``subgoal_texts``
    mask: np.ndarray       # (B, H, W) bool
    subgoal_texts: tuple[str, ...]
    action: np.ndarray | None = None     # (B,) flat cell index
    logp_old: np.ndarray | None = None
    adv: np.ndarray | None = None
    ret: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.held)

    def take(self, idx: np.ndarray) -> "Batch":
        def sel(a):
            return None if a is None else a[idx]
        return Batch(self.sym[idx], self.pos[idx], self.held[idx], self.sym_prev[idx],
                     self.pos_prev[idx], self.held_prev[idx], self.goal[idx], self.mask[idx],
                     self.subgoal_texts, sel(self.action), sel(self.logp_old), sel(self.adv), sel(self.ret))


def _attention_table(params: PolicyParams, manual: Sequence[str], subgoals: Sequence[str]):
    """x[g, h, s] = attention readout of symbol ``s`` with held item ``h`` over
    the descriptions ``manual ++ [subgoals[g]]``."""
    M = len(manual)
    A = averaging_matrix(list(manual) + list(subgoals))
    emb = A @ params["embed"]                                    # (M+G, d)
    G = len(subgoals)
    idx = np.concatenate([np.tile(np.arange(M), (G, 1)), (M + np.arange(G))[:, None]], axis=1)
    Eg = emb[idx]                                                 # (G, n, d)
    Kg = Eg @ params["key"]
    Vg = Eg @ params["value"]
    q = params["query"][None, :, :] + params["query_held"][:, None, :]   # (4, S, d)
    scale = 1.0 / np.sqrt(DIM)
    s = np.einsum("gnd,hsd->ghsn", Kg, q) * scale
    s -= s.max(axis=-1, keepdims=True)
    alpha = np.exp(s)
    alpha /= alpha.sum(axis=-1, keepdims=True)
    T = np.einsum("ghsn,gnd->ghsd", alpha, Vg)
    _finite("attention", T)
    cache = dict(A=A, idx=idx, Eg=Eg, Kg=Kg, Vg=Vg, q=q, alpha=alpha, M=M, G=G)
    return T, cache


def _place(T: np.ndarray, ego: np.ndarray, sym, pos, held, goal) -> np.ndarray:
    B, H, W = sym.shape
    X = np.zeros((B, H, W, DIM))
    b, y, x = np.nonzero(sym >= 0)
    X[b, y, x] = T[goal[b], held[b], sym[b, y, x]]
    ar = np.arange(B)
    X[ar, pos[:, 0], pos[:, 1]] = T[goal, held, EGO] + ego[held]
    return X


@dataclass
class Forward:
    logits: np.ndarray   # (B, H, W) raw conv scores
    probs: np.ndarray    # (B, H, W), zero on masked cells
    logp: np.ndarray     # (B, H, W), -inf on masked cells
    value: np.ndarray    # (B,)
    cache: dict = field(repr=False, default_factory=dict)


def grounding(params: PolicyParams, manual: Sequence[str], subgoal: str, obs: Observation) -> np.ndarray:
    """The ``h x w x d`` grounding tensor of one observation."""
    T, _ = _attention_table(params, manual, [subgoal])
    return _place(T, params["ego"], obs.sym[None], np.array([obs.pos]), np.array([obs.held]),
                  np.zeros(1, dtype=int))[0]


def attention_weights(params: PolicyParams, manual: Sequence[str], subgoal: str) -> np.ndarray:
    """(held, symbol, description) attention weights for one subgoal."""
    _, cache = _attention_table(params, manual, [subgoal])
    return cache["alpha"][0]


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if not mask.reshape(len(mask), -1).any(axis=1).all():
        raise ValueError("every sample needs at least one legal target cell")
    z = np.where(mask, logits, -np.inf)
    z = z - z.reshape(len(z), -1).max(axis=1)[:, None, None]
    e = np.exp(z)
    tot = e.reshape(len(e), -1).sum(axis=1)[:, None, None]
    probs = e / tot
    logp = np.where(mask, z - np.log(tot), -np.inf)
    return probs, logp


def head(params: PolicyParams, X_now: np.ndarray, X_prev: np.ndarray, mask: np.ndarray,
         pos: np.ndarray) -> Forward:
    """Convolution + ego-context score + masked softmax + value over stacked
    grounding tensors. ``pos`` is the (row, col) of the acting chef."""
    Z = np.concatenate([X_now, X_prev], axis=-1)
    logits = conv3x3_forward(Z, params["conv_w"], 0.0)
    # the local conv cannot see what the chef carries from far away; score
    # every cell against the chef's own features as well
    e = Z[np.arange(len(Z)), pos[:, 0], pos[:, 1]]
    g = e @ params["ctx"]
    logits = logits + np.einsum("bhwc,bc->bhw", Z, g)
    _finite("conv", logits)
    probs, logp = masked_softmax(logits, mask)
    pooled = Z.mean(axis=(1, 2))
    value = pooled @ params["value_w"] + params["value_b"][0]
    _finite("value", value)
    return Forward(logits, probs, logp, value, dict(Z=Z, pooled=pooled, e=e, g=g, pos=pos))


def action_distribution(params: PolicyParams, X_now: np.ndarray, X_prev: np.ndarray,
                        mask: np.ndarray, pos: tuple[int, int]) -> tuple[np.ndarray, float]:
    f = head(params, X_now[None], X_prev[None], np.asarray(mask, dtype=bool)[None], np.array([pos]))
    return f.probs[0], float(f.value[0])


def forward(params: PolicyParams, batch: Batch, manual: Sequence[str]) -> Forward:
    T, acache = _attention_table(params, manual, batch.subgoal_texts)
    Xn = _place(T, params["ego"], batch.sym, batch.pos, batch.held, batch.goal)
    Xp = _place(T, params["ego"], batch.sym_prev, batch.pos_prev, batch.held_prev, batch.goal)
    f = head(params, Xn, Xp, batch.mask, batch.pos)
    f.cache.update(acache, T=T)
    return f


def _scatter_back(dX: np.ndarray, sym, pos, held, goal, dT: np.ndarray, dego: np.ndarray) -> None:
    b, y, x = np.nonzero(sym >= 0)
    np.add.at(dT, (goal[b], held[b], sym[b, y, x]), dX[b, y, x])
    ar = np.arange(len(held))
    g_ego = dX[ar, pos[:, 0], pos[:, 1]]
    np.add.at(dT, (goal, held, np.full(len(held), EGO)), g_ego)
    np.add.at(dego, held, g_ego)


def backward(params: PolicyParams, batch: Batch, fwd: Forward, dlogits: np.ndarray,
             dvalue: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of ``sum(dlogits * logits) + sum(dvalue * value)``."""
    _finite("dlogits", dlogits)
    _finite("dvalue", dvalue)
    c = fwd.cache
    Z = c["Z"]
    B, H, W, C = Z.shape
    grads = {k: np.zeros(s) for k, s in PARAM_SHAPES.items()}
    # a logit bias would cancel in the softmax, so the conv has none
    dZ, gw, _ = conv3x3_backward(Z, params["conv_w"], dlogits)
    grads["conv_w"] = gw
    S = np.einsum("bhw,bhwc->bc", dlogits, Z)
    dZ = dZ + dlogits[..., None] * c["g"][:, None, None, :]
    grads["ctx"] = c["e"].T @ S
    ar = np.arange(B)
    np.add.at(dZ, (ar, c["pos"][:, 0], c["pos"][:, 1]), S @ params["ctx"].T)
    grads["value_w"] = c["pooled"].T @ dvalue
    grads["value_b"][0] = dvalue.sum()
    dZ = dZ + (dvalue[:, None] * params["value_w"][None, :] / (H * W))[:, None, None, :]
    _finite("dZ", dZ)

    dT = np.zeros_like(c["T"])
    _scatter_back(dZ[..., :DIM], batch.sym, batch.pos, batch.held, batch.goal, dT, grads["ego"])
    _scatter_back(dZ[..., DIM:], batch.sym_prev, batch.pos_prev, batch.held_prev, batch.goal, dT, grads["ego"])

    alpha, Kg, Vg, q, Eg = c["alpha"], c["Kg"], c["Vg"], c["q"], c["Eg"]
    scale = 1.0 / np.sqrt(DIM)
    dalpha = np.einsum("ghsd,gnd->ghsn", dT, Vg)
    dVg = np.einsum("ghsn,ghsd->gnd", alpha, dT)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    dq = np.einsum("ghsn,gnd->hsd", ds, Kg) * scale
    dKg = np.einsum("ghsn,hsd->gnd", ds, q) * scale
    grads["query"] = dq.sum(axis=0)
    grads["query_held"] = dq.sum(axis=1)
    grads["key"] = np.einsum("gnd,gne->de", Eg, dKg)
    grads["value"] = np.einsum("gnd,gne->de", Eg, dVg)
    dEg = dKg @ params["key"].T + dVg @ params["value"].T
    dEmb = np.zeros((c["A"].shape[0], DIM))
    np.add.at(dEmb, c["idx"], dEg)
    grads["embed"] = c["A"].T @ dEmb
    for k, g in grads.items():
        _finite(f"grad:{k}", g)
    return grads


# --------------------------------------------------------------------------
# PPO

@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.01
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    # 5e-5 does not converge inside a 2M-tick budget at this model size
    lr: float = 1e-3
    epochs: int = 4
    minibatch: int = 256
    max_grad_norm: float = 0.5


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_value: float,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns for one trajectory."""
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        next_v = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-8:
        log.warning("advantage std %.3g below 1e-8; skipping normalization", std)
        return adv - adv.mean() if len(adv) > 1 else adv
    return (adv - adv.mean()) / std


def ppo_loss(params: PolicyParams, batch: Batch, manual: Sequence[str], cfg: PPOConfig,
             need_grads: bool = True) -> tuple[float, dict, dict | None]:
    fwd = forward(params, batch, manual)
    B = len(batch)
    ar = np.arange(B)
    H, W = fwd.logits.shape[1:]
    ay, ax = np.divmod(batch.action, W)
    logp_a = fwd.logp[ar, ay, ax]
    ratio = np.exp(logp_a - batch.logp_old)
    adv = batch.adv
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv
    surr = np.minimum(unclipped, clipped)
    plogp = np.where(batch.mask, fwd.probs * np.where(batch.mask, fwd.logp, 0.0), 0.0)
    entropy = -plogp.reshape(B, -1).sum(axis=1)
    verr = fwd.value - batch.ret
    loss = -surr.mean() + cfg.value_coef * (verr ** 2).mean() - cfg.entropy_coef * entropy.mean()
    stats = {
        "loss": float(loss), "policy": float(-surr.mean()), "value": float((verr ** 2).mean()),
        "entropy": float(entropy.mean()), "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip)),
    }
    if not need_grads:
        return float(loss), stats, None
    active = unclipped <= clipped
    dlogp_a = np.where(active, -ratio * adv, 0.0) / B
    dlogits = -fwd.probs * dlogp_a[:, None, None]
    dlogits[ar, ay, ax] += dlogp_a
    safe_logp = np.where(batch.mask, fwd.logp, 0.0)
    dlogits += cfg.entropy_coef / B * fwd.probs * (safe_logp + entropy[:, None, None])
    dlogits = np.where(batch.mask, dlogits, 0.0)
    dvalue = 2.0 * cfg.value_coef * verr / B
    return float(loss), stats, backward(params, batch, fwd, dlogits, dvalue)


class Adam:
    def __init__(self, params: PolicyParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.groups.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.groups.items()}
        self.t = 0

    def step(self, params: PolicyParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.groups[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def ppo_update(params: PolicyParams, opt: Adam, batch: Batch, manual: Sequence[str], cfg: PPOConfig,
               rng: np.random.Generator) -> dict:
    """``cfg.epochs`` passes of clipped-surrogate minibatch updates, in place."""
    batch.adv = normalize_advantages(batch.adv)
    n = len(batch)
    stats: dict = {}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = batch.take(order[start:start + cfg.minibatch])
            _, stats, grads = ppo_loss(params, mb, manual, cfg)
            stats["grad_norm"] = clip_grads(grads, cfg.max_grad_norm)
            opt.step(params, grads)
    return stats


# --------------------------------------------------------------------------
# acting

class PolicyRunner:
    """Caches the attention table for the current subgoals; one call scores
    any number of (observation, previous observation) pairs."""

    def __init__(self, params: PolicyParams, manual: Sequence[str]):
        self.params = params
        self.manual = tuple(manual)
        self._texts: tuple[str, ...] = ()
        self._T: np.ndarray | None = None

    def prepare(self, subgoal_texts: Sequence[str]) -> None:
        texts = tuple(subgoal_texts)
        if texts != self._texts or self._T is None:
            self._T, _ = _attention_table(self.params, self.manual, texts)
            self._texts = texts

    def invalidate(self) -> None:
        self._T = None

    def evaluate(self, obs: Sequence[Observation], prev: Sequence[Observation], goal: Sequence[int],
                 mask: np.ndarray) -> Forward:
        sym = np.stack([o.sym for o in obs])
        pos = np.array([o.pos for o in obs])
        held = np.array([o.held for o in obs])
        psym = np.stack([o.sym for o in prev])
        ppos = np.array([o.pos for o in prev])
        pheld = np.array([o.held for o in prev])
        g = np.asarray(goal, dtype=int)
        ego = self.params["ego"]
        Xn = _place(self._T, ego, sym, pos, held, g)
        Xp = _place(self._T, ego, psym, ppos, pheld, g)
        return head(self.params, Xn, Xp, mask, pos)


def choose(probs: np.ndarray, explore: bool, rng: np.random.Generator | None) -> int:
    flat = probs.ravel()
    if explore:
        return int(rng.choice(flat.size, p=flat))
    return int(np.argmax(flat))


def act(params: PolicyParams, state: GridState, subgoal: str, agent: int, explore: bool = False,
        rng: np.random.Generator | None = None, manual: Sequence[str] | None = None,
        prev: Observation | None = None) -> TargetAction:
    """Pick a target cell; argmax in evaluation mode, a sample when exploring."""
    if manual is None:
        from kitchenplan.text_bridge import fixture_manual
        manual = fixture_manual().sentences()
    runner = PolicyRunner(params, manual)
    runner.prepare([subgoal])
    obs = observe(state, agent)
    f = runner.evaluate([obs], [prev or obs], [0], legal_mask(state, agent)[None])
    if explore and rng is None:
        rng = np.random.default_rng()
    idx = choose(f.probs[0], explore, rng)
    return TargetAction.from_index(idx, state.layout.width)
