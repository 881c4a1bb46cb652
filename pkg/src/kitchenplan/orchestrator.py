"""Episode loop (plan, execute, check, reflect), run configuration, metrics
and the batch commands behind the CLI."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from kitchenplan import planner
from kitchenplan.env import HORIZON, GridState, Layout, load_layout, reset, state_hash
from kitchenplan.planner import (
    AssignmentParseError,
    FaultInjectingTransport,
    OracleTransport,
    PlanParseError,
    PlanRound,
)
from kitchenplan.plm import BackendError, LiveTransport, PlannerClient, ReplayStore, ReplayTransport
from kitchenplan.policy import PolicyParams, PolicyRunner, load_checkpoint
from kitchenplan.pretrain import ROUND_BUDGET, Task, run_segments
from kitchenplan.reflection import (
    ConstraintViolation,
    LoggedRound,
    Phase,
    RecoveryError,
    ReflectionTrace,
    RoundOutcome,
    blame_phase,
    blame_structural,
    heuristic_h,
    replan,
    reset_recover,
)
from kitchenplan.subgoals import KIND_ORDER, CanonicalSubgoal, NormalizationError, SubgoalKind
from kitchenplan.text_bridge import TaskManual, fixture_manual, translate_state

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINT = "builtin"


def builtin_checkpoint() -> Path:
    from kitchenplan.text_bridge import asset_path
    return asset_path("policy_forced_coordination_v1.ckpt")


# --------------------------------------------------------------------------
# configuration

def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_seeds(v: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in v.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    layout: str = "forced_coordination_v1"
    backend: str = "scripted"
    endpoint: str = "http://127.0.0.1:8000/v1/chat/completions"
    model: str = "gpt-4"
    temperature: float = 0.0
    max_tokens: int = 1024
    retries: int = 3
    replay_store: str = ""
    seeds: tuple[int, ...] = (0,)
    horizon: int = HORIZON
    round_budget: int = ROUND_BUDGET
    checkpoint: str = DEFAULT_CHECKPOINT
    out_dir: str = "runs"
    random_fraction: float = 0.0
    reflection: bool = True
    max_trials: int = 3
    fault_p: float = 0.0
    batch_size: int = 4
    dataset_states: int = 500
    pretrain_ticks: int = 2_000_000
    pretrain_lr: float = 0.0
    write_logs: bool = True

    def __post_init__(self):
        if not self.horizon >= self.round_budget >= 1:
            raise ValueError("need horizon >= round_budget >= 1")
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ValueError("random_fraction must be in [0, 1]")
        if not 0 <= self.max_trials <= 3:
            raise ValueError("max_trials must be in [0, 3]")
        if self.backend not in ("live", "replay", "scripted"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not 0.0 <= self.fault_p <= 1.0:
            raise ValueError("fault_p must be in [0, 1]")

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in pairs.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(base, key)
            if key == "seeds":
                values[key] = parse_seeds(raw)
            elif isinstance(current, bool):
                values[key] = _parse_bool(raw)
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float):
                values[key] = float(raw)
            else:
                values[key] = raw.strip()
        return replace(base, **values)

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "RunConfig":
        return cls.from_pairs(read_kv(Path(path).read_text(encoding="utf-8")) | (overrides or {}))

    def to_kv(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def read_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_client(config: RunConfig, seed: int = 0, recorder: ReplayStore | None = None) -> PlannerClient:
    if config.backend == "scripted":
        transport = OracleTransport()
    elif config.backend == "replay":
        if not config.replay_store:
            raise ValueError("the replay backend needs replay_store")
        transport = ReplayTransport(config.replay_store)
    else:
        transport = LiveTransport(config.endpoint, config.model)
    if config.fault_p > 0:
        transport = FaultInjectingTransport(transport, config.fault_p, seed)
    return PlannerClient(transport, temperature=config.temperature, max_tokens=config.max_tokens,
                         retries=config.retries, batch_size=config.batch_size, recorder=recorder)


def load_params(config: RunConfig) -> PolicyParams:
    path = builtin_checkpoint() if config.checkpoint in ("", DEFAULT_CHECKPOINT) else Path(config.checkpoint)
    return load_checkpoint(path)[0]


# --------------------------------------------------------------------------
# episode

@dataclass
class EpisodeReport:
    seed: int
    total_reward: int = 0
    deliveries: int = 0
    rounds: int = 0
    subgoal_success: dict[str, list[int]] = field(default_factory=dict)  # kind -> [successes, attempts]
    reflection_trials: int = 0
    reported_steps: int = 0
    reflection_steps: int = 0
    total_steps: int = 0
    recoveries: int = 0
    transcript_digests: list[str] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


class Executor:
    """Runs both chefs on the deterministic policy for one round."""

    def __init__(self, params: PolicyParams, manual: TaskManual, budget: int):
        self.runner = PolicyRunner(params, manual.sentences())
        self.budget = budget

    def __call__(self, state: GridState, texts: Sequence[str], kinds: Sequence[SubgoalKind],
                 max_ticks: int | None = None) -> tuple[GridState, list[int], int]:
        task = Task(state, (texts[0], texts[1]), (kinds[0], kinds[1]))
        res = run_segments(self.runner, [task], explore=False, rng=None,
                           budget=min(self.budget, max_ticks or self.budget))[0]
        return res.final, res.success, res.ticks


PLAN_ERRORS = (PlanParseError, AssignmentParseError, NormalizationError)


def _round_record(rnd: PlanRound | None) -> dict | None:
    if rnd is None:
        return None
    return {"goal": rnd.goal, "subgoals": [t for t, _ in rnd.subgoals], "assignment": list(rnd.assignment)}


def _substitute(subs: Sequence[CanonicalSubgoal], rng: np.random.Generator, f: float) -> list[CanonicalSubgoal]:
    out = []
    for sub in subs:
        draw = rng.random()
        if f > 0 and draw < f:
            out.append(CanonicalSubgoal.of(KIND_ORDER[int(rng.integers(len(KIND_ORDER)))]))
        else:
            out.append(sub)
    return out


IDLE_PAIR = (CanonicalSubgoal.of(SubgoalKind.IDLE, 0), CanonicalSubgoal.of(SubgoalKind.IDLE, 1))


class _Log:
    def __init__(self, path: Path | None):
        self.fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, kind: str, **rec) -> None:
        if self.fh:
            self.fh.write(json.dumps({"type": kind, **rec}, sort_keys=True, default=str) + "\n")

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def run_episode(config: RunConfig, params: PolicyParams, seed: int, client: PlannerClient | None = None,
                manual: TaskManual | None = None, layout: Layout | None = None,
                log_dir: str | Path | None = None, max_rounds: int | None = None) -> EpisodeReport:
    """Plan, execute and (optionally) reflect until the horizon."""
    manual = manual or fixture_manual()
    layout = layout or load_layout(config.layout)
    client = client or make_client(config, seed)
    execute = Executor(params, manual, config.round_budget)
    rng = np.random.default_rng(seed)
    report = EpisodeReport(seed)
    ep_log = _Log(Path(log_dir) / f"episode-{seed}.jsonl" if log_dir else None)
    refl_log = _Log(Path(log_dir) / f"reflection-{seed}.jsonl" if log_dir else None)
    n0 = len(client.transcripts)
    state = reset(layout, seed, config.horizon)
    committed: list[LoggedRound] = []
    max_trials = config.max_trials if config.reflection else 0
    try:
        while not state.done and (max_rounds is None or report.rounds < max_rounds):
            k = report.rounds
            start = state
            start_hash = state_hash(start)
            trace = ReflectionTrace(max_trials=max_trials)
            executed = None  # (subs, end, returns, ticks) of the latest attempt
            dirty = False  # the world holds a rolled-back attempt's end state
            rnd: PlanRound | None = None
            error: Exception | None = None
            try:
                rnd = planner.plan_round(manual, start, client, k)
            except PLAN_ERRORS as exc:
                error = exc
            while True:
                if rnd is not None:
                    subs = _substitute(rnd.assigned(), rng, config.random_fraction)
                    if dirty:
                        _, replay_ticks = reset_recover(layout, seed, config.horizon, committed,
                                                        execute, start_hash)
                        report.reflection_steps += replay_ticks
                        report.recoveries += 1
                        dirty = False
                    end, returns, ticks = execute(start, [s.sentence for s in subs], [s.kind for s in subs])
                    executed = (subs, end, returns, ticks)
                    outcome = RoundOutcome(tuple(returns), ticks, state_hash(end))
                    if heuristic_h(outcome) == "continue" or trace.exhausted:
                        break
                    report.reflection_steps += ticks
                    dirty = True
                    try:
                        phase = blame_phase(manual, rnd, start, outcome, trace, client, config.round_budget)
                    except ValueError as exc:
                        log.info("unparseable blame response (%s); blaming decomposition", exc)
                        phase = Phase.GOAL
                else:
                    if trace.exhausted:
                        break
                    phase = blame_structural(error)
                failed = rnd
                try:
                    rnd, error = replan(phase, failed, start, trace, client, manual), None
                except PLAN_ERRORS + (ConstraintViolation,) as exc:
                    rnd, error = None, exc
                refl_log.write("trial", round=k, phase=phase.value, trial=trace.trials,
                               failed=_round_record(failed), replacement=_round_record(rnd),
                               error=None if error is None else f"{type(error).__name__}: {error}",
                               start_hash=f"{start_hash:016x}",
                               failed_hash=None if failed is None or executed is None
                               else f"{state_hash(executed[1]):016x}")
            report.reflection_trials += trace.trials
            if executed is None:
                subs = list(IDLE_PAIR)
                end, returns, ticks = execute(start, [s.sentence for s in subs], [s.kind for s in subs])
            else:
                subs, end, returns, ticks = executed
                if dirty:
                    # the last failed attempt is kept rather than rolled back
                    report.reflection_steps -= ticks
            state = end
            report.reported_steps += ticks
            committed.append(LoggedRound.of(subs, ticks, state_hash(end)))
            for s, r in zip(subs, returns):
                row = report.subgoal_success.setdefault(s.kind.value, [0, 0])
                row[0] += int(r)
                row[1] += 1
            ep_log.write("round", round=k, start_hash=f"{start_hash:016x}", end_hash=f"{state_hash(end):016x}",
                         state_text=translate_state(start).text, goal=None if rnd is None else rnd.goal,
                         subgoals=[s.sentence for s in subs], kinds=[s.kind.value for s in subs],
                         returns=list(returns), ticks=ticks, trials=trace.trials,
                         phases=[p.value for p in trace.phases], timestep=state.timestep,
                         deliveries=state.deliveries)
            report.rounds += 1
    except (RecoveryError, BackendError) as exc:
        report.aborted = True
        report.abort_reason = f"{type(exc).__name__}: {exc}"
        log.error("episode %d aborted: %s", seed, report.abort_reason)
        ep_log.write("abort", reason=report.abort_reason)
    finally:
        ep_log.close()
        refl_log.close()
    report.deliveries = state.deliveries
    report.total_reward = state.episode_reward
    report.total_steps = report.reported_steps + report.reflection_steps
    report.transcript_digests = [t.prompt_digest for t in client.transcripts[n0:]]
    return report


# --------------------------------------------------------------------------
# evaluation and sweeps

METRIC_COLUMNS = ("seed", "reward", "deliveries", "rounds", "reflection_trials", "reported_steps",
                  "reflection_steps", "total_steps", "aborted", "reward_std")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def metrics_csv(reports: Sequence[EpisodeReport]) -> tuple[str, dict]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in reports:
        w.writerow([r.seed, r.total_reward, r.deliveries, r.rounds, r.reflection_trials, r.reported_steps,
                    r.reflection_steps, r.total_steps, int(r.aborted), ""])
    ok = [r for r in reports if not r.aborted]
    summary = {"n": len(ok), "aborted": len(reports) - len(ok)}
    if ok:
        for name, attr in (("reward", "total_reward"), ("deliveries", "deliveries"), ("rounds", "rounds"),
                           ("reflection_trials", "reflection_trials"), ("reported_steps", "reported_steps"),
                           ("reflection_steps", "reflection_steps"), ("total_steps", "total_steps")):
            summary[name] = float(np.mean([getattr(r, attr) for r in ok]))
        summary["reward_std"] = float(np.std([r.total_reward for r in ok]))
    else:
        summary.update({c: math.nan for c in METRIC_COLUMNS[1:8]}, reward_std=math.nan)
    w.writerow(["mean", *(_fmt(summary[c]) for c in METRIC_COLUMNS[1:8]), summary["aborted"],
                _fmt(summary["reward_std"])])
    return buf.getvalue(), summary


def evaluate(config: RunConfig, params: PolicyParams | None = None, out_dir: str | Path | None = None,
             clients: dict[int, PlannerClient] | None = None) -> tuple[list[EpisodeReport], dict]:
    """One episode per seed; writes ``metrics.csv`` and ``transcripts.jsonl``."""
    if not config.seeds:
        raise ValueError("evaluate needs at least one seed")
    params = params or load_params(config)
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    transcripts = []
    for seed in config.seeds:
        client = (clients or {}).get(seed) or make_client(config, seed)
        rep = run_episode(config, params, seed, client=client, log_dir=out if config.write_logs else None)
        reports.append(rep)
        transcripts.extend(t.store_record() for t in client.transcripts)
    text, summary = metrics_csv(reports)
    (out / "metrics.csv").write_text(text, encoding="utf-8")
    with open(out / "transcripts.jsonl", "w", encoding="utf-8") as fh:
        for rec in transcripts:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return reports, summary


def random_command_sweep(config: RunConfig, fractions: Sequence[float], params: PolicyParams | None = None,
                         out_dir: str | Path | None = None) -> list[dict]:
    if any(not 0 <= f <= 1 for f in fractions) or list(fractions) != sorted(fractions):
        raise ValueError("fractions must be sorted and within [0, 1]")
    params = params or load_params(config)
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for f in fractions:
        sub = out / f"fraction-{f:g}"
        _, summary = evaluate(replace(config, random_fraction=f), params, sub)
        rows.append({"fraction": f, "mean_reward": summary.get("reward", math.nan),
                     "std": summary.get("reward_std", math.nan)})
    with open(out / "curve.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "mean_reward", "std"])
        for r in rows:
            w.writerow([_fmt(float(r["fraction"])), _fmt(r["mean_reward"]), _fmt(r["std"])])
    return rows


def non_increasing_within(means: Sequence[float], stds: Sequence[float], allowed: int = 1) -> bool:
    """True when every rise between neighbours is a tolerated violation: at
    most ``allowed`` of them, each no larger than one standard deviation."""
    violations = 0
    for i in range(1, len(means)):
        rise = means[i] - means[i - 1]
        if rise > 0:
            violations += 1
            if rise > max(stds[i], stds[i - 1]):
                return False
    return violations <= allowed


# --------------------------------------------------------------------------
# pretraining and fixture recording

def pretrain_cmd(config: RunConfig, seed: int | None = None, out_path: str | Path | None = None,
                 pretrain_cfg=None, progress=None):
    from kitchenplan.policy import save_checkpoint
    from kitchenplan.pretrain import PretrainConfig, TrainingFailure, pretrain
    from kitchenplan.subgoals import generate_states, label_dataset

    seed = config.seeds[0] if seed is None else seed
    layout = load_layout(config.layout)
    manual = fixture_manual()
    states = generate_states(layout, seed, config.dataset_states)
    client = None if config.backend == "scripted" else make_client(config, seed)
    dataset = label_dataset(states, client=client, manual=manual)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save(out / "dataset.jsonl")
    cfg = pretrain_cfg or PretrainConfig(tick_budget=config.pretrain_ticks)
    if config.pretrain_lr > 0:
        cfg = replace(cfg, ppo=replace(cfg.ppo, lr=config.pretrain_lr))
    params, report = pretrain(dataset, manual.sentences(), seed, cfg, progress=progress)
    path = Path(out_path) if out_path else out / "policy.ckpt"
    digest = save_checkpoint(params, path, {"seed": seed, "layout": config.layout, "ticks": report.ticks,
                                            "success": report.success})
    (out / "pretrain_report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    (out / "success.csv").write_text(
        "kind,success\n" + "".join(f"{k},{v:.4f}\n" for k, v in report.success.items()))
    if not report.passed:
        raise TrainingFailure(report)
    return params, report, digest


def record_fixtures(config: RunConfig, scenarios: Sequence[str], store_path: str | Path,
                    params: PolicyParams | None = None) -> ReplayStore:
    """Run each ``seed:rounds`` scenario against the configured backend and
    keep every exchange in a digest-keyed replay store."""
    store = ReplayStore.load(store_path) if Path(store_path).exists() else ReplayStore()
    params = params or load_params(config)
    for sc in scenarios:
        seed_s, _, rounds_s = sc.partition(":")
        seed, rounds = int(seed_s), int(rounds_s or 3)
        client = make_client(config, seed, recorder=store)
        try:
            run_episode(replace(config, write_logs=False), params, seed, client=client, max_rounds=rounds)
        except BackendError as exc:
            log.error("scenario %s failed: %s", sc, exc)
        store.save(store_path)
    return store
