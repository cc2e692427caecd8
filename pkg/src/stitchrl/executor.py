"""Meta-controller execution, four-way evaluation and action-space projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs.base import Env, Signal, TransitionInterval
from .errors import ConfigError
from .rng import RngStream, Xoshiro256
from .switchq import SWITCH

MODES = ("single", "no_tp", "tp", "tp_q")
MODE_LABELS = {"single": "Single", "no_tp": "Without TP", "tp": "With TP", "tp_q": "With TP and Q"}


@dataclass
class TaskPlan:
    """Cyclic subtask order plus the intervals that govern each hand-off.

    Pairs without an interval hand off as soon as the running subtask reports
    its job done (``Env.handoff_complete``).
    """

    sequence: tuple[str, ...]
    intervals: dict = field(default_factory=dict)  # (from, to) -> TransitionInterval
    repetitions: int = 5
    mode: str = "tp_q"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown evaluation mode {self.mode!r}", field="mode")
        if not self.sequence:
            raise ConfigError("task plan needs at least one subtask")
        self.sequence = tuple(self.sequence)

    def with_mode(self, mode: str) -> "TaskPlan":
        return TaskPlan(self.sequence, dict(self.intervals), self.repetitions, mode)

    def next_index(self, i: int) -> int:
        return (i + 1) % len(self.sequence)


@dataclass
class PolicyBank:
    subtasks: dict = field(default_factory=dict)  # subtask id -> policy
    transitions: dict = field(default_factory=dict)  # interval name -> policy
    switchers: dict = field(default_factory=dict)  # interval name -> SwitchQNet
    single: object = None

    def check(self, plan: TaskPlan) -> None:
        if plan.mode == "single":
            if self.single is None:
                raise ConfigError("mode single needs a monolithic policy", field="mode")
            return
        for s in plan.sequence:
            if s not in self.subtasks:
                raise ConfigError(f"missing subtask policy {s!r}")
        for iv in plan.intervals.values():
            if plan.mode in ("tp", "tp_q") and iv.name not in self.transitions:
                raise ConfigError(f"mode {plan.mode} needs a transition policy for {iv.name}")
            if plan.mode == "tp_q" and iv.name not in self.switchers:
                raise ConfigError(f"mode tp_q needs a switcher for {iv.name}")


@dataclass
class EpisodeResult:
    successes: int
    length: int
    final_signal: Signal
    trace: list  # (step, controller_id, x, y, signal)


def run_episode(env: Env, plan: TaskPlan, bank: PolicyBank, reset_seed: int, rng: Xoshiro256,
                record_trace: bool = True, deterministic: bool = False) -> EpisodeResult:
    state = env.reset(reset_seed)
    seq = plan.sequence
    idx = env.initial_subtask(state, seq)
    active_iv: TransitionInterval | None = None  # set while a transition policy is in control
    successes = 0
    trace = []
    step = 0
    while True:
        obs = env.observe(state)
        if plan.mode == "single":
            controller, policy = "single", bank.single
        else:
            cur, nxt = seq[idx], seq[plan.next_index(idx)]
            if active_iv is None:
                iv = plan.intervals.get((cur, nxt))
                if iv is not None and env.in_interval(state, iv):
                    if plan.mode == "no_tp":
                        idx = plan.next_index(idx)
                    else:
                        active_iv = iv
            if active_iv is not None:
                leave = not env.in_interval(state, active_iv)
                if not leave and plan.mode == "tp_q":
                    leave = bank.switchers[active_iv.name].greedy(obs) == SWITCH
                if leave:
                    active_iv = None
                    idx = plan.next_index(idx)
            if active_iv is not None:
                controller, policy = f"tp:{active_iv.name}", bank.transitions[active_iv.name]
            else:
                controller = seq[idx]
                policy = bank.subtasks[controller]
        res = env.step(state, policy.act(obs, rng, deterministic))
        step += 1
        successes += res.subgoal_count_delta
        if record_trace:
            x, y = env.trace_xy(res.next_state)
            trace.append((step, controller, x, y, int(res.signal)))
        if res.done:
            return EpisodeResult(successes, step, res.signal, trace)
        if plan.mode != "single" and active_iv is None:
            cur, nxt = seq[idx], seq[plan.next_index(idx)]
            if (cur, nxt) not in plan.intervals and env.handoff_complete(cur, res):
                idx = plan.next_index(idx)
        state = res.next_state


@dataclass
class ModeResult:
    mode: str
    counts: list
    traces: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return math.fsum(self.counts) / len(self.counts) if self.counts else float("nan")

    @property
    def std(self) -> float:
        if not self.counts:
            return float("nan")
        m = self.mean
        return math.sqrt(math.fsum((c - m) ** 2 for c in self.counts) / len(self.counts))


def evaluate(env: Env, plan: TaskPlan, bank: PolicyBank, n_episodes: int, seed: int,
             record_trace: bool = False, deterministic: bool = False) -> ModeResult:
    """Success counts over ``n_episodes``.

    Episode ``i`` uses the same layout seed and action stream in every mode,
    so modes are compared on common random numbers.
    """
    bank.check(plan)
    stream = RngStream(seed)
    counts, traces = [], []
    for i in range(n_episodes):
        res = run_episode(env, plan, bank, stream.seed_for("eval", i), stream.derive("eval-actions", i),
                          record_trace, deterministic)
        counts.append(res.successes)
        if record_trace:
            traces.append(res.trace)
    return ModeResult(plan.mode, counts, traces)


def trace_csv(trace: list) -> str:
    lines = ["step,controller_id,x,y,signal"]
    lines.extend(f"{s},{c},{x!r},{y!r},{sig}" for s, c, x, y, sig in trace)
    return "\n".join(lines) + "\n"


def report_csv(results: list[ModeResult]) -> str:
    lines = ["mode,label,episodes,mean,std"]
    for r in _ordered(results):
        lines.append(f"{r.mode},{MODE_LABELS[r.mode]},{len(r.counts)},{r.mean!r},{r.std!r}")
    return "\n".join(lines) + "\n"


def report_markdown(results: list[ModeResult], title: str = "Success count") -> str:
    lines = [f"| Method | {title} |", "|---|---|"]
    for r in _ordered(results):
        lines.append(f"| {MODE_LABELS[r.mode]} | {r.mean:.2f} ± {r.std:.2f} |")
    return "\n".join(lines) + "\n"


def _ordered(results):
    return sorted(results, key=lambda r: MODES.index(r.mode))


def counts_csv(result: ModeResult) -> str:
    lines = ["mode,episode,count"]
    lines.extend(f"{result.mode},{i},{c}" for i, c in enumerate(result.counts))
    return "\n".join(lines) + "\n"


def parse_counts_csv(text: str) -> ModeResult:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    if not rows:
        raise ConfigError("empty counts file")
    modes = {r[0] for r in rows}
    if len(modes) != 1 or next(iter(modes)) not in MODES:
        raise ConfigError(f"counts file must hold exactly one known mode, found {sorted(modes)}")
    return ModeResult(rows[0][0], [int(r[2]) for r in rows])


# -- projection -----------------------------------------------------------------


@dataclass
class Projection:
    components: np.ndarray  # (k, d), rows are unit axes
    explained_variance_ratio: np.ndarray
    center: np.ndarray
    projected: dict  # label -> (n, k)
    degenerate: bool = False

    def cloud_means(self) -> dict:
        return {k: v.mean(axis=0) for k, v in self.projected.items() if len(v)}


def pca(data: np.ndarray, k: int = 2):
    """Top-``k`` principal axes of ``data`` (rows are samples).

    Returns ``(components, explained_variance_ratio, center, degenerate)``;
    axes are sign-normalized so their largest-magnitude entry is positive.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ConfigError("PCA needs a 2-D array with at least two rows")
    center = x.mean(axis=0)
    cov = np.cov(x - center, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    k = min(k, x.shape[1])
    comps = vecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = float(vals.sum())
    degenerate = total <= 1e-12 or (k > 1 and vals[k - 1] <= 1e-12 * max(total, 1e-300))
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    return comps, ratio, center, bool(degenerate)


def project_actions(samples: dict, k: int = 2) -> Projection:
    """Project labeled action (or state-action) clouds onto their pooled principal axes."""
    labels = [lab for lab, v in samples.items() if len(v)]
    if not labels:
        raise ConfigError("nothing to project")
    pooled = np.concatenate([np.atleast_2d(np.asarray(samples[lab], dtype=np.float64)) for lab in labels])
    comps, ratio, center, degenerate = pca(pooled, k)
    projected = {lab: (np.atleast_2d(np.asarray(samples[lab], dtype=np.float64)) - center) @ comps.T
                 for lab in labels}
    return Projection(comps, ratio, center, projected, degenerate)


def collect_action_clouds(env: Env, plan: TaskPlan, bank: PolicyBank, n_episodes: int, seed: int) -> dict:
    """Actions taken by each controller during ``tp``-mode rollouts, keyed by controller id."""
    clouds: dict = {}
    stream = RngStream(seed)
    p = plan.with_mode("tp")
    bank.check(p)
    for i in range(n_episodes):
        rng = stream.derive("projection", i)
        state = env.reset(stream.seed_for("projection-layout", i))
        _collect_one(env, p, bank, state, rng, clouds)
    return {k: np.asarray(v) for k, v in clouds.items()}


def _collect_one(env, plan, bank, state, rng, clouds):
    # mirrors run_episode's tp-mode control flow while recording actions
    seq = plan.sequence
    idx = env.initial_subtask(state, seq)
    active = None
    while True:
        cur, nxt = seq[idx], seq[plan.next_index(idx)]
        if active is None:
            iv = plan.intervals.get((cur, nxt))
            if iv is not None and env.in_interval(state, iv):
                active = iv
        if active is not None and not env.in_interval(state, active):
            active = None
            idx = plan.next_index(idx)
        if active is not None:
            key, policy = f"tp:{active.name}", bank.transitions[active.name]
        else:
            key, policy = seq[idx], bank.subtasks[seq[idx]]
        a = policy.act(env.observe(state), rng)
        clouds.setdefault(key, []).append(np.atleast_1d(np.asarray(a, dtype=np.float64)))
        res = env.step(state, a)
        if res.done:
            return
        if active is None and (seq[idx], seq[plan.next_index(idx)]) not in plan.intervals \
                and env.handoff_complete(seq[idx], res):
            idx = plan.next_index(idx)
        state = res.next_state
