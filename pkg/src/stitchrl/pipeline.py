"""Pipeline stages over a run directory.

Each stage reads the artifacts of earlier stages, writes its own, and is
deterministic given the config and master seed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import executor
from .airl import (AirlConfig, ExpertBuffer, StartStateSet, collect_expert, collect_start_states,
                   train_transition_policy)
from .envs import HurdleShaping, PointHurdle, PointPatrol, hurdle_interval, patrol_intervals
from .envs.base import Env
from .errors import ArtifactExistsError, ConfigError, DependencyError, TrainingFailure
from .executor import MODES, PolicyBank, TaskPlan
from .nn import dumps_net, dumps_policy, loads_net, loads_policy
from .ppo import PpoConfig, SubtaskConfig, train_subtask
from .rng import RngStream
from .store import (ExperimentConfig, artifact_exists, dumps_config, dumps_transitions, load_artifact,
                    loads_transitions, save_artifact)
from .switchq import RewardSpec, SwitchConfig, SwitchQNet, train_switcher

log = logging.getLogger("stitchrl")


@dataclass
class Task:
    env: Env
    plan: TaskPlan
    subtasks: tuple[str, ...]


def build_task(cfg: ExperimentConfig) -> Task:
    st = cfg.subtask
    if cfg.experiment.env == "point_hurdle":
        env = PointHurdle(shaping=HurdleShaping(st.progress_coef, st.pass_bonus, st.collision_penalty))
        env.subtask_shaping = {
            "run": HurdleShaping(st.progress_coef, 0.0, 0.0, st.run_hop_penalty),
            "jump": HurdleShaping(st.progress_coef, st.pass_bonus, st.collision_penalty),
        }
        iv = hurdle_interval()
        plan = TaskPlan(("run", "jump"), {("run", "jump"): iv}, repetitions=5)
        return Task(env, plan, ("run", "jump"))
    env = PointPatrol(brake_reward=st.brake_reward)
    right, left = patrol_intervals(env.window)
    plan = TaskPlan(("moveright", "brake", "moveleft", "brake"),
                    {("moveright", "brake"): right, ("moveleft", "brake"): left}, repetitions=5)
    return Task(env, plan, ("moveright", "moveleft", "brake"))


def ppo_config(cfg: ExperimentConfig, **changes) -> PpoConfig:
    p = cfg.ppo
    kw = dict(gamma=p.gamma, gae_lambda=p.gae_lambda, clip_epsilon=p.clip_epsilon, epochs=p.epochs,
              minibatch_size=p.minibatch_size, learning_rate=p.learning_rate, entropy_coef=p.entropy_coef,
              value_coef=p.value_coef, max_grad_norm=p.max_grad_norm, rollout_steps=p.rollout_steps)
    kw.update(changes)
    return PpoConfig(**kw)


def _meta(cfg: ExperimentConfig, seed: int, **extra) -> dict:
    meta = {"config_hash": cfg.hash(), "seed": seed}
    meta.update(extra)
    return meta


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def snapshot_config(cfg: ExperimentConfig, root) -> None:
    _write(Path(root) / "config.toml", dumps_config(cfg))


# -- loading ----------------------------------------------------------------------


def load_policy(root, kind: str, name: str):
    files, meta = load_artifact(root, kind, name)
    return loads_policy(files["model.bin"], meta.get("policy_kind", "gaussian"))


def load_switcher(root, name: str) -> SwitchQNet:
    files, _ = load_artifact(root, "switcher", name)
    net, _, _ = loads_net(files["model.bin"])
    return SwitchQNet(net, net.copy())


def load_boundary(root, task: Task, name: str) -> tuple[StartStateSet, ExpertBuffer]:
    files, meta = load_artifact(root, "boundary", name)
    states = [task.env.decode_state(line) for line in files["starts.txt"].decode().splitlines() if line]
    obs, acts, nobs, sig = loads_transitions(files["expert.bin"])
    return StartStateSet(states, meta.get("from", "")), ExpertBuffer(obs, acts, nobs, sig, meta.get("to", ""))


def _require(root, kind: str, name: str, stage: str) -> None:
    if not artifact_exists(root, kind, name):
        raise DependencyError(f"{stage} needs artifact {kind}/{name}; run the earlier stage first")


# -- stages ---------------------------------------------------------------------------


def stage_train_subtask(cfg: ExperimentConfig, root, subtask: str, seed: int, force: bool = False):
    task = build_task(cfg)
    if subtask not in (*task.subtasks, "single"):
        raise ConfigError(f"unknown subtask {subtask!r} for {cfg.experiment.env}", field="subtask")
    st = cfg.subtask
    if subtask == "single":
        sub_cfg = SubtaskConfig(budget=st.single_budget, target_success=None, hidden=st.hidden)
    else:
        target = st.jump_target_success if subtask == "jump" else st.target_success
        sub_cfg = SubtaskConfig(budget=st.budget, target_success=target, eval_episodes=st.eval_episodes,
                                hidden=st.hidden, deterministic_eval=cfg.eval.deterministic,
                                min_steps=st.min_steps)
    stream = RngStream(seed).child("subtask", _subtask_index(subtask))
    log.info("training subtask %s", subtask)
    try:
        policy, curve = train_subtask(subtask, task.env, ppo_config(cfg), sub_cfg, stream)
    except TrainingFailure as exc:
        _write(Path(root) / "logs" / f"subtask-{subtask}.failed.csv", exc.log.to_csv())
        raise
    _write(Path(root) / "logs" / f"subtask-{subtask}.csv", curve.to_csv())
    final = curve.evals[-1][1] if curve.evals else float("nan")
    save_artifact(root, "subtask", subtask, {"model.bin": dumps_policy(policy)},
                  _meta(cfg, seed, policy_kind="gaussian", subtask=subtask, steps=curve.rows[-1][0],
                        eval_success=repr(final)), force)
    return policy, curve


def _subtask_index(name: str) -> int:
    order = ("run", "jump", "moveright", "moveleft", "brake", "single")
    return order.index(name)


def stage_collect_boundary(cfg: ExperimentConfig, root, seed: int, force: bool = False):
    task = build_task(cfg)
    out = {}
    for k, ((a, b), iv) in enumerate(sorted(task.plan.intervals.items())):
        _require(root, "subtask", a, "collect-boundary")
        _require(root, "subtask", b, "collect-boundary")
        pa, pb = load_policy(root, "subtask", a), load_policy(root, "subtask", b)
        stream = RngStream(seed).child("boundary", k)
        starts = collect_start_states(pa, task.env, iv, cfg.airl.n_starts, stream.derive("starts"))
        expert = collect_expert(pb, task.env, iv, cfg.airl.n_expert, stream.derive("expert"))
        text = "".join(task.env.encode_state(s) + "\n" for s in starts.states)
        save_artifact(root, "boundary", iv.name,
                      {"starts.txt": text.encode(),
                       "expert.bin": dumps_transitions(expert.obs, expert.actions, expert.next_obs, expert.signals)},
                      _meta(cfg, seed, **{"from": a, "to": b, "interval": iv.name,
                                          "n_starts": len(starts), "n_expert": len(expert)}), force)
        out[iv.name] = (starts, expert)
    return out


def stage_train_transition(cfg: ExperimentConfig, root, seed: int, force: bool = False):
    task = build_task(cfg)
    a = cfg.airl
    airl_cfg = AirlConfig(iterations=a.iterations, steps_per_iter=a.steps_per_iter, disc_lr=a.disc_lr,
                          disc_hidden=a.disc_hidden, disc_minibatch=a.disc_minibatch, disc_steps=a.disc_steps,
                          reward_clamp=a.reward_clamp, rollout_cap=a.rollout_cap,
                          policy_hidden=cfg.subtask.hidden, lr_anneal=a.lr_anneal)
    ppo = ppo_config(cfg, learning_rate=a.generator_lr, epochs=a.generator_epochs)
    out = {}
    for k, ((fa, fb), iv) in enumerate(sorted(task.plan.intervals.items())):
        _require(root, "boundary", iv.name, "train-transition")
        starts, expert = load_boundary(root, task, iv.name)
        stream = RngStream(seed).child("transition", k)
        log.info("training transition policy %s", iv.name)
        gen, _, airl_log = train_transition_policy(starts, expert, task.env, iv, ppo, airl_cfg, stream)
        _write(Path(root) / "logs" / f"transition-{iv.name}.csv", airl_log.to_csv())
        save_artifact(root, "transition", iv.name, {"model.bin": dumps_policy(gen)},
                      _meta(cfg, seed, policy_kind="gaussian", **{"from": fa, "to": fb, "interval": iv.name}),
                      force)
        out[iv.name] = gen
    return out


def stage_train_switcher(cfg: ExperimentConfig, root, seed: int, force: bool = False):
    task = build_task(cfg)
    s = cfg.switchq
    sw_cfg = SwitchConfig(budget=s.budget, learning_rate=s.learning_rate, minibatch_size=s.minibatch_size,
                          buffer_size=s.buffer_size, sync_period=s.sync_period, hidden=s.hidden,
                          gamma=cfg.ppo.gamma, epsilon_start=s.epsilon_start, epsilon_end=s.epsilon_end,
                          epsilon_fraction=s.epsilon_fraction, updates_per_episode=s.updates_per_episode,
                          handoff_cap=s.handoff_cap)
    rewards = RewardSpec(s.r_s, s.r_f)
    out = {}
    for k, ((fa, fb), iv) in enumerate(sorted(task.plan.intervals.items())):
        _require(root, "transition", iv.name, "train-switcher")
        _require(root, "boundary", iv.name, "train-switcher")
        _require(root, "subtask", fb, "train-switcher")
        starts, _ = load_boundary(root, task, iv.name)
        tp = load_policy(root, "transition", iv.name)
        pb = load_policy(root, "subtask", fb)
        stream = RngStream(seed).child("switcher", k)
        log.info("training switcher %s", iv.name)
        q, sw_log = train_switcher(starts, tp, pb, task.env, iv, rewards, sw_cfg, stream)
        _write(Path(root) / "logs" / f"switcher-{iv.name}.csv", sw_log.to_csv())
        save_artifact(root, "switcher", iv.name, {"model.bin": dumps_net(q.q_net)},
                      _meta(cfg, seed, **{"from": fa, "to": fb, "interval": iv.name,
                                          "reward_spec": f"r_s={rewards.r_s!r},r_f={rewards.r_f!r}"}), force)
        out[iv.name] = q
    return out


def load_bank(root, task: Task, mode: str) -> PolicyBank:
    bank = PolicyBank()
    if mode == "single":
        _require(root, "subtask", "single", f"evaluate --mode {mode}")
        bank.single = load_policy(root, "subtask", "single")
        return bank
    for s in task.subtasks:
        _require(root, "subtask", s, f"evaluate --mode {mode}")
        bank.subtasks[s] = load_policy(root, "subtask", s)
    for iv in task.plan.intervals.values():
        if mode in ("tp", "tp_q"):
            _require(root, "transition", iv.name, f"evaluate --mode {mode}")
            bank.transitions[iv.name] = load_policy(root, "transition", iv.name)
        if mode == "tp_q":
            _require(root, "switcher", iv.name, f"evaluate --mode {mode}")
            bank.switchers[iv.name] = load_switcher(root, iv.name)
    return bank


def _eval_chunk(args):
    env, plan, bank, seed, start, stop, deterministic, traces = args
    stream = RngStream(seed)
    out = []
    for i in range(start, stop):
        res = executor.run_episode(env, plan, bank, stream.seed_for("eval", i), stream.derive("eval-actions", i),
                                   traces, deterministic)
        out.append((res.successes, res.trace))
    return out


def evaluate_mode(cfg: ExperimentConfig, bank: PolicyBank, mode: str, seed: int, workers: int = 1,
                  record_trace: bool = False) -> executor.ModeResult:
    task = build_task(cfg)
    plan = task.plan.with_mode(mode)
    bank.check(plan)
    n = cfg.eval.episodes
    workers = max(1, min(workers, n))
    bounds = [(n * w // workers, n * (w + 1) // workers) for w in range(workers)]
    jobs = [(task.env, plan, bank, seed, a, b, cfg.eval.deterministic, record_trace) for a, b in bounds]
    if workers == 1:
        chunks = [_eval_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_eval_chunk, jobs))
    rows = [r for chunk in chunks for r in chunk]
    return executor.ModeResult(mode, [c for c, _ in rows], [t for _, t in rows] if record_trace else [])


def stage_evaluate(cfg: ExperimentConfig, root, mode: str, seed: int, workers: int = 1, force: bool = False):
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}", field="mode")
    task = build_task(cfg)
    bank = load_bank(root, task, mode)
    out = Path(root) / "eval" / f"{mode}.csv"
    if out.exists() and not force:
        raise ArtifactExistsError(f"{out} already exists (use --force)")
    result = evaluate_mode(cfg, bank, mode, seed, workers, record_trace=cfg.eval.traces)
    _write(out, executor.counts_csv(result))
    for i, trace in enumerate(result.traces):
        _write(Path(root) / "traces" / mode / f"episode-{i:04d}.csv", executor.trace_csv(trace))
    return result


def stage_project(cfg: ExperimentConfig, root, seed: int, force: bool = False):
    task = build_task(cfg)
    out = Path(root) / "projection.csv"
    if out.exists() and not force:
        raise ArtifactExistsError(f"{out} already exists (use --force)")
    bank = load_bank(root, task, "tp")
    clouds = executor.collect_action_clouds(task.env, task.plan, bank, cfg.eval.projection_episodes, seed)
    proj = executor.project_actions(clouds, k=2)
    lines = ["label,pc1,pc2"]
    for label, pts in proj.projected.items():
        for p in pts:
            pc2 = float(p[1]) if len(p) > 1 else 0.0
            lines.append(f"{label},{float(p[0])!r},{pc2!r}")
    _write(out, "\n".join(lines) + "\n")
    _write(Path(root) / "projection-summary.txt", projection_summary(proj, task))
    return proj


def projection_summary(proj: executor.Projection, task: Task) -> str:
    means = proj.cloud_means()
    lines = [f"explained_variance_ratio = {' '.join(repr(float(r)) for r in proj.explained_variance_ratio)}",
             f"degenerate = {str(proj.degenerate).lower()}"]
    for label in sorted(means):
        lines.append(f"mean.{label} = {' '.join(repr(float(v)) for v in means[label])}")
    for (a, b), iv in sorted(task.plan.intervals.items()):
        key = f"tp:{iv.name}"
        if key in means and a in means and b in means:
            lo, hi = sorted((means[a][0], means[b][0]))
            lines.append(f"between.{iv.name} = {str(bool(lo <= means[key][0] <= hi)).lower()}")
    return "\n".join(lines) + "\n"


def stage_report(root) -> tuple[str, str]:
    """Merge ``eval/*.csv`` into ``report.md`` and ``report.csv``."""
    eval_dir = Path(root) / "eval"
    files = sorted(eval_dir.glob("*.csv")) if eval_dir.is_dir() else []
    if not files:
        raise DependencyError(f"no evaluation results under {eval_dir}; missing: "
                              + ", ".join(f"eval/{m}.csv" for m in MODES))
    results = [executor.parse_counts_csv(f.read_text(encoding="utf-8")) for f in files]
    md = executor.report_markdown(results)
    summary = Path(root) / "projection-summary.txt"
    if summary.exists():
        md += "\nProjection (PC1/PC2 of actions):\n\n" + "".join(
            f"    {line}\n" for line in summary.read_text(encoding="utf-8").splitlines())
    csv = executor.report_csv(results)
    _write(Path(root) / "report.md", md)
    _write(Path(root) / "report.csv", csv)
    return md, csv


def run_pipeline(cfg: ExperimentConfig, root, seed: int, modes=MODES, workers: int = 1,
                 force: bool = False) -> dict:
    """Every stage in order; returns ``{mode: ModeResult}``."""
    root = Path(root)
    snapshot_config(cfg, root)
    task = build_task(cfg)
    for s in task.subtasks:
        stage_train_subtask(cfg, root, s, seed, force)
    if "single" in modes:
        stage_train_subtask(cfg, root, "single", seed, force)
    stage_collect_boundary(cfg, root, seed, force)
    stage_train_transition(cfg, root, seed, force)
    stage_train_switcher(cfg, root, seed, force)
    results = {m: stage_evaluate(cfg, root, m, seed, workers, force) for m in modes}
    stage_project(cfg, root, seed, force)
    stage_report(root)
    return results


__all__ = [
    "Task", "build_task", "stage_train_subtask", "stage_collect_boundary", "stage_train_transition",
    "stage_train_switcher", "stage_evaluate", "stage_project", "stage_report", "run_pipeline",
    "evaluate_mode", "load_bank", "load_policy", "load_switcher", "load_boundary",
]
