"""Experiment configuration and on-disk artifacts."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .rng import RngStream, derive_stream  # noqa: F401  (re-exported)
from .errors import ArtifactExistsError, ConfigError, CorruptArtifactError, DependencyError

FORMAT_VERSION = 1
ARTIFACT_KINDS = ("subtask", "transition", "switcher", "boundary")


# -- configuration ----------------------------------------------------------------


@dataclass
class ExperimentSection:
    env: str = "point_hurdle"
    seed: int = 0
    out: str = "runs/default"

    def validate(self):
        if self.env not in ("point_hurdle", "point_patrol"):
            raise ConfigError(f"unknown env {self.env!r}", field="env")
        _check(0 <= self.seed < 2**64, "seed", "must be an unsigned 64-bit integer")


@dataclass
class PpoSection:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    learning_rate: float = 1e-3
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    rollout_steps: int = 2048

    def validate(self):
        _check(0 < self.gamma <= 1, "gamma", "must lie in (0, 1]")
        _check(0 <= self.gae_lambda <= 1, "gae_lambda", "must lie in [0, 1]")
        _check(0 < self.clip_epsilon < 1, "clip_epsilon", "must lie in (0, 1)")
        _check(self.epochs >= 1, "epochs", "must be >= 1")
        _check(self.minibatch_size >= 1, "minibatch_size", "must be >= 1")
        _check(0 < self.learning_rate < 1, "learning_rate", "must lie in (0, 1)")
        _check(self.entropy_coef >= 0, "entropy_coef", "must be >= 0")
        _check(self.value_coef > 0, "value_coef", "must be > 0")
        _check(self.max_grad_norm >= 0, "max_grad_norm", "must be >= 0")
        _check(self.rollout_steps >= 1, "rollout_steps", "must be >= 1")


@dataclass
class SubtaskSection:
    budget: int = 500_000
    target_success: float = 0.95
    jump_target_success: float = 0.90
    eval_episodes: int = 100
    hidden: int = 32
    min_steps: int = 0
    single_budget: int = 500_000
    progress_coef: float = 1.0
    pass_bonus: float = 10.0
    collision_penalty: float = -10.0
    run_hop_penalty: float = 0.0
    brake_reward: float = 1.0

    def validate(self):
        _check(self.budget >= 1, "budget", "must be >= 1")
        _check(0 < self.target_success <= 1, "target_success", "must lie in (0, 1]")
        _check(0 < self.jump_target_success <= 1, "jump_target_success", "must lie in (0, 1]")
        _check(self.eval_episodes >= 1, "eval_episodes", "must be >= 1")
        _check(self.hidden >= 1, "hidden", "must be >= 1")
        _check(self.min_steps >= 0, "min_steps", "must be >= 0")
        _check(self.single_budget >= 1, "single_budget", "must be >= 1")
        _check(self.collision_penalty <= 0, "collision_penalty", "must be <= 0")
        _check(self.run_hop_penalty >= 0, "run_hop_penalty", "must be >= 0")


@dataclass
class AirlSection:
    iterations: int = 100
    steps_per_iter: int = 2048
    n_starts: int = 200
    n_expert: int = 5000
    disc_lr: float = 3e-4
    disc_hidden: int = 100
    disc_minibatch: int = 64
    disc_steps: int = 32
    reward_clamp: float = 20.0
    rollout_cap: int = 100
    generator_lr: float = 1e-4
    generator_epochs: int = 3
    lr_anneal: bool = True

    def validate(self):
        _check(self.iterations >= 0, "iterations", "must be >= 0")
        _check(self.steps_per_iter >= 1, "steps_per_iter", "must be >= 1")
        _check(self.n_starts >= 1, "n_starts", "must be >= 1")
        _check(self.n_expert >= 1, "n_expert", "must be >= 1")
        _check(0 < self.disc_lr < 1, "disc_lr", "must lie in (0, 1)")
        _check(self.disc_hidden >= 1, "disc_hidden", "must be >= 1")
        _check(self.disc_minibatch >= 1, "disc_minibatch", "must be >= 1")
        _check(self.disc_steps >= 1, "disc_steps", "must be >= 1")
        _check(self.reward_clamp > 0, "reward_clamp", "must be > 0")
        _check(self.rollout_cap >= 1, "rollout_cap", "must be >= 1")
        _check(0 < self.generator_lr < 1, "generator_lr", "must lie in (0, 1)")
        _check(self.generator_epochs >= 1, "generator_epochs", "must be >= 1")


@dataclass
class SwitchqSection:
    budget: int = 100_000
    learning_rate: float = 1e-4
    minibatch_size: int = 64
    buffer_size: int = 100_000
    sync_period: int = 500
    hidden: int = 128
    r_s: float = 1.0
    r_f: float = -1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.5
    updates_per_episode: int = 1
    handoff_cap: int = 300

    def validate(self):
        _check(self.budget >= 1, "budget", "must be >= 1")
        _check(0 < self.learning_rate < 1, "learning_rate", "must lie in (0, 1)")
        _check(self.minibatch_size >= 1, "minibatch_size", "must be >= 1")
        _check(self.buffer_size >= 1, "buffer_size", "must be >= 1")
        _check(self.sync_period >= 1, "sync_period", "must be >= 1")
        _check(self.hidden >= 1, "hidden", "must be >= 1")
        _check(self.r_s > 0, "r_s", "must be > 0")
        _check(self.r_f < 0, "r_f", "must be < 0")
        _check(0 <= self.epsilon_end <= self.epsilon_start <= 1, "epsilon_start",
               "needs 0 <= epsilon_end <= epsilon_start <= 1")
        _check(0 < self.epsilon_fraction <= 1, "epsilon_fraction", "must lie in (0, 1]")
        _check(self.updates_per_episode >= 1, "updates_per_episode", "must be >= 1")
        _check(self.handoff_cap >= 1, "handoff_cap", "must be >= 1")


@dataclass
class EvalSection:
    episodes: int = 50
    deterministic: bool = False
    traces: bool = True
    projection_episodes: int = 20

    def validate(self):
        _check(self.episodes >= 1, "episodes", "must be >= 1")
        _check(self.projection_episodes >= 1, "projection_episodes", "must be >= 1")


SECTIONS = {
    "experiment": ExperimentSection,
    "ppo": PpoSection,
    "subtask": SubtaskSection,
    "airl": AirlSection,
    "switchq": SwitchqSection,
    "eval": EvalSection,
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    ppo: PpoSection = field(default_factory=PpoSection)
    subtask: SubtaskSection = field(default_factory=SubtaskSection)
    airl: AirlSection = field(default_factory=AirlSection)
    switchq: SwitchqSection = field(default_factory=SwitchqSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "ExperimentConfig":
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def hash(self) -> str:
        return config_hash(self)


def _check(ok: bool, name: str, msg: str) -> None:
    if not ok:
        raise ConfigError(f"{name} {msg}", field=name)


def _coerce(section: str, f: dataclasses.Field, value):
    name = f"{section}.{f.name}"
    want = f.type if isinstance(f.type, type) else {"int": int, "float": float, "bool": bool, "str": str}[f.type]
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean", field=f.name)
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer", field=f.name)
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number", field=f.name)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string", field=f.name)
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]", field=section)
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table", field=section)
        target = getattr(cfg, section)
        known = {f.name: f for f in dataclasses.fields(target)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}", field=key)
            setattr(target, key, _coerce(section, known[key], value))
    return cfg.validate()


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist", field="config")
    return loads_config(p.read_text(encoding="utf-8"))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    return json.dumps(v)


def dumps_config(cfg: ExperimentConfig) -> str:
    out = []
    for section, values in cfg.to_dict().items():
        out.append(f"[{section}]")
        out.extend(f"{k} = {_toml_value(v)}" for k, v in values.items())
        out.append("")
    return "\n".join(out)


def save_config(cfg: ExperimentConfig, path) -> None:
    _atomic_write(Path(path), dumps_config(cfg).encode("utf-8"))


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form; the output directory does not take part."""
    data = cfg.to_dict()
    data["experiment"].pop("out")
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` overrides; values use TOML literal syntax, bare words become strings."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value", field="override")
        lhs, rhs = item.split("=", 1)
        parts = lhs.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {lhs!r} must be section.key", field="override")
        section, key = parts
        if section not in data:
            raise ConfigError(f"unknown config section [{section}]", field=section)
        if key not in data[section]:
            raise ConfigError(f"unknown key {section}.{key}", field=key)
        try:
            value = tomllib.loads(f"v = {rhs.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = rhs.strip()
        data[section][key] = value
    return config_from_dict(data)


# -- artifacts ----------------------------------------------------------------------


def git_blob_sha1(data: bytes) -> str:
    """Content hash in git's blob format, so ``git hash-object`` agrees."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def artifact_dir(root, kind: str, name: str) -> Path:
    if kind not in ARTIFACT_KINDS:
        raise ConfigError(f"unknown artifact kind {kind!r}")
    return Path(root) / "artifacts" / kind / name


def _manifest_text(meta: dict) -> str:
    return "".join(f"{k} = {meta[k]}\n" for k in sorted(meta))


def read_manifest(path) -> dict:
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if " = " not in line:
            raise CorruptArtifactError(f"malformed manifest line {line!r} in {path}")
        k, v = line.split(" = ", 1)
        meta[k] = v
    return meta


def save_artifact(root, kind: str, name: str, files: dict, meta: dict, force: bool = False) -> Path:
    """Write ``files`` (name -> bytes) plus ``manifest.txt`` under ``artifacts/{kind}/{name}``.

    The manifest records a git-blob hash per file. Refuses to overwrite unless ``force``.
    """
    d = artifact_dir(root, kind, name)
    manifest = d / "manifest.txt"
    if manifest.exists() and not force:
        raise ArtifactExistsError(f"artifact {kind}/{name} already exists in {root} (use --force)")
    full = {"format_version": FORMAT_VERSION, "kind": kind, "name": name}
    full.update({k: v for k, v in meta.items()})
    for fname, data in sorted(files.items()):
        _atomic_write(d / fname, data)
        full[f"hash.{fname}"] = git_blob_sha1(data)
    _atomic_write(manifest, _manifest_text(full).encode("utf-8"))
    return d


def load_artifact(root, kind: str, name: str) -> tuple[dict, dict]:
    """Returns ``(files, manifest)`` after checking version and content hashes."""
    d = artifact_dir(root, kind, name)
    manifest = d / "manifest.txt"
    if not manifest.exists():
        raise DependencyError(f"missing artifact {kind}/{name} under {root}")
    meta = read_manifest(manifest)
    if meta.get("format_version") != str(FORMAT_VERSION):
        raise CorruptArtifactError(f"artifact {kind}/{name}: unsupported format version {meta.get('format_version')}")
    files = {}
    for key, digest in meta.items():
        if not key.startswith("hash."):
            continue
        fname = key[len("hash."):]
        path = d / fname
        if not path.exists():
            raise CorruptArtifactError(f"artifact {kind}/{name}: missing file {fname}")
        data = path.read_bytes()
        if git_blob_sha1(data) != digest:
            raise CorruptArtifactError(f"artifact {kind}/{name}: content hash mismatch for {fname}")
        files[fname] = data
    return files, meta


def artifact_exists(root, kind: str, name: str) -> bool:
    return (artifact_dir(root, kind, name) / "manifest.txt").exists()


# -- boundary data ------------------------------------------------------------------

_TRAJ_MAGIC = b"STTR"


def dumps_transitions(obs: np.ndarray, actions: np.ndarray, next_obs: np.ndarray, signals: np.ndarray) -> bytes:
    """Binary (s, a, s', signal) records: header then column blocks, little-endian."""
    obs = np.asarray(obs, dtype="<f8")
    next_obs = np.asarray(next_obs, dtype="<f8")
    discrete = np.issubdtype(np.asarray(actions).dtype, np.integer)
    acts = np.asarray(actions, dtype="<f8")
    acts = acts.reshape(len(obs), 1) if acts.ndim == 1 else acts.reshape(len(obs), acts.shape[-1])
    n, obs_dim = obs.shape
    head = _TRAJ_MAGIC + struct.pack("<IIIIB", FORMAT_VERSION, n, obs_dim, acts.shape[1], int(discrete))
    return (head + obs.tobytes() + acts.tobytes() + next_obs.tobytes()
            + np.asarray(signals, dtype="<i1").tobytes())


def loads_transitions(buf: bytes):
    head = 4 + struct.calcsize("<IIIIB")
    if len(buf) < head or buf[:4] != _TRAJ_MAGIC:
        raise CorruptArtifactError("not a transition file (bad magic or truncated header)")
    version, n, obs_dim, act_dim, discrete = struct.unpack("<IIIIB", buf[4:head])
    if version != FORMAT_VERSION:
        raise CorruptArtifactError(f"unsupported transition file version {version}")
    sizes = [n * obs_dim * 8, n * act_dim * 8, n * obs_dim * 8, n]
    if len(buf) != head + sum(sizes):
        raise CorruptArtifactError("transition file is truncated or has trailing bytes")
    off = head
    parts = []
    for size, dt in zip(sizes, ["<f8", "<f8", "<f8", "<i1"]):
        parts.append(np.frombuffer(buf[off:off + size], dtype=dt).copy())
        off += size
    obs = parts[0].reshape(n, obs_dim)
    acts = parts[1].reshape(n, act_dim)
    acts = acts[:, 0].astype(np.int64) if discrete else acts
    return obs, acts, parts[2].reshape(n, obs_dim), parts[3]
