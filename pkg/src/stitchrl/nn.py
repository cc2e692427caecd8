"""Dense feed-forward networks with hand-written backprop, Adam, and policies.

Everything is float64. Weight matrices are stored ``(fan_in, fan_out)`` so a
batch ``x`` of shape ``(B, fan_in)`` maps to ``x @ W + b``. Hidden layers use
the configured activation; the output layer is linear.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptArtifactError, NonFiniteError
from .rng import Xoshiro256

ACTIVATIONS = ("tanh", "relu")
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
OUTPUT_INIT_SCALE = 0.01  # policies start near-uniform / near-zero mean, away from action clipping
_LOG_2PI = math.log(2.0 * math.pi)


class MlpNet:
    def __init__(self, layer_sizes, activation: str = "tanh", weights=None, biases=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigError(f"layer_sizes must hold at least two positive ints, got {layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}", field="activation")
        self.layer_sizes = sizes
        self.activation = activation
        if weights is None:
            weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        if biases is None:
            biases = [np.zeros(b) for b in sizes[1:]]
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise ConfigError("weight/bias count must equal number of layers - 1")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ConfigError(f"layer {i} has shapes {w.shape}/{b.shape}, expected "
                                  f"{(sizes[i], sizes[i + 1])}/{(sizes[i + 1],)}")

    @classmethod
    def init(cls, layer_sizes, activation: str, rng: Xoshiro256) -> "MlpNet":
        """Glorot-uniform weights, zero biases."""
        sizes = [int(s) for s in layer_sizes]
        weights = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        return cls(sizes, activation, weights=weights)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpNet":
        return MlpNet(self.layer_sizes, self.activation,
                      [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_params_from(self, other: "MlpNet") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def _act(self, z):
        if self.activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise ConfigError(f"input of shape {x.shape} does not match input size {self.in_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = self._act(h)
        return h

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass that also returns per-layer activations for backward."""
        h = self._check_input(x)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = self._act(h)
            acts.append(h)
        return h, acts

    def backward(self, x, output_grad, cache=None, need_input_grad: bool = False):
        """Gradients of ``sum(output * output_grad)`` w.r.t. the parameters.

        Batched inputs sum over the batch. Returns a list ordered like
        :attr:`params`; with ``need_input_grad`` also returns d/dx.
        """
        if cache is None:
            _, cache = self.forward_cache(x)
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != cache[-1].shape:
            raise ConfigError(f"output_grad shape {g.shape} != output shape {cache[-1].shape}")
        batched = g.ndim == 2
        n = len(self.weights)
        grads: list[np.ndarray] = [None] * (2 * n)  # type: ignore[list-item]
        for i in range(n - 1, -1, -1):
            a_in = cache[i]
            if batched:
                grads[2 * i] = a_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            else:
                grads[2 * i] = np.outer(a_in, g)
                grads[2 * i + 1] = g.copy()
            if i > 0 or need_input_grad:
                g = g @ self.weights[i].T
                if i > 0:
                    if self.activation == "tanh":
                        g = g * (1.0 - cache[i] ** 2)
                    else:
                        g = g * (cache[i] > 0.0)
        if need_input_grad:
            return grads, g
        return grads


def forward(net: MlpNet, x) -> np.ndarray:
    return net.forward(x)


def backward(net: MlpNet, x, output_grad) -> list[np.ndarray]:
    return net.backward(x, output_grad)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", field="learning_rate")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """Bias-corrected Adam update applied to ``params`` in place."""
        if len(params) != len(grads):
            raise ConfigError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ConfigError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient; Adam update rejected")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        return params


def adam_step(state: Adam, params, grads):
    return state.step(params, grads)


# -- policies -------------------------------------------------------------


class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and state-independent log std."""

    kind = "gaussian"

    def __init__(self, mean_net: MlpNet, log_std=None):
        self.mean_net = mean_net
        if log_std is None:
            log_std = np.zeros(mean_net.out_dim)
        self.log_std = np.array(log_std, dtype=np.float64)
        if self.log_std.shape != (mean_net.out_dim,):
            raise ConfigError("log_std length must equal the action dimension")
        self.clamp()

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, hidden=(32, 32), activation="tanh",
             rng: Xoshiro256 | None = None) -> "GaussianPolicy":
        sizes = [obs_dim, *hidden, act_dim]
        net = MlpNet.init(sizes, activation, rng) if rng is not None else MlpNet(sizes, activation)
        net.weights[-1] *= OUTPUT_INIT_SCALE
        return cls(net)

    @property
    def obs_dim(self) -> int:
        return self.mean_net.in_dim

    @property
    def act_dim(self) -> int:
        return self.mean_net.out_dim

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.mean_net.params, self.log_std]

    def clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())

    def mean(self, obs) -> np.ndarray:
        return self.mean_net.forward(obs)

    def sample(self, obs, rng: Xoshiro256):
        """Returns ``(action, log_prob)``."""
        mu = self.mean_net.forward(obs)
        std = np.exp(self.log_std)
        noise = rng.standard_normal(mu.shape)
        action = mu + std * noise
        logp = float(-0.5 * np.sum(noise * noise) - np.sum(self.log_std) - 0.5 * len(mu) * _LOG_2PI)
        return action, logp

    def act(self, obs, rng: Xoshiro256 | None, deterministic: bool = False) -> np.ndarray:
        if deterministic or rng is None:
            return self.mean_net.forward(obs)
        return self.sample(obs, rng)[0]

    def log_prob(self, obs, action):
        mu = self.mean_net.forward(obs)
        z = (np.asarray(action, dtype=np.float64) - mu) * np.exp(-self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * _LOG_2PI

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + _LOG_2PI))

    def logp_grads(self, obs, actions, dlogp, dentropy: float = 0.0):
        """Gradients of ``sum_i dlogp[i] * log pi(a_i|s_i) + dentropy * H``."""
        mu, cache = self.mean_net.forward_cache(obs)
        inv_var = np.exp(-2.0 * self.log_std)
        diff = np.asarray(actions, dtype=np.float64) - mu
        dlogp = np.asarray(dlogp, dtype=np.float64)[:, None]
        dmu = dlogp * diff * inv_var
        grads = self.mean_net.backward(obs, dmu, cache=cache)
        dlog_std = np.sum(dlogp * (diff * diff * inv_var - 1.0), axis=0) + dentropy
        return [*grads, dlog_std]


class CategoricalPolicy:
    """Softmax over MLP logits; used by the tabular oracle MDPs."""

    kind = "categorical"

    def __init__(self, logits_net: MlpNet):
        self.logits_net = logits_net

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, hidden=(32, 32), activation="tanh",
             rng: Xoshiro256 | None = None) -> "CategoricalPolicy":
        sizes = [obs_dim, *hidden, n_actions]
        net = MlpNet.init(sizes, activation, rng) if rng is not None else MlpNet(sizes, activation)
        net.weights[-1] *= OUTPUT_INIT_SCALE
        return cls(net)

    @property
    def obs_dim(self) -> int:
        return self.logits_net.in_dim

    @property
    def act_dim(self) -> int:
        return self.logits_net.out_dim

    @property
    def params(self) -> list[np.ndarray]:
        return self.logits_net.params

    def clamp(self) -> None:
        pass

    def copy(self) -> "CategoricalPolicy":
        return CategoricalPolicy(self.logits_net.copy())

    @staticmethod
    def _log_softmax(z):
        z = z - np.max(z, axis=-1, keepdims=True)
        return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))

    def probs(self, obs) -> np.ndarray:
        return np.exp(self._log_softmax(self.logits_net.forward(obs)))

    def sample(self, obs, rng: Xoshiro256):
        logp = self._log_softmax(self.logits_net.forward(obs))
        a = rng.categorical(np.exp(logp))
        return a, float(logp[a])

    def act(self, obs, rng: Xoshiro256 | None, deterministic: bool = False):
        if deterministic or rng is None:
            return int(np.argmax(self.logits_net.forward(obs)))
        return self.sample(obs, rng)[0]

    def log_prob(self, obs, action):
        logp = self._log_softmax(self.logits_net.forward(obs))
        a = np.asarray(action, dtype=np.int64)
        if logp.ndim == 1:
            return float(logp[int(a)])
        return logp[np.arange(len(a)), a]

    def entropy_batch(self, obs) -> np.ndarray:
        logp = self._log_softmax(self.logits_net.forward(obs))
        return -np.sum(np.exp(logp) * logp, axis=-1)

    def logp_grads(self, obs, actions, dlogp, dentropy: float = 0.0):
        """Gradients of ``sum_i dlogp[i] * log pi(a_i|s_i) + dentropy * mean_i H_i``."""
        z, cache = self.logits_net.forward_cache(obs)
        logp = self._log_softmax(z)
        p = np.exp(logp)
        a = np.asarray(actions, dtype=np.int64)
        onehot = np.zeros_like(p)
        onehot[np.arange(len(a)), a] = 1.0
        dz = np.asarray(dlogp, dtype=np.float64)[:, None] * (onehot - p)
        if dentropy:
            ent = -np.sum(p * logp, axis=-1, keepdims=True)
            dz += (dentropy / len(a)) * (-p * (logp + ent))
        return self.logits_net.backward(obs, dz, cache=cache)


def gaussian_sample(policy: GaussianPolicy, obs, rng: Xoshiro256) -> np.ndarray:
    return policy.sample(obs, rng)[0]


def gaussian_log_prob(policy: GaussianPolicy, obs, action) -> float:
    return float(policy.log_prob(obs, action))


# -- serialization --------------------------------------------------------

MAGIC = b"STNN"
FORMAT_VERSION = 1
_ACT_CODES = {"tanh": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def dumps_net(net: MlpNet, aux=None) -> bytes:
    """One STNN record: header, row-major little-endian f64 params, aux vector."""
    aux = np.zeros(0) if aux is None else np.asarray(aux, dtype=np.float64).ravel()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(net.layer_sizes)),
             struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes),
             struct.pack("<B", _ACT_CODES[net.activation])]
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(struct.pack("<I", len(aux)))
    parts.append(aux.astype("<f8").tobytes())
    return b"".join(parts)


def _take(buf: bytes, offset: int, n: int) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise CorruptArtifactError("truncated STNN record")
    return buf[offset:offset + n], offset + n


def loads_net(buf: bytes, offset: int = 0) -> tuple[MlpNet, np.ndarray, int]:
    """Parse one record starting at ``offset``; returns ``(net, aux, next_offset)``."""
    magic, offset = _take(buf, offset, 4)
    if magic != MAGIC:
        raise CorruptArtifactError(f"bad magic {magic!r}")
    head, offset = _take(buf, offset, 8)
    version, n_sizes = struct.unpack("<II", head)
    if version != FORMAT_VERSION:
        raise CorruptArtifactError(f"unsupported STNN version {version}")
    if not 2 <= n_sizes <= 64:
        raise CorruptArtifactError(f"implausible layer count {n_sizes}")
    raw, offset = _take(buf, offset, 4 * n_sizes)
    sizes = list(struct.unpack(f"<{n_sizes}I", raw))
    code, offset = _take(buf, offset, 1)
    if code[0] not in _ACT_NAMES:
        raise CorruptArtifactError(f"unknown activation code {code[0]}")
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        raw, offset = _take(buf, offset, 8 * a * b)
        weights.append(np.frombuffer(raw, dtype="<f8").reshape(a, b).astype(np.float64))
        raw, offset = _take(buf, offset, 8 * b)
        biases.append(np.frombuffer(raw, dtype="<f8").astype(np.float64))
    raw, offset = _take(buf, offset, 4)
    (n_aux,) = struct.unpack("<I", raw)
    raw, offset = _take(buf, offset, 8 * n_aux)
    aux = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return MlpNet(sizes, _ACT_NAMES[code[0]], weights, biases), aux, offset


def loads_nets(buf: bytes) -> list[tuple[MlpNet, np.ndarray]]:
    out, offset = [], 0
    while offset < len(buf):
        net, aux, offset = loads_net(buf, offset)
        out.append((net, aux))
    if not out:
        raise CorruptArtifactError("empty model file")
    return out


def dumps_policy(policy) -> bytes:
    if isinstance(policy, GaussianPolicy):
        return dumps_net(policy.mean_net, policy.log_std)
    return dumps_net(policy.logits_net)


def loads_policy(buf: bytes, kind: str = "gaussian"):
    net, aux, offset = loads_net(buf)
    if offset != len(buf):
        raise CorruptArtifactError("trailing bytes after policy record")
    if kind == "gaussian":
        return GaussianPolicy(net, aux)
    if kind == "categorical":
        return CategoricalPolicy(net)
    raise CorruptArtifactError(f"unknown policy kind {kind!r}")
