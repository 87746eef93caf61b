"""Hash head (linear + tanh) with a softmax semantic head on top.

Pre-activations ``u = W_h f + v_h`` give relaxed codes ``tanh(u)`` and
binary codes ``sign(u)``; the semantic logits are computed from ``u``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import one_hot

MODEL_MAGIC = b"AHM1"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB")
PROB_FLOOR = 1e-12


@dataclass
class HeadParams:
    hash_weight: np.ndarray  # (K, d)
    hash_bias: np.ndarray  # (K,)
    sem_weight: np.ndarray  # (C, K)
    sem_bias: np.ndarray  # (C,)

    def __post_init__(self):
        K, d = self.hash_weight.shape
        C = self.sem_weight.shape[0]
        if self.hash_bias.shape != (K,) or self.sem_weight.shape != (C, K) or self.sem_bias.shape != (C,):
            raise ValueError("inconsistent head parameter shapes")

    @property
    def bits(self) -> int:
        return self.hash_weight.shape[0]

    @property
    def dim(self) -> int:
        return self.hash_weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.sem_weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> HeadParams:
        return HeadParams(*(a.copy() for a in self.arrays()))


# Gradients mirror the parameter layout field for field.
GradBundle = HeadParams


@dataclass
class ForwardCache:
    u: np.ndarray
    u_tilde: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class Hyperparams:
    lam: float = 200.0
    gamma: float = 20.0
    lr: float = 1e-4

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class LossTerms:
    total: float
    similarity: float
    quantization: float
    semantic: float


def init_params(bits: int, dim: int, num_classes: int, rng: np.random.Generator) -> HeadParams:
    """Glorot-uniform weights, zero biases."""

    def glorot(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    hash_weight = glorot(bits, dim)
    sem_weight = glorot(num_classes, bits)
    return HeadParams(hash_weight, np.zeros(bits), sem_weight, np.zeros(num_classes))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _matmul(a, b, deterministic):
    # einsum without optimize runs its own single-threaded loops, so the
    # summation order does not depend on the BLAS thread count
    if deterministic:
        return np.einsum("ij,jk->ik", a, b, optimize=False)
    return a @ b


def _check_dim(params: HeadParams, features: np.ndarray):
    if features.shape[-1] != params.dim:
        raise ValueError(f"feature dimension {features.shape[-1]} != model dimension {params.dim}")


def forward(params: HeadParams, f: np.ndarray, deterministic: bool = True) -> ForwardCache:
    """Forward pass for one feature vector or a batch of row vectors."""
    f = np.asarray(f, dtype=np.float64)
    _check_dim(params, f)
    batch = np.atleast_2d(f)
    u = _matmul(batch, params.hash_weight.T, deterministic) + params.hash_bias
    logits = _matmul(u, params.sem_weight.T, deterministic) + params.sem_bias
    cache = ForwardCache(u, np.tanh(u), logits, softmax(logits))
    if f.ndim == 1:
        cache = ForwardCache(*(x[0] for x in (cache.u, cache.u_tilde, cache.logits, cache.probs)))
    return cache


def sign(x: np.ndarray) -> np.ndarray:
    """+1 where x > 0, -1 otherwise (zero maps to -1)."""
    return np.where(x > 0, 1.0, -1.0)


def encode(params: HeadParams, f: np.ndarray) -> np.ndarray:
    return sign(forward(params, f).u)


def relaxed_codes(params: HeadParams, features: np.ndarray, deterministic: bool = True) -> np.ndarray:
    return forward(params, np.atleast_2d(features), deterministic).u_tilde


def _validate(params, features, labels, codes, codes_omega, sim):
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_dim(params, features)
    m = features.shape[0]
    K = params.bits
    codes = np.asarray(codes, dtype=np.float64)
    codes_omega = np.asarray(codes_omega, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    n = codes.shape[0]
    if codes.shape != (n, K) or codes_omega.shape != (m, K):
        raise ValueError("code matrices do not match the code length / query count")
    if sim.shape != (m, n):
        raise ValueError(f"similarity matrix must be {m}x{n}, got {sim.shape}")
    if len(labels) != m:
        raise ValueError("one label per query row required")
    if not (np.all(np.abs(codes) == 1) and np.all(np.abs(codes_omega) == 1)):
        raise ValueError("code matrices must contain only -1/+1")
    return features, np.asarray(labels), codes, codes_omega, sim


def loss(params, features, labels, codes, codes_omega, sim, hp: Hyperparams, deterministic=True) -> LossTerms:
    """Un-normalized objective summed over the query rows.

    similarity   = sum_ij (u~_i . b_j - K s_ij)^2
    quantization = sum_i ||b_omega(i) - u~_i||^2
    semantic     = sum_i -log t_i[y_i]
    total        = similarity + lam * quantization + gamma * semantic
    """
    features, labels, codes, codes_omega, sim = _validate(params, features, labels, codes, codes_omega, sim)
    cache = forward(params, features, deterministic)
    resid = _matmul(cache.u_tilde, codes.T, deterministic) - params.bits * sim
    similarity = float(np.sum(resid**2))
    quantization = float(np.sum((codes_omega - cache.u_tilde) ** 2))
    picked = cache.probs[np.arange(len(labels)), labels]
    semantic = float(-np.sum(np.log(np.maximum(picked, PROB_FLOOR))))
    total = similarity + hp.lam * quantization + hp.gamma * semantic
    return LossTerms(total, similarity, quantization, semantic)


def grad(params, features, labels, codes, codes_omega, sim, hp: Hyperparams, deterministic=True) -> GradBundle:
    """Exact gradient of :func:`loss` with respect to the four head parameters."""
    features, labels, codes, codes_omega, sim = _validate(params, features, labels, codes, codes_omega, sim)
    cache = forward(params, features, deterministic)
    ut = cache.u_tilde
    resid = _matmul(ut, codes.T, deterministic) - params.bits * sim
    d_ut = 2.0 * _matmul(resid, codes, deterministic) - 2.0 * hp.lam * (codes_omega - ut)
    # softmax + cross-entropy collapses to (t - y) at the logits
    d_logits = hp.gamma * (cache.probs - one_hot(labels, params.num_classes))
    d_u = d_ut * (1.0 - ut**2) + _matmul(d_logits, params.sem_weight, deterministic)
    return GradBundle(
        hash_weight=_matmul(d_u.T, features, deterministic),
        hash_bias=d_u.sum(axis=0),
        sem_weight=_matmul(d_logits.T, cache.u, deterministic),
        sem_bias=d_logits.sum(axis=0),
    )


def numeric_grad(params, features, labels, codes, codes_omega, sim, hp, step=1e-5) -> GradBundle:
    """Central finite differences of the total loss, one entry at a time."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    out = []
    for idx, arr in enumerate(params.arrays()):
        g = np.zeros_like(arr)
        for pos in np.ndindex(arr.shape):
            plus, minus = params.copy(), params.copy()
            plus.arrays()[idx][pos] += step
            minus.arrays()[idx][pos] -= step
            lp = loss(plus, features, labels, codes, codes_omega, sim, hp).total
            lm = loss(minus, features, labels, codes, codes_omega, sim, hp).total
            g[pos] = (lp - lm) / (2 * step)
        out.append(g)
    return GradBundle(*out)


def grad_check(params, features, labels, codes, codes_omega, sim, hp, step=1e-5, grad_fn=grad) -> float:
    """Worst entrywise relative error between ``grad_fn`` and finite differences.

    The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    numeric = numeric_grad(params, features, labels, codes, codes_omega, sim, hp, step)
    analytic = grad_fn(params, features, labels, codes, codes_omega, sim, hp)
    worst = 0.0
    for a, b in zip(analytic.arrays(), numeric.arrays()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def sgd_step(params: HeadParams, grads: GradBundle, lr: float) -> HeadParams:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return HeadParams(*(p - lr * g for p, g in zip(params.arrays(), grads.arrays())))


@dataclass
class Checkpoint:
    """Trained head plus the optional per-dimension standardization applied at train time."""

    params: HeadParams
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def standardize(self) -> bool:
        return self.mean is not None

    def preprocess(self, features: np.ndarray) -> np.ndarray:
        if not self.standardize:
            return features
        return (features - self.mean) / self.std

    def encode(self, features: np.ndarray) -> np.ndarray:
        return encode(self.params, self.preprocess(features))


def feature_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    std = features.std(axis=0)
    return features.mean(axis=0), np.where(std > 0, std, 1.0)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    p = ckpt.params
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, p.bits, p.dim, p.num_classes, int(ckpt.standardize)))
        if ckpt.standardize:
            fh.write(np.asarray(ckpt.mean, dtype="<f8").tobytes())
            fh.write(np.asarray(ckpt.std, dtype="<f8").tobytes())
        for arr in p.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not an AHM1 model file")
    if len(buf) < _HEADER.size:
        raise ValueError(f"{path}: truncated model header")
    _, version, K, d, C, flag = _HEADER.unpack_from(buf)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    sizes = ([d, d] if flag else []) + [K * d, K, C * K, C]
    if len(buf) != _HEADER.size + 8 * sum(sizes):
        raise ValueError(f"{path}: model file size does not match header")
    flat = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    chunks = np.split(flat, np.cumsum(sizes)[:-1])
    mean = std = None
    if flag:
        mean, std, *chunks = chunks
    params = HeadParams(chunks[0].reshape(K, d), chunks[1], chunks[2].reshape(C, K), chunks[3])
    return Checkpoint(params, mean, std)
