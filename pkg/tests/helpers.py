"""Random problem instances and slow reference implementations used as oracles."""

import itertools
import math

import numpy as np

from asymhash.data import build_similarity_matrix, one_hot
from asymhash.model import HeadParams, Hyperparams, forward


def random_params(rng, K, d, C, scale=0.5):
    return HeadParams(
        rng.normal(0, scale, (K, d)),
        rng.normal(0, scale, K),
        rng.normal(0, scale, (C, K)),
        rng.normal(0, scale, C),
    )


def random_instance(rng, m, n, d, K, C, lam=200.0, gamma=20.0):
    """A loss/grad instance whose queries are rows ``omega`` of an n-row database."""
    db_labels = rng.integers(0, C, n)
    omega = np.sort(rng.choice(n, m, replace=False))
    codes = rng.choice([-1.0, 1.0], size=(n, K))
    features = rng.normal(0, 1, (m, d))
    return dict(
        params=random_params(rng, K, d, C),
        features=features,
        labels=db_labels[omega],
        codes=codes,
        codes_omega=codes[omega],
        sim=build_similarity_matrix(db_labels[omega], db_labels),
        hp=Hyperparams(lam, gamma, 1e-3),
        omega=omega,
    )


def loss_args(inst):
    return (inst["params"], inst["features"], inst["labels"], inst["codes"],
            inst["codes_omega"], inst["sim"], inst["hp"])


def naive_loss(params, features, labels, codes, codes_omega, sim, hp):
    """Scalar double loop over (query, database) pairs, no vectorization."""
    K = params.bits
    total_sim = total_quant = total_sem = 0.0
    for i in range(len(features)):
        u = [sum(params.hash_weight[k, l] * features[i, l] for l in range(params.dim)) + params.hash_bias[k]
             for k in range(K)]
        ut = [math.tanh(x) for x in u]
        for j in range(len(codes)):
            dot = sum(ut[k] * codes[j, k] for k in range(K))
            total_sim += (dot - K * sim[i, j]) ** 2
        total_quant += sum((codes_omega[i, k] - ut[k]) ** 2 for k in range(K))
        logits = [sum(params.sem_weight[c, k] * u[k] for k in range(K)) + params.sem_bias[c]
                  for c in range(params.num_classes)]
        top = max(logits)
        log_norm = top + math.log(sum(math.exp(o - top) for o in logits))
        total_sem += -(logits[labels[i]] - log_norm)
    return total_sim + hp.lam * total_quant + hp.gamma * total_sem, total_sim, total_quant, total_sem


def printed_grad_softmax_jacobian(params, features, labels, codes, codes_omega, sim, hp):
    """Gradient with the semantic-layer terms taken literally as a diagonal softmax Jacobian."""
    cache = forward(params, features)
    y = one_hot(labels, params.num_classes)
    ut = cache.u_tilde
    resid = ut @ codes.T - params.bits * sim
    d_ut = 2 * resid @ codes - 2 * hp.lam * (codes_omega - ut)
    d_logits_correct = hp.gamma * (cache.probs - y)
    d_u = d_ut * (1 - ut**2) + d_logits_correct @ params.sem_weight
    # dJ/dt = -gamma y / t, then elementwise t * (y - t)
    d_logits = (-hp.gamma * y / cache.probs) * cache.probs * (y - cache.probs)
    return HeadParams(d_u.T @ features, d_u.sum(0), d_logits.T @ cache.u, d_logits.sum(0))


def printed_grad_lambda_sign(params, features, labels, codes, codes_omega, sim, hp):
    """Gradient with the quantization term entering as +2*lam*(b - u~)."""
    cache = forward(params, features)
    y = one_hot(labels, params.num_classes)
    ut = cache.u_tilde
    resid = ut @ codes.T - params.bits * sim
    d_ut = 2 * resid @ codes + 2 * hp.lam * (codes_omega - ut)
    d_logits = hp.gamma * (cache.probs - y)
    d_u = d_ut * (1 - ut**2) + d_logits @ params.sem_weight
    return HeadParams(d_u.T @ features, d_u.sum(0), d_logits.T @ cache.u, d_logits.sum(0))


def solver_instance(rng, n, K, m=None, lam=None):
    m = rng.integers(1, n + 1) if m is None else m
    lam = rng.choice([0.0, 1.0, 200.0]) if lam is None else lam
    labels = rng.integers(0, 3, n)
    omega = np.sort(rng.choice(n, m, replace=False))
    u_tilde = np.tanh(rng.normal(0, 1.5, (m, K)))
    sim = build_similarity_matrix(labels[omega], labels)
    B = rng.choice([-1.0, 1.0], size=(n, K))
    return B, u_tilde, sim, float(lam), omega


def naive_q(sim, u_tilde, omega, n, K, lam):
    Q = np.zeros((n, K))
    for j in range(n):
        for k in range(K):
            acc = 0.0
            for i in range(len(omega)):
                acc += sim[i, j] * u_tilde[i, k]
            Q[j, k] = -2.0 * K * acc
    for i, j in enumerate(omega):
        for k in range(K):
            Q[j, k] -= 2.0 * lam * u_tilde[i, k]
    return Q


def all_code_matrices(n, K):
    """Every n x K +-1 matrix, shape (2**(n*K), n, K)."""
    grid = np.array(list(itertools.product([-1.0, 1.0], repeat=n * K)))
    return grid.reshape(-1, n, K)


def batch_objective(Bs, u_tilde, sim, K, lam, omega):
    resid = np.einsum("mk,bnk->bmn", u_tilde, Bs) - K * sim
    quant = Bs[:, omega, :] - u_tilde
    return (resid**2).sum(axis=(1, 2)) + lam * (quant**2).sum(axis=(1, 2))


def brute_average_precision(flags, n_relevant):
    hits = 0
    total = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            total += hits / rank
    return total / n_relevant


def naive_hamming(a, b):
    return sum(1 for x, y in zip(a, b) if x != y)
