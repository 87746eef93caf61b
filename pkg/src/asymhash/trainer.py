"""Alternating optimization: SGD on the head with codes fixed, then a discrete code solve."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .data import FeatureDataset, build_similarity_matrix, sample_query_indices
from .model import (
    Checkpoint,
    HeadParams,
    Hyperparams,
    encode,
    feature_stats,
    grad,
    init_params,
    loss,
    relaxed_codes,
    sgd_step,
)
from .solver import init_codes, objective_b_terms, solve_codes

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    bits: int = 16
    lam: float = 200.0
    gamma: float = 20.0
    lr: float = 1e-4
    outer_iters: int = 50
    inner_epochs: int = 3
    batch_size: int = 32
    num_queries: int | None = None  # m; None means min(n, 1000)
    max_sweeps: int = 20
    seed: int = 0
    deterministic: bool = True
    resample_omega: bool = True
    standardize: bool = False

    def resolve_queries(self, n: int) -> int:
        return min(n, 1000) if self.num_queries is None else self.num_queries

    def validate(self, n: int) -> None:
        for name in ("bits", "outer_iters", "batch_size", "max_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.inner_epochs < 0:
            raise ValueError("inner_epochs must be non-negative")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        m = self.resolve_queries(n)
        if not 1 <= m <= n:
            raise ValueError(f"need 1 <= m <= n, got m={m} with n={n}")


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    loss: float
    similarity: float
    quantization: float
    semantic: float
    bits_flipped: int
    seconds: float


@dataclass
class TrainReport:
    records: list[IterRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "term1", "term2", "term3", "bits_flipped", "seconds"])
            for r in self.records:
                w.writerow([
                    r.iteration, repr(r.loss), repr(r.similarity), repr(r.quantization),
                    repr(r.semantic), r.bits_flipped, f"{r.seconds:.6f}",
                ])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    codes: np.ndarray
    report: TrainReport
    omega: np.ndarray

    @property
    def params(self) -> HeadParams:
        return self.checkpoint.params


def train(ds: FeatureDataset, cfg: TrainConfig, check_monotone: bool = False) -> TrainResult:
    """Run ``cfg.outer_iters`` rounds of (SGD epochs over omega, code solve)."""
    cfg.validate(ds.n)
    n, m, K = ds.n, cfg.resolve_queries(ds.n), cfg.bits
    hp = Hyperparams(cfg.lam, cfg.gamma, cfg.lr)

    mean = std = None
    feats = ds.features
    if cfg.standardize:
        mean, std = feature_stats(feats)
        feats = (feats - mean) / std

    params = init_params(K, ds.d, ds.num_classes, seeding.rng_for(cfg.seed, seeding.INIT_PARAMS))
    omega_rng = seeding.rng_for(cfg.seed, seeding.OMEGA)
    batch_rng = seeding.rng_for(cfg.seed, seeding.BATCHES)
    report = TrainReport()
    B = None
    omega = None

    for it in range(cfg.outer_iters):
        start = time.perf_counter()
        if omega is None or cfg.resample_omega:
            omega = sample_query_indices(n, m, int(omega_rng.integers(2**63))).omega
        sim = build_similarity_matrix(ds.labels[omega], ds.labels)
        if B is None:
            B = init_codes(
                relaxed_codes(params, feats[omega], cfg.deterministic), omega, n,
                seeding.rng_for(cfg.seed, seeding.INIT_CODES),
            )

        for _ in range(cfg.inner_epochs):
            perm = batch_rng.permutation(m)
            for lo in range(0, m, cfg.batch_size):
                rows = perm[lo:lo + cfg.batch_size]
                g = grad(
                    params, feats[omega[rows]], ds.labels[omega[rows]], B, B[omega[rows]],
                    sim[rows], hp, deterministic=cfg.deterministic,
                )
                params = sgd_step(params, g, cfg.lr)

        u_tilde = relaxed_codes(params, feats[omega], cfg.deterministic)
        solved = solve_codes(B, u_tilde, sim, K, cfg.lam, omega, cfg.max_sweeps, check_monotone)
        B = solved.codes

        terms = loss(params, feats[omega], ds.labels[omega], B, B[omega], sim, hp, cfg.deterministic)
        report.records.append(IterRecord(
            it, terms.total, terms.similarity, terms.quantization, terms.semantic,
            solved.flipped, time.perf_counter() - start,
        ))
        logger.info(
            "iter %d loss %.6g (sim %.6g quant %.6g sem %.6g) flipped %d",
            it, terms.total, terms.similarity, terms.quantization, terms.semantic, solved.flipped,
        )
        if check_monotone:
            direct = objective_b_terms(B, u_tilde, sim, K, cfg.lam, omega)
            expected = terms.similarity + cfg.lam * terms.quantization
            assert abs(direct - expected) <= 1e-8 * max(1.0, abs(direct))

    return TrainResult(Checkpoint(params, mean, std), B, report, omega)


def encode_database(model: HeadParams | Checkpoint, ds: FeatureDataset) -> np.ndarray:
    """Symmetric codes sign(W_h f + v_h) for every row of ``ds``.

    A :class:`Checkpoint` applies its train-time standardization first.
    """
    if isinstance(model, Checkpoint):
        return model.encode(ds.features)
    return encode(model, ds.features)
