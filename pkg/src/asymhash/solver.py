"""Column-wise discrete update of the database code matrix with the head frozen.

With relaxed query codes ``U`` (m x K), similarity ``S`` (m x n) and query
positions ``omega``, the code-dependent part of the objective is

    ||U B^T - K S||_F^2 + lam ||B[omega] - U||_F^2
      = ||B U^T||_F^2 + tr(B Q^T) + const,   Q = -2K S^T U - 2 lam U_bar

where ``U_bar`` is ``U`` scattered into an n x K zero matrix. Because every
column of B has fixed norm, the objective is linear in any single column,
which gives the closed-form sign update in :func:`update_column`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


def _check_codes(B):
    if not np.all(np.abs(B) == 1):
        raise ValueError("code matrix must contain only -1/+1")


def build_u_bar(u_tilde: np.ndarray, omega, n: int) -> np.ndarray:
    u_tilde = np.asarray(u_tilde, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.int64)
    K = u_tilde.shape[1] if u_tilde.ndim == 2 else 0
    if len(omega) != u_tilde.shape[0]:
        raise ValueError("omega must index one database row per relaxed code")
    if omega.size and (omega.min() < 0 or omega.max() >= n):
        raise IndexError("omega index out of range")
    u_bar = np.zeros((n, K))
    u_bar[omega] = u_tilde
    return u_bar


def build_q(sim, u_tilde, u_bar, bits: int, lam: float) -> np.ndarray:
    sim = np.asarray(sim, dtype=np.float64)
    m, n = sim.shape
    if u_tilde.shape != (m, bits) or u_bar.shape != (n, bits):
        raise ValueError("shape mismatch between S, relaxed codes and padded codes")
    return -2.0 * bits * (sim.T @ u_tilde) - 2.0 * lam * u_bar


def objective_b_terms(B, u_tilde, sim, bits: int, lam: float, omega) -> float:
    """||U B^T - K S||_F^2 + lam ||B[omega] - U||_F^2, evaluated directly."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[1] != bits or u_tilde.shape[1] != bits or sim.shape != (u_tilde.shape[0], B.shape[0]):
        raise ValueError("shape mismatch")
    resid = u_tilde @ B.T - bits * sim
    return float(np.sum(resid**2) + lam * np.sum((B[omega] - u_tilde) ** 2))


def update_column(B, k: int, u_tilde, Q) -> np.ndarray:
    """Best +-1 column k given the others: -sign(2 B_hat U_hat^T U_k + Q_k).

    A zero argument yields +1 (sign(0) is -1 before negation).
    """
    K = B.shape[1]
    if not 0 <= k < K:
        raise IndexError(f"column {k} out of range for {K} bits")
    # B_hat U_hat^T U_k without materializing the column-deleted blocks
    coupling = u_tilde.T @ u_tilde[:, k]
    coupling[k] = 0.0
    arg = 2.0 * (B @ coupling) + Q[:, k]
    return np.where(arg > 0, -1.0, 1.0)


@dataclass
class SolveResult:
    codes: np.ndarray
    sweeps: int
    flipped: int
    converged: bool


def solve_codes(
    B_init,
    u_tilde,
    sim,
    bits: int,
    lam: float,
    omega,
    max_sweeps: int = 20,
    check_monotone: bool = False,
) -> SolveResult:
    """Sweep columns 0..K-1 until a full sweep flips no bit or ``max_sweeps`` is hit.

    With ``check_monotone`` the objective is recomputed after every column
    update and an AssertionError is raised if it goes up beyond rounding.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    B = np.array(B_init, dtype=np.float64)
    _check_codes(B)
    u_tilde = np.asarray(u_tilde, dtype=np.float64)
    n = B.shape[0]
    Q = build_q(sim, u_tilde, build_u_bar(u_tilde, omega, n), bits, lam)
    prev = objective_b_terms(B, u_tilde, sim, bits, lam, omega) if check_monotone else None

    total_flipped = 0
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        flipped = 0
        for k in range(bits):
            col = update_column(B, k, u_tilde, Q)
            changed = int(np.count_nonzero(col != B[:, k]))
            if changed:
                B[:, k] = col
                flipped += changed
                if check_monotone:
                    cur = objective_b_terms(B, u_tilde, sim, bits, lam, omega)
                    if cur > prev + 1e-9 * max(1.0, abs(prev)):
                        raise AssertionError(f"objective rose from {prev} to {cur} at column {k}")
                    prev = cur
        total_flipped += flipped
        if flipped == 0:
            converged = True
            break
    logger.debug("solve_codes: %d sweeps, %d bits flipped", sweeps, total_flipped)
    return SolveResult(B, sweeps, total_flipped, converged)


def init_codes(u_tilde, omega, n: int, rng: np.random.Generator) -> np.ndarray:
    """sign(u~) on the query rows, random +-1 elsewhere."""
    B = rng.choice([-1.0, 1.0], size=(n, u_tilde.shape[1]))
    B[np.asarray(omega)] = np.where(u_tilde > 0, 1.0, -1.0)
    return B
