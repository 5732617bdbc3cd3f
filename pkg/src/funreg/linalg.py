"""Penalized least squares shared by every estimator.

A design ``Z`` is factorised once (thin QR); each candidate set of smoothing
parameters then only needs an SVD of the small stacked matrix
``[R; sqrt(l_1) L_1; ...]`` where ``L_i' L_i = S_i``.  The same SVD yields the
coefficients, the effective degrees of freedom and the leverages.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import RankDeficientError

RANK_RTOL = 1e-10


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """Return ``L`` (rank x p) with ``L.T @ L == S`` for a symmetric PSD ``S``."""
    S = (S + S.T) / 2
    w, V = np.linalg.eigh(S)
    keep = w > w.max(initial=0.0) * 1e-13
    return np.sqrt(w[keep])[:, None] * V[:, keep].T


def embed(S: np.ndarray, sl: slice, p: int) -> np.ndarray:
    out = np.zeros((p, p))
    out[sl, sl] = S
    return out


@dataclass
class Solution:
    coef: np.ndarray
    edf: float
    lambdas: tuple
    # pieces of the SVD kept for leverages and linear operators
    _U_top: np.ndarray
    _Vs: np.ndarray  # V @ diag(1/s) in original (unscaled) coordinates


class PenalizedDesign:
    """Minimise ``||y - Z b||^2 + sum_i lam_i * b' S_i b`` for many ``y`` / ``lam``.

    Parameters
    ----------
    Z : (n, p) array
    penalties : list of (p, p) arrays
        Penalty matrices already embedded in the full coefficient vector.
    blocks : list of (name, slice)
        Used only to name the culprit in rank-deficiency reports.
    """

    def __init__(self, Z: np.ndarray, penalties: Sequence[np.ndarray] = (), blocks=None):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2:
            raise ValueError("design must be 2-d")
        self.Z = Z
        self.n, self.p = Z.shape
        self.blocks = list(blocks) if blocks else [("coef", slice(0, self.p))]
        self.Q, self.R = np.linalg.qr(Z)
        self.roots = [psd_sqrt(S) for S in penalties]
        self.penalties = [np.asarray(S, dtype=float) for S in penalties]

    def penalty_scale(self, i: int) -> float:
        """``tr(Z'Z)`` over the columns penalty ``i`` touches, divided by ``tr(S_i)``."""
        S = self.penalties[i]
        cols = np.diag(S) > 0
        tr = np.trace(S)
        if tr <= 0:
            return 1.0
        return float(np.sum(self.Z[:, cols] ** 2) / tr)

    def _decompose(self, lambdas, check_rank: bool):
        lambdas = tuple(float(l) for l in lambdas)
        if len(lambdas) != len(self.roots):
            raise ValueError("one smoothing parameter per penalty required")
        if any(l < 0 for l in lambdas):
            raise ValueError("smoothing parameters must be nonnegative")
        stack = [self.R] + [np.sqrt(l) * L for l, L in zip(lambdas, self.roots) if l > 0]
        A = np.vstack(stack)
        scale = np.linalg.norm(A, axis=0)
        scale[scale == 0] = 1.0
        U, s, Vt = np.linalg.svd(A / scale, full_matrices=False)
        tiny = s <= RANK_RTOL * s[0] if s.size else np.zeros(0, bool)
        if self.p > A.shape[0] or tiny.any():
            if check_rank:
                null = Vt[tiny].T if tiny.any() else np.eye(self.p)
                raise RankDeficientError(self._culprits(null / scale[:, None]))
        k = self.R.shape[0]
        s_inv = np.where(tiny, 0.0, 1.0 / np.where(tiny, 1.0, s))
        return lambdas, U[:k] * (~tiny), Vt.T * s_inv / scale[:, None]

    def _culprits(self, null: np.ndarray):
        names = []
        mag = np.abs(null).max(axis=1)
        thresh = 1e-6 * mag.max()
        for name, sl in self.blocks:
            if np.any(mag[sl] > thresh):
                names.append(name)
        return names or [name for name, _ in self.blocks]

    def solve(self, y, lambdas=(), check_rank: bool = True) -> Solution:
        lambdas, U_top, Vs = self._decompose(lambdas, check_rank)
        qty = self.Q.T @ np.asarray(y, dtype=float)
        coef = Vs @ (U_top.T @ qty)
        edf = float(np.sum(U_top**2))
        return Solution(coef, edf, lambdas, U_top, Vs)

    def operator(self, sol: Solution) -> np.ndarray:
        """Linear map ``y -> coef`` for the solution's smoothing parameters."""
        return sol._Vs @ sol._U_top.T @ self.Q.T

    def leverages(self, sol: Solution) -> np.ndarray:
        return np.sum((self.Q @ sol._U_top) ** 2, axis=1)

    def gcv(self, y, sol: Solution) -> float:
        r = np.asarray(y, dtype=float) - self.Z @ sol.coef
        denom = (self.n - sol.edf) ** 2
        return float(self.n * r @ r / denom) if denom > 0 else np.inf

    def normal_residual(self, y, sol: Solution) -> np.ndarray:
        """``Z'(y - Z b) - sum lam_i S_i b``; zero at the optimum."""
        g = self.Z.T @ (np.asarray(y, dtype=float) - self.Z @ sol.coef)
        for lam, S in zip(sol.lambdas, self.penalties):
            g -= lam * (S @ sol.coef)
        return g


def _better(score: float, best: float, floor: float) -> bool:
    return score < best - (1e-9 * abs(best) + floor)


def select_gcv(design: PenalizedDesign, y, grids: Sequence[Sequence[float]]):
    """Grid search of GCV over the product of per-penalty ``lambda`` grids.

    Ties (within rounding) go to the heavier smoothing.  Returns the
    solution and its GCV score.
    """
    y = np.asarray(y, dtype=float)
    floor = 1e-20 * float(y @ y) / max(design.n, 1)
    ordered = [sorted(g, reverse=True) for g in grids]
    best, best_sol, failure = np.inf, None, None
    for lams in itertools.product(*ordered):
        try:
            sol = design.solve(y, lams, check_rank=True)
        except RankDeficientError as exc:
            failure = exc
            continue
        score = design.gcv(y, sol)
        if best_sol is None or _better(score, best, floor):
            best, best_sol = score, sol
    if best_sol is None:
        raise failure
    return best_sol, best


def relative_grid(design: PenalizedDesign, i: int, log10_grid) -> list:
    """Absolute ``lambda`` values for a grid given relative to the data scale."""
    c = design.penalty_scale(i)
    return [c * 10.0 ** g for g in log10_grid]
