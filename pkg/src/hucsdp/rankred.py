"""Rank reduction of a feasible PSD solution.

Given Z = R R^T, any symmetric S with <R^T M R, S> = 0 for every constraint
matrix M gives directions Z(w) = R (I + w S) R^T along which all constraint
values stay fixed. When S is PSD, w = -1 / lambda_max(S) is the most negative
step that keeps I + w S PSD, and it makes I + w S singular, so the rank drops.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .sdpproblem import SdpBlockProblem
from .symmat import EPS_PSD, EPS_RANK, NotPsdError, eig_sym, null_space, psd_factor, smat, svec, sym

SIGMA = 3  # extra iterations allowed for stalls
T_TOL = 1e-6


class Termination(str, enum.Enum):
    RANK1 = "Rank1"
    STALLED = "StalledSZero"
    BUDGET = "IterBudget"


class RankReductionError(ValueError):
    pass


@dataclass
class ConstraintSet:
    """Constraint matrices in the coordinates of one PSD block."""

    mats: list  # dense symmetric matrices
    names: list
    kinds: list  # "balance", "line", "voltage" or "other"
    objective: np.ndarray | None = None

    def __post_init__(self):
        dims = {M.shape for M in self.mats}
        if self.objective is not None:
            dims.add(self.objective.shape)
        if len(dims) > 1:
            raise RankReductionError(f"constraint matrices have mixed shapes {sorted(dims)}")

    @property
    def dim(self) -> int:
        if self.mats:
            return self.mats[0].shape[0]
        return self.objective.shape[0] if self.objective is not None else 0

    def values(self, Z) -> np.ndarray:
        return np.array([float(np.sum(M * Z)) for M in self.mats])

    def scale(self) -> float:
        return max([1.0] + [float(np.abs(M).max()) for M in self.mats])

    @classmethod
    def from_problem(
        cls,
        prob: SdpBlockProblem,
        block: str,
        X: dict,
        lin: dict | None = None,
        active_tol: float = 1e-6,
        include_objective: bool = False,
    ) -> "ConstraintSet":
        """Stencils on ``block`` of every equality and of the inequalities whose
        slack at (X, lin) is within ``active_tol``. Other blocks stay fixed during
        reduction, so keeping each stencil's inner product keeps every row."""
        lin = lin or {}
        mats, names, kinds = [], [], []
        for con in prob.constraints:
            M = con.terms.get(block)
            if M is None or not len(M):
                continue
            if con.sense == "<=":
                slack = con.rhs - con.evaluate(X, lin)
                if slack > active_tol:
                    continue
            mats.append(M.to_dense())
            names.append(con.name)
            kinds.append(_kind(con.name))
        obj = prob.objective.get(block)
        C = obj.to_dense() if (include_objective and obj is not None) else None
        return cls(mats, names, kinds, C)


def _kind(name: str) -> str:
    if name.startswith(("pbal", "qbal")):
        return "balance"
    if name.startswith("flow"):
        return "line"
    if name.startswith(("vslack", "vmax", "vmin")):
        return "voltage"
    return "other"


@dataclass
class RankReductionReport:
    iterations: int
    ranks: list
    Z: np.ndarray
    reason: Termination
    residuals: list  # max |<M, Z_r - Z_0>| / scale per iteration
    objective_drift: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)  # lambda_min / lambda_max per iterate
    stalls: int = 0

    @property
    def final_rank(self) -> int:
        return self.ranks[-1]


def step_omega(S) -> float:
    lmax = float(eig_sym(S)[0][0])
    if lmax <= 0.0:
        raise RankReductionError("step needs a nonzero PSD direction")
    return -1.0 / lmax


def _lmin(M) -> float:
    return float(np.linalg.eigvalsh(sym(M))[0])


def _best_mix(C, B, tol: float = T_TOL):
    """Maximize the concave function t -> lambda_min(t C + (1 - t) B) on [0, 1]."""
    lo, hi = 0.0, 1.0
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = hi - g * (hi - lo), lo + g * (hi - lo)
    fa, fb = _lmin(a * C + (1 - a) * B), _lmin(b * C + (1 - b) * B)
    while hi - lo > tol:
        if fa < fb:
            lo, a, fa = a, b, fb
            b = lo + g * (hi - lo)
            fb = _lmin(b * C + (1 - b) * B)
        else:
            hi, b, fb = b, a, fa
            a = hi - g * (hi - lo)
            fa = _lmin(a * C + (1 - a) * B)
    cands = [(0.0, _lmin(B)), (1.0, _lmin(C)), (0.5 * (lo + hi), _lmin(0.5 * (lo + hi) * C + (1 - 0.5 * (lo + hi)) * B))]
    t, val = max(cands, key=lambda tv: tv[1])
    return t, val


def find_psd_combination(basis: list, eps_psd: float = EPS_PSD, start: int = 0):
    """Greedy pairwise search for a nonzero PSD matrix in span(basis).

    Keeps a running candidate and mixes in each basis element (or its negative)
    at the weight that maximizes the smallest eigenvalue. Returns None when the
    final candidate is not PSD or is numerically zero.
    """
    mats = [sym(smat(b)) if np.ndim(b) == 1 else sym(b) for b in basis]
    if not mats:
        return None
    mats = mats[start % len(mats):] + mats[:start % len(mats)]
    cur = max((mats[0], -mats[0]), key=_lmin)
    for B in mats[1:]:
        best = None
        for cand in (B, -B):
            t, val = _best_mix(cur, cand)
            if best is None or val > best[1]:
                best = (t, val, cand)
        t, _, cand = best
        cur = t * cur + (1 - t) * cand
    scale = float(np.abs(cur).max()) if cur.size else 0.0
    if scale <= 1e-9:
        return None
    if _lmin(cur) < -eps_psd * scale:
        return None
    return cur


def reduce(
    Z,
    cons: ConstraintSet,
    sigma: int = SIGMA,
    eps_rank: float = EPS_RANK,
    eps_psd: float = EPS_PSD,
) -> RankReductionReport:
    Z = sym(Z)
    if Z.shape[0] != cons.dim and cons.mats:
        raise RankReductionError(f"Z is {Z.shape[0]}x{Z.shape[0]} but constraints are {cons.dim}x{cons.dim}")
    w = eig_sym(Z)[0]
    if w.size and w[-1] < -eps_psd * max(w[0], 1.0):
        raise RankReductionError(f"Z is not PSD (lambda_min = {w[-1]:.3e})")
    mats = list(cons.mats)
    if cons.objective is not None:
        mats.append(cons.objective)
    v0 = np.array([float(np.sum(M * Z)) for M in cons.mats])
    obj0 = float(np.sum(cons.objective * Z)) if cons.objective is not None else None
    scale = cons.scale()

    try:
        k = psd_factor(Z, eps_rank, eps_psd).rank
    except NotPsdError as exc:
        raise RankReductionError(str(exc)) from exc
    ranks = [k]
    residuals, drift, min_eig = [], [], []
    budget = max(k + sigma - 1, 0)
    reason = Termination.BUDGET
    stalls = 0
    it = 0
    while it < budget:
        if ranks[-1] <= 1:
            reason = Termination.RANK1
            break
        it += 1
        R = psd_factor(Z, eps_rank, eps_psd).factor
        rows = np.array([svec(R.T @ M @ R) for M in mats]) if mats else np.zeros((0, R.shape[1] * (R.shape[1] + 1) // 2))
        basis = null_space(rows)
        S = find_psd_combination(basis, eps_psd, start=stalls)
        if S is not None:
            lam = eig_sym(S)[0]
            if lam[-1] >= (1.0 - 1e-9) * lam[0]:
                S = None  # a multiple of I would step to the zero matrix
        if S is None:
            stalls += 1
            if stalls >= sigma:
                reason = Termination.STALLED
                break
            continue
        omega = step_omega(S)
        # step on Z itself so the eigen-tail below eps_rank, which R leaves out, is kept
        Znew = sym(Z + omega * (R @ S @ R.T))
        try:
            k_new = psd_factor(Znew, eps_rank, eps_psd).rank
        except NotPsdError as exc:
            raise RankReductionError(f"iterate left the PSD cone: {exc}") from exc
        Z = Znew
        ranks.append(k_new)
        vals = np.array([float(np.sum(Mc * Z)) for Mc in cons.mats])
        residuals.append(float(np.max(np.abs(vals - v0))) / scale if vals.size else 0.0)
        if obj0 is not None:
            drift.append(abs(float(np.sum(cons.objective * Z)) - obj0) / max(1.0, abs(obj0)))
        ew = eig_sym(Z)[0]
        min_eig.append(float(ew[-1] / ew[0]) if ew[0] > 0 else 0.0)
    else:
        if ranks[-1] <= 1:
            reason = Termination.RANK1
    if ranks[-1] <= 1:
        reason = Termination.RANK1
    return RankReductionReport(it, ranks, Z, reason, residuals, drift, min_eig, stalls)
