"""Primal-dual interior-point solver for block-diagonal SDPs with nonnegative variables.

Infeasible-start path following with the HKM search direction and a Mehrotra
predictor-corrector. Inequality rows get private slack variables, so the engine
works on the standard form ``A v = b, v in K`` with K a product of PSD cones and
a nonnegative orthant.

The Schur complement ``M = A (S^-1 (x) X) A^T`` is assembled block by block from
the entries each block's rows actually touch, then solved by block elimination:
rows that touch a single PSD block (and only private slacks) are eliminated per
block; the remaining coupling rows form a small dense system.

Presolve removes diagonal entries pinned to zero by ``X_ii = 0`` rows (such
pins leave no interior) together with rows that become empty.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .sdpproblem import SdpBlockProblem


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"
    NUM_ERROR = "NumError"


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    infeas_tol: float = 1e-8
    reg: float = 1e-12
    reg_retry: float = 1e-9
    step_frac: float = 0.98
    no_progress: int = 15
    sigma_min: float = 0.0
    verbose: bool = False


@dataclass
class SdpSolution:
    X: dict
    y: dict
    duals: np.ndarray
    S: dict
    status: Status
    iterations: int
    gap: float
    pres: float
    dres: float
    pobj: float
    dobj: float
    time: float
    history: list = field(default_factory=list)
    message: str = ""

    @property
    def objective(self) -> float:
        return self.pobj

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


class _SchurFail(RuntimeError):
    pass


@dataclass
class _Group:
    n: int
    first: int
    count: int
    vstart: int

    @property
    def vlen(self):
        return self.count * self.n * self.n


@dataclass
class _BlockRows:
    block: int
    local: np.ndarray  # positions in the local ordering of this block
    coup: np.ndarray  # coupling-row indices
    A: sp.csr_matrix  # rows (local then coupling) x used entries
    P: np.ndarray
    Q: np.ndarray
    lp_diag_rows: np.ndarray  # local positions having private LP vars
    lp_diag_cols: np.ndarray  # corresponding LP columns (global)
    lp_diag_coef: np.ndarray


class _Conic:
    """Standard-form data ``min c.v s.t. A v = b`` over PSD blocks followed by LP vars."""

    def __init__(self, dims, n_lp, A, b, c):
        self.dims = list(dims)
        order = sorted(range(len(dims)), key=lambda k: dims[k])
        if order != list(range(len(dims))):
            raise ValueError("blocks must be sorted by dimension")
        self.groups: list[_Group] = []
        self.offsets = []
        off = 0
        for k, n in enumerate(self.dims):
            if not self.groups or self.groups[-1].n != n:
                self.groups.append(_Group(n, k, 0, off))
            self.groups[-1].count += 1
            self.offsets.append(off)
            off += n * n
        self.n_psd = off
        self.n_lp = n_lp
        self.group_of = {g.first + k: (gi, k) for gi, g in enumerate(self.groups) for k in range(g.count)}
        self.A = sp.csr_matrix(A)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.m = self.A.shape[0]
        self.nu = sum(self.dims) + n_lp
        self._analyze()

    def block_of_col(self, cols):
        offs = np.asarray(self.offsets + [self.n_psd])
        return np.searchsorted(offs, cols, side="right") - 1

    def _analyze(self):
        A = self.A.tocsr()
        m = self.m
        psd_mask = A.indices < self.n_psd
        row_of = np.repeat(np.arange(m), np.diff(A.indptr))
        blk = np.full(A.indices.size, -1)
        if self.dims:
            blk[psd_mask] = self.block_of_col(A.indices[psd_mask])
        lp_cols = A.indices[~psd_mask]
        lp_count = np.bincount(lp_cols - self.n_psd, minlength=self.n_lp) if self.n_lp else np.zeros(0, int)

        row_blocks = [set() for _ in range(m)]
        row_shared_lp = np.zeros(m, dtype=bool)
        for r, b_, col, is_psd in zip(row_of, blk, A.indices, psd_mask):
            if is_psd:
                row_blocks[r].add(int(b_))
            elif lp_count[col - self.n_psd] > 1:
                row_shared_lp[r] = True

        local_of = np.full(m, -1)
        for r in range(m):
            if len(row_blocks[r]) == 1 and not row_shared_lp[r]:
                local_of[r] = next(iter(row_blocks[r]))
        self.coupling = np.flatnonzero(local_of < 0)
        coup_pos = np.full(m, -1)
        coup_pos[self.coupling] = np.arange(self.coupling.size)
        self.local_rows = [np.flatnonzero(local_of == k) for k in range(len(self.dims))]

        touching = [[] for _ in self.dims]
        for r in self.coupling:
            for k in row_blocks[r]:
                touching[k].append(r)

        Acsc = A.tocsc()
        self.block_rows: list[_BlockRows] = []
        for k, n in enumerate(self.dims):
            loc = self.local_rows[k]
            cpl = np.asarray(touching[k], dtype=int)
            rows = np.concatenate([loc, cpl]).astype(int)
            if rows.size == 0:
                continue
            sub = A[rows][:, self.offsets[k]:self.offsets[k] + n * n].tocsc()
            used = np.flatnonzero(np.diff(sub.indptr))
            Ab = sub[:, used].tocsr()
            P, Q = np.divmod(used, n)
            # private LP vars of local rows
            lr, lc, lv = [], [], []
            for pos, r in enumerate(loc):
                s, e = A.indptr[r], A.indptr[r + 1]
                for col, val in zip(A.indices[s:e], A.data[s:e]):
                    if col >= self.n_psd:
                        lr.append(pos)
                        lc.append(col - self.n_psd)
                        lv.append(val)
            self.block_rows.append(
                _BlockRows(k, np.arange(loc.size), coup_pos[cpl] if cpl.size else np.zeros(0, int),
                           Ab, P, Q, np.asarray(lr, int), np.asarray(lc, int), np.asarray(lv, float))
            )
        # LP contributions among coupling rows
        Alp = Acsc[:, self.n_psd:]
        self.A_lp_coup = Alp[self.coupling].tocsr() if self.n_lp else None
        # rows with no block at all that are local cannot exist; rows touching no
        # block and no LP var make M singular
        self.coup_pos = coup_pos
        self.local_of = local_of


class _Fact:
    """Cholesky factor of a Jacobi-scaled SPD matrix."""

    __slots__ = ("cf", "d")

    def __init__(self, cf, d):
        self.cf, self.d = cf, d

    def solve(self, r):
        d = self.d if r.ndim == 1 else self.d[:, None]
        return d * sla.cho_solve(self.cf, d * r, check_finite=False)


class _TriFact:
    """D = R^T R with R upper triangular."""

    __slots__ = ("R",)

    def __init__(self, R):
        self.R = R

    def solve(self, r):
        z = sla.solve_triangular(self.R, r, trans="T", check_finite=False)
        return sla.solve_triangular(self.R, z, check_finite=False)


# blocks up to this many matrix entries eliminate their local rows by QR
_QR_MAX_COLS = 64


def _eliminate_qr(Fl, priv, Fc, o):
    """Eliminate local rows with D = Fl Fl^T + priv priv^T + reg diag(D).

    Returns the factor of D, the coupling block B = Fl Fc^T and the Schur
    contribution Fc Fc^T - B^T D^-1 B, formed as G G^T with G the part of Fc
    orthogonal to the local rows so that it cannot lose definiteness.
    """
    nl = Fl.shape[0]
    dg = np.einsum("ij,ij->i", Fl, Fl) + np.einsum("ij,ij->i", priv, priv)
    dg = np.maximum(dg, 1e-300)
    for r in (o.reg, o.reg_retry):
        Faug = np.hstack([Fl, priv, np.diag(np.sqrt(r * dg))])
        Qf, Rf = np.linalg.qr(Faug.T)
        if np.all(np.isfinite(Rf)) and np.min(np.abs(np.diag(Rf))) > 0:
            break
    else:
        raise _SchurFail("local Schur block factorization failed")
    Fc_aug = np.zeros((Fc.shape[0], Faug.shape[1]))
    Fc_aug[:, :Fc.shape[1]] = Fc
    G = Fc_aug - (Fc_aug @ Qf) @ Qf.T
    return _TriFact(Rf), Fl @ Fc.T, G @ G.T


def _chol(M, reg, reg_retry):
    # scale to unit diagonal first so the regularization is relative per row;
    # rows of vanishing blocks otherwise get swamped by an absolute shift
    diag = np.diag(M).copy()
    top = float(diag.max()) if diag.size else 1.0
    diag = np.maximum(diag, 1e-30 * max(top, 1e-300))
    dsc = 1.0 / np.sqrt(diag)
    Ms = M * dsc[:, None] * dsc[None, :]
    for r in (reg, reg_retry):
        try:
            cf = sla.cho_factor(Ms + r * np.eye(M.shape[0]), lower=True, check_finite=False)
            return _Fact(cf, dsc)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            continue
    raise _SchurFail("Schur complement factorization failed after regularization")


class _Engine:
    def __init__(self, data: _Conic, opts: SolverOptions, obj_scale: float = 1.0):
        self.d = data
        self.o = opts
        self.obj_scale = obj_scale
        self.reason = None

    # --- cone helpers -------------------------------------------------------
    def views(self, v):
        d = self.d
        return [v[g.vstart:g.vstart + g.vlen].reshape(g.count, g.n, g.n) for g in d.groups]

    def lp(self, v):
        return v[self.d.n_psd:]

    def initial(self):
        d = self.d
        v = np.zeros(d.n_psd + d.n_lp)
        s = np.zeros_like(v)
        y = np.zeros(d.m)
        A = d.A
        bnorm = np.abs(d.b)
        for g, Xg, Sg in zip(d.groups, self.views(v), self.views(s)):
            for k in range(g.count):
                blk = g.first + k
                off = d.offsets[blk]
                sub = A[:, off:off + g.n * g.n]
                rn = np.sqrt(np.asarray(sub.multiply(sub).sum(axis=1)).ravel())
                touched = rn > 0
                ratio = np.max((1 + bnorm[touched]) / (1 + rn[touched])) if touched.any() else 1.0
                cn = np.linalg.norm(d.c[off:off + g.n * g.n])
                xi = max(10.0, np.sqrt(g.n), np.sqrt(g.n) * ratio)
                eta = max(10.0, np.sqrt(g.n), rn.max() if rn.size else 0.0, cn)
                Xg[k] = xi * np.eye(g.n)
                Sg[k] = eta * np.eye(g.n)
        if d.n_lp:
            sub = A[:, d.n_psd:]
            rn = np.sqrt(np.asarray(sub.multiply(sub).sum(axis=1)).ravel())
            touched = rn > 0
            ratio = np.max((1 + bnorm[touched]) / (1 + rn[touched])) if touched.any() else 1.0
            nl = d.n_lp
            xi = max(10.0, np.sqrt(nl), np.sqrt(nl) * ratio)
            eta = max(10.0, np.sqrt(nl), rn.max() if rn.size else 0.0, np.linalg.norm(d.c[d.n_psd:]))
            v[d.n_psd:] = xi
            s[d.n_psd:] = eta
        return v, y, s

    # --- Schur complement ---------------------------------------------------
    def factor(self, v, s):
        """Form the Schur system from Gram factors.

        With X = R R^T and S^-1 = Q Q^T the HKM matrix is M_ij = <Q^T A_i R, Q^T A_j R>,
        so every block contribution is assembled as F F^T. Rounding then stays
        relative to the diagonal, which matters once X and S^-1 have entries many
        orders apart.
        """
        d, o = self.d, self.o
        Rs, Qs, Sinv = [], [], []
        for X, S in zip(self.views(v), self.views(s)):
            lx, Ux = np.linalg.eigh(X)
            ls, Us = np.linalg.eigh(S)
            R = Ux * np.sqrt(np.maximum(lx, 0.0))[:, None, :]
            Q = Us / np.sqrt(np.maximum(ls, 1e-300))[:, None, :]
            Rs.append(R)
            Qs.append(Q)
            Sinv.append(Q @ np.swapaxes(Q, 1, 2))
        self.Sinv = Sinv
        x_lp, s_lp = self.lp(v), self.lp(s)
        w_lp = x_lp / s_lp if d.n_lp else np.zeros(0)
        nC = d.coupling.size
        E = np.zeros((nC, nC))
        if d.n_lp and nC:
            Alc = d.A_lp_coup @ sp.diags(np.sqrt(w_lp))
            E += (Alc @ Alc.T).toarray()
        self.local = []
        for br in d.block_rows:
            gi, k = d.group_of[br.block]
            n = d.dims[br.block]
            Kf = (Qs[gi][k][br.P][:, :, None] * Rs[gi][k][br.Q][:, None, :]).reshape(br.P.size, n * n)
            F = br.A @ Kf
            nl = br.local.size
            if not nl:
                E[np.ix_(br.coup, br.coup)] += F @ F.T
                continue
            Fl = F[:nl]
            priv = np.zeros((nl, br.lp_diag_rows.size))
            if priv.size:
                priv[br.lp_diag_rows, np.arange(priv.shape[1])] = br.lp_diag_coef * np.sqrt(w_lp[br.lp_diag_cols])
            Fc = F[nl:]
            if n * n <= _QR_MAX_COLS:
                fact, B, Ec = _eliminate_qr(Fl, priv, Fc, o)
            else:
                fact = _chol(Fl @ Fl.T + priv @ priv.T, o.reg, o.reg_retry)
                B = Fl @ Fc.T
                Ec = Fc @ Fc.T - B.T @ fact.solve(B)
            if br.coup.size:
                E[np.ix_(br.coup, br.coup)] += Ec
            self.local.append((br, fact, B))
        self.Ef = _chol(E, o.reg, o.reg_retry) if nC else None

    def solve_schur(self, r):
        d = self.d
        rc = r[d.coupling].copy()
        sol = np.zeros(d.m)
        cached = []
        for br, Df, B in self.local:
            rows = d.local_rows[br.block]
            zl = Df.solve(r[rows])
            cached.append(zl)
            if br.coup.size:
                rc[br.coup] -= B.T @ zl
        yc = self.Ef.solve(rc) if self.Ef is not None else rc
        sol[d.coupling] = yc
        for (br, Df, B), zl in zip(self.local, cached):
            rows = d.local_rows[br.block]
            if br.coup.size:
                sol[rows] = zl - Df.solve(B @ yc[br.coup])
            else:
                sol[rows] = zl
        return sol

    # --- direction ----------------------------------------------------------
    def direction(self, v, s, Rd, rp, Gpsd, glp):
        """Solve the HKM Newton system. ``Gpsd`` per group (or None), ``glp`` vector."""
        d = self.d
        Xv, Rv = self.views(v), self.views(Rd)
        H = np.zeros_like(v)
        XRS = np.zeros_like(v)
        Hv, XRSv = self.views(H), self.views(XRS)
        for gi, (X, R, Si) in enumerate(zip(Xv, Rv, self.Sinv)):
            G = Gpsd[gi] if Gpsd is not None else 0.0
            Hv[gi][...] = (0.5 * (G + np.swapaxes(G, 1, 2)) if Gpsd is not None else 0.0) - X
            XRSv[gi][...] = X @ R @ Si
        if d.n_lp:
            x, sl = self.lp(v), self.lp(s)
            H[d.n_psd:] = glp - x
            XRS[d.n_psd:] = x * self.lp(Rd) / sl
        rhs = rp - d.A @ H + d.A @ XRS
        dy = self.solve_schur(rhs)
        dX, dS = self._recover(v, s, Rd, H, dy)
        # iterative refinement against the unfactored operator: A dX must equal rp
        for _ in range(2):
            err = rp - d.A @ dX
            if np.linalg.norm(err) <= 1e-14 * (1 + np.linalg.norm(rp)):
                break
            dy = dy + self.solve_schur(err)
            dX, dS = self._recover(v, s, Rd, H, dy)
        return dX, dy, dS

    def _recover(self, v, s, Rd, H, dy):
        d = self.d
        dS = Rd - d.A.T @ dy
        dX = np.zeros_like(v)
        dXv, dSv, Hv = self.views(dX), self.views(dS), self.views(H)
        for gi, (X, Si) in enumerate(zip(self.views(v), self.Sinv)):
            T = X @ dSv[gi] @ Si
            dXv[gi][...] = Hv[gi] - 0.5 * (T + np.swapaxes(T, 1, 2))
        if d.n_lp:
            x, sl = self.lp(v), self.lp(s)
            dX[d.n_psd:] = H[d.n_psd:] - x * self.lp(dS) / sl
        return dX, dS

    def max_step(self, v, dv):
        d = self.d
        alpha = np.inf
        for X, dX in zip(self.views(v), self.views(dv)):
            L = np.linalg.cholesky(X)  # v is interior by construction
            T = np.linalg.solve(L, dX)
            T = np.linalg.solve(L, np.swapaxes(T, 1, 2))
            T = 0.5 * (T + np.swapaxes(T, 1, 2))
            lmin = np.linalg.eigvalsh(T)[:, 0].min()
            if lmin < 0:
                alpha = min(alpha, -1.0 / lmin)
        if d.n_lp:
            x, dx = self.lp(v), self.lp(dv)
            neg = dx < 0
            if neg.any():
                alpha = min(alpha, float(np.min(-x[neg] / dx[neg])))
        return alpha

    def interior(self, v):
        for X in self.views(v):
            try:
                np.linalg.cholesky(X)
            except np.linalg.LinAlgError:
                return False
        return bool(np.all(self.lp(v) > 0))

    def take_step(self, v, dv, alpha):
        # the step bound is inexact when the iterate is badly conditioned; back off
        # until the new point is safely interior
        for _ in range(40):
            nv = v + alpha * dv
            if self.interior(nv):
                return nv, alpha
            alpha *= 0.7
        raise np.linalg.LinAlgError("cannot stay in the cone interior")

    # --- main loop ----------------------------------------------------------
    def run(self, history: list):
        d, o = self.d, self.o
        v, y, s = self.initial()
        if d.nu == 0:
            # presolve removed every variable; remaining rows were checked already
            history.append({"iter": 0, "pobj": 0.0, "dobj": 0.0, "pres": 0.0, "dres": 0.0,
                            "gap": 0.0, "mu": 0.0, "infeas_term": 0.0})
            return v, y, s, Status.OPTIMAL, 0, (0.0, 0.0, 0.0)
        bnorm, cnorm = np.linalg.norm(d.b), np.linalg.norm(d.c)
        status = Status.ITER_LIMIT
        stall = 0
        it = 0
        meas = (np.inf, np.inf, np.inf)
        best = (np.inf, None)
        since_best = 0
        for it in range(o.max_iter + 1):
            rp = d.b - d.A @ v
            Rd = d.c - d.A.T @ y - s
            pobj, dobj = float(d.c @ v), float(d.b @ y)
            compl = float(v @ s)
            mu = compl / d.nu
            pres = np.linalg.norm(rp) / (1 + bnorm)
            dres = np.linalg.norm(Rd) / (1 + cnorm)
            # gap in original objective units so the 1 + |obj| guard is scale-free
            sc = self.obj_scale
            gap = sc * max(abs(pobj - dobj), compl) / (1 + sc * (abs(pobj) + abs(dobj)))
            meas = (pres, dres, gap)
            # c.v - b.y = v.s + Rd.v - rp.y, so infeasible iterates may show a
            # negative gap bounded by the residual terms
            infeas_term = abs(float(Rd @ v)) + abs(float(rp @ y))
            history.append({"iter": it, "pobj": pobj, "dobj": dobj, "pres": pres, "dres": dres,
                            "gap": gap, "mu": mu, "infeas_term": infeas_term})
            if o.verbose:
                print(f"{it:3d} pobj={pobj: .8e} dobj={dobj: .8e} pres={pres:.1e} dres={dres:.1e} gap={gap:.1e}")
            if max(meas) <= o.tol:
                status = Status.OPTIMAL
                break
            if max(meas) < best[0]:
                best = (max(meas), (v.copy(), y.copy(), s.copy(), it, meas))
                since_best = 0
            elif max(dobj, -pobj) <= 1.0 / np.sqrt(o.infeas_tol):
                # diverging iterates are judged by their certificates instead
                since_best += 1
                if since_best >= o.no_progress:
                    # a stall along a diverging ray is read with a looser certificate
                    big = 1.0 / np.sqrt(o.infeas_tol)
                    loose = 100.0 * o.infeas_tol
                    if dobj > big and np.linalg.norm(d.A.T @ y + s) / dobj < loose:
                        status = Status.INFEASIBLE
                    elif -pobj > big and np.linalg.norm(d.A @ v) / (-pobj) < loose:
                        status = Status.UNBOUNDED
                    else:
                        self.reason = "no progress"
                        status = Status.NUM_ERROR
                    break
            # certificates only count once the iterates have diverged
            big = 1.0 / np.sqrt(o.infeas_tol)
            if dobj > big:
                cert = np.linalg.norm(d.A.T @ y + s) / dobj
                if cert < o.infeas_tol:
                    status = Status.INFEASIBLE
                    break
            if -pobj > big:
                cert = np.linalg.norm(d.A @ v) / (-pobj)
                if cert < o.infeas_tol:
                    status = Status.UNBOUNDED
                    break
            if it == o.max_iter:
                status = Status.ITER_LIMIT
                break
            try:
                self.factor(v, s)
                # predictor
                dXa, dya, dSa = self.direction(v, s, Rd, rp, None, np.zeros(d.n_lp))
                ap = min(1.0, self.max_step(v, dXa))
                ad = min(1.0, self.max_step(s, dSa))
                mu_aff = float((v + ap * dXa) @ (s + ad * dSa)) / d.nu
                sigma = min(1.0, max(o.sigma_min, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
                # corrector
                G = []
                for gi, (dXg, dSg, Si) in enumerate(zip(self.views(dXa), self.views(dSa), self.Sinv)):
                    n = dXg.shape[1]
                    G.append((sigma * mu * np.eye(n) - dXg @ dSg) @ Si)
                glp = np.zeros(d.n_lp)
                if d.n_lp:
                    glp = (sigma * mu - self.lp(dXa) * self.lp(dSa)) / self.lp(s)
                dX, dy, dS = self.direction(v, s, Rd, rp, G, glp)
                ap = min(1.0, o.step_frac * self.max_step(v, dX))
                ad = min(1.0, o.step_frac * self.max_step(s, dS))
            except (_SchurFail, np.linalg.LinAlgError) as exc:
                self.reason = repr(exc)
                status = Status.NUM_ERROR
                break
            if not (np.isfinite(ap) and np.isfinite(ad)):
                status = Status.NUM_ERROR
                break
            try:
                v, ap = self.take_step(v, dX, ap)
                s, ad = self.take_step(s, dS, ad)
            except np.linalg.LinAlgError as exc:
                self.reason = repr(exc)
                status = Status.NUM_ERROR
                break
            y = y + ad * dy
            if max(ap, ad) < 1e-9:
                stall += 1
                if stall >= 3:
                    self.reason = "stall"
                    status = Status.NUM_ERROR
                    break
            else:
                stall = 0
        if status in (Status.NUM_ERROR, Status.ITER_LIMIT) and best[1] is not None and best[0] < max(meas):
            v, y, s, _, meas = best[1]
        return v, y, s, status, it, meas


# --- problem compilation ------------------------------------------------------


@dataclass
class _Compiled:
    data: _Conic
    block_names: list  # sorted order (kept blocks)
    kept: dict  # name -> kept index array (all blocks, including removed)
    lp_names: list
    row_map: np.ndarray  # compiled row -> constraint index
    row_scale: np.ndarray
    b_scale: float
    c_scale: float
    infeasible_presolve: bool = False


def _presolve_pins(prob: SdpBlockProblem):
    pinned = {b: set() for b in prob.blocks}
    dropped = set()
    for k, con in enumerate(prob.constraints):
        if con.sense != "==" or con.lin or len(con.terms) != 1 or con.rhs != 0.0:
            continue
        (b, M), = con.terms.items()
        nz = [(ij, v) for ij, v in M.entries.items() if v != 0.0]
        if len(nz) == 1 and nz[0][0][0] == nz[0][0][1]:
            pinned[b].add(nz[0][0][0])
            dropped.add(k)
    return pinned, dropped


def compile_problem(prob: SdpBlockProblem) -> _Compiled:
    pinned, dropped = _presolve_pins(prob)
    kept = {b: np.array([i for i in range(n) if i not in pinned[b]], dtype=int) for b, n in prob.blocks.items()}
    newidx = {}
    for b, n in prob.blocks.items():
        m = np.full(n, -1)
        m[kept[b]] = np.arange(kept[b].size)
        newidx[b] = m
    names = [b for b in prob.blocks if kept[b].size > 0]
    names.sort(key=lambda b: kept[b].size)
    dims = [int(kept[b].size) for b in names]
    offsets = {}
    off = 0
    for b, n in zip(names, dims):
        offsets[b] = off
        off += n * n
    n_psd = off

    slack_rows = [k for k, con in enumerate(prob.constraints) if con.sense == "<=" and k not in dropped]
    lp_names = list(prob.nonneg)
    lp_index = {v: i for i, v in enumerate(lp_names)}

    rows, cols, vals, rhs, row_map = [], [], [], [], []
    infeasible = False
    slack_cols = []
    r = 0
    for k, con in enumerate(prob.constraints):
        if k in dropped:
            continue
        entries = []
        for b, M in con.terms.items():
            nb, ix = dims[names.index(b)] if b in offsets else 0, newidx[b]
            if b not in offsets:
                continue
            o = offsets[b]
            for (i, j), val in M.entries.items():
                if val == 0.0:
                    continue
                ii, jj = ix[i], ix[j]
                if ii < 0 or jj < 0:
                    continue
                entries.append((o + ii * nb + jj, val))
                if ii != jj:
                    entries.append((o + jj * nb + ii, val))
        lin = [(n_psd + lp_index[v], a) for v, a in con.lin.items() if a != 0.0]
        if not entries and not lin:
            tol = 1e-9 * (1 + abs(con.rhs))
            if (con.sense == "==" and abs(con.rhs) > tol) or (con.sense == "<=" and con.rhs < -tol):
                infeasible = True
            continue
        for c_, v_ in entries + lin:
            rows.append(r)
            cols.append(c_)
            vals.append(v_)
        if con.sense == "<=":
            slack_cols.append((r, k))
        rhs.append(con.rhs)
        row_map.append(k)
        r += 1
    m = r
    n_var = len(lp_names)
    n_lp = n_var + len(slack_cols)
    for idx, (rr, k) in enumerate(slack_cols):
        rows.append(rr)
        cols.append(n_psd + n_var + idx)
        vals.append(1.0)
        lp_names.append(f"slack:{prob.constraints[k].name}")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n_psd + n_lp))
    A.sum_duplicates()
    b = np.asarray(rhs, dtype=float)

    c = np.zeros(n_psd + n_lp)
    for bname, M in prob.objective.items():
        if bname not in offsets:
            continue
        o, nb, ix = offsets[bname], dims[names.index(bname)], newidx[bname]
        for (i, j), val in M.entries.items():
            ii, jj = ix[i], ix[j]
            if ii < 0 or jj < 0:
                continue
            c[o + ii * nb + jj] += val
            if ii != jj:
                c[o + jj * nb + ii] += val
    for vname, cost in prob.costs.items():
        c[n_psd + lp_index[vname]] += cost

    return _finish_compile(dims, n_lp, A, b, c, names, kept, lp_names, np.asarray(row_map, int), infeasible)


def _finish_compile(dims, n_lp, A, b, c, names, kept, lp_names, row_map, infeasible=False):
    rn = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel()) if A.shape[0] else np.zeros(0)
    rn[rn == 0] = 1.0
    row_scale = 1.0 / rn
    A = sp.diags(row_scale) @ A
    b = b * row_scale
    b_scale = max(1.0, float(np.linalg.norm(b)))
    c_scale = max(1.0, float(np.linalg.norm(c)))
    data = _Conic(dims, n_lp, A.tocsr(), b / b_scale, c / c_scale)
    return _Compiled(data, names, kept, lp_names, row_map, row_scale, b_scale, c_scale, infeasible)


def _run(comp: _Compiled, opts: SolverOptions):
    history: list = []
    eng = _Engine(comp.data, opts, comp.b_scale * comp.c_scale)
    t0 = time.perf_counter()
    if comp.infeasible_presolve:
        return None, None, None, Status.INFEASIBLE, 0, (np.inf,) * 3, history, time.perf_counter() - t0, "presolve"
    v, y, s, status, it, meas = eng.run(history)
    return v, y, s, status, it, meas, history, time.perf_counter() - t0, eng.reason or ""


def solve(prob: SdpBlockProblem, opts: SolverOptions | None = None) -> SdpSolution:
    opts = opts or SolverOptions()
    comp = compile_problem(prob)
    v, y, s, status, it, meas, history, elapsed, message = _run(comp, opts)
    scale = comp.b_scale * comp.c_scale
    for h in history:
        h["pobj"] = h["pobj"] * scale + prob.obj_const
        h["dobj"] = h["dobj"] * scale + prob.obj_const
        h["infeas_term"] = h["infeas_term"] * scale
    d = comp.data
    X, S, yv = {}, {}, {}
    duals = np.zeros(len(prob.constraints))
    if v is None:
        for bname, n in prob.blocks.items():
            X[bname] = np.zeros((n, n))
            S[bname] = np.zeros((n, n))
        yv = {name: 0.0 for name in prob.nonneg}
        return SdpSolution(X, yv, duals, S, status, it, *([np.inf] * 3), np.nan, np.nan, elapsed, history, message)
    v = v * comp.b_scale
    s = s * comp.c_scale
    for bname, n in prob.blocks.items():
        Xf = np.zeros((n, n))
        Sf = np.zeros((n, n))
        if bname in comp.block_names:
            k = comp.block_names.index(bname)
            nb = d.dims[k]
            o = d.offsets[k]
            ix = comp.kept[bname]
            Xb = v[o:o + nb * nb].reshape(nb, nb)
            Sb = s[o:o + nb * nb].reshape(nb, nb)
            Xf[np.ix_(ix, ix)] = 0.5 * (Xb + Xb.T)
            Sf[np.ix_(ix, ix)] = 0.5 * (Sb + Sb.T)
        X[bname] = Xf
        S[bname] = Sf
    for i, name in enumerate(prob.nonneg):
        yv[name] = float(v[d.n_psd + i])
    duals[comp.row_map] = y * comp.row_scale * comp.c_scale
    pobj = float(d.c @ (v / comp.b_scale)) * scale + prob.obj_const
    dobj = float(d.b @ y) * scale + prob.obj_const
    pres, dres, gap = meas
    return SdpSolution(X, yv, duals, S, status, it, gap, pres, dres, pobj, dobj, elapsed, history, message)


@dataclass
class LpSolution:
    x: np.ndarray
    status: Status
    objective: float
    duals_eq: np.ndarray
    duals_ub: np.ndarray
    iterations: int
    gap: float
    history: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == Status.OPTIMAL


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, opts: SolverOptions | None = None) -> LpSolution:
    """min c.x  s.t.  A_ub x <= b_ub,  A_eq x == b_eq,  x >= 0."""
    opts = opts or SolverOptions()
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = sp.csr_matrix((0, n)) if A_eq is None else sp.csr_matrix(A_eq, dtype=float)
    A_ub = sp.csr_matrix((0, n)) if A_ub is None else sp.csr_matrix(A_ub, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    me, mu = A_eq.shape[0], A_ub.shape[0]
    A = sp.bmat([[A_eq, sp.csr_matrix((me, mu))], [A_ub, sp.eye(mu)]], format="csr") if mu else A_eq
    A = sp.csr_matrix(A)
    b = np.concatenate([b_eq, b_ub])
    cc = np.concatenate([c, np.zeros(mu)])
    # drop empty rows after checking their feasibility
    nz = np.diff(A.indptr) > 0
    infeasible = False
    for r in np.flatnonzero(~nz):
        if abs(b[r]) > 1e-9 * (1 + abs(b[r])):
            infeasible = True
    keep = np.flatnonzero(nz)
    comp = _finish_compile([], n + mu, A[keep], b[keep], cc, [], {}, [], keep, infeasible)
    v, y, s, status, it, meas, history, _, _ = _run(comp, opts)
    if v is None:
        return LpSolution(np.full(n, np.nan), status, np.nan, np.zeros(me), np.zeros(mu), 0, np.inf, history)
    v = v * comp.b_scale
    duals = np.zeros(me + mu)
    duals[keep] = y * comp.row_scale * comp.c_scale
    x = v[:n]
    return LpSolution(x, status, float(c @ x), duals[:me], duals[me:], it, meas[2], history)
