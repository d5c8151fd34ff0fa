"""Block-structured conic programs: PSD blocks plus nonnegative scalar variables.

    minimize    sum_b C_b . X_b + c^T y + const
    subject to  sum_b A_ib . X_b + a_i^T y  (== | <=)  rhs_i
                X_b PSD, y >= 0

Coefficient matrices are stored sparsely as upper-triangle entries of a symmetric
matrix (``Sym``); an off-diagonal entry ``(i, j, v)`` stands for both ``M[i, j]``
and ``M[j, i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Sym:
    """Sparse symmetric coefficient matrix (upper-triangle entries)."""

    __slots__ = ("n", "entries")

    def __init__(self, n: int, entries: dict | None = None):
        self.n = n
        self.entries: dict[tuple[int, int], float] = {}
        if entries:
            for (i, j), v in entries.items():
                self.add(i, j, v)

    def add(self, i: int, j: int, v: float) -> "Sym":
        if i > j:
            i, j = j, i
        if not (0 <= i and j < self.n):
            raise IndexError(f"entry ({i}, {j}) outside {self.n}x{self.n}")
        key = (i, j)
        self.entries[key] = self.entries.get(key, 0.0) + float(v)
        return self

    def add_sym(self, other: "Sym", scale: float = 1.0) -> "Sym":
        for (i, j), v in other.entries.items():
            self.add(i, j, scale * v)
        return self

    def scaled(self, a: float) -> "Sym":
        return Sym(self.n, {k: a * v for k, v in self.entries.items()})

    def prune(self, tol: float = 0.0) -> "Sym":
        self.entries = {k: v for k, v in self.entries.items() if abs(v) > tol}
        return self

    def to_dense(self) -> np.ndarray:
        M = np.zeros((self.n, self.n))
        for (i, j), v in self.entries.items():
            M[i, j] = v
            M[j, i] = v
        return M

    @classmethod
    def from_dense(cls, M, tol: float = 0.0) -> "Sym":
        M = np.asarray(M, dtype=float)
        out = cls(M.shape[0])
        iu, ju = np.triu_indices(M.shape[0])
        for i, j in zip(iu, ju):
            v = 0.5 * (M[i, j] + M[j, i])
            if abs(v) > tol:
                out.entries[(int(i), int(j))] = float(v)
        return out

    def dot(self, X) -> float:
        """Frobenius product with a dense symmetric matrix."""
        s = 0.0
        for (i, j), v in self.entries.items():
            s += v * X[i, j] * (1.0 if i == j else 2.0)
        return s

    def norm(self) -> float:
        return float(np.sqrt(sum(v * v * (1.0 if i == j else 2.0) for (i, j), v in self.entries.items())))

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        return f"Sym(n={self.n}, nnz={len(self.entries)})"


@dataclass
class Constraint:
    name: str
    terms: dict[str, Sym]
    lin: dict[str, float]
    rhs: float
    sense: str  # "==" or "<="

    def evaluate(self, X: dict, y: dict) -> float:
        val = sum(M.dot(X[b]) for b, M in self.terms.items())
        val += sum(a * y[v] for v, a in self.lin.items())
        return val

    def violation(self, X: dict, y: dict) -> float:
        lhs = self.evaluate(X, y)
        if self.sense == "==":
            return abs(lhs - self.rhs)
        return max(0.0, lhs - self.rhs)


@dataclass
class SdpBlockProblem:
    blocks: dict[str, int] = field(default_factory=dict)
    nonneg: list[str] = field(default_factory=list)
    objective: dict[str, Sym] = field(default_factory=dict)
    costs: dict[str, float] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)
    obj_const: float = 0.0
    meta: dict = field(default_factory=dict)  # builder-specific index layout
    _names: set = field(default_factory=set, repr=False)
    _vars: set = field(default_factory=set, repr=False)

    def add_block(self, name: str, dim: int) -> str:
        if name in self.blocks:
            raise ValueError(f"duplicate block {name}")
        if dim < 1:
            raise ValueError(f"block {name} must have positive dimension")
        self.blocks[name] = dim
        return name

    def add_var(self, name: str, cost: float = 0.0) -> str:
        if name in self._vars:
            raise ValueError(f"duplicate variable {name}")
        self._vars.add(name)
        self.nonneg.append(name)
        if cost:
            self.costs[name] = float(cost)
        return name

    def add_objective(self, block: str, M: Sym, scale: float = 1.0) -> None:
        if M.n != self.blocks[block]:
            raise ValueError(f"objective term for {block}: dimension {M.n} != {self.blocks[block]}")
        if block not in self.objective:
            self.objective[block] = Sym(M.n)
        self.objective[block].add_sym(M, scale)

    def _add(self, name, terms, lin, rhs, sense) -> Constraint:
        if name in self._names:
            raise ValueError(f"duplicate constraint name {name}")
        for b, M in terms.items():
            if b not in self.blocks:
                raise KeyError(f"constraint {name}: unknown block {b}")
            if M.n != self.blocks[b]:
                raise ValueError(f"constraint {name}: dimension mismatch on block {b}")
        for v in (lin or {}):
            if v not in self._vars:
                raise KeyError(f"constraint {name}: unknown variable {v}")
        con = Constraint(name, dict(terms), dict(lin or {}), float(rhs), sense)
        self._names.add(name)
        self.constraints.append(con)
        return con

    def add_eq(self, name, terms, rhs, lin=None) -> Constraint:
        return self._add(name, terms, lin, rhs, "==")

    def add_le(self, name, terms, rhs, lin=None) -> Constraint:
        return self._add(name, terms, lin, rhs, "<=")

    def add_ge(self, name, terms, rhs, lin=None) -> Constraint:
        neg_terms = {b: M.scaled(-1.0) for b, M in terms.items()}
        neg_lin = {v: -a for v, a in (lin or {}).items()}
        return self._add(name, neg_terms, neg_lin, -rhs, "<=")

    @property
    def eq_constraints(self) -> list[Constraint]:
        return [c for c in self.constraints if c.sense == "=="]

    @property
    def ineq_constraints(self) -> list[Constraint]:
        return [c for c in self.constraints if c.sense == "<="]

    def constraint(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def objective_value(self, X: dict, y: dict) -> float:
        val = self.obj_const
        val += sum(M.dot(X[b]) for b, M in self.objective.items())
        val += sum(c * y[v] for v, c in self.costs.items())
        return val

    def max_violation(self, X: dict, y: dict) -> float:
        return max((c.violation(X, y) for c in self.constraints), default=0.0)

    def copy(self) -> "SdpBlockProblem":
        """Shallow structural copy: constraint list is new, coefficient objects are shared."""
        out = SdpBlockProblem(
            blocks=dict(self.blocks),
            nonneg=list(self.nonneg),
            objective=dict(self.objective),
            costs=dict(self.costs),
            constraints=list(self.constraints),
            obj_const=self.obj_const,
            meta=self.meta,
        )
        out._names = set(self._names)
        out._vars = set(self._vars)
        return out


# --- SDPA sparse format -------------------------------------------------------
#
# The file describes the standard-form equality problem obtained by giving every
# inequality row a slack variable (slacks and nonnegative variables together form
# one diagonal block, written with a negative size). Matrix 0 holds -C, so the
# SDPA dual "max F0 . Y  s.t. Fi . Y = ci" is exactly our minimization.
# The objective constant is written in a comment line ``* obj_const = ...``.


def write_sdpa(prob: SdpBlockProblem, path) -> None:
    names = list(prob.blocks)
    slack_names = [f"slack:{c.name}" for c in prob.constraints if c.sense == "<="]
    lp_names = list(prob.nonneg) + slack_names
    lp_index = {v: k + 1 for k, v in enumerate(lp_names)}
    sizes = [prob.blocks[b] for b in names]
    if lp_names:
        sizes.append(-len(lp_names))
    lp_blk = len(names) + 1
    out = [
        f"* hucsdp SDPA export: {len(prob.constraints)} rows",
        f"* obj_const = {prob.obj_const!r}",
        f"{len(prob.constraints)}",
        f"{len(sizes)}",
        " ".join(str(s) for s in sizes),
        " ".join(repr(c.rhs) for c in prob.constraints) or "0",
    ]
    for k, b in enumerate(names):
        M = prob.objective.get(b)
        if M is not None:
            for (i, j), v in sorted(M.entries.items()):
                if v != 0:
                    out.append(f"0 {k + 1} {i + 1} {j + 1} {-v!r}")
    for v, c in prob.costs.items():
        if c != 0:
            out.append(f"0 {lp_blk} {lp_index[v]} {lp_index[v]} {-c!r}")
    slack_iter = iter(slack_names)
    for r, con in enumerate(prob.constraints, start=1):
        for b, M in con.terms.items():
            k = names.index(b) + 1
            for (i, j), v in sorted(M.entries.items()):
                if v != 0:
                    out.append(f"{r} {k} {i + 1} {j + 1} {v!r}")
        for v, a in con.lin.items():
            if a != 0:
                out.append(f"{r} {lp_blk} {lp_index[v]} {lp_index[v]} {a!r}")
        if con.sense == "<=":
            s = lp_index[next(slack_iter)]
            out.append(f"{r} {lp_blk} {s} {s} 1.0")
    Path(path).write_text("\n".join(out) + "\n")


def read_sdpa(path) -> SdpBlockProblem:
    """Read an SDPA sparse file into an all-equality ``SdpBlockProblem``.

    PSD blocks are named ``B1, B2, ...``; diagonal-block entries become
    nonnegative variables ``d<blk>_<idx>``.
    """
    obj_const = 0.0
    tokens: list[str] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("*") or line.startswith('"'):
            if "obj_const" in line:
                obj_const = float(line.split("=", 1)[1])
            continue
        tokens.extend(line.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " ").split())
    pos = 0
    m = int(tokens[pos]); pos += 1
    nblk = int(tokens[pos]); pos += 1
    sizes = [int(float(t)) for t in tokens[pos:pos + nblk]]; pos += nblk
    rhs = [float(t) for t in tokens[pos:pos + m]]; pos += m
    prob = SdpBlockProblem(obj_const=obj_const)
    for k, s in enumerate(sizes, start=1):
        if s > 0:
            prob.add_block(f"B{k}", s)
        else:
            for i in range(1, -s + 1):
                prob.add_var(f"d{k}_{i}")
    terms: list[dict] = [dict() for _ in range(m + 1)]
    lins: list[dict] = [dict() for _ in range(m + 1)]
    while pos + 5 <= len(tokens):
        mat, blk, i, j = (int(tokens[pos + q]) for q in range(4))
        v = float(tokens[pos + 4])
        pos += 5
        s = sizes[blk - 1]
        if s > 0:
            name = f"B{blk}"
            terms[mat].setdefault(name, Sym(s)).add(i - 1, j - 1, v)
        else:
            if i != j:
                raise ValueError(f"{path}: off-diagonal entry in diagonal block {blk}")
            var = f"d{blk}_{i}"
            lins[mat][var] = lins[mat].get(var, 0.0) + v
    for b, M in terms[0].items():
        prob.add_objective(b, M, -1.0)
    for v, a in lins[0].items():
        prob.costs[v] = prob.costs.get(v, 0.0) - a
    for r in range(1, m + 1):
        prob.add_eq(f"r{r}", terms[r], rhs[r - 1], lin=lins[r])
    return prob
