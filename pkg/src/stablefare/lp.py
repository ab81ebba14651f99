"""Dense two-phase simplex over exact rationals or floats.

Constraints are given as sparse rows ``({column: coefficient}, sense, rhs)``
with ``sense`` one of ``"<="``, ``">="``, ``"="``. All variables are
non-negative. Pivoting uses Dantzig's rule and falls back to Bland's rule
after a run of degenerate pivots, so the method terminates and is fully
deterministic. Exact mode works on lists of ``Fraction``; float mode runs
the same pivot rules on a numpy array.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ._num import frac

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

Row = tuple  # (dict[int, coef], sense, rhs)


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str
    x: list | None = None
    objective: Fraction | float | None = None
    iterations: int = 0


def _setup(n: int, rows: Sequence[Row], exact: bool, tol: float, max_iter: int):
    """Build the phase-one tableau; returns ``None`` when a constant row is violated."""
    conv = frac if exact else float
    eps = 0 if exact else tol
    zero = Fraction(0) if exact else 0.0

    norm = []
    for coefs, sense, rhs in rows:
        c = {j: conv(v) for j, v in coefs.items() if v != 0}
        b = conv(rhs)
        if not c:
            ok = {"<=": b >= -eps, ">=": b <= eps, "=": abs(b) <= eps}[sense]
            if not ok:
                return None
            continue
        if b < 0:
            c = {j: -v for j, v in c.items()}
            b = -b
            sense = {"<=": ">=", ">=": "<=", "=": "="}[sense]
        norm.append((c, sense, b))

    n_slack = sum(1 for _, s, _ in norm if s != "=")
    n_art = sum(1 for _, s, _ in norm if s != "<=")
    width = n + n_slack + n_art
    art_start = n + n_slack
    T = []
    basis = []
    si, ai = n, art_start
    for c, sense, b in norm:
        row = [zero] * (width + 1)
        for j, v in c.items():
            row[j] = v
        row[width] = b
        if sense == "<=":
            row[si] = conv(1)
            basis.append(si)
            si += 1
        elif sense == ">=":
            row[si] = conv(-1)
            si += 1
            row[ai] = conv(1)
            basis.append(ai)
            ai += 1
        else:
            row[ai] = conv(1)
            basis.append(ai)
            ai += 1
        T.append(row)
    if not exact:
        return _FloatTableau(T, basis, width, eps, zero, max_iter), art_start, n_art
    return _Tableau(T, basis, width, eps, zero, max_iter), art_start, n_art


def _phase_one(state: "_Tableau", art_start: int, n_art: int, conv) -> bool:
    if not n_art:
        return True
    cost = [state.zero] * state.width
    for j in range(art_start, state.width):
        cost[j] = conv(-1)
    state.set_objective(cost)
    if state.run(allowed=art_start + n_art) != OPTIMAL:
        raise LPError("phase one did not terminate normally")
    if state.value() < -state.eps:
        return False
    state.expel_artificials(art_start)
    return True


def _primal(state: "_Tableau", n: int, exact: bool) -> list:
    x = [state.zero] * n
    for i, bj in enumerate(state.basis):
        if bj < n:
            x[bj] = state.T[i][state.width]
    if not exact:
        x = [0.0 if abs(v) <= state.eps else float(v) for v in x]
    return x


def solve_lp(n: int, objective: Mapping[int, object], rows: Sequence[Row], *,
             maximize: bool = True, exact: bool = True, tol: float = 1e-9,
             max_iter: int = 100_000) -> LPResult:
    """Optimize ``objective . x`` subject to ``rows`` and ``x >= 0``."""
    res = solve_lexicographic(n, [(objective, maximize)], rows, exact=exact, tol=tol, max_iter=max_iter)
    if res.status != OPTIMAL:
        return res
    return LPResult(OPTIMAL, res.x, res.objective[0], res.iterations)


def solve_lexicographic(n: int, stages: Sequence[tuple], rows: Sequence[Row], *,
                        exact: bool = True, tol: float = 1e-9, max_iter: int = 100_000) -> LPResult:
    """Optimize a sequence of ``(objective, maximize)`` pairs, each over the previous optimal face.

    After each stage, nonbasic columns with a nonzero reduced cost are pinned
    at zero, which restricts the feasible set to exactly that stage's optimal
    face; the next stage then continues from the current basis. The result's
    ``objective`` is the list of stage values.
    """
    conv = frac if exact else float
    setup = _setup(n, rows, exact, tol, max_iter)
    if setup is None:
        return LPResult(INFEASIBLE)
    state, art_start, n_art = setup
    if not _phase_one(state, art_start, n_art, conv):
        return LPResult(INFEASIBLE, iterations=state.iterations)
    values = []
    banned: set = set()
    for objective, maximize in stages:
        sign = 1 if maximize else -1
        cost = [state.zero] * state.width
        for j, v in objective.items():
            cost[j] = sign * conv(v)
        state.set_objective(cost)
        if state.run(allowed=art_start, banned=banned) == UNBOUNDED:
            return LPResult(UNBOUNDED, iterations=state.iterations)
        x = _primal(state, n, exact)
        values.append(sum((conv(v) * x[j] for j, v in objective.items()), state.zero))
        basic = set(state.basis)
        for j in range(art_start):
            if j not in basic and state.obj[j] < -state.eps:
                banned.add(j)
    return LPResult(OPTIMAL, x, values, state.iterations)


class _Tableau:
    def __init__(self, T, basis, width, eps, zero, max_iter):
        self.T = T
        self.basis = basis
        self.width = width
        self.eps = eps
        self.zero = zero
        self.max_iter = max_iter
        self.iterations = 0
        self.obj = None

    def set_objective(self, cost):
        # reduced-cost row: r_j = c_j - c_B B^-1 A_j; last entry holds -z
        r = list(cost) + [self.zero]
        for i, bj in enumerate(self.basis):
            cb = cost[bj]
            if cb:
                row = self.T[i]
                for j in range(self.width + 1):
                    if row[j]:
                        r[j] -= cb * row[j]
        self.obj = r

    def value(self):
        return -self.obj[self.width]

    def pivot(self, pr: int, pc: int) -> None:
        T = self.T
        prow = T[pr]
        pv = prow[pc]
        nz = [j for j in range(self.width + 1) if prow[j]]
        for j in nz:
            prow[j] = prow[j] / pv
        prow[pc] = pv / pv  # exact 1 in either number type
        for i, row in enumerate(T):
            if i == pr:
                continue
            f = row[pc]
            if f:
                for j in nz:
                    row[j] -= f * prow[j]
                row[pc] = self.zero
        f = self.obj[pc]
        if f:
            for j in nz:
                self.obj[j] -= f * prow[j]
            self.obj[pc] = self.zero
        self.basis[pr] = pc

    def run(self, allowed: int, banned=frozenset()) -> str:
        eps = self.eps
        width = self.width
        degenerate = 0
        basic = set(self.basis)
        while True:
            if self.iterations > self.max_iter:
                raise LPError("simplex iteration limit reached")
            r = self.obj
            bland = degenerate > 50
            pc = -1
            best = eps
            for j in range(allowed):
                if r[j] > eps and j not in basic and j not in banned:
                    if bland:
                        pc = j
                        break
                    if r[j] > best:
                        best = r[j]
                        pc = j
            if pc < 0:
                return OPTIMAL
            pr = -1
            ratio = None
            for i, row in enumerate(self.T):
                a = row[pc]
                if a > eps:
                    q = row[width] / a
                    if ratio is None or q < ratio - eps or (
                            abs(q - ratio) <= eps and self.basis[i] < self.basis[pr]):
                        ratio = q
                        pr = i
            if pr < 0:
                return UNBOUNDED
            degenerate = degenerate + 1 if ratio <= eps else 0
            basic.discard(self.basis[pr])
            self.pivot(pr, pc)
            basic.add(pc)
            self.iterations += 1

    def expel_artificials(self, art_start: int) -> None:
        eps = self.eps
        keep = []
        for i in range(len(self.T)):
            if self.basis[i] < art_start:
                keep.append(i)
                continue
            row = self.T[i]
            pc = next((j for j in range(art_start) if abs(row[j]) > eps), -1)
            if pc >= 0:
                self.pivot(i, pc)
                keep.append(i)
            # otherwise the row is redundant and is dropped
        self.T = [self.T[i] for i in keep]
        self.basis = [self.basis[i] for i in keep]
        for row in self.T:
            for j in range(art_start, self.width):
                row[j] = self.zero


class _FloatTableau(_Tableau):
    """Same pivot rules as :class:`_Tableau`, vectorized with numpy."""

    def __init__(self, T, basis, width, eps, zero, max_iter):
        arr = np.array(T, dtype=float).reshape(len(T), width + 1)
        super().__init__(arr, basis, width, eps, zero, max_iter)

    def set_objective(self, cost):
        r = np.append(np.asarray(cost, dtype=float), 0.0)
        cb = r[self.basis] if self.basis else np.zeros(0)
        if len(self.basis):
            r = r - cb @ self.T
        self.obj = r

    def pivot(self, pr: int, pc: int) -> None:
        T = self.T
        T[pr] /= T[pr, pc]
        T[pr, pc] = 1.0
        col = T[:, pc].copy()
        col[pr] = 0.0
        nz = np.nonzero(col)[0]
        if len(nz):
            T[nz] -= np.outer(col[nz], T[pr])
            T[nz, pc] = 0.0
        f = self.obj[pc]
        if f:
            self.obj -= f * T[pr]
            self.obj[pc] = 0.0
        self.basis[pr] = pc

    def run(self, allowed: int, banned=frozenset()) -> str:
        eps = self.eps
        width = self.width
        degenerate = 0
        mask = np.zeros(width + 1, dtype=bool)
        mask[:allowed] = True
        if banned:
            mask[list(banned)] = False
        while True:
            if self.iterations > self.max_iter:
                raise LPError("simplex iteration limit reached")
            cand = mask.copy()
            cand[self.basis] = False
            cand &= self.obj > eps
            idx = np.nonzero(cand)[0]
            if not len(idx):
                return OPTIMAL
            if degenerate > 50:
                pc = int(idx[0])
            else:
                pc = int(idx[np.argmax(self.obj[idx])])
            a = self.T[:, pc]
            rows = np.nonzero(a > eps)[0]
            if not len(rows):
                return UNBOUNDED
            q = self.T[rows, width] / a[rows]
            ratio = q.min()
            tied = rows[q <= ratio + eps]
            basis = np.asarray(self.basis)
            pr = int(tied[np.argmin(basis[tied])])
            degenerate = degenerate + 1 if ratio <= eps else 0
            self.pivot(pr, pc)
            self.iterations += 1

    def expel_artificials(self, art_start: int) -> None:
        eps = self.eps
        keep = []
        for i in range(len(self.T)):
            if self.basis[i] < art_start:
                keep.append(i)
                continue
            nz = np.nonzero(np.abs(self.T[i, :art_start]) > eps)[0]
            if len(nz):
                self.pivot(i, int(nz[0]))
                keep.append(i)
        self.T = self.T[keep]
        self.basis = [self.basis[i] for i in keep]
        self.T[:, art_start:self.width] = 0.0
