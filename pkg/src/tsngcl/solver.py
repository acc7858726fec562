"""Branch-and-bound over disjunctions with difference-constraint propagation.

Once every disjunction has a side fixed, the system is a pure difference
system: feasibility is a negative-cycle check on its constraint graph and the
componentwise least solution is read off the shortest-path closure.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .constraints import DiffConstraint, ProblemInstance

log = logging.getLogger(__name__)

INF = 1 << 40
DEFAULT_NODE_BUDGET = 1_000_000


class Infeasible(Exception):
    pass


@dataclass
class ScheduleSolution:
    method: str
    status: str  # optimal | budget | infeasible
    values: list[int] = field(default_factory=list)
    offsets: dict = field(default_factory=dict)  # (stream, link) -> mt
    latencies: dict = field(default_factory=dict)  # stream -> ps
    objective: Fraction | None = None  # mt
    nodes: int = 0
    wall_time: float = 0.0
    reason: str | None = None

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "objective_mt": None if self.objective is None else str(self.objective),
            "offsets": [{"stream": s, "link": list(l), "offset_mt": v}
                        for (s, l), v in self.offsets.items()],
            "latency_ps": dict(self.latencies),
            "stats": {"nodes": self.nodes, "wall_time_s": round(self.wall_time, 6)},
            "reason": self.reason,
        }


def _node(i, n):
    return n if i is None else i


class _Closure:
    """All-pairs shortest paths of the constraint graph (edge y->x weight b for x - y <= b)."""

    def __init__(self, problem: ProblemInstance):
        n = len(problem.vars)
        self.n = n
        D = np.full((n + 1, n + 1), INF, dtype=np.int64)
        np.fill_diagonal(D, 0)
        for i, v in enumerate(problem.vars):
            D[n, i] = min(D[n, i], v.upper)
            D[i, n] = min(D[i, n], 0)
        for c in problem.hard:
            y, x = _node(c.y, n), _node(c.x, n)
            D[y, x] = min(D[y, x], c.bound)
        for k in range(n + 1):
            col, row = D[:, k:k + 1], D[k:k + 1, :]
            cand = np.where((col < INF) & (row < INF), col + row, INF)
            np.minimum(D, cand, out=D)
        if (np.diag(D) < 0).any():
            raise Infeasible("hard constraints contain a negative cycle")
        self.D = D

    @staticmethod
    def add(D: np.ndarray, x: int, y: int, b: int) -> np.ndarray | None:
        if D[y, x] <= b:
            return D
        if D[x, y] < INF and D[x, y] + b < 0:
            return None
        col, row = D[:, y:y + 1], D[x:x + 1, :]
        cand = np.where((col < INF) & (row < INF), col + b + row, INF)
        return np.minimum(D, cand)


class BranchAndBound:
    def __init__(self, problem: ProblemInstance, node_budget: int = DEFAULT_NODE_BUDGET):
        self.p = problem
        self.budget = node_budget
        n = len(problem.vars)
        self.n = n
        for d in problem.disjunctions:
            if len(d.left) != 1 or len(d.right) != 1:
                raise ValueError("solver expects single-constraint disjunction sides")
        dis = problem.disjunctions
        self.lx = np.array([_node(d.left[0].x, n) for d in dis], dtype=np.int64)
        self.ly = np.array([_node(d.left[0].y, n) for d in dis], dtype=np.int64)
        self.lb = np.array([d.left[0].bound for d in dis], dtype=np.int64)
        self.rx = np.array([_node(d.right[0].x, n) for d in dis], dtype=np.int64)
        self.ry = np.array([_node(d.right[0].y, n) for d in dis], dtype=np.int64)
        self.rb = np.array([d.right[0].bound for d in dis], dtype=np.int64)
        # most contended port first
        per_port: dict = {}
        for d in dis:
            per_port[d.port] = per_port.get(d.port, 0) + 1
        self.order = sorted(range(len(dis)), key=lambda i: (-per_port[dis[i].port], i))
        free = [l for l in problem.latencies if not l.pinned]
        self.first = np.array([l.first for l in free], dtype=np.int64)
        self.last = np.array([l.last for l in free], dtype=np.int64)
        self.const = sum((l.constant - l.lambda_min for l in free), Fraction(0))
        self.nodes = 0
        self.best_obj: Fraction | None = None
        self.best_vec: list[int] | None = None
        self.exhausted = False

    # -- helpers -----------------------------------------------------------
    def _status(self, D, idx):
        lx, ly, lb = self.lx[idx], self.ly[idx], self.lb[idx]
        rx, ry, rb = self.rx[idx], self.ry[idx], self.rb[idx]
        ent = (D[ly, lx] <= lb) | (D[ry, rx] <= rb)
        dl, dr = D[lx, ly], D[rx, ry]
        imp_l = (dl < INF) & (dl + lb < 0)
        imp_r = (dr < INF) & (dr + rb < 0)
        return ent, imp_l, imp_r

    def _propagate(self, D, open_idx):
        while open_idx.size:
            ent, imp_l, imp_r = self._status(D, open_idx)
            if (imp_l & imp_r & ~ent).any():
                return None, open_idx
            open_idx = open_idx[~ent]
            imp_l, imp_r = imp_l[~ent], imp_r[~ent]
            forced = np.flatnonzero(imp_l | imp_r)
            if not forced.size:
                break
            k = forced[0]
            d = open_idx[k]
            if imp_l[k]:
                D = _Closure.add(D, self.rx[d], self.ry[d], self.rb[d])
            else:
                D = _Closure.add(D, self.lx[d], self.ly[d], self.lb[d])
            if D is None:
                return None, open_idx
        return D, open_idx

    def _bound(self, D) -> Fraction:
        if not self.first.size:
            return self.const
        return int((-D[self.last, self.first]).sum()) + self.const

    def _better(self, obj, vec) -> bool:
        if self.best_obj is None or obj < self.best_obj:
            return True
        return obj == self.best_obj and vec < self.best_vec

    def _prunable(self, lb, least) -> bool:
        if self.best_obj is None:
            return False
        if lb > self.best_obj:
            return True
        return lb == self.best_obj and least > self.best_vec

    # -- search ------------------------------------------------------------
    def run(self, D0):
        open0 = np.array(self.order, dtype=np.int64)
        stack = [(D0, open0)]
        while stack:
            if self.nodes >= self.budget:
                self.exhausted = True
                break
            D, open_idx = stack.pop()
            self.nodes += 1
            D, open_idx = self._propagate(D, open_idx)
            if D is None:
                continue
            least = [int(v) for v in -D[:self.n, self.n]]
            lb = self._bound(D)
            if self._prunable(lb, least):
                continue
            if not open_idx.size:
                self._leaf(D, least, lb)
                continue
            d = open_idx[0]
            rest = open_idx[1:]
            lv = np.append(np.array(least, dtype=np.int64), 0)
            viol_l = lv[self.lx[d]] - lv[self.ly[d]] - self.lb[d]
            viol_r = lv[self.rx[d]] - lv[self.ry[d]] - self.rb[d]
            sides = [(self.lx[d], self.ly[d], self.lb[d]), (self.rx[d], self.ry[d], self.rb[d])]
            if viol_r < viol_l:
                sides.reverse()
            # push the preferred side last so it is explored first
            for x, y, b in reversed(sides):
                D2 = _Closure.add(D, x, y, b)
                if D2 is not None:
                    stack.append((D2, rest))

    def _leaf(self, D, least, lb):
        obj = self._objective(least)
        if obj == lb:
            vec = least
        else:
            obj, vec = _optimise_leaf(D, self.n, self.first, self.last, self.const)
        if self._better(obj, vec):
            self.best_obj, self.best_vec = obj, vec

    def _objective(self, vec) -> Fraction:
        if not self.first.size:
            return self.const
        v = np.array(vec)
        return int((v[self.last] - v[self.first]).sum()) + self.const


def _optimise_leaf(D, n, first, last, const):
    """Exact optimum and lexicographic minimum of a difference system with a latency objective."""
    from scipy.optimize import LinearConstraint, milp

    rows, ub = [], []
    for u in range(n + 1):
        for v in range(n + 1):
            if u == v or D[u, v] >= INF:
                continue
            # x_v - x_u <= D[u, v]
            r = np.zeros(n)
            if v < n:
                r[v] += 1
            if u < n:
                r[u] -= 1
            rows.append(r)
            ub.append(D[u, v])
    A = np.array(rows)
    b = np.array(ub, dtype=float)
    c = np.zeros(n)
    np.add.at(c, last, 1.0)
    np.add.at(c, first, -1.0)
    cons = [LinearConstraint(A, -np.inf, b)]
    integ = np.ones(n)
    res = milp(c, constraints=cons, integrality=integ)
    if not res.success:
        raise RuntimeError(f"leaf optimisation failed: {res.message}")
    best = int(round(res.fun))
    cons.append(LinearConstraint(c.reshape(1, -1), -np.inf, best))
    fixed = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        extra = [LinearConstraint(np.eye(n)[j].reshape(1, -1), val, val) for j, val in fixed]
        r = milp(e, constraints=cons + extra, integrality=integ)
        fixed.append((i, int(round(r.fun))))
    vec = [v for _, v in fixed]
    return best + const, vec


def solve(problem: ProblemInstance, node_budget: int = DEFAULT_NODE_BUDGET) -> ScheduleSolution:
    """Minimise total excess latency; ties go to the lexicographically smallest offsets."""
    t0 = time.perf_counter()
    method = problem.method.value
    if problem.infeasible_reason:
        return ScheduleSolution(method, "infeasible", reason=problem.infeasible_reason,
                                wall_time=time.perf_counter() - t0)
    try:
        closure = _Closure(problem)
    except Infeasible as exc:
        return ScheduleSolution(method, "infeasible", reason=str(exc), wall_time=time.perf_counter() - t0)
    bb = BranchAndBound(problem, node_budget)
    bb.run(closure.D)
    wall = time.perf_counter() - t0
    if bb.best_vec is None:
        status = "budget" if bb.exhausted else "infeasible"
        reason = "node budget exhausted without a feasible schedule" if bb.exhausted else \
            "every disjunction branch is infeasible"
        return ScheduleSolution(method, status, nodes=bb.nodes, wall_time=wall, reason=reason)
    sol = solution_from_values(problem, bb.best_vec, "budget" if bb.exhausted else "optimal")
    sol.nodes, sol.wall_time = bb.nodes, wall
    log.info("solved %s: objective %s in %d nodes", method, sol.objective, bb.nodes)
    return sol


def solution_from_values(problem: ProblemInstance, values, status="optimal") -> ScheduleSolution:
    offsets = {(v.stream, v.link): int(values[i]) for i, v in enumerate(problem.vars)}
    lat = {l.stream: int(l.value(values) * problem.mt_ps) for l in problem.latencies}
    return ScheduleSolution(problem.method.value, status, list(map(int, values)), offsets, lat,
                            problem.objective(values))


def verify_solution(problem: ProblemInstance, solution: ScheduleSolution | list) -> list[str]:
    """Re-evaluate every constraint independently; an empty list means the solution is valid."""
    values = solution.values if isinstance(solution, ScheduleSolution) else list(solution)
    if len(values) != len(problem.vars):
        return [f"expected {len(problem.vars)} offsets, got {len(values)}"]
    return problem.violations(values)


# ---------------------------------------------------------------------------
# LP export / solution import

def _lp_term(coef, name):
    return f"{'+' if coef >= 0 else '-'} {abs(coef)} {name}" if abs(coef) != 1 else \
        f"{'+' if coef >= 0 else '-'} {name}"


def _lp_row(c: DiffConstraint, names):
    terms = []
    if c.x is not None:
        terms.append(f"+ {names[c.x]}")
    if c.y is not None:
        terms.append(f"- {names[c.y]}")
    return " ".join(terms)


def export_lp(problem: ProblemInstance) -> str:
    """CPLEX-LP text with big-M encoded disjunctions (binary z selects the right side)."""
    names = [v.name for v in problem.vars]
    max_ub = max((v.upper for v in problem.vars), default=0)
    max_b = max((abs(c.bound) for d in problem.disjunctions for c in d.left + d.right), default=0)
    M = problem.hyperperiod + max_ub + max_b
    lines = [f"\\ method {problem.method.value}, hyperperiod {problem.hyperperiod} mt",
             f"\\ objective constant {sum((l.constant - l.lambda_min for l in problem.latencies if not l.pinned), Fraction(0))} mt",
             "Minimize"]
    coef: dict[int, int] = {}
    for l in problem.latencies:
        if l.pinned or l.first == l.last:
            continue
        coef[l.last] = coef.get(l.last, 0) + 1
        coef[l.first] = coef.get(l.first, 0) - 1
    obj = " ".join(_lp_term(c, names[i]) for i, c in sorted(coef.items()) if c)
    lines.append(f" obj: {obj if obj else '0 ' + names[0] if names else '0'}" if obj or names else " obj:")
    lines.append("Subject To")
    for k, c in enumerate(problem.hard):
        lines.append(f" h{k}: {_lp_row(c, names)} <= {c.bound}")
    for k, d in enumerate(problem.disjunctions):
        for j, c in enumerate(d.left):
            lines.append(f" d{k}l{j}: {_lp_row(c, names)} - {M} z{k} <= {c.bound}")
        for j, c in enumerate(d.right):
            lines.append(f" d{k}r{j}: {_lp_row(c, names)} + {M} z{k} <= {c.bound + M}")
    lines.append("Bounds")
    for v in problem.vars:
        lines.append(f" 0 <= {v.name} <= {v.upper}")
    if problem.disjunctions:
        lines.append("Binaries")
        lines.extend(f" z{k}" for k in range(len(problem.disjunctions)))
    if names:
        lines.append("General")
        lines.extend(f" {n}" for n in names)
    lines.append("End")
    return "\n".join(lines) + "\n"


def format_solution(problem: ProblemInstance, solution: ScheduleSolution) -> str:
    return "".join(f"{v.name}={solution.values[i]}\n" for i, v in enumerate(problem.vars))


def import_solution(problem: ProblemInstance, text: str) -> ScheduleSolution:
    """Parse ``name=value`` lines (extra names such as binaries are ignored)."""
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected name=value")
        name, value = (s.strip() for s in line.split("=", 1))
        vals[name] = int(round(float(value)))
    missing = [v.name for v in problem.vars if v.name not in vals]
    if missing:
        raise ValueError(f"solution misses {len(missing)} offsets, e.g. {missing[0]}")
    return solution_from_values(problem, [vals[v.name] for v in problem.vars], "imported")
