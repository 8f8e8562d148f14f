"""Containers for mixed-integer quadratic programs.

``LinExpr`` is a small affine-expression type over named variables;
``ProblemBuilder`` accumulates variables, linear rows and quadratic cost and
freezes everything into a dense ``MiqpProblem``.  Every variable carries a
finite box (the solvers rely on bounded feasible sets), binaries are flagged
in a mask, and the objective convention is

    J(x) = 0.5 x' H x + f' x + const.

A plain-text LP-style dump is provided for cross-checking individual
problems against external solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

Number = Union[int, float]


class LinExpr:
    """Immutable affine expression: sum(coef * var) + const."""

    __slots__ = ("coef", "const")

    def __init__(self, coef: Mapping[str, float] | None = None, const: float = 0.0):
        object.__setattr__(self, "coef", dict(coef or {}))
        object.__setattr__(self, "const", float(const))

    def __setattr__(self, *_args):
        raise AttributeError("LinExpr is immutable")

    @staticmethod
    def constant(value: float) -> "LinExpr":
        return LinExpr({}, value)

    @staticmethod
    def variable(name: str, coef: float = 1.0) -> "LinExpr":
        return LinExpr({name: float(coef)}, 0.0)

    @staticmethod
    def combination(names: Iterable[str], coefs: Iterable[float],
                    const: float = 0.0) -> "LinExpr":
        return LinExpr({n: float(c) for n, c in zip(names, coefs) if c != 0.0}, const)

    def __add__(self, other: Union["LinExpr", Number]) -> "LinExpr":
        if isinstance(other, (int, float)):
            return LinExpr(self.coef, self.const + other)
        merged = dict(self.coef)
        for name, c in other.coef.items():
            merged[name] = merged.get(name, 0.0) + c
        return LinExpr(merged, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr({n: -c for n, c in self.coef.items()}, -self.const)

    def __sub__(self, other: Union["LinExpr", Number]) -> "LinExpr":
        return self + (-other if isinstance(other, LinExpr) else -float(other))

    def __rsub__(self, other: Number) -> "LinExpr":
        return (-self) + float(other)

    def __mul__(self, scalar: Number) -> "LinExpr":
        s = float(scalar)
        return LinExpr({n: c * s for n, c in self.coef.items()}, self.const * s)

    __rmul__ = __mul__

    def value(self, assignment: Mapping[str, float]) -> float:
        return self.const + sum(c * assignment[n] for n, c in self.coef.items())

    def __repr__(self):
        parts = [f"{c:+g}*{n}" for n, c in sorted(self.coef.items())]
        parts.append(f"{self.const:+g}")
        return " ".join(parts)


@dataclass
class _Var:
    name: str
    lb: float
    ub: float
    binary: bool


@dataclass(frozen=True)
class MiqpProblem:
    """Frozen dense MIQP: minimize 0.5 x'Hx + f'x + const over the rows."""

    names: tuple[str, ...]
    H: np.ndarray
    f: np.ndarray
    obj_const: float
    A: np.ndarray          # A x <= b
    b: np.ndarray
    Aeq: np.ndarray        # Aeq x == beq
    beq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray     # bool mask
    infeasible_reason: str | None = None

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x + self.obj_const)

    def max_violation(self, x: np.ndarray) -> float:
        v = 0.0
        if self.A.size:
            v = max(v, float(np.max(self.A @ x - self.b, initial=0.0)))
        if self.Aeq.size:
            v = max(v, float(np.max(np.abs(self.Aeq @ x - self.beq), initial=0.0)))
        v = max(v, float(np.max(self.lb - x, initial=0.0)))
        v = max(v, float(np.max(x - self.ub, initial=0.0)))
        return v

    def assignment(self, x: np.ndarray) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, x)}


@dataclass(frozen=True)
class SolveResult:
    """Solver outcome: status, incumbent and branch-and-bound statistics."""

    status: str                      # "optimal" | "infeasible" | "iteration-limit"
    objective: float | None = None
    x: np.ndarray | None = None
    assignment: dict[str, float] | None = None
    nodes: int = 0
    gap: float | None = None
    qp_solves: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class ProblemBuilder:
    """Accumulates one MIQP; not thread-safe, use one builder per problem."""

    def __init__(self):
        self._vars: list[_Var] = []
        self._index: dict[str, int] = {}
        self._rows: list[tuple[dict[str, float], float]] = []      # expr <= rhs
        self._eq_rows: list[tuple[dict[str, float], float]] = []   # expr == rhs
        self._quad: dict[tuple[str, str], float] = {}
        self._lin: dict[str, float] = {}
        self._obj_const = 0.0
        self._infeasible: str | None = None

    # -- variables ---------------------------------------------------------

    def add_continuous(self, name: str, lb: float, ub: float) -> str:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        if not (np.isfinite(lb) and np.isfinite(ub) and lb <= ub):
            raise ValueError(f"variable {name!r} needs a finite box, got [{lb}, {ub}]")
        self._index[name] = len(self._vars)
        self._vars.append(_Var(name, float(lb), float(ub), binary=False))
        return name

    def add_binary(self, name: str) -> str:
        self.add_continuous(name, 0.0, 1.0)
        self._vars[-1].binary = True
        return name

    def has_variable(self, name: str) -> bool:
        return name in self._index

    # -- constraints ---------------------------------------------------------

    def _normalize(self, lhs: Union[LinExpr, Number], rhs: Union[LinExpr, Number]
                   ) -> tuple[dict[str, float], float]:
        expr = (lhs if isinstance(lhs, LinExpr) else LinExpr.constant(lhs)) \
            - (rhs if isinstance(rhs, LinExpr) else LinExpr.constant(rhs))
        for n in expr.coef:
            if n not in self._index:
                raise ValueError(f"unknown variable {n!r} in constraint")
        return dict(expr.coef), -expr.const

    def add_leq(self, lhs, rhs) -> None:
        coef, b = self._normalize(lhs, rhs)
        if not coef:
            if b < -1e-12:
                self.mark_infeasible(f"constant constraint violated ({-b:.3g} > 0)")
            return
        self._rows.append((coef, b))

    def add_geq(self, lhs, rhs) -> None:
        self.add_leq(rhs if isinstance(rhs, LinExpr) else LinExpr.constant(rhs),
                     lhs if isinstance(lhs, LinExpr) else LinExpr.constant(lhs))

    def add_eq(self, lhs, rhs) -> None:
        coef, b = self._normalize(lhs, rhs)
        if not coef:
            if abs(b) > 1e-12:
                self.mark_infeasible(f"constant equality violated (|{b:.3g}| > 0)")
            return
        self._eq_rows.append((coef, b))

    def mark_infeasible(self, reason: str) -> None:
        if self._infeasible is None:
            self._infeasible = reason

    @property
    def infeasible_reason(self) -> str | None:
        return self._infeasible

    # -- objective -----------------------------------------------------------

    def add_squared_cost(self, expr: Union[LinExpr, Number], weight: float,
                         target: float = 0.0) -> None:
        """Accumulate weight * (expr - target)^2 into the objective.

        ``_quad`` stores monomial coefficients q_ij of x_i x_j with i <= j;
        ``build`` converts them to the 0.5 x'Hx convention.
        """
        e = (expr if isinstance(expr, LinExpr) else LinExpr.constant(expr)) - target
        names = list(e.coef)
        for i, ni in enumerate(names):
            ci = e.coef[ni]
            for nj in names[i:]:
                cj = e.coef[nj]
                key = (ni, nj) if self._index[ni] <= self._index[nj] else (nj, ni)
                factor = 1.0 if ni == nj else 2.0
                self._quad[key] = self._quad.get(key, 0.0) + factor * weight * ci * cj
        for ni in names:
            self._lin[ni] = self._lin.get(ni, 0.0) + 2.0 * weight * e.coef[ni] * e.const
        self._obj_const += weight * e.const ** 2

    def add_linear_cost(self, expr: Union[LinExpr, Number], weight: float = 1.0) -> None:
        e = expr if isinstance(expr, LinExpr) else LinExpr.constant(expr)
        for n, c in e.coef.items():
            self._lin[n] = self._lin.get(n, 0.0) + weight * c
        self._obj_const += weight * e.const

    # -- assembly ------------------------------------------------------------

    def build(self, validate: bool = True) -> MiqpProblem:
        n = len(self._vars)
        names = tuple(v.name for v in self._vars)
        H = np.zeros((n, n))
        for (ni, nj), q in self._quad.items():
            i, j = self._index[ni], self._index[nj]
            if i == j:
                H[i, i] += 2.0 * q
            else:
                H[i, j] += q
                H[j, i] += q
        f = np.zeros(n)
        for ni, c in self._lin.items():
            f[self._index[ni]] += c

        def stack(rows):
            if not rows:
                return np.zeros((0, n)), np.zeros(0)
            mat = np.zeros((len(rows), n))
            rhs = np.zeros(len(rows))
            for k, (coef, b) in enumerate(rows):
                for name, c in coef.items():
                    mat[k, self._index[name]] = c
                rhs[k] = b
            return mat, rhs

        A, b = stack(self._rows)
        Aeq, beq = stack(self._eq_rows)
        lb = np.array([v.lb for v in self._vars])
        ub = np.array([v.ub for v in self._vars])
        binary = np.array([v.binary for v in self._vars], dtype=bool)
        problem = MiqpProblem(names=names, H=H, f=f, obj_const=self._obj_const,
                              A=A, b=b, Aeq=Aeq, beq=beq, lb=lb, ub=ub,
                              binary=binary, infeasible_reason=self._infeasible)
        if validate:
            _validate(problem)
        return problem


def _validate(p: MiqpProblem) -> None:
    if p.n == 0:
        return
    if not np.allclose(p.H, p.H.T, atol=1e-12):
        raise ValueError("objective quadratic term is not symmetric")
    scale = 1.0 + float(np.max(np.abs(p.H))) if p.H.size else 1.0
    if p.H.size:
        w = np.linalg.eigvalsh(p.H)
        if w.min() < -1e-8 * scale:
            raise ValueError(f"objective quadratic term not PSD (min eig {w.min():.3g})")
    # every binary must appear somewhere beyond its own box
    for i in np.flatnonzero(p.binary):
        used = (p.A.size and np.any(p.A[:, i] != 0.0)) or \
               (p.Aeq.size and np.any(p.Aeq[:, i] != 0.0)) or \
               np.any(p.H[:, i] != 0.0) or p.f[i] != 0.0
        if not used:
            raise ValueError(f"binary {p.names[i]!r} appears in no constraint or objective")


def dump_lp(p: MiqpProblem, path: str | Path) -> None:
    """Write an LP-format-style text rendering for external cross-checks."""
    lines = ["\\ MIQP dump", "Minimize", " obj:"]
    terms = [f" {c:+.17g} {n}" for n, c in zip(p.names, p.f) if c != 0.0]
    quad = []
    for i in range(p.n):
        for j in range(i, p.n):
            if p.H[i, j] != 0.0:
                # bracket convention: [x'Qx]/2 with Q = H
                pair = f"{p.names[i]} * {p.names[j]}" if i != j else f"{p.names[i]} ^ 2"
                quad.append(f" {2 * p.H[i, j] if i != j else p.H[i, j]:+.17g} {pair}")
    obj = "".join(terms)
    if quad:
        obj += " + [" + "".join(quad) + " ] / 2"
    if p.obj_const:
        obj += f" {p.obj_const:+.17g}"
    lines.append(obj if obj.strip() else " 0 " + (p.names[0] if p.n else ""))
    lines.append("Subject To")
    for k in range(p.A.shape[0]):
        row = "".join(f" {c:+.17g} {p.names[i]}" for i, c in enumerate(p.A[k]) if c != 0.0)
        lines.append(f" c{k}:{row} <= {p.b[k]:.17g}")
    for k in range(p.Aeq.shape[0]):
        row = "".join(f" {c:+.17g} {p.names[i]}" for i, c in enumerate(p.Aeq[k]) if c != 0.0)
        lines.append(f" e{k}:{row} = {p.beq[k]:.17g}")
    lines.append("Bounds")
    for i, name in enumerate(p.names):
        lines.append(f" {p.lb[i]:.17g} <= {name} <= {p.ub[i]:.17g}")
    if np.any(p.binary):
        lines.append("Binaries")
        lines.append(" " + " ".join(np.asarray(p.names)[p.binary]))
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")
