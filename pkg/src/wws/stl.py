"""Bounded signal temporal logic over sampled signals.

Concrete syntax (one formula per line in spec files, ``#`` comments)::

    formula := formula 'or' formula
             | formula 'and' formula
             | formula 'until_[a,b]' formula
             | 'alw_[a,b]' formula | 'ev_[a,b]' formula | 'not' formula
             | '(' formula ')' | channel relop number
    relop   := '>=' | '<=' | '>' | '<'

Interval bounds are seconds; the upper bound may be the token ``end``, which
is resolved to the final closed-loop time before monitoring or encoding.
Windows map to sample indices as  {t + ceil(a/h) .. t + floor(b/h)}.

The module provides three consumers of the same AST: a quantitative
robustness monitor (min/max semantics), the horizon bound, and a big-M
mixed-integer encoder that emits into a caller-owned problem builder.  The
monitor works directly on the AST; the encoder first expands temporal
operators into a propositional tree over per-index predicates (negation is
pushed to the leaves during expansion), which keeps the two evaluation paths
independent of each other.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .milp import LinExpr, ProblemBuilder


class StlSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class StlEvaluationError(RuntimeError):
    pass


class StlEncodingError(RuntimeError):
    pass


class _End:
    """Sentinel for the 'end' upper bound."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "end"


END = _End()
Bound = Union[float, _End]

_FLIP = {">=": "<", ">": "<=", "<=": ">", "<": ">="}
_STRICT = {">", "<"}


@dataclass(frozen=True)
class Pred:
    """Linear predicate over named channels: sum(coef * channel) relop const."""

    terms: tuple[tuple[float, str], ...]
    op: str
    const: float

    def __post_init__(self):
        if self.op not in _FLIP:
            raise ValueError(f"bad relation {self.op!r}")

    @property
    def strict(self) -> bool:
        return self.op in _STRICT

    def channels(self) -> tuple[str, ...]:
        return tuple(ch for _, ch in self.terms)

    def negate(self) -> "Pred":
        return Pred(self.terms, _FLIP[self.op], self.const)

    def margin(self, values: Mapping[str, float]) -> float:
        """Signed satisfaction margin; positive means satisfied."""
        expr = sum(c * values[ch] for c, ch in self.terms)
        if self.op in (">=", ">"):
            return expr - self.const
        return self.const - expr


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Alw:
    a: float
    b: Bound
    child: "Formula"


@dataclass(frozen=True)
class Ev:
    a: float
    b: Bound
    child: "Formula"


@dataclass(frozen=True)
class Until:
    a: float
    b: Bound
    left: "Formula"
    right: "Formula"


Formula = Union[Pred, Not, And, Or, Alw, Ev, Until]


# ---------------------------------------------------------------------------
# Parsing and printing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<alw>alw_\[)
  | (?P<ev>ev_\[)
  | (?P<until>until_\[)
  | (?P<and>and\b)
  | (?P<or>or\b)
  | (?P<not>not\b)
  | (?P<end>end\b)
  | (?P<number>[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<relop>>=|<=|>|<)
  | (?P<lpar>\()
  | (?P<rpar>\))
  | (?P<comma>,)
  | (?P<rbrack>\])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise StlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self, kind: str | None = None) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            raise StlSyntaxError(f"expected {kind}, found {tok[1]!r}", tok[2])
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.or_expr()
        tok = self.peek()
        if tok[0] != "eof":
            raise StlSyntaxError(f"trailing input {tok[1]!r}", tok[2])
        return f

    def or_expr(self) -> Formula:
        parts = [self.and_expr()]
        while self.peek()[0] == "or":
            self.take()
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def and_expr(self) -> Formula:
        parts = [self.until_expr()]
        while self.peek()[0] == "and":
            self.take()
            parts.append(self.until_expr())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def until_expr(self) -> Formula:
        f = self.unary()
        while self.peek()[0] == "until":
            self.take()
            a, b = self.bounds()
            rhs = self.unary()
            f = Until(a, b, f, rhs)
        return f

    def unary(self) -> Formula:
        kind, _, _ = self.peek()
        if kind == "alw":
            self.take()
            a, b = self.bounds()
            return Alw(a, b, self.unary())
        if kind == "ev":
            self.take()
            a, b = self.bounds()
            return Ev(a, b, self.unary())
        if kind == "not":
            self.take()
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Formula:
        kind, value, pos = self.peek()
        if kind == "lpar":
            self.take()
            f = self.or_expr()
            self.take("rpar")
            return f
        if kind == "ident":
            self.take()
            op = self.take("relop")[1]
            num = float(self.take("number")[1])
            return Pred(((1.0, value),), op, num)
        raise StlSyntaxError(f"expected a formula, found {value!r}", pos)

    def bounds(self) -> tuple[float, Bound]:
        # the opening 'xx_[' token was already consumed
        a = float(self.take("number")[1])
        self.take("comma")
        kind, value, pos = self.take()
        if kind == "end":
            b: Bound = END
        elif kind == "number":
            b = float(value)
        else:
            raise StlSyntaxError(f"expected a bound, found {value!r}", pos)
        self.take("rbrack")
        if a < 0:
            raise StlSyntaxError("interval start must be non-negative", pos)
        if not isinstance(b, _End) and b < a:
            raise StlSyntaxError("interval end precedes start", pos)
        return a, b


def parse(text: str) -> Formula:
    """Parse one formula from its concrete syntax."""
    return _Parser(text).parse()


def parse_spec_file(text: str) -> list[Formula]:
    """Parse a spec file: one formula per line, '#' starts a comment."""
    formulas = []
    for line in text.splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            formulas.append(parse(body))
    return formulas


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def _fmt_bound(b: Bound) -> str:
    return "end" if isinstance(b, _End) else _fmt_num(b)


def format_formula(f: Formula) -> str:
    """Canonical concrete syntax; parse(format_formula(f)) == f."""

    def wrap(child: Formula) -> str:
        if isinstance(child, (And, Or, Until)):
            return f"({format_formula(child)})"
        return format_formula(child)

    if isinstance(f, Pred):
        if len(f.terms) == 1 and f.terms[0][0] == 1.0:
            lhs = f.terms[0][1]
        else:  # linear predicates beyond the grammar print unambiguously
            lhs = " + ".join(f"{_fmt_num(c)}*{ch}" for c, ch in f.terms)
        return f"{lhs} {f.op} {_fmt_num(f.const)}"
    if isinstance(f, Not):
        return f"not {wrap(f.child)}"
    if isinstance(f, And):
        return " and ".join(
            f"({format_formula(c)})" if isinstance(c, (And, Or)) else format_formula(c)
            for c in f.children)
    if isinstance(f, Or):
        return " or ".join(
            f"({format_formula(c)})" if isinstance(c, Or) else format_formula(c)
            for c in f.children)
    if isinstance(f, Alw):
        return f"alw_[{_fmt_num(f.a)},{_fmt_bound(f.b)}] {wrap(f.child)}"
    if isinstance(f, Ev):
        return f"ev_[{_fmt_num(f.a)},{_fmt_bound(f.b)}] {wrap(f.child)}"
    if isinstance(f, Until):
        return f"{wrap(f.left)} until_[{_fmt_num(f.a)},{_fmt_bound(f.b)}] {wrap(f.right)}"
    raise TypeError(f"not a formula: {f!r}")


def resolve_end(f: Formula, end_time: float) -> Formula:
    """Substitute the 'end' token with a concrete time in seconds."""
    if isinstance(f, Pred):
        return f
    if isinstance(f, Not):
        return Not(resolve_end(f.child, end_time))
    if isinstance(f, And):
        return And(tuple(resolve_end(c, end_time) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(resolve_end(c, end_time) for c in f.children))
    b = end_time if isinstance(f.b, _End) else f.b
    if isinstance(f, Alw):
        return Alw(f.a, b, resolve_end(f.child, end_time))
    if isinstance(f, Ev):
        return Ev(f.a, b, resolve_end(f.child, end_time))
    if isinstance(f, Until):
        return Until(f.a, b, resolve_end(f.left, end_time), resolve_end(f.right, end_time))
    raise TypeError(f"not a formula: {f!r}")


def nnf(f: Formula, negate: bool = False) -> Formula:
    """Negation normal form: negations pushed onto predicates.

    A negated ``until`` is kept wrapped (its dual is not in the grammar);
    the encoder resolves it during window expansion instead.
    """
    if isinstance(f, Pred):
        return f.negate() if negate else f
    if isinstance(f, Not):
        return nnf(f.child, not negate)
    if isinstance(f, And):
        kids = tuple(nnf(c, negate) for c in f.children)
        return Or(kids) if negate else And(kids)
    if isinstance(f, Or):
        kids = tuple(nnf(c, negate) for c in f.children)
        return And(kids) if negate else Or(kids)
    if isinstance(f, Alw):
        child = nnf(f.child, negate)
        return Ev(f.a, f.b, child) if negate else Alw(f.a, f.b, child)
    if isinstance(f, Ev):
        child = nnf(f.child, negate)
        return Alw(f.a, f.b, child) if negate else Ev(f.a, f.b, child)
    if isinstance(f, Until):
        inner = Until(f.a, f.b, nnf(f.left), nnf(f.right))
        return Not(inner) if negate else inner
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Horizon
# ---------------------------------------------------------------------------


def _window_steps(b: Bound, h: float) -> int:
    if isinstance(b, _End):
        raise StlEvaluationError("unbounded interval: resolve 'end' first")
    return math.ceil(b / h - 1e-9)


def horizon(f: Formula, h: float) -> int:
    """Future samples needed to evaluate the formula at one time point."""
    if isinstance(f, Pred):
        return 0
    if isinstance(f, Not):
        return horizon(f.child, h)
    if isinstance(f, (And, Or)):
        return max(horizon(c, h) for c in f.children)
    if isinstance(f, (Alw, Ev)):
        return _window_steps(f.b, h) + horizon(f.child, h)
    if isinstance(f, Until):
        return _window_steps(f.b, h) + max(horizon(f.left, h), horizon(f.right, h))
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Quantitative monitoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampledSignal:
    """Named real-valued channels sampled on a common uniform grid."""

    channels: Mapping[str, np.ndarray]
    h: float
    start_time: float = 0.0

    def __post_init__(self):
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channel length mismatch: {lengths}")
        if self.h <= 0:
            raise ValueError("sampling period must be positive")

    @property
    def length(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    def value(self, t_index: int) -> dict[str, float]:
        return {ch: float(v[t_index]) for ch, v in self.channels.items()}


def _window_indices(t: int, a: float, b: Bound, h: float) -> range:
    if isinstance(b, _End):
        raise StlEvaluationError("unbounded interval: resolve 'end' first")
    lo = t + math.ceil(a / h - 1e-9)
    hi = t + math.floor(b / h + 1e-9)
    return range(lo, hi + 1)


def robustness(f: Formula, signal: SampledSignal, t_index: int = 0,
               strict_shift: float = 0.0) -> float:
    """Quantitative robustness of ``f`` at sample ``t_index``.

    Positive means satisfied with slack.  ``strict_shift`` subtracts a
    margin from strict predicates only; the mixed-integer encoder replaces
    strictness with an epsilon, and passing that epsilon here makes the
    monitor the exact feasibility oracle for the encoding.
    """
    n = signal.length

    def ev(node: Formula, t: int) -> float:
        if isinstance(node, Pred):
            if t < 0 or t >= n:
                raise StlEvaluationError(
                    f"signal too short: predicate needs index {t}, have 0..{n - 1}")
            try:
                rho = node.margin(signal.value(t))
            except KeyError as exc:
                raise StlEvaluationError(f"unknown channel {exc.args[0]!r}") from exc
            return rho - strict_shift if node.strict else rho
        if isinstance(node, Not):
            return -ev(node.child, t)
        if isinstance(node, And):
            return min(ev(c, t) for c in node.children)
        if isinstance(node, Or):
            return max(ev(c, t) for c in node.children)
        if isinstance(node, Alw):
            idx = _window_indices(t, node.a, node.b, signal.h)
            return min((ev(node.child, i) for i in idx), default=math.inf)
        if isinstance(node, Ev):
            idx = _window_indices(t, node.a, node.b, signal.h)
            return max((ev(node.child, i) for i in idx), default=-math.inf)
        if isinstance(node, Until):
            idx = _window_indices(t, node.a, node.b, signal.h)
            best = -math.inf
            for tp in idx:
                rho2 = ev(node.right, tp)
                rho1 = min((ev(node.left, i) for i in range(t, tp)), default=math.inf)
                best = max(best, min(rho2, rho1))
            return best
        raise TypeError(f"not a formula: {node!r}")

    return ev(f, t_index)


# ---------------------------------------------------------------------------
# Mixed-integer encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodingConfig:
    """Big-M derivation and strictness margin for the MILP encoding.

    Per-predicate constants are derived from declared channel ranges with a
    safety factor; ``big_m`` is only a fallback for channels without bounds.
    Strict inequalities are encoded with margin ``eps``.
    """

    channel_bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    eps: float = 1e-6
    big_m: float | None = None
    margin_factor: float = 1.1


# Propositional tree over per-index predicate literals.
@dataclass(frozen=True)
class _PTrue:
    pass


@dataclass(frozen=True)
class _PFalse:
    pass


@dataclass(frozen=True)
class _PDeferred:
    """Obligation whose window lies wholly beyond the bound signal."""


@dataclass(frozen=True)
class _PPred:
    pred: Pred
    t: int


@dataclass(frozen=True)
class _PAnd:
    children: tuple


@dataclass(frozen=True)
class _POr:
    children: tuple


SignalBinding = Mapping[str, Mapping[int, Union[LinExpr, float]]]


@dataclass
class EncodedFormula:
    """What one formula contributed to the problem under construction."""

    binaries: list[str]
    literals: list[str]
    constraints: int
    deferred: bool = False
    infeasible: bool = False


def _fold_constant_margin(pred: Pred, values: Mapping[str, float], eps: float) -> bool:
    rho = pred.margin(values)
    if pred.strict:
        # grace of 1e-9 keeps inputs applied exactly at an encoded band edge
        # (m == eps by construction) folding to true despite float round-off
        return rho >= eps - 1e-9
    return rho >= 0.0


def _available(pred: Pred, binding: SignalBinding, t: int) -> bool:
    return all(ch in binding and t in binding[ch] for ch in pred.channels())


def _expand(f: Formula, t: int, neg: bool, binding: SignalBinding,
            h: float, eps: float):
    """Temporal and negation expansion into a propositional tree.

    Unavailable indices follow the shrinking-window policy: conjunctive
    obligations are deferred to later steps, disjunctive ones are enforced
    over the visible part of the window (stricter, hence sound).  Constant
    (history) samples fold to boolean constants immediately.
    """
    if isinstance(f, Not):
        return _expand(f.child, t, not neg, binding, h, eps)
    if isinstance(f, Pred):
        pred = f.negate() if neg else f
        if not _available(pred, binding, t):
            return _PDeferred()
        vals = {ch: binding[ch][t] for ch in pred.channels()}
        if all(isinstance(v, (int, float)) for v in vals.values()):
            return _PTrue() if _fold_constant_margin(pred, vals, eps) else _PFalse()
        return _PPred(pred, t)
    if isinstance(f, (And, Or)):
        conj = isinstance(f, And) ^ neg
        kids = [_expand(c, t, neg, binding, h, eps) for c in f.children]
        return _combine(kids, conj)
    if isinstance(f, (Alw, Ev)):
        conj = isinstance(f, Alw) ^ neg
        idx = _window_indices(t, f.a, f.b, h)
        kids = [_expand(f.child, i, neg, binding, h, eps) for i in idx]
        return _combine(kids, conj)
    if isinstance(f, Until):
        idx = _window_indices(t, f.a, f.b, h)
        disjuncts = []
        for tp in idx:
            parts = [_expand(f.right, tp, neg, binding, h, eps)]
            parts += [_expand(f.left, i, neg, binding, h, eps) for i in range(t, tp)]
            disjuncts.append(_combine(parts, conj=not neg))
        return _combine(disjuncts, conj=neg)
    raise TypeError(f"not a formula: {f!r}")


def _combine(kids: list, conj: bool):
    """And/Or constant folding with deferral semantics."""
    kept = []
    saw_deferred = False
    for k in kids:
        if isinstance(k, _PDeferred):
            saw_deferred = True
            if conj:
                continue  # conjunct deferred to a later step
            kept.append(k)
        elif isinstance(k, _PTrue):
            if not conj:
                return _PTrue()
        elif isinstance(k, _PFalse):
            if conj:
                return _PFalse()
        else:
            kept.append(k)
    if conj:
        if not kept:
            # distinguish "satisfied now" from "every obligation is beyond
            # the bound horizon"
            return _PDeferred() if saw_deferred else _PTrue()
        if len(kept) == 1:
            return kept[0]
        return _PAnd(tuple(kept))
    # disjunction: visible members only; wholly invisible -> deferred
    visible = [k for k in kept if not isinstance(k, _PDeferred)]
    if not kept:
        return _PFalse()
    if not visible:
        return _PDeferred()
    if len(visible) == 1:
        return visible[0]
    return _POr(tuple(visible))


class _Encoder:
    def __init__(self, builder: ProblemBuilder, binding: SignalBinding,
                 cfg: EncodingConfig, name: str):
        self.builder = builder
        self.binding = binding
        self.cfg = cfg
        self.name = name
        self.pred_literals: dict[tuple[Pred, int], str] = {}
        # ids keyed by predicate identity, so a predicate keeps its name
        # component across receding-horizon steps (warm starts match names)
        self.pred_ids: dict[Pred, int] = {}
        self.result = EncodedFormula(binaries=[], literals=[], constraints=0)
        self.counter = 0

    def fresh(self, tag: str) -> str:
        self.counter += 1
        return f"{self.name}.{tag}{self.counter}"

    def margin_expr(self, pred: Pred, t: int) -> LinExpr:
        expr = LinExpr.constant(0.0)
        for c, ch in pred.terms:
            bound = self.binding[ch][t]
            term = LinExpr.constant(float(bound)) if isinstance(bound, (int, float)) else bound
            expr = expr + c * term
        if pred.op in (">=", ">"):
            return expr - pred.const
        return LinExpr.constant(pred.const) - expr

    def big_m(self, pred: Pred) -> float:
        lo = hi = 0.0
        for c, ch in pred.terms:
            if ch in self.cfg.channel_bounds:
                blo, bhi = self.cfg.channel_bounds[ch]
            elif self.cfg.big_m is not None:
                return self.cfg.big_m
            else:
                raise StlEncodingError(
                    f"no declared bounds for channel {ch!r} and no fallback big-M")
            lo += min(c * blo, c * bhi)
            hi += max(c * blo, c * bhi)
        m_lo, m_hi = lo - pred.const, hi - pred.const
        if pred.op in ("<=", "<"):
            m_lo, m_hi = -m_hi, -m_lo
        return self.cfg.margin_factor * (max(abs(m_lo), abs(m_hi)) + self.cfg.eps + 1.0)

    def eps_of(self, pred: Pred) -> float:
        return self.cfg.eps if pred.strict else 0.0

    def pred_literal(self, node: _PPred) -> str:
        """Binary with two-sided big-M linking: p == 1 iff the margin is met."""
        key = (node.pred, node.t)
        if key in self.pred_literals:
            return self.pred_literals[key]
        pid = self.pred_ids.setdefault(node.pred, len(self.pred_ids))
        p = self.builder.add_binary(f"{self.name}.t{node.t}.p{pid}")
        m = self.big_m(node.pred)
        eps = self.eps_of(node.pred)
        margin = self.margin_expr(node.pred, node.t)
        pvar = LinExpr.variable(p)
        # margin >= -M (1 - p) + eps   and   margin <= M p - eps
        self.builder.add_geq(margin - m * pvar, eps - m)
        self.builder.add_leq(margin - m * pvar, -eps)
        self.result.binaries.append(p)
        self.result.constraints += 2
        self.pred_literals[key] = p
        return p

    def assert_at_least(self, node, lower: Union[LinExpr, float]) -> None:
        """Emit constraints forcing truth(node) >= lower."""
        if isinstance(node, _PTrue):
            return
        if isinstance(node, _PFalse):
            # reachable only for non-constant `lower`; forces lower <= 0
            self.builder.add_leq(_as_expr(lower), 0.0)
            self.result.constraints += 1
            return
        if isinstance(node, _PPred):
            if isinstance(lower, float) and lower >= 1.0:
                eps = self.eps_of(node.pred)
                self.builder.add_geq(self.margin_expr(node.pred, node.t), eps)
                self.result.constraints += 1
                return
            p = self.pred_literal(node)
            self.builder.add_geq(LinExpr.variable(p) - _as_expr(lower), 0.0)
            self.result.constraints += 1
            return
        if isinstance(node, _PAnd):
            for child in node.children:
                self.assert_at_least(child, lower)
            return
        if isinstance(node, _POr):
            kids = node.children
            if len(kids) == 2:
                sel = self.builder.add_continuous(self.fresh("or."), 0.0, 1.0)
                self.result.literals.append(sel)
                sv = LinExpr.variable(sel)
                low = _as_expr(lower)
                # selected share of `lower` goes to each branch
                self.assert_at_least(kids[0], sv)
                self.assert_at_least(kids[1], low - sv)
                return
            sels = []
            for _k in kids:
                s = self.builder.add_continuous(self.fresh("or."), 0.0, 1.0)
                self.result.literals.append(s)
                sels.append(s)
            total = LinExpr.constant(0.0)
            for s in sels:
                total = total + LinExpr.variable(s)
            self.builder.add_geq(total - _as_expr(lower), 0.0)
            self.result.constraints += 1
            for child, s in zip(kids, sels):
                self.assert_at_least(child, LinExpr.variable(s))
            return
        raise TypeError(f"bad propositional node {node!r}")


def _as_expr(v: Union[LinExpr, float]) -> LinExpr:
    return LinExpr.constant(float(v)) if isinstance(v, (int, float)) else v


def _collect_unavailable(f: Formula, t: int, binding: SignalBinding, h: float,
                         out: set) -> None:
    if isinstance(f, Pred):
        if not _available(f, binding, t):
            out.add(t)
    elif isinstance(f, Not):
        _collect_unavailable(f.child, t, binding, h, out)
    elif isinstance(f, (And, Or)):
        for c in f.children:
            _collect_unavailable(c, t, binding, h, out)
    elif isinstance(f, (Alw, Ev)):
        for i in _window_indices(t, f.a, f.b, h):
            _collect_unavailable(f.child, i, binding, h, out)
    elif isinstance(f, Until):
        for tp in _window_indices(t, f.a, f.b, h):
            _collect_unavailable(f.right, tp, binding, h, out)
            for i in range(t, tp):
                _collect_unavailable(f.left, i, binding, h, out)


def encode_formula(builder: ProblemBuilder, f: Formula, binding: SignalBinding,
                   t_index: int, h: float, cfg: EncodingConfig,
                   name: str = "stl",
                   on_unavailable: str = "defer") -> EncodedFormula:
    """Assert that ``f`` holds at sample ``t_index`` over the bound signals.

    History samples appear in ``binding`` as float constants and fold away;
    decision-bound samples appear as affine expressions over problem
    variables.  Window indices with no binding follow the shrinking-horizon
    policy described in :func:`_expand` when ``on_unavailable`` is
    ``"defer"``; with ``"error"`` any uncoverable index raises instead.
    """
    if on_unavailable not in ("defer", "error"):
        raise ValueError(f"bad on_unavailable mode {on_unavailable!r}")
    if on_unavailable == "error":
        missing: set = set()
        _collect_unavailable(f, t_index, binding, h, missing)
        if missing:
            raise StlEncodingError(
                f"window indices {sorted(missing)} are beyond the bound signals")
    tree = _expand(f, t_index, False, binding, h, cfg.eps)
    enc = _Encoder(builder, binding, cfg, name)
    if isinstance(tree, _PFalse):
        builder.mark_infeasible(f"{name}: violated by already-fixed samples")
        enc.result.infeasible = True
        return enc.result
    if isinstance(tree, _PDeferred):
        enc.result.deferred = True
        return enc.result
    enc.assert_at_least(tree, 1.0)
    return enc.result
