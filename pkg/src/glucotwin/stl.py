"""Quantitative signal temporal logic over glucose traces.

Formulas are small ASTs over the predicates G >= c and G <= c with boolean
connectives and bounded temporal operators. Robustness follows the standard
quantitative semantics, discretized pointwise at the trace's sample
interval (no interpolation between samples):

    rho(G>=c, t) = G(t) - c          rho(G<=c, t) = c - G(t)
    rho(not f)   = -rho(f)           rho(and) = min, rho(or) = max
    rho(always[a,b] f, t)     = min over samples in [t+a, t+b]
    rho(eventually[a,b] f, t) = max over samples in [t+a, t+b]

A positive value certifies satisfaction of the discretized formula, a
negative value certifies violation. The text form is prefix notation, e.g.

    always 0 1440 (ge 70)
    and (always 0 1440 (ge 70)) (ev 0 60 (le 180))
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .twin import GlucoseTrace


class InsufficientHorizonError(ValueError):
    """A temporal interval extends past the end of the trace."""


class FormulaSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class GE:
    c: float


@dataclass(frozen=True)
class LE:
    c: float


@dataclass(frozen=True)
class Not:
    f: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Always:
    a: float
    b: float
    f: "Formula"

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Eventually:
    a: float
    b: float
    f: "Formula"

    def __post_init__(self):
        _check_interval(self.a, self.b)


Formula = GE | LE | Not | And | Or | Always | Eventually


def _check_interval(a: float, b: float) -> None:
    if not (0 <= a <= b) or not math.isfinite(b):
        raise ValueError(f"interval bounds must satisfy 0 <= a <= b, got [{a!r}, {b!r}]")


def _window_offsets(a: float, b: float, dt: float) -> tuple[int, int]:
    ka = int(math.ceil(a / dt - 1e-9))
    kb = int(math.floor(b / dt + 1e-9))
    return ka, kb


def _rho_array(phi: Formula, samples: np.ndarray, dt: float) -> tuple[np.ndarray, int]:
    """Robustness at every sample index; second element is the count of
    leading indices at which the formula's intervals stay inside the trace."""
    if isinstance(phi, GE):
        return samples - phi.c, samples.size
    if isinstance(phi, LE):
        return phi.c - samples, samples.size
    if isinstance(phi, Not):
        vals, valid = _rho_array(phi.f, samples, dt)
        return -vals, valid
    if isinstance(phi, (And, Or)):
        lv, lvalid = _rho_array(phi.left, samples, dt)
        rv, rvalid = _rho_array(phi.right, samples, dt)
        valid = min(lvalid, rvalid)
        op = np.minimum if isinstance(phi, And) else np.maximum
        return op(lv[:valid], rv[:valid]), valid
    if isinstance(phi, (Always, Eventually)):
        sub, sub_valid = _rho_array(phi.f, samples, dt)
        ka, kb = _window_offsets(phi.a, phi.b, dt)
        if ka > kb:
            raise InsufficientHorizonError(
                f"interval [{phi.a:g}, {phi.b:g}] contains no sample at dt={dt:g}")
        valid = sub_valid - kb
        if valid <= 0:
            return np.empty(0), 0
        width = kb - ka + 1
        windows = sliding_window_view(sub[:sub_valid], width)
        agg = windows.min(axis=1) if isinstance(phi, Always) else windows.max(axis=1)
        return agg[ka:ka + valid], valid
    raise TypeError(f"not a formula node: {phi!r}")


def robustness(phi: Formula, trace: GlucoseTrace, t: float = 0.0) -> float:
    """Robustness of phi at time t (minutes, must land on a trace sample)."""
    idx_f = (t - trace.t0) / trace.dt
    idx = int(round(idx_f))
    if abs(idx_f - idx) > 1e-6 or idx < 0 or idx >= len(trace):
        raise ValueError(f"t={t!r} does not land on a sample of the trace")
    vals, valid = _rho_array(phi, trace.samples, trace.dt)
    if idx >= valid:
        raise InsufficientHorizonError(
            f"formula intervals extend past the trace end when evaluated at t={t:g}")
    return float(vals[idx])


# -- text format --------------------------------------------------------------

_TEMPORAL = {"always": Always, "ev": Eventually, "eventually": Eventually}


class _Tokens:
    def __init__(self, text: str):
        self.items = text.replace("(", " ( ").replace(")", " ) ").split()
        self.pos = 0

    def peek(self) -> str | None:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise FormulaSyntaxError("unexpected end of formula")
        self.pos += 1
        return tok

    def number(self) -> float:
        tok = self.next()
        try:
            return float(tok)
        except ValueError:
            raise FormulaSyntaxError(f"expected a number, got {tok!r}") from None


def _parse_sub(toks: _Tokens) -> Formula:
    if toks.peek() == "(":
        toks.next()
        f = _parse_formula(toks)
        if toks.next() != ")":
            raise FormulaSyntaxError("expected ')'")
        return f
    return _parse_formula(toks)


def _parse_formula(toks: _Tokens) -> Formula:
    op = toks.next()
    if op == "(":
        f = _parse_formula(toks)
        if toks.next() != ")":
            raise FormulaSyntaxError("expected ')'")
        return f
    if op == "ge":
        return GE(toks.number())
    if op == "le":
        return LE(toks.number())
    if op == "not":
        return Not(_parse_sub(toks))
    if op in ("and", "or"):
        left = _parse_sub(toks)
        right = _parse_sub(toks)
        return And(left, right) if op == "and" else Or(left, right)
    if op in _TEMPORAL:
        a = toks.number()
        b = toks.number()
        try:
            return _TEMPORAL[op](a, b, _parse_sub(toks))
        except ValueError as exc:
            raise FormulaSyntaxError(str(exc)) from None
    raise FormulaSyntaxError(f"unknown operator {op!r}")


def parse_formula(text: str) -> Formula:
    toks = _Tokens(text)
    f = _parse_formula(toks)
    if toks.peek() is not None:
        raise FormulaSyntaxError(f"trailing tokens after formula: {toks.items[toks.pos:]!r}")
    return f


def _fmt(x: float) -> str:
    return str(int(x)) if x == int(x) else repr(float(x))


def serialize_formula(phi: Formula) -> str:
    if isinstance(phi, GE):
        return f"ge {_fmt(phi.c)}"
    if isinstance(phi, LE):
        return f"le {_fmt(phi.c)}"
    if isinstance(phi, Not):
        return f"not ({serialize_formula(phi.f)})"
    if isinstance(phi, And):
        return f"and ({serialize_formula(phi.left)}) ({serialize_formula(phi.right)})"
    if isinstance(phi, Or):
        return f"or ({serialize_formula(phi.left)}) ({serialize_formula(phi.right)})"
    if isinstance(phi, Always):
        return f"always {_fmt(phi.a)} {_fmt(phi.b)} ({serialize_formula(phi.f)})"
    if isinstance(phi, Eventually):
        return f"ev {_fmt(phi.a)} {_fmt(phi.b)} ({serialize_formula(phi.f)})"
    raise TypeError(f"not a formula node: {phi!r}")
