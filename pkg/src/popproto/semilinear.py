"""Semilinear predicates over symbol counts.

A predicate is a boolean combination of two kinds of atom::

    threshold   sum(coeff * count(sym)) >= const
    congruence  sum(coeff * count(sym)) mod m == r

Text syntax (whitespace-insensitive)::

    count((1|1)) >= 2
    count(a) + 2*count(b) mod 3 == 1
    not (count(x) < 1 or count(y) == 0) and true

Comparisons ``<``, ``<=``, ``>``, ``==`` and ``!=`` are normalized to
threshold atoms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence, Union


class SpecError(ValueError):
    pass


Coeffs = tuple  # sorted tuple of (symbol, nonzero int coefficient)


def _coeffs(terms: Mapping[Hashable, int]) -> Coeffs:
    return tuple(sorted((s, c) for s, c in terms.items() if c))


@dataclass(frozen=True)
class Threshold:
    coeffs: Coeffs
    const: int

    def value(self, counts: Mapping) -> int:
        return sum(c * counts.get(s, 0) for s, c in self.coeffs)

    def holds(self, counts: Mapping) -> bool:
        return self.value(counts) >= self.const


@dataclass(frozen=True)
class Congruence:
    coeffs: Coeffs
    modulus: int
    residue: int

    def __post_init__(self):
        if self.modulus < 1:
            raise SpecError("modulus must be positive")
        object.__setattr__(self, "residue", self.residue % self.modulus)

    def value(self, counts: Mapping) -> int:
        return sum(c * counts.get(s, 0) for s, c in self.coeffs) % self.modulus

    def holds(self, counts: Mapping) -> bool:
        return self.value(counts) == self.residue


@dataclass(frozen=True)
class And:
    parts: tuple


@dataclass(frozen=True)
class Or:
    parts: tuple


@dataclass(frozen=True)
class Not:
    part: object


@dataclass(frozen=True)
class Const:
    value: bool


Atom = Union[Threshold, Congruence]
Node = Union[Threshold, Congruence, And, Or, Not, Const]


@dataclass(frozen=True)
class PredicateSpec:
    """A predicate tree plus the symbol alphabet it is evaluated over.

    ``alphabet`` fixes the order used when counts arrive as a plain
    vector; mapping inputs are checked against it when it is non-empty.
    """

    root: Node
    alphabet: tuple = ()
    text: str = ""

    def atoms(self) -> list[Atom]:
        out: list[Atom] = []

        def walk(node):
            if isinstance(node, (Threshold, Congruence)):
                if node not in out:
                    out.append(node)
            elif isinstance(node, (And, Or)):
                for p in node.parts:
                    walk(p)
            elif isinstance(node, Not):
                walk(node.part)

        walk(self.root)
        return out

    def symbols(self) -> set:
        return {s for a in self.atoms() for s, _ in a.coeffs}

    def from_atoms(self, truth: Mapping[Atom, bool]) -> bool:
        """Evaluate the boolean structure given a truth value per atom."""

        def ev(node):
            if isinstance(node, (Threshold, Congruence)):
                return truth[node]
            if isinstance(node, And):
                return all(ev(p) for p in node.parts)
            if isinstance(node, Or):
                return any(ev(p) for p in node.parts)
            if isinstance(node, Not):
                return not ev(node.part)
            return node.value

        return ev(self.root)

    def __call__(self, counts) -> bool:
        return eval_semilinear(self, counts)

    def __str__(self) -> str:
        return self.text or render(self.root)


def eval_semilinear(spec: PredicateSpec, counts: Mapping | Sequence[int]) -> bool:
    if not isinstance(counts, Mapping):
        counts = list(counts)
        if len(counts) != len(spec.alphabet):
            raise SpecError(
                f"count vector has dimension {len(counts)}, spec alphabet has {len(spec.alphabet)}")
        counts = dict(zip(spec.alphabet, counts))
    elif spec.alphabet:
        unknown = set(counts) - set(spec.alphabet)
        if unknown:
            raise SpecError(f"counts mention symbols outside the spec alphabet: {sorted(map(str, unknown))}")
    return spec.from_atoms({a: a.holds(counts) for a in spec.atoms()})


def threshold(terms: Mapping[Hashable, int], const: int) -> Threshold:
    return Threshold(_coeffs(terms), const)


def congruence(terms: Mapping[Hashable, int], modulus: int, residue: int) -> Congruence:
    return Congruence(_coeffs(terms), modulus, residue)


def conj(*parts) -> Node:
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def disj(*parts) -> Node:
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def none_of(symbols, alphabet=()) -> PredicateSpec:
    """Spec asserting that no agent carries any of ``symbols``."""
    root = Not(threshold({s: 1 for s in symbols}, 1)) if symbols else Const(True)
    return PredicateSpec(root, tuple(alphabet))


# -- text syntax

_TOKEN = re.compile(r"""
    \s*(?:
      (?P<pair>\([^()|\s]+\|[^()|\s]+\))
    | (?P<num>-?\d+)
    | (?P<op>>=|<=|==|!=|>|<|\+|-|\*|\(|\))
    | (?P<word>[A-Za-z_][A-Za-z0-9_.]*|[0-9A-Za-z_.]+)
    )""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise SpecError(f"unexpected character {text[pos]!r} at column {pos + 1}")
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return out


def split_pair(sym: str) -> tuple[str, str] | None:
    if len(sym) >= 5 and sym[0] == "(" and sym[-1] == ")" and sym.count("|") == 1:
        x, y = sym[1:-1].split("|")
        return x, y
    return None


def pair_symbol(x, y) -> str:
    return f"({x}|{y})"


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.text = text

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eof", "", len(self.text))

    def take(self, value: str | None = None, kind: str | None = None):
        tok = self.peek()
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value or kind
            raise SpecError(f"expected {want!r} at column {tok[2] + 1}, found {tok[1] or 'end'!r}")
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.disjunction()
        if self.peek()[0] != "eof":
            tok = self.peek()
            raise SpecError(f"unexpected {tok[1]!r} at column {tok[2] + 1}")
        return node

    def disjunction(self):
        parts = [self.conjunction()]
        while self.peek()[1] == "or":
            self.take()
            parts.append(self.conjunction())
        return disj(*parts)

    def conjunction(self):
        parts = [self.unary()]
        while self.peek()[1] == "and":
            self.take()
            parts.append(self.unary())
        return conj(*parts)

    def unary(self):
        kind, val, _ = self.peek()
        if val == "not":
            self.take()
            return Not(self.unary())
        if val in ("true", "false"):
            self.take()
            return Const(val == "true")
        if val == "(":
            self.take("(")
            node = self.disjunction()
            self.take(")")
            return node
        return self.atom()

    def atom(self):
        terms = self.linear()
        kind, val, col = self.peek()
        if val == "mod":
            self.take()
            m = int(self.take(kind="num")[1])
            self.take("==")
            r = int(self.take(kind="num")[1])
            return congruence(terms, m, r)
        if val not in (">=", "<=", ">", "<", "==", "!="):
            raise SpecError(f"expected comparison at column {col + 1}, found {val or 'end'!r}")
        self.take()
        k = int(self.take(kind="num")[1])
        neg = {s: -c for s, c in terms.items()}
        if val == ">=":
            return threshold(terms, k)
        if val == ">":
            return threshold(terms, k + 1)
        if val == "<=":
            return threshold(neg, -k)
        if val == "<":
            return threshold(neg, -k + 1)
        eq = And((threshold(terms, k), threshold(neg, -k)))
        return eq if val == "==" else Not(eq)

    def linear(self) -> dict:
        terms: dict = {}
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        while True:
            coeff = 1
            if self.peek()[0] == "num":
                coeff = int(self.take()[1])
                self.take("*")
            self.take("count")
            self.take("(")
            kind, sym, col = self.peek()
            if kind not in ("word", "pair", "num"):
                raise SpecError(f"expected symbol at column {col + 1}")
            self.take()
            self.take(")")
            terms[sym] = terms.get(sym, 0) + sign * coeff
            if self.peek()[1] in ("+", "-"):
                sign = 1 if self.take()[1] == "+" else -1
                continue
            return terms


def parse_spec(text: str, alphabet: Sequence = ()) -> PredicateSpec:
    root = _Parser(text).parse()
    spec = PredicateSpec(root, tuple(alphabet), text.strip())
    if alphabet:
        missing = spec.symbols() - set(alphabet)
        if missing:
            raise SpecError(f"spec mentions symbols outside the alphabet: {sorted(missing)}")
    return spec


def render(node: Node) -> str:
    def lin(coeffs):
        parts = []
        for k, (s, c) in enumerate(coeffs):
            term = f"count({s})" if abs(c) == 1 else f"{abs(c)}*count({s})"
            if k == 0:
                parts.append(("-" if c < 0 else "") + term)
            else:
                parts.append(("- " if c < 0 else "+ ") + term)
        return " ".join(parts) if parts else "0"

    if isinstance(node, Threshold):
        return f"{lin(node.coeffs)} >= {node.const}"
    if isinstance(node, Congruence):
        return f"{lin(node.coeffs)} mod {node.modulus} == {node.residue}"
    if isinstance(node, And):
        return " and ".join(f"({render(p)})" for p in node.parts)
    if isinstance(node, Or):
        return " or ".join(f"({render(p)})" for p in node.parts)
    if isinstance(node, Not):
        return f"not ({render(node.part)})"
    return "true" if node.value else "false"
