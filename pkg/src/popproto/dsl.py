"""Text format for protocol tables (``.pp`` files).

::

    # comments run to end of line
    protocol leader_election
    states: L F
    input: x -> L
    output: L -> 1, F -> 1
    outputs: 1
    rules:
      L L -> L F
      a b -> c d sym     # also b a -> d c

Every section may be written inline after the colon, or as indented lines
below it; entries are separated by commas or newlines (``states`` also
accepts plain whitespace). ``outputs`` is optional and fixes the order of
the output alphabet. Rules not listed are no-ops.

:func:`serialize` writes the canonical form: states in id order, inputs
in alphabet order, one rule per line sorted by state ids, no-ops left
out. The output is byte-stable, so it works for golden files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from popproto.core import Protocol, ProtocolError

SECTIONS = ("states", "input", "output", "outputs", "rules")

_NAME = re.compile(r"->|(?:(?!->)[^\s,#])+")


class DslError(ProtocolError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    column: int


@dataclass
class ProtocolDoc:
    name: str
    states: list[Token]
    input: list[tuple[Token, Token]]
    output: list[tuple[Token, Token]]
    outputs: list[Token] | None
    rules: list[tuple[list[Token], Token]]  # tokens of the rule, token of its first name


def _strip_comment(line: str) -> str:
    k = line.find("#")
    return line if k < 0 else line[:k]


def _tokens(text: str, line: int, offset: int) -> list[Token]:
    return [Token(m.group(), line, offset + m.start() + 1) for m in _NAME.finditer(text)]


def _entries(chunks: list[tuple[str, int, int]]) -> list[list[Token]]:
    """Split (text, line, column offset) chunks into comma/newline separated entries."""
    out = []
    for text, line, offset in chunks:
        pos = 0
        for part in text.split(","):
            toks = _tokens(part, line, offset + pos)
            pos += len(part) + 1
            if toks:
                out.append(toks)
    return out


def _split(text: str) -> tuple[str, list[tuple[str, int, list[tuple[str, int, int]]]]]:
    """Group source lines into the header name and (section, line, chunks)."""
    name = None
    sections: list = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        indented = line[0].isspace()
        head = line.strip()
        col = len(line) - len(line.lstrip()) + 1
        if not indented:
            if head.startswith("protocol") and (head == "protocol" or head[8].isspace()):
                if name is not None:
                    raise DslError("second protocol header", lineno, col)
                toks = _tokens(line, lineno, 0)
                if len(toks) != 2:
                    raise DslError("expected 'protocol <name>'", lineno, col)
                name = toks[1].text
                current = None
                continue
            key, colon, rest = line.partition(":")
            key = key.strip()
            if not colon or key not in SECTIONS:
                raise DslError(f"expected a section header ({', '.join(SECTIONS)}), found {head!r}",
                               lineno, col)
            if any(s[0] == key for s in sections):
                raise DslError(f"duplicate section {key!r}", lineno, col)
            current = [key, lineno, []]
            sections.append(current)
            if rest.strip():
                current[2].append((rest, lineno, len(line) - len(rest)))
        else:
            if current is None:
                raise DslError("indented line outside a section", lineno, col)
            current[2].append((line, lineno, 0))
    if name is None:
        raise DslError("missing 'protocol <name>' header", 1, 1)
    return name, sections


def _arrow_pairs(entries: list[list[Token]], what: str) -> list[tuple[Token, Token]]:
    out = []
    for toks in entries:
        if len(toks) != 3 or toks[1].text != "->":
            t = toks[0]
            raise DslError(f"expected '<symbol> -> <state>' in {what}", t.line, t.column)
        out.append((toks[0], toks[2]))
    return out


def parse_doc(text: str) -> ProtocolDoc:
    name, sections = _split(text)
    found = {key: (line, chunks) for key, line, chunks in sections}
    for key in ("states", "input", "output"):
        if key not in found:
            raise DslError(f"missing section {key!r}", 1, 1)
    states = [t for toks in _entries(found["states"][1]) for t in toks]
    if not states:
        raise DslError("no states declared", found["states"][0], 1)
    outputs = None
    if "outputs" in found:
        outputs = [t for toks in _entries(found["outputs"][1]) for t in toks]
    rules = []
    if "rules" in found:
        rules = [(toks, toks[0]) for toks in _entries(found["rules"][1])]
    return ProtocolDoc(
        name,
        states,
        _arrow_pairs(_entries(found["input"][1]), "input"),
        _arrow_pairs(_entries(found["output"][1]), "output"),
        outputs,
        rules,
    )


def parse(text: str) -> Protocol:
    """Build a closed, table-driven :class:`Protocol` from ``.pp`` source."""
    doc = parse_doc(text)
    declared: dict[str, Token] = {}
    for t in doc.states:
        if t.text in declared:
            raise DslError(f"state {t.text!r} declared twice", t.line, t.column)
        if t.text == "->":
            raise DslError("'->' is not a state name", t.line, t.column)
        declared[t.text] = t

    def state(t: Token) -> str:
        if t.text not in declared:
            raise DslError(f"undeclared state {t.text!r}", t.line, t.column)
        return t.text

    inputs: dict[str, str] = {}
    for sym, st in doc.input:
        if sym.text in inputs:
            raise DslError(f"input symbol {sym.text!r} mapped twice", sym.line, sym.column)
        inputs[sym.text] = state(st)
    if not inputs:
        raise DslError("input map is empty", 1, 1)

    outputs: dict[str, str] = {}
    for st, val in doc.output:
        if state(st) in outputs:
            raise DslError(f"output of {st.text!r} given twice", st.line, st.column)
        outputs[st.text] = val.text
    for s, t in declared.items():
        if s not in outputs:
            raise DslError(f"output map is not defined on state {s!r}", t.line, t.column)

    alphabet = None
    if doc.outputs is not None:
        alphabet = [t.text for t in doc.outputs]
        for _, t in doc.output:
            if t.text not in alphabet:
                raise DslError(f"output {t.text!r} is not in the outputs list", t.line, t.column)

    delta: dict[tuple[str, str], tuple[str, str]] = {}
    for toks, first in doc.rules:
        if len(toks) not in (5, 6) or toks[2].text != "->":
            raise DslError("expected 'q1 q2 -> q3 q4 [sym]'", first.line, first.column)
        if len(toks) == 6 and toks[5].text != "sym":
            raise DslError(f"unknown rule flag {toks[5].text!r}", toks[5].line, toks[5].column)
        a, b, c, d = (state(toks[k]) for k in (0, 1, 3, 4))
        entries = [((a, b), (c, d))]
        if len(toks) == 6 and (b, a) != (a, b):
            entries.append(((b, a), (d, c)))
        for key, val in entries:
            if key in delta:
                raise DslError(f"duplicate rule for ordered pair {key[0]} {key[1]}",
                               first.line, first.column)
            delta[key] = val

    return Protocol(
        doc.name,
        inputs,
        outputs,
        {k: v for k, v in delta.items() if k != v},
        states=list(declared),
        output_alphabet=alphabet,
        closed=True,
    )


def _check_name(name: str, what: str) -> str:
    if not name or _NAME.fullmatch(name) is None or name == "->":
        raise ProtocolError(f"{what} {name!r} cannot be written in the text format")
    return name


def serialize(protocol: Protocol) -> str:
    states = protocol.close()
    names = [s.name for s in states]
    lines = [f"protocol {_check_name(protocol.name, 'protocol name')}"]
    lines.append("states:")
    lines.extend(f"  {_check_name(n, 'state name')}" for n in names)
    lines.append("input:")
    for sym in protocol.input_alphabet:
        lines.append(f"  {_check_name(str(sym), 'input symbol')} -> {protocol.name_of(protocol.input_state(sym))}")
    lines.append("output:")
    for s in states:
        lines.append(f"  {s.name} -> {_check_name(str(protocol.output_of(s.id)), 'output')}")
    lines.append("outputs: " + " ".join(_check_name(str(y), "output") for y in protocol.output_alphabet))
    lines.append("rules:")
    for i, j, k, l in sorted(protocol.rules()):
        lines.append(f"  {names[i]} {names[j]} -> {names[k]} {names[l]}")
    return "\n".join(lines) + "\n"


def table(protocol: Protocol) -> tuple:
    """Name-level canonical table; two protocols are structurally equal iff these match."""
    states = protocol.close()
    names = tuple(s.name for s in states)
    return (
        protocol.name,
        names,
        tuple((str(x), protocol.name_of(protocol.input_state(x))) for x in protocol.input_alphabet),
        tuple(str(protocol.output_of(s.id)) for s in states),
        tuple(str(y) for y in protocol.output_alphabet),
        tuple(sorted((names[i], names[j], names[k], names[l]) for i, j, k, l in protocol.rules())),
    )


def structurally_equal(p: Protocol, q: Protocol) -> bool:
    return table(p) == table(q)
