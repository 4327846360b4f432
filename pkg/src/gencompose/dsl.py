"""A tiny expression language for composing base models.

Grammar (left-associative, equal precedence, parentheses allowed)::

    expr    := term (op term)*
    op      := ("hm" | "con") ("[" number "]")?
    term    := identifier | "(" expr ")" | post
    post    := "post" "(" "y" "=" "[" int ("," int)* "]" ";" ident ("," ident)* ")"

"hm" is the harmonic-mean operator and "con" the contrast operator; the glyph
aliases "⊗" and "◇" are accepted on input. The optional bracket holds the
interpolation subscript in (0,1): it is the complement of the stored mixing
weight, so "con[0.95]" builds a Con node with alpha = 0.05 (the subscript says
how strongly the result leans on the left operand).

Expressions either evaluate exactly against bound probability tables or lower
to an ObservationPlan: a sequence of observation-conditioning stages, each of
which a sampler realizes with one (exact or learned) classifier.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import EmptyObservations, GencomposeError, UnknownIdentifier
from .ops import contrast, harmonic_mean, nary_posterior
from .tables import DensityTable

_KEYWORDS = {"hm", "con", "post"}
_GLYPH_OPS = {"⊗": "hm", "◇": "con"}  # ⊗, ◇
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class BaseRef:
    name: str


@dataclass(frozen=True)
class Hm:
    left: "Node"
    right: "Node"
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")


@dataclass(frozen=True)
class Con:
    left: "Node"
    right: "Node"
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")


@dataclass(frozen=True)
class Post:
    observations: tuple[int, ...]
    bases: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.observations:
            raise EmptyObservations("post(...) needs at least one observation")
        if not self.bases:
            raise ValueError("post(...) needs at least one base name")
        for i in self.observations:
            if not (1 <= i <= len(self.bases)):
                raise ValueError(f"observation label {i} outside 1..{len(self.bases)}")


Node = BaseRef | Hm | Con | Post


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT NUMBER OP LPAREN RPAREN LBRACKET RBRACKET COMMA SEMI EQ END
    text: str
    offset: int  # byte offset into the utf-8 encoding of the source


def _syntax_error(text: str, offset: int, expected: str) -> SyntaxError:
    err = SyntaxError(f"at byte {offset}: expected {expected}")
    err.offset = offset
    err.text = text
    return err


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    byte_of = lambda p: len(text[:p].encode("utf-8"))
    while pos < len(text):
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch in _GLYPH_OPS:
            tokens.append(_Token("OP", _GLYPH_OPS[ch], byte_of(pos)))
            pos += 1
            continue
        single = {"(": "LPAREN", ")": "RPAREN", "[": "LBRACKET", "]": "RBRACKET",
                  ",": "COMMA", ";": "SEMI", "=": "EQ"}
        if ch in single:
            tokens.append(_Token(single[ch], ch, byte_of(pos)))
            pos += 1
            continue
        m = _IDENT_RE.match(text, pos)
        if m:
            word = m.group(0)
            kind = "OP" if word in ("hm", "con") else ("POST" if word == "post" else "IDENT")
            tokens.append(_Token(kind, word, byte_of(pos)))
            pos = m.end()
            continue
        m = _NUMBER_RE.match(text, pos)
        if m:
            tokens.append(_Token("NUMBER", m.group(0), byte_of(pos)))
            pos = m.end()
            continue
        raise _syntax_error(text, byte_of(pos), f"a token (found {ch!r})")
    tokens.append(_Token("END", "", byte_of(len(text))))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise _syntax_error(self.text, tok.offset, what)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "END":
            raise _syntax_error(self.text, tok.offset, "end of expression")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "OP":
            op = self.advance()
            alpha = 0.5
            if self.peek().kind == "LBRACKET":
                self.advance()
                num = self.expect("NUMBER", "a decimal in (0,1)")
                try:
                    subscript = float(num.text)
                except ValueError:
                    raise _syntax_error(self.text, num.offset, "a decimal in (0,1)") from None
                if not (0.0 < subscript < 1.0):
                    raise _syntax_error(self.text, num.offset, "a decimal strictly inside (0,1)")
                self.expect("RBRACKET", "']'")
                alpha = 1.0 - subscript
            right = self.term()
            node = Hm(node, right, alpha) if op.text == "hm" else Con(node, right, alpha)
        return node

    def term(self) -> Node:
        tok = self.peek()
        if tok.kind == "LPAREN":
            self.advance()
            node = self.expr()
            self.expect("RPAREN", "')'")
            return node
        if tok.kind == "POST":
            return self.post()
        if tok.kind == "IDENT":
            self.advance()
            return BaseRef(tok.text)
        raise _syntax_error(self.text, tok.offset, "an identifier, '(', or post(...)")

    def post(self) -> Node:
        self.advance()  # 'post'
        self.expect("LPAREN", "'('")
        y = self.expect("IDENT", "'y'")
        if y.text != "y":
            raise _syntax_error(self.text, y.offset, "'y'")
        self.expect("EQ", "'='")
        self.expect("LBRACKET", "'['")
        observations = [self._int_label()]
        while self.peek().kind == "COMMA":
            self.advance()
            observations.append(self._int_label())
        self.expect("RBRACKET", "']'")
        self.expect("SEMI", "';'")
        bases = [self.expect("IDENT", "a base name").text]
        while self.peek().kind == "COMMA":
            self.advance()
            bases.append(self.expect("IDENT", "a base name").text)
        close = self.expect("RPAREN", "')'")
        try:
            return Post(tuple(observations), tuple(bases))
        except (ValueError, EmptyObservations) as exc:
            raise _syntax_error(self.text, close.offset, f"a valid post clause ({exc})") from exc

    def _int_label(self) -> int:
        num = self.expect("NUMBER", "an integer label")
        if not num.text.isdigit():
            raise _syntax_error(self.text, num.offset, "an integer label")
        return int(num.text)


def parse(text: str) -> Node:
    """Parse a composition expression; raises SyntaxError carrying a byte offset."""
    if not text or not text.strip():
        raise _syntax_error(text, 0, "a non-empty expression")
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Pretty printer


def _format_subscript(alpha: float) -> str:
    return repr(1.0 - alpha)


def pretty_print(node: Node) -> str:
    """Render an AST back to concrete syntax; parse(pretty_print(e)) == e."""
    if isinstance(node, BaseRef):
        return node.name
    if isinstance(node, (Hm, Con)):
        op = "hm" if isinstance(node, Hm) else "con"
        if node.alpha != 0.5:
            op += f"[{_format_subscript(node.alpha)}]"
        left = pretty_print(node.left)
        right = pretty_print(node.right)
        if isinstance(node.left, (Hm, Con)):
            left = f"({left})"
        if isinstance(node.right, (Hm, Con)):
            right = f"({right})"
        return f"{left} {op} {right}"
    if isinstance(node, Post):
        obs = ",".join(str(i) for i in node.observations)
        bases = ",".join(node.bases)
        return f"post(y=[{obs}]; {bases})"
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Exact evaluation


def _eval(node: Node, bindings: dict[str, DensityTable], path: str) -> DensityTable:
    try:
        if isinstance(node, BaseRef):
            if node.name not in bindings:
                raise UnknownIdentifier(f"base model {node.name!r} is not bound")
            return bindings[node.name]
        if isinstance(node, Hm):
            return harmonic_mean(
                _eval(node.left, bindings, path + ".left"),
                _eval(node.right, bindings, path + ".right"),
                node.alpha,
            )
        if isinstance(node, Con):
            return contrast(
                _eval(node.left, bindings, path + ".left"),
                _eval(node.right, bindings, path + ".right"),
                node.alpha,
            )
        if isinstance(node, Post):
            tables = []
            for name in node.bases:
                if name not in bindings:
                    raise UnknownIdentifier(f"base model {name!r} is not bound")
                tables.append(bindings[name])
            return nary_posterior(tables, list(node.observations))
    except GencomposeError as exc:
        if str(exc).startswith("at "):
            raise
        raise type(exc)(f"at {path}: {exc}") from exc
    raise TypeError(f"not an AST node: {node!r}")


def eval_exact(expr: Node, bindings: dict[str, DensityTable]) -> DensityTable:
    """Recursively evaluate an expression against bound tables."""
    return _eval(expr, bindings, "expr")


def referenced_bases(node: Node) -> set[str]:
    """All base-model names an expression mentions."""
    if isinstance(node, BaseRef):
        return {node.name}
    if isinstance(node, (Hm, Con)):
        return referenced_bases(node.left) | referenced_bases(node.right)
    if isinstance(node, Post):
        return set(node.bases)
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Lowering to guidance plans


@dataclass(frozen=True)
class PlanStage:
    """One observation-conditioning step.

    bases        : input names; "@stageK" refers to the output of stage K
    observations : 1-based labels into `bases`, a multiset
    alpha        : mixing weight for two-base interpolated stages (None = plain)
    classifier   : "exact" or "learned" realization requirement
    """

    bases: tuple[str, ...]
    observations: tuple[int, ...]
    alpha: float | None = None
    classifier: str = "exact"


@dataclass(frozen=True)
class ObservationPlan:
    stages: tuple[PlanStage, ...]

    def __len__(self) -> int:
        return len(self.stages)


def lower(expr: Node, classifier: str = "exact") -> ObservationPlan:
    """Flatten an expression into sequential observation-conditioning stages.

    Binary operators over base references become a single stage observing
    {1,2} (harmonic mean) or {1,1} (contrast); nested operators chain: a later
    stage consumes the earlier stage's composite as one of its bases.
    """
    stages: list[PlanStage] = []

    def emit(bases: tuple[str, ...], observations: tuple[int, ...], alpha: float | None) -> str:
        stages.append(PlanStage(bases, observations, alpha, classifier))
        return f"@stage{len(stages) - 1}"

    def visit(node: Node) -> str:
        if isinstance(node, BaseRef):
            return node.name
        if isinstance(node, Post):
            return emit(node.bases, node.observations, None)
        if isinstance(node, (Hm, Con)):
            left = visit(node.left)
            right = visit(node.right)
            obs = (1, 2) if isinstance(node, Hm) else (1, 1)
            alpha = None if node.alpha == 0.5 else node.alpha
            return emit((left, right), obs, alpha)
        raise TypeError(f"not an AST node: {node!r}")

    result = visit(expr)
    if not stages:
        # a bare base reference still needs one (trivial) observation stage
        emit((result,), (1,), None)
    return ObservationPlan(tuple(stages))


def _weighted_pair_posterior(
    tables: list[DensityTable], observations: tuple[int, ...], alpha: float
) -> DensityTable:
    """Two-base posterior whose second observation is alpha-weighted.

    Realizes prod_k p_{i_k} / (alpha p_1 + (1-alpha) p_2) for the interpolated
    binary operators; independent of the harmonic_mean/contrast code path.
    """
    p1, p2 = tables
    support = np.ones(p1.mass.shape, dtype=bool)
    for i in observations:
        support &= tables[i - 1].support_mask
    with np.errstate(divide="ignore"):
        log_num = sum(np.log(tables[i - 1].mass) for i in observations)
        log_den = np.log(alpha * p1.mass + (1.0 - alpha) * p2.mass)
    raw = np.zeros_like(p1.mass)
    shifted = log_num[support] - log_den[support]
    shifted -= shifted.max()
    raw[support] = np.exp(shifted)
    return DensityTable.from_unnormalized(raw)


def execute_plan_exact(plan: ObservationPlan, bindings: dict[str, DensityTable]) -> DensityTable:
    """Run every stage with exact table posteriors; returns the final composite."""
    outputs: list[DensityTable] = []

    def resolve(ref: str) -> DensityTable:
        if ref.startswith("@stage"):
            return outputs[int(ref[len("@stage"):])]
        if ref not in bindings:
            raise UnknownIdentifier(f"base model {ref!r} is not bound")
        return bindings[ref]

    for stage in plan.stages:
        tables = [resolve(ref) for ref in stage.bases]
        if stage.alpha is None:
            outputs.append(nary_posterior(tables, list(stage.observations)))
        else:
            outputs.append(_weighted_pair_posterior(tables, stage.observations, stage.alpha))
    return outputs[-1]
