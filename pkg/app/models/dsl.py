"""
Expression language for candidate state-representation and intrinsic-reward programs.

A program is one or more ``out: <expr>`` lines. Expressions use infix
arithmetic (``^`` binds tighter than unary minus, which binds tighter than
``*`` and ``/``, then ``+`` and ``-``), parentheses, the functions listed in
``UNARY_FUNCTIONS`` and ``BINARY_FUNCTIONS``, state references ``s[i]`` and
decimal literals. ``#`` starts a comment.

Programs are immutable once parsed and evaluation only reads the input
vector, so the same program can be shared by any number of workers.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

GRAMMAR = """\
program  := line+            (one `out: <expr>` per line, `#` starts a comment)
line     := "out:" expr
expr     := term (("+" | "-") term)*
term     := unary (("*" | "/") unary)*
unary    := "-" unary | power
power    := atom ("^" unary)?
atom     := number | "s[" integer "]" | func "(" expr ")" | func2 "(" expr "," expr ")" | "(" expr ")"
func     := sin | cos | tan | tanh | abs | sqrt | exp | log
func2    := min | max
number   := decimal literal such as 3, 0.5 or 1e-3"""

OUTPUT_CLAMP = 1e6
LOG_FLOOR = 1e-12
DIVISION_FLOOR = 1e-12
DEFAULT_MAX_OUTPUTS = 16


class DslError(ValueError):
    """Base error for program parsing, validation and evaluation."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class DslSyntaxError(DslError):
    """Text does not follow the grammar."""


class DslValidationError(DslError):
    """Text parses but violates a program invariant (index range, output count)."""


class NonFiniteOutputError(DslError):
    """Evaluation produced NaN after the domain guards; the candidate is disqualified."""


@dataclass(frozen=True)
class Span:
    line: int
    column: int


# Spans are excluded from equality so that parse(format(p)) == p.
@dataclass(frozen=True)
class Const:
    value: float
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class StateRef:
    index: int
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


Expr = Union[Const, StateRef, Unary, Binary]


def _guarded_sqrt(x: float) -> float:
    return math.sqrt(max(x, 0.0))


def _guarded_log(x: float) -> float:
    return math.log(max(x, LOG_FLOOR))


def _nan_min(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    return min(a, b)


def _nan_max(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    return max(a, b)


def _guarded_div(a: float, b: float) -> float:
    if abs(b) < DIVISION_FLOOR:
        b = DIVISION_FLOOR if b >= 0 else -DIVISION_FLOOR
    return a / b


UNARY_FUNCTIONS: Dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "tanh": math.tanh,
    "abs": abs,
    "sqrt": _guarded_sqrt,
    "exp": math.exp,
    "log": _guarded_log,
}

BINARY_FUNCTIONS: Dict[str, Callable[[float, float], float]] = {
    "min": _nan_min,
    "max": _nan_max,
}

BINARY_OPERATORS: Dict[str, Callable[[float, float], float]] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _guarded_div,
    "^": math.pow,
}


@dataclass(frozen=True)
class ReprProgram:
    """State representation function F: S -> S^r."""

    input_dim: int
    outputs: Tuple[Expr, ...]
    source_text: str = field(default="", compare=False)

    @property
    def output_dim(self) -> int:
        return len(self.outputs)


@dataclass(frozen=True)
class RewardProgram:
    """Intrinsic reward function G: S^c -> R."""

    input_dim: int
    output: Expr
    source_text: str = field(default="", compare=False)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
    |(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    |(?P<name>[A-Za-z_][A-Za-z_0-9]*)
    |(?P<punct>[-+*/^(),\[\]:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number | name | punct | end
    text: str
    column: int


def _tokenize(line_text: str, line_no: int) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(line_text):
        if line_text[pos] == "#":
            break
        match = _TOKEN_RE.match(line_text, pos)
        if match is None:
            raise DslSyntaxError(f"unexpected character {line_text[pos]!r}", line_no, pos + 1)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, match.group(), pos + 1))
        pos = match.end()
    tokens.append(_Token("end", "", pos + 1))
    return tokens


# ---------------------------------------------------------------------------
# Recursive descent parser
# ---------------------------------------------------------------------------

class _LineParser:
    def __init__(self, tokens: List[_Token], line_no: int):
        self.tokens = tokens
        self.line_no = line_no
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def error(self, message: str, token: Optional[_Token] = None) -> DslSyntaxError:
        token = token or self.peek()
        return DslSyntaxError(message, self.line_no, token.column)

    def expect(self, text: str) -> _Token:
        token = self.peek()
        if token.text != text or token.kind == "end":
            found = token.text or "end of line"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def span(self, token: _Token) -> Span:
        return Span(self.line_no, token.column)

    def parse_output_line(self) -> Expr:
        head = self.peek()
        if head.text != "out":
            raise self.error("expected 'out:'")
        self.advance()
        self.expect(":")
        expr = self.parse_expr()
        if self.peek().kind != "end":
            raise self.error(f"unexpected {self.peek().text!r}")
        return expr

    def parse_expr(self) -> Expr:
        left = self.parse_term()
        while self.peek().text in ("+", "-") and self.peek().kind == "punct":
            op_token = self.advance()
            right = self.parse_term()
            left = Binary(op_token.text, left, right, self.span(op_token))
        return left

    def parse_term(self) -> Expr:
        left = self.parse_unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "punct":
            op_token = self.advance()
            right = self.parse_unary()
            left = Binary(op_token.text, left, right, self.span(op_token))
        return left

    def parse_unary(self) -> Expr:
        token = self.peek()
        if token.kind == "punct" and token.text == "-":
            self.advance()
            return Unary("neg", self.parse_unary(), self.span(token))
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        token = self.peek()
        if token.kind == "punct" and token.text == "^":
            self.advance()
            exponent = self.parse_unary()
            return Binary("^", base, exponent, self.span(token))
        return base

    def parse_atom(self) -> Expr:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            value = float(token.text)
            if not math.isfinite(value):
                raise self.error(f"literal {token.text} is not finite", token)
            return Const(value, self.span(token))
        if token.kind == "punct" and token.text == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if token.kind == "name":
            return self.parse_name(token)
        found = token.text or "end of line"
        raise self.error(f"expected an operand, found {found!r}", token)

    def parse_name(self, token: _Token) -> Expr:
        self.advance()
        name = token.text
        if name == "s":
            self.expect("[")
            index_token = self.peek()
            if index_token.kind != "number" or not index_token.text.isdigit():
                raise self.error("state index must be a nonnegative integer", index_token)
            self.advance()
            self.expect("]")
            return StateRef(int(index_token.text), self.span(token))
        if name in UNARY_FUNCTIONS:
            self.expect("(")
            arg = self.parse_expr()
            self.expect(")")
            return Unary(name, arg, self.span(token))
        if name in BINARY_FUNCTIONS:
            self.expect("(")
            first = self.parse_expr()
            self.expect(",")
            second = self.parse_expr()
            self.expect(")")
            return Binary(name, first, second, self.span(token))
        raise self.error(f"unknown function {name!r}", token)


def _parse_lines(text: str) -> List[Expr]:
    outputs: List[Expr] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(raw, line_no)
        if tokens[0].kind == "end":
            continue
        outputs.append(_LineParser(tokens, line_no).parse_output_line())
    return outputs


def parse_expression(text: str) -> Expr:
    """Parse a single expression (no ``out:`` prefix)."""
    tokens = _tokenize(text, 1)
    parser = _LineParser(tokens, 1)
    expr = parser.parse_expr()
    if parser.peek().kind != "end":
        raise parser.error(f"unexpected {parser.peek().text!r}")
    return expr


def iter_nodes(expr: Expr) -> Iterator[Expr]:
    """Pre-order walk over an expression tree."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.operand)
        elif isinstance(node, Binary):
            stack.append(node.right)
            stack.append(node.left)


def state_refs(expr: Expr) -> List[StateRef]:
    return [node for node in iter_nodes(expr) if isinstance(node, StateRef)]


def _check_indices(exprs: Sequence[Expr], input_dim: int) -> None:
    for expr in exprs:
        for ref in state_refs(expr):
            if ref.index >= input_dim:
                line = ref.span.line if ref.span else None
                column = ref.span.column if ref.span else None
                raise DslValidationError(
                    f"state index s[{ref.index}] out of range for input dimension {input_dim}",
                    line,
                    column,
                )


def parse_repr_program(
    text: str, input_dim: int, max_outputs: int = DEFAULT_MAX_OUTPUTS
) -> ReprProgram:
    """
    Parse and validate a state representation program.

    Args:
        text: Program text, one ``out:`` line per added dimension
        input_dim: Dimension of the source state
        max_outputs: Upper bound on the number of added dimensions

    Returns:
        Validated ReprProgram

    Raises:
        DslSyntaxError: If the text does not follow the grammar
        DslValidationError: If an index is out of range or the output count is invalid
    """
    if input_dim < 1:
        raise DslValidationError(f"input dimension must be positive, got {input_dim}")
    outputs = _parse_lines(text)
    if not outputs:
        raise DslValidationError("program has no 'out:' lines; F must add at least one dimension")
    if len(outputs) > max_outputs:
        raise DslValidationError(f"program has {len(outputs)} outputs, limit is {max_outputs}")
    _check_indices(outputs, input_dim)
    return ReprProgram(input_dim=input_dim, outputs=tuple(outputs), source_text=text)


def parse_reward_program(text: str, input_dim: int, source_dim: int) -> RewardProgram:
    """
    Parse and validate an intrinsic reward program over the augmented state.

    Args:
        text: Program text with exactly one ``out:`` line
        input_dim: Dimension of the augmented state |S| + |S^r|
        source_dim: Dimension of the source state |S|

    Returns:
        Validated RewardProgram

    Raises:
        DslSyntaxError: If the text does not follow the grammar
        DslValidationError: If indices are out of range, the output count is not one,
            or no added dimension is referenced
    """
    if not 0 < source_dim < input_dim:
        raise DslValidationError(
            f"augmented dimension {input_dim} must exceed source dimension {source_dim}"
        )
    outputs = _parse_lines(text)
    if len(outputs) != 1:
        raise DslValidationError(f"reward program must have exactly one 'out:' line, got {len(outputs)}")
    _check_indices(outputs, input_dim)
    if not any(ref.index >= source_dim for ref in state_refs(outputs[0])):
        raise DslValidationError(
            f"reward program must use at least one added dimension s[{source_dim}]..s[{input_dim - 1}]"
        )
    return RewardProgram(input_dim=input_dim, output=outputs[0], source_text=text)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _eval_node(node: Expr, s: Sequence[float]) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, StateRef):
        return s[node.index]
    if isinstance(node, Unary):
        x = _eval_node(node.operand, s)
        if node.op == "neg":
            return -x
        try:
            return UNARY_FUNCTIONS[node.op](x)
        except OverflowError:
            return math.inf
        except ValueError:
            return math.nan
    a = _eval_node(node.left, s)
    b = _eval_node(node.right, s)
    func = BINARY_OPERATORS.get(node.op) or BINARY_FUNCTIONS[node.op]
    try:
        return func(a, b)
    except OverflowError:
        return math.inf
    except (ValueError, ZeroDivisionError):
        return math.nan


def evaluate_expression(expr: Expr, s: Sequence[float]) -> float:
    """Evaluate one expression with domain guards and the output clamp."""
    value = _eval_node(expr, s)
    if math.isnan(value):
        raise NonFiniteOutputError("expression evaluated to NaN")
    return min(max(value, -OUTPUT_CLAMP), OUTPUT_CLAMP)


def _as_floats(s: Union[Sequence[float], np.ndarray], expected: int) -> List[float]:
    values = [float(v) for v in np.asarray(s, dtype=np.float64).ravel()]
    if len(values) != expected:
        raise ValueError(f"expected input of length {expected}, got {len(values)}")
    return values


def eval_repr(program: ReprProgram, s: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """
    Compute the added dimensions F(s).

    Raises:
        ValueError: If ``s`` has the wrong length
        NonFiniteOutputError: If any output is NaN after the domain guards
    """
    values = _as_floats(s, program.input_dim)
    return np.array([evaluate_expression(expr, values) for expr in program.outputs], dtype=np.float64)


def eval_reward(program: RewardProgram, s_c: Union[Sequence[float], np.ndarray]) -> float:
    """
    Compute the intrinsic reward G(s^c).

    Raises:
        ValueError: If ``s_c`` has the wrong length
        NonFiniteOutputError: If the output is NaN after the domain guards
    """
    values = _as_floats(s_c, program.input_dim)
    return evaluate_expression(program.output, values)


def augment(program: Optional[ReprProgram], s: np.ndarray) -> np.ndarray:
    """Concatenate the source state with F(s); identity when no program is given."""
    s = np.asarray(s, dtype=np.float64)
    if program is None:
        return s.copy()
    return np.concatenate([s, eval_repr(program, s)])


# ---------------------------------------------------------------------------
# Canonical formatting
# ---------------------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_UNARY = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _format_const(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _precedence(node: Expr) -> int:
    if isinstance(node, Binary):
        if node.op in ("+", "-"):
            return _PREC_ADD
        if node.op in ("*", "/"):
            return _PREC_MUL
        if node.op == "^":
            return _PREC_POW
        return _PREC_ATOM  # min/max calls
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC_UNARY
    return _PREC_ATOM


def _format_at(node: Expr, min_prec: int) -> str:
    text = format_expression(node)
    if _precedence(node) < min_prec:
        return f"({text})"
    return text


def format_expression(node: Expr) -> str:
    """Render an expression in canonical form (single spaces around infix operators)."""
    if isinstance(node, Const):
        return _format_const(node.value)
    if isinstance(node, StateRef):
        return f"s[{node.index}]"
    if isinstance(node, Unary):
        if node.op == "neg":
            return "-" + _format_at(node.operand, _PREC_UNARY)
        return f"{node.op}({format_expression(node.operand)})"
    if node.op in BINARY_FUNCTIONS:
        return f"{node.op}({format_expression(node.left)}, {format_expression(node.right)})"
    if node.op in ("+", "-"):
        left, right = _format_at(node.left, _PREC_ADD), _format_at(node.right, _PREC_MUL)
    elif node.op in ("*", "/"):
        left, right = _format_at(node.left, _PREC_MUL), _format_at(node.right, _PREC_UNARY)
    else:
        left, right = _format_at(node.left, _PREC_ATOM), _format_at(node.right, _PREC_UNARY)
    return f"{left} {node.op} {right}"


def format_program(program: Union[ReprProgram, RewardProgram]) -> str:
    """Canonical text of a program; parsing it yields a structurally identical program."""
    outputs = program.outputs if isinstance(program, ReprProgram) else (program.output,)
    return "\n".join(f"out: {format_expression(expr)}" for expr in outputs)
