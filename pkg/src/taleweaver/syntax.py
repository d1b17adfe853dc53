"""Syntax tree for the `.tale` branching-story markup language.

All nodes are plain dataclasses. Source locations (line/column, 1-based)
are carried for diagnostics but excluded from equality so that structural
comparison survives a print/re-parse round trip.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

MAX_NESTING_DEPTH = 32

END_TARGET = "END"

IDENT_RE = r"[A-Za-z_][A-Za-z0-9_]*"

# Characters that may be backslash-escaped in story text.
ESCAPABLE = set("{}*~<\\/")


class ErrorCode(str, Enum):
    UNKNOWN_LINE_FORM = "unknown_line_form"
    UNTERMINATED_STRING = "unterminated_string"
    UNBALANCED_STYLE_TAG = "unbalanced_style_tag"
    UNKNOWN_STYLE_TAG = "unknown_style_tag"
    BAD_COLOR_LITERAL = "bad_color_literal"
    DUPLICATE_KNOT_NAME = "duplicate_knot_name"
    CHOICE_MISSING_TARGET = "choice_missing_target"
    EMPTY_CHOICE_LABEL = "empty_choice_label"
    ALIGNMENT_NOT_OUTERMOST = "alignment_not_outermost"
    DUPLICATE_VAR = "duplicate_var"
    DUPLICATE_TITLE = "duplicate_title"
    DUPLICATE_START = "duplicate_start"
    BAD_IDENTIFIER = "bad_identifier"
    BAD_LITERAL = "bad_literal"
    BAD_DIVERT_TARGET = "bad_divert_target"
    STATEMENT_OUTSIDE_KNOT = "statement_outside_knot"
    UNTERMINATED_INTERPOLATION = "unterminated_interpolation"
    NESTING_TOO_DEEP = "nesting_too_deep"
    UNBALANCED_PAREN = "unbalanced_paren"
    UNEXPECTED_TOKEN = "unexpected_token"
    BAD_ESCAPE = "bad_escape"


@dataclass(frozen=True)
class ParseIssue:
    line: int
    column: int
    code: ErrorCode
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.code.value}: {self.message}"


class ParseFailure(Exception):
    """Raised when a source file cannot be parsed; carries all issues found."""

    def __init__(self, issues: list[ParseIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


# --- expressions ---


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class StrLit:
    value: str


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "not" | "neg"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / == != < <= > >= and or
    left: "Expr"
    right: "Expr"


Expr = Union[IntLit, StrLit, BoolLit, VarRef, Unary, Binary]


# --- inline content ---


@dataclass(frozen=True)
class StyleTag:
    kind: str  # "bold" | "italic" | "color" | "align"
    value: Optional[str] = None  # "#RRGGBB" for color, left|center|right for align


@dataclass(frozen=True)
class PlainText:
    text: str


@dataclass(frozen=True)
class Interpolation:
    expr: Expr


@dataclass(frozen=True)
class ConditionalText:
    cond: Expr
    then_content: "InlineContent"
    else_content: Optional["InlineContent"] = None


@dataclass(frozen=True)
class StyledSpan:
    style: StyleTag
    children: "InlineContent"


InlineSpan = Union[PlainText, Interpolation, ConditionalText, StyledSpan]


@dataclass(frozen=True)
class InlineContent:
    spans: tuple[InlineSpan, ...]


# --- statements ---


@dataclass
class Paragraph:
    content: InlineContent
    line: int = field(default=0, compare=False)
    column: int = field(default=1, compare=False)


@dataclass
class Divert:
    target: str  # knot name or END_TARGET
    line: int = field(default=0, compare=False)
    column: int = field(default=1, compare=False)


@dataclass
class Choice:
    label: str
    target: str  # knot name or END_TARGET
    guard: Optional[Expr] = None
    appended: Optional[InlineContent] = None
    line: int = field(default=0, compare=False)
    column: int = field(default=1, compare=False)


@dataclass
class Assign:
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=1, compare=False)


@dataclass
class TagLine:
    text: str
    line: int = field(default=0, compare=False)
    column: int = field(default=1, compare=False)


Statement = Union[Paragraph, Divert, Choice, Assign, TagLine]


@dataclass
class Knot:
    name: str
    statements: list[Statement] = field(default_factory=list)
    line: int = field(default=0, compare=False)

    @property
    def tags(self) -> list[str]:
        """All tag-line texts in this knot, in order."""
        return [s.text for s in self.statements if isinstance(s, TagLine)]


@dataclass
class StoryDocument:
    title: Optional[str] = None
    start_knot: Optional[str] = None  # None = first knot in file order
    var_decls: list[tuple[str, Union[int, str, bool]]] = field(default_factory=list)
    knots: list[Knot] = field(default_factory=list)

    def resolved_start(self) -> Optional[str]:
        if self.start_knot is not None:
            return self.start_knot
        return self.knots[0].name if self.knots else None


def walk_expr(expr: Expr):
    """Yield every node of an expression tree, preorder."""
    yield expr
    if isinstance(expr, Unary):
        yield from walk_expr(expr.operand)
    elif isinstance(expr, Binary):
        yield from walk_expr(expr.left)
        yield from walk_expr(expr.right)


def walk_inline_exprs(content: InlineContent):
    """Yield every expression appearing in inline content."""
    for span in content.spans:
        if isinstance(span, Interpolation):
            yield span.expr
        elif isinstance(span, ConditionalText):
            yield span.cond
            yield from walk_inline_exprs(span.then_content)
            if span.else_content is not None:
                yield from walk_inline_exprs(span.else_content)
        elif isinstance(span, StyledSpan):
            yield from walk_inline_exprs(span.children)


def plain_text_of(content: InlineContent) -> str:
    """Concatenated PlainText of inline content, ignoring dynamic spans."""
    out: list[str] = []
    for span in content.spans:
        if isinstance(span, PlainText):
            out.append(span.text)
        elif isinstance(span, StyledSpan):
            out.append(plain_text_of(span.children))
    return "".join(out)
