"""Canonical printer for story documents.

`parse_story(print_story(doc))` is structurally identical to `doc` (source
locations aside) for any document obtained from the parser; this is the
round-trip anchor the test suite leans on.
"""
from __future__ import annotations

from .syntax import (
    Assign,
    Binary,
    BoolLit,
    Choice,
    ConditionalText,
    Divert,
    Expr,
    InlineContent,
    IntLit,
    Interpolation,
    Paragraph,
    PlainText,
    StoryDocument,
    StrLit,
    StyledSpan,
    TagLine,
    Unary,
    VarRef,
)

_ESCAPE_CHARS = "{}*~<\\/"

_PRECEDENCE = {
    "or": 1,
    "and": 2,
    "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6,
}


def escape_text(text: str) -> str:
    out = []
    for c in text:
        if c in _ESCAPE_CHARS:
            out.append("\\")
        out.append(c)
    return "".join(out)


def _expr_prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return _PRECEDENCE[expr.op]
    if isinstance(expr, Unary):
        return 3 if expr.op == "not" else 7
    return 8


def print_expr(expr: Expr, min_prec: int = 0) -> str:
    prec = _expr_prec(expr)
    if isinstance(expr, IntLit):
        text = str(expr.value)
    elif isinstance(expr, BoolLit):
        text = "true" if expr.value else "false"
    elif isinstance(expr, StrLit):
        body = expr.value.replace("\\", "\\\\").replace('"', '\\"')
        text = f'"{body}"'
    elif isinstance(expr, VarRef):
        text = expr.name
    elif isinstance(expr, Unary):
        if expr.op == "not":
            text = f"not {print_expr(expr.operand, 3)}"
        else:
            text = f"-{print_expr(expr.operand, 7)}"
    elif isinstance(expr, Binary):
        left = print_expr(expr.left, prec)
        right = print_expr(expr.right, prec + 1)
        text = f"{left} {expr.op} {right}"
    else:  # pragma: no cover
        raise TypeError(f"not an expression: {expr!r}")
    if prec < min_prec:
        return f"({text})"
    return text


def print_inline(content: InlineContent) -> str:
    parts: list[str] = []
    for span in content.spans:
        if isinstance(span, PlainText):
            parts.append(escape_text(span.text))
        elif isinstance(span, Interpolation):
            parts.append("{" + print_expr(span.expr) + "}")
        elif isinstance(span, ConditionalText):
            piece = "{" + print_expr(span.cond) + " ? " + print_inline(span.then_content)
            if span.else_content is not None:
                piece += " | " + print_inline(span.else_content)
            parts.append(piece + "}")
        elif isinstance(span, StyledSpan):
            parts.append(_open_tag(span) + print_inline(span.children) + _close_tag(span))
        else:  # pragma: no cover
            raise TypeError(f"not an inline span: {span!r}")
    return "".join(parts)


def _open_tag(span: StyledSpan) -> str:
    kind = span.style.kind
    if kind == "bold":
        return "<b>"
    if kind == "italic":
        return "<i>"
    if kind == "color":
        return f"<color={span.style.value}>"
    if kind == "align":
        return f"<align={span.style.value}>"
    raise ValueError(f"unknown style kind {kind!r}")


def _close_tag(span: StyledSpan) -> str:
    kind = span.style.kind
    if kind == "bold":
        return "</b>"
    if kind == "italic":
        return "</i>"
    return f"</{kind}>"


def _print_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    body = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{body}"'


def print_story(doc: StoryDocument) -> str:
    lines: list[str] = []
    if doc.title is not None:
        lines.append(f"@title {doc.title}".rstrip())
    if doc.start_knot is not None:
        lines.append(f"@start {doc.start_knot}")
    for name, value in doc.var_decls:
        lines.append(f"VAR {name} = {_print_literal(value)}")
    for knot in doc.knots:
        lines.append(f"== {knot.name}")
        prev_was_paragraph = False
        for stmt in knot.statements:
            if isinstance(stmt, Paragraph):
                if prev_was_paragraph:
                    lines.append("")
                lines.append(print_inline(stmt.content))
                prev_was_paragraph = True
                continue
            prev_was_paragraph = False
            if isinstance(stmt, Divert):
                lines.append(f"-> {stmt.target}")
            elif isinstance(stmt, Choice):
                piece = "* "
                if stmt.guard is not None:
                    piece += "{" + print_expr(stmt.guard) + "} "
                piece += escape_text(stmt.label)
                if stmt.appended is not None:
                    piece += " [" + print_inline(stmt.appended) + "]"
                piece += f" -> {stmt.target}"
                lines.append(piece)
            elif isinstance(stmt, Assign):
                lines.append(f"~ {stmt.name} = {print_expr(stmt.expr)}")
            elif isinstance(stmt, TagLine):
                lines.append(f"# {stmt.text}")
            else:  # pragma: no cover
                raise TypeError(f"not a statement: {stmt!r}")
    if not lines:
        return ""
    return "\n".join(lines) + "\n"
