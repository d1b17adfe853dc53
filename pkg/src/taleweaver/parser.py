"""Parser for `.tale` story source text.

Line-oriented grammar: knot headers (`== name`), diverts (`-> target`),
choices (`* {guard} label [appended] -> target`), assignments
(`~ name = expr`), tag lines (`# text`), `VAR` declarations, `@title` /
`@start` headers, and free paragraph text with `{...}` interpolations,
`{cond ? then | else}` conditional text, and `<b> <i> <color=#RRGGBB>
<align=...>` style tags.  `//` starts a comment; a blank (or comment-only)
line ends a paragraph; consecutive text lines join with a single space.

The parser is total over syntax: it collects as many issues as it can
(recovering per line and at knot headers) and raises ParseFailure listing
all of them.  Story-level problems (no knots, unresolved targets) are the
compiler's concern.
"""
from __future__ import annotations

import re
from typing import Optional

from .syntax import (
    ESCAPABLE,
    MAX_NESTING_DEPTH,
    Assign,
    Binary,
    BoolLit,
    Choice,
    ConditionalText,
    Divert,
    ErrorCode,
    Expr,
    InlineContent,
    InlineSpan,
    IntLit,
    Interpolation,
    Knot,
    Paragraph,
    ParseFailure,
    ParseIssue,
    PlainText,
    StoryDocument,
    StrLit,
    StyleTag,
    StyledSpan,
    TagLine,
    Unary,
    VarRef,
)

IDENT_PATTERN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
COLOR_PATTERN = re.compile(r"#[0-9A-Fa-f]{6}\Z")

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class _Issue(Exception):
    """Internal: carries a single ParseIssue up to a recovery point."""

    def __init__(self, issue: ParseIssue):
        self.issue = issue
        super().__init__(str(issue))


# --- tokenizer for expressions ---

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<badstr>"(?:[^"\\]|\\.)*$)
  | (?P<op>==|!=|<=|>=|[+\-*/<>()])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"true", "false", "and", "or", "not"}


class _Tok:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind: str, text: str, pos: int):
        self.kind = kind  # "int" | "str" | "ident" | "op" | "eof"
        self.text = text
        self.pos = pos


def _tokenize(text: str, err) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise err(pos, ErrorCode.UNEXPECTED_TOKEN, f"unexpected character {text[pos]!r}")
        if m.lastgroup == "badstr":
            raise err(pos, ErrorCode.UNTERMINATED_STRING, "unterminated string literal")
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


def _unescape_string_literal(lit: str, pos: int, err) -> str:
    body = lit[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            nxt = body[i + 1] if i + 1 < len(body) else ""
            if nxt not in ('"', "\\"):
                raise err(pos, ErrorCode.BAD_ESCAPE, f"bad string escape \\{nxt}")
            out.append(nxt)
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


class _ExprParser:
    """Recursive descent: or < and < not < comparisons < +- < */ < unary minus."""

    def __init__(self, text: str, issue_at):
        # issue_at(offset, code, message) -> exception to raise
        self._err = issue_at
        self.toks = _tokenize(text, issue_at)
        self.i = 0
        self.depth = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def _enter(self, pos: int):
        self.depth += 1
        if self.depth > MAX_NESTING_DEPTH:
            raise self._err(pos, ErrorCode.NESTING_TOO_DEEP, "expression nested too deeply")

    def parse(self) -> Expr:
        expr = self.parse_or()
        tok = self.peek()
        if tok.kind != "eof":
            if tok.text == ")":
                raise self._err(tok.pos, ErrorCode.UNBALANCED_PAREN, "unmatched ')'")
            raise self._err(tok.pos, ErrorCode.UNEXPECTED_TOKEN, f"unexpected {tok.text!r}")
        return expr

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.peek().kind == "ident" and self.peek().text == "or":
            self.advance()
            left = Binary("or", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.peek().kind == "ident" and self.peek().text == "and":
            self.advance()
            left = Binary("and", left, self.parse_not())
        return left

    def parse_not(self) -> Expr:
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "not":
            self.advance()
            self._enter(tok.pos)
            try:
                return Unary("not", self.parse_not())
            finally:
                self.depth -= 1
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        while self.peek().kind == "op" and self.peek().text in ("==", "!=", "<", "<=", ">", ">="):
            op = self.advance().text
            left = Binary(op, left, self.parse_additive())
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            op = self.advance().text
            left = Binary(op, left, self.parse_multiplicative())
        return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while self.peek().kind == "op" and self.peek().text in ("*", "/"):
            op = self.advance().text
            left = Binary(op, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            self._enter(tok.pos)
            try:
                return Unary("neg", self.parse_unary())
            finally:
                self.depth -= 1
        return self.parse_atom()

    def parse_atom(self) -> Expr:
        tok = self.advance()
        if tok.kind == "int":
            value = int(tok.text)
            if value > INT64_MAX:
                raise self._err(tok.pos, ErrorCode.BAD_LITERAL, "integer literal out of 64-bit range")
            return IntLit(value)
        if tok.kind == "str":
            return StrLit(_unescape_string_literal(tok.text, tok.pos, self._err))
        if tok.kind == "ident":
            if tok.text == "true":
                return BoolLit(True)
            if tok.text == "false":
                return BoolLit(False)
            if tok.text in _KEYWORDS:
                raise self._err(tok.pos, ErrorCode.UNEXPECTED_TOKEN, f"unexpected keyword {tok.text!r}")
            return VarRef(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self._enter(tok.pos)
            try:
                expr = self.parse_or()
            finally:
                self.depth -= 1
            closing = self.advance()
            if closing.text != ")":
                raise self._err(tok.pos, ErrorCode.UNBALANCED_PAREN, "missing ')'")
            return expr
        if tok.kind == "eof":
            raise self._err(tok.pos, ErrorCode.UNEXPECTED_TOKEN, "unexpected end of expression")
        raise self._err(tok.pos, ErrorCode.UNEXPECTED_TOKEN, f"unexpected {tok.text!r}")


def parse_expression(text: str) -> Expr:
    """Parse a standalone expression; raises ParseFailure on error."""

    def issue_at(offset: int, code: ErrorCode, message: str) -> _Issue:
        return _Issue(ParseIssue(1, offset + 1, code, message))

    try:
        return _ExprParser(text, issue_at).parse()
    except _Issue as e:
        raise ParseFailure([e.issue]) from None


# --- source scanning helpers ---


def _strip_comment(line: str, quote_aware: bool, brace_quotes_only: bool) -> str:
    """Cut `//` to end of line, honoring backslash escapes and (where the
    line form has them) double-quoted strings; quotes only count inside
    braces for prose lines."""
    in_string = False
    depth = 0
    i = 0
    n = len(line)
    while i < n:
        c = line[i]
        if c == "\\":
            i += 2
            continue
        if quote_aware and c == '"' and (not brace_quotes_only or depth > 0):
            in_string = not in_string
        elif not in_string:
            if c == "{":
                depth += 1
            elif c == "}":
                depth = max(0, depth - 1)
            elif c == "/" and i + 1 < n and line[i + 1] == "/":
                return line[:i]
        i += 1
    return line


def _scan_braced(text: str, start: int) -> int:
    """Given text[start] == '{', return index just past the matching '}',
    or -1 if unterminated.  Skips escapes and double-quoted strings."""
    depth = 0
    in_string = False
    i = start
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == '"':
            in_string = not in_string
        elif not in_string:
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    return i + 1
        i += 1
    return -1


def _find_top_level(text: str, targets: str) -> int:
    """Index of the first char from `targets` at brace depth 0, outside
    strings and escapes; -1 if none."""
    depth = 0
    in_string = False
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == '"':
            in_string = not in_string
        elif not in_string:
            if c == "{":
                depth += 1
            elif c == "}":
                depth = max(0, depth - 1)
            elif depth == 0 and c in targets:
                return i
        i += 1
    return -1


_STYLE_OPEN = {
    "b": StyleTag("bold"),
    "i": StyleTag("italic"),
}
_STYLE_CLOSE_NAMES = {"b": "bold", "i": "italic", "color": "color", "align": "align"}
_ALIGN_VALUES = ("left", "center", "right")


class _LocMap:
    """Maps indices in a joined paragraph string back to (line, column)."""

    def __init__(self):
        self.segments: list[tuple[int, int, int, int]] = []  # (start, end, line, col0)

    def add(self, start: int, end: int, line: int, col0: int):
        self.segments.append((start, end, line, col0))

    def locate(self, idx: int) -> tuple[int, int]:
        for start, end, line, col0 in self.segments:
            if start <= idx < end:
                return line, col0 + (idx - start)
        if self.segments:
            start, end, line, col0 = self.segments[-1]
            return line, col0 + (end - start)
        return 1, 1


class Parser:
    def __init__(self, source: str):
        self.source = source.replace("\r\n", "\n").replace("\r", "\n")
        self.lines = self.source.split("\n")
        self.issues: list[ParseIssue] = []

    # --- issue helpers ---

    def _clamp(self, line: int, col: int) -> tuple[int, int]:
        line = max(1, min(line, len(self.lines)))
        col = max(1, min(col, len(self.lines[line - 1]) + 1))
        return line, col

    def record(self, line: int, col: int, code: ErrorCode, message: str):
        line, col = self._clamp(line, col)
        self.issues.append(ParseIssue(line, col, code, message))

    def _issue(self, line: int, col: int, code: ErrorCode, message: str) -> _Issue:
        line, col = self._clamp(line, col)
        return _Issue(ParseIssue(line, col, code, message))

    # --- embedded expression parsing ---

    def _parse_expr_at(self, text: str, line: int, col0: int) -> Expr:
        def issue_at(offset: int, code: ErrorCode, message: str) -> _Issue:
            return self._issue(line, col0 + offset, code, message)

        return _ExprParser(text, issue_at).parse()

    def _parse_expr_mapped(self, text: str, base_idx: int, locmap: _LocMap) -> Expr:
        def issue_at(offset: int, code: ErrorCode, message: str) -> _Issue:
            ln, col = locmap.locate(base_idx + offset)
            return self._issue(ln, col, code, message)

        return _ExprParser(text, issue_at).parse()

    # --- inline content ---

    def _parse_inline(
        self,
        s: str,
        locmap: _LocMap,
        base: int,
        closing: Optional[str],
        depth: int,
    ) -> tuple[InlineContent, int]:
        """Parse inline spans of s starting at `base`; stops after the close
        tag named by `closing` (or at end of s when closing is None).
        Returns (content, index past consumed input)."""
        spans: list[InlineSpan] = []
        buf: list[str] = []
        i = base
        n = len(s)

        def flush():
            if buf:
                spans.append(PlainText("".join(buf)))
                buf.clear()

        def loc(idx: int) -> tuple[int, int]:
            return locmap.locate(idx)

        while i < n:
            c = s[i]
            if c == "\\":
                nxt = s[i + 1] if i + 1 < n else ""
                if nxt not in ESCAPABLE:
                    ln, col = loc(i)
                    raise self._issue(ln, col, ErrorCode.BAD_ESCAPE, f"unknown escape \\{nxt}")
                buf.append(nxt)
                i += 2
            elif c == "{":
                flush()
                end = _scan_braced(s, i)
                if end == -1:
                    ln, col = loc(i)
                    raise self._issue(
                        ln, col, ErrorCode.UNTERMINATED_INTERPOLATION, "missing closing '}'"
                    )
                spans.append(self._parse_brace(s, locmap, i + 1, end - 1, depth))
                i = end
            elif c == "}":
                ln, col = loc(i)
                raise self._issue(ln, col, ErrorCode.UNKNOWN_LINE_FORM, "stray '}' (escape as \\})")
            elif c == "<":
                gt = s.find(">", i + 1)
                if gt == -1:
                    ln, col = loc(i)
                    raise self._issue(ln, col, ErrorCode.UNBALANCED_STYLE_TAG, "unterminated style tag")
                body = s[i + 1 : gt]
                if body.startswith("/"):
                    kind = _STYLE_CLOSE_NAMES.get(body[1:])
                    if kind is None:
                        ln, col = loc(i)
                        raise self._issue(ln, col, ErrorCode.UNKNOWN_STYLE_TAG, f"unknown closing tag </{body[1:]}>")
                    if closing != kind:
                        ln, col = loc(i)
                        raise self._issue(
                            ln, col, ErrorCode.UNBALANCED_STYLE_TAG, f"unexpected </{body[1:]}>"
                        )
                    flush()
                    return InlineContent(tuple(spans)), gt + 1
                tag = self._parse_open_tag(body, loc(i))
                if depth + 1 > MAX_NESTING_DEPTH:
                    ln, col = loc(i)
                    raise self._issue(ln, col, ErrorCode.NESTING_TOO_DEEP, "style tags nested too deeply")
                flush()
                children, i2 = self._parse_inline(s, locmap, gt + 1, tag.kind, depth + 1)
                spans.append(StyledSpan(tag, children))
                i = i2
            else:
                buf.append(c)
                i += 1

        if closing is not None:
            ln, col = loc(n)
            raise self._issue(ln, col, ErrorCode.UNBALANCED_STYLE_TAG, f"missing </...> for <{closing}>")
        flush()
        return InlineContent(tuple(spans)), n

    def _parse_open_tag(self, body: str, at: tuple[int, int]) -> StyleTag:
        ln, col = at
        if body in _STYLE_OPEN:
            return _STYLE_OPEN[body]
        if body.startswith("color="):
            value = body[len("color="):]
            if not COLOR_PATTERN.match(value):
                raise self._issue(ln, col, ErrorCode.BAD_COLOR_LITERAL, f"bad color {value!r}")
            return StyleTag("color", value.upper().replace("#", "#"))
        if body.startswith("align="):
            value = body[len("align="):]
            if value not in _ALIGN_VALUES:
                raise self._issue(ln, col, ErrorCode.UNKNOWN_STYLE_TAG, f"bad alignment {value!r}")
            return StyleTag("align", value)
        raise self._issue(ln, col, ErrorCode.UNKNOWN_STYLE_TAG, f"unknown style tag <{body}>")

    def _parse_brace(self, s: str, locmap: _LocMap, start: int, end: int, depth: int) -> InlineSpan:
        """Parse brace content s[start:end] as interpolation or conditional."""
        if depth + 1 > MAX_NESTING_DEPTH:
            ln, col = locmap.locate(start)
            raise self._issue(ln, col, ErrorCode.NESTING_TOO_DEEP, "braces nested too deeply")
        inner = s[start:end]
        qmark = _find_top_level(inner, "?")
        if qmark == -1:
            return Interpolation(self._parse_expr_mapped(inner, start, locmap))
        cond = self._parse_expr_mapped(inner[:qmark], start, locmap)
        rest = inner[qmark + 1 :]
        rest_base = start + qmark + 1
        bar = _find_top_level(rest, "|")
        if bar == -1:
            then_text, else_text, else_base = rest, None, 0
        else:
            then_text = rest[:bar]
            else_text = rest[bar + 1 :]
            else_base = rest_base + bar + 1
        then_content, _ = self._parse_inline(
            then_text.strip(), self._submap(locmap, rest_base, then_text), 0, None, depth + 1
        )
        else_content = None
        if else_text is not None:
            else_content, _ = self._parse_inline(
                else_text.strip(), self._submap(locmap, else_base, else_text), 0, None, depth + 1
            )
        return ConditionalText(cond, then_content, else_content)

    def _submap(self, locmap: _LocMap, base: int, text: str) -> _LocMap:
        lead = len(text) - len(text.lstrip())
        sub = _LocMap()
        ln, col = locmap.locate(base + lead)
        sub.add(0, len(text.strip()) + 1, ln, col)
        return sub

    def _check_alignment(self, content: InlineContent, line: int):
        """Alignment spans are legal only as the sole outermost span."""

        def walk(c: InlineContent, outermost: bool):
            sole = len(c.spans) == 1
            for span in c.spans:
                if isinstance(span, StyledSpan):
                    if span.style.kind == "align" and not (outermost and sole):
                        raise self._issue(
                            line, 1, ErrorCode.ALIGNMENT_NOT_OUTERMOST,
                            "alignment tag must wrap the whole paragraph",
                        )
                    walk(span.children, False)
                elif isinstance(span, ConditionalText):
                    walk(span.then_content, False)
                    if span.else_content is not None:
                        walk(span.else_content, False)

        walk(content, True)

    # --- statement line parsing ---

    def _parse_choice(self, stripped: str, line: int, col0: int) -> Choice:
        rest = stripped[1:].lstrip()  # drop '*'
        offset = col0 + (len(stripped) - len(rest)) + 1
        guard = None
        if rest.startswith("{"):
            end = _scan_braced(rest, 0)
            if end == -1:
                raise self._issue(line, offset, ErrorCode.UNTERMINATED_INTERPOLATION, "missing '}' after guard")
            guard = self._parse_expr_at(rest[1 : end - 1], line, offset + 1)
            consumed = len(rest[end:])
            rest = rest[end:].lstrip()
            offset += end + (consumed - len(rest))
        arrow = self._find_arrow(rest)
        if arrow == -1:
            raise self._issue(line, offset + len(rest), ErrorCode.CHOICE_MISSING_TARGET, "choice needs '-> target'")
        label_part = rest[:arrow].rstrip()
        target = rest[arrow + 2 :].strip()
        if not target:
            raise self._issue(line, offset + len(rest), ErrorCode.CHOICE_MISSING_TARGET, "choice needs '-> target'")
        if target != "END" and not IDENT_PATTERN.match(target):
            raise self._issue(line, offset + arrow + 2, ErrorCode.BAD_DIVERT_TARGET, f"bad target {target!r}")
        appended = None
        if label_part.endswith("]"):
            lb = label_part.rfind("[")
            if lb == -1:
                raise self._issue(line, offset, ErrorCode.UNKNOWN_LINE_FORM, "']' without '[' in choice")
            appended_text = label_part[lb + 1 : -1]
            sub = _LocMap()
            sub.add(0, len(appended_text) + 1, line, offset + lb + 1)
            appended, _ = self._parse_inline(appended_text, sub, 0, None, 0)
            label_part = label_part[:lb].rstrip()
        label = self._unescape_plain(label_part, line, offset)
        if not label.strip():
            raise self._issue(line, offset, ErrorCode.EMPTY_CHOICE_LABEL, "choice label is empty")
        return Choice(label=label.strip(), target=target, guard=guard, appended=appended,
                      line=line, column=col0 + 1)

    @staticmethod
    def _find_arrow(text: str) -> int:
        """First `->` outside brackets/braces/escapes."""
        depth = 0
        i = 0
        n = len(text)
        while i < n:
            c = text[i]
            if c == "\\":
                i += 2
                continue
            if c in "[{":
                depth += 1
            elif c in "]}":
                depth = max(0, depth - 1)
            elif depth == 0 and c == "-" and i + 1 < n and text[i + 1] == ">":
                return i
            i += 1
        return -1

    def _unescape_plain(self, text: str, line: int, col0: int) -> str:
        out: list[str] = []
        i = 0
        while i < len(text):
            c = text[i]
            if c == "\\":
                nxt = text[i + 1] if i + 1 < len(text) else ""
                if nxt not in ESCAPABLE:
                    raise self._issue(line, col0 + i, ErrorCode.BAD_ESCAPE, f"unknown escape \\{nxt}")
                out.append(nxt)
                i += 2
            else:
                out.append(c)
                i += 1
        return "".join(out)

    def _parse_literal(self, text: str, line: int, col0: int):
        expr = self._parse_expr_at(text, line, col0)
        if isinstance(expr, IntLit):
            return expr.value
        if isinstance(expr, StrLit):
            return expr.value
        if isinstance(expr, BoolLit):
            return expr.value
        if isinstance(expr, Unary) and expr.op == "neg" and isinstance(expr.operand, IntLit):
            value = -expr.operand.value
            if value < INT64_MIN:
                raise self._issue(line, col0, ErrorCode.BAD_LITERAL, "integer literal out of 64-bit range")
            return value
        raise self._issue(line, col0, ErrorCode.BAD_LITERAL, "VAR initializer must be a literal")

    # --- top level ---

    def parse(self) -> Optional[StoryDocument]:
        doc = StoryDocument()
        seen_knots: set[str] = set()
        seen_vars: set[str] = set()
        current: Optional[Knot] = None
        para_lines: list[tuple[str, int, int]] = []  # (text, line_no, col0)

        def flush_paragraph():
            if not para_lines:
                return
            locmap = _LocMap()
            pieces: list[str] = []
            pos = 0
            for text, line_no, col0 in para_lines:
                if pieces:
                    pieces.append(" ")
                    pos += 1
                locmap.add(pos, pos + len(text) + 1, line_no, col0 + 1)
                pieces.append(text)
                pos += len(text)
            joined = "".join(pieces)
            first_line = para_lines[0][1]
            first_col = para_lines[0][2] + 1
            del para_lines[:]
            try:
                content, _ = self._parse_inline(joined, locmap, 0, None, 0)
                self._check_alignment(content, first_line)
            except _Issue as e:
                self.issues.append(e.issue)
                return
            if current is not None:
                current.statements.append(Paragraph(content, line=first_line, column=first_col))
            else:
                self.record(first_line, first_col, ErrorCode.STATEMENT_OUTSIDE_KNOT,
                            "text before the first knot header")

        for line_no, raw in enumerate(self.lines, start=1):
            stripped_raw = raw.strip()
            if not stripped_raw or stripped_raw.startswith("//"):
                flush_paragraph()
                continue

            kind = self._classify(stripped_raw)
            quote_aware = kind in ("var", "assign", "choice", "paragraph")
            brace_only = kind in ("choice", "paragraph")
            cleaned = _strip_comment(raw, quote_aware, brace_only).rstrip()
            stripped = cleaned.strip()
            if not stripped:
                flush_paragraph()
                continue
            col0 = len(cleaned) - len(cleaned.lstrip())

            if kind != "paragraph":
                flush_paragraph()

            try:
                if kind == "knot":
                    name = stripped[2:].strip()
                    if not IDENT_PATTERN.match(name):
                        raise self._issue(line_no, col0 + 3, ErrorCode.BAD_IDENTIFIER,
                                          f"bad knot name {name!r}")
                    if name in seen_knots:
                        self.record(line_no, col0 + 3, ErrorCode.DUPLICATE_KNOT_NAME,
                                    f"duplicate knot {name!r}")
                    seen_knots.add(name)
                    current = Knot(name=name, line=line_no)
                    doc.knots.append(current)
                elif kind == "title":
                    if doc.title is not None:
                        raise self._issue(line_no, col0 + 1, ErrorCode.DUPLICATE_TITLE, "second @title")
                    if current is not None:
                        raise self._issue(line_no, col0 + 1, ErrorCode.UNKNOWN_LINE_FORM,
                                          "@title must come before the first knot")
                    doc.title = stripped[len("@title"):].strip()
                elif kind == "start":
                    if doc.start_knot is not None:
                        raise self._issue(line_no, col0 + 1, ErrorCode.DUPLICATE_START, "second @start")
                    if current is not None:
                        raise self._issue(line_no, col0 + 1, ErrorCode.UNKNOWN_LINE_FORM,
                                          "@start must come before the first knot")
                    name = stripped[len("@start"):].strip()
                    if not IDENT_PATTERN.match(name):
                        raise self._issue(line_no, col0 + 1, ErrorCode.BAD_IDENTIFIER,
                                          f"bad start knot name {name!r}")
                    doc.start_knot = name
                elif kind == "var":
                    if current is not None:
                        raise self._issue(line_no, col0 + 1, ErrorCode.UNKNOWN_LINE_FORM,
                                          "VAR declarations must come before the first knot")
                    body = stripped[len("VAR"):].strip()
                    eq = body.find("=")
                    if eq == -1:
                        raise self._issue(line_no, col0 + 1, ErrorCode.UNKNOWN_LINE_FORM,
                                          "VAR needs 'name = literal'")
                    name = body[:eq].strip()
                    if not IDENT_PATTERN.match(name):
                        raise self._issue(line_no, col0 + 1, ErrorCode.BAD_IDENTIFIER,
                                          f"bad variable name {name!r}")
                    if name in seen_vars:
                        raise self._issue(line_no, col0 + 1, ErrorCode.DUPLICATE_VAR,
                                          f"duplicate VAR {name!r}")
                    value = self._parse_literal(body[eq + 1 :].strip(), line_no, col0 + eq + 2)
                    seen_vars.add(name)
                    doc.var_decls.append((name, value))
                elif kind == "divert":
                    target = stripped[2:].strip()
                    if target != "END" and not IDENT_PATTERN.match(target):
                        raise self._issue(line_no, col0 + 3, ErrorCode.BAD_DIVERT_TARGET,
                                          f"bad divert target {target!r}")
                    self._append_stmt(current, Divert(target, line=line_no, column=col0 + 1), line_no, col0)
                elif kind == "choice":
                    stmt = self._parse_choice(stripped, line_no, col0)
                    self._append_stmt(current, stmt, line_no, col0)
                elif kind == "assign":
                    body = stripped[1:].strip()
                    eq = body.find("=")
                    if eq == -1:
                        raise self._issue(line_no, col0 + 1, ErrorCode.UNKNOWN_LINE_FORM,
                                          "assignment needs '~ name = expr'")
                    name = body[:eq].strip()
                    if not IDENT_PATTERN.match(name):
                        raise self._issue(line_no, col0 + 1, ErrorCode.BAD_IDENTIFIER,
                                          f"bad variable name {name!r}")
                    expr = self._parse_expr_at(body[eq + 1 :].strip(), line_no, col0 + eq + 3)
                    self._append_stmt(current, Assign(name, expr, line=line_no, column=col0 + 1),
                                      line_no, col0)
                elif kind == "tag":
                    text = stripped[1:].strip()
                    self._append_stmt(current, TagLine(text, line=line_no, column=col0 + 1),
                                      line_no, col0)
                else:  # paragraph text line
                    para_lines.append((stripped, line_no, col0))
            except _Issue as e:
                self.issues.append(e.issue)

        flush_paragraph()
        if self.issues:
            return None
        return doc

    def _append_stmt(self, current: Optional[Knot], stmt, line_no: int, col0: int):
        if current is None:
            raise self._issue(line_no, col0 + 1, ErrorCode.STATEMENT_OUTSIDE_KNOT,
                              "statement before the first knot header")
        current.statements.append(stmt)

    @staticmethod
    def _classify(stripped: str) -> str:
        if stripped.startswith("=="):
            return "knot"
        if stripped.startswith("@title"):
            return "title"
        if stripped.startswith("@start"):
            return "start"
        if stripped.startswith("VAR ") or stripped == "VAR":
            return "var"
        if stripped.startswith("->"):
            return "divert"
        if stripped.startswith("*"):
            return "choice"
        if stripped.startswith("~"):
            return "assign"
        if stripped.startswith("#"):
            return "tag"
        return "paragraph"


def parse_story(source: str) -> StoryDocument:
    """Parse story source; raises ParseFailure listing every issue found."""
    parser = Parser(source)
    doc = parser.parse()
    if doc is None:
        raise ParseFailure(parser.issues)
    return doc


def try_parse_story(source: str) -> tuple[Optional[StoryDocument], list[ParseIssue]]:
    parser = Parser(source)
    doc = parser.parse()
    return doc, parser.issues
