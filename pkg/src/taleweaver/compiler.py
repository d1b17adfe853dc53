"""Compile a parsed story document into a resolved story graph, plus the
author-facing analyses: dangling diverts, unreachable knots, dead ends,
undeclared variables, and a brute-force path enumerator."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .printer import print_story
from .syntax import (
    Assign,
    Choice,
    Divert,
    Expr,
    InlineContent,
    Paragraph,
    StoryDocument,
    TagLine,
    VarRef,
    walk_expr,
    walk_inline_exprs,
)

END_ID = -1  # sentinel knot id, never present in the knot table

DEFAULT_PATH_CAP = 100_000

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def story_hash(doc: StoryDocument) -> str:
    """64-bit FNV-1a over the canonical printed form, as 16 hex chars."""
    return format(fnv1a_64(print_story(doc).encode("utf-8")), "016x")


class Severity(str, Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    knot: Optional[str] = None
    line: int = 0

    def __str__(self) -> str:
        where = f"{self.knot or '-'}:{self.line}"
        return f"{self.severity.value} {self.code} {where} {self.message}"

    def to_json(self) -> dict:
        return {
            "severity": self.severity.value.lower(),
            "code": self.code,
            "knot": self.knot,
            "line": self.line,
            "message": self.message,
        }


# --- compiled statement forms (name references resolved to knot ids) ---


@dataclass(frozen=True)
class EmitText:
    content: InlineContent
    line: int
    stmt_index: int  # index in the compiled body


@dataclass(frozen=True)
class SetVar:
    name: str
    expr: Expr
    line: int


@dataclass(frozen=True)
class AttachTag:
    text: str
    line: int


@dataclass(frozen=True)
class Jump:
    target: int  # knot id or END_ID
    line: int


CompiledStatement = Union[EmitText, SetVar, AttachTag, Jump]


@dataclass(frozen=True)
class CompiledChoice:
    index: int
    label: str
    target: int  # knot id or END_ID
    guard: Optional[Expr] = None
    appended: Optional[InlineContent] = None
    line: int = 0


class ExitKind(str, Enum):
    DIVERT = "divert"
    CHOICE_POINT = "choice_point"
    FALL_OFF = "fall_off"


@dataclass(frozen=True)
class CompiledKnot:
    id: int
    name: str
    body: tuple[CompiledStatement, ...]
    choices: tuple[CompiledChoice, ...]
    exit_kind: ExitKind
    exit_target: Optional[int] = None  # for DIVERT: first unconditional jump


@dataclass(frozen=True)
class StoryGraph:
    title: Optional[str]
    start: int
    knots: tuple[CompiledKnot, ...]
    var_decls: dict[str, Union[int, str, bool]]
    knot_index: dict[str, int]
    content_hash: str

    def knot_name(self, knot_id: int) -> str:
        return "END" if knot_id == END_ID else self.knots[knot_id].name


@dataclass
class CompileResult:
    graph: Optional[StoryGraph]
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.ERROR]

    @property
    def ok(self) -> bool:
        return self.graph is not None


def compile_story(doc: StoryDocument) -> CompileResult:
    """Resolve every name reference and run the static checks.  Errors block
    graph emission; warnings accompany the graph."""
    diagnostics: list[Diagnostic] = []
    if not doc.knots:
        diagnostics.append(Diagnostic(Severity.ERROR, "no_knots", "story has no knots"))
        return CompileResult(None, diagnostics)

    knot_index = {knot.name: i for i, knot in enumerate(doc.knots)}
    declared = {name for name, _ in doc.var_decls}

    start_name = doc.resolved_start()
    start_id = knot_index.get(start_name)
    if start_id is None:
        diagnostics.append(
            Diagnostic(Severity.ERROR, "missing_start_knot", f"start knot {start_name!r} is not defined")
        )

    def resolve(target: str, knot_name: str, line: int) -> Optional[int]:
        if target == "END":
            return END_ID
        resolved = knot_index.get(target)
        if resolved is None:
            diagnostics.append(
                Diagnostic(Severity.ERROR, "dangling_divert",
                           f"divert target {target!r} is not defined", knot_name, line)
            )
        return resolved

    def check_expr(expr: Expr, knot_name: str, line: int):
        for node in walk_expr(expr):
            if isinstance(node, VarRef) and node.name not in declared:
                diagnostics.append(
                    Diagnostic(Severity.ERROR, "undeclared_variable",
                               f"variable {node.name!r} is not declared", knot_name, line)
                )

    def check_inline(content: InlineContent, knot_name: str, line: int):
        for expr in walk_inline_exprs(content):
            check_expr(expr, knot_name, line)

    compiled_knots: list[CompiledKnot] = []
    for knot_id, knot in enumerate(doc.knots):
        body: list[CompiledStatement] = []
        choices: list[CompiledChoice] = []
        diverted_at: Optional[int] = None
        first_jump: Optional[int] = None
        for stmt in knot.statements:
            if diverted_at is not None:
                diagnostics.append(
                    Diagnostic(Severity.WARNING, "statement_after_divert",
                               f"unreachable statement after divert on line {diverted_at}",
                               knot.name, getattr(stmt, "line", 0))
                )
                diverted_at = None  # one warning per divert is enough
            if isinstance(stmt, Paragraph):
                check_inline(stmt.content, knot.name, stmt.line)
                body.append(EmitText(stmt.content, stmt.line, len(body)))
            elif isinstance(stmt, Assign):
                check_expr(stmt.expr, knot.name, stmt.line)
                if stmt.name not in declared:
                    diagnostics.append(
                        Diagnostic(Severity.ERROR, "undeclared_variable",
                                   f"variable {stmt.name!r} is not declared", knot.name, stmt.line)
                    )
                body.append(SetVar(stmt.name, stmt.expr, stmt.line))
            elif isinstance(stmt, TagLine):
                body.append(AttachTag(stmt.text, stmt.line))
            elif isinstance(stmt, Divert):
                target = resolve(stmt.target, knot.name, stmt.line)
                body.append(Jump(END_ID if target is None else target, stmt.line))
                if first_jump is None:
                    first_jump = END_ID if target is None else target
                diverted_at = stmt.line
            elif isinstance(stmt, Choice):
                if stmt.guard is not None:
                    check_expr(stmt.guard, knot.name, stmt.line)
                if stmt.appended is not None:
                    check_inline(stmt.appended, knot.name, stmt.line)
                target = resolve(stmt.target, knot.name, stmt.line)
                choices.append(
                    CompiledChoice(index=len(choices), label=stmt.label,
                                   target=END_ID if target is None else target,
                                   guard=stmt.guard, appended=stmt.appended, line=stmt.line)
                )
        if choices:
            exit_kind, exit_target = ExitKind.CHOICE_POINT, None
        elif first_jump is not None:
            exit_kind, exit_target = ExitKind.DIVERT, first_jump
        else:
            exit_kind, exit_target = ExitKind.FALL_OFF, None
            diagnostics.append(
                Diagnostic(Severity.WARNING, "dead_end",
                           f"knot {knot.name!r} has neither a divert nor choices",
                           knot.name, knot.line)
            )
        compiled_knots.append(
            CompiledKnot(id=knot_id, name=knot.name, body=tuple(body),
                         choices=tuple(choices), exit_kind=exit_kind, exit_target=exit_target)
        )

    if any(d.severity is Severity.ERROR for d in diagnostics):
        return CompileResult(None, diagnostics)

    graph = StoryGraph(
        title=doc.title,
        start=start_id,
        knots=tuple(compiled_knots),
        var_decls=dict(doc.var_decls),
        knot_index=knot_index,
        content_hash=story_hash(doc),
    )
    return CompileResult(graph, diagnostics)


def _successors(knot: CompiledKnot) -> list[int]:
    """All knot ids this knot can transfer to, guards ignored."""
    out: list[int] = []
    for stmt in knot.body:
        if isinstance(stmt, Jump):
            out.append(stmt.target)
    for choice in knot.choices:
        out.append(choice.target)
    return out


def reachability(graph: StoryGraph) -> tuple[set[int], list[Diagnostic]]:
    """Knot ids reachable from start via diverts and choice targets, guards
    ignored (conservative over-approximation), plus unreachable warnings."""
    seen: set[int] = set()
    frontier = [graph.start]
    while frontier:
        knot_id = frontier.pop()
        if knot_id == END_ID or knot_id in seen:
            continue
        seen.add(knot_id)
        frontier.extend(_successors(graph.knots[knot_id]))
    diagnostics = [
        Diagnostic(Severity.WARNING, "unreachable_knot",
                   f"knot {knot.name!r} is unreachable from the start", knot.name)
        for knot in graph.knots
        if knot.id not in seen
    ]
    return seen, diagnostics


class PathExplosion(Exception):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"more than {cap} paths")


@dataclass(frozen=True)
class PathStep:
    knot: int
    choice: Optional[int]  # choice index taken, None for a divert


@dataclass(frozen=True)
class Path:
    steps: tuple[PathStep, ...]
    truncated: bool = False


def enumerate_paths(graph: StoryGraph, max_steps: int, cap: int = DEFAULT_PATH_CAP) -> list[Path]:
    """Depth-first enumeration of all guard-ignored paths from start, in
    lexicographic choice-index order.  A knot's first unconditional divert
    wins over its choices, matching the runtime."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    # recursion depth tracks path length
    limit = sys.getrecursionlimit()
    if max_steps + 100 > limit:
        sys.setrecursionlimit(max_steps + 100)
    paths: list[Path] = []
    steps: list[PathStep] = []

    def emit(truncated: bool):
        if len(paths) >= cap:
            raise PathExplosion(cap)
        paths.append(Path(tuple(steps), truncated))

    def visit(knot_id: int, remaining: int):
        if knot_id == END_ID:
            emit(False)
            return
        if remaining == 0:
            emit(True)
            return
        knot = graph.knots[knot_id]
        jump = next((s for s in knot.body if isinstance(s, Jump)), None)
        if jump is not None:
            steps.append(PathStep(knot_id, None))
            visit(jump.target, remaining - 1)
            steps.pop()
        elif knot.choices:
            for choice in knot.choices:
                steps.append(PathStep(knot_id, choice.index))
                visit(choice.target, remaining - 1)
                steps.pop()
        else:  # fall-off dead end terminates the path
            steps.append(PathStep(knot_id, None))
            emit(False)
            steps.pop()

    visit(graph.start, max_steps)
    return paths
