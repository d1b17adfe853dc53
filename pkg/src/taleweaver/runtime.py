"""Deterministic story runtime.

A session executes a compiled story graph as a state machine: each
`continue_story` advances to the next choice point or the end, evaluating
interpolations and guards against the variable store; `choose` applies a
director selection.  Failed operations never mutate the session, and every
successful mutation bumps `seq` by exactly one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

from .compiler import (
    END_ID,
    AttachTag,
    CompiledChoice,
    EmitText,
    Jump,
    SetVar,
    StoryGraph,
)
from .syntax import (
    Binary,
    BoolLit,
    ConditionalText,
    Expr,
    InlineContent,
    IntLit,
    Interpolation,
    PlainText,
    StrLit,
    StyledSpan,
    Unary,
    VarRef,
)

Value = Union[int, str, bool]

DEFAULT_STEP_LIMIT = 10_000

_INT64_MOD = 2**64
_INT64_HALF = 2**63

SAVE_VERSION = 1


class EngineError(Exception):
    """A runtime operation failed; the session state is unchanged."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


def value_type(value: Value) -> str:
    # bool first: bool is a subclass of int
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, str):
        return "str"
    raise TypeError(f"not a story value: {value!r}")


def _wrap64(n: int) -> int:
    return (n + _INT64_HALF) % _INT64_MOD - _INT64_HALF


def format_value(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def eval_expr(expr: Expr, variables: dict[str, Value]) -> Value:
    """Evaluate an expression against a variable store.

    Int arithmetic wraps at 64 bits; `/` truncates toward zero; `+` also
    concatenates strings; ordering is Int-only; `and`/`or` short-circuit.
    """
    if isinstance(expr, IntLit):
        return expr.value
    if isinstance(expr, StrLit):
        return expr.value
    if isinstance(expr, BoolLit):
        return expr.value
    if isinstance(expr, VarRef):
        if expr.name not in variables:
            raise EngineError("unknown_variable", f"unknown variable {expr.name!r}")
        return variables[expr.name]
    if isinstance(expr, Unary):
        if expr.op == "not":
            operand = eval_expr(expr.operand, variables)
            if value_type(operand) != "bool":
                raise EngineError("type_mismatch", "'not' needs a boolean")
            return not operand
        operand = eval_expr(expr.operand, variables)
        if value_type(operand) != "int":
            raise EngineError("type_mismatch", "unary '-' needs an integer")
        return _wrap64(-operand)
    if isinstance(expr, Binary):
        op = expr.op
        if op in ("and", "or"):
            left = eval_expr(expr.left, variables)
            if value_type(left) != "bool":
                raise EngineError("type_mismatch", f"{op!r} needs booleans")
            if op == "and" and not left:
                return False
            if op == "or" and left:
                return True
            right = eval_expr(expr.right, variables)
            if value_type(right) != "bool":
                raise EngineError("type_mismatch", f"{op!r} needs booleans")
            return right
        left = eval_expr(expr.left, variables)
        right = eval_expr(expr.right, variables)
        lt, rt = value_type(left), value_type(right)
        if op in ("==", "!="):
            if lt != rt:
                raise EngineError("type_mismatch", f"cannot compare {lt} with {rt}")
            return (left == right) if op == "==" else (left != right)
        if op in ("<", "<=", ">", ">="):
            if lt != "int" or rt != "int":
                raise EngineError("type_mismatch", f"ordering needs integers, got {lt} and {rt}")
            return {"<": left < right, "<=": left <= right,
                    ">": left > right, ">=": left >= right}[op]
        if op == "+":
            if lt == "int" and rt == "int":
                return _wrap64(left + right)
            if lt == "str" and rt == "str":
                return left + right
            raise EngineError("type_mismatch", f"cannot add {lt} and {rt}")
        if lt != "int" or rt != "int":
            raise EngineError("type_mismatch", f"{op!r} needs integers, got {lt} and {rt}")
        if op == "-":
            return _wrap64(left - right)
        if op == "*":
            return _wrap64(left * right)
        if op == "/":
            if right == 0:
                raise EngineError("division_by_zero", "division by zero")
            return _wrap64(abs(left) // abs(right) * (1 if (left < 0) == (right < 0) else -1))
    raise TypeError(f"not an expression: {expr!r}")  # pragma: no cover


# --- emitted paragraphs ---


@dataclass(frozen=True)
class ResolvedSpan:
    kind: str  # bold | italic | color | align
    value: Optional[str]
    start: int
    end: int

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value, "start": self.start, "end": self.end}


@dataclass(frozen=True)
class EmittedParagraph:
    plain_text: str
    spans: tuple[ResolvedSpan, ...]
    source: tuple[int, int]  # (knot id, statement index)
    tags: tuple[str, ...] = ()
    align: str = "left"

    def to_json(self) -> dict:
        return {
            "text": self.plain_text,
            "tags": list(self.tags),
            "spans": [s.to_json() for s in self.spans],
            "align": self.align,
        }


@dataclass(frozen=True)
class PresentedChoice:
    id: int  # dense index over satisfiable choices
    label: str
    source_index: int  # the compiled choice's index

    def to_json(self) -> dict:
        return {"id": self.id, "label": self.label}


def render_inline(content: InlineContent, variables: dict[str, Value],
                  source: tuple[int, int], tags: tuple[str, ...] = ()) -> EmittedParagraph:
    """Resolve interpolations, conditional text and styles into flat text
    plus character-range spans."""
    buf: list[str] = []
    spans: list[ResolvedSpan] = []
    length = 0

    def emit(c: InlineContent):
        nonlocal length
        for span in c.spans:
            if isinstance(span, PlainText):
                buf.append(span.text)
                length += len(span.text)
            elif isinstance(span, Interpolation):
                text = format_value(eval_expr(span.expr, variables))
                buf.append(text)
                length += len(text)
            elif isinstance(span, ConditionalText):
                cond = eval_expr(span.cond, variables)
                if value_type(cond) != "bool":
                    raise EngineError("type_mismatch", "conditional text needs a boolean")
                if cond:
                    emit(span.then_content)
                elif span.else_content is not None:
                    emit(span.else_content)
            elif isinstance(span, StyledSpan):
                start = length
                emit(span.children)
                spans.append(ResolvedSpan(span.style.kind, span.style.value, start, length))

    emit(content)
    align = "left"
    for s in spans:
        if s.kind == "align":
            align = s.value or "left"
    # report spans outermost-first in document order
    spans.sort(key=lambda s: (s.start, -(s.end - s.start)))
    return EmittedParagraph("".join(buf), tuple(spans), source, tags, align)


@dataclass
class Advance:
    paragraphs: list[EmittedParagraph]
    choices: Optional[list[PresentedChoice]]  # None when the story ended

    @property
    def ended(self) -> bool:
        return self.choices is None


@dataclass
class Session:
    """Single-owner mutable session over an immutable story graph."""

    graph: StoryGraph
    variables: dict[str, Value]
    position: tuple[int, int]  # (knot id, body statement index)
    transcript: list[EmittedParagraph] = field(default_factory=list)
    pending: Optional[list[PresentedChoice]] = None
    seq: int = 0
    steps_taken: int = 0
    finished: bool = False
    step_limit: int = DEFAULT_STEP_LIMIT

    # --- queries ---

    @property
    def current_knot_name(self) -> str:
        return self.graph.knot_name(self.position[0])

    # --- operations ---

    def continue_story(self) -> Advance:
        if self.finished:
            raise EngineError("story_finished", "story already ended")
        if self.pending is not None:
            raise EngineError("choices_pending", "choose before continuing")

        variables = dict(self.variables)
        new_paragraphs: list[EmittedParagraph] = []
        knot_id, stmt_idx = self.position
        steps = 0
        pending_tags: list[str] = []
        finished = False
        presented: Optional[list[PresentedChoice]] = None

        while True:
            if knot_id == END_ID:
                finished = True
                break
            knot = self.graph.knots[knot_id]
            if stmt_idx >= len(knot.body):
                if knot.choices:
                    presented = self._satisfiable(knot.choices, variables)
                    if not presented:
                        raise EngineError(
                            "no_satisfiable_choice",
                            f"all choice guards are false in knot {knot.name!r}",
                        )
                    break
                # fall-off: treated as story end (compiler warns dead_end)
                finished = True
                break
            stmt = knot.body[stmt_idx]
            steps += 1
            if steps > self.step_limit:
                raise EngineError("step_limit_exceeded",
                                  f"more than {self.step_limit} statements in one advance")
            if isinstance(stmt, EmitText):
                try:
                    paragraph = render_inline(stmt.content, variables,
                                              (knot_id, stmt_idx), tuple(pending_tags))
                except EngineError as e:
                    raise EngineError(e.code, f"{e} (knot {knot.name!r} line {stmt.line})") from None
                new_paragraphs.append(paragraph)
                pending_tags.clear()
                stmt_idx += 1
            elif isinstance(stmt, SetVar):
                try:
                    variables[stmt.name] = eval_expr(stmt.expr, variables)
                except EngineError as e:
                    raise EngineError(e.code, f"{e} (knot {knot.name!r} line {stmt.line})") from None
                stmt_idx += 1
            elif isinstance(stmt, AttachTag):
                pending_tags.append(stmt.text)
                stmt_idx += 1
            elif isinstance(stmt, Jump):
                knot_id, stmt_idx = stmt.target, 0
                pending_tags.clear()
            else:  # pragma: no cover
                raise TypeError(f"bad compiled statement {stmt!r}")

        # commit
        self.variables = variables
        self.transcript.extend(new_paragraphs)
        self.position = (knot_id, stmt_idx)
        self.pending = presented
        self.finished = finished
        self.steps_taken += steps
        self.seq += 1
        return Advance(new_paragraphs, None if finished else list(presented or []))

    def _satisfiable(self, choices: tuple[CompiledChoice, ...],
                     variables: dict[str, Value]) -> list[PresentedChoice]:
        out: list[PresentedChoice] = []
        for choice in choices:
            if choice.guard is not None:
                value = eval_expr(choice.guard, variables)
                if value_type(value) != "bool":
                    raise EngineError("type_mismatch",
                                      f"guard of choice {choice.label!r} is not a boolean")
                if not value:
                    continue
            out.append(PresentedChoice(len(out), choice.label, choice.index))
        return out

    def choose(self, choice_id: int):
        if self.pending is None:
            raise EngineError("no_pending_choices", "no choices to pick from")
        if not 0 <= choice_id < len(self.pending):
            raise EngineError("invalid_choice_id",
                              f"choice id {choice_id} out of range 0..{len(self.pending) - 1}")
        picked = self.pending[choice_id]
        knot_id = self.position[0]
        compiled = self.graph.knots[knot_id].choices[picked.source_index]
        appended: Optional[EmittedParagraph] = None
        if compiled.appended is not None:
            appended = render_inline(compiled.appended, self.variables,
                                     (knot_id, len(self.graph.knots[knot_id].body)))
        # commit
        if appended is not None:
            self.transcript.append(appended)
        self.position = (compiled.target, 0)
        self.pending = None
        if compiled.target == END_ID:
            self.finished = True
        self.seq += 1

    def set_variable(self, name: str, value: Value):
        if name not in self.variables:
            raise EngineError("unknown_variable", f"unknown variable {name!r}")
        current = self.variables[name]
        if value_type(value) != value_type(current):
            raise EngineError(
                "type_mismatch",
                f"variable {name!r} holds {value_type(current)}, got {value_type(value)}",
            )
        self.variables[name] = value
        self.seq += 1

    # --- persistence ---

    def snapshot(self) -> str:
        blob = {
            "version": SAVE_VERSION,
            "story_hash": self.graph.content_hash,
            "position": {"knot": self.position[0], "stmt": self.position[1]},
            "vars": dict(self.variables),
            "seq": self.seq,
            "finished": self.finished,
            "transcript_len": len(self.transcript),
            "pending": None if self.pending is None else [
                {"id": p.id, "label": p.label, "source_index": p.source_index}
                for p in self.pending
            ],
        }
        return json.dumps(blob, sort_keys=True)


def new_session(graph: StoryGraph, overrides: Optional[dict[str, Value]] = None,
                step_limit: int = DEFAULT_STEP_LIMIT) -> Session:
    variables: dict[str, Value] = dict(graph.var_decls)
    for name, value in (overrides or {}).items():
        if name not in variables:
            raise EngineError("unknown_override", f"override for undeclared variable {name!r}")
        if value_type(value) != value_type(variables[name]):
            raise EngineError(
                "override_type_mismatch",
                f"variable {name!r} is declared {value_type(variables[name])}, "
                f"override is {value_type(value)}",
            )
        variables[name] = value
    return Session(graph=graph, variables=variables, position=(graph.start, 0),
                   step_limit=step_limit)


def restore(graph: StoryGraph, blob: str,
            step_limit: int = DEFAULT_STEP_LIMIT) -> Session:
    """Rebuild a session from a snapshot.  The saved transcript text is not
    carried over (it is replayable); only its length was recorded."""
    try:
        data = json.loads(blob)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise EngineError("malformed_save", "save blob is not valid JSON") from None
    if not isinstance(data, dict):
        raise EngineError("malformed_save", "save blob is not a JSON object")
    if data.get("version") != SAVE_VERSION:
        raise EngineError("unsupported_save_version",
                          f"save version {data.get('version')!r} not supported")
    if data.get("story_hash") != graph.content_hash:
        raise EngineError("story_hash_mismatch", "save blob is for a different story")
    try:
        position = (int(data["position"]["knot"]), int(data["position"]["stmt"]))
        variables = data["vars"]
        seq = int(data["seq"])
        finished = bool(data["finished"])
        raw_pending = data["pending"]
        if not isinstance(variables, dict):
            raise TypeError
        pending = None
        if raw_pending is not None:
            pending = [PresentedChoice(int(p["id"]), str(p["label"]), int(p["source_index"]))
                       for p in raw_pending]
    except (KeyError, TypeError, ValueError):
        raise EngineError("malformed_save", "save blob is missing required fields") from None
    return Session(graph=graph, variables=dict(variables), position=position,
                   pending=pending, seq=seq, finished=finished, step_limit=step_limit)
