"""TaleWeaver: a headless branching-story engine with a director protocol.

Stories are written in a small line-oriented markup (`.tale`), compiled to
an immutable graph, and executed by a deterministic runtime whose branch
points are steered by an out-of-band Director rather than the reader.
"""
from .compiler import (
    CompileResult,
    Diagnostic,
    PathExplosion,
    Severity,
    StoryGraph,
    compile_story,
    enumerate_paths,
    reachability,
    story_hash,
)
from .director import (
    Decision,
    DirectorError,
    RandomPolicy,
    ScriptedPolicy,
    run_auto_director,
)
from .layout import FontMetrics, Tablet, TabletOverrun, WordBox, hit_test, layout_paragraphs
from .parser import parse_expression, parse_story, try_parse_story
from .printer import print_expr, print_inline, print_story
from .protocol import (
    Frame,
    ProtocolError,
    decode_frame,
    encode_frame,
    make_frame,
)
from .rng import SplitMix64
from .runtime import (
    Advance,
    EmittedParagraph,
    EngineError,
    PresentedChoice,
    Session,
    eval_expr,
    new_session,
    render_inline,
    restore,
)
from .server import SessionHub, StoryServer
from .syntax import ParseFailure, ParseIssue, StoryDocument

__version__ = "0.1.0"

__all__ = [
    "Advance",
    "CompileResult",
    "Decision",
    "Diagnostic",
    "DirectorError",
    "EmittedParagraph",
    "EngineError",
    "FontMetrics",
    "Frame",
    "ParseFailure",
    "ParseIssue",
    "PathExplosion",
    "PresentedChoice",
    "ProtocolError",
    "RandomPolicy",
    "ScriptedPolicy",
    "Session",
    "SessionHub",
    "Severity",
    "SplitMix64",
    "StoryDocument",
    "StoryGraph",
    "StoryServer",
    "Tablet",
    "TabletOverrun",
    "WordBox",
    "compile_story",
    "decode_frame",
    "encode_frame",
    "enumerate_paths",
    "eval_expr",
    "hit_test",
    "layout_paragraphs",
    "make_frame",
    "new_session",
    "parse_expression",
    "parse_story",
    "print_expr",
    "print_inline",
    "print_story",
    "reachability",
    "render_inline",
    "restore",
    "run_auto_director",
    "story_hash",
    "try_parse_story",
]
