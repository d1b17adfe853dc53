"""`taleweaver` command line: validate, play, serve, and analyze stories.

Exit codes: 0 success, 1 story errors/diagnostics, 2 usage errors,
3 runtime/protocol errors.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import threading
from typing import Optional

from .compiler import (
    CompileResult,
    PathExplosion,
    StoryGraph,
    compile_story,
    enumerate_paths,
    reachability,
)
from .director import DirectorError, RandomPolicy, ScriptedPolicy, run_auto_director
from .layout import FontMetrics, Tablet, layout_paragraphs
from .parser import try_parse_story
from .rng import SplitMix64
from .runtime import EngineError, Value, new_session, render_inline
from .server import DEFAULT_HOST, DEFAULT_PORT, DEFAULT_WS_PORT, StoryServer

EXIT_OK = 0
EXIT_STORY = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

log = logging.getLogger("taleweaver")


def _setup_logging():
    level_name = os.environ.get("TALEWEAVER_LOG", "warn").lower()
    level = {"error": logging.ERROR, "warn": logging.WARNING,
             "info": logging.INFO, "debug": logging.DEBUG}.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s %(message)s")


def _read_source(path: str) -> Optional[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        print(f"cannot read {path}: {e}", file=sys.stderr)
        return None


def _load(path: str, json_mode: bool = False) -> tuple[Optional[CompileResult], int]:
    """Parse and compile; prints problems.  Returns (result, exit_code)."""
    source = _read_source(path)
    if source is None:
        return None, EXIT_USAGE
    doc, issues = try_parse_story(source)
    if doc is None:
        records = [
            {"severity": "error", "code": i.code.value, "knot": None,
             "line": i.line, "column": i.column, "message": i.message}
            for i in issues
        ]
        if json_mode:
            print(json.dumps(records))
        else:
            for i in issues:
                print(f"ERROR {i.code.value} -:{i.line} {i.message}")
        return None, EXIT_STORY
    return compile_story(doc), EXIT_OK


def _emit_diagnostics(diags, json_mode: bool):
    if json_mode:
        print(json.dumps([d.to_json() for d in diags]))
    else:
        for d in diags:
            print(str(d))


def _parse_var_flags(pairs: list[str], graph: StoryGraph) -> dict[str, Value]:
    overrides: dict[str, Value] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--var needs name=value, got {pair!r}")
        name, raw = pair.split("=", 1)
        name = name.strip()
        if name not in graph.var_decls:
            raise ValueError(f"--var {name!r}: no such declared variable")
        declared = graph.var_decls[name]
        if isinstance(declared, bool):
            if raw not in ("true", "false"):
                raise ValueError(f"--var {name!r} must be true or false")
            overrides[name] = raw == "true"
        elif isinstance(declared, int):
            try:
                overrides[name] = int(raw)
            except ValueError:
                raise ValueError(f"--var {name!r} must be an integer") from None
        else:
            overrides[name] = raw
    return overrides


# --- subcommands ---


def cmd_check(args) -> int:
    result, code = _load(args.path, args.json)
    if result is None:
        return code
    diags = list(result.diagnostics)
    if result.graph is not None:
        diags.extend(reachability(result.graph)[1])
    if diags or args.json:
        _emit_diagnostics(diags, args.json)
    return EXIT_STORY if result.errors else EXIT_OK


def cmd_run(args) -> int:
    result, code = _load(args.path)
    if result is None:
        return code
    if result.graph is None:
        _emit_diagnostics(result.diagnostics, False)
        return EXIT_STORY
    graph = result.graph
    try:
        overrides = _parse_var_flags(args.var, graph)
    except ValueError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    rng = SplitMix64(args.seed) if args.seed is not None else None
    script: Optional[list[int]] = None
    if args.choices is not None:
        try:
            script = [int(x) for x in args.choices.split(",") if x.strip() != ""]
        except ValueError:
            print("--choices must be a comma-separated list of ids", file=sys.stderr)
            return EXIT_USAGE
    script_pos = 0

    try:
        session = new_session(graph, overrides)
        while True:
            advance = session.continue_story()
            for paragraph in advance.paragraphs:
                print(paragraph.plain_text)
            if advance.ended:
                print("--- END ---")
                return EXIT_OK
            pending = advance.choices
            if rng is not None:
                pick = rng.next_below(len(pending))
            elif script is not None:
                if script_pos >= len(script):
                    print("choice script exhausted", file=sys.stderr)
                    return EXIT_RUNTIME
                pick = script[script_pos]
                script_pos += 1
                if not 0 <= pick < len(pending):
                    print(f"scripted choice {pick} out of range", file=sys.stderr)
                    return EXIT_RUNTIME
            else:
                pick = _prompt_choice(pending)
                if pick is None:
                    return EXIT_RUNTIME
            print(f"> {pending[pick].label}")
            session.choose(pick)
            if session.finished:
                print("--- END ---")
                return EXIT_OK
    except EngineError as e:
        print(f"runtime error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def _prompt_choice(pending) -> Optional[int]:
    for choice in pending:
        print(f"  {choice.id}) {choice.label}")
    while True:
        try:
            raw = input("choice> ").strip()
        except EOFError:
            print("input closed", file=sys.stderr)
            return None
        if raw.isdigit() and int(raw) < len(pending):
            return int(raw)
        print(f"enter a number 0..{len(pending) - 1}")


def cmd_serve(args) -> int:
    result, code = _load(args.path)
    if result is None:
        return code
    if result.graph is None:
        _emit_diagnostics(result.diagnostics, False)
        return EXIT_STORY
    graph = result.graph
    try:
        overrides = _parse_var_flags(args.var, graph)
    except ValueError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    if args.console_dir:
        _serve_static(args.console_dir, args.host, args.http_port)

    async def main():
        server = StoryServer(graph, overrides, host=args.host, port=args.port,
                             ws_port=args.ws_port)
        await server.start()
        print(f"serving on {args.host}:{args.port} (tcp) and "
              f"{args.host}:{args.ws_port}/ws (websocket)", file=sys.stderr)
        try:
            await server.serve_forever()
        finally:
            await server.stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        return EXIT_OK
    except OSError as e:
        print(f"cannot bind: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except EngineError as e:
        print(f"runtime error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _serve_static(directory: str, host: str, port: int):
    import functools
    from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

    handler = functools.partial(SimpleHTTPRequestHandler, directory=directory)
    httpd = ThreadingHTTPServer((host, port), handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    print(f"console at http://{host}:{port}/", file=sys.stderr)


def cmd_direct(args) -> int:
    if (args.seed is None) == (args.choices is None):
        print("direct needs exactly one of --seed or --choices", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        policy = RandomPolicy(args.seed)
    else:
        try:
            policy = ScriptedPolicy(tuple(int(x) for x in args.choices.split(",") if x.strip()))
        except ValueError:
            print("--choices must be a comma-separated list of ids", file=sys.stderr)
            return EXIT_USAGE
    try:
        decisions = run_auto_director(args.host, args.port, policy)
    except DirectorError as e:
        print(f"director error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for d in decisions:
        print(json.dumps({"seq": d.seq, "id": d.choice_id, "label": d.label}))
    return EXIT_OK


def cmd_paths(args) -> int:
    result, code = _load(args.path)
    if result is None:
        return code
    if result.graph is None:
        _emit_diagnostics(result.diagnostics, False)
        return EXIT_STORY
    graph = result.graph
    try:
        paths = enumerate_paths(graph, max_steps=args.max_steps, cap=args.cap)
    except PathExplosion as e:
        print(str(e), file=sys.stderr)
        return EXIT_STORY
    for path in paths:
        print(json.dumps({
            "steps": [{"knot": graph.knot_name(s.knot), "choice": s.choice} for s in path.steps],
            "truncated": path.truncated,
        }))
    return EXIT_OK


def cmd_layout(args) -> int:
    result, code = _load(args.path)
    if result is None:
        return code
    if result.graph is None:
        _emit_diagnostics(result.diagnostics, False)
        return EXIT_STORY
    graph = result.graph
    # full-advance text: every knot's paragraphs in knot order, rendered
    # against the declared initial variable values, guards ignored
    paragraphs: list[tuple[str, str]] = []
    variables = dict(graph.var_decls)
    try:
        for knot in graph.knots:
            for stmt in knot.body:
                if hasattr(stmt, "content"):
                    rendered = render_inline(stmt.content, variables, (knot.id, stmt.stmt_index))
                    paragraphs.append((rendered.plain_text, rendered.align))
    except EngineError as e:
        print(f"runtime error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    boxes = layout_paragraphs(paragraphs, FontMetrics(), Tablet(args.width, args.height))
    for box in boxes:
        print(json.dumps(box.to_json()))
    return EXIT_OK


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taleweaver",
                                     description="branching-story engine and director server")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a story and print diagnostics")
    p.add_argument("path")
    p.add_argument("--json", action="store_true", help="machine-readable diagnostics")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run", help="play a story on the terminal")
    p.add_argument("path")
    p.add_argument("--var", action="append", default=[], metavar="NAME=VALUE")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--seed", type=int, help="pick choices with a seeded PRNG")
    group.add_argument("--choices", help="comma-separated choice ids")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="run the director-protocol server")
    p.add_argument("path")
    p.add_argument("--host", default=DEFAULT_HOST)
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--ws-port", type=int, default=DEFAULT_WS_PORT)
    p.add_argument("--var", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--console-dir", help="also serve the browser console from this directory")
    p.add_argument("--http-port", type=int, default=7709)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("direct", help="drive a served story automatically")
    p.add_argument("--host", default=DEFAULT_HOST)
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--seed", type=int)
    p.add_argument("--choices", help="comma-separated choice ids")
    p.set_defaults(func=cmd_direct)

    p = sub.add_parser("paths", help="enumerate story paths as JSON lines")
    p.add_argument("path")
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--cap", type=int, default=100_000)
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("layout", help="emit word bounding boxes as JSON lines")
    p.add_argument("path")
    p.add_argument("--width", type=int, default=800)
    p.add_argument("--height", type=int, default=600)
    p.set_defaults(func=cmd_layout)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
