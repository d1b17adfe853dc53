import json
import subprocess
import sys
from pathlib import Path

import pytest

STORIES = Path(__file__).parent / "stories"


def run_cli(*argv, stdin=""):
    return subprocess.run(
        [sys.executable, "-m", "taleweaver.cli", *argv],
        capture_output=True, text=True, input=stdin, timeout=60,
    )


@pytest.fixture
def story(tmp_path):
    def write(src, name="story.tale"):
        p = tmp_path / name
        p.write_text(src, encoding="utf-8")
        return str(p)
    return write


class TestCheck:
    def test_clean_story_exits_zero(self):
        r = run_cli("check", str(STORIES / "meadow.tale"))
        assert r.returncode == 0
        assert r.stdout == ""

    def test_whole_corpus_clean(self):
        for path in sorted(STORIES.glob("*.tale")):
            r = run_cli("check", str(path))
            assert r.returncode == 0, (path.name, r.stdout, r.stderr)

    def test_compile_error_exits_one(self, story):
        r = run_cli("check", story("== a\n-> nowhere\n"))
        assert r.returncode == 1
        assert "dangling_divert" in r.stdout

    def test_parse_error_exits_one(self, story):
        r = run_cli("check", story("== a\n{oops\n-> END\n"))
        assert r.returncode == 1
        assert "ERROR" in r.stdout

    def test_warning_printed_but_exit_zero(self, story):
        r = run_cli("check", story("== a\nno way out\n"))
        assert r.returncode == 0
        assert "dead_end" in r.stdout

    def test_unreachable_included(self, story):
        r = run_cli("check", story("== a\n-> END\n== b\n-> END\n"))
        assert "unreachable_knot" in r.stdout

    def test_missing_file_exits_two(self):
        r = run_cli("check", "/nonexistent/story.tale")
        assert r.returncode == 2

    def test_no_arguments_exits_two(self):
        r = run_cli("check")
        assert r.returncode == 2

    def test_json_diagnostics_parseable(self, story):
        r = run_cli("check", "--json", story("== a\n-> nowhere\n== b\n-> END\n"))
        records = json.loads(r.stdout)
        assert {rec["code"] for rec in records} >= {"dangling_divert"}
        for rec in records:
            assert set(rec) >= {"severity", "code", "knot", "line", "message"}

    def test_json_empty_list_on_clean(self, story):
        r = run_cli("check", "--json", story("== a\n-> END\n"))
        assert json.loads(r.stdout) == []
        assert r.returncode == 0


SCRIPTABLE = """\
== start
Pick a door.
* red door -> red
* blue door -> blue
== red
Warm light.
-> END
== blue
Cold light.
-> END
"""


class TestRun:
    def test_scripted_run(self, story):
        r = run_cli("run", story(SCRIPTABLE), "--choices", "1")
        assert r.returncode == 0
        assert r.stdout.splitlines() == [
            "Pick a door.", "> blue door", "Cold light.", "--- END ---"
        ]

    def test_seeded_run_deterministic(self, story):
        path = story(SCRIPTABLE)
        outs = {run_cli("run", path, "--seed", "9").stdout for _ in range(3)}
        assert len(outs) == 1

    def test_interactive_run_reads_stdin(self, story):
        r = run_cli("run", story(SCRIPTABLE), stdin="0\n")
        assert r.returncode == 0
        assert "Warm light." in r.stdout

    def test_interactive_eof_exits_three(self, story):
        r = run_cli("run", story(SCRIPTABLE), stdin="")
        assert r.returncode == 3

    def test_script_exhausted_exits_three(self, story):
        src = SCRIPTABLE.replace("-> END\n== blue", "-> start\n== blue", 1)
        r = run_cli("run", story(src), "--choices", "0")
        assert r.returncode == 3

    def test_out_of_range_choice_exits_three(self, story):
        r = run_cli("run", story(SCRIPTABLE), "--choices", "5")
        assert r.returncode == 3

    def test_var_override(self, story):
        src = "VAR mood = \"sour\"\n== a\nFeeling {mood}.\n-> END\n"
        r = run_cli("run", story(src), "--var", "mood=sweet")
        assert "Feeling sweet." in r.stdout

    def test_unknown_var_exits_two(self, story):
        r = run_cli("run", story(SCRIPTABLE), "--var", "ghost=1")
        assert r.returncode == 2

    def test_seed_and_choices_mutually_exclusive(self, story):
        r = run_cli("run", story(SCRIPTABLE), "--seed", "1", "--choices", "0")
        assert r.returncode == 2

    def test_runtime_error_exits_three(self, story):
        src = "VAR n = 0\n== a\n~ n = 1 / 0\n-> END\n"
        r = run_cli("run", story(src))
        assert r.returncode == 3
        assert "division_by_zero" in r.stderr


class TestPaths:
    def test_json_lines_with_knot_names(self, story):
        r = run_cli("paths", story(SCRIPTABLE))
        lines = [json.loads(line) for line in r.stdout.splitlines()]
        assert len(lines) == 2
        assert [s["knot"] for s in lines[0]["steps"]] == ["start", "red"]
        assert [s["knot"] for s in lines[1]["steps"]] == ["start", "blue"]
        assert all(not rec["truncated"] for rec in lines)

    def test_truncation_marked(self, story):
        r = run_cli("paths", story("== a\n-> b\n== b\n-> a\n"), "--max-steps", "6")
        (rec,) = [json.loads(line) for line in r.stdout.splitlines()]
        assert rec["truncated"] is True

    def test_cap_exceeded_exits_one(self, story):
        lines = []
        for i in range(12):
            nxt = f"k{i + 1}" if i < 11 else "END"
            lines += [f"== k{i}", f"* a -> {nxt}", f"* b -> {nxt}"]
        r = run_cli("paths", story("\n".join(lines) + "\n"), "--cap", "100")
        assert r.returncode == 1


class TestLayout:
    def test_boxes_as_json_lines(self, story):
        r = run_cli("layout", story("== a\nHello world\n-> END\n"), "--width", "200")
        boxes = [json.loads(line) for line in r.stdout.splitlines()]
        assert [(b["text"], b["x0"], b["x1"]) for b in boxes] == [
            ("Hello", 0, 50), ("world", 60, 110)
        ]
        for b in boxes:
            assert set(b) == {"p", "w", "text", "line", "x0", "y0", "x1", "y1", "overflow"}

    def test_interpolation_uses_initial_vars(self, story):
        src = "VAR n = 3\n== a\n{n} wishes\n-> END\n"
        r = run_cli("layout", story(src))
        boxes = [json.loads(line) for line in r.stdout.splitlines()]
        assert boxes[0]["text"] == "3"


def test_usage_error_on_unknown_subcommand():
    assert run_cli("frobnicate").returncode == 2


def test_direct_requires_seed_or_choices():
    assert run_cli("direct").returncode == 2
    assert run_cli("direct", "--seed", "1", "--choices", "0").returncode == 2


def test_direct_against_live_server(story, tmp_path):
    import threading

    from taleweaver.compiler import compile_story
    from taleweaver.parser import parse_story
    from taleweaver.server import StoryServer

    import asyncio

    graph = compile_story(parse_story(SCRIPTABLE)).graph
    loop = asyncio.new_event_loop()
    server = StoryServer(graph, port=0, ws_port=None)
    started = threading.Event()

    def run():
        asyncio.set_event_loop(loop)
        loop.run_until_complete(server.start())
        started.set()
        loop.run_forever()

    t = threading.Thread(target=run, daemon=True)
    t.start()
    started.wait(10)
    try:
        r = run_cli("direct", "--port", str(server.bound_port), "--choices", "0")
        assert r.returncode == 0
        (rec,) = [json.loads(line) for line in r.stdout.splitlines()]
        assert rec["id"] == 0 and rec["label"] == "red door"
    finally:
        asyncio.run_coroutine_threadsafe(server.stop(), loop).result(10)
        loop.call_soon_threadsafe(loop.stop)
        t.join(10)
