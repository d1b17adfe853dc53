"""Acceptance suite: one test per release criterion, each printing a
single PASS/FAIL line (run with -s to see them on success)."""
import functools
import json
import random
import threading
import time
from pathlib import Path

from genstory import (
    count_paths_naive,
    gen_acyclic_source,
    gen_document,
    splitmix64_reference,
)
from test_layout import random_paragraphs
from test_protocol import random_valid_frame
from test_server import BRANCHY, Client, ServerThread

from taleweaver.compiler import compile_story, enumerate_paths, reachability
from taleweaver.layout import FontMetrics, Tablet, hit_test, layout_paragraphs
from taleweaver.parser import parse_story
from taleweaver.printer import print_story
from taleweaver.protocol import ProtocolError, decode_frame, encode_frame, make_frame
from taleweaver.runtime import new_session, restore

STORIES = Path(__file__).parent / "stories"


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*a, **kw):
            try:
                fn(*a, **kw)
            except BaseException:
                print(f"FAIL {name}")
                raise
            print(f"PASS {name}")
        return wrapper
    return deco


def corpus_sources():
    paths = sorted(STORIES.glob("*.tale"))
    assert len(paths) >= 10
    return [(p.name, p.read_text(encoding="utf-8")) for p in paths]


@criterion("parser round-trip is a fixpoint (handwritten corpus + 200 random docs, <10s)")
def test_parser_round_trip():
    t0 = time.monotonic()
    sources = [src for _, src in corpus_sources()]
    sources += [print_story(gen_document(random.Random(seed))) for seed in range(200)]
    assert len(sources) >= 210
    for src in sources:
        doc = parse_story(src)
        printed = print_story(doc)
        again = parse_story(printed)
        assert again == doc
        assert print_story(again) == printed
    assert time.monotonic() - t0 < 10


@criterion("lint finds every injected defect and stays silent on clean stories")
def test_lint_recall_precision():
    def all_diagnostics(src):
        result = compile_story(parse_story(src))
        diags = list(result.diagnostics)
        if result.graph is not None:
            diags.extend(reachability(result.graph)[1])
        return [d.code for d in diags]

    injections = {
        "dangling_divert": "\n== zz_injected\n-> zz_missing_target\n",
        "unreachable_knot": "\n== zz_orphan\n-> END\n",
        "dead_end": "\n== zz_stranded\nNo way onward from here.\n",
        "undeclared_variable": "\n== zz_uses_ghost\nValue: {zz_never_declared}\n-> END\n",
    }
    clean = 0
    injected = 0
    for name, src in corpus_sources():
        assert all_diagnostics(src) == [], f"{name} is not clean"
        clean += 1
        for expected, tail in injections.items():
            assert expected in all_diagnostics(src + tail), (name, expected)
            injected += 1
    assert clean >= 10 and injected == clean * 4


def _runtime_path_set(graph):
    """Every decision sequence reachable by actually playing the story."""
    out = []

    def explore(session, advance, prefix):
        if advance is None or advance.ended:
            out.append(tuple(prefix))
            return
        blob = session.snapshot()
        for choice in advance.choices:
            twin = restore(graph, blob)
            twin.choose(choice.id)
            nxt = None if twin.finished else twin.continue_story()
            explore(twin, nxt, prefix + [choice.id])

    session = new_session(graph)
    explore(session, session.continue_story(), [])
    return sorted(out)


@criterion("path enumeration == exhaustive play == naive counter on 100 random graphs (<30s)")
def test_path_oracle_equivalence():
    t0 = time.monotonic()
    for seed in range(100):
        src = gen_acyclic_source(random.Random(seed), max_knots=8, max_choices=3)
        doc = parse_story(src)
        result = compile_story(doc)
        assert result.ok, (seed, result.diagnostics)
        paths = enumerate_paths(result.graph, max_steps=50)
        assert not any(p.truncated for p in paths)
        enumerated = sorted(
            tuple(s.choice for s in p.steps if s.choice is not None) for p in paths
        )
        assert enumerated == _runtime_path_set(result.graph), seed
        assert len(paths) == count_paths_naive(doc, 50), seed
    assert time.monotonic() - t0 < 30


@criterion("100 sessions survive snapshot/restore with byte-equal transcripts")
def test_persistence_bisimulation():
    checked = 0
    for seed in range(100):
        rng = random.Random(seed * 7919 + 1)
        src = gen_acyclic_source(random.Random(seed), max_knots=8, max_choices=3)
        graph = compile_story(parse_story(src)).graph
        session = new_session(graph)
        snaps = [session.snapshot()]
        picks = []
        advance = session.continue_story()
        while not advance.ended:
            snaps.append(session.snapshot())
            pick = rng.randrange(len(advance.choices))
            picks.append(pick)
            session.choose(pick)
            if session.finished:
                break
            advance = session.continue_story()

        cut = rng.randrange(len(snaps))
        blob = snaps[cut]
        twin = restore(graph, blob)
        if cut == 0:
            twin.continue_story()
            remaining = picks
        else:
            # snaps[cut] was taken at the (cut-1)-th decision point
            remaining = picks[cut - 1:]
        for pick in remaining:
            twin.choose(pick)
            if not twin.finished:
                twin.continue_story()

        suffix = session.transcript[json.loads(blob)["transcript_len"]:]
        original_bytes = json.dumps([p.to_json() for p in suffix]).encode()
        twin_bytes = json.dumps([p.to_json() for p in twin.transcript]).encode()
        assert original_bytes == twin_bytes, seed
        assert twin.variables == session.variables and twin.finished == session.finished
        checked += 1
    assert checked == 100


@criterion("protocol: 10k frames round-trip exactly, 10k junk lines never crash (<10s)")
def test_protocol_fuzz():
    t0 = time.monotonic()
    rng = random.Random(777)
    for _ in range(10_000):
        frame = random_valid_frame(rng)
        assert decode_frame(encode_frame(frame).rstrip(b"\n")) == frame
    for _ in range(10_000):
        line = bytes(rng.randrange(256) for _ in range(rng.randint(0, 120)))
        try:
            decode_frame(line)
        except ProtocolError:
            pass
    assert time.monotonic() - t0 < 10


@criterion("seeded auto-director is reproducible and matches an independent PRNG")
def test_end_to_end_determinism():
    from taleweaver.director import RandomPolicy, run_auto_director

    first_choice_count = 2  # BRANCHY's opening fork
    for seed in range(20):
        transcripts = []
        for _ in range(2):
            with ServerThread(BRANCHY) as srv:
                decisions = run_auto_director("127.0.0.1", srv.port, RandomPolicy(seed))
                transcripts.append([(d.seq, d.choice_id, d.label) for d in decisions])
        assert transcripts[0] == transcripts[1], seed
        assert len(transcripts[0]) == 3
        ref = splitmix64_reference(seed, 1)[0]
        assert transcripts[0][0][1] == ref % first_choice_count, seed


@criterion("8 simultaneous claims grant exactly one director role")
def test_single_director_invariant():
    with ServerThread(BRANCHY) as srv:
        clients = [Client(srv.port) for _ in range(8)]
        for c in clients:
            c.recv_type("status")
        barrier = threading.Barrier(8)
        results = [None] * 8

        def claim(i):
            barrier.wait()
            clients[i].send(make_frame("claim"))
            frame = clients[i].recv()
            while frame.type not in ("hello", "error"):
                frame = clients[i].recv()
            results[i] = frame["role"] if frame.type == "hello" else frame["code"]

        threads = [threading.Thread(target=claim, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(10)
        assert results.count("director") == 1, results
        assert results.count("not_director_claim_denied") == 7, results
        for c in clients:
            c.close()


@criterion("layout invariants hold on 1000 random paragraphs; fixed examples exact")
def test_layout_properties():
    # exact coordinates at default metrics (advance 10, space 10, line 24)
    def boxes(text, width, align="left"):
        return layout_paragraphs([(text, align)], FontMetrics(),
                                 Tablet(width=width, height=10**9))

    hello, world = boxes("Hello world", 200)
    assert (hello.x0, hello.y0, hello.x1, hello.y1) == (0, 0, 50, 24)
    assert (world.x0, world.y0, world.x1, world.y1) == (60, 0, 110, 24)
    hello, world = boxes("Hello world", 100)
    assert (world.x0, world.y0, world.x1, world.y1) == (0, 24, 50, 48)
    (big,) = boxes("x" * 15, 100)
    assert (big.x0, big.x1, big.overflow) == (0, 150, True)

    paras = random_paragraphs(random.Random(2025), 1000)
    all_boxes = layout_paragraphs(paras, FontMetrics(), Tablet(width=160, height=10**9))

    rows = {}
    for b in all_boxes:
        assert b.x0 < b.x1 and b.y0 < b.y1
        rows.setdefault((b.paragraph_index, b.line), []).append(b)
    for row in rows.values():
        row.sort(key=lambda b: b.word_index)
        for left, right in zip(row, row[1:]):
            assert left.x1 <= right.x0 and left.y0 == right.y0
    ordered = sorted(rows.values(), key=lambda row: row[0].y0)
    for r1, r2 in zip(ordered, ordered[1:]):
        assert r1[0].y1 <= r2[0].y0

    for idx, (text, _align) in enumerate(paras):
        words = [b.text for b in all_boxes if b.paragraph_index == idx]
        assert " ".join(words) == " ".join(text.split())

    for b in all_boxes[::7]:
        assert hit_test(all_boxes, (b.x0 + b.x1) // 2, (b.y0 + b.y1) // 2) == b
