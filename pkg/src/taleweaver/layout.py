"""Per-word bounding boxes on a virtual tablet.

Greedy first-fit word wrap over abstract font metrics; each word gets a
half-open rectangle (its interaction "collider") plus the character range
it covers in the paragraph text.  Pure functions, integer units, y grows
downward.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

_WORD_RE = re.compile(r"\S+")

DEFAULT_GLYPH_ADVANCE = 10
DEFAULT_SPACE_ADVANCE = 10
DEFAULT_LINE_HEIGHT = 24
DEFAULT_TABLET_WIDTH = 800
DEFAULT_TABLET_HEIGHT = 600


class TabletOverrun(Exception):
    """Laid-out text exceeds the tablet height and pagination is disabled."""


@dataclass(frozen=True)
class FontMetrics:
    glyph_advance: dict[str, int] = field(default_factory=dict)  # per-char overrides
    default_advance: int = DEFAULT_GLYPH_ADVANCE
    space_advance: int = DEFAULT_SPACE_ADVANCE
    line_height: int = DEFAULT_LINE_HEIGHT

    def __post_init__(self):
        if self.default_advance <= 0 or self.space_advance <= 0 or self.line_height <= 0:
            raise ValueError("font metric advances must be positive")
        if any(w <= 0 for w in self.glyph_advance.values()):
            raise ValueError("glyph advances must be positive")

    def word_width(self, word: str) -> int:
        return sum(self.glyph_advance.get(c, self.default_advance) for c in word)


@dataclass(frozen=True)
class Tablet:
    width: int = DEFAULT_TABLET_WIDTH
    height: int = DEFAULT_TABLET_HEIGHT

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("tablet dimensions must be positive")


@dataclass(frozen=True)
class WordBox:
    paragraph_index: int
    word_index: int
    text: str
    char_range: tuple[int, int]  # [start, end) into the paragraph text
    line: int
    x0: int
    y0: int
    x1: int
    y1: int
    overflow: bool = False

    def to_json(self) -> dict:
        return {
            "p": self.paragraph_index,
            "w": self.word_index,
            "text": self.text,
            "line": self.line,
            "x0": self.x0,
            "y0": self.y0,
            "x1": self.x1,
            "y1": self.y1,
            "overflow": self.overflow,
        }


def layout_paragraphs(
    paragraphs: list[tuple[str, str]],  # (plain_text, alignment)
    metrics: FontMetrics = FontMetrics(),
    tablet: Tablet = Tablet(),
    strict_height: bool = False,
) -> list[WordBox]:
    """Lay out each paragraph's words onto the tablet.

    Words are maximal runs of non-whitespace.  A word wraps when its end
    would exceed the tablet width; a word wider than the tablet stays alone
    on its line with overflow=True.  Paragraphs are separated by one blank
    line of line_height.  Center/right alignment shifts whole lines; for
    centering an odd leftover unit goes to the left gap.
    """
    boxes: list[WordBox] = []
    y = 0
    line_no = 0
    lh = metrics.line_height

    for p_idx, (text, align) in enumerate(paragraphs):
        if p_idx > 0:
            y += lh  # blank line between paragraphs
        line_boxes: list[WordBox] = []
        x = 0
        started_para = False

        def flush_line():
            nonlocal line_boxes
            if not line_boxes:
                return
            if align in ("center", "right"):
                leftover = tablet.width - line_boxes[-1].x1
                if leftover > 0:
                    shift = leftover if align == "right" else (leftover + 1) // 2
                    line_boxes = [
                        WordBox(b.paragraph_index, b.word_index, b.text, b.char_range,
                                b.line, b.x0 + shift, b.y0, b.x1 + shift, b.y1, b.overflow)
                        for b in line_boxes
                    ]
            boxes.extend(line_boxes)
            line_boxes = []

        for w_idx, m in enumerate(_WORD_RE.finditer(text)):
            word = m.group()
            width = metrics.word_width(word)
            started_para = True
            if line_boxes:
                candidate = x + metrics.space_advance
                if candidate + width > tablet.width:
                    flush_line()
                    y += lh
                    line_no += 1
                    x = 0
                else:
                    x = candidate
            line_boxes.append(
                WordBox(p_idx, w_idx, word, (m.start(), m.end()), line_no,
                        x, y, x + width, y + lh, overflow=width > tablet.width)
            )
            x += width
        flush_line()
        if started_para:
            y += lh
            line_no += 1

    if strict_height and boxes and max(b.y1 for b in boxes) > tablet.height:
        raise TabletOverrun(
            f"text height {max(b.y1 for b in boxes)} exceeds tablet height {tablet.height}"
        )
    return boxes


def hit_test(boxes: list[WordBox], x: int, y: int) -> Optional[WordBox]:
    """The unique box with x0 <= x < x1 and y0 <= y < y1, or None."""
    for box in boxes:
        if box.x0 <= x < box.x1 and box.y0 <= y < box.y1:
            return box
    return None
