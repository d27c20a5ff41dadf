"""Output-sequence grammar: frame <-> token sequence.

The serialized form is ``<intent> [T] <name> [:] <value> [T] ... EOS``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import EOS_TOKEN, PAD, PAIR_SEP, VALUE_SEP, Frame


@dataclass(frozen=True)
class ParseError:
    kind: str               # "malformed_pair" | "empty_intent"
    segment_index: int = 0

    def __str__(self):
        return f"{self.kind}(segment {self.segment_index})"


def serialize_frame(frame: Frame) -> list[str]:
    """Linearize a frame; always EOS-terminated."""
    out = list(frame.intent)
    for name, value in frame.slots:
        out.append(PAIR_SEP)
        out.extend(name)
        out.append(VALUE_SEP)
        out.extend(value)
    out.append(EOS_TOKEN)
    return out


def parse_output(tokens):
    """Parse arbitrary model output into a Frame or a recorded ParseError.

    Truncates at the first EOS, drops padding, splits segments on [T] and
    each pair segment at its first [:].
    """
    cleaned = []
    for t in tokens:
        if t == EOS_TOKEN:
            break
        if t != PAD:
            cleaned.append(t)

    segments: list[list[str]] = [[]]
    for t in cleaned:
        if t == PAIR_SEP:
            segments.append([])
        else:
            segments[-1].append(t)

    intent = tuple(segments[0])
    if not intent:
        return ParseError("empty_intent", 0)

    slots = []
    for i, seg in enumerate(segments[1:], start=1):
        if VALUE_SEP not in seg:
            return ParseError("malformed_pair", i)
        split = seg.index(VALUE_SEP)
        slots.append((tuple(seg[:split]), tuple(seg[split + 1:])))
    return Frame(intent=intent, slots=tuple(slots))
