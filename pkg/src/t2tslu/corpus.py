"""Corpus loading, BIO span extraction, ontologies and synthetic data.

Datasets are UTF-8 JSON lines with fields ``tokens`` (string array),
``tags`` (string array, BIO), ``intent`` (string) and optional ``domain``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

Words = tuple[str, ...]


class CorpusError(ValueError):
    """Malformed dataset content."""


def normalize_name(raw: str) -> Words:
    """Lowercase a slot/intent name and normalize separators to single spaces."""
    return tuple(re.sub(r"[_\s]+", " ", raw.strip().lower()).split(" "))


@dataclass(frozen=True)
class TaggedExample:
    tokens: Words
    tags: Words
    intent: Words
    domain: str | None = None


@dataclass(frozen=True)
class Frame:
    """Intent plus ordered (slot name, slot value) pairs."""

    intent: Words
    slots: tuple[tuple[Words, Words], ...] = ()


@dataclass(frozen=True)
class Ontology:
    intents: tuple[Words, ...]
    slots: tuple[Words, ...]

    def __post_init__(self):
        for kind, names in (("intent", self.intents), ("slot", self.slots)):
            if len(set(names)) != len(names):
                raise CorpusError(f"duplicate {kind} names in ontology")
            if any(len(n) == 0 for n in names):
                raise CorpusError(f"empty {kind} name in ontology")

    def merge(self, other: "Ontology") -> "Ontology":
        intents = list(self.intents) + [i for i in other.intents if i not in self.intents]
        slots = list(self.slots) + [s for s in other.slots if s not in self.slots]
        return Ontology(tuple(intents), tuple(slots))

    def to_dict(self) -> dict:
        return {"intents": [" ".join(i) for i in self.intents],
                "slots": [" ".join(s) for s in self.slots]}

    @classmethod
    def from_dict(cls, d: dict) -> "Ontology":
        return cls(tuple(normalize_name(i) for i in d["intents"]),
                   tuple(normalize_name(s) for s in d["slots"]))


def validate_bio(tags, repair=False):
    """Check BIO well-formedness; optionally repair orphan I-tags to B-tags.

    Returns the (possibly repaired) tag tuple, or raises CorpusError in
    strict mode.
    """
    fixed = []
    prev_label = None
    for i, tag in enumerate(tags):
        if tag == "O":
            prev_label = None
            fixed.append(tag)
            continue
        if not (tag.startswith("B-") or tag.startswith("I-")) or len(tag) <= 2:
            raise CorpusError(f"invalid BIO tag '{tag}' at position {i}")
        label = tag[2:]
        if tag.startswith("I-") and label != prev_label:
            if not repair:
                raise CorpusError(f"orphan I-tag '{tag}' at position {i}")
            log.warning("repaired orphan I-tag '%s' at position %d", tag, i)
            tag = "B-" + label
        prev_label = label
        fixed.append(tag)
    return tuple(fixed)


def load_dataset(path, strict_bio=False) -> list[TaggedExample]:
    """Load a JSON-lines dataset, validating BIO structure per record."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed record at line {lineno}: {e}") from e
            try:
                tokens = tuple(rec["tokens"])
                tags = tuple(rec["tags"])
                intent = normalize_name(rec["intent"])
            except (KeyError, TypeError) as e:
                raise CorpusError(f"malformed record at line {lineno}: {e}") from e
            if len(tags) != len(tokens):
                raise CorpusError(f"length mismatch at line {lineno}: "
                                  f"{len(tokens)} tokens vs {len(tags)} tags")
            try:
                tags = validate_bio(tags, repair=not strict_bio)
            except CorpusError as e:
                raise CorpusError(f"line {lineno}: {e}") from e
            examples.append(TaggedExample(tokens=tokens, tags=tags, intent=intent,
                                          domain=rec.get("domain")))
    return examples


def save_dataset(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {"tokens": list(ex.tokens), "tags": list(ex.tags),
                   "intent": " ".join(ex.intent)}
            if ex.domain is not None:
                rec["domain"] = ex.domain
            fh.write(json.dumps(rec) + "\n")


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
            return Ontology.from_dict(d)
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise CorpusError(f"malformed ontology file {path}: {e}") from e


def save_ontology(ontology: Ontology, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ontology.to_dict(), fh, indent=2)
        fh.write("\n")


def extract_slot_pairs(tokens, tags):
    """Maximal B/I runs as (name, value) pairs, in source-position order."""
    pairs = []
    i = 0
    n = len(tags)
    while i < n:
        tag = tags[i]
        if tag.startswith("B-"):
            label = tag[2:]
            j = i + 1
            while j < n and tags[j] == "I-" + label:
                j += 1
            pairs.append((normalize_name(label), tuple(tokens[i:j])))
            i = j
        else:
            i += 1
    return pairs


def build_target_frame(example: TaggedExample) -> Frame:
    return Frame(intent=example.intent,
                 slots=tuple(extract_slot_pairs(example.tokens, example.tags)))


def project_pairs_to_tags(tokens, pairs) -> Words:
    """Re-project occurrence-ordered pairs back onto a BIO tag sequence."""
    tags = ["O"] * len(tokens)
    pos = 0
    for name, value in pairs:
        m = len(value)
        start = None
        for i in range(pos, len(tokens) - m + 1):
            if tuple(tokens[i:i + m]) == tuple(value):
                start = i
                break
        if start is None:
            raise CorpusError(f"value {value} not found in tokens after position {pos}")
        tags[start] = "B-" + " ".join(name)
        for k in range(start + 1, start + m):
            tags[k] = "I-" + " ".join(name)
        pos = start + m
    return tuple(tags)


def extract_ontology(examples) -> Ontology:
    """Deduplicated, lexicographically sorted intent and slot name lists."""
    if not examples:
        raise CorpusError("cannot extract an ontology from an empty dataset")
    intents = set()
    slots = set()
    for ex in examples:
        intents.add(ex.intent)
        for name, _ in extract_slot_pairs(ex.tokens, ex.tags):
            slots.add(name)
    return Ontology(tuple(sorted(intents)), tuple(sorted(slots)))


def subsample(examples, fraction, seed=0):
    """Seeded, intent-stratified subsample with per-stratum ceil rounding."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(examples)
    strata: dict[Words, list[int]] = {}
    for i, ex in enumerate(examples):
        strata.setdefault(ex.intent, []).append(i)
    rng = np.random.default_rng(seed)
    keep = set()
    for intent in sorted(strata):
        idx = strata[intent]
        k = min(len(idx), math.ceil(fraction * len(idx)))
        keep.update(rng.choice(idx, size=k, replace=False).tolist())
    return [examples[i] for i in sorted(keep)]


# ---------------------------------------------------------------------------
# vocabulary

PAD, UNK, EOS_TOKEN, PAIR_SEP, VALUE_SEP = "<pad>", "<unk>", "EOS", "[T]", "[:]"
RESERVED = (PAD, UNK, EOS_TOKEN, PAIR_SEP, VALUE_SEP)
PAD_ID, UNK_ID, EOS_ID, PAIR_SEP_ID, VALUE_SEP_ID = range(5)


class Vocab:
    """Token/id bijection with fixed reserved ids."""

    def __init__(self, tokens):
        self._id_to_token = list(tokens)
        if tuple(self._id_to_token[:len(RESERVED)]) != RESERVED:
            raise ValueError(f"vocab must start with reserved tokens {RESERVED}")
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("duplicate tokens in vocab")

    @classmethod
    def build(cls, examples) -> "Vocab":
        """Vocabulary over source tokens and target-side words (min freq 1)."""
        seen = set()
        for ex in examples:
            seen.update(ex.tokens)
            seen.update(ex.intent)
            for name, _ in extract_slot_pairs(ex.tokens, ex.tags):
                seen.update(name)
        seen -= set(RESERVED)
        return cls(list(RESERVED) + sorted(seen))

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    def ids(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)


# ---------------------------------------------------------------------------
# synthetic multi-domain corpus

DEFAULT_SYNTH_SPEC = {
    "lexicons": {
        "date time": {
            "train": ["tomorrow", "tonight", "next monday", "friday at noon",
                      "eight in the morning", "this afternoon", "next week",
                      "saturday evening"],
            "heldout": ["midnight", "sunday dawn", "halloween"],
        },
        "alarm name": {
            "train": ["work alarm", "gym alarm", "morning alarm", "nap alarm"],
            "heldout": ["piano alarm", "yoga alarm"],
        },
        "location": {
            "train": ["new york", "boston", "san francisco", "chicago", "seattle"],
            "heldout": ["oslo", "kuala lumpur"],
        },
        "reminder todo": {
            "train": ["buy milk", "call mom", "water the plants", "pay the rent",
                      "walk the dog"],
            "heldout": ["fetch groceries", "clean windows"],
        },
    },
    "domains": {
        "alarm": [
            {"intent": "set alarm", "template": "set an alarm for {date time}"},
            {"intent": "set alarm", "template": "please set the {alarm name} for {date time}"},
            {"intent": "set alarm", "template": "wake me up at {date time}"},
            {"intent": "cancel alarm", "template": "cancel my alarm"},
            {"intent": "cancel alarm", "template": "cancel the {alarm name}"},
            {"intent": "cancel alarm", "template": "cancel the alarm set for {date time}"},
            {"intent": "show alarms", "template": "show all my alarms"},
            {"intent": "show alarms", "template": "show the alarms for {date time}"},
        ],
        "weather": [
            {"intent": "find weather", "template": "what is the weather in {location}"},
            {"intent": "find weather", "template": "weather forecast for {location} on {date time}"},
            {"intent": "find weather", "template": "how is the weather {date time}"},
            {"intent": "check temperature", "template": "how cold is it in {location}"},
            {"intent": "check temperature", "template": "temperature in {location} at {date time}"},
            {"intent": "show weather", "template": "show me the weather in {location}"},
            {"intent": "show weather", "template": "show the weather for {date time}"},
            {"intent": "set weather alert", "template": "set a weather alert for {location}"},
            {"intent": "cancel weather alert", "template": "cancel the weather alert for {location}"},
        ],
        "reminder": [
            {"intent": "set reminder", "template": "remind me to {reminder todo} on {date time}"},
            {"intent": "set reminder", "template": "set a reminder to {reminder todo}"},
            {"intent": "cancel reminder", "template": "cancel my reminder to {reminder todo}"},
            {"intent": "cancel reminder", "template": "cancel the reminder for {date time}"},
            {"intent": "show reminders", "template": "show my reminders"},
            {"intent": "show reminders", "template": "show the reminders for {date time}"},
        ],
    },
}

_PLACEHOLDER = re.compile(r"(\{[^}]+\})")


def _fill_template(template, lexicons, lexicon_key, rng):
    tokens: list[str] = []
    tags: list[str] = []
    for piece in _PLACEHOLDER.split(template):
        if not piece.strip():
            continue
        if piece.startswith("{"):
            slot = piece[1:-1]
            pool = lexicons[slot][lexicon_key]
            value = pool[int(rng.integers(len(pool)))].split(" ")
            tokens.extend(value)
            tags.append("B-" + slot)
            tags.extend("I-" + slot for _ in value[1:])
        else:
            words = piece.strip().split(" ")
            tokens.extend(words)
            tags.extend("O" for _ in words)
    return tuple(tokens), tuple(tags)


def synth_corpus(spec=None, count=300, seed=0, heldout_values=False):
    """Deterministic synthetic multi-domain corpus.

    Returns (examples, ontology).  With heldout_values=True slot values are
    drawn from the held-out lexicons, producing values never seen in a
    corpus generated with the default (train) lexicons.
    """
    spec = spec or DEFAULT_SYNTH_SPEC
    domains = spec["domains"]
    if len(domains) < 2:
        raise CorpusError("synthetic corpus spec needs at least 2 domains")
    if not all(domains.values()):
        raise CorpusError("synthetic corpus spec has a domain with no templates")
    lexicons = spec["lexicons"]
    lexicon_key = "heldout" if heldout_values else "train"
    rng = np.random.default_rng(seed)
    names = list(domains)
    examples = []
    for k in range(count):
        domain = names[k % len(names)]
        tpl = domains[domain][int(rng.integers(len(domains[domain])))]
        tokens, tags = _fill_template(tpl["template"], lexicons, lexicon_key, rng)
        tags = validate_bio(tags)
        examples.append(TaggedExample(tokens=tokens, tags=tags,
                                      intent=normalize_name(tpl["intent"]),
                                      domain=domain))
    return examples, extract_ontology(examples)


def split_by_domain(examples) -> dict[str, list[TaggedExample]]:
    by_domain: dict[str, list[TaggedExample]] = {}
    for ex in examples:
        by_domain.setdefault(ex.domain or "", []).append(ex)
    return by_domain
