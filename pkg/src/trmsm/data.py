"""Conversations, label maps, JSONL ingestion and a synthetic corpus generator."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

IEMOCAP_LABELS = ("neutral", "happy", "sad", "angry", "excited", "frustrated")
MELD_LABELS = ("neutral", "joy", "surprise", "anger", "disgust", "sadness", "fear")

SYNTHETIC_RULES = ("same-speaker-previous", "other-speaker-majority", "content-only")


class DataError(ValueError):
    """Malformed or inconsistent conversation data."""


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Utterance:
    speaker: str
    tokens: tuple[str, ...]
    label: Optional[int] = None

    def __post_init__(self):
        if not self.tokens:
            raise DataError("utterance has no tokens")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise DataError(f"conversation {self.id!r} has no utterances")

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def speakers(self) -> list[str]:
        return [u.speaker for u in self.utterances]

    @property
    def labels(self) -> list[Optional[int]]:
        return [u.label for u in self.utterances]


@dataclass(frozen=True)
class LabelMap:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate label names in {list(self.names)}")
        if not self.names:
            raise DataError("empty label map")

    @property
    def K(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown label {name!r}") from None

    def name(self, index: int) -> str:
        return self.names[index]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LabelMap":
        with open(path, encoding="utf-8") as fh:
            names = json.load(fh)
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise DataError(f"{path}: label map must be a JSON list of strings")
        return cls(tuple(names))

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(self.names), fh)
            fh.write("\n")


@dataclass
class DatasetSplit:
    train: list[Conversation] = field(default_factory=list)
    dev: list[Conversation] = field(default_factory=list)
    test: list[Conversation] = field(default_factory=list)

    def __post_init__(self):
        ids = [c.id for c in self.train + self.dev + self.test]
        dupes = sorted(i for i, n in Counter(ids).items() if n > 1)
        if dupes:
            raise DataError(f"conversation ids repeated across splits: {dupes[:5]}")


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------

def conversation_from_record(record: dict, label_map: Optional[LabelMap]) -> Conversation:
    if not isinstance(record, dict) or "id" not in record or "utterances" not in record:
        raise DataError("record needs 'id' and 'utterances'")
    utterances = []
    for u in record["utterances"]:
        label = u.get("label")
        if label is not None:
            if label_map is None:
                raise DataError("labelled utterance but no label map given")
            label = label_map.index(label)
        utterances.append(Utterance(str(u["speaker"]), tuple(tokenize(u["text"])), label))
    return Conversation(str(record["id"]), tuple(utterances))


def conversation_to_record(conv: Conversation, label_map: LabelMap) -> dict:
    utterances = []
    for u in conv.utterances:
        item = {"speaker": u.speaker, "text": u.text}
        if u.label is not None:
            item["label"] = label_map.name(u.label)
        utterances.append(item)
    return {"id": conv.id, "utterances": utterances}


def load_jsonl(path: Union[str, Path], label_map: Optional[LabelMap]) -> list[Conversation]:
    """Read one conversation per non-blank line, preserving file order."""
    conversations = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                conversations.append(conversation_from_record(json.loads(line), label_map))
            except (json.JSONDecodeError, DataError, KeyError, TypeError, AttributeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return conversations


def save_jsonl(path: Union[str, Path], conversations: Iterable[Conversation], label_map: LabelMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conversation_to_record(conv, label_map), ensure_ascii=False))
            fh.write("\n")


def split_train_dev(conversations: Sequence[Conversation], ratio: float = 0.8,
                    seed: int = 0) -> tuple[list[Conversation], list[Conversation]]:
    """Seeded shuffle, then the first ``round(ratio * n)`` go to train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if len(conversations) < 2:
        raise DataError("need at least 2 conversations to split")
    order = list(conversations)
    random.Random(seed).shuffle(order)
    cut = min(max(round(ratio * len(order)), 1), len(order) - 1)
    return order[:cut], order[cut:]


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

def synthetic_labels(speakers: Sequence[str], contents: Sequence[int], rule: str) -> list[int]:
    """Labels implied by ``rule`` for a speaker sequence and per-utterance content classes."""
    if rule == "content-only":
        return list(contents)
    labels = []
    for n, (spk, own) in enumerate(zip(speakers, contents)):
        if rule == "same-speaker-previous":
            prior = [contents[j] for j in range(n) if speakers[j] == spk]
            labels.append(prior[-1] if prior else own)
        elif rule == "other-speaker-majority":
            counts = Counter(contents[j] for j in range(n) if speakers[j] != spk)
            if counts:
                top = max(counts.values())
                labels.append(min(c for c, k in counts.items() if k == top))
            else:
                labels.append(own)
        else:
            raise ValueError(f"unknown rule {rule!r}; expected one of {SYNTHETIC_RULES}")
    return labels


def synthetic_label_map(num_classes: int) -> LabelMap:
    return LabelMap(tuple(f"class{k}" for k in range(num_classes)))


def _synthetic_tokens(rng: random.Random, content: int, class_words: int, fillers: int) -> tuple[str, ...]:
    words = [f"k{content}w{rng.randrange(class_words)}" for _ in range(rng.randint(1, 2))]
    words += [f"filler{rng.randrange(fillers)}" for _ in range(rng.randint(1, 2))]
    rng.shuffle(words)
    return tuple(words)


def generate_synthetic(num_convs: Union[int, tuple[int, int, int]], speakers_per_conv: int,
                       utterances_per_conv: int, num_classes: int, rule: str,
                       seed: int = 0, class_words: int = 4, fillers: int = 8) -> DatasetSplit:
    """Generate a corpus whose labels follow ``rule``.

    ``num_convs`` is either a train count or a ``(train, dev, test)`` triple.
    Each utterance carries one to two words naming its content class and one
    to two filler words; speakers are drawn uniformly per utterance and are
    visible only through the speaker field.
    """
    if rule not in SYNTHETIC_RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {SYNTHETIC_RULES}")
    counts = (num_convs, 0, 0) if isinstance(num_convs, int) else tuple(num_convs)
    if min(speakers_per_conv, utterances_per_conv, num_classes) <= 0 or min(counts) < 0:
        raise ValueError("synthetic corpus parameters must be positive")
    rng = random.Random(seed)
    speaker_ids = [f"spk{s}" for s in range(speakers_per_conv)]
    parts: list[list[Conversation]] = []
    serial = 0
    for part, count in zip(("train", "dev", "test"), counts):
        convs = []
        for _ in range(count):
            speakers = [rng.choice(speaker_ids) for _ in range(utterances_per_conv)]
            contents = [rng.randrange(num_classes) for _ in range(utterances_per_conv)]
            labels = synthetic_labels(speakers, contents, rule)
            utts = tuple(
                Utterance(s, _synthetic_tokens(rng, c, class_words, fillers), y)
                for s, c, y in zip(speakers, contents, labels)
            )
            convs.append(Conversation(f"{part}{serial:05d}", utts))
            serial += 1
        parts.append(convs)
    return DatasetSplit(*parts)


def content_class(utterance: Utterance) -> int:
    """Recover the content class from a synthetic utterance's tokens."""
    for tok in utterance.tokens:
        if tok.startswith("k") and "w" in tok:
            return int(tok[1:tok.index("w")])
    raise DataError(f"no content token in {utterance.tokens}")
