"""Conversation ingestion, vocabulary, instance construction and splits.

The on-disk corpus format is JSONL, one conversation per line:
``{"conv_id": str, "turns": [{"author": str, "text": str}]}``.
Prediction instances pair an observed conversation prefix (ending at a
turn by the target user) with that user's chatting history and the
derived task labels.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# Substituted when cleaning removes every token of a turn; dropping the
# turn instead would corrupt the author sequence that labels depend on.
EMPTY_TOKEN = "EMPTY"
URL_TOKEN = "URL"


@dataclass(frozen=True)
class Turn:
    """One post in a conversation: an author id and its tokens."""

    author: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.author:
            raise ValueError("turn author must be non-empty")
        if not self.tokens:
            raise ValueError("turn tokens must be non-empty")


@dataclass(frozen=True)
class Conversation:
    """An ordered thread of turns (at least two)."""

    conv_id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        if len(self.turns) < 2:
            raise ValueError(f"conversation {self.conv_id!r} has fewer than 2 turns")

    @property
    def authors(self) -> tuple[str, ...]:
        return tuple(t.author for t in self.turns)


@dataclass
class Instance:
    """An observed prefix ending at the target user's turn, plus labels.

    ``label_reentry`` is the main label (does the target come back after
    the prefix); ``label_focused`` / ``label_repeated`` /
    ``label_authorship`` are the derived self-supervised labels (CLI task
    codes sp / rt / ta).
    """

    conv_id: str
    position: int
    context: tuple[Turn, ...]
    target: str
    label_reentry: int
    label_focused: int
    label_repeated: int
    label_authorship: tuple[int, ...]
    history: tuple[Turn, ...] = ()

    def __post_init__(self):
        if self.context[-1].author != self.target:
            raise ValueError("instance target must author the final context turn")
        if len(self.label_authorship) != len(self.context) - 1:
            raise ValueError("authorship labels must cover all but the final turn")


def tokenize(text: str, reddit_clean: bool = False) -> tuple[str, ...]:
    """Lowercase whitespace tokenization.

    With ``reddit_clean``, link-like tokens become the generic URL tag and
    tokens without any alphabetic character are dropped.  A turn emptied
    by cleaning (or blank to begin with) gets a single placeholder token.
    """
    tokens = text.lower().split()
    if reddit_clean:
        cleaned = []
        for tok in tokens:
            if tok.startswith(("http://", "https://", "www.")):
                cleaned.append(URL_TOKEN)
            elif any(c.isalpha() for c in tok):
                cleaned.append(tok)
        tokens = cleaned
    return tuple(tokens) if tokens else (EMPTY_TOKEN,)


def ingest_jsonl(path: str | Path, reddit_clean: bool = False) -> list[Conversation]:
    """Read a corpus file; skips conversations with fewer than two turns."""
    conversations = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                conv_id = raw["conv_id"]
                turns = tuple(
                    Turn(author=t["author"], tokens=tokenize(t["text"], reddit_clean))
                    for t in raw["turns"]
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: malformed conversation: {exc}") from exc
            if len(turns) < 2:
                logger.warning("%s: line %d: conversation %r has %d turn(s), skipped",
                               path, lineno, conv_id, len(turns))
                continue
            conversations.append(Conversation(conv_id=conv_id, turns=turns))
    return conversations


def write_corpus_jsonl(conversations: list[Conversation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            record = {
                "conv_id": conv.conv_id,
                "turns": [{"author": t.author, "text": " ".join(t.tokens)} for t in conv.turns],
            }
            fh.write(json.dumps(record) + "\n")


@dataclass
class Vocabulary:
    """Token/index map with padding and unknown specials at 0 and 1."""

    index_to_token: list[str]
    token_to_index: dict[str, int] = field(repr=False)

    PAD = 0
    UNK = 1
    SPECIALS = ("<pad>", "<unk>")

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        index_to_token = list(cls.SPECIALS) + tokens
        return cls(index_to_token=index_to_token,
                   token_to_index={t: i for i, t in enumerate(index_to_token)})

    def __len__(self) -> int:
        return len(self.index_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, self.UNK)

    def encode(self, tokens: tuple[str, ...]) -> list[int]:
        return [self.token_to_index.get(t, self.UNK) for t in tokens]

    def content_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.index_to_token).encode("utf-8"))
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.index_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tokens[:2] != list(cls.SPECIALS):
            raise ValueError(f"{path}: not a vocabulary file (missing specials)")
        return cls(index_to_token=tokens,
                   token_to_index={t: i for i, t in enumerate(tokens)})


def build_vocab(conversations: list[Conversation], min_count: int = 1) -> Vocabulary:
    """Vocabulary of tokens with corpus frequency >= min_count."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not conversations:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for conv in conversations for turn in conv.turns for tok in turn.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(kept)


def load_embedding_file(path: str | Path, vocab: Vocabulary, dim: int,
                        seed: int = 0) -> np.ndarray:
    """Align a pretrained text embedding file (token + floats per line)
    with the vocabulary.  Missing tokens get small random vectors; the
    padding row stays zero."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(
                    f"{path}: line {lineno}: expected {dim} values, got {len(values)}")
            if token in vocab.token_to_index:
                vectors[token] = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 0.1, size=(len(vocab), dim))
    table[Vocabulary.PAD] = 0.0
    matched = 0
    for token, vec in vectors.items():
        table[vocab.token_to_index[token]] = vec
        matched += 1
    logger.info("embeddings: matched %d/%d vocabulary tokens", matched, len(vocab))
    return table


def extract_instances(conversations: list[Conversation],
                      min_prefix: int = 2) -> list[Instance]:
    """One instance per position m in [min_prefix, M] of every conversation.

    The target is the author of turn m; the main label is 1 iff that
    author appears again in turns m+1..M.  Self-supervised labels come
    from the labeling module.  Output is sorted by (conv_id, position).
    """
    from reentry import labeling  # local import; labeling depends on these types

    if min_prefix < 2:
        raise ValueError("min_prefix must be >= 2")
    instances = []
    for conv in conversations:
        authors = conv.authors
        for m in range(min_prefix, len(conv.turns) + 1):
            context = conv.turns[:m]
            target = authors[m - 1]
            reentry = int(target in authors[m:])
            instances.append(Instance(
                conv_id=conv.conv_id,
                position=m,
                context=context,
                target=target,
                label_reentry=reentry,
                label_focused=labeling.sp_label(context),
                label_repeated=labeling.rt_label(context, target),
                label_authorship=labeling.ta_labels(context, target),
            ))
    instances.sort(key=lambda ins: (ins.conv_id, ins.position))
    return instances


def build_histories(instances: list[Instance], train_conversations: list[Conversation],
                    cap: int = 10) -> list[Instance]:
    """Attach each target user's turns from *other* training conversations.

    Corpus order stands in for posting time (the data model carries no
    timestamps): turns are ordered by conversation position in the
    training corpus, then by turn index.  The most recent ``cap`` turns
    are kept, oldest first.
    """
    if cap < 0:
        raise ValueError("cap must be >= 0")
    by_author: dict[str, list[tuple[str, Turn]]] = {}
    for conv in train_conversations:
        for turn in conv.turns:
            by_author.setdefault(turn.author, []).append((conv.conv_id, turn))
    for ins in instances:
        turns = [turn for conv_id, turn in by_author.get(ins.target, ())
                 if conv_id != ins.conv_id]
        ins.history = tuple(turns[-cap:]) if cap else ()
    return instances


def split_corpus(conversations: list[Conversation], ratios: tuple[float, float, float],
                 seed: int) -> tuple[list[Conversation], list[Conversation], list[Conversation]]:
    """Deterministic conversation-level train/valid/test split."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = list(range(len(conversations)))
    random.Random(seed).shuffle(order)
    n_train = int(len(order) * ratios[0])
    n_valid = int(len(order) * ratios[1])
    train_idx = sorted(order[:n_train])
    valid_idx = sorted(order[n_train:n_train + n_valid])
    test_idx = sorted(order[n_train + n_valid:])
    pick = lambda idx: [conversations[i] for i in idx]
    return pick(train_idx), pick(valid_idx), pick(test_idx)


# ---------------------------------------------------------------------------
# Instance serialization (the `labels` command dump format)
# ---------------------------------------------------------------------------

def _turns_to_json(turns: tuple[Turn, ...]) -> list[dict]:
    return [{"author": t.author, "tokens": list(t.tokens)} for t in turns]


def _turns_from_json(data: list[dict]) -> tuple[Turn, ...]:
    return tuple(Turn(author=t["author"], tokens=tuple(t["tokens"])) for t in data)


def instance_to_dict(ins: Instance) -> dict:
    from reentry import labeling

    return {
        "conv_id": ins.conv_id,
        "position": ins.position,
        "target": ins.target,
        "pattern": labeling.thread_pattern(ins.context),
        "label_reentry": ins.label_reentry,
        "label_focused": ins.label_focused,
        "label_repeated": ins.label_repeated,
        "label_authorship": list(ins.label_authorship),
        "context": _turns_to_json(ins.context),
        "history": _turns_to_json(ins.history),
    }


def instance_from_dict(data: dict) -> Instance:
    return Instance(
        conv_id=data["conv_id"],
        position=data["position"],
        context=_turns_from_json(data["context"]),
        target=data["target"],
        label_reentry=data["label_reentry"],
        label_focused=data["label_focused"],
        label_repeated=data["label_repeated"],
        label_authorship=tuple(data["label_authorship"]),
        history=_turns_from_json(data.get("history", [])),
    )


def write_instances_jsonl(instances: list[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ins in instances:
            fh.write(json.dumps(instance_to_dict(ins)) + "\n")


def read_instances_jsonl(path: str | Path) -> list[Instance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                instances.append(instance_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: malformed instance: {exc}") from exc
    return instances


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
