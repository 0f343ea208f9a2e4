"""The re-entry predictor: shared encoders plus four output heads.

Architecture, bottom to top:

* a word-level bidirectional GRU turns each turn's embedded tokens into
  a turn vector (final states of both directions, concatenated);
* the target user's chatting history runs through the same turn encoder
  and a history-level bidirectional GRU; a tanh projection of the result
  initializes both directions of the *target turn's* encoder;
* a conversation-level bidirectional GRU reads the turn vectors, and an
  attention layer pools its outputs into one conversation vector;
* sigmoid heads on [conversation vector; target turn vector] produce the
  main re-entry probability and the spread-pattern / repeated-target
  probabilities; turn-authorship probabilities are sigmoids of each turn
  vector's dot product with the target turn vector.

The turn encoder is shared between context and history turns (a single
parameter home).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reentry import numerics as nm
from reentry.corpus import Instance, Vocabulary
from reentry.numerics import Parameter, Tensor

CHECKPOINT_FORMAT = "reentry-checkpoint-v1"


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 200
    hidden_dim: int = 200        # per direction
    dropout: float = 0.2
    history_cap: int = 10
    attention_over: str = "conv"  # score conv-encoder outputs or raw turn vectors
    use_history: bool = True
    use_attention: bool = True

    def validate(self) -> None:
        if self.vocab_size < 2 or self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("vocab_size, embed_dim and hidden_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.history_cap < 0:
            raise ValueError("history_cap must be >= 0")
        if self.attention_over not in ("conv", "turn"):
            raise ValueError("attention_over must be 'conv' or 'turn'")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim, "dropout": self.dropout,
            "history_cap": self.history_cap, "attention_over": self.attention_over,
            "use_history": self.use_history, "use_attention": self.use_attention,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


class ModelParams:
    """Every learnable weight, with stable names for checkpointing."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 embeddings: np.ndarray | None = None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        e, h = config.embed_dim, config.hidden_dim
        gru_scale = 1.0 / np.sqrt(h)

        if embeddings is not None:
            if embeddings.shape != (config.vocab_size, e):
                raise ValueError(
                    f"embedding table shape {embeddings.shape} does not match "
                    f"({config.vocab_size}, {e})")
            table = np.array(embeddings, dtype=np.float64)
        else:
            table = rng.normal(0.0, 0.1, size=(config.vocab_size, e))
            table[Vocabulary.PAD] = 0.0
        self.embedding = Parameter(table, "embedding")

        self.turn_fwd = nm.init_gru(rng, e, h, gru_scale, "turn_fwd")
        self.turn_bwd = nm.init_gru(rng, e, h, gru_scale, "turn_bwd")
        self.hist_fwd = nm.init_gru(rng, 2 * h, h, gru_scale, "hist_fwd")
        self.hist_bwd = nm.init_gru(rng, 2 * h, h, gru_scale, "hist_bwd")
        self.hist_proj_w = Parameter(rng.uniform(-gru_scale, gru_scale, (h, 2 * h)),
                                     "hist_proj_w")
        self.hist_proj_b = Parameter(np.zeros(h), "hist_proj_b")
        self.conv_fwd = nm.init_gru(rng, 2 * h, h, gru_scale, "conv_fwd")
        self.conv_bwd = nm.init_gru(rng, 2 * h, h, gru_scale, "conv_bwd")

        head_scale = 1.0 / np.sqrt(4 * h)
        self.att_w = Parameter(rng.uniform(-head_scale, head_scale, 2 * h), "att_w")
        self.att_b = Parameter(np.zeros(1), "att_b")
        self.main_w = Parameter(rng.uniform(-head_scale, head_scale, 4 * h), "main_w")
        self.main_b = Parameter(np.zeros(1), "main_b")
        self.spread_w = Parameter(rng.uniform(-head_scale, head_scale, 4 * h), "spread_w")
        self.spread_b = Parameter(np.zeros(1), "spread_b")
        self.repeat_w = Parameter(rng.uniform(-head_scale, head_scale, 4 * h), "repeat_w")
        self.repeat_b = Parameter(np.zeros(1), "repeat_b")

    def named(self) -> dict[str, Parameter]:
        out = {"embedding": self.embedding}
        for gru in (self.turn_fwd, self.turn_bwd, self.hist_fwd, self.hist_bwd,
                    self.conv_fwd, self.conv_bwd):
            for p in gru.all():
                out[p.name] = p
        for p in (self.hist_proj_w, self.hist_proj_b, self.att_w, self.att_b,
                  self.main_w, self.main_b, self.spread_w, self.spread_b,
                  self.repeat_w, self.repeat_b):
            out[p.name] = p
        return out

    def all_params(self) -> list[Parameter]:
        return list(self.named().values())

    def head_params(self, head: str) -> list[Parameter]:
        return {"main": [self.main_w, self.main_b],
                "sp": [self.spread_w, self.spread_b],
                "rt": [self.repeat_w, self.repeat_b]}[head]

    def zero_grads(self) -> None:
        nm.zero_grads(self.all_params())


@dataclass
class EncodedInstance:
    """An Instance with tokens mapped to vocabulary indices."""

    context_ids: list[np.ndarray]
    history_ids: list[np.ndarray]
    label_reentry: int
    label_focused: int
    label_repeated: int
    label_authorship: tuple[int, ...]
    pattern: str
    conv_id: str
    position: int


def encode_dataset(instances: list[Instance], vocab: Vocabulary) -> list[EncodedInstance]:
    from reentry.labeling import thread_pattern

    out = []
    for ins in instances:
        out.append(EncodedInstance(
            context_ids=[np.asarray(vocab.encode(t.tokens), dtype=np.intp)
                         for t in ins.context],
            history_ids=[np.asarray(vocab.encode(t.tokens), dtype=np.intp)
                         for t in ins.history],
            label_reentry=ins.label_reentry,
            label_focused=ins.label_focused,
            label_repeated=ins.label_repeated,
            label_authorship=ins.label_authorship,
            pattern=thread_pattern(ins.context),
            conv_id=ins.conv_id,
            position=ins.position,
        ))
    return out


@dataclass
class ForwardOutputs:
    y_main: Tensor
    y_spread: Tensor
    y_repeat: Tensor
    y_authorship: list[Tensor]
    attention: np.ndarray
    turn_vectors: list[Tensor] = field(repr=False)
    pooled: Tensor = field(repr=False)


def encode_turn(params: ModelParams, token_ids: np.ndarray,
                init: tuple[Tensor, Tensor] | None = None) -> Tensor:
    """Bidirectional word-level encoding: [forward final; backward final].

    ``init`` supplies the starting states of both directions (used for the
    target turn); absent, both start from zeros.
    """
    if len(token_ids) == 0:
        raise ValueError("cannot encode a turn with no tokens")
    x = nm.embed_rows(params.embedding, token_ids)
    h0_f, h0_b = init if init is not None else (None, None)
    fwd = nm.gru_sequence(params.turn_fwd, x, h0=h0_f)
    bwd = nm.gru_sequence(params.turn_bwd, x, h0=h0_b, reverse=True)
    return nm.concat([nm.row(fwd, len(token_ids) - 1), nm.row(bwd, 0)])


def encode_history(params: ModelParams, history_ids: list[np.ndarray]) -> Tensor:
    """Encode history turns, then a turn-level bidirectional GRU over the
    sequence; an empty history yields a zero vector."""
    h = params.config.hidden_dim
    if not history_ids:
        return nm.constant(np.zeros(2 * h))
    turn_vecs = nm.stack_rows([encode_turn(params, ids) for ids in history_ids])
    n = len(history_ids)
    fwd = nm.gru_sequence(params.hist_fwd, turn_vecs)
    bwd = nm.gru_sequence(params.hist_bwd, turn_vecs, reverse=True)
    return nm.concat([nm.row(fwd, n - 1), nm.row(bwd, 0)])


def init_target_turn(params: ModelParams, history_vec: Tensor) -> Tensor:
    """tanh projection of the history vector; shared by both directions of
    the target turn's encoder."""
    return nm.tanh(nm.add(nm.matvec(params.hist_proj_w, history_vec),
                          params.hist_proj_b))


def encode_conversation(params: ModelParams, turn_matrix: Tensor) -> Tensor:
    """Bidirectional GRU over turn vectors; returns all (m, 2*hidden) states."""
    fwd = nm.gru_sequence(params.conv_fwd, turn_matrix)
    bwd = nm.gru_sequence(params.conv_bwd, turn_matrix, reverse=True)
    return nm.hconcat(fwd, bwd)


def attention_pool(params: ModelParams, src: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum of rows; scores are a learned linear function."""
    scores = nm.add(nm.matvec(src, params.att_w), params.att_b)
    weights = nm.softmax(scores)
    return nm.tmatvec(src, weights), weights


def forward(params: ModelParams, enc: EncodedInstance, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> ForwardOutputs:
    """Full forward pass for one instance.

    In train mode, dropout is applied to the turn vectors and to the
    concatenated [conversation; target turn] feature, in that order, so a
    seeded generator reproduces the pass exactly.
    """
    config = params.config
    m = len(enc.context_ids)
    if m < 2:
        raise ValueError("an instance needs at least 2 context turns")
    if train_mode and config.dropout > 0 and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")

    turn_vecs = [encode_turn(params, ids) for ids in enc.context_ids[:-1]]
    if config.use_history:
        init = init_target_turn(params, encode_history(params, enc.history_ids))
        target_init = (init, init)
    else:
        target_init = None
    turn_vecs.append(encode_turn(params, enc.context_ids[-1], init=target_init))

    if train_mode and config.dropout > 0:
        turn_vecs = [nm.dropout(v, config.dropout, rng) for v in turn_vecs]

    turn_matrix = nm.stack_rows(turn_vecs)
    conv_states = encode_conversation(params, turn_matrix)
    src = conv_states if config.attention_over == "conv" else turn_matrix
    if config.use_attention:
        pooled, weights = attention_pool(params, src)
        attention = weights.value.copy()
    else:
        uniform = nm.constant(np.full(m, 1.0 / m))
        pooled = nm.tmatvec(src, uniform)
        attention = uniform.value.copy()

    target_vec = turn_vecs[-1]
    feature = nm.concat([pooled, target_vec])
    if train_mode and config.dropout > 0:
        feature = nm.dropout(feature, config.dropout, rng)

    def head(w: Parameter, b: Parameter) -> Tensor:
        return nm.sigmoid(nm.add(nm.dot(w, feature), b))

    y_authorship = [nm.sigmoid(nm.dot(turn_vecs[j], target_vec)) for j in range(m - 1)]
    return ForwardOutputs(
        y_main=head(params.main_w, params.main_b),
        y_spread=head(params.spread_w, params.spread_b),
        y_repeat=head(params.repeat_w, params.repeat_b),
        y_authorship=y_authorship,
        attention=attention,
        turn_vectors=turn_vecs,
        pooled=pooled,
    )


def predict_scores(params: ModelParams, dataset: list[EncodedInstance]) -> np.ndarray:
    """Eval-mode main-task probabilities for a dataset."""
    return np.array([forward(params, enc).y_main.item() for enc in dataset])


# ---------------------------------------------------------------------------
# Checkpoints: JSON header line + raw little-endian buffers, in header order.
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, params: ModelParams, vocab_hash: str,
                    step: int, extra: dict | None = None) -> None:
    named = params.named()
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": params.config.to_dict(),
        "vocab_hash": vocab_hash,
        "step": step,
        "extra": extra or {},
        "blocks": [{"name": name, "shape": list(p.value.shape),
                    "dtype": str(p.value.dtype)} for name, p in named.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for p in named.values():
            fh.write(np.ascontiguousarray(p.value).astype(p.value.dtype.newbyteorder("<"),
                                                          copy=False).tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        config = ModelConfig.from_dict(header["config"])
        params = ModelParams(config, seed=0)
        named = params.named()
        for block in header["blocks"]:
            name, shape = block["name"], tuple(block["shape"])
            dtype = np.dtype(block["dtype"]).newbyteorder("<")
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"{path}: truncated block {name!r}")
            if name not in named:
                raise ValueError(f"{path}: unknown parameter block {name!r}")
            values = np.frombuffer(buf, dtype=dtype).reshape(shape)
            if named[name].value.shape != values.shape:
                raise ValueError(f"{path}: shape mismatch for block {name!r}")
            named[name].value = values.astype(named[name].value.dtype)
            named[name].zero_grad()
    return params, header
