"""Text-conditioned pose denoiser.

A transformer text encoder summarizes the token sequence; an MLP embeds the
diffusion timestep; both form the condition. The pose stream is linearly
embedded, given sinusoidal frame positions, and passed through blocks of
self-attention, cross-attention into the condition memory, and a feed-forward
layer. The network predicts the clean pose sequence directly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tn
from .tensor import Tensor

PAD, BOS, EOS = 0, 1, 2
RESERVED = ("<pad>", "<bos>", "<eos>")


class UnknownTokenError(KeyError):
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        super().__init__(f"unknown token(s): {', '.join(map(repr, self.tokens))}")

    def __str__(self):
        return self.args[0]


class DenoiserError(RuntimeError):
    pass


class Vocabulary:
    """Bijective token <-> id map with ``<pad>``, ``<bos>``, ``<eos>`` fixed at 0, 1, 2."""

    def __init__(self, words: Sequence[str] = ()):
        self._tokens: List[str] = list(RESERVED)
        self._ids: Dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if not word or any(c.isspace() for c in word):
            raise ValueError(f"invalid token {word!r}")
        if word not in self._ids:
            self._ids[word] = len(self._tokens)
            self._tokens.append(word)
        return self._ids[word]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    @property
    def words(self) -> List[str]:
        return self._tokens[len(RESERVED):]

    def encode(self, words: Sequence[str]) -> List[int]:
        missing = [w for w in words if w not in self._ids]
        if missing:
            raise UnknownTokenError(missing)
        return [self._ids[w] for w in words]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self._tokens[i] for i in ids]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        vocab = cls()
        for w in tokens[len(RESERVED):]:
            if w in vocab:
                raise ValueError(f"duplicate token {w!r} in vocabulary")
            vocab.add(w)
        return vocab

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens([ln.strip() for ln in lines if ln.strip()])


@dataclass(frozen=True)
class DenoiserConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    max_positions: int = 64
    dropout_rate: float = 0.0
    num_joints: int = 11
    vocab_size: int = 16
    # condition g enters as cross-attention memory and/or as an additive bias
    cross_attention: bool = True
    condition_bias: bool = True

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "model_dim", "ffn_dim", "max_positions",
                     "num_joints", "vocab_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.model_dim % 2:
            raise ValueError("model_dim must be even for sinusoidal encodings")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**d)


LARGE_CONFIG = dict(num_layers=4, num_heads=8, model_dim=1024, ffn_dim=4096)


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: DenoiserConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in canonical order."""
    d, f, pose = cfg.model_dim, cfg.ffn_dim, cfg.num_joints * 3
    shapes: Dict[str, Tuple[int, ...]] = {"tok_emb": (cfg.vocab_size, d)}

    def ln(prefix):
        shapes[prefix + ".g"] = (d,)
        shapes[prefix + ".b"] = (d,)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def ffn(prefix):
        shapes.update({prefix + ".w1": (d, f), prefix + ".b1": (f,),
                       prefix + ".w2": (f, d), prefix + ".b2": (d,)})

    for i in range(cfg.num_layers):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.self")
        ln(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ffn")
    ln("enc.ln_f")
    shapes.update({"time.w1": (d, d), "time.b1": (d,), "time.w2": (d, d), "time.b2": (d,)})
    shapes.update({"pose_in.w": (pose, d), "pose_in.b": (d,)})
    for i in range(cfg.num_layers):
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        if cfg.cross_attention:
            ln(f"dec.{i}.ln2")
            attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ffn")
    ln("dec.ln_f")
    shapes.update({"pose_out.w": (d, pose), "pose_out.b": (pose,)})
    return shapes


def init_params(cfg: DenoiserConfig, rng: np.random.Generator) -> Dict[str, Tensor]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; unit layer-norm gains."""
    params = {}
    shapes = param_shapes(cfg)
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf == "b" and ".ln" in name:
            arr = np.zeros(shape)
        elif name == "tok_emb":
            arr = rng.uniform(-1.0, 1.0, size=shape)
        else:
            # biases take the fan-in of their paired weight: x.b -> x.w, x.b1 -> x.w1
            if len(shape) == 2:
                fan_in = shape[0]
            else:
                head, leaf = name.rsplit(".", 1)
                fan_in = shapes[f"{head}.w{leaf[1:]}"][0]
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------------------
# building blocks


def sinusoidal_features(positions, dim: int) -> np.ndarray:
    """Interleaved ``sin``/``cos`` features: channel 2k is sin, 2k+1 is cos."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    rates = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    out = np.empty((pos.shape[0], dim))
    out[:, 0::2] = np.sin(pos * rates)
    out[:, 1::2] = np.cos(pos * rates)
    return out


def positional_encoding(n: int, dim: int) -> np.ndarray:
    return sinusoidal_features(np.arange(n), dim)


def _key_bias(key_mask: Optional[np.ndarray], heads: int, n_q: int) -> Optional[np.ndarray]:
    if key_mask is None or key_mask.all():
        return None
    row = np.where(key_mask, 0.0, -np.inf)
    return np.broadcast_to(row, (heads, n_q, row.shape[0])).copy()


def attention(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
              num_heads: int, key_mask: Optional[np.ndarray] = None, return_weights: bool = False):
    """Multi-head scaled dot-product attention.

    Each head attends with ``softmax(Q K^T / sqrt(d_k)) V`` on its slice of the
    projected queries/keys/values; the concatenated heads go through ``wo``.
    Keys with ``key_mask == False`` get weight exactly zero.
    """
    d = wq.shape[1]
    if d % num_heads:
        raise ValueError(f"model dim {d} not divisible by {num_heads} heads")
    dk = d // num_heads
    n_q, n_k = q_in.shape[0], kv_in.shape[0]
    q = tn.transpose(tn.reshape(q_in @ wq, (n_q, num_heads, dk)), (1, 0, 2))
    k_t = tn.transpose(tn.reshape(kv_in @ wk, (n_k, num_heads, dk)), (1, 2, 0))
    v = tn.transpose(tn.reshape(kv_in @ wv, (n_k, num_heads, dk)), (1, 0, 2))
    logits = tn.scale(q @ k_t, 1.0 / math.sqrt(dk))
    bias = _key_bias(key_mask, num_heads, n_q)
    if bias is not None:
        logits = logits + Tensor(bias)
    weights = tn.softmax(logits, axis=-1)
    heads = tn.reshape(tn.transpose(weights @ v, (1, 0, 2)), (n_q, d))
    out = heads @ wo
    return (out, weights) if return_weights else out


def _ln(x: Tensor, params, prefix) -> Tensor:
    return tn.layer_norm(x, params[prefix + ".g"], params[prefix + ".b"])


def _ffn(x: Tensor, params, prefix) -> Tensor:
    h = tn.gelu(x @ params[prefix + ".w1"] + params[prefix + ".b1"])
    return h @ params[prefix + ".w2"] + params[prefix + ".b2"]


def _attn(q_in, kv_in, params, prefix, heads, key_mask):
    return attention(q_in, kv_in, params[prefix + ".wq"], params[prefix + ".wk"],
                     params[prefix + ".wv"], params[prefix + ".wo"], heads, key_mask)


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def _check_finite(x: Tensor, where: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise DenoiserError(f"non-finite activations in {where}")


# ---------------------------------------------------------------------------
# text encoder, time embedding, condition


class TextEncoding(NamedTuple):
    states: Tensor  # L x d
    global_vector: Tensor  # d
    key_mask: np.ndarray  # L booleans, False at PAD


class Condition(NamedTuple):
    memory: Tensor  # L x d
    bias: Tensor  # d
    key_mask: np.ndarray


def encode_text(tokens: Sequence[int], params: Dict[str, Tensor], cfg: DenoiserConfig,
                rng: Optional[np.random.Generator] = None) -> TextEncoding:
    """Transformer-encode token ids; PAD positions are excluded from attention and pooling."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ValueError("empty token sequence")
    if ids.size > cfg.max_positions:
        raise ValueError(f"token sequence of length {ids.size} exceeds max_positions {cfg.max_positions}")
    bad = ids[(ids < 0) | (ids >= cfg.vocab_size)]
    if bad.size:
        raise UnknownTokenError([f"id {int(i)}" for i in bad])
    key_mask = ids != PAD
    if not key_mask.any():
        raise ValueError("token sequence contains only padding")

    x = tn.embedding_lookup(params["tok_emb"], ids) + Tensor(positional_encoding(ids.size, cfg.model_dim))
    for i in range(cfg.num_layers):
        p = f"enc.{i}"
        h = _ln(x, params, p + ".ln1")
        x = x + _dropout(_attn(h, h, params, p + ".self", cfg.num_heads, key_mask), cfg.dropout_rate, rng)
        x = x + _dropout(_ffn(_ln(x, params, p + ".ln2"), params, p + ".ffn"), cfg.dropout_rate, rng)
    states = _ln(x, params, "enc.ln_f")
    valid = np.flatnonzero(key_mask)
    pooled = tn.mean(states[valid], axis=0)
    return TextEncoding(states, pooled, key_mask)


def time_embed(t: int, sched_T: int, params: Dict[str, Tensor], cfg: DenoiserConfig) -> Tensor:
    """Sinusoidal features of ``t`` through a two-layer GELU MLP."""
    if not 0 <= t <= sched_T:
        raise ValueError(f"timestep {t} outside [0, {sched_T}]")
    feats = Tensor(sinusoidal_features([t], cfg.model_dim)[0])
    h = tn.gelu(tn.reshape(feats, (1, -1)) @ params["time.w1"] + params["time.b1"])
    out = h @ params["time.w2"] + params["time.b2"]
    return tn.reshape(out, (cfg.model_dim,))


def make_condition(states: Tensor, global_vector: Tensor, time_vector: Tensor,
                   key_mask: Optional[np.ndarray] = None) -> Condition:
    """Condition = (token states shifted by the bias, bias), with bias = global + time."""
    if global_vector.shape != time_vector.shape or states.shape[-1:] != global_vector.shape:
        raise ValueError(
            f"condition shapes disagree: states {states.shape}, global {global_vector.shape}, "
            f"time {time_vector.shape}"
        )
    bias = global_vector + time_vector
    memory = states + bias
    if key_mask is None:
        key_mask = np.ones(states.shape[0], dtype=bool)
    return Condition(memory, bias, key_mask)


# ---------------------------------------------------------------------------
# denoiser


def denoise(p_t, cond: Condition, params: Dict[str, Tensor], cfg: DenoiserConfig,
            mask: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Predict the clean pose sequence (frames x joints x 3) from a noisy one."""
    x_in = p_t if isinstance(p_t, Tensor) else Tensor(p_t)
    if x_in.ndim != 3 or x_in.shape[1:] != (cfg.num_joints, 3):
        raise ValueError(f"pose input must be F x {cfg.num_joints} x 3, got {x_in.shape}")
    n = x_in.shape[0]
    if n > cfg.max_positions:
        raise ValueError(f"{n} frames exceed max_positions {cfg.max_positions}")
    frame_mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not frame_mask.any():
        raise ValueError("all frames are masked")

    x = tn.reshape(x_in, (n, cfg.num_joints * 3)) @ params["pose_in.w"] + params["pose_in.b"]
    x = x + Tensor(positional_encoding(n, cfg.model_dim))
    if cfg.condition_bias:
        x = x + cond.bias
    _check_finite(x, "input embedding")
    for i in range(cfg.num_layers):
        p = f"dec.{i}"
        h = _ln(x, params, p + ".ln1")
        x = x + _dropout(_attn(h, h, params, p + ".self", cfg.num_heads, frame_mask), cfg.dropout_rate, rng)
        if cfg.cross_attention:
            h = _ln(x, params, p + ".ln2")
            x = x + _dropout(_attn(h, cond.memory, params, p + ".cross", cfg.num_heads, cond.key_mask),
                             cfg.dropout_rate, rng)
        x = x + _dropout(_ffn(_ln(x, params, p + ".ln3"), params, p + ".ffn"), cfg.dropout_rate, rng)
        _check_finite(x, f"decoder layer {i}")
    out = _ln(x, params, "dec.ln_f") @ params["pose_out.w"] + params["pose_out.b"]
    _check_finite(out, "output projection")
    return tn.reshape(out, (n, cfg.num_joints, 3))


class TextPoseDenoiser:
    """Parameters plus config, vocabulary and schedule length, with convenience entry points."""

    def __init__(self, cfg: DenoiserConfig, params: Dict[str, Tensor], vocab: Vocabulary, sched_T: int):
        if len(vocab) != cfg.vocab_size:
            raise ValueError(f"vocabulary has {len(vocab)} tokens, config expects {cfg.vocab_size}")
        expected = param_shapes(cfg)
        if set(expected) != set(params):
            missing, extra = set(expected) - set(params), set(params) - set(expected)
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.cfg = cfg
        self.params = {name: params[name] for name in expected}
        self.vocab = vocab
        self.sched_T = sched_T

    @classmethod
    def create(cls, cfg: DenoiserConfig, vocab: Vocabulary, sched_T: int, rng: np.random.Generator):
        return cls(cfg, init_params(cfg, rng), vocab, sched_T)

    def encode(self, tokens: Sequence[int], rng=None) -> TextEncoding:
        return encode_text(tokens, self.params, self.cfg, rng)

    def condition(self, enc: TextEncoding, t: int) -> Condition:
        tv = time_embed(t, self.sched_T, self.params, self.cfg)
        return make_condition(enc.states, enc.global_vector, tv, enc.key_mask)

    def forward(self, p_t, t: int, tokens: Sequence[int], mask=None, rng=None) -> Tensor:
        enc = self.encode(tokens, rng)
        return denoise(p_t, self.condition(enc, t), self.params, self.cfg, mask, rng)

    def sampler_fn(self, p_t: np.ndarray, t: int, enc: TextEncoding, mask: np.ndarray) -> np.ndarray:
        """Denoiser callable for :func:`tdm.diffusion.sample`; ``enc`` is a cached text encoding."""
        with tn.no_grad():
            return denoise(p_t, self.condition(enc, t), self.params, self.cfg, mask).data

    def generate(self, tokens: Sequence[int], frames: int, sched, sampler_cfg, rng, mask=None):
        from .diffusion import sample

        with tn.no_grad():
            enc = self.encode(tokens)
        return sample(self.sampler_fn, enc, frames, self.cfg.num_joints, sched, sampler_cfg, rng, mask)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())
