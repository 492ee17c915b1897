"""Desk-scale encoder-decoder set-prediction network.

A small strided conv stack stands in for a large pretrained backbone and
produces a /32-resolution feature map, which is flattened into tokens and
processed by a transformer encoder.  A decoder attends over the encoder
memory from N learned query embeddings, and four shared 3-layer MLP heads
turn each output embedding into one prediction tuple (class logits,
sigmoid box, raw rot6d, raw translation).

Positional encodings are added to attention queries and keys (not values)
at every layer; the decoder queries are learned embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor, conv2d
from .exceptions import ConfigError, ShapeError
from .matching import PredictionSet


@dataclass
class ModelConfig:
    """Desk-scale architecture hyperparameters."""

    n_classes: int = 3
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    n_queries: int = 20
    image_h: int = 64
    image_w: int = 64
    downsample_factor: int = 32
    head_hidden: int = 256
    ffn_dim: int = 128
    pre_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.d_model % 4:
            raise ConfigError("d_model must be divisible by 4 for 2D sine encodings")
        f = self.downsample_factor
        if f < 2 or f & (f - 1):
            raise ConfigError("downsample_factor must be a power of two >= 2")
        if self.image_h % f or self.image_w % f:
            raise ConfigError("image size must be divisible by downsample_factor")
        if self.n_classes < 1 or self.n_queries < 1:
            raise ConfigError("n_classes and n_queries must be >= 1")

    @property
    def n_conv_layers(self):
        return int(round(np.log2(self.downsample_factor)))

    def conv_widths(self):
        # widening ladder capped at 64, last layer projects to d_model
        n = self.n_conv_layers
        return [16 * 2 ** min(i, 2) for i in range(n - 1)] + [self.d_model]

    def tokens(self):
        return (self.image_h // self.downsample_factor) * \
               (self.image_w // self.downsample_factor)


HEAD_DIMS = {"class": None, "bbox": 4, "rot6d": 6, "trans": 3}


def init_parameters(cfg: ModelConfig) -> ParameterStore:
    """Seeded parameter store: uniform fan-in init, Gaussian object queries."""
    rng = np.random.default_rng(cfg.seed)
    store = ParameterStore()

    def linear(name, fan_in, fan_out):
        k = 1.0 / np.sqrt(fan_in)
        store.add(f"{name}.w", rng.uniform(-k, k, size=(fan_in, fan_out)))
        store.add(f"{name}.b", rng.uniform(-k, k, size=fan_out))

    def conv(name, cin, cout, ksize=3):
        k = 1.0 / np.sqrt(cin * ksize * ksize)
        store.add(f"{name}.w", rng.uniform(-k, k, size=(cout, cin, ksize, ksize)))
        store.add(f"{name}.b", rng.uniform(-k, k, size=cout))

    def layernorm(name):
        store.add(f"{name}.g", np.ones(cfg.d_model))
        store.add(f"{name}.b", np.zeros(cfg.d_model))

    def attention(name):
        for part in ("q", "k", "v", "o"):
            linear(f"{name}.{part}", cfg.d_model, cfg.d_model)

    def ffn(name):
        linear(f"{name}.fc1", cfg.d_model, cfg.ffn_dim)
        linear(f"{name}.fc2", cfg.ffn_dim, cfg.d_model)

    cin = 3
    for i, width in enumerate(cfg.conv_widths()):
        conv(f"backbone.conv{i}", cin, width)
        cin = width

    for i in range(cfg.n_encoder_layers):
        attention(f"enc{i}.attn")
        layernorm(f"enc{i}.ln1")
        ffn(f"enc{i}.ffn")
        layernorm(f"enc{i}.ln2")

    for i in range(cfg.n_decoder_layers):
        attention(f"dec{i}.self_attn")
        layernorm(f"dec{i}.ln1")
        attention(f"dec{i}.cross_attn")
        layernorm(f"dec{i}.ln2")
        ffn(f"dec{i}.ffn")
        layernorm(f"dec{i}.ln3")

    store.add("query_embed", rng.standard_normal((cfg.n_queries, cfg.d_model)))

    for head, out_dim in HEAD_DIMS.items():
        dims = [cfg.d_model, cfg.head_hidden, cfg.head_hidden,
                out_dim if out_dim else cfg.n_classes + 1]
        for layer in range(3):
            linear(f"heads.{head}.l{layer}", dims[layer], dims[layer + 1])
    return store


def head_parameter_names(store: ParameterStore):
    """Names of prediction-head parameters (the trainable set when the
    transformer is frozen)."""
    return [n for n in store.names() if n.startswith("heads.")]


def sine_positional_encoding(h, w, d, temperature=10000.0):
    """Fixed 2D sine encoding, shape (h*w, d), values in [-1, 1].

    The first d/2 channels encode the row index, the rest the column index;
    within each half sin/cos alternate over geometrically spaced
    frequencies.  Deterministic, and distinct positions receive distinct
    encodings.
    """
    if d % 4:
        raise ShapeError("encoding dimension must be divisible by 4")
    half = d // 2
    freq = temperature ** (2.0 * np.arange(half // 2) / half)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")

    def encode(pos):
        ang = pos[..., None] / freq
        out = np.empty((h, w, half))
        out[..., 0::2] = np.sin(ang)
        out[..., 1::2] = np.cos(ang)
        return out

    return np.concatenate([encode(ys), encode(xs)], axis=-1).reshape(h * w, d)


def _linear(store, name, x):
    return x @ store[f"{name}.w"] + store[f"{name}.b"]


def _layer_norm(store, name, x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / ad.sqrt(var + eps) * store[f"{name}.g"] + store[f"{name}.b"]


def _ffn(store, name, x):
    return _linear(store, f"{name}.fc2", ad.relu(_linear(store, f"{name}.fc1", x)))


def _attention(store, name, query_in, key_in, value_in, n_heads):
    """Multi-head attention; returns (output, attention weights ndarray)."""
    sq, d = query_in.shape
    sk = key_in.shape[0]
    dh = d // n_heads
    q = _linear(store, f"{name}.q", query_in)
    k = _linear(store, f"{name}.k", key_in)
    v = _linear(store, f"{name}.v", value_in)
    qh = q.reshape(sq, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(sk, n_heads, dh).transpose(1, 0, 2)
    vh = v.reshape(sk, n_heads, dh).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) * (1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)                    # (heads, sq, sk)
    out = (attn @ vh).transpose(1, 0, 2).reshape(sq, d)
    return _linear(store, f"{name}.o", out), attn.data.copy()


def extract_features(image, store, cfg: ModelConfig):
    """Strided conv stack: (h, w, 3) image to a (d, h/f, w/f) feature map."""
    data = ad.asdata(image)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ShapeError(f"image must be (h, w, 3), got {data.shape}")
    h, w = data.shape[:2]
    f = cfg.downsample_factor
    if h % f or w % f:
        raise ShapeError(f"image size {h}x{w} not divisible by downsample factor {f}")
    x = image.transpose(2, 0, 1) if ad.is_tensor(image) else Tensor(data.transpose(2, 0, 1))
    n = cfg.n_conv_layers
    for i in range(n):
        x = conv2d(x, store[f"backbone.conv{i}.w"], store[f"backbone.conv{i}.b"],
                   stride=2, pad=1)
        if i < n - 1:
            x = ad.relu(x)
    return x


def encoder_forward(tokens, pos, store, cfg: ModelConfig):
    """Self-attention encoder over feature tokens; pos is added to q and k
    at every layer.  Returns (memory, per-layer attention list)."""
    attns = []
    src = tokens
    for i in range(cfg.n_encoder_layers):
        name = f"enc{i}"
        if cfg.pre_norm:
            x = _layer_norm(store, f"{name}.ln1", src)
            sa, a = _attention(store, f"{name}.attn", x + pos, x + pos, x, cfg.n_heads)
            src = src + sa
            x = _layer_norm(store, f"{name}.ln2", src)
            src = src + _ffn(store, f"{name}.ffn", x)
        else:
            sa, a = _attention(store, f"{name}.attn", src + pos, src + pos, src,
                               cfg.n_heads)
            src = _layer_norm(store, f"{name}.ln1", src + sa)
            src = _layer_norm(store, f"{name}.ln2", src + _ffn(store, f"{name}.ffn", src))
        attns.append(a)
    return src, attns


def decoder_forward(memory, mem_pos, store, cfg: ModelConfig):
    """Query decoder: self-attention over the N slots, cross-attention to
    the encoder memory.  Returns (per-layer outputs, self attns, cross attns)."""
    queries = store["query_embed"]
    tgt = Tensor(np.zeros((cfg.n_queries, cfg.d_model)))
    outputs, self_attns, cross_attns = [], [], []
    for i in range(cfg.n_decoder_layers):
        name = f"dec{i}"
        if cfg.pre_norm:
            x = _layer_norm(store, f"{name}.ln1", tgt)
            sa, a_self = _attention(store, f"{name}.self_attn",
                                    x + queries, x + queries, x, cfg.n_heads)
            tgt = tgt + sa
            x = _layer_norm(store, f"{name}.ln2", tgt)
            ca, a_cross = _attention(store, f"{name}.cross_attn",
                                     x + queries, memory + mem_pos, memory, cfg.n_heads)
            tgt = tgt + ca
            x = _layer_norm(store, f"{name}.ln3", tgt)
            tgt = tgt + _ffn(store, f"{name}.ffn", x)
        else:
            sa, a_self = _attention(store, f"{name}.self_attn",
                                    tgt + queries, tgt + queries, tgt, cfg.n_heads)
            tgt = _layer_norm(store, f"{name}.ln1", tgt + sa)
            ca, a_cross = _attention(store, f"{name}.cross_attn",
                                     tgt + queries, memory + mem_pos, memory, cfg.n_heads)
            tgt = _layer_norm(store, f"{name}.ln2", tgt + ca)
            tgt = _layer_norm(store, f"{name}.ln3", tgt + _ffn(store, f"{name}.ffn", tgt))
        outputs.append(tgt)
        self_attns.append(a_self)
        cross_attns.append(a_cross)
    return outputs, self_attns, cross_attns


def _mlp3(store, name, x):
    x = ad.relu(_linear(store, f"{name}.l0", x))
    x = ad.relu(_linear(store, f"{name}.l1", x))
    return _linear(store, f"{name}.l2", x)


@dataclass
class ForwardOutput:
    """One forward pass: N prediction tuples as traced tensors."""

    logits: object        # (N, C+1)
    boxes: object         # (N, 4), sigmoid-squashed
    rot6d: object         # (N, 6), raw
    translations: object  # (N, 3), raw
    aux: list = None
    enc_attn: list = None
    dec_self_attn: list = None
    dec_cross_attn: list = None

    def to_prediction_set(self) -> PredictionSet:
        return PredictionSet(logits=ad.asdata(self.logits).copy(),
                             boxes=ad.asdata(self.boxes).copy(),
                             rot6d=ad.asdata(self.rot6d).copy(),
                             translations=ad.asdata(self.translations).copy())


def prediction_heads(embeddings, store, cfg: ModelConfig) -> ForwardOutput:
    """Apply the four shared heads to (N, d) embeddings independently."""
    return ForwardOutput(
        logits=_mlp3(store, "heads.class", embeddings),
        boxes=ad.sigmoid(_mlp3(store, "heads.bbox", embeddings)),
        rot6d=_mlp3(store, "heads.rot6d", embeddings),
        translations=_mlp3(store, "heads.trans", embeddings))


def forward(image, store, cfg: ModelConfig, return_attn=False,
            return_aux=False) -> ForwardOutput:
    """Full forward pass for one (h, w, 3) image in [0, 1]."""
    fmap = extract_features(image, store, cfg)
    d, fh, fw = fmap.shape
    tokens = fmap.reshape(d, fh * fw).transpose(1, 0)
    pos = sine_positional_encoding(fh, fw, cfg.d_model)
    memory, enc_attns = encoder_forward(tokens, pos, store, cfg)
    layer_outputs, self_attns, cross_attns = decoder_forward(memory, pos, store, cfg)
    out = prediction_heads(layer_outputs[-1], store, cfg)
    if return_aux:
        out.aux = [prediction_heads(emb, store, cfg) for emb in layer_outputs[:-1]]
    if return_attn:
        out.enc_attn = enc_attns
        out.dec_self_attn = self_attns
        out.dec_cross_attn = cross_attns
    return out


def config_to_dict(cfg: ModelConfig):
    return asdict(cfg)


def config_from_dict(d) -> ModelConfig:
    known = {f for f in ModelConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig(**d)
