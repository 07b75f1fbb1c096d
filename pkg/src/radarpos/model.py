"""The RadarPos network.

Patch tokenizer, time-of-arrival sinusoidal positional encoding,
position masking (content tokens are never touched; only positional
encodings are replaced by a learnable mask token), a pre-norm
transformer encoder-decoder, the position projector, the emitter
classifier head, and low-rank adapters on the encoder linears.

Weights are initialized per parameter name (seed mixed with a CRC of
the name), so two models built from the same seed share bitwise-equal
tensors for every name they have in common regardless of which optional
parameters exist. That property is what makes the positional-encoding
ablation a single-variable experiment.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .pdw import N_CLASSES, SEQ_LEN, SampleRecord
from .tensor import Parameter, Tensor

PE_MODES = ("toa", "learned")
TOA_UNIT_SCALE = 1e6  # seconds -> microseconds before the sinusoid ladder


@dataclass(frozen=True)
class ModelConfig:
    n_patches: int = 64
    embed_dim: int = 512
    encoder_layers: int = 6
    decoder_layers: int = 2
    heads: int = 8
    mlp_ratio: int = 4
    mask_ratio: float = 0.6
    patch_len: int = 8
    n_classes: int = N_CLASSES
    dropout: float = 0.0
    pe_mode: str = "toa"
    seq_len: int = SEQ_LEN

    def __post_init__(self):
        if self.embed_dim % 2 != 0:
            raise ConfigError("embed_dim must be even (sin/cos pairs)")
        if self.embed_dim % self.heads != 0:
            raise ConfigError("embed_dim must divide evenly across heads")
        if self.n_patches * self.patch_len != self.seq_len:
            raise ConfigError(
                f"n_patches * patch_len must equal {self.seq_len}, "
                f"got {self.n_patches} * {self.patch_len}"
            )
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must lie in (0, 1)")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"pe_mode must be one of {PE_MODES}")

    @property
    def patch_dim(self) -> int:
        return 2 * self.patch_len


# ---------------------------------------------------------------------------
# positional encoding and masking
# ---------------------------------------------------------------------------


def toa_positional_encoding(toa_seconds, dim: int, scale: float = TOA_UNIT_SCALE) -> np.ndarray:
    """Sinusoidal encoding of pulse time of arrival.

    Element 2k is sin(t / 10000^(2k/dim)) and element 2k+1 the matching
    cosine, with t the TOA converted to microseconds (raw seconds would
    collapse every encoding onto [0, 1, 0, 1, ...]). Accepts a scalar or
    a 1-D array; returns float64 of shape (dim,) or (n, dim).
    """
    if dim % 2 != 0:
        raise ConfigError("encoding dim must be even")
    toa = np.asarray(toa_seconds, dtype=np.float64)
    scalar = toa.ndim == 0
    t = np.atleast_1d(toa) * scale
    k = np.arange(dim // 2, dtype=np.float64)
    divisors = np.power(10000.0, 2.0 * k / dim)
    angles = t[:, None] / divisors[None, :]
    out = np.empty((t.size, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out[0] if scalar else out


@dataclass(frozen=True)
class MaskPlan:
    """Which patch positions lose their encoding to the mask token."""

    flags: np.ndarray  # bool (n_patches,), True = masked
    masked_count: int
    seed: int

    def __post_init__(self):
        if int(self.flags.sum()) != self.masked_count:
            raise ConfigError("mask flags disagree with masked_count")


def plan_mask(n: int, ratio: float, seed: int) -> MaskPlan:
    """Choose ceil(ratio * n) positions uniformly without replacement."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("mask ratio must lie in (0, 1)")
    count = math.ceil(ratio * n)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chosen = rng.choice(n, size=count, replace=False)
    flags = np.zeros(n, dtype=bool)
    flags[chosen] = True
    return MaskPlan(flags=flags, masked_count=count, seed=seed)


def _flags_of(plan, n: int) -> np.ndarray:
    if plan is None:
        return np.zeros(n, dtype=bool)
    if isinstance(plan, MaskPlan):
        return plan.flags
    return np.asarray(plan, dtype=bool)


@dataclass
class TokenizedSample:
    """Per-patch embeddings with their TOA anchors, ready for masking."""

    tokens: Tensor  # (n_patches, embed_dim)
    patch_toa: np.ndarray  # (n_patches,) seconds, strictly increasing
    cls: Parameter
    label: int


def apply_position_mask(tok: TokenizedSample, plan, p_mask: Parameter,
                        scale: float = TOA_UNIT_SCALE) -> Tensor:
    """Assemble [cls; tokens] plus positional encodings, masked per plan.

    Content tokens are never modified: each row only ever gains an
    additive positional term, either its own TOA encoding (visible), the
    shared learnable mask token (masked), or the TOA-0 encoding for the
    class-token row. Output row 0 is the class token.
    """
    n, d = tok.tokens.shape
    flags = _flags_of(plan, n)
    if flags.shape != (n,):
        raise DimensionError("mask plan does not match token count")
    dtype = tok.tokens.dtype

    pe = np.zeros((n + 1, d), dtype=np.float64)
    pe[0] = toa_positional_encoding(0.0, d, scale)
    enc = toa_positional_encoding(tok.patch_toa, d, scale)
    pe[1:][~flags] = enc[~flags]

    mask_col = np.zeros((n + 1, 1), dtype=dtype)
    mask_col[1:, 0] = flags.astype(dtype)

    rows = T.concat([T.reshape(tok.cls, (1, d)), tok.tokens], axis=0)
    pos = T.add(
        T.constant(pe.astype(dtype)),
        T.matmul(T.constant(mask_col), T.reshape(p_mask, (1, d))),
    )
    return T.add(rows, pos)


# ---------------------------------------------------------------------------
# low-rank adapters
# ---------------------------------------------------------------------------


@dataclass
class LoraAdapter:
    """Rank-r update B @ A on a frozen linear; B starts at zero so the
    adapted layer is exactly the base layer at initialization."""

    a: Parameter  # (rank, d_in)
    b: Parameter  # (d_out, rank)
    rank: int

    @property
    def scale(self) -> float:
        return 1.0 / self.rank


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


def _param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    vals = rng.normal(0.0, std, shape)
    bad = np.abs(vals) > 2 * std
    while bad.any():
        vals[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = np.abs(vals) > 2 * std
    return vals


class RadarPosModel:
    """Backbone plus pretraining and classification heads."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.adapters: dict[str, LoraAdapter] = {}
        self.lora_rank: int | None = None
        self.train_rng: np.random.Generator | None = None
        self._params: dict[str, Parameter] = {}
        self._build()

    # -- construction -----------------------------------------------------

    def _new_param(self, name: str, shape, init: str) -> Parameter:
        rng = _param_rng(self.seed, name)
        if init == "trunc":
            data = _trunc_normal(rng, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        p = Parameter(data.astype(self.dtype))
        self._params[name] = p
        return p

    def _build(self):
        cfg = self.cfg
        d = cfg.embed_dim
        self._new_param("tokenizer.weight", (cfg.patch_dim, d), "trunc")
        self._new_param("tokenizer.bias", (d,), "zeros")
        self._new_param("cls_token", (d,), "trunc")
        self._new_param("mask_token", (d,), "trunc")
        if cfg.pe_mode == "learned":
            self._new_param("index_pe.table", (cfg.n_patches + 1, d), "trunc")
        for stack, layers in (("encoder", cfg.encoder_layers), ("decoder", cfg.decoder_layers)):
            for i in range(layers):
                self._build_block(f"{stack}.{i}")
            self._new_param(f"{stack}.norm.gain", (d,), "ones")
            self._new_param(f"{stack}.norm.bias", (d,), "zeros")
        self._new_param("projector.weight", (d, cfg.n_patches), "trunc")
        self._new_param("projector.bias", (cfg.n_patches,), "zeros")
        self._new_param("classifier.weight", (d, cfg.n_classes), "trunc")
        self._new_param("classifier.bias", (cfg.n_classes,), "zeros")

    def _build_block(self, prefix: str):
        d = self.cfg.embed_dim
        hidden = self.cfg.mlp_ratio * d
        self._new_param(f"{prefix}.ln1.gain", (d,), "ones")
        self._new_param(f"{prefix}.ln1.bias", (d,), "zeros")
        for proj in ("wq", "wk", "wv", "wo"):
            self._new_param(f"{prefix}.attn.{proj}", (d, d), "trunc")
            self._new_param(f"{prefix}.attn.b{proj[1]}", (d,), "zeros")
        self._new_param(f"{prefix}.ln2.gain", (d,), "ones")
        self._new_param(f"{prefix}.ln2.bias", (d,), "zeros")
        self._new_param(f"{prefix}.mlp.w1", (d, hidden), "trunc")
        self._new_param(f"{prefix}.mlp.b1", (hidden,), "zeros")
        self._new_param(f"{prefix}.mlp.w2", (hidden, d), "trunc")
        self._new_param(f"{prefix}.mlp.b2", (d,), "zeros")

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, Parameter]:
        return self._params

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]):
        for name, arr in tensors.items():
            if name not in self._params:
                raise FormatError(f"checkpoint tensor {name!r} has no home in this model")
            p = self._params[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise FormatError(
                    f"checkpoint tensor {name!r} shape {arr.shape} != {p.data.shape}"
                )
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)
            p.grad = np.zeros_like(p.data)

    # -- LoRA ---------------------------------------------------------------

    def adapted_linear_names(self) -> list[str]:
        names = []
        for i in range(self.cfg.encoder_layers):
            names += [f"encoder.{i}.attn.{p}" for p in ("wq", "wk", "wv", "wo")]
            names += [f"encoder.{i}.mlp.w1", f"encoder.{i}.mlp.w2"]
        return names

    def attach_lora(self, rank: int, seed: int = 0):
        if rank < 1:
            raise ConfigError("LoRA rank must be positive")
        self.lora_rank = rank
        for name in self.adapted_linear_names():
            d_in, d_out = self._params[name].data.shape
            rng = _param_rng(seed, name + ".lora")
            a = Parameter(rng.normal(0.0, 0.02, (rank, d_in)).astype(self.dtype))
            b = Parameter(np.zeros((d_out, rank), dtype=self.dtype))
            self.adapters[name] = LoraAdapter(a=a, b=b, rank=rank)
            self._params[name + ".lora_a"] = a
            self._params[name + ".lora_b"] = b

    def merged_state_dict(self) -> dict[str, np.ndarray]:
        """Fold every adapter into its base weight; adapters disappear."""
        state = {}
        for name, p in self._params.items():
            if ".lora_" in name:
                continue
            arr = p.data.copy()
            if name in self.adapters:
                ad = self.adapters[name]
                arr = arr + ad.scale * (ad.b.data @ ad.a.data).T.astype(self.dtype)
            state[name] = arr
        return state

    def freeze_for_finetune(self):
        """Train only adapters and the classifier head; everything else frozen."""
        for name, p in self._params.items():
            p.set_trainable(".lora_" in name or name.startswith("classifier."))

    # -- forward pieces -------------------------------------------------------

    def _linear(self, x: Tensor, wname: str, bname: str, adapted: bool) -> Tensor:
        out = T.linear(x, self._params[wname], self._params[bname])
        if adapted and wname in self.adapters:
            ad = self.adapters[wname]
            h = T.matmul(x, T.transpose(ad.a))
            delta = T.matmul(h, T.transpose(ad.b))
            out = T.add(out, T.mul_scalar(delta, ad.scale))
        return out

    def _maybe_dropout(self, x: Tensor) -> Tensor:
        if self.cfg.dropout > 0 and self.train_rng is not None:
            return T.dropout(x, self.cfg.dropout, self.train_rng)
        return x

    def _attention(self, x: Tensor, prefix: str, adapted: bool) -> Tensor:
        b, s, d = x.shape
        heads = self.cfg.heads
        dh = d // heads
        q = self._linear(x, f"{prefix}.attn.wq", f"{prefix}.attn.bq", adapted)
        k = self._linear(x, f"{prefix}.attn.wk", f"{prefix}.attn.bk", adapted)
        v = self._linear(x, f"{prefix}.attn.wv", f"{prefix}.attn.bv", adapted)

        def split(t):
            return T.transpose(T.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

        q, k, v = split(q), split(k), split(v)
        scores = T.mul_scalar(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, s, d))
        return self._linear(ctx, f"{prefix}.attn.wo", f"{prefix}.attn.bo", adapted)

    def _block(self, x: Tensor, prefix: str, adapted: bool) -> Tensor:
        h = T.layer_norm(x, self._params[f"{prefix}.ln1.gain"], self._params[f"{prefix}.ln1.bias"])
        x = T.add(x, self._maybe_dropout(self._attention(h, prefix, adapted)))
        h = T.layer_norm(x, self._params[f"{prefix}.ln2.gain"], self._params[f"{prefix}.ln2.bias"])
        h = self._linear(h, f"{prefix}.mlp.w1", f"{prefix}.mlp.b1", adapted)
        h = self._linear(T.gelu(h), f"{prefix}.mlp.w2", f"{prefix}.mlp.b2", adapted)
        return T.add(x, self._maybe_dropout(h))

    def _stack(self, x: Tensor, stack: str, layers: int, adapted: bool) -> Tensor:
        two_d = x.ndim == 2
        if two_d:
            x = T.reshape(x, (1,) + x.shape)
        for i in range(layers):
            x = self._block(x, f"{stack}.{i}", adapted)
        x = T.layer_norm(x, self._params[f"{stack}.norm.gain"], self._params[f"{stack}.norm.bias"])
        return T.reshape(x, x.shape[1:]) if two_d else x

    def encode(self, x: Tensor) -> Tensor:
        """Pre-norm transformer encoder over (..., N+1, D) token rows."""
        return self._stack(x, "encoder", self.cfg.encoder_layers, adapted=True)

    def decode(self, x: Tensor) -> Tensor:
        """Shallow decoder over all rows; used only during pretraining."""
        return self._stack(x, "decoder", self.cfg.decoder_layers, adapted=False)

    def project(self, patch_rows: Tensor) -> Tensor:
        """Single affine map D -> N producing per-patch position logits."""
        return T.linear(patch_rows, self._params["projector.weight"], self._params["projector.bias"])

    def classify(self, cls_rows: Tensor) -> Tensor:
        return T.linear(cls_rows, self._params["classifier.weight"], self._params["classifier.bias"])

    # -- sample assembly -------------------------------------------------------

    def tokenize(self, sample: SampleRecord) -> TokenizedSample:
        """Split one sample into patches and project them to embeddings."""
        feats = sample.features[None, ...]
        tokens = self._tokenize_features(feats)
        patch_toa = sample.toa_track.reshape(self.cfg.n_patches, self.cfg.patch_len)[:, 0]
        return TokenizedSample(
            tokens=T.reshape(tokens, tokens.shape[1:]),
            patch_toa=patch_toa,
            cls=self._params["cls_token"],
            label=sample.label,
        )

    def _tokenize_features(self, feats: np.ndarray) -> Tensor:
        cfg = self.cfg
        if feats.ndim != 3 or feats.shape[1:] != (2, cfg.seq_len):
            raise DimensionError(f"features must be (batch, 2, {cfg.seq_len})")
        batch = feats.shape[0]
        patches = feats.reshape(batch, 2, cfg.n_patches, cfg.patch_len)
        patches = patches.transpose(0, 2, 1, 3).reshape(batch, cfg.n_patches, cfg.patch_dim)
        x = T.constant(np.ascontiguousarray(patches, dtype=self.dtype))
        return T.linear(x, self._params["tokenizer.weight"], self._params["tokenizer.bias"])

    def _positional(self, patch_toas: np.ndarray, plans) -> Tensor:
        cfg = self.cfg
        batch, n = patch_toas.shape
        d = cfg.embed_dim
        flags = np.stack([_flags_of(p, n) for p in plans])

        mask_col = np.zeros((batch, n + 1, 1), dtype=self.dtype)
        mask_col[:, 1:, 0] = flags.astype(self.dtype)
        mask_part = T.matmul(
            T.constant(mask_col), T.reshape(self._params["mask_token"], (1, d))
        )

        if cfg.pe_mode == "toa":
            vis = np.zeros((batch, n + 1, d), dtype=np.float64)
            vis[:, 0, :] = toa_positional_encoding(0.0, d)
            enc = toa_positional_encoding(patch_toas.reshape(-1), d).reshape(batch, n, d)
            vis[:, 1:, :] = enc * ~flags[..., None]
            pos = T.constant(vis.astype(self.dtype))
        else:
            sel = np.zeros((batch, n + 1, n + 1), dtype=self.dtype)
            sel[:, 0, 0] = 1.0
            rows = np.arange(1, n + 1)
            for bi in range(batch):
                vis_rows = rows[~flags[bi]]
                sel[bi, vis_rows, vis_rows] = 1.0
            pos = T.matmul(T.constant(sel), self._params["index_pe.table"])
        return T.add(pos, mask_part)

    def _assemble(self, feats: np.ndarray, toas: np.ndarray, plans) -> Tensor:
        cfg = self.cfg
        batch = feats.shape[0]
        tokens = self._tokenize_features(feats)
        patch_toas = toas.reshape(batch, cfg.n_patches, cfg.patch_len)[:, :, 0]
        ones = T.constant(np.ones((batch, 1, 1), dtype=self.dtype))
        cls_rows = T.matmul(ones, T.reshape(self._params["cls_token"], (1, cfg.embed_dim)))
        content = T.concat([cls_rows, tokens], axis=1)
        if plans is None:
            plans = [None] * batch
        return T.add(content, self._positional(patch_toas, plans))

    # -- full paths -----------------------------------------------------------

    def forward_pretrain(self, feats: np.ndarray, toas: np.ndarray, plans):
        """Masked assembly -> encoder -> decoder -> projector.

        Returns (position logits (B, N, N), decoder class-token outputs
        (B, D), decoder patch outputs (B, N, D)).
        """
        x = self._assemble(feats, toas, plans)
        dec = self.decode(self.encode(x))
        cls_out = dec[:, 0, :]
        patch_out = dec[:, 1:, :]
        return self.project(patch_out), cls_out, patch_out

    def forward_classify(self, feats: np.ndarray, toas: np.ndarray) -> Tensor:
        """Unmasked assembly -> encoder -> classifier logits (B, n_classes)."""
        x = self._assemble(feats, toas, plans=None)
        enc = self.encode(x)
        return self.classify(enc[:, 0, :])


# ---------------------------------------------------------------------------
# closed-form parameter accounting
# ---------------------------------------------------------------------------


def _block_parameter_count(cfg: ModelConfig) -> int:
    d = cfg.embed_dim
    hidden = cfg.mlp_ratio * d
    attn = 4 * (d * d + d)
    norms = 4 * d
    mlp = d * hidden + hidden + hidden * d + d
    return attn + norms + mlp


def total_parameter_count(cfg: ModelConfig) -> int:
    d = cfg.embed_dim
    n = cfg.n_patches
    count = cfg.patch_dim * d + d  # tokenizer
    count += 2 * d  # cls + mask tokens
    if cfg.pe_mode == "learned":
        count += (n + 1) * d
    count += (cfg.encoder_layers + cfg.decoder_layers) * _block_parameter_count(cfg)
    count += 2 * 2 * d  # encoder + decoder final norms
    count += d * n + n  # projector
    count += d * cfg.n_classes + cfg.n_classes
    return count


def lora_parameter_count(cfg: ModelConfig, rank: int) -> int:
    d = cfg.embed_dim
    hidden = cfg.mlp_ratio * d
    per_layer = 4 * rank * (d + d) + rank * (d + hidden) + rank * (hidden + d)
    return cfg.encoder_layers * per_layer


def finetune_trainable_count(cfg: ModelConfig, rank: int) -> int:
    return lora_parameter_count(cfg, rank) + cfg.embed_dim * cfg.n_classes + cfg.n_classes


def finetune_trainable_fraction(cfg: ModelConfig, rank: int) -> float:
    trainable = finetune_trainable_count(cfg, rank)
    return trainable / (total_parameter_count(cfg) + lora_parameter_count(cfg, rank))
