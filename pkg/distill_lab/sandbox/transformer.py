"""
Micro Transformer

A minimal causal transformer in numpy float64 with hand-written backward
passes. Pre-norm residual blocks, multi-head causal self-attention, a tanh
GELU MLP of width 4·d_model and learned absolute positional embeddings.

Parameters live in a flat name → array mapping so the optimizer, the
checkpoint format and the gradient checks can treat them uniformly.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from ..core.errors import InvariantViolation
from .archive import content_digest, read_archive, write_archive
from .optim import AdamState

logger = logging.getLogger(__name__)

GELU_C = math.sqrt(2.0 / math.pi)

# loss_fn(logits) -> (scalar loss, dloss/dlogits)
LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture descriptor"""
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    seed: int = 0
    mlp_ratio: int = 4
    init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self):
        errors = []
        if self.vocab_size < 2:
            errors.append(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.n_layers < 1:
            errors.append(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            errors.append(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            errors.append(f"max_len must be >= 2, got {self.max_len}")
        if errors:
            raise InvariantViolation("; ".join(errors))

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Declared shape of every tensor, in canonical order"""
        d, k, hidden = self.d_model, self.vocab_size, self.mlp_ratio * self.d_model
        shapes: Dict[str, Tuple[int, ...]] = {
            "tok_emb": (k, d),
            "pos_emb": (self.max_len, d),
        }
        for layer in range(self.n_layers):
            p = f"blocks.{layer}."
            shapes.update({
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "attn.w_qkv": (d, 3 * d),
                p + "attn.b_qkv": (3 * d,),
                p + "attn.w_o": (d, d),
                p + "attn.b_o": (d,),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "mlp.w_in": (d, hidden),
                p + "mlp.b_in": (hidden,),
                p + "mlp.w_out": (hidden, d),
                p + "mlp.b_out": (d,),
            })
        shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "w_out": (d, k), "b_out": (k,)})
        return shapes


@dataclass
class ModelParams:
    """Named parameter tensors plus the config they belong to"""
    config: ModelConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.config.param_shapes())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {name: t.copy() for name, t in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())

    def validate(self) -> None:
        """Check shapes against the config and finiteness"""
        expected = self.config.param_shapes()
        if set(expected) != set(self.tensors):
            raise InvariantViolation("Parameter names do not match the model config")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise InvariantViolation(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
        if not self.all_finite():
            raise InvariantViolation("Model parameters contain NaN or Inf")

    @property
    def checkpoint_id(self) -> str:
        return content_digest(self.tensors, {"config": asdict(self.config)})[:16]


def init_params(config: ModelConfig) -> ModelParams:
    """Gaussian(0, init_std) weights, zero biases, unit layer-norm gains"""
    rng = np.random.default_rng(config.seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes().items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            tensors[name] = np.ones(shape)
        elif leaf.startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, config.init_std, size=shape)
    return ModelParams(config, tensors)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layer_norm_backward(dy: np.ndarray, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + np.tanh(GELU_C * (u + 0.044715 * u ** 3)))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    t = np.tanh(GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t ** 2) * GELU_C * (1.0 + 3 * 0.044715 * u ** 2)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, T, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * hd)


def _attention(h: np.ndarray, tensors: Dict[str, np.ndarray], prefix: str, config: ModelConfig):
    B, T, d = h.shape
    qkv = h @ tensors[prefix + "w_qkv"] + tensors[prefix + "b_qkv"]
    q, k, v = (_split_heads(part, config.n_heads) for part in np.split(qkv, 3, axis=-1))
    scale = 1.0 / math.sqrt(config.head_dim)

    causal = np.tril(np.ones((T, T), dtype=bool))
    scores = np.where(causal, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
    att = softmax(scores, axis=-1)
    out = _merge_heads(att @ v)
    y = out @ tensors[prefix + "w_o"] + tensors[prefix + "b_o"]
    return y, (h, q, k, v, att, out, scale)


def _attention_backward(dy: np.ndarray, cache, tensors: Dict[str, np.ndarray], prefix: str, grads: Dict[str, np.ndarray]):
    h, q, k, v, att, out, scale = cache
    d = h.shape[-1]

    grads[prefix + "w_o"] = np.einsum("btd,bte->de", out, dy)
    grads[prefix + "b_o"] = dy.sum(axis=(0, 1))
    dout = _split_heads(dy @ tensors[prefix + "w_o"].T, q.shape[1])

    datt = dout @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ dout
    dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
    grads[prefix + "w_qkv"] = np.einsum("btd,bte->de", h, dqkv)
    grads[prefix + "b_qkv"] = dqkv.sum(axis=(0, 1))
    return dqkv @ tensors[prefix + "w_qkv"].T


def _mlp(h: np.ndarray, tensors: Dict[str, np.ndarray], prefix: str):
    u = h @ tensors[prefix + "w_in"] + tensors[prefix + "b_in"]
    a = _gelu(u)
    return a @ tensors[prefix + "w_out"] + tensors[prefix + "b_out"], (h, u, a)


def _mlp_backward(dy: np.ndarray, cache, tensors: Dict[str, np.ndarray], prefix: str, grads: Dict[str, np.ndarray]):
    h, u, a = cache
    grads[prefix + "w_out"] = np.einsum("btd,bte->de", a, dy)
    grads[prefix + "b_out"] = dy.sum(axis=(0, 1))
    du = (dy @ tensors[prefix + "w_out"].T) * _gelu_grad(u)
    grads[prefix + "w_in"] = np.einsum("btd,bte->de", h, du)
    grads[prefix + "b_in"] = du.sum(axis=(0, 1))
    return du @ tensors[prefix + "w_in"].T


def _as_batch(params: ModelParams, tokens) -> Tuple[np.ndarray, bool]:
    tokens = np.asarray(tokens)
    single = tokens.ndim == 1
    batch = tokens[None, :] if single else tokens
    if batch.ndim != 2:
        raise InvariantViolation(f"tokens must be 1-D or 2-D, got shape {tokens.shape}")
    config = params.config
    if batch.shape[1] > config.max_len:
        raise InvariantViolation(f"Sequence length {batch.shape[1]} exceeds max_len {config.max_len}")
    if batch.size and (batch.min() < 0 or batch.max() >= config.vocab_size):
        raise InvariantViolation(f"Token ids must lie in [0, {config.vocab_size})")
    return batch.astype(np.int64), single


def _forward(params: ModelParams, batch: np.ndarray):
    config, t = params.config, params.tensors
    T = batch.shape[1]
    x = t["tok_emb"][batch] + t["pos_emb"][:T]
    caches = []
    for layer in range(config.n_layers):
        p = f"blocks.{layer}."
        h1, c_ln1 = _layer_norm(x, t[p + "ln1.g"], t[p + "ln1.b"], config.ln_eps)
        a, c_attn = _attention(h1, t, p + "attn.", config)
        x = x + a
        h2, c_ln2 = _layer_norm(x, t[p + "ln2.g"], t[p + "ln2.b"], config.ln_eps)
        m, c_mlp = _mlp(h2, t, p + "mlp.")
        x = x + m
        caches.append((c_ln1, c_attn, c_ln2, c_mlp))
    hf, c_lnf = _layer_norm(x, t["ln_f.g"], t["ln_f.b"], config.ln_eps)
    logits = hf @ t["w_out"] + t["b_out"]
    return logits, (batch, caches, hf, c_lnf)


def forward(params: ModelParams, tokens) -> np.ndarray:
    """Per-position next-token logits, (T, k) for one sequence or (B, T, k) for a batch"""
    batch, single = _as_batch(params, tokens)
    logits, _ = _forward(params, batch)
    return logits[0] if single else logits


def backward(params: ModelParams, tokens, loss_fn: LossFn) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Exact gradients of loss_fn(forward(params, tokens)) for every tensor.

    loss_fn receives logits shaped like forward's output and returns the
    scalar loss together with its gradient with respect to those logits.
    """
    batch, single = _as_batch(params, tokens)
    config, t = params.config, params.tensors
    logits, (batch, caches, hf, c_lnf) = _forward(params, batch)

    loss, dlogits = loss_fn(logits[0] if single else logits)
    dlogits = np.asarray(dlogits, dtype=np.float64).reshape(logits.shape)

    grads: Dict[str, np.ndarray] = {}
    grads["w_out"] = np.einsum("btd,btk->dk", hf, dlogits)
    grads["b_out"] = dlogits.sum(axis=(0, 1))
    dx, grads["ln_f.g"], grads["ln_f.b"] = _layer_norm_backward(dlogits @ t["w_out"].T, c_lnf)

    for layer in reversed(range(config.n_layers)):
        p = f"blocks.{layer}."
        c_ln1, c_attn, c_ln2, c_mlp = caches[layer]
        dh2 = _mlp_backward(dx, c_mlp, t, p + "mlp.", grads)
        dres, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_backward(dh2, c_ln2)
        dx = dx + dres
        dh1 = _attention_backward(dx, c_attn, t, p + "attn.", grads)
        dres, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_backward(dh1, c_ln1)
        dx = dx + dres

    T = batch.shape[1]
    grads["tok_emb"] = np.zeros_like(t["tok_emb"])
    np.add.at(grads["tok_emb"], batch, dx)
    grads["pos_emb"] = np.zeros_like(t["pos_emb"])
    grads["pos_emb"][:T] = dx.sum(axis=0)

    return float(loss), {name: grads[name] for name in params.names()}


def predict_log_probs(params: ModelParams, sequences: np.ndarray, batch_size: int = 256, temperature: float = 1.0) -> np.ndarray:
    """Log-softmax of logits/temperature for every position, evaluated in batches"""
    sequences = np.asarray(sequences)
    out = np.empty(sequences.shape + (params.config.vocab_size,))
    for start in range(0, sequences.shape[0], batch_size):
        chunk = sequences[start:start + batch_size]
        out[start:start + batch_size] = log_softmax(forward(params, chunk) / temperature, axis=-1)
    return out


def save_checkpoint(path: Union[str, Path], params: ModelParams, state: Optional[AdamState] = None) -> str:
    """Write config, tensors and optional optimizer state to one archive"""
    arrays = {f"param/{name}": tensor for name, tensor in params.tensors.items()}
    header: Dict[str, object] = {"config": asdict(params.config), "checkpoint_id": params.checkpoint_id}
    if state is not None:
        arrays.update({f"adam_m/{name}": m for name, m in state.m.items()})
        arrays.update({f"adam_v/{name}": v for name, v in state.v.items()})
        header["optimizer"] = state.header()
    return write_archive(path, arrays, header)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelParams, Optional[AdamState]]:
    """Read a checkpoint written by save_checkpoint"""
    arrays, header = read_archive(path)
    config = ModelConfig(**header["config"])
    params = ModelParams(config, {
        name.split("/", 1)[1]: array for name, array in arrays.items() if name.startswith("param/")
    })
    params.validate()

    state = None
    if "optimizer" in header:
        state = AdamState.from_header(
            header["optimizer"],
            m={n.split("/", 1)[1]: a for n, a in arrays.items() if n.startswith("adam_m/")},
            v={n.split("/", 1)[1]: a for n, a in arrays.items() if n.startswith("adam_v/")},
        )
    return params, state
