"""Attentive CNN+LSTM: four LFLBs, one LSTM, attention pooling, dense softmax.

An LFLB (local feature learning block) is conv -> batchnorm -> ELU -> maxpool;
the forward pass evaluates it as conv -> batchnorm -> maxpool -> ELU, which is
the same function because ELU is monotone. Input spectrograms are [n_mels, frames]; the network sees them as NHWC images
with H = mel bands, W = time, C = 1.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import EMOTIONS
from .nn import (
    attention_pool_backward,
    attention_pool_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_softmax_xent,
    dense_softmax_xent_backward,
    elu_backward,
    elu_forward,
    lstm_backward,
    lstm_forward,
    maxpool_backward,
    maxpool_forward,
)

CHECKPOINT_FORMAT_VERSION = 1


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 64
    target_frames: int = 1280
    lflb_kernels: tuple = (64, 64, 128, 128)
    conv_kernel: int = 3
    pool_sizes: tuple = (2, 2, 4, 4)
    lstm_units: int = 128
    attention_units: int = 128
    classes: int = 4
    elu_alpha: float = 1.0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "lflb_kernels", tuple(int(k) for k in self.lflb_kernels))
        object.__setattr__(self, "pool_sizes", tuple(int(p) for p in self.pool_sizes))

    @property
    def pool_factor(self) -> int:
        return int(np.prod(self.pool_sizes))

    @property
    def seq_len(self) -> int:
        return self.target_frames // self.pool_factor

    @property
    def seq_features(self) -> int:
        return (self.n_mels // self.pool_factor) * self.lflb_kernels[-1]

    def validate(self) -> "ModelConfig":
        if len(self.lflb_kernels) != len(self.pool_sizes) or not self.lflb_kernels:
            raise ModelConfigError("lflb_kernels and pool_sizes must have the same non-zero length")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ModelConfigError(f"conv_kernel must be odd and positive, got {self.conv_kernel}")
        if self.classes != len(EMOTIONS):
            raise ModelConfigError(f"classes must be {len(EMOTIONS)}, got {self.classes}")
        f = self.pool_factor
        if self.n_mels <= 0 or self.n_mels % f:
            raise ModelConfigError(f"n_mels={self.n_mels} is not divisible by the pooling factor {f}")
        if self.target_frames <= 0 or self.target_frames % f:
            raise ModelConfigError(
                f"target_frames={self.target_frames} is not divisible by the pooling factor {f}"
            )
        for name in ("lstm_units", "attention_units"):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"{name} must be positive")
        return self

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def param_shapes(self) -> dict:
        shapes = {}
        cin, k = 1, self.conv_kernel
        for i, cout in enumerate(self.lflb_kernels):
            shapes[f"lflb{i}.kernel"] = (k, k, cin, cout)
            shapes[f"lflb{i}.bias"] = (cout,)
            shapes[f"lflb{i}.gamma"] = (cout,)
            shapes[f"lflb{i}.beta"] = (cout,)
            cin = cout
        U, A, D = self.lstm_units, self.attention_units, self.seq_features
        shapes["lstm.Wx"] = (D, 4 * U)
        shapes["lstm.Wh"] = (U, 4 * U)
        shapes["lstm.b"] = (4 * U,)
        shapes["attention.W"] = (U, A)
        shapes["attention.v"] = (A,)
        shapes["dense.W"] = (U, self.classes)
        shapes["dense.b"] = (self.classes,)
        return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)  # batchnorm running statistics

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.state.items()},
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.state.items()},
        )


def build(config: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Allocate and initialise every tensor. Deterministic per seed.

    Conv kernels: He-uniform on fan-in; LSTM/attention/dense weights: uniform
    with variance 1/fan_in; biases zero except the LSTM forget gate (1).
    """
    config.validate()
    rng = np.random.default_rng(seed)
    weights, state = {}, {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".kernel"):
            fan_in = shape[0] * shape[1] * shape[2]
            w = rng.uniform(-1, 1, shape) * np.sqrt(6.0 / fan_in)
        elif name.endswith(".gamma"):
            w = np.ones(shape)
        elif name.endswith((".bias", ".beta")) or name in ("lstm.b", "dense.b"):
            w = np.zeros(shape)
        else:
            w = rng.uniform(-1, 1, shape) * np.sqrt(3.0 / shape[0])
        weights[name] = w.astype(dtype)
    U = config.lstm_units
    weights["lstm.b"][U : 2 * U] = 1.0
    for i, cout in enumerate(config.lflb_kernels):
        state[f"lflb{i}.running_mean"] = np.zeros(cout, dtype=dtype)
        state[f"lflb{i}.running_var"] = np.ones(cout, dtype=dtype)
    return ModelParams(config, weights, state)


def _as_batch(x, config: ModelConfig, dtype):
    x = np.asarray(getattr(x, "values", x))
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (config.n_mels, config.target_frames):
        raise ValueError(
            f"expected spectrogram(s) shaped [{config.n_mels} x {config.target_frames}], "
            f"got {x.shape[-2:] if x.ndim >= 2 else x.shape}"
        )
    return np.ascontiguousarray(x[..., None], dtype=dtype), single


def forward(params: ModelParams, x, mode: str = "eval", labels=None, keep_cache: bool = True):
    """Run the network on one spectrogram [n_mels, frames] or a batch [N, n_mels, frames].

    Returns (probs, cache). ``cache["loss"]`` holds the mean cross-entropy when
    labels are given; ``cache["post_lstm"]`` and ``cache["post_attention"]`` hold
    the embeddings. Train mode updates the batchnorm running statistics.
    """
    cfg = params.config
    w = params.weights
    h, single = _as_batch(x, cfg, params.dtype)
    layer_caches = []
    for i in range(len(cfg.lflb_kernels)):
        h, c_conv = conv2d_forward(h, w[f"lflb{i}.kernel"], w[f"lflb{i}.bias"])
        h, c_bn = batchnorm_forward(
            h, w[f"lflb{i}.gamma"], w[f"lflb{i}.beta"],
            params.state[f"lflb{i}.running_mean"], params.state[f"lflb{i}.running_var"],
            mode=mode, momentum=cfg.bn_momentum, eps=cfg.bn_eps, overwrite_input=True,
        )
        # ELU is strictly increasing, so pooling first gives the same values and
        # argmax while evaluating the activation on 1/window of the elements
        h, c_pool = maxpool_forward(h, cfg.pool_sizes[i])
        h, c_elu = elu_forward(h, cfg.elu_alpha, overwrite_input=True)
        if keep_cache:
            layer_caches.append((c_conv, c_bn, c_pool, c_elu))
    N, Hf, Wf, C = h.shape
    # frequency rows fold into features: feature index = row * C + channel
    seq = np.ascontiguousarray(h.transpose(0, 2, 1, 3)).reshape(N, Wf, Hf * C)
    hidden, c_lstm = lstm_forward(seq, w["lstm.Wx"], w["lstm.Wh"], w["lstm.b"])
    context, att_weights, c_att = attention_pool_forward(hidden, w["attention.W"], w["attention.v"])
    probs, loss, c_dense = dense_softmax_xent(context, w["dense.W"], w["dense.b"], labels)
    cache = {
        "loss": loss,
        "cnn_output_shape": (N, Hf, Wf, C),
        "post_lstm": hidden,
        "post_attention": context,
        "attention_weights": att_weights,
        "single": single,
    }
    if keep_cache:
        cache["layers"] = (layer_caches, c_lstm, c_att, c_dense)
    return (probs[0] if single else probs), cache


def backward(params: ModelParams, cache) -> dict:
    """Gradients of the mean cross-entropy for every trainable tensor."""
    if cache.get("loss") is None or "layers" not in cache:
        raise ValueError("backward needs a forward pass run with labels and keep_cache=True")
    cfg = params.config
    layer_caches, c_lstm, c_att, c_dense = cache["layers"]
    grads = {}
    dctx, grads["dense.W"], grads["dense.b"] = dense_softmax_xent_backward(c_dense)
    dhidden, grads["attention.W"], grads["attention.v"] = attention_pool_backward(dctx, c_att)
    dseq, grads["lstm.Wx"], grads["lstm.Wh"], grads["lstm.b"] = lstm_backward(dhidden, c_lstm)
    N, Hf, Wf, C = cache["cnn_output_shape"]
    dh = np.ascontiguousarray(dseq.reshape(N, Wf, Hf, C).transpose(0, 2, 1, 3))
    for i in reversed(range(len(cfg.lflb_kernels))):
        c_conv, c_bn, c_pool, c_elu = layer_caches[i]
        dh = elu_backward(dh, c_elu, overwrite_grad=True)
        dh = maxpool_backward(dh, c_pool)
        dh, grads[f"lflb{i}.gamma"], grads[f"lflb{i}.beta"] = batchnorm_backward(
            dh, c_bn, overwrite_grad=True
        )
        dh, grads[f"lflb{i}.kernel"], grads[f"lflb{i}.bias"] = conv2d_backward(
            dh, c_conv, need_input_grad=i > 0
        )
    return grads


def loss_and_grads(params: ModelParams, x, labels, mode: str = "train"):
    probs, cache = forward(params, x, mode=mode, labels=labels)
    return cache["loss"], backward(params, cache), probs


def predict_proba(params: ModelParams, x, batch_size: int = 16) -> np.ndarray:
    """Eval-mode class probabilities for a batch, processed in chunks."""
    x = np.asarray(x)
    if x.ndim == 2:
        return forward(params, x, "eval", keep_cache=False)[0]
    out = [forward(params, x[s : s + batch_size], "eval", keep_cache=False)[0]
           for s in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


EMBED_STAGES = ("post_lstm", "post_attention")


def embed(params: ModelParams, x, stage: str):
    """Eval-mode representation at ``stage``.

    post_lstm: hidden sequence [T, U] (time-major; ``.ravel()`` gives the flat
    row-major vector). post_attention: context vector [U]. A batch input adds a
    leading axis.
    """
    if stage not in EMBED_STAGES:
        raise ValueError(f"unknown embedding stage {stage!r}; expected one of {EMBED_STAGES}")
    _, cache = forward(params, x, "eval", keep_cache=False)
    out = cache[stage]
    return out[0] if cache["single"] else out


# --- checkpoints ------------------------------------------------------------
# .npz with one array per tensor under "weights/<name>" and "state/<name>", plus
# "meta": JSON {format_version, architecture, model_config, dtype, extra}.


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": params.config.fingerprint(),
        "model_config": asdict(params.config),
        "dtype": str(params.dtype),
        "extra": extra or {},
    }
    arrays = {f"weights/{k}": v for k, v in params.weights.items()}
    arrays.update({f"state/{k}": v for k, v in params.state.items()})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
        config = ModelConfig(**meta["model_config"])
        if config.fingerprint() != meta["architecture"]:
            raise ValueError(f"{path}: architecture fingerprint does not match its config")
        weights = {k[len("weights/"):]: z[k] for k in z.files if k.startswith("weights/")}
        state = {k[len("state/"):]: z[k] for k in z.files if k.startswith("state/")}
    expected = config.param_shapes()
    for name, shape in expected.items():
        if name not in weights or weights[name].shape != tuple(shape):
            raise ValueError(f"{path}: tensor {name} missing or misshapen")
    return ModelParams(config, weights, state), meta
