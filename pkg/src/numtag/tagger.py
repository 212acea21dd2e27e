"""Bidirectional GRU sequence tagger written directly in numpy.

Architecture: embedding -> BiGRU -> BiGRU -> dropout -> dense -> softmax,
trained with sparse categorical cross-entropy and Adam.

GRU step (gates stored in z, r, h order)::

    z = sigmoid(x W_z + h_prev U_z + b_z)
    r = sigmoid(x W_r + h_prev U_r + b_r)
    h_cand = tanh(x W_h + (r * h_prev) U_h + b_h)
    h = (1 - z) * h_prev + z * h_cand

The backward direction runs the same recurrence over the reversed sequence
and its outputs are re-reversed before being concatenated with the forward
outputs, so position t of a layer output always describes input position t.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

GATES = ("z", "r", "h")
DIRECTIONS = ("fw", "bw")
LAYERS = ("gru1", "gru2")
LOG_CLAMP = 1e-12


class IndexOutOfVocab(ValueError):
    pass


class StaleCache(RuntimeError):
    pass


class ShapeMismatch(ValueError):
    pass


class EmptySplit(ValueError):
    pass


class CorruptCheckpoint(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    seq_len: int = 50
    embed_dim: int = 128
    hidden_dim: int = 128
    num_classes: int = 3
    dropout: float = 0.5
    dtype: str = "float64"
    mask_padding: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "seq_len", "embed_dim", "hidden_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes != 3:
            raise ValueError("the tag set is none/unit/metric, so num_classes must be 3")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable array, in checkpoint order."""
    H = config.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {"embedding": (config.vocab_size, config.embed_dim)}
    for layer, d_in in zip(LAYERS, (config.embed_dim, 2 * H)):
        for d in DIRECTIONS:
            for g in GATES:
                shapes[f"{layer}.{d}.W_{g}"] = (d_in, H)
                shapes[f"{layer}.{d}.U_{g}"] = (H, H)
                shapes[f"{layer}.{d}.b_{g}"] = (H,)
    shapes["dense.W"] = (2 * H, config.num_classes)
    shapes["dense.b"] = (config.num_classes,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """V*E + 6*(E*H + H*H + H) + 6*(2H*H + H*H + H) + 2H*C + C."""
    V, E, H, C = config.vocab_size, config.embed_dim, config.hidden_dim, config.num_classes
    return V * E + 6 * (E * H + H * H + H) + 6 * (2 * H * H + H * H + H) + 2 * H * C + C


@dataclass
class TaggerModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab_hash: str = ""
    version: int = 0

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if list(self.params) != list(shapes):
            raise ConfigMismatch("parameter names do not match the config")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ConfigMismatch(f"{name}: shape {self.params[name].shape} != {shape}")
        n = sum(p.size for p in self.params.values())
        if n != param_count(self.config):
            raise ConfigMismatch(f"parameter count {n} != {param_count(self.config)}")

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def init_model(config: ModelConfig, seed: int = 0, vocab_hash: str = "") -> TaggerModel:
    """Glorot-uniform weights, zero biases, U(-0.05, 0.05) embeddings."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    params = {}
    for name, shape in param_shapes(config).items():
        if name == "embedding":
            arr = rng.uniform(-0.05, 0.05, shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            s = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-s, s, shape)
        params[name] = arr.astype(dtype)
    return TaggerModel(config, params, vocab_hash)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _stacked(params, prefix):
    W = np.concatenate([params[f"{prefix}.W_{g}"] for g in GATES], axis=1)
    U = np.concatenate([params[f"{prefix}.U_{g}"] for g in GATES], axis=1)
    b = np.concatenate([params[f"{prefix}.b_{g}"] for g in GATES])
    return W, U, b


def gru_direction(x, params, prefix, reverse=False, h0=None):
    """Run one GRU direction over ``x`` of shape (B, T, D); returns (B, T, H).

    The initial state is zero unless ``h0`` (B, H) is given; the backward
    pass assumes a zero (constant) initial state.
    """
    W, U, b = _stacked(params, prefix)
    B, T, _ = x.shape
    H = U.shape[0]
    xs = x @ W + b
    U_zr, U_h = U[:, : 2 * H], U[:, 2 * H:]
    Z = np.empty((B, T, H), dtype=x.dtype)
    R = np.empty_like(Z)
    C = np.empty_like(Z)
    HP = np.empty_like(Z)
    HS = np.empty_like(Z)
    h = np.zeros((B, H), dtype=x.dtype) if h0 is None else np.array(h0, dtype=x.dtype).reshape(B, H)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        xt = xs[:, t]
        zr = sigmoid(xt[:, : 2 * H] + h @ U_zr)
        z, r = zr[:, :H], zr[:, H:]
        c = np.tanh(xt[:, 2 * H:] + (r * h) @ U_h)
        HP[:, t] = h
        h = h + z * (c - h)
        Z[:, t], R[:, t], C[:, t], HS[:, t] = z, r, c, h
    cache = {"x": x, "Z": Z, "R": R, "C": C, "HP": HP, "W": W, "U": U, "reverse": reverse}
    return HS, cache


def gru_direction_backward(dHS, cache, prefix):
    """Gradients for one direction given dL/d(outputs); returns (dx, grads)."""
    x, Z, R, C, HP, W, U = (cache[k] for k in ("x", "Z", "R", "C", "HP", "W", "U"))
    B, T, H = Z.shape
    U_zr_T, U_h_T = U[:, : 2 * H].T, U[:, 2 * H:].T
    DA = np.empty((B, T, 3 * H), dtype=x.dtype)
    dh_next = np.zeros((B, H), dtype=x.dtype)
    steps = range(T) if cache["reverse"] else range(T - 1, -1, -1)
    for t in steps:
        dh = dHS[:, t] + dh_next
        z, r, c, hp = Z[:, t], R[:, t], C[:, t], HP[:, t]
        da_h = dh * z * (1.0 - c * c)
        d_rh = da_h @ U_h_T
        da_z = dh * (c - hp) * z * (1.0 - z)
        da_r = d_rh * hp * r * (1.0 - r)
        DA[:, t, :H] = da_z
        DA[:, t, H: 2 * H] = da_r
        DA[:, t, 2 * H:] = da_h
        dh_next = dh * (1.0 - z) + d_rh * r + DA[:, t, : 2 * H] @ U_zr_T
    D = x.shape[-1]
    flat_da = DA.reshape(-1, 3 * H)
    dW = x.reshape(-1, D).T @ flat_da
    db = flat_da.sum(axis=0)
    dU_zr = HP.reshape(-1, H).T @ flat_da[:, : 2 * H]
    dU_h = (R * HP).reshape(-1, H).T @ flat_da[:, 2 * H:]
    dx = DA @ W.T
    grads = {}
    for i, g in enumerate(GATES):
        grads[f"{prefix}.W_{g}"] = dW[:, i * H:(i + 1) * H]
        grads[f"{prefix}.b_{g}"] = db[i * H:(i + 1) * H]
    grads[f"{prefix}.U_z"] = dU_zr[:, :H]
    grads[f"{prefix}.U_r"] = dU_zr[:, H:]
    grads[f"{prefix}.U_h"] = dU_h
    return dx, grads


def bigru_layer(x, params, layer):
    """Both directions of one layer; output (B, T, 2H) is [forward, backward]."""
    fw, cache_fw = gru_direction(x, params, f"{layer}.fw")
    bw, cache_bw = gru_direction(x, params, f"{layer}.bw", reverse=True)
    return np.concatenate([fw, bw], axis=-1), (cache_fw, cache_bw)


def bigru_layer_backward(dout, caches, layer):
    H = dout.shape[-1] // 2
    dx_fw, g_fw = gru_direction_backward(dout[..., :H], caches[0], f"{layer}.fw")
    dx_bw, g_bw = gru_direction_backward(dout[..., H:], caches[1], f"{layer}.bw")
    return dx_fw + dx_bw, {**g_fw, **g_bw}


def forward(model: TaggerModel, indices, train_mode: bool = False, rng=None, dropout_mask=None):
    """Tag probabilities of shape (T, C) or (B, T, C), plus the backward cache.

    In ``train_mode`` a dropout mask is drawn from ``rng`` (or ``dropout_mask``
    is reused) with inverted scaling, so inference needs no rescale.
    """
    params, cfg = model.params, model.config
    idx = np.asarray(indices)
    single = idx.ndim == 1
    if single:
        idx = idx[None, :]
    if idx.size and (idx.min() < 0 or idx.max() >= cfg.vocab_size):
        raise IndexOutOfVocab(f"indices must lie in [0, {cfg.vocab_size})")
    x0 = params["embedding"][idx]
    out1, c1 = bigru_layer(x0, params, "gru1")
    out2, c2 = bigru_layer(out1, params, "gru2")
    mask = None
    if train_mode and cfg.dropout > 0:
        if dropout_mask is None:
            if rng is None:
                raise ValueError("train_mode with dropout needs an rng")
            keep = 1.0 - cfg.dropout
            dropout_mask = ((rng.random(out2.shape) < keep) / keep).astype(out2.dtype)
        mask = np.asarray(dropout_mask).reshape(out2.shape)
        dropped = out2 * mask
    else:
        dropped = out2
    p = softmax(dropped @ params["dense.W"] + params["dense.b"])
    cache = {
        "model_id": id(model),
        "version": model.version,
        "idx": idx,
        "single": single,
        "caches": (c1, c2),
        "out1": out1,
        "dropped": dropped,
        "mask": mask,
        "p": p,
    }
    return (p[0] if single else p), cache


def predict_proba(model: TaggerModel, indices, batch_size: int = 256) -> np.ndarray:
    """Inference over many sequences in fixed-size chunks."""
    idx = np.asarray(indices)
    if idx.ndim == 1:
        return forward(model, idx)[0]
    out = [forward(model, idx[i:i + batch_size])[0] for i in range(0, len(idx), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, idx.shape[1], model.config.num_classes))


def _position_weights(labels, mask_padding, pad_index_mask=None):
    if mask_padding and pad_index_mask is not None:
        w = (~pad_index_mask).astype(np.float64)
        total = w.sum()
        return w / total if total else w
    return np.full(labels.shape, 1.0 / labels.size)


def loss(p, labels, weights=None) -> float:
    """Mean of -log p[i, label_i] over positions (and batch), p clamped at 1e-12."""
    p = np.asarray(p)
    labels = np.asarray(labels)
    picked = np.take_along_axis(p, labels[..., None], axis=-1)[..., 0]
    nll = -np.log(np.maximum(picked, LOG_CLAMP))
    if weights is None:
        return float(nll.mean())
    return float((nll * weights).sum())


def backward(model: TaggerModel, cache: dict, labels) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`loss` for the cached forward pass."""
    if cache["model_id"] != id(model) or cache["version"] != model.version:
        raise StaleCache("parameters changed since this forward pass")
    params, cfg = model.params, model.config
    y = np.asarray(labels)
    if y.ndim == 1:
        y = y[None, :]
    p = cache["p"]
    idx = cache["idx"]
    weights = _position_weights(y, cfg.mask_padding, idx == 0)
    dlogits = p.copy()
    np.put_along_axis(dlogits, y[..., None], np.take_along_axis(p, y[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= weights[..., None].astype(p.dtype)

    C = cfg.num_classes
    dropped = cache["dropped"]
    grads = {
        "dense.W": dropped.reshape(-1, dropped.shape[-1]).T @ dlogits.reshape(-1, C),
        "dense.b": dlogits.reshape(-1, C).sum(axis=0),
    }
    dout2 = dlogits @ params["dense.W"].T
    if cache["mask"] is not None:
        dout2 = dout2 * cache["mask"]
    c1, c2 = cache["caches"]
    dout1, g2 = bigru_layer_backward(dout2, c2, "gru2")
    dx0, g1 = bigru_layer_backward(dout1, c1, "gru1")
    dE = np.zeros_like(params["embedding"])
    np.add.at(dE, idx.reshape(-1), dx0.reshape(-1, dx0.shape[-1]))
    grads.update(g1)
    grads.update(g2)
    grads["embedding"] = dE
    return {name: np.ascontiguousarray(grads[name]) for name in params}


def batch_loss(model: TaggerModel, p, indices, labels) -> float:
    y = np.asarray(labels)
    idx = np.asarray(indices)
    if y.ndim == 1:
        y, idx = y[None, :], idx[None, :]
    w = _position_weights(y, model.config.mask_padding, idx == 0)
    p = np.asarray(p)
    if p.ndim == 2:
        p = p[None]
    return loss(p, y, w)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place."""
    if set(params) != set(grads):
        raise ShapeMismatch("parameter and gradient names differ")
    for k in params:
        if params[k].shape != np.shape(grads[k]):
            raise ShapeMismatch(f"{k}: param {params[k].shape} vs grad {np.shape(grads[k])}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)


def _epoch_metrics(model, x, y, batch_size=256):
    from .metrics import soft_dice_batch

    p = predict_proba(model, x, batch_size)
    dice = float(soft_dice_batch(p, y)[0].mean()) if len(x) else float("nan")
    return batch_loss(model, p, x, y), dice


def train(
    model: TaggerModel,
    split,
    epochs: int = 20,
    batch_size: int = 32,
    seed: int = 0,
    lr: float = 0.003,
    val_fraction: float = 0.0,
    validate_on_test: bool = False,
    log=None,
    stop_dice: float | None = None,
) -> list[dict]:
    """Train in place; returns one history record per epoch.

    Shuffling, dropout masks and the optional validation holdout each draw
    from their own stream derived from ``seed``. The last partial batch is
    kept and the gradient is the mean over the examples actually in it.
    With ``stop_dice`` set, training ends after the first epoch whose
    training dice reaches it.
    """
    from .dataset import as_arrays

    if not split.train:
        raise EmptySplit("training split is empty")
    x, y = as_arrays(split.train)
    shuffle_ss, dropout_ss, holdout_ss = np.random.SeedSequence(seed).spawn(3)
    xv = yv = None
    if val_fraction > 0:
        order = np.random.default_rng(holdout_ss).permutation(len(x))
        n_val = max(1, int(round(val_fraction * len(x))))
        xv, yv = x[order[:n_val]], y[order[:n_val]]
        x, y = x[order[n_val:]], y[order[n_val:]]
    elif validate_on_test and split.test:
        xv, yv = as_arrays(split.test)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    state = AdamState(lr=lr)
    history = []
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(x))
        for i in range(0, len(x), batch_size):
            b = order[i:i + batch_size]
            _, cache = forward(model, x[b], train_mode=True, rng=dropout_rng)
            grads = backward(model, cache, y[b])
            adam_step(model.params, grads, state)
            model.version += 1
        rec = {"epoch": epoch}
        rec["train_loss"], rec["train_dice"] = _epoch_metrics(model, x, y)
        if xv is not None:
            rec["val_loss"], rec["val_dice"] = _epoch_metrics(model, xv, yv)
        history.append(rec)
        if log is not None:
            log(rec)
        if stop_dice is not None and rec["train_dice"] >= stop_dice:
            break
    return history


_MAGIC = b"NUMTAGCK"
FORMAT_VERSION = 1


def save_checkpoint(model: TaggerModel, path: str | Path) -> None:
    """Magic, manifest length (u64 LE), JSON manifest, then raw LE arrays."""
    arrays = []
    entries = []
    for name, arr in model.params.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        arrays.append(le.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
    payload = b"".join(arrays)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "vocab_hash": model.vocab_hash,
        "params": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(_MAGIC + struct.pack("<Q", len(head)) + head + payload)


def load_checkpoint(path: str | Path, vocab_hash: str | None = None) -> TaggerModel:
    """Inverse of :func:`save_checkpoint`; checks integrity and, if given, the vocabulary hash."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    (n_head,) = struct.unpack("<Q", data[8:16])
    if 16 + n_head > len(data):
        raise CorruptCheckpoint(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[16:16 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable manifest") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {manifest.get('format_version')}")
    payload = data[16 + n_head:]
    if len(payload) != manifest["payload_bytes"] or hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CorruptCheckpoint(f"{path}: payload truncated or damaged")
    if vocab_hash is not None and manifest["vocab_hash"] != vocab_hash:
        raise ConfigMismatch("checkpoint was trained with a different vocabulary")
    config = ModelConfig(**manifest["config"])
    params = {}
    pos = 0
    for entry in manifest["params"]:
        dt = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"], dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(payload[pos:pos + n], dtype=dt).reshape(entry["shape"])
        params[entry["name"]] = arr.astype(dt.newbyteorder("="))
        pos += n
    return TaggerModel(config, params, manifest["vocab_hash"])
