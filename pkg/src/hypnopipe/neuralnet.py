"""Toy-scale sleep stage classifier with the published training recipe.

Topology: one small 1-D conv sub-network per modality (EEG, EOG, EMG), whose
pooled features are concatenated and fed to either a fully connected layer
(FF mode) or an LSTM cell carrying state across consecutive windows (LSTM
mode), ending in a 5-way softmax.  Gradients are computed analytically by
hand and verified against central finite differences.

Training constants: cross-entropy (as printed, with the (1-y)log(1-p) term)
plus L2 at lambda=1e-5, SGD with momentum 0.9, learning rate 0.005 decaying
as exp(-t/12000), init N(0, 0.01), dropout keep 0.5 on LSTM outputs.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DatasetTooSmall, NaNGradient, ShapeMismatch
from .encoding import EncodedRecording

# Training constants
WEIGHT_DECAY = 0.00001
MOMENTUM = 0.9
LEARNING_RATE_0 = 0.005
LR_TAU = 12000.0
DROPOUT_KEEP = 0.5
INIT_VARIANCE = 0.01
BATCH_SIZE = 64
VALIDATE_EVERY = 50
VALIDATION_FRACTION = 0.10
EARLY_STOP_PATIENCE = 3
BLOCK_S = 300              # recordings shuffle in 5 minute blocks
ENSEMBLE_SIZE = 16
ENSEMBLE_SCALE = (0.5, 1.5)

MODALITIES = ("EEG", "EOG", "EMG")
KERNEL = 3
LOG_EPS = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    mode: str = "LSTM"                    # "FF" or "LSTM"
    complexity: str = "low"               # "low" or "high"
    segment_s: int = 5                    # 5 or 15
    encoding: str = "cc"                  # "cc" (2 conv layers) or "octave" (3)
    modality_shapes: dict = field(default_factory=lambda: {
        "EEG": (1, 201), "EOG": (3, 401), "EMG": (1, 41)})
    conv_features: dict = field(default_factory=dict)   # modality -> per-layer counts
    hidden: int = 16
    dropout_keep: float = DROPOUT_KEEP
    loss_kind: str = "binary"             # Eq-as-printed; "categorical" optional
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("FF", "LSTM"):
            raise ValueError("mode must be FF or LSTM")
        if 30 % self.segment_s != 0:
            raise ValueError("segment_s must divide 30")
        if self.hidden < 1:
            raise ValueError("hidden size must be > 0")
        if not self.conv_features:
            depth = 3 if self.encoding == "octave" else 2
            base = 8 if self.complexity == "high" else 4
            object.__setattr__(self, "conv_features", {
                m: [base * (2 ** i) for i in range(depth)] for m in MODALITIES})
        for counts in self.conv_features.values():
            if any(c < 1 for c in counts):
                raise ValueError("conv feature counts must be > 0")

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode, "complexity": self.complexity,
            "segment_s": self.segment_s, "encoding": self.encoding,
            "modality_shapes": {m: list(v) for m, v in self.modality_shapes.items()},
            "conv_features": self.conv_features, "hidden": self.hidden,
            "dropout_keep": self.dropout_keep, "loss_kind": self.loss_kind,
            "seed": self.seed,
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        d = json.loads(text)
        d["modality_shapes"] = {m: tuple(v) for m, v in d["modality_shapes"].items()}
        return cls(**d)


NORM_PREFIX = "norm/"


def init_params(config: NetworkConfig) -> dict[str, np.ndarray]:
    """All trainable parameters drawn i.i.d. from N(0, INIT_VARIANCE)."""
    rng = np.random.default_rng(config.seed)
    std = float(np.sqrt(INIT_VARIANCE))
    params: dict[str, np.ndarray] = {}

    def draw(name, shape):
        # biases start at zero so no ReLU unit is dead before training
        if name.endswith("/b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, std, size=shape)

    feat_total = 0
    for m in MODALITIES:
        c_in, _ = config.modality_shapes[m]
        for i, f in enumerate(config.conv_features[m]):
            draw(f"conv{i}/{m}/w", (f, c_in, KERNEL))
            draw(f"conv{i}/{m}/b", (f,))
            c_in = f
        feat_total += c_in
        params[f"{NORM_PREFIX}{m}/mean"] = np.zeros((config.modality_shapes[m][0], 1))
        params[f"{NORM_PREFIX}{m}/std"] = np.ones((config.modality_shapes[m][0], 1))
    h = config.hidden
    if config.mode == "FF":
        draw("fc1/w", (h, feat_total))
        draw("fc1/b", (h,))
    else:
        draw("lstm/wx", (4 * h, feat_total))
        draw("lstm/wh", (4 * h, h))
        draw("lstm/b", (4 * h,))
    draw("out/w", (5, h))
    draw("out/b", (5,))
    return params


def trainable_names(params: dict[str, np.ndarray]) -> list[str]:
    return sorted(n for n in params if not n.startswith(NORM_PREFIX))


def zero_params(config: NetworkConfig) -> dict[str, np.ndarray]:
    p = init_params(config)
    for n in trainable_names(p):
        p[n] = np.zeros_like(p[n])
    return p


# ---------------------------------------------------------------- layers

def _conv1d(x, w, b):
    # x (B,c,L), w (f,c,k) -> (B,f,L-k+1)
    xs = sliding_window_view(x, KERNEL, axis=2)       # (B,c,L_out,k)
    return np.einsum("bclk,fck->bfl", xs, w, optimize=True) + b[None, :, None]


def _conv1d_back(x, w, dy):
    xs = sliding_window_view(x, KERNEL, axis=2)
    dw = np.einsum("bclk,bfl->fck", xs, dy, optimize=True)
    db = dy.sum(axis=(0, 2))
    dx = np.zeros_like(x)
    l_out = dy.shape[2]
    for dk in range(KERNEL):
        dx[:, :, dk:dk + l_out] += np.einsum("fc,bfl->bcl", w[:, :, dk], dy,
                                             optimize=True)
    return dx, dw, db


def _meanpool2(x):
    l_out = x.shape[2] // 2
    return x[:, :, :2 * l_out].reshape(x.shape[0], x.shape[1], l_out, 2).mean(axis=3)


def _meanpool2_back(x_shape, dy):
    dx = np.zeros(x_shape)
    l_out = dy.shape[2]
    dx[:, :, :2 * l_out:2] = dy / 2.0
    dx[:, :, 1:2 * l_out:2] = dy / 2.0
    return dx


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _subnet_forward(params, x, modality, config):
    """Conv stack for one modality; returns pooled features and a cache."""
    c, L = config.modality_shapes[modality]
    if x.ndim != 3 or x.shape[1:] != (c, L):
        raise ShapeMismatch(f"{modality}: expected (B,{c},{L}), got {x.shape}")
    mu = params[f"{NORM_PREFIX}{modality}/mean"]
    sd = params[f"{NORM_PREFIX}{modality}/std"]
    h = (x - mu[None]) / sd[None]
    cache = {"inputs": [], "pre": [], "pooled_from": []}
    n_layers = len(config.conv_features[modality])
    for i in range(n_layers):
        w = params[f"conv{i}/{modality}/w"]
        b = params[f"conv{i}/{modality}/b"]
        cache["inputs"].append(h)
        pre = _conv1d(h, w, b)
        cache["pre"].append(pre)
        h = np.maximum(pre, 0.0)
        if i < n_layers - 1:
            cache["pooled_from"].append(h.shape)
            h = _meanpool2(h)
        else:
            cache["pooled_from"].append(None)
            cache["gap_len"] = h.shape[2]
            h = h.mean(axis=2)
    return h, cache


def _subnet_backward(params, cache, dfeat, modality, config, grads):
    n_layers = len(config.conv_features[modality])
    gap_len = cache["gap_len"]
    dh = np.repeat(dfeat[:, :, None], gap_len, axis=2) / gap_len
    for i in reversed(range(n_layers)):
        if cache["pooled_from"][i] is not None:
            dh = _meanpool2_back(cache["pooled_from"][i], dh)
        dpre = dh * (cache["pre"][i] > 0)
        dx, dw, db = _conv1d_back(cache["inputs"][i],
                                  params[f"conv{i}/{modality}/w"], dpre)
        grads[f"conv{i}/{modality}/w"] += dw
        grads[f"conv{i}/{modality}/b"] += db
        dh = dx
    # input standardization is an affine map with frozen stats; no grads kept


def forward(params, batch, config: NetworkConfig, train_mode: bool = False,
            rng: np.random.Generator | None = None, state0=None):
    """Probabilities for a batch of windows.

    ``batch`` maps modality name to an array (B, channels, length).  FF mode
    treats the B windows independently; LSTM mode consumes them as a temporal
    sequence, optionally continuing from ``state0`` = (h, c).  Returns
    (probs (B,5), cache).
    """
    feats = []
    caches = {}
    for m in MODALITIES:
        f, c = _subnet_forward(params, np.asarray(batch[m], dtype=float), m, config)
        feats.append(f)
        caches[m] = c
    z = np.concatenate(feats, axis=1)          # (B, F)
    cache = {"subnets": caches, "z": z, "feat_splits":
             np.cumsum([f.shape[1] for f in feats])[:-1]}
    B = z.shape[0]
    H = config.hidden
    if config.mode == "FF":
        pre = z @ params["fc1/w"].T + params["fc1/b"]
        h = np.maximum(pre, 0.0)
        cache["fc1_pre"] = pre
        cache["h"] = h
    else:
        wx, wh, b = params["lstm/wx"], params["lstm/wh"], params["lstm/b"]
        h_prev = np.zeros(H) if state0 is None else state0[0]
        c_prev = np.zeros(H) if state0 is None else state0[1]
        hs = np.zeros((B, H))
        cs = np.zeros((B, H))
        gates_c = np.zeros((B, 4 * H))
        h_prevs = np.zeros((B, H))
        c_prevs = np.zeros((B, H))
        for t in range(B):
            g = wx @ z[t] + wh @ h_prev + b
            i_g = _sigmoid(g[:H])
            f_g = _sigmoid(g[H:2 * H])
            g_g = np.tanh(g[2 * H:3 * H])
            o_g = _sigmoid(g[3 * H:])
            c_t = f_g * c_prev + i_g * g_g
            h_t = o_g * np.tanh(c_t)
            gates_c[t] = np.concatenate([i_g, f_g, g_g, o_g])
            h_prevs[t], c_prevs[t] = h_prev, c_prev
            hs[t], cs[t] = h_t, c_t
            h_prev, c_prev = h_t, c_t
        cache.update(hs=hs, cs=cs, gates=gates_c, h_prevs=h_prevs, c_prevs=c_prevs)
        cache["state"] = (h_prev.copy(), c_prev.copy())
        h = hs
        if train_mode:
            if rng is None:
                rng = np.random.default_rng(config.seed)
            mask = (rng.random(h.shape) < config.dropout_keep) / config.dropout_keep
            cache["dropout_mask"] = mask
            h = h * mask
        cache["h"] = h
    logits = h @ params["out/w"].T + params["out/b"]
    probs = _softmax(logits)
    cache["probs"] = probs
    return probs, cache


def loss(pred_probs, one_hot, params=None, lam: float = WEIGHT_DECAY,
         kind: str = "binary") -> float:
    """Mean cross-entropy (as printed, with the complement term) + L2."""
    p = np.clip(pred_probs, LOG_EPS, 1.0 - LOG_EPS)
    y = np.asarray(one_hot, dtype=float)
    n = p.shape[0]
    if kind == "binary":
        data = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum() / n
    else:
        data = -(y * np.log(p)).sum() / n
    reg = 0.0
    if params is not None and lam > 0:
        reg = lam * sum(float((params[k] ** 2).sum()) for k in trainable_names(params))
    return float(data + reg)


def _dlogits(probs, one_hot, kind):
    n = probs.shape[0]
    if kind == "categorical":
        return (probs - one_hot) / n
    p = np.clip(probs, LOG_EPS, 1.0 - LOG_EPS)
    inside = (probs > LOG_EPS) & (probs < 1.0 - LOG_EPS)
    dp = -(one_hot / p - (1.0 - one_hot) / (1.0 - p)) / n
    dp = dp * inside
    # softmax jacobian: dL/dlogit_i = p_i * (dp_i - sum_j dp_j p_j)
    dot = (dp * probs).sum(axis=1, keepdims=True)
    return probs * (dp - dot)


def loss_and_grads(params, batch, one_hot, config: NetworkConfig,
                   lam: float = WEIGHT_DECAY, train_mode: bool = False,
                   rng=None, state0=None):
    """Loss value, analytic gradients, and (for LSTM) the final state."""
    probs, cache = forward(params, batch, config, train_mode=train_mode,
                           rng=rng, state0=state0)
    value = loss(probs, one_hot, params, lam, config.loss_kind)
    grads = {n: np.zeros_like(params[n]) for n in trainable_names(params)}
    dlog = _dlogits(probs, np.asarray(one_hot, dtype=float), config.loss_kind)

    h = cache["h"]
    grads["out/w"] += dlog.T @ h
    grads["out/b"] += dlog.sum(axis=0)
    dh = dlog @ params["out/w"]
    z = cache["z"]
    H = config.hidden
    if config.mode == "FF":
        dpre = dh * (cache["fc1_pre"] > 0)
        grads["fc1/w"] += dpre.T @ z
        grads["fc1/b"] += dpre.sum(axis=0)
        dz = dpre @ params["fc1/w"]
    else:
        if "dropout_mask" in cache:
            dh = dh * cache["dropout_mask"]
        wx, wh = params["lstm/wx"], params["lstm/wh"]
        B = z.shape[0]
        dz = np.zeros_like(z)
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in reversed(range(B)):
            dht = dh[t] + dh_next
            i_g = cache["gates"][t, :H]
            f_g = cache["gates"][t, H:2 * H]
            g_g = cache["gates"][t, 2 * H:3 * H]
            o_g = cache["gates"][t, 3 * H:]
            c_t = cache["cs"][t]
            tc = np.tanh(c_t)
            do = dht * tc
            dc = dht * o_g * (1 - tc ** 2) + dc_next
            di = dc * g_g
            df = dc * cache["c_prevs"][t]
            dg = dc * i_g
            dgi = di * i_g * (1 - i_g)
            dgf = df * f_g * (1 - f_g)
            dgg = dg * (1 - g_g ** 2)
            dgo = do * o_g * (1 - o_g)
            dgates = np.concatenate([dgi, dgf, dgg, dgo])
            grads["lstm/wx"] += np.outer(dgates, z[t])
            grads["lstm/wh"] += np.outer(dgates, cache["h_prevs"][t])
            grads["lstm/b"] += dgates
            dz[t] = wx.T @ dgates
            dh_next = wh.T @ dgates
            dc_next = dc * f_g
    splits = np.split(dz, cache["feat_splits"], axis=1)
    for m, dfeat in zip(MODALITIES, splits):
        _subnet_backward(params, cache["subnets"][m], dfeat, m, config, grads)
    if lam > 0:
        for n in grads:
            grads[n] += 2.0 * lam * params[n]
    return value, grads, cache.get("state")


@dataclass
class TrainState:
    velocity: dict
    t: int = 0
    eta0: float = LEARNING_RATE_0
    tau: float = LR_TAU
    alpha: float = MOMENTUM
    lam: float = WEIGHT_DECAY

    @classmethod
    def fresh(cls, params) -> "TrainState":
        return cls(velocity={n: np.zeros_like(params[n])
                             for n in trainable_names(params)})

    def learning_rate(self) -> float:
        return self.eta0 * float(np.exp(-self.t / self.tau))


def sgd_momentum_step(params, grads, state: TrainState):
    """w <- w + eta*v with v <- alpha*v - grad; eta = eta0*exp(-t/tau)."""
    eta = state.learning_rate()
    for n in state.velocity:
        g = grads[n]
        if not np.all(np.isfinite(g)):
            raise NaNGradient(f"non-finite gradient in {n} at step {state.t}")
        state.velocity[n] = state.alpha * state.velocity[n] - g
        params[n] = params[n] + eta * state.velocity[n]
    state.t += 1
    return params, state


def grad_check(params, batch, one_hot, config: NetworkConfig,
               n_samples: int = 64, h: float = 1e-4, seed: int = 0) -> float:
    """Max relative error of analytic vs central finite-difference gradients."""
    _, grads, _ = loss_and_grads(params, batch, one_hot, config,
                                 lam=WEIGHT_DECAY, train_mode=False)
    rng = np.random.default_rng(seed)
    names = trainable_names(params)
    sizes = np.array([params[n].size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(cum, flat, side="right"))
        offset = int(flat - (cum[k - 1] if k > 0 else 0))
        name = names[k]
        idx = np.unravel_index(offset, params[name].shape)
        orig = params[name][idx]
        params[name][idx] = orig + h
        lp = _loss_only(params, batch, one_hot, config)
        params[name][idx] = orig - h
        lm = _loss_only(params, batch, one_hot, config)
        params[name][idx] = orig
        fd = (lp - lm) / (2 * h)
        an = grads[name][idx]
        denom = max(abs(fd) + abs(an), 1e-8)
        err = abs(fd - an) / denom
        if abs(fd) < 1e-10 and abs(an) < 1e-10:
            err = 0.0
        worst = max(worst, err)
    return worst


def _loss_only(params, batch, one_hot, config):
    probs, _ = forward(params, batch, config, train_mode=False)
    return loss(probs, one_hot, params, WEIGHT_DECAY, config.loss_kind)


def make_ensemble(template: NetworkConfig, n: int = ENSEMBLE_SIZE,
                  seed: int = 0) -> list[NetworkConfig]:
    """n configs with every hidden size scaled independently by U(0.5, 1.5)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = ENSEMBLE_SCALE
    out = []
    for j in range(n):
        conv = {m: [max(1, round(c * rng.uniform(lo, hi))) for c in counts]
                for m, counts in template.conv_features.items()}
        hidden = max(1, round(template.hidden * rng.uniform(lo, hi)))
        out.append(replace(template, conv_features=conv, hidden=hidden,
                           seed=template.seed + j + 1))
    return out


# ---------------------------------------------------------------- training

def _blocks(recording_windows, recording_labels, segment_s):
    """Split one recording into 5-minute blocks of (windows, labels)."""
    per_block = max(1, BLOCK_S // segment_s)
    blocks = []
    n = len(recording_labels)
    for s in range(0, n, per_block):
        idx = list(range(s, min(s + per_block, n)))
        blocks.append(([recording_windows[i] for i in idx],
                       [recording_labels[i] for i in idx]))
    return blocks


def _stack(windows):
    return {m: np.stack([w[m] for w in windows]) for m in MODALITIES}


def _one_hot(labels):
    y = np.zeros((len(labels), 5))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def fit_standardization(params, dataset, config):
    """Per-channel mean/std over the training windows, stored in params."""
    for m in MODALITIES:
        xs = np.concatenate([np.stack([w[m] for w in rec_w])
                             for rec_w, _ in dataset], axis=0)
        mu = xs.mean(axis=(0, 2), keepdims=False)[:, None]
        sd = xs.std(axis=(0, 2), keepdims=False)[:, None]
        sd[sd < 1e-8] = 1.0
        params[f"{NORM_PREFIX}{m}/mean"] = mu
        params[f"{NORM_PREFIX}{m}/std"] = sd
    return params


def _accuracy(params, blocks, config):
    correct = 0
    total = 0
    for windows, labels in blocks:
        probs, _ = forward(params, _stack(windows), config, train_mode=False)
        correct += int((probs.argmax(axis=1) == np.asarray(labels)).sum())
        total += len(labels)
    return correct / total if total else 0.0


def train(dataset, config: NetworkConfig, max_batches: int = 4000):
    """Train on a list of recordings, each (list of windows, list of labels).

    Recordings are cut into 5-minute blocks and shuffled across recordings;
    10% of blocks are held out for validation, evaluated every 50 batches,
    with early stopping after 3 consecutive non-improving checks.  Returns
    (best params, validation-accuracy history).
    """
    if len(dataset) < 2:
        raise DatasetTooSmall("need at least 2 recordings")
    rng = np.random.default_rng(config.seed)
    blocks = []
    for rec_windows, rec_labels in dataset:
        blocks.extend(_blocks(rec_windows, rec_labels, config.segment_s))
    order = rng.permutation(len(blocks))
    blocks = [blocks[i] for i in order]
    n_val = max(1, int(round(VALIDATION_FRACTION * len(blocks))))
    val_blocks, train_blocks = blocks[:n_val], blocks[n_val:]
    if not train_blocks:
        raise DatasetTooSmall("no training blocks left after validation split")

    params = init_params(config)
    fit_standardization(params, dataset, config)
    state = TrainState.fresh(params)

    # batch plan: FF draws shuffled windows, LSTM consumes whole blocks
    if config.mode == "FF":
        all_windows = [w for ws, _ in train_blocks for w in ws]
        all_labels = [l for _, ls in train_blocks for l in ls]

        def batches():
            while True:
                idx = rng.permutation(len(all_labels))
                for s in range(0, len(idx), BATCH_SIZE):
                    sel = idx[s:s + BATCH_SIZE]
                    yield ([all_windows[i] for i in sel],
                           [all_labels[i] for i in sel], None)
    else:
        def batches():
            while True:
                for bi in rng.permutation(len(train_blocks)):
                    ws, ls = train_blocks[bi]
                    yield ws, ls, None

    history = []
    best_acc = -1.0
    best_params = copy.deepcopy(params)
    bad = 0
    for n_batch, (ws, ls, _) in enumerate(batches(), start=1):
        if n_batch > max_batches:
            break
        batch = _stack(ws)
        _, grads, _ = loss_and_grads(params, batch, _one_hot(ls), config,
                                     lam=WEIGHT_DECAY, train_mode=True, rng=rng)
        params, state = sgd_momentum_step(params, grads, state)
        if n_batch % VALIDATE_EVERY == 0:
            acc = _accuracy(params, val_blocks, config)
            history.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_params = copy.deepcopy(params)
                bad = 0
            else:
                bad += 1
                if bad >= EARLY_STOP_PATIENCE:
                    break
    return best_params, history


# ---------------------------------------------------------------- inference

def windows_from_encoded(enc: EncodedRecording, config: NetworkConfig):
    """Cut an encoded recording into non-overlapping model input windows."""
    seg = config.segment_s
    out = []
    if enc.mode == "cc":
        rows_per = int(round(seg / enc.grid_hop_s))
        n_grid = enc.tensors["EEG"].shape[0]
        n_win = n_grid // rows_per
        for j in range(n_win):
            sl = slice(j * rows_per, (j + 1) * rows_per)
            out.append({
                "EEG": enc.tensors["EEG"][sl].mean(axis=0)[None, :],
                "EOG": np.stack([enc.tensors[k][sl].mean(axis=0)
                                 for k in ("EOG_L", "EOG_R", "EOG_X")]),
                "EMG": enc.tensors["EMG"][sl].mean(axis=0)[None, :],
            })
    elif enc.mode == "octave":
        samples_per = int(round(seg * enc.fs))
        n_win = enc.tensors["EEG_C"].shape[1] // samples_per
        for j in range(n_win):
            sl = slice(j * samples_per, (j + 1) * samples_per)
            out.append({
                "EEG": np.concatenate([enc.tensors["EEG_C"][:, sl],
                                       enc.tensors["EEG_O"][:, sl]]),
                "EOG": np.concatenate([enc.tensors["EOG_L"][:, sl],
                                       enc.tensors["EOG_R"][:, sl]]),
                "EMG": enc.tensors["EMG_CHIN"][:, sl],
            })
    else:
        raise ValueError(f"unknown encoding mode {enc.mode!r}")
    return out


def modality_shapes_for(encoding: str, segment_s: int) -> dict:
    if encoding == "cc":
        return {"EEG": (1, 201), "EOG": (3, 401), "EMG": (1, 41)}
    length = int(100 * segment_s)
    return {"EEG": (10, length), "EOG": (10, length), "EMG": (5, length)}


def score_recording(params, enc: EncodedRecording, config: NetworkConfig):
    """Per-window stage probabilities, (n_windows, 5)."""
    windows = windows_from_encoded(enc, config)
    if not windows:
        raise ShapeMismatch("recording shorter than one window")
    probs, _ = forward(params, _stack(windows), config, train_mode=False)
    return probs


# ---------------------------------------------------------------- archive

def save_params(params, config: NetworkConfig, directory: str, name: str) -> str:
    os.makedirs(directory, exist_ok=True)
    manifest = {"config": json.loads(config.to_json()), "tensors": {}}
    for pname in sorted(params):
        blob = f"{name}.{pname.replace('/', '_')}.f32le"
        np.asarray(params[pname], dtype="<f4").tofile(os.path.join(directory, blob))
        manifest["tensors"][pname] = {"shape": list(params[pname].shape),
                                      "blob": blob}
    path = os.path.join(directory, f"{name}.model.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def load_params(path: str):
    with open(path) as f:
        manifest = json.load(f)
    base = os.path.dirname(path)
    config = NetworkConfig.from_json(json.dumps(manifest["config"]))
    params = {}
    for pname, info in manifest["tensors"].items():
        arr = np.fromfile(os.path.join(base, info["blob"]), dtype="<f4")
        params[pname] = arr.astype(np.float64).reshape(info["shape"])
    return params, config
