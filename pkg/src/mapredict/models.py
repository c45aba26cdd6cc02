"""Layout predictors: the LSTM/attention hybrid and three baselines.

All models read a window of normalised layouts (B, win, M, 3) and emit the
next ``pre`` layouts (B, pre, M, 3) as displacements from the last observed
layout. Output heads start at zero, so an untrained model is the
persistence predictor.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .dataset import Normalizer, WindowSplit
from .errors import ConfigError, TrainingDivergedError
from .nn import layers as L
from .nn.params import (
    LSTM_KEYS,
    MHA_KEYS,
    ParamStore,
    adam_step,
    init_dense,
    init_lstm,
    init_mha,
    load_weights,
    save_weights,
    sub,
    xavier_uniform,
)

log = logging.getLogger(__name__)

MODEL_KINDS = ("proposed", "lstm", "transformer", "narx")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "proposed"
    n_antennas: int = 9
    win: int = 20
    pre: int = 60
    # proposed
    lstm_hidden: int = 32
    d_model: int = 64
    heads: int = 4
    dropout: float = 0.1
    bilstm_hidden: int = 32
    attention_axis: str = "time"
    # output head: 0 = full dense layer; r > 0 = r learned temporal basis
    # curves shared by every coordinate, mixed by per-coordinate coefficients
    head_rank: int = 4
    # linear autoregressive path from the raw history, shared by all coordinates;
    # train() starts it at the ridge least-squares fit
    ar_skip: bool = True
    # LSTM-only baseline
    lstm_layers: int = 2
    lstm_only_hidden: int = 64
    # Transformer-only baseline (shares d_model and heads)
    tf_blocks: int = 2
    tf_ff: int = 128
    # NARX baseline
    narx_delay: int = 5
    narx_hidden: int = 64
    # "closed_loop": NMSE of the full autoregressive rollout, like every other
    # model; "teacher_forcing": one-step NMSE on every transition in a window
    narx_training: str = "closed_loop"
    # training
    lr: float = 1e-3
    epochs: int = 300
    batch: int = 32
    clip_norm: float = 5.0
    seed: int = 0

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}", key="model.kind")
        for f in ("n_antennas", "win", "pre", "lstm_hidden", "d_model", "heads", "bilstm_hidden", "lstm_layers",
                  "lstm_only_hidden", "tf_blocks", "tf_ff", "narx_delay", "narx_hidden", "epochs", "batch"):
            if getattr(self, f) < 1:
                raise ConfigError(f"model.{f} must be >= 1, got {getattr(self, f)}", key=f"model.{f}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by heads {self.heads}", key="model.heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}", key="model.dropout")
        if self.head_rank < 0:
            raise ConfigError("head_rank must be >= 0", key="model.head_rank")
        if self.attention_axis not in ("time", "antenna"):
            raise ConfigError(f"attention_axis must be 'time' or 'antenna', got {self.attention_axis!r}",
                              key="model.attention_axis")
        if self.narx_training not in ("closed_loop", "teacher_forcing"):
            raise ConfigError(f"narx_training must be 'closed_loop' or 'teacher_forcing', got {self.narx_training!r}",
                              key="model.narx_training")
        if self.kind == "narx" and self.narx_delay > self.win:
            raise ConfigError("narx_delay exceeds the history window", key="model.narx_delay")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive", key="model.lr")
        return self

    def with_(self, **changes):
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def nmse_loss(pred, truth):
    """Sum of squared errors over the block divided by the truth energy, and its gradient."""
    diff = pred - truth
    den = float(np.sum(truth * truth))
    return float(np.sum(diff * diff)) / den, 2.0 * diff / den


def _head_build(s, rng, cfg, n_feat):
    n_out = 3 * cfg.n_antennas
    if cfg.head_rank == 0:
        init_dense(s, "head", rng, n_feat, cfg.pre * n_out)
    else:
        init_dense(s, "head", rng, n_feat, n_out * cfg.head_rank)
        s.add("head.basis", xavier_uniform(rng, cfg.head_rank, cfg.pre))
    if cfg.ar_skip:
        s.add("head.ar", np.zeros((cfg.pre, cfg.win)))
        s.add("head.ar_b", np.zeros(cfg.pre))
    # zero output layer: an untrained model repeats the last layout
    s["head.W"][...] = 0.0


def _head_count(cfg, n_feat):
    n_out, r = 3 * cfg.n_antennas, cfg.head_rank
    ar = cfg.pre * (cfg.win + 1) if cfg.ar_skip else 0
    if r == 0:
        return n_feat * cfg.pre * n_out + cfg.pre * n_out + ar
    return n_feat * n_out * r + n_out * r + r * cfg.pre + ar


def _head_forward(s, Z, x, cfg):
    """Feature rows (B, n_feat) -> layouts (B, pre, M, 3) as displacements from the last input."""
    B, M = x.shape[0], cfg.n_antennas
    O, c_dense = L.dense_forward(Z, s["head.W"], s["head.b"])
    if cfg.head_rank == 0:
        D = O.reshape(B, cfg.pre, M, 3)
        C = None
    else:
        C = O.reshape(B, 3 * M, cfg.head_rank)
        D = np.swapaxes(C @ s["head.basis"], 1, 2).reshape(B, cfg.pre, M, 3)
    xin = None
    if cfg.ar_skip:
        # affine in the history, so forecasts may revert toward a level
        xin = x
        D = D + np.einsum("kj,bjmc->bkmc", s["head.ar"], x) + s["head.ar_b"][None, :, None, None]
    return D + x[:, -1:, :, :], (x.shape, c_dense, C, xin)


def _head_backward(s, dy, cache, cfg, grads):
    x_shape, c_dense, C, xin = cache
    B = x_shape[0]
    dx = np.zeros(x_shape)
    dx[:, -1] = dy.sum(axis=1)
    if xin is not None:
        grads["head.ar"] = np.einsum("bkmc,bjmc->kj", dy, xin)
        grads["head.ar_b"] = dy.sum(axis=(0, 2, 3))
        dx += np.einsum("kj,bkmc->bjmc", s["head.ar"], dy)
    if cfg.head_rank == 0:
        dO = dy.reshape(B, -1)
    else:
        dD = np.swapaxes(dy.reshape(B, cfg.pre, -1), 1, 2)  # (B, 3M, pre)
        grads["head.basis"] = np.einsum("bcr,bcp->rp", C, dD)
        dO = (dD @ s["head.basis"].T).reshape(B, -1)
    dZ, grads["head.W"], grads["head.b"] = L.dense_backward(dO, c_dense)
    return dx, dZ


def fit_ar_skip(s, Xn, Yn, cfg):
    """Least-squares fit of the affine skip path alone on training windows.

    Each (window, coordinate) series is one regression row: the history
    (plus a constant) predicts the future offsets from the last input.
    Smooth histories make the normal equations singular to working
    precision, so this solves by SVD and keeps the minimum-norm solution,
    which leans toward persistence. Used as the starting point of training
    so the recurrent path only has to learn the residual.
    """
    F = Xn.transpose(0, 2, 3, 1).reshape(-1, cfg.win)
    F = np.concatenate([F, np.ones((F.shape[0], 1))], axis=1)
    tgt = (Yn - Xn[:, -1:]).transpose(0, 2, 3, 1).reshape(-1, cfg.pre)
    sol = np.linalg.lstsq(F, tgt, rcond=None)[0]
    s["head.ar"][...] = sol[:-1].T
    s["head.ar_b"][...] = sol[-1]


# ---------------------------------------------------------------- proposed


class Proposed:
    """Per-antenna LSTMs -> dense fusion -> self-attention -> dropout ->
    concat with LSTM features -> BiLSTM -> dense head."""

    @staticmethod
    def build(cfg, rng):
        M, h1, d, h2 = cfg.n_antennas, cfg.lstm_hidden, cfg.d_model, cfg.bilstm_hidden
        s = ParamStore()
        init_lstm(s, "ant", rng, 3, h1, groups=M)
        init_dense(s, "fuse", rng, M * h1 if cfg.attention_axis == "time" else h1, d)
        init_mha(s, "att", rng, d)
        init_lstm(s, "bi_f", rng, d + M * h1, h2)
        init_lstm(s, "bi_b", rng, d + M * h1, h2)
        _head_build(s, rng, cfg, 2 * h2)
        return s

    @staticmethod
    def param_count(cfg):
        M, h1, d, h2 = cfg.n_antennas, cfg.lstm_hidden, cfg.d_model, cfg.bilstm_hidden
        fuse_in = M * h1 if cfg.attention_axis == "time" else h1
        return (M * (3 * 4 * h1 + h1 * 4 * h1 + 4 * h1) + fuse_in * d + d + 4 * d * d
                + 2 * ((d + M * h1) * 4 * h2 + h2 * 4 * h2 + 4 * h2) + _head_count(cfg, 2 * h2))

    @staticmethod
    def forward(s, x, cfg, mode="eval", rng=None):
        B, W, M, _ = x.shape
        h1, h2 = cfg.lstm_hidden, cfg.bilstm_hidden
        p_ant = sub(s, "ant", LSTM_KEYS)
        hs, c_ant = L.lstm_sequence_forward(x.transpose(1, 2, 0, 3), p_ant)  # (W, M, B, h1)
        tok = hs.transpose(2, 0, 1, 3)  # (B, W, M, h1)
        F = tok.reshape(B, W, M * h1)
        p_att = sub(s, "att", MHA_KEYS)
        if cfg.attention_axis == "time":
            E, c_fuse = L.dense_forward(F, s["fuse.W"], s["fuse.b"])
            A, c_att = L.mha_forward(E, p_att, cfg.heads)
        else:
            E, c_fuse = L.dense_forward(tok, s["fuse.W"], s["fuse.b"])  # (B, W, M, d)
            A, c_att = L.mha_forward(E, p_att, cfg.heads)
            A = A.mean(axis=2)
        Ad, mask = L.dropout_forward(A, cfg.dropout, mode, rng)
        C = np.concatenate([Ad, F], axis=-1).transpose(1, 0, 2)  # (W, B, d + M h1)
        pf, pb = sub(s, "bi_f", LSTM_KEYS), sub(s, "bi_b", LSTM_KEYS)
        Hb, c_bi = L.bilstm_forward(C, pf, pb)
        Z = np.concatenate([Hb[-1, :, :h2], Hb[0, :, h2:]], axis=-1)  # both directions' full-sequence states
        y, c_head = _head_forward(s, Z, x, cfg)
        return y, (x.shape, c_ant, c_fuse, c_att, mask, c_bi, Hb.shape, c_head, p_ant, p_att, pf, pb)

    @staticmethod
    def backward(s, dy, cache, cfg):
        x_shape, c_ant, c_fuse, c_att, mask, c_bi, hb_shape, c_head, p_ant, p_att, pf, pb = cache
        B, W, M, _ = x_shape
        h1, h2, d = cfg.lstm_hidden, cfg.bilstm_hidden, cfg.d_model
        grads = {}
        dx, dZ = _head_backward(s, dy, c_head, cfg, grads)
        dHb = np.zeros(hb_shape)
        dHb[-1, :, :h2] = dZ[:, :h2]
        dHb[0, :, h2:] = dZ[:, h2:]
        dC, gf, gb = L.bilstm_backward(dHb, c_bi, pf, pb)
        dC = dC.transpose(1, 0, 2)
        dAd, dF = dC[..., :d], dC[..., d:]
        dA = L.dropout_backward(dAd, mask)
        if cfg.attention_axis == "time":
            dE, g_att = L.mha_backward(dA, c_att, p_att)
            dF_fuse, g_fW, g_fb = L.dense_backward(dE, c_fuse)
            dtok = (dF + dF_fuse).reshape(B, W, M, h1)
        else:
            dA_tok = np.broadcast_to(dA[:, :, None, :] / M, (B, W, M, d))
            dE, g_att = L.mha_backward(dA_tok, c_att, p_att)
            dtok_fuse, g_fW, g_fb = L.dense_backward(dE, c_fuse)
            dtok = dF.reshape(B, W, M, h1) + dtok_fuse
        dxs, g_ant = L.lstm_sequence_backward(dtok.transpose(1, 2, 0, 3), c_ant, p_ant)
        dx += dxs.transpose(2, 0, 1, 3)
        grads.update({"fuse.W": g_fW, "fuse.b": g_fb})
        grads.update({f"ant.{k}": v for k, v in g_ant.items()})
        grads.update({f"att.{k}": v for k, v in g_att.items()})
        grads.update({f"bi_f.{k}": v for k, v in gf.items()})
        grads.update({f"bi_b.{k}": v for k, v in gb.items()})
        return dx, grads


# ---------------------------------------------------------------- LSTM only


class LSTMOnly:
    """Stacked LSTM over flattened layouts, last hidden state -> dense head."""

    @staticmethod
    def build(cfg, rng):
        s = ParamStore()
        H, n_in = cfg.lstm_only_hidden, 3 * cfg.n_antennas
        for k in range(cfg.lstm_layers):
            init_lstm(s, f"l{k}", rng, n_in if k == 0 else H, H)
        _head_build(s, rng, cfg, H)
        return s

    @staticmethod
    def param_count(cfg):
        H, n_in = cfg.lstm_only_hidden, 3 * cfg.n_antennas
        first = n_in * 4 * H + H * 4 * H + 4 * H
        rest = (cfg.lstm_layers - 1) * (H * 4 * H + H * 4 * H + 4 * H)
        return first + rest + _head_count(cfg, H)

    @staticmethod
    def forward(s, x, cfg, mode="eval", rng=None):
        B, W = x.shape[:2]
        h = x.reshape(B, W, -1).transpose(1, 0, 2)
        caches = []
        for k in range(cfg.lstm_layers):
            p = sub(s, f"l{k}", LSTM_KEYS)
            h, c = L.lstm_sequence_forward(h, p)
            caches.append((c, p))
        y, c_head = _head_forward(s, h[-1], x, cfg)
        return y, (x.shape, caches, h.shape, c_head)

    @staticmethod
    def backward(s, dy, cache, cfg):
        x_shape, caches, h_shape, c_head = cache
        grads = {}
        dx, dh_last = _head_backward(s, dy, c_head, cfg, grads)
        dh = np.zeros(h_shape)
        dh[-1] = dh_last
        for k in range(cfg.lstm_layers - 1, -1, -1):
            c, p = caches[k]
            dh, g = L.lstm_sequence_backward(dh, c, p)
            grads.update({f"l{k}.{n}": v for n, v in g.items()})
        B, W = x_shape[:2]
        dx += dh.transpose(1, 0, 2).reshape(x_shape)
        return dx, grads


# ---------------------------------------------------------------- Transformer only


class TransformerOnly:
    """Linear embedding + sinusoidal positions + residual attention/FFN blocks;
    the last token feeds the dense head."""

    @staticmethod
    def build(cfg, rng):
        s = ParamStore()
        d, n_in = cfg.d_model, 3 * cfg.n_antennas
        init_dense(s, "embed", rng, n_in, d)
        for k in range(cfg.tf_blocks):
            init_mha(s, f"b{k}.att", rng, d)
            init_dense(s, f"b{k}.ff1", rng, d, cfg.tf_ff)
            init_dense(s, f"b{k}.ff2", rng, cfg.tf_ff, d)
        _head_build(s, rng, cfg, d)
        return s

    @staticmethod
    def param_count(cfg):
        d, n_in, F = cfg.d_model, 3 * cfg.n_antennas, cfg.tf_ff
        block = 4 * d * d + d * F + F + F * d + d
        return n_in * d + d + cfg.tf_blocks * block + _head_count(cfg, d)

    @staticmethod
    def forward(s, x, cfg, mode="eval", rng=None):
        B, W = x.shape[:2]
        E, c_emb = L.dense_forward(x.reshape(B, W, -1), s["embed.W"], s["embed.b"])
        E = E + L.sinusoidal_encoding(W, cfg.d_model)
        blocks = []
        for k in range(cfg.tf_blocks):
            p_att = sub(s, f"b{k}.att", MHA_KEYS)
            A, c_att = L.mha_forward(E, p_att, cfg.heads)
            E = E + A
            H1, c1 = L.dense_forward(E, s[f"b{k}.ff1.W"], s[f"b{k}.ff1.b"])
            R, rmask = L.relu_forward(H1)
            H2, c2 = L.dense_forward(R, s[f"b{k}.ff2.W"], s[f"b{k}.ff2.b"])
            E = E + H2
            blocks.append((p_att, c_att, c1, rmask, c2))
        y, c_head = _head_forward(s, E[:, -1], x, cfg)
        return y, (x.shape, c_emb, blocks, E.shape, c_head)

    @staticmethod
    def backward(s, dy, cache, cfg):
        x_shape, c_emb, blocks, e_shape, c_head = cache
        grads = {}
        dx, dlast = _head_backward(s, dy, c_head, cfg, grads)
        dE = np.zeros(e_shape)
        dE[:, -1] = dlast
        for k in range(cfg.tf_blocks - 1, -1, -1):
            p_att, c_att, c1, rmask, c2 = blocks[k]
            dR, g2W, g2b = L.dense_backward(dE, c2)
            dH1 = L.relu_backward(dR, rmask)
            dE1, g1W, g1b = L.dense_backward(dH1, c1)
            dE = dE + dE1
            dA, g_att = L.mha_backward(dE, c_att, p_att)
            dE = dE + dA
            grads.update({f"b{k}.ff1.W": g1W, f"b{k}.ff1.b": g1b, f"b{k}.ff2.W": g2W, f"b{k}.ff2.b": g2b})
            grads.update({f"b{k}.att.{n}": v for n, v in g_att.items()})
        dX, geW, geb = L.dense_backward(dE, c_emb)
        grads.update({"embed.W": geW, "embed.b": geb})
        dx += dX.reshape(x_shape)
        return dx, grads


# ---------------------------------------------------------------- NARX


class NARX:
    """Tapped delay line of the last ``narx_delay`` layouts -> tanh MLP ->
    one-step displacement; rolled out autoregressively."""

    @staticmethod
    def build(cfg, rng):
        s = ParamStore()
        n = 3 * cfg.n_antennas
        init_dense(s, "hid", rng, cfg.narx_delay * n, cfg.narx_hidden)
        init_dense(s, "out", rng, cfg.narx_hidden, n)
        s["out.W"][...] = 0.0
        return s

    @staticmethod
    def param_count(cfg):
        n, H = 3 * cfg.n_antennas, cfg.narx_hidden
        return cfg.narx_delay * n * H + H + H * n + n

    @staticmethod
    def step_forward(s, U):
        """U: (..., n_d, M, 3) delay line -> next layout (..., M, 3)."""
        lead = U.shape[:-3]
        flat = U.reshape(lead + (-1,))
        Hp, c1 = L.dense_forward(flat, s["hid.W"], s["hid.b"])
        Hh, th = L.tanh_forward(Hp)
        D, c2 = L.dense_forward(Hh, s["out.W"], s["out.b"])
        return U[..., -1, :, :] + D.reshape(U.shape[:-3] + U.shape[-2:]), (U.shape, c1, th, c2)

    @staticmethod
    def step_backward(s, dy, cache):
        u_shape, c1, th, c2 = cache
        dD = dy.reshape(dy.shape[:-2] + (-1,))
        dHh, g2W, g2b = L.dense_backward(dD, c2)
        dHp = L.tanh_backward(dHh, th)
        dflat, g1W, g1b = L.dense_backward(dHp, c1)
        dU = dflat.reshape(u_shape).copy()
        dU[..., -1, :, :] += dy
        return dU, {"hid.W": g1W, "hid.b": g1b, "out.W": g2W, "out.b": g2b}

    @staticmethod
    def delay_lines(seq, n_d):
        """All (delay line, next value) pairs from (B, T, M, 3) sequences."""
        T = seq.shape[1]
        idx = np.arange(n_d)[None, :] + np.arange(T - n_d)[:, None]  # (T - n_d, n_d)
        return seq[:, idx], seq[:, n_d:]

    @staticmethod
    def forward(s, x, cfg, mode="eval", rng=None):
        hist = x[:, -cfg.narx_delay:]
        outs, caches = [], []
        for _ in range(cfg.pre):
            nxt, c = NARX.step_forward(s, hist)
            outs.append(nxt)
            caches.append(c)
            hist = np.concatenate([hist[:, 1:], nxt[:, None]], axis=1)
        return np.stack(outs, axis=1), (x.shape, caches)

    @staticmethod
    def backward(s, dy, cache, cfg):
        """Backpropagation through the rollout; dy is (B, pre, M, 3)."""
        x_shape, caches = cache
        n_d = cfg.narx_delay
        dhist = np.zeros((x_shape[0], n_d) + x_shape[2:])
        grads = {}
        for k in range(cfg.pre - 1, -1, -1):
            # hist_{k+1} = hist_k[1:] ++ nxt_k
            dnxt = dy[:, k] + dhist[:, -1]
            shifted = np.zeros_like(dhist)
            shifted[:, 1:] = dhist[:, :-1]
            dU, g = NARX.step_backward(s, dnxt, caches[k])
            dhist = shifted + dU
            for name, v in g.items():
                grads[name] = grads[name] + v if name in grads else v
        dx = np.zeros(x_shape)
        dx[:, -n_d:] = dhist
        return dx, grads


ARCH = {"proposed": Proposed, "lstm": LSTMOnly, "transformer": TransformerOnly, "narx": NARX}


def param_count(cfg: ModelConfig) -> int:
    return ARCH[cfg.kind].param_count(cfg)


def loss_and_grads(kind, s, Xn, Yn, cfg, mode="train", rng=None):
    """Training objective in normalised coordinates.

    Every model scores its whole predicted block, NARX through its
    autoregressive rollout, unless NARX is set to teacher forcing.
    """
    if kind == "narx" and cfg.narx_training == "teacher_forcing":
        U, target = NARX.delay_lines(np.concatenate([Xn, Yn], axis=1), cfg.narx_delay)
        pred, cache = NARX.step_forward(s, U)
        loss, dpred = nmse_loss(pred, target)
        _, grads = NARX.step_backward(s, dpred, cache)
        return loss, grads
    arch = ARCH[kind]
    pred, cache = arch.forward(s, Xn, cfg, mode, rng)
    loss, dpred = nmse_loss(pred, Yn)
    _, grads = arch.backward(s, dpred, cache, cfg)
    return loss, grads


# ---------------------------------------------------------------- predictor object


@dataclass
class Prediction:
    positions: np.ndarray  # (B, pre, M, 3) or (pre, M, 3), metres
    clamped: int  # coordinates snapped onto the box


@dataclass
class Predictor:
    cfg: ModelConfig
    store: ParamStore
    normalizer: Normalizer
    box_lo: np.ndarray
    box_hi: np.ndarray

    @property
    def kind(self):
        return self.cfg.kind

    def forward_normalized(self, Xn):
        return ARCH[self.kind].forward(self.store, Xn, self.cfg, "eval")[0]

    def predict(self, history) -> Prediction:
        """Denormalised, box-clamped forecast for one window or a batch."""
        h = np.asarray(history, dtype=float)
        single = h.ndim == 3
        if single:
            h = h[None]
        if h.shape[1:] != (self.cfg.win, self.cfg.n_antennas, 3):
            raise ValueError(f"history shape {h.shape[1:]} does not match ({self.cfg.win}, {self.cfg.n_antennas}, 3)")
        raw = self.normalizer.inverse(self.forward_normalized(self.normalizer.transform(h)))
        out = np.clip(raw, self.box_lo, self.box_hi)
        clamped = int(np.count_nonzero(out != raw))
        return Prediction(out[0] if single else out, clamped)

    def save(self, path):
        extra = {
            "config": asdict(self.cfg),
            "normalizer": self.normalizer.to_dict(),
            "box_lo": np.asarray(self.box_lo, dtype=float).tolist(),
            "box_hi": np.asarray(self.box_hi, dtype=float).tolist(),
        }
        save_weights(self.store, path, self.kind, extra)

    @classmethod
    def load(cls, path, kind=None) -> Predictor:
        store, found, extra = load_weights(path, expected_kind=kind)
        cfg = ModelConfig.from_dict(extra["config"])
        return cls(cfg, store, Normalizer.from_dict(extra["normalizer"]),
                   np.asarray(extra["box_lo"]), np.asarray(extra["box_hi"]))


def persistence(history, pre):
    """Repeat the last observed layout ``pre`` times."""
    h = np.asarray(history)
    last = h[..., -1:, :, :]
    return np.repeat(last, pre, axis=-3)


@dataclass
class TrainResult:
    predictor: Predictor
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    best_epoch: int = -1


def train(split: WindowSplit, cfg: ModelConfig, box_lo, box_hi, on_epoch=None) -> TrainResult:
    """Mini-batch Adam on batch NMSE; keeps the weights with the best validation NMSE."""
    cfg.validate()
    if len(split.train) == 0:
        raise ValueError("training split is empty")
    if (cfg.win, cfg.pre) != (split.win, split.pre):
        raise ConfigError(f"model expects win={cfg.win}, pre={cfg.pre}; windows have win={split.win}, pre={split.pre}")
    init_rng, shuffle_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    arch = ARCH[cfg.kind]
    store = arch.build(cfg, init_rng)
    norm = split.normalizer
    Xn, Yn = norm.transform(split.train.X), norm.transform(split.train.Y)
    has_val = len(split.val) > 0
    Xv, Yv = (norm.transform(split.val.X), norm.transform(split.val.Y)) if has_val else (None, None)
    pred = Predictor(cfg, store, norm, np.asarray(box_lo, float), np.asarray(box_hi, float))
    result = TrainResult(pred)
    if cfg.ar_skip and "head.ar" in store:
        fit_ar_skip(store, Xn, Yn, cfg)
    # the starting point competes for best-validation retention too
    best = nmse_loss(pred.forward_normalized(Xv), Yv)[0] if has_val else np.inf
    best_snap = store.snapshot()
    n = Xn.shape[0]
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            loss, grads = loss_and_grads(cfg.kind, store, Xn[idx], Yn[idx], cfg, "train", drop_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            store.set_grads(grads)
            if cfg.clip_norm:
                gn = store.grad_norm()
                if not np.isfinite(gn):
                    raise TrainingDivergedError(epoch, loss)
                if gn > cfg.clip_norm:
                    for name in store:
                        store.param(name).grad *= cfg.clip_norm / gn
            adam_step(store, cfg.lr)
            losses.append(loss)
        train_nmse = float(np.mean(losses))
        if has_val:
            val_nmse = nmse_loss(pred.forward_normalized(Xv), Yv)[0]
        else:
            val_nmse = train_nmse
        if not np.isfinite(val_nmse):
            raise TrainingDivergedError(epoch, val_nmse)
        result.train_curve.append(train_nmse)
        result.val_curve.append(val_nmse)
        result.wall_ms.append(1e3 * (time.perf_counter() - t0))
        if val_nmse < best:
            best, best_snap, result.best_epoch = val_nmse, store.snapshot(), epoch
        if on_epoch is not None:
            on_epoch(epoch, train_nmse, val_nmse)
    store.restore(best_snap)
    return result
