"""Deviation regressors over ndiff tensors.

The proposed model is a single heterogeneous graph-convolutional LSTM
cell unrolled through the window: four gate blocks (input, forget,
output, candidate), each combining a per-node-type input transform, a
per-node-type self transform on the node's own hidden state, and a
per-edge-type transform on mean-aggregated neighbour hidden states.  The
receiver's final hidden state feeds a dropout + linear readout.

Baselines operate on the flattened multivariate view of the same window:
a one-hidden-layer MLP, a uniform 4-block Conv1D/BatchNorm/GELU network,
and a hierarchical five-layer convolution stack (30@10, 30@8, 40@6,
50@5, 50@5) with a 256-unit dense layer, ReLU throughout.

Parameters are flat name->Tensor dicts with names like
rgnn/gate_i/w_recv or cnn/block2/kernels; running statistics live in the
same dict as non-trainable entries and travel with checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndiff as nd
from .errors import ContractError, ParseError

GATES = "ifoc"
MODEL_KINDS = ("rgnn", "mlp", "cnn", "seq2point")

RECV_FEATS = 2   # lat, lon
SAT_FEATS = 3    # snr, azimuth, elevation
SLOT_FEATS = 4   # snr, azimuth, elevation, visible flag
MIN_CONV_LEN = 40  # conv stacks need >= 37 input steps; windows are right-padded

CNN_CHANNELS = 256
CNN_KERNEL = 10
CNN_BLOCKS = 4
S2P_STACK = ((30, 10), (30, 8), (40, 6), (50, 5), (50, 5))
S2P_DENSE = 256
MLP_HIDDEN = 256


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    window: int = 10
    k_max: int = 20          # fixed satellite slots of the flat view
    hidden_dim: int = 256    # rgnn capacity
    dropout_rate: float = 0.2
    carry_hidden_across_gaps: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}")

    @property
    def feat_dim(self):
        return RECV_FEATS + SLOT_FEATS * self.k_max

    @property
    def flat_dim(self):
        return self.window * self.feat_dim

    @property
    def padded_len(self):
        return max(MIN_CONV_LEN, self.window)


def _uniform(rng, shape, fan_in):
    lim = 1.0 / math.sqrt(fan_in)
    return nd.param(rng.uniform(-lim, lim, size=shape))


# ---------------------------------------------------------------------------
# parameter initialization


def init_rgnn_params(spec, rng):
    h = spec.hidden_dim
    params = {}
    for g in GATES:
        p = f"rgnn/gate_{g}"
        params[f"{p}/w_recv"] = _uniform(rng, (RECV_FEATS, h), RECV_FEATS)
        params[f"{p}/w_sat"] = _uniform(rng, (SAT_FEATS, h), SAT_FEATS)
        params[f"{p}/u_recv"] = _uniform(rng, (h, h), h)
        params[f"{p}/u_sat"] = _uniform(rng, (h, h), h)
        params[f"{p}/m_sat_to_recv"] = _uniform(rng, (h, h), h)
        params[f"{p}/m_recv_to_sat"] = _uniform(rng, (h, h), h)
        bias = 1.0 if g == "f" else 0.0  # forget gate open at start
        params[f"{p}/b_recv"] = nd.param(np.full(h, bias))
        params[f"{p}/b_sat"] = nd.param(np.full(h, bias))
    params["rgnn/readout/w_out"] = _uniform(rng, (h, RECV_FEATS), h)
    params["rgnn/readout/b_out"] = nd.param(np.zeros(RECV_FEATS))
    return params


def init_mlp_params(spec, rng):
    return {
        "mlp/hidden/w": _uniform(rng, (spec.flat_dim, MLP_HIDDEN), spec.flat_dim),
        "mlp/hidden/b": nd.param(np.zeros(MLP_HIDDEN)),
        "mlp/out/w": _uniform(rng, (MLP_HIDDEN, 2), MLP_HIDDEN),
        "mlp/out/b": nd.param(np.zeros(2)),
    }


def init_cnn_params(spec, rng):
    params = {}
    c_in = spec.feat_dim
    for i in range(1, CNN_BLOCKS + 1):
        p = f"cnn/block{i}"
        params[f"{p}/kernels"] = _uniform(
            rng, (CNN_CHANNELS, c_in, CNN_KERNEL), c_in * CNN_KERNEL)
        params[f"{p}/bias"] = nd.param(np.zeros((CNN_CHANNELS, 1)))
        params[f"{p}/bn_gamma"] = nd.param(np.ones(CNN_CHANNELS))
        params[f"{p}/bn_beta"] = nd.param(np.zeros(CNN_CHANNELS))
        params[f"{p}/bn_mean"] = nd.tensor(np.zeros(CNN_CHANNELS))
        params[f"{p}/bn_var"] = nd.tensor(np.ones(CNN_CHANNELS))
        c_in = CNN_CHANNELS
    final_len = spec.padded_len - CNN_BLOCKS * (CNN_KERNEL - 1)
    if final_len < 1:
        raise ContractError(f"window {spec.window} too short for the CNN stack")
    flat = CNN_CHANNELS * final_len
    params["cnn/out/w"] = _uniform(rng, (flat, 2), flat)
    params["cnn/out/b"] = nd.param(np.zeros(2))
    return params


def init_seq2point_params(spec, rng):
    params = {}
    c_in = spec.feat_dim
    length = spec.padded_len
    for i, (c_out, k) in enumerate(S2P_STACK, start=1):
        p = f"seq2point/conv{i}"
        params[f"{p}/kernels"] = _uniform(rng, (c_out, c_in, k), c_in * k)
        params[f"{p}/bias"] = nd.param(np.zeros((c_out, 1)))
        c_in = c_out
        length -= k - 1
    if length < 1:
        raise ContractError(f"window {spec.window} too short for the seq2point stack")
    flat = c_in * length
    params["seq2point/dense/w"] = _uniform(rng, (flat, S2P_DENSE), flat)
    params["seq2point/dense/b"] = nd.param(np.zeros(S2P_DENSE))
    params["seq2point/out/w"] = _uniform(rng, (S2P_DENSE, 2), S2P_DENSE)
    params["seq2point/out/b"] = nd.param(np.zeros(2))
    return params


_INIT = {
    "rgnn": init_rgnn_params,
    "mlp": init_mlp_params,
    "cnn": init_cnn_params,
    "seq2point": init_seq2point_params,
}


def init_params(spec, rng):
    return _INIT[spec.kind](spec, rng)


def model_kind_of(params):
    kinds = {name.split("/", 1)[0] for name in params}
    if len(kinds) != 1 or not kinds <= set(MODEL_KINDS):
        raise ContractError(f"cannot infer model kind from names {sorted(kinds)}")
    return kinds.pop()


def hidden_dim_of(params):
    return params["rgnn/gate_i/b_recv"].shape[0]


def trainable_count(params):
    return sum(t.size for t in params.values() if t.requires_grad)


# ---------------------------------------------------------------------------
# graph-convolutional LSTM cell (reference, one snapshot at a time)


def _zeros_state(h):
    return nd.zeros(h), nd.zeros(h)


def gclstm_cell_step(snapshot, state, params):
    """One recurrent update over a star snapshot.

    state maps node keys ("recv" or satellite ids) to (h, c) tensor
    pairs; nodes absent from the state start from zeros, nodes absent
    from the snapshot are carried over untouched.
    """
    h = hidden_dim_of(params)
    if snapshot.recv_feat.shape != (RECV_FEATS,):
        raise ContractError(f"receiver features must be length {RECV_FEATS}")

    h_recv, c_recv = state.get("recv", _zeros_state(h))
    sat_states = {
        sid: state.get(sid, _zeros_state(h)) for sid in snapshot.sat_ids}

    def gate_pre(g, kind, x, h_self, msg):
        p = f"rgnn/gate_{g}"
        a = nd.add(nd.matmul(x, params[f"{p}/w_{kind}"]),
                   nd.matmul(h_self, params[f"{p}/u_{kind}"]))
        if msg is not None:
            a = nd.add(a, msg)
        return nd.add(a, params[f"{p}/b_{kind}"])

    def lstm_update(pres, c_old):
        i = nd.sigmoid(pres["i"])
        f = nd.sigmoid(pres["f"])
        o = nd.sigmoid(pres["o"])
        cand = nd.tanh(pres["c"])
        c_new = nd.add(nd.mul(f, c_old), nd.mul(i, cand))
        return nd.mul(o, nd.tanh(c_new)), c_new

    n = len(snapshot.sat_ids)
    x_recv = nd.tensor(snapshot.recv_feat)
    recv_pre = {}
    for g in GATES:
        msg = None
        if n:
            acc = None
            for sid in snapshot.sat_ids:
                m = nd.matmul(sat_states[sid][0],
                              params[f"rgnn/gate_{g}/m_sat_to_recv"])
                acc = m if acc is None else nd.add(acc, m)
            msg = nd.mul(acc, 1.0 / n)
        recv_pre[g] = gate_pre(g, "recv", x_recv, h_recv, msg)

    new_state = dict(state)
    new_state["recv"] = lstm_update(recv_pre, c_recv)

    for idx, sid in enumerate(snapshot.sat_ids):
        x = nd.tensor(snapshot.sat_feats[idx])
        h_old, c_old = sat_states[sid]
        pres = {}
        for g in GATES:
            msg = nd.matmul(h_recv, params[f"rgnn/gate_{g}/m_recv_to_sat"])
            pres[g] = gate_pre(g, "sat", x, h_old, msg)
        new_state[sid] = lstm_update(pres, c_old)

    return new_state


# ---------------------------------------------------------------------------
# batched window forward for the rgnn


@dataclass
class WindowPack:
    """Dense per-window view of a normalized sample for batched unrolls."""

    length: int
    rows: int
    recv_x: np.ndarray   # (L, 2)
    sat_x: np.ndarray    # (L, K, 3), zeros where absent
    present: np.ndarray  # (L, K) in {0, 1}
    target: np.ndarray   # (2,)


def pack_window(sample):
    if not sample.normalized:
        raise ContractError("pack_window expects a normalized sample")
    snaps = sample.snapshots
    length = len(snaps)
    ids = sorted(set(sid for s in snaps for sid in s.sat_ids))
    index = {sid: i for i, sid in enumerate(ids)}
    k = len(ids)
    recv_x = np.zeros((length, RECV_FEATS))
    sat_x = np.zeros((length, k, SAT_FEATS))
    present = np.zeros((length, k))
    for t, snap in enumerate(snaps):
        recv_x[t] = snap.recv_feat
        for j, sid in enumerate(snap.sat_ids):
            row = index[sid]
            sat_x[t, row] = snap.sat_feats[j]
            present[t, row] = 1.0
    return WindowPack(length=length, rows=k, recv_x=recv_x, sat_x=sat_x,
                      present=present, target=np.asarray(sample.target, dtype=float))


def _cat_gate(params, template):
    return nd.concat([params[template.format(g=g)] for g in GATES], axis=1)


def _cat_bias(params, template):
    return nd.concat([params[template.format(g=g)] for g in GATES], axis=0)


def rgnn_forward_batch(packs, params, mode, rng=None, dropout_rate=0.2,
                       carry_gaps=True):
    """Unroll the cell over a batch of equal-length windows -> (B, 2)."""
    if not packs:
        raise ContractError("rgnn_forward_batch needs at least one window")
    h = hidden_dim_of(params)
    length = packs[0].length
    if any(p.length != length for p in packs):
        raise ContractError("all windows in a batch must share one length")
    b = len(packs)
    ks = [p.rows for p in packs]
    n = int(sum(ks))

    recv_x = np.stack([p.recv_x for p in packs], axis=1)           # (L, B, 2)
    sat_x = np.concatenate([p.sat_x for p in packs], axis=1)        # (L, N, 3)
    present = np.concatenate([p.present for p in packs], axis=1)    # (L, N)

    member = np.zeros((n, b))
    agg = np.zeros((length, b, n))
    offset = 0
    for w, k in enumerate(ks):
        member[offset : offset + k, w] = 1.0
        counts = present[:, offset : offset + k].sum(axis=1)
        nonzero = counts > 0
        agg[nonzero, w, offset : offset + k] = (
            present[nonzero, offset : offset + k] / counts[nonzero, None])
        offset += k

    w_recv = _cat_gate(params, "rgnn/gate_{g}/w_recv")     # (2, 4H)
    w_sat = _cat_gate(params, "rgnn/gate_{g}/w_sat")       # (3, 4H)
    u_recv = _cat_gate(params, "rgnn/gate_{g}/u_recv")     # (H, 4H)
    u_sat = _cat_gate(params, "rgnn/gate_{g}/u_sat")
    m_sr = _cat_gate(params, "rgnn/gate_{g}/m_sat_to_recv")
    m_rs = _cat_gate(params, "rgnn/gate_{g}/m_recv_to_sat")
    b_recv = _cat_bias(params, "rgnn/gate_{g}/b_recv")     # (4H,)
    b_sat = _cat_bias(params, "rgnn/gate_{g}/b_sat")

    member_t = nd.tensor(member)
    h_r, c_r = nd.zeros((b, h)), nd.zeros((b, h))
    h_s, c_s = nd.zeros((n, h)), nd.zeros((n, h))

    def split_gates(pre):
        return (nd.sigmoid(pre[:, 0:h]), nd.sigmoid(pre[:, h : 2 * h]),
                nd.sigmoid(pre[:, 2 * h : 3 * h]), nd.tanh(pre[:, 3 * h :]))

    for t in range(length):
        mean_h = nd.matmul(nd.tensor(agg[t]), h_s)          # (B, H)
        gathered = nd.matmul(member_t, h_r)                 # (N, H)
        pre_r = nd.add(nd.add(nd.affine(nd.tensor(recv_x[t]), w_recv, b_recv),
                              nd.matmul(h_r, u_recv)),
                       nd.matmul(mean_h, m_sr))
        pre_s = nd.add(nd.add(nd.affine(nd.tensor(sat_x[t]), w_sat, b_sat),
                              nd.matmul(h_s, u_sat)),
                       nd.matmul(gathered, m_rs))

        i_r, f_r, o_r, cand_r = split_gates(pre_r)
        c_r = nd.add(nd.mul(f_r, c_r), nd.mul(i_r, cand_r))
        h_r = nd.mul(o_r, nd.tanh(c_r))

        i_s, f_s, o_s, cand_s = split_gates(pre_s)
        c_upd = nd.add(nd.mul(f_s, c_s), nd.mul(i_s, cand_s))
        h_upd = nd.mul(o_s, nd.tanh(c_upd))

        mask = nd.tensor(present[t][:, None])
        if carry_gaps:
            inv = nd.tensor(1.0 - present[t][:, None])
            c_s = nd.add(nd.mul(mask, c_upd), nd.mul(inv, c_s))
            h_s = nd.add(nd.mul(mask, h_upd), nd.mul(inv, h_s))
        else:
            c_s = nd.mul(mask, c_upd)
            h_s = nd.mul(mask, h_upd)

    out = nd.dropout(h_r, dropout_rate, training=(mode == "train"), rng=rng)
    return nd.affine(out, params["rgnn/readout/w_out"], params["rgnn/readout/b_out"])


def rgnn_forward(sample, params, mode="eval", rng=None, dropout_rate=0.2,
                 carry_gaps=True):
    """Single normalized window -> (2,) prediction tensor."""
    out = rgnn_forward_batch([pack_window(sample)], params, mode, rng,
                             dropout_rate, carry_gaps)
    return out[0]


# ---------------------------------------------------------------------------
# flat multivariate view and baselines


@dataclass
class FlatWindow:
    """L x D matrix: (lat, lon) then k_max slots of (snr, az, el, flag)."""

    data: np.ndarray
    k_max: int
    slot_ids: tuple


def flatten_window(sample, profile):
    if not sample.normalized:
        raise ContractError("flatten_window expects a normalized sample")
    k_max = profile.max_satellites
    slots = tuple(sorted(sample.roster))
    if len(slots) > k_max:
        raise ContractError(
            f"{len(slots)} satellites exceed the {k_max} slots of {profile.name}")
    slot_index = {sid: i for i, sid in enumerate(slots)}
    length = len(sample.snapshots)
    d = RECV_FEATS + SLOT_FEATS * k_max
    data = np.zeros((length, d))
    for t, snap in enumerate(sample.snapshots):
        data[t, 0:RECV_FEATS] = snap.recv_feat
        for j, sid in enumerate(snap.sat_ids):
            base = RECV_FEATS + SLOT_FEATS * slot_index[sid]
            data[t, base : base + SAT_FEATS] = snap.sat_feats[j]
            data[t, base + SAT_FEATS] = 1.0
    return FlatWindow(data=data, k_max=k_max, slot_ids=slots)


def stack_flat(samples, profile):
    """(B, L, D) array of flattened windows."""
    return np.stack([flatten_window(s, profile).data for s in samples])


def _pad_time_axis(x, padded_len):
    """(B, L, D) -> (B, D, L_pad), zero right-padding on the time axis."""
    swapped = np.transpose(x, (0, 2, 1))
    length = swapped.shape[2]
    if length >= padded_len:
        return swapped
    pad = np.zeros((swapped.shape[0], swapped.shape[1], padded_len - length))
    return np.concatenate([swapped, pad], axis=2)


def mlp_forward_batch(x, params, mode="eval", rng=None):
    xt = nd.tensor(x.reshape(x.shape[0], -1))
    hidden = nd.relu(nd.affine(xt, params["mlp/hidden/w"], params["mlp/hidden/b"]))
    return nd.affine(hidden, params["mlp/out/w"], params["mlp/out/b"])


def cnn_forward_batch(x, params, mode="eval", rng=None, padded_len=MIN_CONV_LEN):
    h = nd.tensor(_pad_time_axis(x, padded_len))
    training = mode == "train"
    for i in range(1, CNN_BLOCKS + 1):
        p = f"cnn/block{i}"
        h = nd.add(nd.conv1d(h, params[f"{p}/kernels"]), params[f"{p}/bias"])
        h = nd.batchnorm1d(h, params[f"{p}/bn_gamma"], params[f"{p}/bn_beta"],
                           params[f"{p}/bn_mean"], params[f"{p}/bn_var"],
                           training=training)
        h = nd.gelu(h)
    flat = nd.flatten(h, from_axis=1)
    return nd.affine(flat, params["cnn/out/w"], params["cnn/out/b"])


def seq2point_forward_batch(x, params, mode="eval", rng=None,
                            padded_len=MIN_CONV_LEN):
    h = nd.tensor(_pad_time_axis(x, padded_len))
    for i in range(1, len(S2P_STACK) + 1):
        p = f"seq2point/conv{i}"
        h = nd.relu(nd.add(nd.conv1d(h, params[f"{p}/kernels"]),
                           params[f"{p}/bias"]))
    flat = nd.flatten(h, from_axis=1)
    dense = nd.relu(nd.affine(flat, params["seq2point/dense/w"],
                              params["seq2point/dense/b"]))
    return nd.affine(dense, params["seq2point/out/w"], params["seq2point/out/b"])


def mlp_forward(flat_window, params, mode="eval", rng=None):
    return mlp_forward_batch(flat_window.data[None], params, mode, rng)[0]


def cnn_forward(flat_window, params, mode="eval", rng=None,
                padded_len=MIN_CONV_LEN):
    return cnn_forward_batch(flat_window.data[None], params, mode, rng,
                             padded_len)[0]


def seq2point_forward(flat_window, params, mode="eval", rng=None,
                      padded_len=MIN_CONV_LEN):
    return seq2point_forward_batch(flat_window.data[None], params, mode, rng,
                                   padded_len)[0]


def forward_batch(spec, params, batch, mode="eval", rng=None):
    """Uniform entry point: rgnn takes WindowPack lists, baselines arrays."""
    if spec.kind == "rgnn":
        return rgnn_forward_batch(batch, params, mode, rng,
                                  dropout_rate=spec.dropout_rate,
                                  carry_gaps=spec.carry_hidden_across_gaps)
    if spec.kind == "mlp":
        return mlp_forward_batch(batch, params, mode, rng)
    if spec.kind == "cnn":
        return cnn_forward_batch(batch, params, mode, rng, spec.padded_len)
    return seq2point_forward_batch(batch, params, mode, rng, spec.padded_len)


# ---------------------------------------------------------------------------
# checkpoints: text format, exact round-trip via float hex


def save_params(params, path):
    path = Path(path)
    lines = [f"#jamlab-checkpoint version=1 count={len(params)}"]
    for name, t in params.items():
        dims = "x".join(str(d) for d in t.shape)
        values = " ".join(float(v).hex() for v in t.data.ravel())
        lines.append(f"{name} {dims} {int(t.requires_grad)} {values}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def load_params(path):
    path = Path(path)
    with open(path, encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("#jamlab-checkpoint version=1"):
        raise ParseError(path, 1, "not a jamlab checkpoint")
    params = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            name, dims, trainable, payload = line.split(" ", 3)
            shape = tuple(int(d) for d in dims.split("x"))
            data = np.array([float.fromhex(v) for v in payload.split(" ")])
            params[name] = nd.Tensor(data.reshape(shape),
                                     requires_grad=bool(int(trainable)))
        except (ValueError, TypeError) as exc:
            raise ParseError(path, line_no, f"bad tensor line: {exc}") from None
    return params
