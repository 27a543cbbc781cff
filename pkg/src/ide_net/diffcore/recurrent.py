from __future__ import annotations

from typing import Optional

import numpy as np

from .ops import _sigmoid
from .tensor import DTYPE, ShapeMismatch, Tensor, as_tensor, make_node


def lstm_sequence(x, w_ih, w_hh, bias, h0=None, c0=None):
    """Run an LSTM over ``x`` of shape ``(N, T, d_in)``.

    Gate layout along the ``4h`` axis is input, forget, cell, output.
    Returns ``(H, (h_T, c_T))`` where ``H`` is a ``(N, T, h)`` Tensor and the
    final state is returned as plain arrays (no gradient flows out of it).
    Backpropagation through time is done in one fused pass.

    Grouped form: ``x`` of shape ``(G, N, T, d_in)`` with weights
    ``(G, d_in, 4h)``, ``(G, h, 4h)``, ``(G, 4h)`` runs G independent LSTMs
    in lockstep.
    """
    x, w_ih, w_hh, bias = (as_tensor(v) for v in (x, w_ih, w_hh, bias))
    grouped = w_hh.ndim == 3
    if grouped:
        if x.ndim != 4:
            raise ShapeMismatch(f"grouped lstm expects (G, N, T, d_in), got {x.shape}")
        g_count, n, steps, d_in = x.shape
    else:
        if x.ndim != 3:
            raise ShapeMismatch(f"lstm_sequence expects (N, T, d_in), got {x.shape}")
        g_count = 1
        n, steps, d_in = x.shape
    hid = w_hh.shape[-2]
    lead = (g_count,) if grouped else ()
    if (w_ih.shape != (*lead, d_in, 4 * hid) or w_hh.shape != (*lead, hid, 4 * hid)
            or bias.shape != (*lead, 4 * hid)):
        raise ShapeMismatch(
            f"lstm weights {w_ih.shape}/{w_hh.shape}/{bias.shape} do not fit d_in={d_in}, hidden={hid}"
        )
    h0 = Tensor(np.zeros((*lead, n, hid), dtype=DTYPE)) if h0 is None else as_tensor(h0)
    c0 = Tensor(np.zeros((*lead, n, hid), dtype=DTYPE)) if c0 is None else as_tensor(c0)

    # internal layout: group axis always present
    xg = x.data.reshape(g_count, n * steps, d_in)
    wi = w_ih.data.reshape(g_count, d_in, 4 * hid)
    wh = w_hh.data.reshape(g_count, hid, 4 * hid)
    bg = bias.data.reshape(g_count, 1, 4 * hid)
    xw = (xg @ wi + bg).reshape(g_count, n, steps, 4 * hid)
    hs = np.empty((steps + 1, g_count, n, hid), dtype=DTYPE)
    cs = np.empty((steps + 1, g_count, n, hid), dtype=DTYPE)
    gates = np.empty((steps, g_count, n, 4 * hid), dtype=DTYPE)
    hs[0] = h0.data.reshape(g_count, n, hid)
    cs[0] = c0.data.reshape(g_count, n, hid)
    for t in range(steps):
        z = xw[:, :, t] + hs[t] @ wh
        # tanh(z) = 2 sigmoid(2z) - 1, so one sigmoid call covers all gates
        z[..., 2 * hid : 3 * hid] *= 2.0
        act = gates[t]
        _sigmoid(z, out=act)
        act[..., 2 * hid : 3 * hid] *= 2.0
        act[..., 2 * hid : 3 * hid] -= 1.0
        i, f, g = act[..., :hid], act[..., hid : 2 * hid], act[..., 2 * hid : 3 * hid]
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = act[..., 3 * hid :] * np.tanh(cs[t + 1])

    def backward(out):
        d_h_seq = out.grad.reshape(g_count, n, steps, hid)
        dz_all = np.empty((g_count, n, steps, 4 * hid), dtype=DTYPE)
        dw_hh = np.zeros_like(wh)
        dh_next = np.zeros((g_count, n, hid), dtype=DTYPE)
        dc_next = np.zeros((g_count, n, hid), dtype=DTYPE)
        wh_t = np.swapaxes(wh, -1, -2)
        for t in range(steps - 1, -1, -1):
            act = gates[t]
            i, f, g, o = act[..., :hid], act[..., hid : 2 * hid], act[..., 2 * hid : 3 * hid], act[..., 3 * hid :]
            tc = np.tanh(cs[t + 1])
            dh = d_h_seq[:, :, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, :, t]
            dz[..., :hid] = dc * g * i * (1.0 - i)
            dz[..., hid : 2 * hid] = dc * cs[t] * f * (1.0 - f)
            dz[..., 2 * hid : 3 * hid] = dc * i * (1.0 - g * g)
            dz[..., 3 * hid :] = dh * tc * o * (1.0 - o)
            dw_hh += np.swapaxes(hs[t], -1, -2) @ dz
            dh_next = dz @ wh_t
            dc_next = dc * f
        flat_dz = dz_all.reshape(g_count, n * steps, 4 * hid)
        if w_hh.requires_grad:
            w_hh._accumulate(dw_hh.reshape(w_hh.shape))
        if w_ih.requires_grad:
            w_ih._accumulate((np.swapaxes(xg, -1, -2) @ flat_dz).reshape(w_ih.shape))
        if bias.requires_grad:
            bias._accumulate(flat_dz.sum(axis=1).reshape(bias.shape))
        if x.requires_grad:
            x._accumulate((flat_dz @ np.swapaxes(wi, -1, -2)).reshape(x.shape))
        if h0.requires_grad:
            h0._accumulate(dh_next.reshape(h0.shape))
        if c0.requires_grad:
            c0._accumulate(dc_next.reshape(c0.shape))

    h_seq = np.ascontiguousarray(hs[1:].transpose(1, 2, 0, 3))  # (G, N, T, h)
    out_shape = (*lead, n, steps, hid)
    out = make_node(h_seq.reshape(out_shape), (x, w_ih, w_hh, bias, h0, c0), backward)
    final_shape = (*lead, n, hid)
    return out, (hs[steps].reshape(final_shape).copy(), cs[steps].reshape(final_shape).copy())


def lstm_sequence_reference(x: np.ndarray, w_ih: np.ndarray, w_hh: np.ndarray, bias: np.ndarray,
                            h0: Optional[np.ndarray] = None, c0: Optional[np.ndarray] = None):
    """Plain step-by-step forward used as a cross-check in tests."""
    n, steps, _ = x.shape
    hid = w_hh.shape[0]
    h = np.zeros((n, hid)) if h0 is None else h0.copy()
    c = np.zeros((n, hid)) if c0 is None else c0.copy()
    out = []
    for t in range(steps):
        z = x[:, t] @ w_ih + h @ w_hh + bias
        i = 1 / (1 + np.exp(-z[:, :hid]))
        f = 1 / (1 + np.exp(-z[:, hid : 2 * hid]))
        g = np.tanh(z[:, 2 * hid : 3 * hid])
        o = 1 / (1 + np.exp(-z[:, 3 * hid :]))
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return (np.stack(out, axis=1) if out else np.zeros((n, 0, hid))), (h, c)
