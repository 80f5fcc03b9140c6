"""Pure-numpy kernel implementations (fallback twin of the Cython core).

Every function here has the same signature and in-place semantics as its
compiled counterpart in ``_corecy.pyx``; arrays are 1-D contiguous views of
either float32 or float64.
"""

from __future__ import annotations

import numpy as np


def relu_(x):
    np.maximum(x, 0, out=x)


def relu_dropout_(x, u, keep):
    keep = x.dtype.type(keep)
    mask = (x > 0) & (u < keep)
    np.multiply(x, mask, out=x)
    np.divide(x, keep, out=x)


def backprop_mask_(g, act, keep):
    keep = g.dtype.type(keep)
    np.multiply(g, act > 0, out=g)
    np.divide(g, keep, out=g)


def softplus_floor(raw, out, floor):
    # stable softplus: log1p(exp(-|r|)) + max(r, 0)
    np.abs(raw, out=out)
    np.negative(out, out=out)
    np.exp(out, out=out)
    np.log1p(out, out=out)
    out += np.maximum(raw, 0)
    out += out.dtype.type(floor)


def sigmoid_scale_(dvar, raw):
    dvar /= 1.0 + np.exp(-raw)


def gaussian_nll(mu, var, y, dmu, dvar, scale):
    r = mu - y
    np.divide(r, var, out=dmu)
    loss = 0.5 * float(np.dot(r, dmu)) + 0.5 * float(np.sum(np.log(var)))
    np.multiply(dmu, dmu, out=dvar)
    dvar *= -0.5
    dvar += np.divide(0.5, var, dtype=var.dtype)
    if scale != 1.0:
        dmu *= dmu.dtype.type(scale)
        dvar *= dvar.dtype.type(scale)
    return loss


def adamw_(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    b1 = p.dtype.type(beta1)
    b2 = p.dtype.type(beta2)
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * g * g
    denom = np.sqrt(v / p.dtype.type(bc2))
    denom += p.dtype.type(eps)
    update = (m / p.dtype.type(bc1)) / denom
    if weight_decay:
        update += p.dtype.type(weight_decay) * p
    p -= p.dtype.type(lr) * update


def _weight(params, w_off, fan_in, fan_out):
    return params[w_off:w_off + fan_in * fan_out].reshape(fan_in, fan_out)


def dense_forward(params, w_off, b_off, fan_in, fan_out, xT, acts, head, var,
                  u, dropout, keep, floor):
    """Layer loop over the transposed (features, rows) activation buffer."""
    n_layers = len(w_off)
    cur = 0
    for i in range(n_layers - 1):
        k, width = int(fan_in[i]), int(fan_out[i])
        w = _weight(params, int(w_off[i]), k, width)
        src = xT if i == 0 else acts[:k]
        z = acts[cur:cur + width]
        np.matmul(w.T, src, out=z)
        z += params[int(b_off[i]):int(b_off[i]) + width][:, None]
        if dropout:
            relu_dropout_(z.reshape(-1), u[cur:cur + width].reshape(-1), keep)
        else:
            relu_(z.reshape(-1))
        cur += width
    i = n_layers - 1
    k = int(fan_in[i])
    w = _weight(params, int(w_off[i]), k, 2)
    np.matmul(w.T, acts, out=head)
    head += params[int(b_off[i]):int(b_off[i]) + 2][:, None]
    softplus_floor(head[1], var, floor)


def dense_backward(params, grads, w_off, b_off, fan_in, fan_out, xT, acts,
                   dacts, dhead, dropout, keep, accumulate):
    def store(view, value):
        if accumulate:
            view += value
        else:
            view[...] = value

    n = xT.shape[1]
    n_layers = len(w_off)
    i = n_layers - 1
    k = int(fan_in[i])
    w_head = _weight(params, int(w_off[i]), k, 2)
    store(_weight(grads, int(w_off[i]), k, 2), acts @ dhead.T)
    store(grads[int(b_off[i]):int(b_off[i]) + 2], dhead.sum(axis=1))
    np.matmul(w_head, dhead, out=dacts)

    keep_eff = keep if dropout else 1.0
    cur = acts.shape[0]
    for i in range(n_layers - 2, -1, -1):
        k, width = int(fan_in[i]), int(fan_out[i])
        cur -= width
        dz = dacts[cur:cur + width]
        backprop_mask_(dz.reshape(-1), acts[cur:cur + width].reshape(-1), keep_eff)
        src = xT if i == 0 else acts[:k]
        store(_weight(grads, int(w_off[i]), k, width), src @ dz.T)
        store(grads[int(b_off[i]):int(b_off[i]) + width], dz.sum(axis=1))
        if i > 0:
            w = _weight(params, int(w_off[i]), k, width)
            dacts[:k] += w @ dz
