"""Straight-from-the-formula reference implementations.

Everything here is written as plain scalar loops over float64 numpy inputs,
deliberately independent of the package's tensor graph, so the two routes
can be compared within tight tolerances.
"""

import math

import numpy as np


def feature_difference(za, zb):
    b, d = za.shape
    out = np.zeros((b, d))
    for i in range(b):
        for j in range(d):
            out[i, j] = abs(za[i, j] - zb[i, j])
    return out


def cross_correlation(d1, d2, center=False, tol=1e-12):
    d1 = np.array(d1, dtype=np.float64)
    d2 = np.array(d2, dtype=np.float64)
    if center:
        d1 = d1 - d1.mean(axis=0, keepdims=True)
        d2 = d2 - d2.mean(axis=0, keepdims=True)
    b, d = d1.shape
    c = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            num = 0.0
            n1 = 0.0
            n2 = 0.0
            for k in range(b):
                num += d1[k, i] * d2[k, j]
                n1 += d1[k, i] ** 2
                n2 += d2[k, j] ** 2
            n1 = math.sqrt(n1)
            n2 = math.sqrt(n2)
            if n1 < tol or n2 < tol:
                c[i, j] = 0.0
            else:
                c[i, j] = num / (n1 * n2)
    return c


def barlow_loss(c, lam):
    d = c.shape[0]
    inv = 0.0
    red = 0.0
    for i in range(d):
        inv += 1.0 - c[i, i] ** 2
        for j in range(d):
            if j != i:
                red += c[i, j] ** 2
    return inv + lam * red


def kl_divergence(p, q, floor=1e-12):
    p = np.atleast_2d(np.array(p, dtype=np.float64))
    q = np.atleast_2d(np.array(q, dtype=np.float64))
    total = 0.0
    for row_p, row_q in zip(p, q):
        acc = 0.0
        for pi, qi in zip(row_p, row_q):
            if pi > 0:
                acc += pi * math.log(max(pi, floor) / max(qi, floor))
        total += acc
    return total / p.shape[0]


def softmax(z):
    z = np.array(z, dtype=np.float64)
    out = np.zeros_like(z)
    for i in range(z.shape[0]):
        m = max(z[i])
        e = [math.exp(v - m) for v in z[i]]
        s = sum(e)
        out[i] = [v / s for v in e]
    return out


def invariant_prediction_loss(z0p, z0pp, z1p, z1pp):
    def js(a, b):
        m = 0.5 * (a + b)
        return 0.5 * (kl_divergence(a, m) + kl_divergence(b, m))

    return js(softmax(z0p), softmax(z0pp)) + js(softmax(z1p), softmax(z1pp))


def gram_similarity(fa, fb):
    b = fa.shape[0]
    fa = fa.reshape(b, -1)
    fb = fb.reshape(b, -1)
    g = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            acc = 0.0
            for k in range(fa.shape[1]):
                acc += fa[i, k] * fb[j, k]
            g[i, j] = acc
    return g


def change_consistency_loss(gp, gpp):
    b = gp.shape[0]
    acc = 0.0
    for i in range(b):
        for j in range(b):
            acc += (gp[i, j] - gpp[i, j]) ** 2
    return acc / (b * b)


def total_loss(ssl, ip, cr, alpha, beta):
    return ssl + alpha * ip + beta * cr


def matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d(x, w, stride=1, padding=0):
    b, c, h, ww = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((b, o, ho, wo))
    for bi in range(b):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    xp[bi, ci, yi * stride + ki, xi * stride + kj]
                                    * w[oi, ci, ki, kj]
                                )
                    out[bi, oi, yi, xi] = acc
    return out


def f1_score(tp, fp, fn):
    if tp + fp == 0:
        precision = 1.0 if fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * recall * precision / (recall + precision)


def confusion(pred, gt):
    tp = fp = tn = fn = 0
    for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn
