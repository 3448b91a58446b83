"""Independent brute-force oracles the implementation is checked against.

Everything here is deliberately naive: direct summations, O(n^2) loops,
central finite differences. None of it shares code with src/.
"""

import numpy as np


def finite_diff_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def grad_close(analytic, numeric, tol=1e-4):
    """Relative comparison with an absolute floor of 1 for tiny gradients."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.max(np.abs(analytic - numeric) / denom)


def conv2d_naive(x, w, stride=1, padding=0):
    """Quadruple-loop 2D cross-correlation, (C_in,H,W) x (C_out,C_in,kh,kw)."""
    ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(ci):
                    for a in range(kh):
                        for b in range(kw):
                            acc += xp[c, i * stride + a, j * stride + b] * w[o, c, a, b]
                out[o, i, j] = acc
    return out


def dft2_direct(x):
    """Direct O(N^2)-per-bin 2D DFT (unnormalized forward)."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * hh / h + v * ww / w))
            out[u, v] = np.sum(x * phase)
    return out


def kl_monte_carlo(mu1, lv1, mu2, lv2, n_samples, rng):
    """E_q1[log q1 - log q2] by sampling; returns (estimate, standard error)."""
    std1 = np.exp(0.5 * lv1)
    z = mu1 + std1 * rng.standard_normal((n_samples, mu1.size))
    lq1 = -0.5 * np.sum((z - mu1) ** 2 / np.exp(lv1) + lv1 + np.log(2 * np.pi), axis=1)
    lq2 = -0.5 * np.sum((z - mu2) ** 2 / np.exp(lv2) + lv2 + np.log(2 * np.pi), axis=1)
    diff = lq1 - lq2
    return diff.mean(), diff.std(ddof=1) / np.sqrt(n_samples)


def auroc_pairs(pos, neg):
    """Pair-counting AUROC with half credit for ties."""
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def auprc_sweep(scores, labels):
    """Average precision by explicit sweep over distinct thresholds (desc)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    thresholds = sorted(set(scores.tolist()), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        sel = scores >= t
        tp = int((labels[sel] == 1).sum())
        precision = tp / int(sel.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def fpr_at_tpr_sweep(scores, labels, target=0.8):
    """FPR at the largest threshold with TPR >= target (classify score >= t)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    best_t = None
    for t in sorted(set(scores.tolist()), reverse=True):
        tpr = int((labels[scores >= t] == 1).sum()) / n_pos
        if tpr >= target:
            best_t = t
            break
    assert best_t is not None
    return int((labels[scores >= best_t] == 0).sum()) / n_neg
