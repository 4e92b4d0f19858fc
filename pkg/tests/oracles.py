"""Independent reference implementations used by the tests.

Everything here is written with explicit Python loops over scalars (``math``
only, numpy just for containers) so that it shares no code path with the
vectorised library.
"""

import math

import numpy as np


def matmul(a, b):
    n, m = len(a), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(len(b)):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def dense_normalized_adjacency(n, edges):
    a = np.eye(n)
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = a[i, j] / math.sqrt(deg[i] * deg[j])
    return out


def neighbours(n, edges):
    nb = [set() for _ in range(n)]
    for u, v in edges:
        if u != v:
            nb[u].add(v)
            nb[v].add(u)
    return [sorted(s) for s in nb]


def _relu(x):
    return [max(0.0, v) for v in x]


def _vecmat(x, w, b):
    return [sum(x[t] * w[t][j] for t in range(len(x))) + b[0][j] for j in range(len(w[0]))]


def mlp(x, weights, n_layers):
    out_h, out_z = [], []
    for row in x:
        h = list(row)
        hidden = h
        for l in range(n_layers - 1):
            hidden = _relu(_vecmat(h, weights[f"W{l}"], weights[f"b{l}"]))
            h = hidden
        out_h.append(hidden)
        out_z.append(_vecmat(h, weights[f"W{n_layers - 1}"], weights[f"b{n_layers - 1}"]))
    return np.array(out_z), np.array(out_h)


def gcn(x, edges, weights):
    """Per-node aggregation over {v} U N(v) with weights 1/sqrt(d_u d_v), d counting the self loop."""
    n = len(x)
    nb = neighbours(n, edges)
    deg = [len(s) + 1 for s in nb]

    def propagate(rows):
        out = []
        for v in range(n):
            acc = [0.0] * len(rows[0])
            for u in [v] + nb[v]:
                c = 1.0 / math.sqrt(deg[u] * deg[v])
                acc = [a + c * r for a, r in zip(acc, rows[u])]
            out.append(acc)
        return out

    xw = [_vecmat(r, weights["W0"], [[0.0] * len(weights["W0"][0])]) for r in x]
    hidden = [[max(0.0, a + b) for a, b in zip(r, weights["b0"][0])] for r in propagate(xw)]
    hw = [_vecmat(r, weights["W1"], [[0.0] * len(weights["W1"][0])]) for r in hidden]
    logits = [[a + b for a, b in zip(r, weights["b1"][0])] for r in propagate(hw)]
    return np.array(logits), np.array(hidden)


def sage(x, edges, weights):
    """concat(h_v, mean of neighbours) times the stacked [W_self; W_neigh]."""
    n = len(x)
    nb = neighbours(n, edges)

    def layer(rows, l, act):
        w = np.vstack([weights[f"W_self{l}"], weights[f"W_neigh{l}"]])
        out = []
        for v in range(n):
            if nb[v]:
                mean = [sum(rows[u][t] for u in nb[v]) / len(nb[v]) for t in range(len(rows[v]))]
            else:
                mean = [0.0] * len(rows[v])
            z = _vecmat(list(rows[v]) + mean, w, weights[f"b{l}"])
            out.append(_relu(z) if act else z)
        return out

    hidden = layer([list(r) for r in x], 0, True)
    return np.array(layer(hidden, 1, False)), np.array(hidden)


def appnp(x, edges, weights, n_layers, alpha, k_prop):
    h0, hidden = mlp(x, weights, n_layers)
    a = dense_normalized_adjacency(len(x), edges)
    z = h0.copy()
    for _ in range(k_prop):
        new = np.zeros_like(z)
        for i in range(len(x)):
            for c in range(z.shape[1]):
                s = 0.0
                for j in range(len(x)):
                    s += a[i, j] * z[j, c]
                new[i, c] = (1 - alpha) * s + alpha * h0[i, c]
        z = new
    return z, hidden


def group_means(h, group, k):
    d = len(h[0])
    sums = [[0.0] * d for _ in range(k)]
    counts = [0] * k
    for row, c in zip(h, group):
        counts[c] += 1
        for t in range(d):
            sums[c][t] += row[t]
    means = [[s / counts[c] if counts[c] else 0.0 for s in sums[c]] for c in range(k)]
    return np.array(means), np.array([cnt == 0 for cnt in counts])


def l2(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def log_softmax(row, tau=1.0, keep=None):
    keep = keep if keep is not None else [True] * len(row)
    vals = [r / tau for r, k in zip(row, keep) if k]
    m = max(vals)
    lse = m + math.log(sum(math.exp(v - m) for v in vals))
    return [r / tau - lse if k else 0.0 for r, k in zip(row, keep)]


def intra(h, labels, scope, k, tau1):
    protos, empty = group_means([h[i] for i in scope], [labels[i] for i in scope], k)
    keep = [not e for e in empty]
    total, count = 0.0, 0
    for i in scope:
        c = labels[i]
        if empty[c]:
            continue
        mu = [l2(h[i], protos[j]) for j in range(k)]
        total -= log_softmax([-m for m in mu], tau1, keep)[c]
        count += 1
    return total / count if count else 0.0


def inter(ps, pt, tau2, empty_s, empty_t, sign=1.0):
    use = [c for c in range(len(ps)) if not empty_s[c] and not empty_t[c]]
    if len(use) < 2:
        return 0.0
    total = 0.0
    for i in use:
        ls = log_softmax([sign * l2(ps[i], ps[j]) for j in use], tau2)
        lt = log_softmax([sign * l2(pt[i], pt[j]) for j in use], tau2)
        total += sum(math.exp(b) * (b - a) for a, b in zip(ls, lt))
    return total / len(use)


def kd(zs, zt, tau):
    total = 0.0
    for rs, rt in zip(zs, zt):
        ls = log_softmax(rs, tau)
        lt = log_softmax(rt, tau)
        total += sum(math.exp(b) * (b - a) for a, b in zip(ls, lt))
    return tau * tau * total / len(zs)


def cross_entropy(z, rows, y):
    return -sum(log_softmax(z[r])[c] for r, c in zip(rows, y)) / len(rows)


def ranks(x):
    """Average ranks by counting: rank = #smaller + (#equal + 1) / 2."""
    return [sum(1 for b in x if b < a) + (sum(1 for b in x if b == a) + 1) / 2.0 for a in x]


def spearman(x, y):
    rx, ry = ranks(x), ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def spearman_closed_form(x, y):
    """1 - 6 sum d^2 / (m (m^2 - 1)), valid without ties."""
    rx, ry = ranks(x), ranks(y)
    m = len(x)
    return 1.0 - 6.0 * sum((a - b) ** 2 for a, b in zip(rx, ry)) / (m * (m * m - 1))


def accuracy(logits, labels):
    hits = 0
    for row, c in zip(logits, labels):
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        hits += best == c
    return hits / len(labels)


def population_mean_std(values):
    m = sum(values) / len(values)
    return m, math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
