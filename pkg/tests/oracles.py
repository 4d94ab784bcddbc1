"""Independent brute-force oracles used to freeze expected test values.

These deliberately avoid the library's vectorized code paths: plain Python
loops and numpy scalars only.
"""

import math

import numpy as np


def supcon_reference(z, labels, temperature):
    """Naive triple-loop supervised contrastive loss."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        candidates = [a for a in range(n) if a != i]
        for p in positives:
            num = math.exp(float(np.dot(z[i], z[p])) / temperature)
            den = sum(
                math.exp(float(np.dot(z[i], z[a])) / temperature) for a in candidates
            )
            total += (-1.0 / len(positives)) * math.log(num / den)
    return total


def conv1d_causal_reference(x, w, dilation):
    """Direct-sum dilated causal convolution for (C_in, T) inputs."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    c_out, c_in, k = w.shape
    _, t = x.shape
    y = np.zeros((c_out, t))
    for o in range(c_out):
        for ti in range(t):
            acc = 0.0
            for c in range(c_in):
                for kk in range(k):
                    src = ti - kk * dilation
                    if src >= 0:
                        acc += w[o, c, kk] * x[c, src]
            y[o, ti] = acc
    return y


def lstm_single_step_reference(x, wx, wh, b):
    """One LSTM step from zero state; gate order [i, f, g, o]."""
    x = np.asarray(x, dtype=np.float64)
    h_dim = wh.shape[0]
    gates = x @ wx + np.zeros(h_dim) @ wh + b

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    i = sig(gates[:h_dim])
    g = np.tanh(gates[2 * h_dim : 3 * h_dim])
    o = sig(gates[3 * h_dim :])
    c1 = i * g  # f-gate contributes nothing from a zero cell state
    h1 = o * np.tanh(c1)
    return c1, h1
