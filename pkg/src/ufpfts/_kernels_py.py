"""Pure-Python reference implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation, including the order in
which uniforms are pulled from the generator, so both paths produce the same
chain for the same seed (up to floating-point summation order).
"""
import math

import numpy as np


def bspline_design(knots, degree, x):
    """Evaluate all B-spline basis functions at each point of ``x``.

    Uses the triangular Cox-de Boor scheme on the single non-zero knot span.
    Points must already be inside ``[knots[0], knots[-1]]``; at the right
    endpoint the last basis function equals 1.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    p = int(degree)
    nb = knots.size - p - 1
    out = np.zeros((x.size, nb))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    hi = knots[nb]
    for r, xv in enumerate(x):
        if xv >= hi:
            span = nb - 1
            # skip back over zero-length spans at the clamped end
            while span > p and knots[span] == knots[span + 1]:
                span -= 1
        else:
            span = int(np.searchsorted(knots, xv, side="right")) - 1
            span = min(max(span, p), nb - 1)
        N = [1.0] + [0.0] * p
        for j in range(1, p + 1):
            left[j] = xv - knots[span + 1 - j]
            right[j] = knots[span + j] - xv
            saved = 0.0
            for k in range(j):
                temp = N[k] / (right[k + 1] + left[j - k])
                N[k] = saved + right[k + 1] * temp
                saved = left[j - k] * temp
            N[j] = saved
        out[r, span - p:span + 1] = N
    return out


def _slice_step(rng, x0, logf, width, max_steps):
    f0 = logf(x0)
    logy = f0 + math.log(1.0 - rng.random())
    lo = x0 - width * rng.random()
    hi = lo + width
    j = int(math.floor(max_steps * rng.random()))
    k = max_steps - 1 - j
    while j > 0 and logf(lo) > logy:
        lo -= width
        j -= 1
    while k > 0 and logf(hi) > logy:
        hi += width
        k -= 1
    while True:
        x1 = lo + rng.random() * (hi - lo)
        if logf(x1) > logy:
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1


def slice_logvar(rng, eta, w, berr, n, sse, eta_mean, eta_sd, tau_eta,
                 width_eta, width_w, max_steps):
    """One sweep of univariate slice updates over ``eta`` then ``w``, in place.

    Targets, per coordinate, the log density
    ``sum_s(-n_s v_s / 2 - sse_s exp(-v_s) / 2) + log prior`` where
    ``v = berr @ eta + w`` is the log residual variance.
    """
    berr = np.asarray(berr, dtype=float)
    n = np.asarray(n, dtype=float)
    sse = np.asarray(sse, dtype=float)
    v = berr @ eta + w
    inv2g2 = 0.5 / (eta_sd * eta_sd)

    for l in range(eta.size):
        idx = np.flatnonzero(berr[:, l])
        b = berr[idx, l]
        nl = n[idx]
        sl = sse[idx]
        vbase = v[idx] - b * eta[l]

        def logf(x):
            vv = vbase + b * x
            with np.errstate(over="ignore", invalid="ignore"):
                e = np.where(sl > 0.0, sl * np.exp(-vv), 0.0)
            return -0.5 * float(np.sum(nl * vv + e)) - (x - eta_mean) ** 2 * inv2g2

        new = _slice_step(rng, eta[l], logf, width_eta, max_steps)
        v[idx] = vbase + b * new
        eta[l] = new

    inv2t2 = 0.5 / (tau_eta * tau_eta)
    for s in range(w.size):
        base = v[s] - w[s]
        ns = n[s]
        ss = sse[s]

        def logf_w(x):
            vv = base + x
            val = -0.5 * ns * vv - x * x * inv2t2
            if ss > 0.0:
                if vv < -700.0:
                    return -math.inf
                val -= 0.5 * ss * math.exp(-vv)
            return val

        new = _slice_step(rng, w[s], logf_w, width_w, max_steps)
        w[s] = new
        v[s] = base + new
