"""Independent oracles and synthetic fixtures shared by the test modules.

The Gaussian-world oracles are written from the posterior form of the DDPM
step, q(x_{t-1} | x_t, x0), not from the noise-prediction form used by the
library, so the two routes only agree if the algebra does.
"""

import math

import numpy as np

from guided_uie.image_core import gaussian_blur


def schedule_arrays(T, beta_start, beta_end):
    betas = [beta_start + (beta_end - beta_start) * i / (T - 1) if T > 1 else beta_start for i in range(T)]
    abar = [1.0]
    for b in betas:
        abar.append(abar[-1] * (1.0 - b))
    return [0.0] + betas, abar


def posterior_mean_coeffs(abar_t, m, v):
    """E[x0 | x_t] = p * x_t + q for x0 ~ N(m, v), x_t = sqrt(abar) x0 + sqrt(1-abar) eps (Bayes)."""
    # joint Gaussian: Cov(x0, x_t) = sqrt(abar) v, Var(x_t) = abar v + 1 - abar
    var_xt = abar_t * v + 1.0 - abar_t
    p = math.sqrt(abar_t) * v / var_xt
    q = m - p * math.sqrt(abar_t) * m
    return p, q


def ddpm_step_coeffs(abar_t, abar_prev):
    """Posterior-form mean: mu = c0 * x0 + ct * x_t for a jump t -> t_prev."""
    alpha = abar_t / abar_prev
    beta = 1.0 - alpha
    c0 = math.sqrt(abar_prev) * beta / (1.0 - abar_t)
    ct = math.sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar_t)
    return c0, ct, beta


def gaussian_world_ddpm_moments(T, beta_start, beta_end, m, v, scale=0.0, target=0.0, posterior_var=True,
                                on_x0=True):
    """Per-step (mean, variance) of a DDPM chain, optionally guided by s * (target - z).

    z is the clean estimate x0_est when ``on_x0`` and the current sample otherwise.

    Returns the list of (A, B, Sigma) step maps and the propagated moments,
    starting from x_T ~ N(0, 1).
    """
    _, abar = schedule_arrays(T, beta_start, beta_end)
    M, V = 0.0, 1.0
    maps, moments = [], [(M, V)]
    for t in range(T, 0, -1):
        p, q = posterior_mean_coeffs(abar[t], m, v)
        c0, ct, beta = ddpm_step_coeffs(abar[t], abar[t - 1])
        # mu + s * (target - z), z = p x + q (x0 estimate) or z = x
        zp, zq = (p, q) if on_x0 else (1.0, 0.0)
        A = c0 * p + ct - scale * zp
        B = c0 * q + scale * (target - zq)
        if t == 1:
            sigma = 0.0
        elif posterior_var:
            sigma = (1.0 - abar[t - 1]) / (1.0 - abar[t]) * beta
        else:
            sigma = beta
        M = A * M + B
        V = A * A * V + sigma
        maps.append((A, B, sigma))
        moments.append((M, V))
    return maps, moments


def gaussian_world_ddim_map(T, beta_start, beta_end, m, v, scale, target, x):
    """Elementwise deterministic DDIM chain with guidance folded into the noise estimate."""
    _, abar = schedule_arrays(T, beta_start, beta_end)
    x = np.array(x, dtype=np.float64)
    for t in range(T, 0, -1):
        p, q = posterior_mean_coeffs(abar[t], m, v)
        x0 = p * x + q
        eps = (x - math.sqrt(abar[t]) * x0) / math.sqrt(1.0 - abar[t])
        eps = eps - math.sqrt(1.0 - abar[t]) * scale * (target - x0)
        x0_adj = (x - math.sqrt(1.0 - abar[t]) * eps) / math.sqrt(abar[t])
        x = math.sqrt(abar[t - 1]) * x0_adj + math.sqrt(1.0 - abar[t - 1]) * eps
    return x


class QuadraticMatcher:
    """0.5 * ||x - target||^2 in latent units; records every evaluation point."""

    def __init__(self, target):
        self.target = target
        self.points = []

    def __call__(self, x):
        self.points.append(np.array(x, copy=True))
        d = x - self.target
        return 0.5 * float(np.sum(d * d)), d


def synthetic_scene(rng, size=32, dark_every=6):
    """Smooth colored structure plus texture, with a lattice of black pixels."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.stack(
        [
            0.5 + 0.4 * np.sin(6 * xx + rng.random() * 6),
            0.5 + 0.4 * np.cos(5 * yy + rng.random() * 6),
            0.5 + 0.3 * np.sin(4 * (xx + yy) + rng.random() * 6),
        ],
        axis=-1,
    )
    tex = gaussian_blur(rng.random((size, size, 3)), 1.0)
    x = np.clip(0.7 * base + 0.5 * (tex - 0.5), 0.0, 1.0)
    if dark_every:
        x[::dark_every, ::dark_every] = 0.0
    return x


def naive_ssim(a, b, win=11, sigma=1.5):
    """Direct sliding-window SSIM with an explicitly built 2-D Gaussian window."""
    c1, c2 = 0.01**2, 0.03**2
    r = win // 2
    g = [math.exp(-0.5 * ((i - r) / sigma) ** 2) for i in range(win)]
    s = sum(g)
    g = [v / s for v in g]
    w2 = [[g[i] * g[j] for j in range(win)] for i in range(win)]
    h, wd, ch = a.shape
    total = 0.0
    count = 0
    for c in range(ch):
        acc = 0.0
        n = 0
        for i in range(h - win + 1):
            for j in range(wd - win + 1):
                ma = mb = saa = sbb = sab = 0.0
                for di in range(win):
                    for dj in range(win):
                        wt = w2[di][dj]
                        pa = a[i + di, j + dj, c]
                        pb = b[i + di, j + dj, c]
                        ma += wt * pa
                        mb += wt * pb
                        saa += wt * pa * pa
                        sbb += wt * pb * pb
                        sab += wt * pa * pb
                va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
                n += 1
        total += acc / n
        count += 1
    return total / count


def _srgb_lin(c):
    return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4


def _f(t):
    d = 6 / 29
    return t ** (1 / 3) if t > d**3 else t / (3 * d * d) + 4 / 29


def scalar_lab(r, g, b):
    rl, gl, bl = _srgb_lin(r), _srgb_lin(g), _srgb_lin(b)
    X = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    Y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    Z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl
    Xn = 0.4124564 + 0.3575761 + 0.1804375
    Yn = 0.2126729 + 0.7151522 + 0.0721750
    Zn = 0.0193339 + 0.1191920 + 0.9503041
    fx, fy, fz = _f(X / Xn), _f(Y / Yn), _f(Z / Zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def _percentile(sorted_vals, q):
    # linear interpolation between closest ranks
    pos = (len(sorted_vals) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(sorted_vals) - 1)
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * (pos - lo)


def naive_uciqe(img):
    Ls, Cs, Ss = [], [], []
    h, w, _ = img.shape
    for i in range(h):
        for j in range(w):
            L, a, b = scalar_lab(*img[i, j])
            L /= 100.0
            C = math.sqrt(a * a + b * b) / 100.0
            Ls.append(L)
            Cs.append(C)
            d = math.sqrt(C * C + L * L)
            Ss.append(C / d if d > 0 else 0.0)
    n = len(Cs)
    mc = sum(Cs) / n
    sc = math.sqrt(sum((c - mc) ** 2 for c in Cs) / n)
    Lsorted = sorted(Ls)
    con = _percentile(Lsorted, 99) - _percentile(Lsorted, 1)
    return 0.4680 * sc + 0.2745 * con + 0.2576 * sum(Ss) / n


def naive_uiqm(img, block=8, gamma=1026.0, eps=1e-7):
    h, w, _ = img.shape

    def trimmed(vals):
        s = sorted(vals)
        k = len(s)
        lo = math.ceil(0.1 * k)
        hi = math.floor(0.1 * k)
        kept = s[lo : k - hi]
        mu = sum(kept) / len(kept)
        var = sum((v - mu) ** 2 for v in s) / k
        return mu, var

    rg = [img[i, j, 0] - img[i, j, 1] for i in range(h) for j in range(w)]
    yb = [0.5 * (img[i, j, 0] + img[i, j, 1]) - img[i, j, 2] for i in range(h) for j in range(w)]
    mrg, vrg = trimmed(rg)
    myb, vyb = trimmed(yb)
    uicm = -0.0268 * math.sqrt(mrg**2 + myb**2) + 0.1586 * math.sqrt(vrg + vyb)

    def px(ch, i, j):
        i = min(max(i, 0), h - 1)
        j = min(max(j, 0), w - 1)
        return ch[i][j]

    def sobel(ch):
        out = [[0.0] * w for _ in range(h)]
        for i in range(h):
            for j in range(w):
                gx = (px(ch, i - 1, j + 1) + 2 * px(ch, i, j + 1) + px(ch, i + 1, j + 1)) - (
                    px(ch, i - 1, j - 1) + 2 * px(ch, i, j - 1) + px(ch, i + 1, j - 1)
                )
                gy = (px(ch, i + 1, j - 1) + 2 * px(ch, i + 1, j) + px(ch, i + 1, j + 1)) - (
                    px(ch, i - 1, j - 1) + 2 * px(ch, i - 1, j) + px(ch, i - 1, j + 1)
                )
                out[i][j] = math.sqrt(gx * gx + gy * gy)
        return out

    def blocks(ch):
        for bi in range(h // block):
            for bj in range(w // block):
                vals = [ch[bi * block + di][bj * block + dj] for di in range(block) for dj in range(block)]
                yield max(vals), min(vals)

    nblocks = (h // block) * (w // block)
    uism = 0.0
    for c, wc in enumerate((0.299, 0.587, 0.114)):
        ch = [[img[i, j, c] * 255.0 for j in range(w)] for i in range(h)]
        e = sum(math.log((mx + eps) / (mn + eps)) for mx, mn in blocks(sobel(ch)))
        uism += wc * 2.0 / nblocks * e

    gray = [[(0.299 * img[i, j, 0] + 0.587 * img[i, j, 1] + 0.114 * img[i, j, 2]) * 255.0 for j in range(w)] for i in range(h)]
    s = 0.0
    for mx, mn in blocks(gray):
        top = gamma * (mx - mn) / (gamma - mn)
        bot = mx + mn - mx * mn / gamma
        r = top / bot if bot > 0 else 0.0
        s += r * math.log(r + eps)
    uiconm = gamma - gamma * (1 - s / gamma) ** (1.0 / nblocks)
    return 0.0282 * uicm + 0.2953 * uism + 3.5753 * uiconm


def degraded_suite(n=20, size=32, seed=0):
    """(clean, degraded, true params) triples with a blue-green cast and T0 in [0.3, 0.9]."""
    from guided_uie.degradation import synthesize_underwater

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = synthetic_scene(rng, size)
        A = np.array([rng.uniform(0.05, 0.25), rng.uniform(0.4, 0.7), rng.uniform(0.5, 0.8)])
        y, params = synthesize_underwater(x, A, rng.uniform(0.3, 0.9), rng)
        out.append((x, y, params))
    return out
