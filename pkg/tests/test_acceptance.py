"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even without ``-s``).
"""

import csv
import math
import time
from dataclasses import asdict

import numpy as np
import pytest

from guided_uie.cli import main
from guided_uie.config import RunConfig, ablation_preset
from guided_uie.degradation import DegradationParams, compose, estimate_params, refine_transmission
from guided_uie.diffusion import (
    GaussianWorldPredictor,
    forward_sample,
    linear_schedule,
    predict_x0,
    sample_ddim,
    sample_ddpm,
)
from guided_uie.fileio import save_image
from guided_uie.guidance import (
    EnhanceRequest,
    GuidanceConfig,
    Sampler,
    Variant,
    guided_ddim_enhance,
    guided_ddpm_enhance,
    guided_step_distribution,
    match_loss_underwater,
)
from guided_uie.losses import FeatureExtractor, LossWeights, gradcheck, mae, ms_ssim, perceptual, quality_proxy, total_loss
from guided_uie.metrics import psnr, ssim, uciqe, uiqm

from helpers import QuadraticMatcher, degraded_suite, gaussian_world_ddpm_moments, naive_ssim, naive_uciqe, naive_uiqm


@pytest.fixture
def report(capsys):
    """Print exactly one verdict line for the criterion, then fail the test if it did not pass."""

    def emit(name, ok, detail, elapsed, limit=None):
        within = limit is None or elapsed < limit
        verdict = "PASS" if ok and within else "FAIL"
        budget = f" (limit {limit:g} s)" if limit is not None else ""
        with capsys.disabled():
            print(f"\n[{verdict}] {name}: {detail}; {elapsed:.2f} s{budget}")
        assert ok and within, f"{name}: {detail}"

    return emit


def test_inversion(report):
    t0 = time.perf_counter()
    sched = linear_schedule()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        x0 = rng.uniform(-1, 1, (16, 16, 3))
        eps = rng.standard_normal(x0.shape)
        t = int(rng.integers(1, sched.T + 1))
        worst = max(worst, float(np.max(np.abs(predict_x0(forward_sample(x0, t, eps, sched), eps, t, sched) - x0))))
    report("forward/x0-prediction inversion", worst < 1e-5, f"max abs error {worst:.2e} over 100 triples (< 1e-5)",
           time.perf_counter() - t0, 1.0)


def test_gaussian_world_unguided(report):
    t0 = time.perf_counter()
    T, b0, b1, m, v = 50, 1e-3, 0.2, 0.3, 0.25
    sched = linear_schedule(T, b0, b1)
    x = sample_ddpm(GaussianWorldPredictor(m, v, sched), sched, (40, 50, 1), np.random.default_rng(1)).ravel()
    M, V = gaussian_world_ddpm_moments(T, b0, b1, m, v)[1][-1]
    se = math.sqrt(V / x.size)
    z = abs(x.mean() - M) / se
    rel = abs(x.var() / V - 1)
    report("Gaussian-world unguided DDPM", z < 3 and rel < 0.05,
           f"2000 chains: mean off by {z:.2f} SE (< 3), variance off by {100 * rel:.2f}% (< 5%)",
           time.perf_counter() - t0, 30.0)


def test_gaussian_world_guided(report):
    t0 = time.perf_counter()
    T, b0, b1, m, v, target = 50, 1e-3, 0.2, 0.2, 0.3, 0.7
    sched = linear_schedule(T, b0, b1)
    pred = GaussianWorldPredictor(m, v, sched)
    det_err, zs = 0.0, []
    for s in (0.1, 1.0):
        cfg = GuidanceConfig(variant=Variant.X0_NATURAL, scale=s, steps=T, seed=11)
        _, moments = gaussian_world_ddpm_moments(T, b0, b1, m, v, s, target)
        mean, var = 0.0, 1.0
        for i, t in enumerate(range(T, 0, -1)):
            d0 = guided_step_distribution(np.zeros((1, 1, 1)), t, t - 1, cfg, pred, sched, QuadraticMatcher(target))[0]
            d1 = guided_step_distribution(np.ones((1, 1, 1)), t, t - 1, cfg, pred, sched, QuadraticMatcher(target))[0]
            A, B = float(d1.mu[0, 0, 0] - d0.mu[0, 0, 0]), float(d0.mu[0, 0, 0])
            mean, var = A * mean + B, A * A * var + (d0.sigma2 if t > 1 else 0.0)
            det_err = max(det_err, abs(mean - moments[i + 1][0]), abs(var - moments[i + 1][1]))
        out, _ = guided_ddpm_enhance(EnhanceRequest(y=np.zeros((40, 50, 1))), cfg, pred, sched,
                                     matcher=QuadraticMatcher(target), latent=True)
        M, V = moments[-1]
        se = math.sqrt(V / out.size)
        zs.append(abs(out.mean() - M) / se if se > 0 else (0.0 if abs(out.mean() - M) < 1e-12 else math.inf))
    ok = det_err < 1e-6 and max(zs) < 3
    report("Gaussian-world guided (X0, quadratic loss, s in {0.1, 1})", ok,
           f"propagated scalars max error {det_err:.1e} (< 1e-6); MC terminal mean off by "
           f"{zs[0]:.2f} / {zs[1]:.2f} SE (< 3; s = 1 collapses to a point)",
           time.perf_counter() - t0, 60.0)


def test_gradient_suite(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    a = rng.random((48, 48, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    c = rng.random((64, 64, 3))
    fx = FeatureExtractor(0)
    w = LossWeights()
    y_clean = rng.random((32, 32, 3))
    latent = rng.uniform(-0.9, 0.9, (32, 32, 3))
    params = DegradationParams(np.broadcast_to([0.1, 0.5, 0.6], (32, 32, 3)), rng.uniform(0.3, 0.9, (32, 32, 1)))
    errs = {
        "mae": gradcheck(lambda x: mae(a, x), b, h=1e-3, mask=np.abs(a - b) > 1e-2),
        "ms_ssim": gradcheck(lambda x: ms_ssim(c, x), rng.random((64, 64, 3)), h=1e-3),
        "perceptual": gradcheck(lambda x: perceptual(a, x, fx), b, h=1e-5),
        "quality_proxy": gradcheck(quality_proxy, c, h=1e-6),
        "total_loss": gradcheck(lambda x: total_loss(a, x, w, fx), b, h=1e-6),
        "underwater grad_x": gradcheck(lambda z: match_loss_underwater(y_clean, z, params, w, fx)[:2], latent, h=1e-6),
        "underwater grad_T": gradcheck(
            lambda T: (lambda r: (r[0], r[2]))(match_loss_underwater(y_clean, latent, DegradationParams(params.A, T), w, fx)),
            params.T, h=1e-6),
    }
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report("gradient suite (max rel. error < 1e-3)", worst < 1e-3, detail, time.perf_counter() - t0, 60.0)


def test_guidance_off_switch(report):
    t0 = time.perf_counter()
    sched = linear_schedule(30, 1e-3, 0.2)
    pred = GaussianWorldPredictor(0.1, 0.3, sched)
    x, y, params = degraded_suite(1, 16, seed=3)[0]
    mismatches = []
    for sampler in Sampler:
        for variant in Variant:
            steps = 30 if sampler is Sampler.DDPM else 12
            cfg = GuidanceConfig(variant=variant, scale=0.0, sampler=sampler, steps=steps, seed=5,
                                 tlr=1e-3 if variant.underwater else 0.0)
            fn = guided_ddim_enhance if sampler is Sampler.DDIM else guided_ddpm_enhance
            out, _ = fn(EnhanceRequest(y=y, x_hat=x, degradation=params), cfg, pred, sched, latent=True)
            ref = (sample_ddim if sampler is Sampler.DDIM else sample_ddpm)(pred, sched, y.shape,
                                                                             np.random.default_rng(5), steps)
            if out.tobytes() != ref.tobytes():
                mismatches.append(f"{sampler.value}/{variant.value}")
    report("guidance off-switch (s = 0 is bit-exact)", not mismatches,
           f"8 sampler x variant combinations, mismatches: {mismatches or 'none'}", time.perf_counter() - t0)


def test_ddim_determinism(report, tmp_path):
    t0 = time.perf_counter()
    d = tmp_path / "in"
    d.mkdir()
    for i, (_, y, _) in enumerate(degraded_suite(2, 24, seed=4)):
        save_image(y, d / f"s{i}.png")
    args = ["--input", str(d), "--sampler", "ddim", "--steps", "25", "--T", "50", "--beta-start", "1e-3",
            "--beta-end", "0.2", "--predictor", "gaussian:0,0.25", "--scale", "500", "--resize", "0",
            "--seed", "17", "--workers", "2"]
    codes = [main(args + ["--output", str(tmp_path / f"o{k}")]) for k in range(2)]
    same = all((tmp_path / "o0" / f"s{i}.png").read_bytes() == (tmp_path / "o1" / f"s{i}.png").read_bytes()
               for i in range(2))
    report("DDIM determinism (byte-identical PNGs)", codes == [0, 0] and same,
           f"exit codes {codes}, outputs identical: {same}", time.perf_counter() - t0)


def test_degradation_round_trip(report):
    t0 = time.perf_counter()
    suite = degraded_suite(20, 32, seed=5)
    maes, increases = [], 0
    for x, y, _ in suite:
        assert np.any(x == 0.0)
        p = estimate_params(y)
        maes.append(mae(y, np.clip(compose(x, p), 0, 1))[0])
        latent = 2 * x - 1
        for w in (LossWeights.mae_only(), LossWeights()):
            before, _, gT = match_loss_underwater(y, latent, p, w)
            T_new, _ = refine_transmission(p.T, gT, 1e-3)
            p2 = p.copy()
            p2.T = T_new
            after = match_loss_underwater(y, latent, p2, w)[0]
            increases += after > before
    # the blurred observation is a biased background-light estimate, so single instances with a
    # strongly colored A can sit slightly above the suite-level figure
    ok = np.mean(maes) < 0.1 and increases == 0
    report("degradation round trip", ok,
           f"20 instances: estimate-then-degrade MAE {np.mean(maes):.4f} (< 0.1), worst single instance "
           f"{max(maes):.4f}; "
           f"refinement steps that raised the loss: {increases}/40",
           time.perf_counter() - t0)


def test_metric_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    d_ssim = d_uciqe = d_uiqm = 0.0
    for _ in range(20):
        a = rng.random((16, 16, 3))
        b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
        d_ssim = max(d_ssim, abs(ssim(a, b) - naive_ssim(a, b)))
        d_uciqe = max(d_uciqe, abs(uciqe(a) - naive_uciqe(a)))
        img = rng.random((24, 24, 3))
        d_uiqm = max(d_uiqm, abs(uiqm(img) - naive_uiqm(img)))
    g = np.full((8, 8, 3), 0.5)
    p1 = psnr(g, g + 1 / 255)
    p2 = psnr(g, g + 0.1)
    ok = max(d_ssim, d_uciqe, d_uiqm) < 1e-5 and abs(p1 - 48.13) < 0.01 and abs(p2 - 20.0) < 0.01
    report("metric oracles", ok,
           f"max |diff| ssim {d_ssim:.1e}, uciqe {d_uciqe:.1e}, uiqm {d_uiqm:.1e} (< 1e-5); "
           f"psnr {p1:.4f} dB (48.13), {p2:.4f} dB (20)", time.perf_counter() - t0)


def test_end_to_end_enhancement(report, tmp_path):
    t0 = time.perf_counter()
    d = tmp_path / "in"
    d.mkdir()
    for i, (_, y, _) in enumerate(degraded_suite(8, 32, seed=7)):
        save_image(y, d / f"u{i}.png")
    out = tmp_path / "out"
    code = main(["--input", str(d), "--output", str(out), "--labeler", "dcp", "--variant", "x0-natural",
                 "--T", "50", "--steps", "50", "--beta-start", "2e-3", "--beta-end", "0.4",
                 "--predictor", "gaussian:0,0.25", "--scale", "1000", "--resize", "0", "--seed", "0"])
    with open(out / "metrics.csv") as fh:
        mean = next(r for r in csv.DictReader(fh) if r["image"] == "mean")
    vals = {k: float(mean[k]) for k in ("uiqm", "input_uiqm", "uciqe", "input_uciqe")}
    ok = code == 0 and vals["uiqm"] >= vals["input_uiqm"] and vals["uciqe"] >= vals["input_uciqe"]
    report("end-to-end enhancement (aggregate no-reference metrics do not drop)", ok,
           f"UIQM {vals['input_uiqm']:.3f} -> {vals['uiqm']:.3f}, UCIQE {vals['input_uciqe']:.4f} -> {vals['uciqe']:.4f} "
           f"over 8 images", time.perf_counter() - t0, 300.0)


def test_ablation_structure(report):
    t0 = time.perf_counter()
    base = RunConfig(seed=42)
    problems = []

    gv = ablation_preset("guidance-variants", base)
    if [c.variant for c in gv] != [v.value for v in Variant]:
        problems.append("guidance-variants")
    allowed = {"variant", "tlr", "label"}
    for c in gv:
        changed = {k for k, val in asdict(c).items() if asdict(gv[0])[k] != val}
        if not changed <= allowed:
            problems.append(f"guidance-variants differ in {changed - allowed}")

    lt = ablation_preset("loss-terms", base)
    lam = [(c.lambda1, c.lambda2, c.lambda3, c.lambda4) for c in lt]
    if lam != [(0, 0, 0, 0), (1, 0, 0, 0), (1, 0.005, 0, 0), (1, 0.005, 0.001, 0), (1, 0.005, 0.001, 1e-5)]:
        problems.append(f"loss-terms {lam}")

    ss = ablation_preset("sampler-steps", base)
    if sorted((c.sampler, c.steps) for c in ss) != [("ddim", 25), ("ddim", 50), ("ddpm", 50), ("ddpm", 250), ("ddpm", 1000)]:
        problems.append("sampler-steps")

    vs = ablation_preset("variance-shift", base)
    if sorted(c.shift_with_variance for c in vs) != [False, True]:
        problems.append("variance-shift")

    seeds = {c.seed for c in gv + lt + ss + vs}
    if seeds != {42}:
        problems.append(f"seeds {seeds}")
    report("ablation preset structure", not problems,
           f"4 variants / 5 loss rows / DDPM 50,250,1000 + DDIM 25,50 / with-without sigma; "
           f"problems: {problems or 'none'}", time.perf_counter() - t0)
