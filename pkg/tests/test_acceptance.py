"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines appear in the terminal summary (and on stdout with ``-s``).
The reduced-data experiment is trained once per session and its models are
reused by the forcing and ambiguity criteria. Expect roughly 35 minutes on
a single CPU core.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scnlab import tensor as T
from scnlab.evaluation import (ExperimentSpec, appearance_predict, cumulative_error_distribution,
                               forcing_fraction, mislocalization_rate, point_to_point_error,
                               run_experiment, split_pool, write_reports)
from scnlab.heatmap import HeatmapConfig, extract_landmarks, target_stack
from scnlab.model import NetConfig, build, build_scn, forward, predict, scn_forward
from scnlab.synth import GenConfig, generate_dataset, generate_sample, generate_samples
from scnlab.training import (Checkpoint, Hyperparams, batch_arrays, load_checkpoint, save_checkpoint,
                             train)

POOL_SIZE, N_TEST = 400, 100


def verdict(request, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    request.config.acceptance_lines.append(line)
    print(line)
    return ok


def rel_error(analytic, numeric):
    return np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)


def grad_rel_errors(loss_fn, params):
    with T.Tape() as tape:
        loss = loss_fn()
    T.backward(tape, loss, params)
    analytic = [p.grad.copy() for p in params]
    numeric = T.finite_diff_grad(lambda: loss_fn().item(), params)
    return [rel_error(a, n) for a, n in zip(analytic, numeric)]


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    pool = generate_samples(GenConfig(), POOL_SIZE)
    spec = ExperimentSpec()
    t0 = time.time()
    result = run_experiment(spec, pool, keep_models=True)
    elapsed = time.time() - t0
    write_reports(result, tmp_path_factory.mktemp("reports"), spec.thresholds)
    return spec, pool, result, elapsed


# 1 ---------------------------------------------------------------------------

def test_gradient_correctness(request):
    t0 = time.time()
    rng = np.random.default_rng(0)

    def u(*shape):
        return T.Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)

    a, b = u(2, 4, 4), u(2, 4, 4)
    k, bias = u(3, 2, 3, 3), u(3)
    ops = {
        "conv2d": (lambda: T.conv2d(a, k, bias), [a, k, bias]),
        "avg_downsample": (lambda: T.avg_downsample(a, 2), [a]),
        "upsample_nearest": (lambda: T.upsample_nearest(a, 2), [a]),
        "leaky_relu": (lambda: T.leaky_relu(a, 0.1), [a]),
        "elementwise_mul": (lambda: T.mul(a, b), [a, b]),
        "add": (lambda: T.add(a, b), [a, b]),
        "concat": (lambda: T.concat([a, b]), [a, b]),
    }
    worst = {}
    for name, (fn, params) in ops.items():
        target = rng.uniform(-1, 1, size=fn().shape)
        worst[name] = max(grad_rel_errors(lambda: T.mse_loss(fn(), target), params))

    cfg = NetConfig(height=8, width=8, n_landmarks=2, la_channels=3, sc_channels=3, seed=0)
    for kind in ("scn", "baseline"):
        p = build(kind, cfg, dtype=np.float64)
        for t in p.parameters():
            t.data[...] = rng.uniform(-1, 1, size=t.shape)
        img = rng.uniform(-1, 1, size=(1, 8, 8))
        target = rng.uniform(-1, 1, size=(2, 8, 8))
        fwd = (lambda: scn_forward(p, img).h) if kind == "scn" else (lambda: forward(p, img))
        worst[f"{kind} pipeline"] = max(grad_rel_errors(lambda: T.mse_loss(fwd(), target), p.parameters()))

    elapsed = time.time() - t0
    top = max(worst.values())
    ok = top < 1e-4 and elapsed < 60
    verdict(request, 1, ok, f"max relative gradient error {top:.2e} over {len(worst)} checks "
                            f"(scn pipeline {worst['scn pipeline']:.2e}), {elapsed:.1f}s")
    assert ok, worst


# 2 ---------------------------------------------------------------------------

def test_product_exactness_and_absorption(request):
    cfg = NetConfig()
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, size=(1, 64, 64)).astype(np.float32)
    p = build_scn(cfg)
    for t in p.group("la") + p.group("sc"):
        t.data[...] += rng.normal(0, 0.05, size=t.shape).astype(np.float32)
    out = scn_forward(p, img)
    exact = np.array_equal(out.h.data, out.h_la.data * out.h_sc.data)

    absorbed = []
    for head in ("la.head", "sc.head"):
        q = p.copy()
        q[f"{head}.weight"].data[:] = 0
        q[f"{head}.bias"].data[:] = 0
        absorbed.append(not np.any(scn_forward(q, img).h.data))
    ok = exact and all(absorbed) and np.any(out.h.data)
    verdict(request, 2, ok, f"bitwise product {exact}; zeroed la head -> zero {absorbed[0]}; "
                            f"zeroed sc head -> zero {absorbed[1]}")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_forcing_property(request, experiment):
    spec, pool, result, _ = experiment
    _, test = split_pool(pool, spec.n_test)
    fractions = [forcing_fraction(result.models[("scn", 50, s)], test) for s in spec.seeds]
    med = float(np.median(fractions))
    ok = med >= 0.9
    verdict(request, 3, ok, f"both components above half their max at the groundtruth pixel on "
                            f"{med:.1%} of test landmarks (median of seeds; per seed "
                            f"{', '.join(f'{f:.1%}' for f in fractions)})")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_heatmap_roundtrip(request):
    rng = np.random.default_rng(4)
    cfg = HeatmapConfig()
    h = w = 64
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        pts = []
        while len(pts) < n:
            q = rng.integers(0, [w, h]).astype(float)
            if all(math.dist(q, p) > 4 * cfg.sigma for p in pts):
                pts.append(q)
        lm = np.array(pts)
        if not np.array_equal(extract_landmarks(target_stack(lm, h, w, cfg)), lm):
            failures += 1
    ok = failures == 0
    verdict(request, 4, ok, f"{1000 - failures}/1000 random landmark sets decoded exactly")
    assert ok


# 5 ---------------------------------------------------------------------------

def overfit(kind, sample, budget=2000):
    t0 = time.time()
    first = []

    def stop(epoch, loss):
        if not first:
            first.append(loss)
        return loss < 1e-3 * first[0]

    r = train(kind, [sample], replace(Hyperparams(), epochs=budget), on_epoch=stop)
    return r, r.history[-1] / r.history[0], time.time() - t0


def test_overfit_capacity(request):
    sample = generate_sample(GenConfig(), 0)
    parts, ok = [], True
    for kind in ("scn", "baseline"):
        r, ratio, secs = overfit(kind, sample)
        reached = ratio < 1e-3 and secs < 300
        ok &= reached
        err = point_to_point_error(predict(r.params, sample.image[None]), sample.landmarks).max()
        parts.append(f"{kind} loss ratio {ratio:.2e} after {r.epoch} steps in {secs:.0f}s "
                     f"(max landmark error {err:.2f}px)")
    verdict(request, 5, ok, "; ".join(parts) + " [target < 1e-3 within 2000 steps]")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_reduced_data_comparison(request, experiment):
    spec, _, result, elapsed = experiment
    rows, ok = [], elapsed < 3600
    for size in spec.train_sizes:
        scn = result.median_of_medians("scn", size)
        base = result.median_of_medians("baseline", size)
        ok &= scn <= base and (size != 10 or scn < base)
        rows.append(f"n={size}: scn {scn:.2f}px vs baseline {base:.2f}px")
    verdict(request, 6, ok, "; ".join(rows) + f"; {elapsed / 60:.1f} min")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_ambiguity_resolution(request, experiment):
    spec, pool, result, _ = experiment
    gen = GenConfig()
    clean = generate_samples(replace(gen, noise_amplitude=0.0), spec.n_test, start=len(pool) - spec.n_test)
    radius = gen.min_separation / 2
    ablation, full = [], []
    for s in spec.seeds:
        params = result.models[("scn", 50, s)]
        ablation.append(mislocalization_rate(appearance_predict(params, clean), clean, radius))
        full.append(mislocalization_rate(predict(params, batch_arrays(clean)), clean, radius))
    abl, ful = float(np.median(ablation)), float(np.median(full))
    ok = abl >= 0.10 and ful <= abl / 2
    verdict(request, 7, ok, f"images with a landmark on a distractor: appearance-only {abl:.0%}, "
                            f"full model {ful:.0%} (median of seeds)")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_determinism_and_persistence(request, tmp_path):
    data = generate_samples(GenConfig(), 12)
    hp = Hyperparams(epochs=2)
    paths = []
    for run in ("a", "b"):
        r = train("scn", data, hp)
        save_checkpoint(Checkpoint.from_training(r), tmp_path / f"{run}.ckpt")
        paths.append(tmp_path / f"{run}.ckpt")
    same_ckpt = paths[0].read_bytes() == paths[1].read_bytes()

    save_checkpoint(load_checkpoint(paths[0]), tmp_path / "again.ckpt")
    resave = paths[0].read_bytes() == (tmp_path / "again.ckpt").read_bytes()

    spec = ExperimentSpec(train_sizes=(4, 2), n_test=4, seeds=(0, 1), steps=2)
    csvs = []
    for run in ("a", "b"):
        res = run_experiment(spec, data)
        out = write_reports(res, tmp_path / f"rep_{run}", spec.thresholds)
        csvs.append([out[k].read_bytes() for k in ("report", "ced", "summary")])
    same_csv = csvs[0] == csvs[1]

    generate_dataset(GenConfig(), 3, tmp_path / "d1")
    generate_dataset(GenConfig(), 3, tmp_path / "d2")
    same_data = all(f.read_bytes() == (tmp_path / "d2" / f.name).read_bytes()
                    for f in (tmp_path / "d1").iterdir())

    ok = same_ckpt and resave and same_csv and same_data
    verdict(request, 8, ok, f"checkpoints identical {same_ckpt}; save-load-save identical {resave}; "
                            f"CSVs identical {same_csv}; datasets identical {same_data}")
    assert ok


# 9 ---------------------------------------------------------------------------

coords = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.lists(st.tuples(coords, coords), min_size=n, max_size=n),
    st.lists(st.tuples(coords, coords), min_size=n, max_size=n),
    st.tuples(coords, coords),
    st.integers(1, 50),
    st.lists(st.floats(0, 50), min_size=1, max_size=20))))
def metric_case(case):
    pred, gt, shift, k, thresholds = case
    pred, gt = np.array(pred), np.array(gt)
    e = point_to_point_error(pred, gt)
    moved = point_to_point_error(pred + shift, gt + shift)
    assert np.allclose(moved, e, rtol=1e-9, atol=1e-9)
    assert np.array_equal(e, point_to_point_error(gt, pred)) and np.all(e >= 0)
    # scaled 3-4-5 and 5-12-13 triangles are exact in floating point
    assert point_to_point_error([[3.0 * k, 4.0 * k]], [[0.0, 0.0]])[0] == 5.0 * k
    assert point_to_point_error([[0.0, 0.0]], [[5.0 * k, -12.0 * k]])[0] == 13.0 * k
    t = np.sort(thresholds)
    frac = cumulative_error_distribution(e, t).fractions
    assert np.all(np.diff(frac) >= 0) and frac.min() >= 0 and frac.max() <= 1
    t_end = np.sort(np.append(t, e.max()))
    curve = cumulative_error_distribution(e, t_end)
    assert np.all(curve.fractions[curve.thresholds >= e.max()] == 1.0)


def test_metric_and_ced_properties(request):
    try:
        metric_case()
        ok, detail = True, "1000 randomized cases passed"
    except Exception as exc:
        ok, detail = False, f"counterexample: {type(exc).__name__} {exc}"
    verdict(request, 9, ok, f"translation invariance, symmetry, Pythagorean checks, CED monotone in [0,1]: {detail}")
    assert ok
