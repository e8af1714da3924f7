"""Acceptance criteria, one test each, each reporting a PASS/FAIL line.

Lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from stereo_cnn import cli
from stereo_cnn.cbca import build_crosses, cbca, combined_support, support_region
from stereo_cnn.costvolume import INVALID_COST, CostVolume, cnn_cost_volume
from stereo_cnn.dataset import ExampleSet, SamplingParams, extract_examples
from stereo_cnn.imaging import DisparityMap, PixelPos, normalize_image
from stereo_cnn.neuralnet import (
    Architecture,
    TrainSchedule,
    accuracy,
    forward_pair,
    init_params,
    _head_forward,
    _tower_forward,
    loss_and_gradient,
    sgd_train,
)
from stereo_cnn.pipeline import PipelineConfig, evaluate, predict
from stereo_cnn.postproc import bilateral_filter, FilterParams, interpolate, lr_check, median_filter, subpixel, wta
from stereo_cnn.sgm import SgmParams, direction_cost, penalty_volumes, sgm
from stereo_cnn.synthetic import random_two_plane_scene

EVAL_SEEDS = range(10)


def report(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# --- 1 ---------------------------------------------------------------------------------


def relu_pattern(params, batch):
    """On/off state of every ReLU unit for ``batch``."""
    B = len(batch)
    a3, (_, a1, _, a2, _) = _tower_forward(params, np.concatenate([batch.left, batch.right]))
    acts = _head_forward(params, np.concatenate([a3[:B], a3[B:]], axis=1))
    return np.concatenate([a.ravel() > 0 for a in (a1, a2, a3, *acts[1:-1])])


def central_difference(params, batch, t, i, h):
    orig = t.flat[i]
    t.flat[i] = orig + h
    lp, _ = loss_and_gradient(params, batch)
    plus = relu_pattern(params, batch)
    t.flat[i] = orig - h
    lm, _ = loss_and_gradient(params, batch)
    minus = relu_pattern(params, batch)
    t.flat[i] = orig
    return (lp - lm) / (2 * h), np.array_equal(plus, minus)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def test_criterion_1_gradient_check():
    start = time.perf_counter()
    arch = Architecture(patch_size=5, conv_size=3, n_kernels=4, feat_width=8, fc_width=8, fc_layers=4)
    h = 1e-4
    worst = worst_all = worst_kink = 0.0
    checked = kinks = 0
    for draw in range(20):
        rng = np.random.default_rng([draw, 1])
        params = init_params(arch, draw, np.float64)
        for b in params.biases:
            b[:] = rng.uniform(-0.5, 0.5, b.shape)
        batch = ExampleSet(
            rng.standard_normal((4, 5, 5)), rng.standard_normal((4, 5, 5)), rng.integers(0, 2, 4).astype(np.uint8)
        )
        _, grads = loss_and_gradient(params, batch)
        for t, g in zip(params.tensors(), grads.tensors()):
            for i in range(t.size):
                fd, smooth = central_difference(params, batch, t, i, h)
                rel = relative_error(fd, g.flat[i])
                worst_all = max(worst_all, rel)
                if smooth:
                    worst = max(worst, rel)
                    checked += 1
                    continue
                # The +-h stencil straddles a ReLU kink, where a central difference
                # does not estimate the derivative; use a step that stays on one side.
                kinks += 1
                step = h
                while not smooth and step > 1e-9:
                    step /= 10
                    fd, smooth = central_difference(params, batch, t, i, step)
                worst_kink = max(worst_kink, relative_error(fd, g.flat[i]) if smooth else np.inf)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and worst_kink < 1e-4 and elapsed < 30
    report(
        1,
        ok,
        f"max relative gradient error {worst:.2e} over {checked} entries at h=1e-4 (< 1e-4); "
        f"stencils crossing a ReLU kink: {kinks} (error {worst_all:.1e} there at h=1e-4, "
        f"{worst_kink:.1e} with a smaller one-sided-of-kink step); {elapsed:.1f} s (< 30 s)",
    )
    assert worst < 1e-4
    assert worst_kink < 1e-4
    assert elapsed < 30


# --- 2 ---------------------------------------------------------------------------------


def test_criterion_2_full_resolution_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    params = init_params(Architecture(), 2).astype(np.float64)
    L, R = rng.standard_normal((24, 24)), rng.standard_normal((24, 24))
    d_max = 6
    vol = cnn_cost_volume(params, L, R, d_max)
    n = params.arch.patch_size
    worst, checked, mask_ok = 0.0, 0, True
    for y in range(vol.height):
        for x in range(vol.width):
            for d in range(d_max + 1):
                expect_valid = x - d >= 0
                mask_ok &= bool(vol.valid[y, x, d]) == expect_valid
                if not expect_valid:
                    continue
                _, bad = forward_pair(params, L[y : y + n, x : x + n], R[y : y + n, x - d : x - d + n])
                worst = max(worst, abs(vol.costs[y, x, d] - bad))
                checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and mask_ok and elapsed < 30
    report(2, ok, f"{checked} cells, max |difference| {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 30 s)")
    assert mask_ok
    assert worst <= 1e-6
    assert elapsed < 30


# --- 3 ---------------------------------------------------------------------------------


def test_criterion_3_sgm_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    directions = ((1, 0), (-1, 0), (0, 1), (0, -1))
    path_worst = 0.0
    for k in range(200):
        n = int(rng.integers(1, 7))
        D = int(rng.integers(1, 6))
        r = directions[k % 4]
        shape = (1, n) if r[1] == 0 else (n, 1)
        IL, IR = rng.random(shape), rng.random(shape)
        pi1 = float(rng.uniform(0.1, 2.0))
        params = SgmParams(pi1, pi1 + float(rng.uniform(0.0, 6.0)), float(rng.uniform(0.05, 0.5)))
        costs = rng.random(shape + (D,))
        vol = CostVolume(costs, np.ones(costs.shape, bool))
        out = direction_cost(vol, r, IL, IR, params, normalize=False).costs.reshape(n, D)
        p1, p2 = penalty_volumes(IL, IR, D, r, params)
        p1 = np.broadcast_to(p1, costs.shape).reshape(n, D)
        p2 = p2.reshape(n, D)
        flat = costs.reshape(n, D)
        order = list(range(n)) if r[0] + r[1] > 0 else list(range(n))[::-1]
        for m in range(1, n + 1):
            idx = order[:m]
            expected = oracles.path_energy_by_end(flat[idx], p1[idx], p2[idx])
            path_worst = max(path_worst, float(np.max(np.abs(out[idx[-1]] - expected))))

    wta_agree = 0
    for k in range(50):
        costs = rng.random((8, 8, 4))
        vol = CostVolume(costs, np.ones(costs.shape, bool))
        IL, IR = rng.random((8, 8)), rng.random((8, 8))
        a = wta(sgm(vol, IL, IR, normalize=True)).values
        b = wta(sgm(vol, IL, IR, normalize=False)).values
        wta_agree += int(np.array_equal(a, b))
    elapsed = time.perf_counter() - start
    ok = path_worst <= 1e-9 and wta_agree == 50 and elapsed < 60
    report(
        3,
        ok,
        f"200 scanlines max |path cost - enumeration| {path_worst:.1e}, "
        f"WTA normalized vs plain agree on {wta_agree}/50, {elapsed:.1f} s (< 60 s)",
    )
    assert path_worst <= 1e-9
    assert wta_agree == 50
    assert elapsed < 60


# --- 4 ---------------------------------------------------------------------------------


def test_criterion_4_cbca_oracle():
    rng = np.random.default_rng(4)
    set_mismatches = 0
    worst = 0.0
    for _ in range(50):
        H, W = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        D = int(rng.integers(1, 5))
        levels = int(rng.integers(2, 6))
        tau = float(rng.uniform(0.05, 0.6))
        eta = int(rng.integers(1, 6))
        imgL = np.round(rng.random((H, W)) * levels) / levels
        imgR = np.round(rng.random((H, W)) * levels) / levels
        crL, crR = build_crosses(imgL, tau, eta), build_crosses(imgR, tau, eta)
        for y in range(H):
            for x in range(W):
                if support_region(crL, PixelPos(x, y)) != oracles.support_bruteforce(imgL, (x, y), tau, eta):
                    set_mismatches += 1
                for d in range(D):
                    got = combined_support(crL, crR, PixelPos(x, y), d)
                    if got != oracles.combined_bruteforce(imgL, imgR, (x, y), d, tau, eta):
                        set_mismatches += 1
        valid = rng.random((H, W, D)) > 0.2
        costs = np.where(valid, rng.random((H, W, D)), INVALID_COST)
        out = cbca(CostVolume(costs, valid), crL, crR, 2).costs
        ref = oracles.cbca_bruteforce(costs, valid, imgL, imgR, tau, eta, 2)
        worst = max(worst, float(np.max(np.abs(out - ref))))
    ok = set_mismatches == 0 and worst <= 1e-9
    report(4, ok, f"50 instances, {set_mismatches} region mismatches, max cbca(2) difference {worst:.1e} (<= 1e-9)")
    assert set_mismatches == 0
    assert worst <= 1e-9


# --- 5 ---------------------------------------------------------------------------------


def test_criterion_5_postprocessing_oracles():
    rng = np.random.default_rng(5)
    failures = {"wta": 0, "lr_check": 0, "interpolate": 0, "median": 0, "bilateral": 0}
    for _ in range(50):
        H, W = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        D = int(rng.integers(1, 6))

        valid = rng.random((H, W, D)) > 0.25
        costs = rng.integers(0, 4, (H, W, D)).astype(float)
        got = wta(CostVolume(np.where(valid, costs, INVALID_COST), valid))
        ref, ok = oracles.wta_bruteforce(costs, valid)
        failures["wta"] += not (np.array_equal(got.valid, ok) and np.array_equal(got.values[ok], ref[ok]))

        DL = rng.integers(0, D, (H, W)).astype(float)
        DR = rng.integers(0, D, (H, W)).astype(float)
        labels = lr_check(DisparityMap(DL), DisparityMap(DR), D - 1)
        failures["lr_check"] += not np.array_equal(labels, oracles.lr_bruteforce(DL, DR, D - 1))

        if (labels == 0).any():
            got = interpolate(DisparityMap(DL), labels).values
            failures["interpolate"] += not np.array_equal(got, oracles.interpolate_bruteforce(DL, labels))

        Dm = rng.random((H, W)) * 10
        failures["median"] += not np.allclose(median_filter(DisparityMap(Dm), 5).values, oracles.median_bruteforce(Dm, 5), atol=1e-12)

        I = rng.integers(0, 12, (H, W)).astype(float)
        got = bilateral_filter(DisparityMap(Dm), I, FilterParams()).values
        ref = oracles.bilateral_bruteforce(Dm, I, 5.656, 5.0, 11)
        failures["bilateral"] += not np.allclose(got, ref, atol=1e-9)

    vertex_err, max_shift = 0.0, 0.0
    for _ in range(50):
        D = int(rng.integers(3, 9))
        d_int = int(rng.integers(1, D - 1))
        vertex = d_int + float(rng.uniform(-0.5, 0.5))
        ds = np.arange(D, dtype=float)
        costs = (float(rng.uniform(0.1, 3.0)) * (ds - vertex) ** 2 + float(rng.uniform(-1, 1)))[None, None, :]
        out = subpixel(DisparityMap(np.array([[d_int]], float)), CostVolume(costs, np.ones(costs.shape, bool)))
        vertex_err = max(vertex_err, abs(out.values[0, 0] - vertex))

        H, W = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        rand = rng.random((H, W, D))
        d0 = rng.integers(0, D, (H, W)).astype(float)
        shifted = subpixel(DisparityMap(d0), CostVolume(rand, rng.random((H, W, D)) > 0.1)).values
        max_shift = max(max_shift, float(np.max(np.abs(shifted - d0))))

    bad = {k: v for k, v in failures.items() if v}
    ok = not bad and vertex_err <= 1e-9 and max_shift <= 0.5
    report(
        5,
        ok,
        f"50 instances, oracle failures {bad or 'none'}, subpixel vertex error {vertex_err:.1e} (<= 1e-9), "
        f"max shift {max_shift:.3f} (<= 0.5)",
    )
    assert not bad
    assert vertex_err <= 1e-9
    assert max_shift <= 0.5


# --- 6 ---------------------------------------------------------------------------------


def test_criterion_6_sad_synthetic_accuracy():
    start = time.perf_counter()
    conf = PipelineConfig(d_max=12, backend="sad")
    errors = []
    for seed in EVAL_SEEDS:
        left, right, gt = random_two_plane_scene(seed)
        errors.append(evaluate(predict(left, right, None, conf), gt))
    elapsed = time.perf_counter() - start
    ok = max(errors) < 5.0 and elapsed < 60
    report(
        6,
        ok,
        f"SAD >3 px error per scene {', '.join(f'{e:.2f}' for e in errors)} % (each < 5 %), {elapsed:.1f} s (< 60 s)",
    )
    assert max(errors) < 5.0
    assert elapsed < 60


# --- 7 and 8 ---------------------------------------------------------------------------

REDUCED_ARCH = Architecture(patch_size=9, conv_size=5, n_kernels=16, feat_width=64, fc_width=64, fc_layers=4)
REDUCED_SCHEDULE = TrainSchedule(batch_size=128, epochs=4, lr=0.01, decay_epochs=(3,), decay=0.1, seed=0)
TRAIN_SIZES = (5_000, 20_000, 50_000)


def scene_examples(seeds):
    sets = []
    for seed in seeds:
        left, right, gt = random_two_plane_scene(seed)
        sets.append(
            extract_examples(normalize_image(left), normalize_image(right), gt, SamplingParams(seed=seed))
        )
    return ExampleSet.concat(sets)


@pytest.fixture(scope="module")
def trained_nets():
    """Nets trained on nested 5k/20k/50k subsets; scenes disjoint from the evaluation seeds."""
    start = time.perf_counter()
    pool = scene_examples(range(100, 108))
    held = scene_examples(range(200, 201))
    held = held[np.random.default_rng(8).permutation(len(held))[:5_000]]
    order = np.random.default_rng(7).permutation(len(pool))
    nets = {}
    for size in TRAIN_SIZES:
        train = pool[np.sort(order[:size])]
        params = sgd_train(train, REDUCED_SCHEDULE, REDUCED_ARCH)
        nets[size] = (params, accuracy(params, held))
    return nets, held, len(pool), time.perf_counter() - start


def test_criterion_7_learned_cost(trained_nets):
    nets, held, pool_size, train_time = trained_nets
    start = time.perf_counter()
    params, acc = nets[TRAIN_SIZES[-1]]
    conf = PipelineConfig(d_max=12)
    errors = []
    for seed in EVAL_SEEDS:
        left, right, gt = random_two_plane_scene(seed)
        errors.append(evaluate(predict(left, right, params, conf), gt))
    elapsed = train_time + time.perf_counter() - start
    ok = acc > 0.8 and max(errors) < 10.0 and elapsed < 600
    report(
        7,
        ok,
        f"held-out accuracy {acc:.3f} on {len(held)} pairs (> 0.80); CNN >3 px error per scene "
        f"{', '.join(f'{e:.2f}' for e in errors)} % (each < 10 %); {elapsed:.0f} s (< 600 s)",
    )
    assert acc > 0.8
    assert max(errors) < 10.0
    assert elapsed < 600


def test_criterion_8_accuracy_trend(trained_nets):
    nets = trained_nets[0]
    accs = [nets[size][1] for size in TRAIN_SIZES]
    ok = all(b >= a for a, b in zip(accs, accs[1:]))
    report(
        8,
        ok,
        "held-out accuracy " + ", ".join(f"{s // 1000}k: {a:.3f}" for s, a in zip(TRAIN_SIZES, accs)) + " (non-decreasing)",
    )
    assert ok


# --- 9 ---------------------------------------------------------------------------------


def run_all_commands(root, threads, capsys):
    """Run every command once; return {relative path: bytes} plus each command's stdout."""
    t = ["--threads", str(threads)]
    data = root / "data"
    outputs = {}

    def call(name, *argv):
        code = cli.main(t + [str(a) for a in argv])
        assert code == 0, name
        # Paths in messages name the run directory; everything else must match.
        outputs[f"stdout:{name}"] = capsys.readouterr().out.replace(str(root), "<root>").encode()

    root.mkdir(parents=True)
    cfg = root / "small.cfg"
    cfg.write_text("n_kernels = 8\nfeat_width = 16\nfc_width = 16\nepochs = 2\ndecay_epochs = 1\nd_max = 8\n")
    for seed in (0, 1):
        call(f"synth{seed}", "synth", data, "--seed", seed, "--width", 48, "--height", 40, "--d-max", 8)
    call("extract", "extract", data / "left", data / "right", data / "gt", root / "ex.bin", "--seed", 3)
    call("train", "train", root / "ex.bin", root / "model.bin", "--config", cfg)
    call(
        "predict", "predict", data / "left/000000.png", data / "right/000000.png", root / "cnn.png",
        "--model", root / "model.bin", "--config", cfg, "--dump-intermediate", root / "dump",
    )
    call("predict_sad", "predict", data / "left/000001.png", data / "right/000001.png", root / "sad.png", "--sad", "--d-max", 8)
    call("eval", "eval", root / "cnn.png", data / "gt/000000.png")
    for path in sorted(root.rglob("*")):
        if path.is_file():
            outputs[str(path.relative_to(root))] = path.read_bytes()
    return outputs


def test_criterion_9_determinism(tmp_path, capsys):
    runs = {}
    for label, threads in (("a", 1), ("b", 1), ("c", 2)):
        runs[label] = run_all_commands(tmp_path / label, threads, capsys)
    keys = sorted(runs["a"])
    same_keys = all(sorted(r) == keys for r in runs.values())
    differing = [k for k in keys if not all(runs[x].get(k) == runs["a"][k] for x in runs)]
    ok = same_keys and not differing
    report(
        9,
        ok,
        f"{len(keys) - len(differing)}/{len(keys)} outputs byte-identical across 2 reruns and --threads 1 vs 2"
        + (f"; differing: {differing}" if differing else ""),
    )
    assert same_keys
    assert not differing
