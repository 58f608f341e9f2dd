"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
The learned-model criterion trains a model from scratch (seeded); expect the
full module to take several minutes.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from pixelpush import bench, flowmodel, planner, pushsim, tracker
from pixelpush.flowmodel import (LearnedPredictor, ModelParams, OraclePredictor,
                                 TrainConfig, grad_check, train)
from pixelpush.imgrid import FlowField, Image, PixelDistribution
from pixelpush.planner import GoalSpec, PlanConfig

from test_flowmodel import random_flow, transition_matrix
from test_tracker import shifted_pair
from test_training import shift_dataset

BENCH_SEED = 0           # canonical bench run for the ordering criterion
COMPARE_SEEDS = (0, 1, 2)  # paired repetitions for the learned-vs-oracle mean
TRAIN_EPISODES = 600
TRAIN_CONFIG = dict(updates=8000, batch_size=8, horizon=3, lr=2.5e-3,
                    lr_final=4e-4, seed=2, motion_oversample=4)
TRAIN_HIDDEN = 64


def report(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def oracle_bench():
    tasks = bench.make_task_suite()
    cfg = PlanConfig()
    methods = bench.standard_methods(OraclePredictor(kappa=2), cfg)
    start = time.time()
    rep = bench.evaluate(methods, tasks, base_seed=BENCH_SEED, plan_cfg=cfg)
    return rep, time.time() - start, tasks


@pytest.fixture(scope="module")
def trained_model():
    ds = bench.collect_random(TRAIN_EPISODES, 15, seed=42)
    params = ModelParams.initialize(seed=1, hidden=TRAIN_HIDDEN)
    params, _ = train(params, ds, TrainConfig(**TRAIN_CONFIG))
    return params


class TestTableOrdering:
    def test_ordering_and_margin(self, oracle_bench):
        rep, elapsed, _ = oracle_bench
        mpc = rep.mean("visual-mpc")
        sv = rep.mean("servo-vector")
        sg = rep.mean("servo-goal")
        rnd = rep.mean("random")
        best = min(sv, sg, rnd)
        ordered = mpc < sv < sg and mpc < rnd
        margin = 1.0 - mpc / best
        report("table-ordering",
               ordered and margin >= 0.15,
               f"mpc {mpc:.2f} < servo-vector {sv:.2f} < servo-goal {sg:.2f}, "
               f"mpc < random {rnd:.2f}; margin {margin:.0%} (need >= 15%)")

    def test_bench_runtime(self, oracle_bench):
        _, elapsed, _ = oracle_bench
        report("bench-runtime", elapsed < 300.0,
               f"full 10-task bench in {elapsed:.0f}s (budget 300s)")


class TestLearnedPlanning:
    def test_learned_within_40pct_of_oracle(self, oracle_bench, trained_model):
        # paired comparison averaged over seeded repetitions: both planners
        # run every task with identical rng streams per repetition
        _, _, tasks = oracle_bench
        cfg = PlanConfig()
        predictors = {"oracle": OraclePredictor(kappa=2),
                      "learned": LearnedPredictor(trained_model)}
        means = {name: [] for name in predictors}
        rand_means = []
        for bs in COMPARE_SEEDS:
            for name, pred in predictors.items():
                dists = [planner.run_mpc_episode(
                    task.build_env(), pred, task.goal, cfg, task.steps,
                    np.random.default_rng(bs * 1000 + i)).mean_final_distance()
                    for i, task in enumerate(tasks)]
                means[name].append(float(np.mean(dists)))
            rand_means.append(float(np.mean([
                bench.baseline_random(task.build_env(), task.goal, task.steps,
                                      np.random.default_rng(bs * 1000 + i))
                .mean_final_distance() for i, task in enumerate(tasks)])))
        oracle = float(np.mean(means["oracle"]))
        learned = float(np.mean(means["learned"]))
        rnd = float(np.mean(rand_means))
        report("learned-planning",
               learned <= 1.4 * oracle and learned < rnd,
               f"learned {learned:.2f} vs oracle {oracle:.2f} over "
               f"{len(COMPARE_SEEDS)} paired repetitions "
               f"(ratio {learned / oracle:.2f}, need <= 1.40); random {rnd:.2f}")


class TestBruteForceEquivalence:
    def test_scatter_matrix_and_logprob(self):
        worst_one = worst_three = worst_lp = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            flows = [random_flow(rng, 8, 8, 1) for _ in range(3)]
            mats = [transition_matrix(f) for f in flows]
            d = rng.random((8, 8))
            d /= d.sum()
            out = flowmodel.advect_distribution(flows[0], PixelDistribution(d))
            ref = (mats[0] @ d.ravel()).reshape(8, 8)
            worst_one = max(worst_one, float(np.abs(out.mass - ref).max()))

            cur = PixelDistribution(d)
            for f in flows:
                cur = flowmodel.advect_distribution(f, cur)
            ref3 = (mats[2] @ mats[1] @ mats[0] @ d.ravel()).reshape(8, 8)
            worst_three = max(worst_three, float(np.abs(cur.mass - ref3).max()))

            d_pix = (int(rng.integers(0, 8)), int(rng.integers(0, 8)))
            g_pix = (int(rng.integers(0, 8)), int(rng.integers(0, 8)))
            from test_planner import FixedFlowPredictor, blank_history
            img_prev, img_cur, xp, xc = blank_history()
            v = planner.success_logprob(
                FixedFlowPredictor([flows[0]]), img_prev, img_cur, xp, xc,
                [np.zeros(2)], GoalSpec(((d_pix, g_pix),)), (d_pix,),
                PlanConfig(horizon=1))
            entry = mats[0][g_pix[1] * 8 + g_pix[0], d_pix[1] * 8 + d_pix[0]]
            worst_lp = max(worst_lp, abs(float(np.exp(v)) - entry))
        report("brute-force-equivalence",
               worst_one < 1e-9 and worst_three < 1e-9
               and worst_lp <= 1e-9 * (1 + 1e-9),
               f"scatter vs matrix {worst_one:.1e}, 3-step {worst_three:.1e}, "
               f"exp(logprob) vs entry {worst_lp:.2e} over 100 seeds")


class TestNormalizationConservation:
    def test_thousand_draws(self):
        rng = np.random.default_rng(7)
        worst_sum = worst_mass = worst_lin = 0.0
        bounds_ok = True
        for _ in range(1000):
            c = int(rng.integers(1, 6))
            kern = rng.random((c, 5, 5)) ** 2
            kern /= kern.sum(axis=(1, 2), keepdims=True)
            masks = rng.random((8, 8, c)) ** 2
            masks /= masks.sum(axis=2, keepdims=True)
            flow = flowmodel.composite_flow(flowmodel.MaskField(masks),
                                            flowmodel.KernelBank(kern))
            worst_sum = max(worst_sum,
                            float(np.abs(flow.kernels.sum(axis=(2, 3)) - 1).max()))

            d = rng.random((8, 8))
            d /= d.sum()
            raw = flowmodel._scatter_grid(flow.kernels, d)
            worst_mass = max(worst_mass, abs(float(raw.sum()) - 1.0))

            img = rng.random((8, 8))
            out = flowmodel.advect_image(flow, Image(img))
            bounds_ok = bounds_ok and (out.data.min() >= img.min() - 1e-9
                                       and out.data.max() <= img.max() + 1e-9)

            a, b = rng.random((8, 8)), rng.random((8, 8))
            lhs = flowmodel.advect_image(flow, Image(0.4 * a + 0.5 * b)).data
            rhs = (0.4 * flowmodel.advect_image(flow, Image(a)).data
                   + 0.5 * flowmodel.advect_image(flow, Image(b)).data)
            worst_lin = max(worst_lin, float(np.abs(lhs - rhs).max()))
        report("normalization-conservation",
               worst_sum < 1e-6 and worst_mass < 1e-9 and bounds_ok
               and worst_lin < 1e-6,
               f"1000 draws: kernel sums off by {worst_sum:.1e}, mass off by "
               f"{worst_mass:.1e}, bounds {'ok' if bounds_ok else 'VIOLATED'}, "
               f"linearity {worst_lin:.1e}")


class TestGradientCorrectness:
    def test_twenty_seeds(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            params = ModelParams.initialize(seed=seed, channels=3, kappa=1,
                                            patch_radius=2, hidden=8)
            batch = [(rng.random((8, 8)), rng.random((8, 8)),
                      rng.uniform(0, 7, 2), rng.uniform(0, 7, 2),
                      rng.uniform(0, 7, (2, 2)), rng.random((2, 8, 8)))]
            worst = max(worst, grad_check(params, batch, n_coords=60, seed=seed))
        fault_rng = np.random.default_rng(5)
        params = ModelParams.initialize(seed=0, channels=3, kappa=1,
                                        patch_radius=2, hidden=8)
        batch = [(fault_rng.random((8, 8)), fault_rng.random((8, 8)),
                  fault_rng.uniform(0, 7, 2), fault_rng.uniform(0, 7, 2),
                  fault_rng.uniform(0, 7, (2, 2)), fault_rng.random((2, 8, 8)))]
        fault = grad_check(params, batch, coords=[("w1", 3)], corrupt=("w1", 3, 2.0))
        report("gradient-correctness",
               worst < 1e-3 and fault > 0.1,
               f"max rel err {worst:.2e} over 20 seeds (need < 1e-3); "
               f"planted x2 fault shows err {fault:.2f}")


class TestCemOptimizer:
    def test_twenty_seeds_quadratic(self):
        target = np.array([11.3, 17.8])

        def objective(a):
            return -float(np.sum((a - target) ** 2))

        axis = np.arange(0.0, 31.0 + 1e-9, 0.25)
        gx, gy = np.meshgrid(axis, axis)
        vals = -((gx - target[0]) ** 2 + (gy - target[1]) ** 2)
        best_cell = np.unravel_index(vals.argmax(), vals.shape)
        grid_opt = np.array([gx[best_cell], gy[best_cell]])

        hits = 0
        monotone = True
        for seed in range(20):
            rng = np.random.default_rng(seed)
            sampler = ("uniform", np.zeros(2), np.full(2, 31.0))
            best_so_far = -np.inf
            history = []
            for _ in range(4):
                sampler, _, it_best, values, _ = planner.cem_iteration(
                    objective, sampler, 40, 10, 1e-4,
                    np.zeros(2), np.full(2, 31.0), rng)
                best_so_far = max(best_so_far, it_best)
                history.append(best_so_far)
            monotone = monotone and all(b >= a for a, b in zip(history, history[1:]))
            if np.hypot(*(sampler[1] - grid_opt)) <= 0.5:
                hits += 1
        report("cem-optimizer",
               hits >= 19 and monotone,
               f"{hits}/20 seeds land within 0.5 px of the grid optimum; "
               f"best-so-far monotone: {monotone}")


class TestTrackerExactness:
    def test_hundred_cases_and_drift(self):
        rng = np.random.default_rng(3)
        exact = 0
        for _ in range(100):
            dx = int(rng.integers(-4, 5))
            dy = int(rng.integers(-4, 5))
            prev, cur = shifted_pair(rng, dx=dx, dy=dy)
            x = int(rng.integers(8, 16))
            y = int(rng.integers(8, 16))
            if tracker.track(prev, cur, (x, y)) == (x + dx, y + dy):
                exact += 1
        s = pushsim.random_scene(5, 2)
        img = pushsim.render(s)
        pix = (int(s.objects[0].center[0]), int(s.objects[0].center[1]))
        cur_pix = pix
        drift = 0
        for _ in range(15):
            cur_pix = tracker.track(img, img, cur_pix)
            drift = max(drift, abs(cur_pix[0] - pix[0]) + abs(cur_pix[1] - pix[1]))
        report("tracker-exactness",
               exact == 100 and drift == 0,
               f"{exact}/100 integer shifts recovered exactly; "
               f"static drift {drift} px over 15 steps")


class TestSyntheticTraining:
    def test_global_shift(self):
        start = time.time()
        ds = shift_dataset(n_eps=24, steps=5, h=16, w=16, seed=0)
        params = ModelParams.initialize(seed=1, channels=1, kappa=2,
                                        patch_radius=2, hidden=16)
        params, _ = train(params, ds, TrainConfig(updates=250, batch_size=8,
                                                  horizon=1, lr=0.01, seed=2))
        val = shift_dataset(n_eps=4, seed=99)
        mse = flowmodel.validation_mse(params, val, horizon=1)
        ep = val.episodes[0]
        fwd = flowmodel._forward_single(params, ep.images[0].astype(float),
                                        ep.images[1].astype(float),
                                        np.zeros(2), np.zeros(2), np.zeros(2))
        argmax = np.unravel_index(fwd["kern"].reshape(5, 5).argmax(), (5, 5))
        elapsed = time.time() - start
        report("synthetic-training",
               argmax == (2, 3) and mse < 0.01 and elapsed < 300,
               f"kernel argmax {argmax} (want (2,3) = shift (+1,0)), "
               f"val MSE {mse:.4f} (need < 0.01), {elapsed:.0f}s (budget 300s)")


class TestBenchDeterminism:
    def test_cli_byte_identical(self, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            path = tmp_path / name
            res = subprocess.run(
                [sys.executable, "-m", "pixelpush.cli", "bench", "--model", "oracle",
                 "--tasks", "default", "--report", str(path), "--seed", "0"],
                capture_output=True, text=True, timeout=600)
            assert res.returncode == 0, res.stderr
            outs.append((path.read_bytes(), (tmp_path / (name + ".json")).read_bytes()))
        same = outs[0][0] == outs[1][0] and outs[0][1] == outs[1][1]
        report("bench-determinism", same,
               f"two CLI runs byte-identical: text {outs[0][0] == outs[1][0]}, "
               f"json {outs[0][1] == outs[1][1]}")
