"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete.  Criteria 6 and 7 train policies from scratch and dominate the
runtime (roughly half an hour on one desktop core).
"""

import json
import math
import os
import time

import numpy as np
import pytest

from auvsim.env import DR_PRESETS, EnvBatch, EnvConfig
from auvsim.evaluate import (
    default_command_suite,
    mses_from_series,
    nominal_scenario,
    read_command_csv,
    run_suite,
    shifted_scenario,
)
from auvsim.geometry import (
    RigidBodyState,
    integrate_step,
    quat_from_axis_angle,
    quat_normalize,
    quat_to_matrix,
)
from auvsim.hydro import (
    VehicleParams,
    box_inertia,
    buoyancy_wrench,
    drag_wrench,
    equivalent_radii,
    gravity_wrench,
    kinetic_energy,
    total_hydro_wrench,
    viscous_wrench,
)
from auvsim.ppo import (
    PolicyNet,
    PpoConfig,
    RolloutBuffer,
    gae_advantages,
    gaussian_log_prob,
    ppo_loss_and_grads,
    train,
)
from auvsim.thrusters import thrust_from_omega

DR_SEEDS = (101, 202, 303, 404, 505)
DR_NUM_ENVS = 128
DR_ITERATIONS = 150


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\n[ACCEPTANCE {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def dr_policies():
    """3 DR presets x 5 seeds, trained at the reduced desk-scale recipe."""
    nets = {}
    for preset in ("none", "small", "large"):
        for seed in DR_SEEDS:
            cfg = PpoConfig(num_envs=DR_NUM_ENVS, iterations=DR_ITERATIONS)
            env_cfg = EnvConfig(dr=DR_PRESETS[preset])
            nets[(preset, seed)] = train(cfg, VehicleParams(), env_cfg, seed=seed).net
    return nets


class TestCriterion1ForceModelExactness:
    def test_force_operations_match_direct_substitution(self):
        rng = np.random.default_rng(1001)
        params = VehicleParams()
        box = equivalent_radii(params.mass, params.inertia)
        r = box.radii
        rho, beta = params.water_density, params.water_viscosity
        r_eq = (r[0] + r[1] + r[2]) / 3.0
        worst = 0.0

        def rel(err, ref):
            return abs(err) / max(1.0, abs(ref))

        started = time.perf_counter()
        for _ in range(1000):
            v = rng.uniform(-3, 3, 3)
            w = rng.uniform(-3, 3, 3)
            got_d = drag_wrench(box, v, w, rho)
            got_v = viscous_wrench(box, v, w, beta)
            for i in range(3):
                j, k = (i + 1) % 3, (i + 2) % 3
                worst = max(worst, rel(
                    got_d.force[i] - (-2.0 * rho * r[j] * r[k] * abs(v[i]) * v[i]),
                    got_d.force[i]))
                worst = max(worst, rel(
                    got_d.torque[i] - (-0.5 * rho * r[i] * (r[j]**4 + r[k]**4) * abs(w[i]) * w[i]),
                    got_d.torque[i]))
                worst = max(worst, rel(
                    got_v.force[i] - (-6.0 * beta * math.pi * r_eq * v[i]), got_v.force[i]))
                worst = max(worst, rel(
                    got_v.torque[i] - (-8.0 * beta * math.pi * r_eq**3 * w[i]), got_v.torque[i]))

            q = quat_normalize(rng.standard_normal(4))
            rot = quat_to_matrix(q)
            got_b = buoyancy_wrench(q, params)
            ref_force = rot.T @ np.array([0.0, 0.0, rho * params.volume * params.gravity])
            ref_torque = np.cross(params.cob_offset, ref_force)
            worst = max(worst, np.abs(got_b.force - ref_force).max())
            worst = max(worst, np.abs(got_b.torque - ref_torque).max())
            got_g = gravity_wrench(q, params)
            ref_g = rot.T @ np.array([0.0, 0.0, -params.mass * params.gravity])
            worst = max(worst, np.abs(got_g.force - ref_g).max() / params.mass)

            omega = rng.uniform(-230, 230)
            ct = rng.uniform(1e-4, 1e-2)
            worst = max(worst, rel(
                thrust_from_omega(omega, ct) - ct * abs(omega) * omega, omega * omega * ct))
        elapsed = time.perf_counter() - started
        ok = worst < 1e-9 and elapsed < 1.0
        _report("1", ok, f"max relative error {worst:.2e} over 1000 randomized inputs "
                         f"in {elapsed * 1e3:.0f} ms (< 1e-9, < 1 s)")


class TestCriterion2EquivalentBoxInversion:
    def test_box_inversion_and_sphere(self):
        rng = np.random.default_rng(1002)
        worst = 0.0
        for _ in range(1000):
            half = rng.uniform(0.02, 1.5, 3)
            mass = rng.uniform(0.5, 200.0)
            got = equivalent_radii(mass, box_inertia(mass, half)).radii
            worst = max(worst, float(np.max(np.abs(got - half) / half)))
        mass, radius = 7.3, 0.42
        sphere = equivalent_radii(mass, 0.4 * mass * radius**2 * np.eye(3)).radii
        sphere_err = float(np.max(np.abs(sphere - math.sqrt(0.6) * radius)))
        ok = worst < 1e-12 and sphere_err < 1e-12
        _report("2", ok, f"box recovery max relative error {worst:.2e} (< 1e-12); "
                         f"sphere radius = sqrt(3/5)*r within {sphere_err:.2e}")


class TestCriterion3PhysicalSanity:
    def test_buoyancy_weight_decay_restoring(self):
        params = VehicleParams()
        buoy = params.water_density * params.volume * params.gravity
        weight = params.mass * params.gravity
        net = buoy - weight
        values_ok = (abs(buoy - 222.51) < 0.005 and abs(weight - 222.70) < 0.005
                     and abs(net - (-0.19)) < 0.005)

        free = VehicleParams(cob_offset=np.zeros(3))
        free = free.replace(volume=free.mass / free.water_density)
        state = RigidBodyState(lin_vel=np.array([1.2, -0.9, 0.7]),
                               ang_vel=np.array([0.8, -1.5, 0.4]))
        energy = kinetic_energy(state, free)
        monotone = True
        for _ in range(1500):
            state = integrate_step(state, total_hydro_wrench(state, free), free, 0.005)
            e_next = kinetic_energy(state, free)
            monotone = monotone and e_next <= energy + 1e-12
            energy = e_next

        restoring = all(
            np.sign(buoyancy_wrench(quat_from_axis_angle([1, 0, 0], phi), params).torque[0])
            == -np.sign(phi)
            for phi in (0.1, -0.1, 0.5, -0.5))
        ok = values_ok and monotone and restoring
        _report("3", ok, f"buoyancy {buoy:.2f} N vs weight {weight:.2f} N "
                         f"(net {net:+.3f} N); free decay monotone: {monotone}; "
                         f"small-roll torque restoring: {restoring}")


class TestCriterion4DeterminismAndBatching:
    def test_batch_serial_bitwise(self):
        rng = np.random.default_rng(1004)
        mismatches = 0
        for n in (1, 8, 256):
            steps = 65
            actions = rng.uniform(-1, 1, (steps, n, 6))
            cfg = EnvConfig(dr=DR_PRESETS["small"])
            batch = EnvBatch(n, cfg=cfg, seed=31)
            traj = [batch.step(actions[t]) for t in range(steps)]
            for i in range(n):
                single = EnvBatch(1, cfg=EnvConfig(dr=DR_PRESETS["small"]), seed=31,
                                  env_indices=[i])
                for t in range(steps):
                    obs, rew, done, _ = single.step(actions[t, i:i + 1])
                    if not (np.array_equal(obs[0], traj[t][0][i])
                            and rew[0] == traj[t][1][i] and done[0] == traj[t][2][i]):
                        mismatches += 1
        ok = mismatches == 0
        _report("4a", ok, f"batch/serial bitwise equivalence for N in {{1, 8, 256}} "
                          f"({mismatches} mismatches)")

    def test_training_and_eval_reproducibility(self):
        cfg = PpoConfig(iterations=3, num_envs=8, hidden=16)
        a = train(cfg, VehicleParams(), EnvConfig(), seed=77)
        b = train(cfg, VehicleParams(), EnvConfig(), seed=77)
        curves_equal = a.curve == b.curve
        suite = default_command_suite(duration=1.0)
        scenarios = [nominal_scenario(), shifted_scenario()]
        ra = run_suite({"p": a.net.act}, scenarios, suite)
        rb = run_suite({"p": b.net.act}, scenarios, suite)
        reports_equal = json.dumps(ra, sort_keys=True) == json.dumps(rb, sort_keys=True)
        ok = curves_equal and reports_equal
        _report("4b", ok, f"same-seed training curves identical: {curves_equal}; "
                          f"eval reports identical: {reports_equal}")


class TestCriterion5Throughput:
    def test_aggregate_env_steps_per_second(self):
        n = 2048
        env = EnvBatch(n, seed=5)
        rng = np.random.default_rng(1005)
        actions = rng.uniform(-1, 1, (20, n, 6))
        for t in range(5):  # warm the JIT cache and branch predictors
            env.step(actions[t % 20])
        steps = 150
        started = time.perf_counter()
        for t in range(steps):
            env.step(actions[t % 20])
        elapsed = time.perf_counter() - started
        rate = n * steps / elapsed
        ok = rate >= 1e5
        _report("5a", ok, f"{rate / 1e6:.2f}M env-steps/s aggregate over {n} envs "
                          f"(>= 0.1M required; includes reset waves)")

    @pytest.mark.skipif(os.cpu_count() < 8,
                        reason="parallel speedup criterion targets a desktop multicore "
                               f"CPU with >= 8 cores; this machine has {os.cpu_count()}")
    def test_parallel_speedup_8_workers(self):
        n = 2048
        rng = np.random.default_rng(1006)
        actions = rng.uniform(-1, 1, (20, n, 6))
        timings = {}
        for workers in (1, 8):
            env = EnvBatch(n, cfg=EnvConfig(workers=workers), seed=6)
            for t in range(5):
                env.step(actions[t % 20])
            started = time.perf_counter()
            for t in range(100):
                env.step(actions[t % 20])
            timings[workers] = time.perf_counter() - started
        speedup = timings[1] / timings[8]
        ok = speedup >= 4.0
        _report("5b", ok, f"8-worker speedup {speedup:.2f}x over single worker "
                          f"(>= 4x required)")


class TestCriterion6TrainingLearns:
    def test_default_training_run(self):
        started = time.perf_counter()
        result = train(PpoConfig(), VehicleParams(), EnvConfig(), seed=0)
        elapsed = time.perf_counter() - started
        means = [row[1] for row in result.curve]
        first10 = float(np.mean(means[:10]))
        last10 = float(np.mean(means[-10:]))
        ratio = last10 / first10

        env = EnvBatch(64, VehicleParams(), EnvConfig(), seed=10_000)
        obs = env.observe()
        for _ in range(env.episode_steps):
            obs, _, _, _ = env.step(result.net.act(obs), auto_reset=False)
        final_err = float(np.mean(np.linalg.norm(env.goal_pos - env.pos, axis=1)))
        ok = ratio >= 2.0 and final_err < 0.5 and elapsed < 1800.0
        _report("6", ok, f"256 envs x 200 iters: reward {first10:.1f} -> {last10:.1f} "
                         f"({ratio:.2f}x >= 2x); held-out final position error "
                         f"{final_err:.3f} m (< 0.5 m); wall-clock {elapsed / 60:.1f} min "
                         f"(< 30 min)")


class TestCriterion7DrTransferDirection:
    def test_ordering_and_nominal_spread(self, dr_policies):
        params = VehicleParams()
        suite = default_command_suite()
        scenarios = [nominal_scenario(), shifted_scenario(params)]
        angular = {}
        for (preset, seed), net in dr_policies.items():
            report = run_suite({"p": net.act}, scenarios, suite, base_params=params)
            angular[(preset, seed)] = {
                s: report["results"]["p"][s]["angular_mse"] for s in ("nominal", "shifted")}

        wins = sum(angular[("small", s)]["shifted"] < angular[("none", s)]["shifted"]
                   for s in DR_SEEDS)
        nominal_means = {
            preset: float(np.mean([angular[(preset, s)]["nominal"] for s in DR_SEEDS]))
            for preset in ("none", "small", "large")}
        spread = max(nominal_means.values()) / min(nominal_means.values())
        per_seed = {s: (round(angular[("none", s)]["shifted"], 3),
                        round(angular[("small", s)]["shifted"], 3)) for s in DR_SEEDS}
        ok = wins >= 4 and spread <= 3.0
        _report("7", ok, f"shifted scenario: small-DR beats no-DR in {wins}/5 seeds "
                         f"(>= 4 required; per-seed none-vs-small {per_seed}); nominal "
                         f"angular MSE means {[f'{k}={v:.2f}' for k, v in nominal_means.items()]} "
                         f"spread {spread:.2f}x (<= 3x)")


class TestCriterion8PpoCorrectness:
    def test_gradients_gae_and_ratio(self):
        # gradient check on a toy network
        net = PolicyNet(obs_dim=4, act_dim=2, hidden=3, log_std_init=-0.3,
                        rng=np.random.default_rng(8))
        cfg = PpoConfig()
        rng = np.random.default_rng(1008)
        obs = rng.standard_normal((12, 4))
        actions = rng.standard_normal((12, 2))
        mean, _ = net.actor_mean(obs)
        old_lp = gaussian_log_prob(actions, mean, net.log_std) + 0.1 * rng.standard_normal(12)
        adv, ret = rng.standard_normal(12), rng.standard_normal(12)
        _, grads = ppo_loss_and_grads(net, obs, actions, old_lp, adv, ret, cfg)
        h = 1e-6
        worst = 0.0
        for name, arr in net.parameters().items():
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                up, _ = ppo_loss_and_grads(net, obs, actions, old_lp, adv, ret, cfg,
                                           compute_grads=False)
                arr[idx] = orig - h
                dn, _ = ppo_loss_and_grads(net, obs, actions, old_lp, adv, ret, cfg,
                                           compute_grads=False)
                arr[idx] = orig
                fd = (up["total_loss"] - dn["total_loss"]) / (2 * h)
                worst = max(worst, abs(fd - grads[name][idx]) / max(1.0, abs(fd)))

        # GAE on a hand-built 5-step buffer (gamma = lambda = 1, V = 0)
        buf = RolloutBuffer(5, 1, obs_dim=1, act_dim=1)
        rewards = [2.0, -1.0, 3.0, 0.5, 1.0]
        for t in range(5):
            buf.add(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1),
                    np.array([rewards[t]]), np.zeros(1), np.array([t == 4]))
        adv_out, _ = gae_advantages(buf, 1.0, 1.0, np.zeros(1))
        expected = np.cumsum(rewards[::-1])[::-1]
        gae_exact = np.array_equal(adv_out[:, 0], expected)

        # ratio exactly 1 on the first minibatch of every iteration
        result = train(PpoConfig(iterations=3, num_envs=8, hidden=16),
                       VehicleParams(), EnvConfig(), seed=88)
        ratio_exact = all(s["first_ratio_max_dev"] == 0.0 for s in result.stats_history)

        ok = worst < 1e-5 and gae_exact and ratio_exact
        _report("8", ok, f"analytic-vs-FD gradient max relative error {worst:.2e} "
                         f"(< 1e-5); 5-step GAE exact: {gae_exact}; first-minibatch "
                         f"ratio exactly 1 in all iterations: {ratio_exact}")


class TestCriterion9EvalHarnessContract:
    def test_full_suite_and_csv_recompute(self, dr_policies, tmp_path):
        seed = DR_SEEDS[0]
        policies = {preset: dr_policies[(preset, seed)].act
                    for preset in ("none", "small", "large")}
        params = VehicleParams()
        scenarios = [nominal_scenario(), shifted_scenario(params)]
        suite = default_command_suite()
        report = run_suite(policies, scenarios, suite, base_params=params,
                           out_dir=tmp_path)

        complete = (len(report["results"]) == 3
                    and all(len(v) == 2 for v in report["results"].values())
                    and all(len(v[s]["commands"]) == 12
                            for v in report["results"].values() for s in v))
        series = sorted((tmp_path / "series").iterdir())
        files_ok = len(series) == 3 * 2 * 12

        worst = 0.0
        for policy in policies:
            for scen in scenarios:
                for entry in report["results"][policy][scen.name]["commands"]:
                    path = tmp_path / "series" / f"{policy}__{scen.name}__{entry['name']}.csv"
                    data = read_command_csv(path)
                    pos, ang = mses_from_series(data["offsets"], data["angles"])
                    worst = max(worst, abs(pos - entry["positional_mse"]),
                                abs(ang - entry["angular_mse"]))
        ok = complete and files_ok and worst < 1e-12
        _report("9", ok, f"3 policies x 2 scenarios x 12 commands: report complete "
                         f"({len(series)} series files); CSV-recomputed MSEs match "
                         f"report within {worst:.2e} (< 1e-12)")
