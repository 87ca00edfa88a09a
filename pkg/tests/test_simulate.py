import math

import numpy as np
import pytest
from scipy import stats

from helpers import ou_terminal_moments, random_control_in_ball
from spdelab.coefficients import DiffusionCoefficient, MarkMeasure
from spdelab.controls import ControlPair, uniform_grid, zero_control
from spdelab.model import (
    Model,
    demo_initial_state,
    demo_model,
    pure_jump_model,
    scalar_ou_model,
)
from spdelab.simulate import (
    BlowUpError,
    girsanov_log_weight,
    simulate_controlled,
    simulate_ensemble,
    simulate_uncontrolled,
    tail_energy,
)
from spdelab.skeleton import solve_skeleton
from spdelab.spectral import EigenSystem

RNG = np.random.default_rng(2718)


def _silent_model():
    system = EigenSystem(zetas=np.array([1.0, 4.0]))
    sigma = DiffusionCoefficient.constant(a=[0.0, 0.0], b=[0.0, 0.0], t_end=1.0)
    return Model(system=system, sigma=sigma, jump=None, marks=None, t_end=1.0)


class TestUncontrolled:
    def test_no_noise_reduces_to_skeleton(self):
        model = _silent_model()
        x0 = np.array([1.0, -0.5])
        grid = uniform_grid(1.0, 200)
        path = simulate_uncontrolled(model, 0.01, x0, grid, seed=1)
        skel = solve_skeleton(model, zero_control(1.0, 2, 0), x0, grid)
        assert np.max(np.abs(path.states - skel.trajectory)) < 1e-13
        assert path.jumps == []
        assert path.log_weight == 0.0

    def test_ou_stationary_variance(self):
        # scalar OU: stationary variance eps nu^2 / (2 a)
        rate, eps, t_end = 1.0, 0.1, 4.0
        model = scalar_ou_model(rate=rate, noise=1.0, t_end=t_end)
        grid = uniform_grid(t_end, 400)
        summary = simulate_ensemble(model, eps, None, np.zeros(1), grid,
                                    seed=22, n=10_000)
        terminal = summary.terminal[:, 0]
        target = eps * (1.0 - math.exp(-2 * rate * t_end)) / (2 * rate)
        var = terminal.var(ddof=1)
        se = target * math.sqrt(2.0 / (10_000 - 1))
        # 4 SE plus the O(dt) discretization bias of the variance
        assert abs(var - target) < 4 * se + target * (t_end / 400)

    def test_compensated_jumps_have_skeleton_mean(self):
        # additive jumps, no diffusion: the compensated integral is mean zero
        model = pure_jump_model(rate=1.0, jump_size=0.8, intensity=2.0)
        x0 = np.array([1.0])
        grid = uniform_grid(1.0, 200)
        summary = simulate_ensemble(model, 0.1, None, x0, grid, seed=5, n=4000)
        skel = solve_skeleton(model, zero_control(1.0, 1, 1), x0, grid)
        se = summary.terminal[:, 0].std(ddof=1) / math.sqrt(4000)
        assert abs(summary.terminal[:, 0].mean() - skel.terminal()[0]) < 4 * se

    def test_blow_up_guard(self):
        model = scalar_ou_model(rate=1.0, noise=1.0)
        huge = ControlPair(edges=np.array([0.0, 1.0]), f=np.array([[1e9]]),
                           g=np.ones((1, 0)))
        with pytest.raises(BlowUpError):
            simulate_controlled(model, 0.1, huge, np.zeros(1),
                                uniform_grid(1.0, 100), seed=3)


class TestControlled:
    def test_null_control_matches_uncontrolled_path_for_path(self):
        model = demo_model()
        x0 = demo_initial_state()
        grid = uniform_grid(1.0, 300)
        null = zero_control(1.0, 4, 2)
        a = simulate_uncontrolled(model, 0.1, x0, grid, seed=99, replica=3)
        b = simulate_controlled(model, 0.1, null, x0, grid, seed=99, replica=3)
        assert np.array_equal(a.states, b.states)
        assert len(a.jumps) == len(b.jumps) > 0
        for ja, jb in zip(a.jumps, b.jumps):
            assert ja.time == jb.time and ja.mark == jb.mark
            assert np.array_equal(ja.displacement, jb.displacement)
        assert b.log_weight == 0.0

    def test_null_control_same_law(self):
        model = demo_model()
        x0 = demo_initial_state()
        grid = uniform_grid(1.0, 200)
        null = zero_control(1.0, 4, 2)
        a = simulate_ensemble(model, 0.1, None, x0, grid, seed=400, n=2000)
        b = simulate_ensemble(model, 0.1, null, x0, grid, seed=401, n=2000)
        stat = stats.ks_2samp(
            np.linalg.norm(a.terminal, axis=1), np.linalg.norm(b.terminal, axis=1)
        )
        assert stat.pvalue > 0.01

    def test_constant_gaussian_drift_matches_skeleton_mean(self):
        model = scalar_ou_model(rate=1.0, noise=1.0)
        psi = 0.8
        u = ControlPair(edges=np.array([0.0, 1.0]), f=np.array([[psi]]),
                        g=np.ones((1, 0)))
        grid = uniform_grid(1.0, 200)
        summary = simulate_ensemble(model, 0.05, u, np.array([0.4]), grid,
                                    seed=17, n=5000)
        skel = solve_skeleton(model, u, np.array([0.4]), grid)
        se = summary.terminal[:, 0].std(ddof=1) / math.sqrt(5000)
        assert abs(summary.terminal[:, 0].mean() - skel.terminal()[0]) < 4 * se

    def test_small_noise_concentrates_on_skeleton(self):
        model = demo_model()
        x0 = demo_initial_state()
        grid = uniform_grid(1.0, 500)
        u = ControlPair(
            edges=np.array([0.0, 1.0]),
            f=np.array([[0.5, 0.0, 0.2, 0.0]]),
            g=np.array([[1.4, 0.7]]),
        )
        ref = solve_skeleton(model, u, x0, grid).trajectory
        medians = []
        for i, eps in enumerate((1e-1, 1e-2)):
            summary = simulate_ensemble(model, eps, u, x0, grid, seed=600 + i,
                                        n=100, ref=ref)
            medians.append(float(np.median(summary.sup_dist)))
        assert medians[1] < medians[0]


class TestGirsanov:
    def test_null_tilt_weight_is_zero(self):
        model = demo_model()
        path = simulate_uncontrolled(model, 0.1, demo_initial_state(),
                                     uniform_grid(1.0, 100), seed=7)
        null = zero_control(1.0, 4, 2)
        assert girsanov_log_weight(model, path, null) == 0.0

    def test_recomputation_matches_inline_accumulation(self):
        model = demo_model()
        u = ControlPair(
            edges=np.array([0.0, 0.4, 1.0]),
            f=np.array([[0.6, 0.0, -0.2, 0.1], [0.0, 0.3, 0.0, 0.0]]),
            g=np.array([[1.8, 0.6], [0.9, 1.3]]),
        )
        for replica in range(5):
            path = simulate_controlled(model, 0.2, u, demo_initial_state(),
                                       uniform_grid(1.0, 150), seed=31,
                                       replica=replica)
            recomputed = girsanov_log_weight(model, path, u)
            assert recomputed == pytest.approx(path.log_weight, rel=1e-12, abs=1e-12)

    def test_pure_jump_martingale(self):
        # phi = 2, eps = 1, nu T = 0.3: E[Ebar] = 1 under the reference measure
        model = pure_jump_model(rate=1.0, jump_size=0.5, intensity=0.3)
        tilt = ControlPair(edges=np.array([0.0, 1.0]), f=np.zeros((1, 1)),
                           g=np.array([[2.0]]))
        grid = uniform_grid(1.0, 50)
        summary = simulate_ensemble(model, 1.0, None, np.zeros(1), grid,
                                    seed=111, n=20_000, weight_control=tilt)
        w = np.exp(summary.log_weight)
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - 1.0) < 4 * se

    def test_gaussian_tilt_lognormal_moments(self):
        # constant psi: Ebar is lognormal with E = 1, Var = e^{psi^2 T/eps} - 1
        model = scalar_ou_model(rate=1.0, noise=1.0)
        psi, eps = 0.3, 1.0
        tilt = ControlPair(edges=np.array([0.0, 1.0]), f=np.array([[psi]]),
                           g=np.ones((1, 0)))
        grid = uniform_grid(1.0, 100)
        summary = simulate_ensemble(model, eps, None, np.zeros(1), grid,
                                    seed=212, n=20_000, weight_control=tilt)
        w = np.exp(summary.log_weight)
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - 1.0) < 4 * se
        target_var = math.exp(psi**2 / eps) - 1.0
        sample_var = w.var(ddof=1)
        m4 = np.mean((w - w.mean()) ** 4)
        var_se = math.sqrt(max(m4 - sample_var**2, 0.0) / w.size)
        assert abs(sample_var - target_var) < 5 * var_se

    def test_joint_tilt_martingale(self):
        # simultaneous Gaussian drift and jump-intensity tilt: E[Ebar] = 1
        model = demo_model()
        tilt = ControlPair(
            edges=np.array([0.0, 0.5, 1.0]),
            f=np.array([[0.3, 0.0, 0.1, 0.0], [0.0, -0.2, 0.0, 0.0]]),
            g=np.array([[1.6, 0.7], [0.9, 1.4]]),
        )
        summary = simulate_ensemble(model, 0.25, None, demo_initial_state(),
                                    uniform_grid(1.0, 100), seed=515,
                                    n=20_000, weight_control=tilt)
        w = np.exp(summary.log_weight)
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - 1.0) < 4 * se

    def test_weighted_controlled_mean_matches_crude(self):
        # bounded functional under the tilted measure, reweighted, agrees with
        # the plain Monte Carlo average
        model = demo_model()
        x0 = demo_initial_state()
        grid = uniform_grid(1.0, 200)
        u = ControlPair(
            edges=np.array([0.0, 1.0]),
            f=np.array([[0.4, 0.0, 0.0, 0.0]]),
            g=np.array([[1.5, 0.8]]),
        )
        n = 4000
        tilted = simulate_ensemble(model, 0.1, u, x0, grid, seed=313, n=n)
        crude = simulate_ensemble(model, 0.1, None, x0, grid, seed=314, n=n)

        def functional(terminal):
            return np.minimum(np.sum(terminal**2, axis=1), 2.0)

        f_tilted = functional(tilted.terminal) * np.exp(-tilted.log_weight)
        f_crude = functional(crude.terminal)
        se = math.sqrt(f_tilted.var(ddof=1) / n + f_crude.var(ddof=1) / n)
        assert abs(f_tilted.mean() - f_crude.mean()) < 4 * se


class TestTailEnergy:
    def test_cutoff_above_dimension_is_zero(self):
        model = demo_model()
        path = simulate_uncontrolled(model, 0.1, demo_initial_state(),
                                     uniform_grid(1.0, 50), seed=1)
        assert tail_energy(path, 5, 0.5) == (0.0, 0.0)

    def test_single_active_mode_no_noise(self):
        model = _silent_model()
        path = simulate_uncontrolled(model, 0.1, np.array([1.0, 0.0]),
                                     uniform_grid(1.0, 50), seed=1)
        head, tail = tail_energy(path, 2, 0.5)
        assert head == 0.0 and tail == 0.0
        head1, tail1 = tail_energy(path, 1, 0.5)
        assert head1 == pytest.approx(1.0)  # supremum at t = 0
        assert tail1 == pytest.approx(math.exp(-2 * 1.0 * 0.5), rel=1e-10)

    def test_tail_decreases_with_cutoff_and_respects_envelope(self):
        model = demo_model()
        x0 = np.array([0.3, 1.0, 1.0, 1.0])
        grid = uniform_grid(1.0, 500)
        t0 = 0.1
        summary = simulate_ensemble(model, 0.01, None, x0, grid, seed=47,
                                    n=200, tail_ks=[2, 3, 4], t0=t0)
        means = summary.tail_energy.mean(axis=0)
        assert means[0] > means[1] > means[2]
        zetas = model.system.zetas[1:]
        fitted = np.polyfit(zetas, np.log(means), 1)
        envelope = np.exp(fitted[1]) * np.exp(fitted[0] * zetas)
        np.testing.assert_allclose(means, envelope, rtol=0.5)

    def test_ensemble_and_path_trackers_agree(self):
        model = demo_model()
        x0 = demo_initial_state()
        grid = uniform_grid(1.0, 100)
        summary = simulate_ensemble(model, 0.1, None, x0, grid, seed=88, n=3,
                                    tail_ks=[2], t0=0.4)
        for replica in range(3):
            path = simulate_uncontrolled(model, 0.1, x0, grid, seed=88,
                                         replica=replica)
            head, tail = tail_energy(path, 2, 0.4)
            assert head == pytest.approx(summary.head_energy[replica, 0], rel=1e-12)
            assert tail == pytest.approx(summary.tail_energy[replica, 0], rel=1e-12)
            assert path.sup_h_norm() == pytest.approx(summary.sup_h[replica], rel=1e-12)


class TestPathInvariants:
    def test_jump_displacements_match_coefficient(self):
        model = demo_model()
        eps = 0.2
        path = simulate_uncontrolled(model, eps, demo_initial_state(),
                                     uniform_grid(1.0, 100), seed=21)
        assert len(path.jumps) > 0
        for jump in path.jumps:
            expected = eps * model.jump.evaluate(jump.time, jump.pre_state, jump.mark)
            np.testing.assert_allclose(jump.displacement, expected, rtol=1e-14)

    def test_head_energy_shrinks_to_initial_tail(self):
        # E sup_{t <= t0} tail-energy decreases to the x0 tail as t0 -> 0
        model = demo_model()
        x0 = np.array([0.5, 0.2, 0.4, 0.3])
        grid = uniform_grid(1.0, 500)
        k = 3
        x0_tail = float(np.sum(x0[k - 1:] ** 2))
        means = []
        for t0 in (0.01, 0.05, 0.2, 0.6):
            summary = simulate_ensemble(model, 0.01, None, x0, grid, seed=15,
                                        n=100, tail_ks=[k], t0=t0)
            means.append(float(summary.head_energy.mean(axis=0)[0]))
        assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))
        assert means[0] == pytest.approx(x0_tail, rel=0.05)

    def test_noise_bundle_export_round_trip(self, tmp_path):
        from spdelab.noise import load_bundle, save_bundle
        from spdelab.simulate import noise_bundle

        model = demo_model()
        path = simulate_uncontrolled(model, 0.1, demo_initial_state(),
                                     uniform_grid(1.0, 64), seed=77)
        bundle = noise_bundle(path)
        target = tmp_path / "path.bin"
        save_bundle(target, bundle)
        loaded = load_bundle(target)
        assert loaded == bundle
        assert len(loaded.jumps) == len(path.jumps)


class TestMomentBound:
    def test_uniform_in_epsilon(self):
        # E sup ||X||^2 shows no growth trend as eps decreases
        model = demo_model()
        x0 = demo_initial_state()
        grid = uniform_grid(1.0, 500)
        controls = [random_control_in_ball(model, 1.0, RNG) for _ in range(8)]
        worst = []
        for i, eps in enumerate((1e-1, 1e-2, 1e-3)):
            per_control = []
            for j, u in enumerate(controls):
                summary = simulate_ensemble(model, eps, u, x0, grid,
                                            seed=1000 + 10 * i + j, n=40)
                per_control.append(float(np.mean(summary.sup_h**2)))
            worst.append(max(per_control))
        assert max(worst) <= 2.0 * min(worst)
