"""One test per primary acceptance criterion; each records a PASS/FAIL line."""

import filecmp
import os
import time
from dataclasses import replace

import numpy as np
from scipy.spatial.transform import Rotation

from conftest import random_trajectory, record_acceptance
from oracles import direct_ate, direct_rpe, kabsch
from vioflight import estimation as est
from vioflight.alignment import compute_alignment
from vioflight.camgeo import CameraModel, FlightCondition, pixel_displacement
from vioflight.cli import main
from vioflight.metrics import evaluate, rpe, rpe_errors
from vioflight.shaping import MotionConstraints, find_violations, polyline_hausdorff, shape_trajectory
from vioflight.simulation import SimConfig, VioSensorModel, run_closed_loop
from vioflight.trajectory import Trajectory, finite_diff, generate_square


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        gt = random_trajectory(rng)
        g = Rotation.random(random_state=rng).as_matrix()
        noisy = gt.p @ g.T + rng.normal(0, 5, 3) + rng.normal(0, 0.2, gt.p.shape)
        est_traj = Trajectory(gt.t, noisy, Rotation.random(200, random_state=rng).as_quat()[:, [3, 0, 1, 2]])
        for lateral in (False, True):
            rep = evaluate(gt, est_traj, "rigid", delta=1.0, lateral_only=lateral)
            S = kabsch(gt.p, est_traj.p)
            worst = max(
                worst,
                _rel(rep.ate, direct_ate(gt, est_traj, S, lateral)),
                _rel(rep.rpe, direct_rpe(gt, est_traj, rep.delta_samples, lateral)),
            )
    elapsed = time.perf_counter() - start
    # the oracle itself is the slow part; time the library separately
    lib_start = time.perf_counter()
    rng = np.random.default_rng(1)
    for _ in range(100):
        gt = random_trajectory(rng)
        evaluate(gt, random_trajectory(rng), "rigid", delta=1.0)
    lib_elapsed = time.perf_counter() - lib_start
    ok = worst <= 1e-12 and lib_elapsed < 5.0
    record_acceptance(
        "metric oracle equivalence",
        ok,
        f"max rel diff {worst:.2e} (<= 1e-12), library {lib_elapsed:.2f} s (< 5 s), with oracle {elapsed:.2f} s",
    )
    assert ok


def test_alignment_recovery():
    rng = np.random.default_rng(2)
    clouds = rng.normal(0, 3, (2000, 50, 3))
    rots = Rotation.random(2000, random_state=rng).as_matrix()
    trans = rng.normal(0, 10, (2000, 3))
    scales = np.concatenate([np.ones(1000), rng.uniform(0.2, 5.0, 1000)])
    worst_r = worst_t = worst_s = 0.0
    start = time.perf_counter()
    results = []
    for i in range(2000):
        gt = scales[i] * clouds[i] @ rots[i].T + trans[i]
        mode = "rigid" if i < 1000 else "similarity"
        results.append(compute_alignment(gt, clouds[i], mode))
    elapsed = time.perf_counter() - start
    for i, S in enumerate(results):
        worst_r = max(worst_r, Rotation.from_matrix(S.R.T @ rots[i]).magnitude())
        worst_t = max(worst_t, np.linalg.norm(S.tr - trans[i]))
        worst_s = max(worst_s, abs(S.s - scales[i]))
    ok = worst_r < 1e-9 and worst_t < 1e-9 and worst_s < 1e-9 and elapsed < 2.0
    record_acceptance(
        "alignment recovery",
        ok,
        f"rot {worst_r:.1e} rad, trans {worst_t:.1e} m, scale {worst_s:.1e}, {elapsed:.2f} s (< 2 s)",
    )
    assert ok


def _apply_se3(R, tr, traj):
    q = (Rotation.from_matrix(R) * Rotation.from_quat(traj.q[:, [1, 2, 3, 0]])).as_quat()[:, [3, 0, 1, 2]]
    return Trajectory(traj.t, traj.p @ R.T + tr, q)


def test_rpe_left_invariance():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        P = random_trajectory(rng)
        Q = random_trajectory(rng)
        pairs = [(i, i) for i in range(len(P))]
        base = rpe(rpe_errors(Q, P, pairs))
        g = (Rotation.random(random_state=rng).as_matrix(), rng.normal(0, 10, 3))
        worst = max(
            worst,
            abs(rpe(rpe_errors(Q, _apply_se3(*g, P), pairs)) - base),
            abs(rpe(rpe_errors(_apply_se3(*g, Q), P, pairs)) - base),
        )
    ok = worst <= 1e-12
    record_acceptance("RPE left-invariance", ok, f"max change {worst:.1e} (<= 1e-12)")
    assert ok


def test_shaping_square():
    c = MotionConstraints(a_max=0.4)
    details = []
    ok = True
    for velocity in (1.0, 2.0):
        square = generate_square(20.0, velocity)
        spacing = velocity * c.sample_period
        shaped, rep = shape_trajectory(square, c, max_iter=50)
        prof = finite_diff(shaped)
        amax = float(np.linalg.norm(prof.a[~prof.one_sided], axis=1).max())
        haus = polyline_hausdorff(square.p, shaped.p)
        again, rep2 = shape_trajectory(shaped, c, max_iter=50)
        idem = again is shaped or (
            np.array_equal(again.t, shaped.t) and np.array_equal(again.p, shaped.p) and np.array_equal(again.q, shaped.q)
        )
        good = rep.converged and rep.iterations <= 50 and amax <= 0.4 + 1e-9 and haus <= spacing and idem
        good = good and rep2.iterations == 0 and not find_violations(shaped, c)
        ok = ok and good
        details.append(f"{velocity:g} m/s: {rep.iterations} it, a_max {amax:.3f}, hausdorff {haus:.4f} <= {spacing:g}")
    record_acceptance("shaping (20 m side square, 1 and 2 m/s)", ok, "; ".join(details))
    assert ok


def test_estimator_consistency():
    rng = np.random.default_rng(5)
    cfg = est.FilterConfig()
    # exactness on constant acceleration
    a = np.array([0.3, -0.2, 0.1])
    p0, v0 = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.0, -0.5])
    s = est.initial_state(0.0, p0, v0)
    dt = 0.01
    for k in range(10):
        s = est.predict(s, est.ImuSample((k + 1) * dt, a), dt, cfg)
    T = 10 * dt
    exact_err = max(
        np.abs(s.position - (p0 + v0 * T + 0.5 * a * T * T)).max(), np.abs(s.velocity - (v0 + a * T)).max()
    )

    # PSD over randomized predict/update sequences
    s = est.initial_state(0.0, rng.normal(size=3), rng.normal(size=3))
    min_eig = np.inf
    for k in range(100_000):
        if rng.random() < 0.7:
            s = est.predict(s, est.ImuSample(s.t + 0.01, rng.normal(size=3)), 10 ** rng.uniform(-4, -1), cfg)
        else:
            z = est.VioMeasurement(
                s.t,
                s.position + rng.normal(0, 0.1, 3),
                None if rng.random() < 0.5 else s.velocity + rng.normal(0, 0.1, 3),
                cov_p=np.diag(10 ** rng.uniform(-6, 0, 3)),
            )
            s, _ = est.update(s, z, cfg)
        P = s.cov
        det = P[:, 0, 0] * P[:, 1, 1] - P[:, 0, 1] * P[:, 1, 0]
        lam = 0.5 * (P[:, 0, 0] + P[:, 1, 1]) - np.sqrt(np.maximum(0.25 * (P[:, 0, 0] - P[:, 1, 1]) ** 2 + P[:, 0, 1] ** 2, 0))
        min_eig = min(min_eig, float(lam.min()))
        assert np.array_equal(P, np.swapaxes(P, 1, 2))
        assert np.all(det >= -1e-15)
    psd_ok = min_eig >= -1e-15

    # semigroup
    worst = 0.0
    for _ in range(200):
        s0 = est.initial_state(0.0, rng.normal(size=3), rng.normal(size=3), pos_std=0.5, vel_std=0.5)
        s0 = replace(s0, last_accel=rng.normal(size=3))
        t1, t2 = sorted(rng.uniform(0, 2, 2))
        one = est.propagate_to(s0, t2, cfg)
        two = est.propagate_to(est.propagate_to(s0, t1, cfg), t2, cfg)
        worst = max(worst, np.abs(one.mean - two.mean).max(), np.abs(one.cov - two.cov).max())
    ok = exact_err <= 1e-9 and psd_ok and worst <= 1e-12
    record_acceptance(
        "estimator consistency",
        ok,
        f"const-accel error {exact_err:.1e} (<= 1e-9), min eigenvalue over 1e5 steps {min_eig:.1e}, "
        f"semigroup {worst:.1e} (<= 1e-12)",
    )
    assert ok


def test_closed_loop_sanity():
    start = time.perf_counter()
    ideal = run_closed_loop(SimConfig())
    t_ideal = time.perf_counter() - start
    ate_ideal = evaluate(ideal.truth_trajectory(), ideal.estimate_trajectory(), lateral_only=True).ate

    start = time.perf_counter()
    noisy = run_closed_loop(SimConfig(sensor=VioSensorModel(rate=30.0, position_std=0.05, velocity_std=0.1), seed=1))
    t_noisy = time.perf_counter() - start
    ate_noisy = evaluate(noisy.truth_trajectory(), noisy.estimate_trajectory(), lateral_only=True).ate
    ok = ate_ideal < 0.05 and 0.01 < ate_noisy < 0.5 and max(t_ideal, t_noisy) < 30.0
    ok = ok and not ideal.landing_events and not noisy.landing_events
    record_acceptance(
        "closed-loop sanity",
        ok,
        f"ideal ATE {ate_ideal:.2e} (< 0.05), noisy ATE {ate_noisy:.4f} in (0.01, 0.5), "
        f"runtime {max(t_ideal, t_noisy):.1f} s (< 30 s)",
    )
    assert ok


def _landings(log):
    return [t for t, name, _ in log.landing_events]


def _no_lateral_after_failure(log):
    lands = _landings(log)
    if not lands:
        return True
    # each logged command was issued at the start of its control tick
    issued = log.t - 0.01
    after = issued > lands[0] + 1e-9
    return bool(np.all(log.a_cmd[after, :2] == 0.0))


def test_safety():
    base = SimConfig(duration=25.0)
    checks = []
    bias = run_closed_loop(replace(base, sensor=VioSensorModel(bias_ramp=(0.5, 0.0, 0.0), bias_start=10.0)))
    lands = _landings(bias)
    checks.append(len(lands) == 1 and 10.0 <= lands[0] <= 11.5 and _no_lateral_after_failure(bias))
    detail = [f"bias ramp -> landing at {lands}"]

    short = run_closed_loop(replace(base, sensor=VioSensorModel(dropout_windows=((20.0, 0.5),))))
    checks.append(not short.landing_events)
    long = run_closed_loop(replace(base, sensor=VioSensorModel(dropout_windows=((20.0, 2.0),))))
    checks.append(len(long.landing_events) == 1 and _no_lateral_after_failure(long))
    detail.append(f"0.5 s dropout -> {len(short.landing_events)}, 2 s dropout -> {len(long.landing_events)}")

    rng = np.random.default_rng(7)
    missed = duplicated = spurious = 0
    for k in range(20):
        kind = ("bias", "short", "long", "none")[k % 4]
        t_fault = float(rng.uniform(4.0, 12.0))
        noise = dict(position_std=0.02, velocity_std=0.05) if rng.random() < 0.5 else {}
        if kind == "bias":
            direction = rng.normal(size=3)
            direction[2] *= 0.2
            ramp = float(rng.uniform(0.5, 1.5)) * direction / np.linalg.norm(direction)
            sensor = VioSensorModel(bias_ramp=tuple(ramp), bias_start=t_fault, **noise)
        elif kind == "short":
            sensor = VioSensorModel(dropout_windows=((t_fault, float(rng.uniform(0.1, 0.8))),), **noise)
        elif kind == "long":
            sensor = VioSensorModel(dropout_windows=((t_fault, float(rng.uniform(1.2, 3.0))),), **noise)
        else:
            sensor = VioSensorModel(**noise)
        log = run_closed_loop(SimConfig(sensor=sensor, duration=t_fault + 6.0, seed=k))
        n = len(log.landing_events)
        expect = 1 if kind in ("bias", "long") else 0
        missed += n < expect
        duplicated += n > 1
        spurious += expect == 0 and n > 0
        if expect and n == 1:
            t_land = log.landing_events[0][0]
            in_time = t_fault <= t_land <= t_fault + (1.5 if kind == "bias" else 3.5)
            missed += not in_time
        checks.append(_no_lateral_after_failure(log))
    checks.append(missed == 0 and duplicated == 0 and spurious == 0)
    detail.append(f"20 random scripts: missed {missed}, duplicated {duplicated}, spurious {spurious}")
    ok = all(checks)
    record_acceptance("safety", ok, "; ".join(detail))
    assert ok


def test_frame_rate_law():
    cond = FlightCondition(altitude=3.0, velocity=5.0)
    px = [pixel_displacement(CameraModel(pitch=90, width=640, fps=f), cond) for f in (30.0, 60.0, 90.0)]
    ratios = [px[1] / px[0], px[2] / px[0]]
    ok = abs(ratios[0] - 0.5) <= 1e-12 and abs(ratios[1] - 1 / 3) <= 1e-12
    record_acceptance(
        "frame-rate law",
        ok,
        f"{px[0]:.3f} / {px[1]:.3f} / {px[2]:.3f} px, ratio 1 : {ratios[0]:.12f} : {ratios[1]:.12f}",
    )
    assert ok


def test_simulate_determinism(tmp_path):
    cfg = tmp_path / "noisy.toml"
    cfg.write_text(
        "[simulate]\nseed = 11\nimu_noise_std = 0.2\n\n[simulate.sensor]\nposition_std = 0.05\n"
        "velocity_std = 0.1\ndropout_probability = 0.05\n"
    )
    codes = [main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    cmp = filecmp.dircmp(tmp_path / "a" / "run", tmp_path / "b" / "run")
    names = sorted(os.listdir(tmp_path / "a" / "run"))
    same = not cmp.diff_files and not cmp.left_only and not cmp.right_only
    # dircmp compares shallowly; compare bytes explicitly
    same = same and all(
        (tmp_path / "a" / "run" / n).read_bytes() == (tmp_path / "b" / "run" / n).read_bytes() for n in names
    )
    same = same and (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    ok = same and codes == [0, 0]
    record_acceptance("determinism", ok, f"{len(names)} files byte-identical across two simulate runs")
    assert ok
