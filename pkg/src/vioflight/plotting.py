"""Matplotlib figures written next to the CSV outputs.

Everything renders off-screen (Agg) straight to files; nothing here is
needed for the numbers themselves.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from vioflight.trajectory import finite_diff  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# no creation date or version string, so repeated runs give identical files
_PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def eval_figure(gt, est_aligned, report, path):
    """Top-down view of ground truth vs aligned estimate, plus ATE over time."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
        ax0.plot(gt.p[:, 0], gt.p[:, 1], "k-", lw=1.2, label="ground truth")
        ax0.plot(est_aligned.p[:, 0], est_aligned.p[:, 1], "C1-", lw=1.0, label=f"estimate ({report.align})")
        ax0.set_aspect("equal", adjustable="datalim")
        ax0.set_xlabel("x [m]")
        ax0.set_ylabel("y [m]")
        ax0.legend(loc="best")
        ax1.plot(report.per_sample_times, report.per_sample_errors, "C0-", lw=0.8, label="|trans F|")
        if len(report.rpe_times):
            ax1.plot(report.rpe_times, report.rpe_errors, "C2-", lw=0.8, label=f"|trans E| (delta={report.delta:g} s)")
        ax1.set_xlabel("t [s]")
        ax1.set_ylabel("error [m]")
        ax1.set_title(f"ATE {report.ate:.4f} m   RPE {report.rpe:.4f} m")
        ax1.legend(loc="best")
        return _save(fig, path)


def shaping_figure(original, shaped, constraints, path):
    """Path coloured by speed before/after shaping and the acceleration profiles."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(13, 4))
        for ax, traj, title in ((axes[0], original, "input"), (axes[1], shaped, "shaped")):
            prof = finite_diff(traj)
            speed = np.linalg.norm(prof.v, axis=1)
            sc = ax.scatter(traj.p[:, 0], traj.p[:, 1], c=speed, s=4, cmap="viridis")
            ax.set_aspect("equal", adjustable="datalim")
            ax.set_title(f"{title}: {len(traj)} samples")
            ax.set_xlabel("x [m]")
            fig.colorbar(sc, ax=ax, label="speed [m/s]")
        axes[0].set_ylabel("y [m]")
        for traj, label, style in ((original, "input", "C3-"), (shaped, "shaped", "C0-")):
            prof = finite_diff(traj)
            inner = ~prof.one_sided
            axes[2].plot(prof.t[inner], np.linalg.norm(prof.a[inner], axis=1), style, lw=0.8, label=label)
        axes[2].axhline(constraints.a_max, color="k", ls="--", lw=0.8, label="a_max")
        axes[2].set_yscale("log")
        axes[2].set_xlabel("t [s]")
        axes[2].set_ylabel("|a| [m/s²]")
        axes[2].legend(loc="best")
        return _save(fig, path)


def flight_figure(log, report, path):
    """Simulated flight: reference, truth and estimate; errors and events over time."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(14, 4))
        ax = axes[0]
        ax.plot(log.ref_p[:, 0], log.ref_p[:, 1], "k--", lw=0.8, label="reference")
        ax.plot(log.truth_p[:, 0], log.truth_p[:, 1], "C0-", lw=1.0, label="truth")
        ax.plot(log.est_p[:, 0], log.est_p[:, 1], "C1-", lw=0.8, label="estimate")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="best")

        ax = axes[1]
        ax.plot(log.t, np.linalg.norm(log.est_p[:, :2] - log.truth_p[:, :2], axis=1), "C1-", lw=0.8,
                label="estimate error (xy)")
        ax.plot(log.t, np.linalg.norm(log.ref_p[:, :2] - log.truth_p[:, :2], axis=1), "C0-", lw=0.8,
                label="tracking error (xy)")
        for t, name, cause in log.events:
            if name == "landing":
                ax.axvline(t, color="C3", lw=1.0, label=f"landing ({cause})")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("[m]")
        ax.set_title(f"ATE {report.ate:.4f} m   RPE {report.rpe:.4f} m")
        ax.legend(loc="best")

        ax = axes[2]
        ax.plot(log.t, np.linalg.norm(log.a_applied, axis=1), "C2-", lw=0.8, label="|a| applied")
        ax.plot(log.t, log.truth_p[:, 2], "C4-", lw=0.8, label="altitude [m]")
        ax.set_xlabel("t [s]")
        ax.legend(loc="best")
        return _save(fig, path)


def camgeo_figure(rows, path):
    """Pixel displacement and frame overlap against frame rate, one line per pitch."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
        keys = sorted({(r["pitch_deg"], r["velocity"]) for r in rows})
        for pitch, vel in keys:
            sel = [r for r in rows if r["pitch_deg"] == pitch and r["velocity"] == vel]
            fps = [r["fps"] for r in sel]
            label = f"{pitch:g}° @ {vel:g} m/s"
            px = [np.nan if r["px_per_frame"] is None else r["px_per_frame"] for r in sel]
            ov = [np.nan if r["overlap"] is None else r["overlap"] for r in sel]
            ax0.plot(fps, px, "o-", ms=3, label=label)
            ax1.plot(fps, ov, "o-", ms=3, label=label)
        ax0.set_xlabel("frame rate [Hz]")
        ax0.set_ylabel("feature motion [px/frame]")
        ax1.set_xlabel("frame rate [Hz]")
        ax1.set_ylabel("footprint overlap")
        ax0.legend(loc="best")
        return _save(fig, path)
