//! A standalone matplotlib script for the CSV outputs.

/// Plots base height, joint positions, torques and (when present) rollout
/// drift and contact forces. Paths are relative to the script.
pub fn plot_script(trajectory_csv: &str, rollout_csvs: &[&str]) -> String {
    let rollouts = rollout_csvs.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(", ");
    format!(
        r#"#!/usr/bin/env python3
# Generated by projopt. Usage: python3 plot.py [output.png]
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__))
traj = pd.read_csv(os.path.join(here, {trajectory_csv:?}))
rollouts = [f for f in [{rollouts}] if os.path.exists(os.path.join(here, f))]

fig, axes = plt.subplots(2, 2, figsize=(12, 8), sharex=True)
q = [c for c in traj.columns if c.startswith("q_")]
u = [c for c in traj.columns if c.startswith("u_")]
height = "q_base_z" if "q_base_z" in traj.columns else q[0]
axes[0][0].plot(traj["t"], traj[height], "o-", label="plan")
axes[0][0].set_ylabel(height)
for c in q:
    if not c.startswith("q_base"):
        axes[0][1].plot(traj["t"], traj[c], "o-", label=c[2:])
axes[0][1].set_ylabel("joint position [rad]")
for c in u:
    axes[1][0].plot(traj["t"], traj[c], "o-", label=c[2:])
axes[1][0].set_ylabel("torque [Nm]")
for f in rollouts:
    r = pd.read_csv(os.path.join(here, f))
    axes[0][0].plot(r["t"], r[height], label=f)
    axes[1][1].semilogy(r["t"], r["drift"].clip(lower=1e-16), label=f + " drift")
    axes[1][1].semilogy(r["t"], r["tracking_error"].clip(lower=1e-16), "--", label=f + " tracking")
axes[1][1].set_ylabel("norm")
for ax in axes.flat:
    ax.grid(True)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="x-small")
for ax in axes[1]:
    ax.set_xlabel("t [s]")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "plot.png"), dpi=120)
"#
    )
}
