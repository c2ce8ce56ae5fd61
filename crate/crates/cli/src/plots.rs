//! Plotting recipes emitted by `--plot-script`. Plotting itself stays out of
//! process; the scripts only read the CSVs written next to them.

use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const PLOT_FILE: &str = "plot.py";

const EVALUATE: &str = r#"# Reads sweep_metrics.csv and level_curve.csv from this directory.
import os
import pandas as pd
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
metrics = pd.read_csv(os.path.join(here, "sweep_metrics.csv"))
curves = pd.read_csv(os.path.join(here, "level_curve.csv"))

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for (method, k), g in metrics.groupby(["method", "k"]):
    label = method if k == 0 else f"{method} k={k}"
    for ax, col, lo, hi in [(axes[0], "mae", "ci_lo", "ci_hi"), (axes[1], "rmse", "rmse_ci_lo", "rmse_ci_hi")]:
        ax.errorbar(g["checkpoint"], g[col], yerr=[g[col] - g[lo], g[hi] - g[col]], marker="o", capsize=3, label=label)
for ax, name in zip(axes, ["MAE", "RMSE"]):
    ax.set_xlabel("observed levels")
    ax.set_ylabel(f"test {name}")
    ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "error_by_checkpoint.png"), dpi=150)

for (method, k), g in curves.groupby(["method", "k"]):
    fig, ax = plt.subplots(figsize=(8, 4))
    for ckpt, c in g.groupby("checkpoint"):
        ax.plot(c["level"], c["smoothed_diff"], label=f"{ckpt} observed")
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("level")
    ax.set_ylabel("MAE difference vs. per-level average")
    ax.set_title(f"{method} k={k}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, f"level_curve_{method}_k{k}.png"), dpi=150)
"#;

const ANALYZE: &str = r#"# Reads the factor tables and histograms from this directory.
import os
import pandas as pd
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
levels = pd.read_csv(os.path.join(here, "factors_levels.csv"))
players = pd.read_csv(os.path.join(here, "factors_players.csv"))
hist = pd.read_csv(os.path.join(here, "param_histograms.csv"))

series = list(dict.fromkeys(hist["series"]))
fig, axes = plt.subplots(1, len(series), figsize=(3.2 * len(series), 3))
for ax, name in zip(axes, series):
    h = hist[hist["series"] == name]
    ax.bar(h["bin_lo"], h["count"], width=h["bin_hi"] - h["bin_lo"], align="edge")
    ax.set_title(name)
fig.tight_layout()
fig.savefig(os.path.join(here, "param_histograms.png"), dpi=150)

fig, axes = plt.subplots(1, 3, figsize=(13, 4))
axes[0].scatter(levels["w"], levels["avg_attempts"], s=6)
axes[0].set_xlabel("level w")
axes[0].set_ylabel("average attempts")
axes[1].scatter(levels["v1"], levels["normalized_variance"], s=6)
axes[1].set_xlabel("level v1")
axes[1].set_ylabel("variance / mean")
axes[2].scatter(players["w"], players["mean_attempts"], s=4)
axes[2].set_xlabel("player w")
axes[2].set_ylabel("mean attempts")
fig.tight_layout()
fig.savefig(os.path.join(here, "factor_scatter.png"), dpi=150)
"#;

#[derive(Debug, Clone, Copy)]
pub enum PlotKind {
    Evaluate,
    Analyze,
}

pub fn write_plot_script(dir: &Path, kind: PlotKind) -> CliResult<PathBuf> {
    let body = match kind {
        PlotKind::Evaluate => EVALUATE,
        PlotKind::Analyze => ANALYZE,
    };
    let path = dir.join(PLOT_FILE);
    std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
