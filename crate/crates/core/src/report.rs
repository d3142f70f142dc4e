//! Static report emission: plain-text tables and SVG metric curves rendered
//! from a completed run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pipeline::{
    RunManifest, DYN_TRACE_FILE, MANIFEST_FILE, PRE_LOG_FILE, SFT_LOG_FILE,
};
use crate::scheduler::{EventKind, TraceEvent};
use crate::trainer::StepMetrics;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing run artifact {0}")]
    MissingLogs(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse {file}: {source}")]
    Parse {
        file: String,
        source: serde_json::Error,
    },
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|source| ReportError::Parse {
                file: path.display().to_string(),
                source,
            })
        })
        .collect()
}

/// Minimal SVG polyline chart over (x, y) points.
pub fn svg_line_chart(title: &str, points: &[(f64, f64)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const MARGIN: f64 = 48.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">{title}</text>",
        MARGIN
    );
    if points.is_empty() {
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">(no data)</text>",
            MARGIN,
            H / 2.0
        );
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y_min) / (y_max - y_min) * (H - 2.0 * MARGIN);
    // axes
    let _ = writeln!(
        svg,
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    let _ = writeln!(
        svg,
        "  <text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">{y_max:.3}</text>",
        MARGIN + 4.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">{y_min:.3}</text>",
        H - MARGIN
    );
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        svg,
        "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"{}\"/>",
        path.join(" ")
    );
    svg.push_str("</svg>\n");
    svg
}

/// Render report.txt plus reward/KL SVG curves from a run directory.
/// Returns the paths written.
pub fn emit_report(run_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(ReportError::MissingLogs(MANIFEST_FILE.to_string()));
    }
    let manifest: RunManifest = {
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| ReportError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ReportError::Parse {
            file: MANIFEST_FILE.to_string(),
            source,
        })?
    };

    let mut written = Vec::new();
    let mut text = String::new();
    let _ = writeln!(text, "run report");
    let _ = writeln!(text, "==========");
    let _ = writeln!(text, "config hash: {}", manifest.config_hash);
    let _ = writeln!(text, "corpus hash: {}", manifest.corpus_hash);
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "{:<6} {:>8} {:>10} {:>14} {:>12}",
        "stage", "steps", "samples", "final reward", "final loss"
    );
    for stage in &manifest.stages {
        let _ = writeln!(
            text,
            "{:<6} {:>8} {:>10} {:>14} {:>12}",
            stage.stage.to_string(),
            stage.steps,
            stage.samples,
            stage
                .final_mean_reward
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            stage
                .final_loss
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
        );
    }

    let pre_log = run_dir.join(PRE_LOG_FILE);
    if pre_log.exists() {
        let metrics: Vec<StepMetrics> = read_jsonl(&pre_log)?;
        let rewards: Vec<(f64, f64)> = metrics
            .iter()
            .map(|m| (m.step as f64, m.mean_reward))
            .collect();
        let kls: Vec<(f64, f64)> = metrics.iter().map(|m| (m.step as f64, m.kl)).collect();
        let reward_path = run_dir.join("reward_curve.svg");
        std::fs::write(&reward_path, svg_line_chart("mean reward per step", &rewards)).map_err(
            |source| ReportError::Io {
                path: reward_path.display().to_string(),
                source,
            },
        )?;
        written.push(reward_path);
        let kl_path = run_dir.join("kl_curve.svg");
        std::fs::write(&kl_path, svg_line_chart("mean KL per step", &kls)).map_err(|source| {
            ReportError::Io {
                path: kl_path.display().to_string(),
                source,
            }
        })?;
        written.push(kl_path);
    }

    let trace_path = run_dir.join(DYN_TRACE_FILE);
    if trace_path.exists() {
        let events: Vec<TraceEvent> = read_jsonl(&trace_path)?;
        let mut by_axis: std::collections::BTreeMap<String, usize> = Default::default();
        let mut unresolved = 0usize;
        let mut passes = 0usize;
        for event in &events {
            match event.event {
                EventKind::Increment => {
                    if let Some(axis) = event.axis {
                        *by_axis
                            .entry(format!("{axis:?}").to_lowercase())
                            .or_insert(0) += 1;
                    }
                }
                EventKind::Unresolved => unresolved += 1,
                EventKind::Pass => passes += 1,
                _ => {}
            }
        }
        let _ = writeln!(text);
        let _ = writeln!(text, "curriculum trace");
        let _ = writeln!(text, "----------------");
        let _ = writeln!(text, "events: {}", events.len());
        let _ = writeln!(text, "passes: {passes}, unresolved nodes: {unresolved}");
        let _ = writeln!(text, "increments by axis:");
        if by_axis.is_empty() {
            let _ = writeln!(text, "  (none)");
        }
        for (axis, count) in &by_axis {
            let _ = writeln!(text, "  {axis}: {count}");
        }
    }

    let eval_path = run_dir.join("eval_report.json");
    if eval_path.exists() {
        let eval_report: crate::eval::EvalReport = {
            let raw = std::fs::read_to_string(&eval_path).map_err(|source| ReportError::Io {
                path: eval_path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&raw).map_err(|source| ReportError::Parse {
                file: "eval_report.json".into(),
                source,
            })?
        };
        let _ = writeln!(text);
        let _ = writeln!(text, "evaluation");
        let _ = writeln!(text, "----------");
        text.push_str(&crate::eval::render_table(&eval_report));
    }

    let sft_log = run_dir.join(SFT_LOG_FILE);
    if sft_log.exists() {
        let metrics: Vec<crate::trainer::SftStepMetrics> = read_jsonl(&sft_log)?;
        if let (Some(first), Some(last)) = (metrics.first(), metrics.last()) {
            let _ = writeln!(text);
            let _ = writeln!(
                text,
                "cold start: loss {:.4} -> {:.4} over {} steps",
                first.loss,
                last.loss,
                metrics.len()
            );
        }
    }

    let report_path = run_dir.join("report.txt");
    std::fs::write(&report_path, &text).map_err(|source| ReportError::Io {
        path: report_path.display().to_string(),
        source,
    })?;
    written.push(report_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_dir_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(dir.path()).unwrap_err();
        assert!(matches!(err, ReportError::MissingLogs(_)));
    }

    #[test]
    fn svg_chart_renders_points() {
        let svg = svg_line_chart("test", &[(0.0, 0.1), (1.0, 0.5), (2.0, 0.4)]);
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("test"));
        let empty = svg_line_chart("test", &[]);
        assert!(empty.contains("no data"));
    }
}
