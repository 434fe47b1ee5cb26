//! Self-contained SVG plots rendered from score and ROC CSVs.

use std::path::Path;

use crate::error::{Result, TrinityError};

/// Parsed score CSV row set (frame_index, s_r, s_ctx, s, anomaly, label).
pub struct ScoreCsv {
    pub anomaly: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn read_score_csv(path: &Path) -> Result<ScoreCsv> {
    let text = std::fs::read_to_string(path)?;
    let mut anomaly = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("frame_index,") {
                return Err(TrinityError::Format {
                    path: path.to_path_buf(),
                    detail: "not a score CSV (bad header)".into(),
                    offset: 0,
                });
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(TrinityError::Format {
                path: path.to_path_buf(),
                detail: format!("line {} has {} columns, expected 6", i + 1, cols.len()),
                offset: 0,
            });
        }
        anomaly.push(cols[4].parse().map_err(|_| TrinityError::Format {
            path: path.to_path_buf(),
            detail: format!("bad anomaly value on line {}", i + 1),
            offset: 0,
        })?);
        labels.push(if cols[5].trim() == "0" { 0 } else { 1 });
    }
    Ok(ScoreCsv { anomaly, labels })
}

pub fn read_roc_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "fpr,tpr" {
                return Err(TrinityError::Format {
                    path: path.to_path_buf(),
                    detail: "not a ROC CSV (bad header)".into(),
                    offset: 0,
                });
            }
            continue;
        }
        let Some((x, y)) = line.split_once(',') else {
            continue;
        };
        let parse = |v: &str| -> Result<f64> {
            v.trim().parse().map_err(|_| TrinityError::Format {
                path: path.to_path_buf(),
                detail: format!("bad ROC value on line {}", i + 1),
                offset: 0,
            })
        };
        points.push((parse(x)?, parse(y)?));
    }
    Ok(points)
}

fn svg_header(w: usize, h: usize, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    )
}

fn polyline(points: &[(f64, f64)], color: &str, width: f64) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Anomaly-score timeline with ground-truth shading.
pub fn svg_timeline(path: &Path, scores: &ScoreCsv, title: &str) -> Result<()> {
    let (w, h) = (820usize, 300usize);
    let (x0, y0, x1, y1) = (50.0, 40.0, 800.0, 270.0);
    let n = scores.anomaly.len().max(2);
    let sx = |i: usize| x0 + (x1 - x0) * i as f64 / (n - 1) as f64;
    let sy = |v: f64| y1 - (y1 - y0) * v.clamp(0.0, 1.0);
    let mut svg = svg_header(w, h, title);
    // Ground-truth anomaly spans as shaded bands.
    let mut i = 0;
    while i < scores.labels.len() {
        if scores.labels[i] != 0 {
            let start = i;
            while i < scores.labels.len() && scores.labels[i] != 0 {
                i += 1;
            }
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{y0}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"#f8c471\" opacity=\"0.55\"/>\n",
                sx(start),
                sx(i - 1) - sx(start) + 1.0,
                y1 - y0,
            ));
        } else {
            i += 1;
        }
    }
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{:.0}\" y=\"290\" font-family=\"sans-serif\" font-size=\"11\">frame</text>\n\
         <text x=\"6\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\">1-S</text>\n",
        (x0 + x1) / 2.0,
        (y0 + y1) / 2.0,
    ));
    let pts: Vec<(f64, f64)> = scores
        .anomaly
        .iter()
        .enumerate()
        .map(|(i, &v)| (sx(i), sy(v)))
        .collect();
    svg.push_str(&polyline(&pts, "#2e68a8", 1.6));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// ROC curve against the chance diagonal.
pub fn svg_roc(path: &Path, points: &[(f64, f64)], auc: Option<f64>, title: &str) -> Result<()> {
    let (w, h) = (420usize, 440usize);
    let (x0, y0, x1, y1) = (50.0, 40.0, 400.0, 390.0);
    let sx = |v: f64| x0 + (x1 - x0) * v.clamp(0.0, 1.0);
    let sy = |v: f64| y1 - (y1 - y0) * v.clamp(0.0, 1.0);
    let label = match auc {
        Some(a) => format!("{title} (AUC {a:.3})"),
        None => title.to_string(),
    };
    let mut svg = svg_header(w, h, &label);
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#bbbbbb\" \
         stroke-dasharray=\"5,4\"/>\n\
         <text x=\"{:.0}\" y=\"420\" font-family=\"sans-serif\" font-size=\"11\">FPR</text>\n\
         <text x=\"8\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\">TPR</text>\n",
        (x0 + x1) / 2.0,
        (y0 + y1) / 2.0,
    ));
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (sx(x), sy(y))).collect();
    svg.push_str(&polyline(&pts, "#c0392b", 1.8));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::{write_score_csv, ScoreTimeline};

    #[test]
    fn score_csv_roundtrip_feeds_timeline_plot() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("scores.csv");
        let timeline = ScoreTimeline {
            frame_index: (0..5).collect(),
            s_r: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            s_ctx: vec![0.9; 5],
            s: vec![0.5; 5],
            anomaly: vec![0.5, 0.5, 0.9, 0.5, 0.5],
            labels: vec![0, 0, 1, 0, 0],
        };
        write_score_csv(&csv, &timeline).unwrap();
        let parsed = read_score_csv(&csv).unwrap();
        assert_eq!(parsed.labels, vec![0, 0, 1, 0, 0]);
        let svg = dir.path().join("scores.svg");
        svg_timeline(&svg, &parsed, "test video").unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        assert!(text.contains("rect")); // anomaly shading present
    }

    #[test]
    fn flat_scores_plot_flat_line() {
        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("flat.svg");
        let scores = ScoreCsv {
            anomaly: vec![0.5; 10],
            labels: vec![0; 10],
        };
        svg_timeline(&svg, &scores, "flat").unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        // All polyline y-coordinates are identical for a flat line.
        let line = text.lines().find(|l| l.contains("polyline")).unwrap();
        let attr = line.split("points=\"").nth(1).unwrap();
        let attr = attr.split('"').next().unwrap();
        let ys: Vec<&str> = attr
            .split_whitespace()
            .filter_map(|p| p.split(',').nth(1))
            .collect();
        assert!(ys.len() == 10 && ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn roc_csv_parses_and_plots() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("roc.csv");
        std::fs::write(&csv, "fpr,tpr\n0,0\n0.5,0.9\n1,1\n").unwrap();
        let points = read_roc_csv(&csv).unwrap();
        assert_eq!(points.len(), 3);
        let svg = dir.path().join("roc.svg");
        svg_roc(&svg, &points, Some(0.84), "pseudo").unwrap();
        assert!(std::fs::read_to_string(&svg).unwrap().contains("AUC 0.840"));
    }
}
