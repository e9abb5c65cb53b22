//! Reading run outputs back and rendering comparison curves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::trainloop::pretrain::{EvalRecord, StepMetrics, EVAL_HEADER, METRICS_HEADER};

fn read_table(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        other => {
            return Err(Error::Format(format!(
                "{}: expected header {header:?}, found {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    let width = header.split(',').count();
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let cells: Vec<String> = l.split(',').map(|c| c.trim().to_string()).collect();
            if cells.len() != width {
                return Err(Error::Format(format!("{}: row {} has {} cells", path.display(), i + 2, cells.len())));
            }
            Ok(cells)
        })
        .collect()
}

fn num<T: std::str::FromStr>(path: &Path, cell: &str) -> Result<T> {
    cell.parse()
        .map_err(|_| Error::Format(format!("{}: cannot parse {cell:?}", path.display())))
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    read_table(path, METRICS_HEADER)?
        .iter()
        .map(|r| {
            Ok(StepMetrics {
                step: num(path, &r[0])?,
                epoch: num(path, &r[1])?,
                lr: num(path, &r[2])?,
                loss: LossBreakdown {
                    invariance: num(path, &r[3])?,
                    redundancy: num(path, &r[4])?,
                    l_bt: num(path, &r[5])?,
                    l_reg: num(path, &r[6])?,
                    total: num(path, &r[7])?,
                },
            })
        })
        .collect()
}

/// Rows without an epoch (ad-hoc `eval-knn` runs on unnamed checkpoints)
/// are skipped.
pub fn read_evals(path: &Path) -> Result<Vec<EvalRecord>> {
    read_table(path, EVAL_HEADER)?
        .iter()
        .filter(|r| !r[0].is_empty())
        .map(|r| {
            Ok(EvalRecord {
                epoch: num(path, &r[0])?,
                knn_top1: num(path, &r[1])?,
                linear_top1: if r[2].is_empty() { None } else { Some(num(path, &r[2])?) },
            })
        })
        .collect()
}

/// Per-epoch loss means and evaluation results of one run directory.
#[derive(Clone, Debug)]
pub struct RunCurves {
    pub name: String,
    pub epoch_means: BTreeMap<usize, LossBreakdown>,
    pub knn: BTreeMap<usize, f64>,
}

impl RunCurves {
    pub fn load(dir: &Path) -> Result<Self> {
        let steps = read_metrics(&dir.join("metrics.csv"))?;
        let evals = read_evals(&dir.join("eval.csv"))?;
        let mut sums: BTreeMap<usize, (LossBreakdown, usize)> = BTreeMap::new();
        for s in &steps {
            let (acc, n) = sums.entry(s.epoch).or_default();
            acc.invariance += s.loss.invariance;
            acc.redundancy += s.loss.redundancy;
            acc.l_bt += s.loss.l_bt;
            acc.l_reg += s.loss.l_reg;
            acc.total += s.loss.total;
            *n += 1;
        }
        let epoch_means = sums
            .into_iter()
            .map(|(e, (a, n))| {
                let n = n as f64;
                let mean = LossBreakdown {
                    invariance: a.invariance / n,
                    redundancy: a.redundancy / n,
                    l_bt: a.l_bt / n,
                    l_reg: a.l_reg / n,
                    total: a.total / n,
                };
                (e, mean)
            })
            .collect();
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        Ok(RunCurves {
            name,
            epoch_means,
            knn: evals.iter().map(|e| (e.epoch, e.knn_top1)).collect(),
        })
    }
}

const SERIES: [&str; 6] = ["invariance", "redundancy", "l_bt", "l_reg", "total", "knn_top1"];

/// One row per evaluation epoch (union over runs) and one column group per
/// run. Run names are made unique by suffixing `#2`, `#3`, ...
pub fn merged_table(runs: &[RunCurves]) -> (Vec<String>, Vec<Vec<String>>) {
    let names = unique_names(runs);
    let mut header = vec!["epoch".to_string()];
    for n in &names {
        header.extend(SERIES.iter().map(|s| format!("{n}:{s}")));
    }
    let epochs: BTreeSet<usize> = runs.iter().flat_map(|r| r.knn.keys().copied()).collect();
    let rows = epochs
        .into_iter()
        .map(|e| {
            let mut row = vec![e.to_string()];
            for r in runs {
                match r.epoch_means.get(&e) {
                    Some(m) => row.extend([m.invariance, m.redundancy, m.l_bt, m.l_reg, m.total].map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), 5)),
                }
                row.push(r.knn.get(&e).map(|v| v.to_string()).unwrap_or_default());
            }
            row
        })
        .collect();
    (header, rows)
}

fn unique_names(runs: &[RunCurves]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    runs.iter()
        .map(|r| {
            let n = seen.entry(&r.name).or_insert(0);
            *n += 1;
            if *n == 1 {
                r.name.clone()
            } else {
                format!("{}#{n}", r.name)
            }
        })
        .collect()
}

pub fn to_csv(runs: &[RunCurves]) -> String {
    let (header, rows) = merged_table(runs);
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Two stacked panels, k-NN top-1 over epochs and mean `l_bt` over epochs,
/// one polyline per run.
pub fn to_svg(runs: &[RunCurves]) -> String {
    let names = unique_names(runs);
    let (w, panel_h, margin) = (640.0, 220.0, 50.0);
    let height = 2.0 * panel_h + 3.0 * margin + 20.0 * runs.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}" font-family="sans-serif" font-size="11">"#
    );
    let knn: Vec<Vec<(f64, f64)>> = runs
        .iter()
        .map(|r| r.knn.iter().map(|(&e, &v)| (e as f64, v)).collect())
        .collect();
    let lbt: Vec<Vec<(f64, f64)>> = runs
        .iter()
        .map(|r| r.epoch_means.iter().map(|(&e, m)| (e as f64, m.l_bt)).collect())
        .collect();
    panel(&mut svg, "k-NN top-1", &knn, margin, margin, w - 2.0 * margin, panel_h);
    panel(&mut svg, "mean l_bt", &lbt, margin, 2.0 * margin + panel_h, w - 2.0 * margin, panel_h);
    let legend_y = 2.0 * panel_h + 2.5 * margin;
    for (i, n) in names.iter().enumerate() {
        let y = legend_y + 20.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{margin}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            margin + 24.0,
            margin + 30.0,
            y + 4.0,
            escape(n)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn panel(svg: &mut String, title: &str, series: &[Vec<(f64, f64)>], x0: f64, y0: f64, w: f64, h: f64) {
    let pts = series.iter().flatten();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|p| p.1.is_finite()) {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    if ymax == ymin {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * w;
    let sy = |y: f64| y0 + h - (y - ymin) / (ymax - ymin) * h;
    let _ = writeln!(
        svg,
        r#"<g><text x="{x0}" y="{}" font-weight="bold">{}</text>"#,
        y0 - 8.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"#,
        y0 + h,
        x0 + w,
        y0 + h,
        y0 + h
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x0}" y="{}">{xmin}</text><text x="{}" y="{}" text-anchor="end">{xmax}</text><text x="{}" y="{}" text-anchor="end">{ymax:.4}</text><text x="{}" y="{}" text-anchor="end">{ymin:.4}</text>"#,
        y0 + h + 14.0,
        x0 + w,
        y0 + h + 14.0,
        x0 - 4.0,
        y0 + 4.0,
        x0 - 4.0,
        y0 + h
    );
    for (i, s) in series.iter().enumerate() {
        let coords: Vec<String> = s
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            coords.join(" ")
        );
    }
    svg.push_str("</g>\n");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
