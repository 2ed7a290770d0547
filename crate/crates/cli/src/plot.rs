use std::path::{Path, PathBuf};

use loopgan_core::trainer::{RunManifest, MANIFEST_FILE};
use loopgan_core::{Error, Result};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

/// Exactly the numbers drawn, one entry per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub runs: Vec<RunSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub label: String,
    pub manifest: PathBuf,
    pub step: Vec<usize>,
    pub seconds: Vec<f64>,
    pub fad: Vec<f64>,
    pub inception_score: Vec<Option<f64>>,
}

/// Accepts either a manifest file or a run directory containing one.
pub fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn collect(paths: &[PathBuf]) -> Result<PlotData> {
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let path = manifest_path(p);
        let m = RunManifest::load(&path)?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = dir.canonicalize().ok().and_then(|d| d.file_name().map(|s| s.to_string_lossy().into_owned()));
        let mode = serde_json::to_value(m.config.mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let label = match name {
            Some(n) => format!("{n} ({mode})"),
            None => mode,
        };
        runs.push(RunSeries {
            label,
            manifest: path.clone(),
            step: m.records.iter().map(|r| r.step).collect(),
            seconds: m.records.iter().map(|r| r.seconds).collect(),
            fad: m.records.iter().map(|r| r.fad).collect(),
            inception_score: m.records.iter().map(|r| r.inception_score).collect(),
        });
    }
    if runs.iter().all(|r| r.step.is_empty()) {
        return Err(Error::Input("no evaluation records in the given manifests".into()));
    }
    Ok(PlotData { runs })
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.1;
        (lo - pad)..(hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad)..(hi + pad)
    }
}

type Series = Vec<(f64, f64)>;

fn panel(area: &DrawingArea<SVGBackend<'_>, plotters::coord::Shift>, title: &str, y_label: &str, lines: &[(String, Series)]) -> std::result::Result<(), String> {
    let all: Vec<(f64, f64)> = lines.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    if all.is_empty() {
        area.titled(&format!("{title}: no data"), ("sans-serif", 18)).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| all.iter().map(pick).fold(init, f);
    let xs = padded(fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let ys = padded(fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(xs, ys)
        .map_err(|e| e.to_string())?;
    chart.configure_mesh().x_desc("training time (s)").y_desc(y_label).draw().map_err(|e| e.to_string())?;
    for (i, (label, s)) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart.draw_series(PointSeries::of_element(s.iter().copied(), 4, color.filled(), &|c, r, st| Circle::new(c, r, st))).map_err(|e| e.to_string())?;
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.8)).draw().map_err(|e| e.to_string())?;
    Ok(())
}

/// FAD (top) and IS (bottom) against training time, one line per run,
/// every evaluation point marked.
pub fn render_svg(data: &PlotData, path: &Path) -> Result<()> {
    let fad: Vec<(String, Series)> =
        data.runs.iter().map(|r| (r.label.clone(), r.seconds.iter().copied().zip(r.fad.iter().copied()).collect())).collect();
    let is: Vec<(String, Series)> = data
        .runs
        .iter()
        .map(|r| (r.label.clone(), r.seconds.iter().zip(&r.inception_score).filter_map(|(&t, v)| v.map(|v| (t, v))).collect()))
        .collect();
    let draw = || -> std::result::Result<(), String> {
        let root = SVGBackend::new(path, (900, 800)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let panels = root.split_evenly((2, 1));
        panel(&panels[0], "FAD vs training time", "FAD", &fad)?;
        panel(&panels[1], "IS vs training time", "IS", &is)?;
        root.present().map_err(|e| e.to_string())
    };
    draw().map_err(|e| Error::format(path.display().to_string(), e))
}
