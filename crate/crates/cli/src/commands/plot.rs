use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

use crate::commands::ablate::SUMMARY_HEADER;

#[derive(Debug, Clone)]
pub struct PlotArgs {
    /// Run directory, or an ablation `summary.csv`.
    pub input: PathBuf,
    /// Output directory; defaults to `plots/` next to the input.
    pub out: Option<PathBuf>,
}

const SIZE: (u32, u32) = (720, 480);

fn read_series(path: &Path, series: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        anyhow!(
            "missing {series} series at {} ({e}); run `ham diagnose` or finish training first",
            path.display()
        )
    })
}

fn numbers(line: &str, want: usize, path: &Path) -> Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad line {line:?} in {}", path.display()))?;
    if v.len() != want {
        bail!("expected {want} columns in {:?} ({})", line, path.display());
    }
    Ok(v)
}

fn draw_err<E: std::error::Error + Send + Sync + 'static>(e: DrawingAreaErrorKind<E>) -> anyhow::Error {
    anyhow!("drawing failed: {e}")
}

fn scatter(dir: &Path, out: &Path) -> Result<PathBuf> {
    let path = dir.join("plot-data/scatter.txt");
    let text = read_series(&path, "confidence scatter")?;
    let points = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| numbers(l, 4, &path))
        .collect::<Result<Vec<_>>>()?;
    let file = out.join("scatter.svg");
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("true-class confidence: clean vs adversarial", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0f64..1f64, 0f64..1f64)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("clean")
        .y_desc("adversarial")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.6)))
        .map_err(draw_err)?;
    chart
        .draw_series(points.iter().map(|p| {
            let style = if p[3] > 0.5 { RED.mix(0.6).filled() } else { BLUE.mix(0.3).filled() };
            Circle::new((p[0], p[1]), 2, style)
        }))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    drop(chart);
    drop(root);
    Ok(file)
}

fn histogram(dir: &Path, out: &Path) -> Result<PathBuf> {
    let path = dir.join("plot-data/step_histogram.txt");
    let text = read_series(&path, "step histogram")?;
    let mut counts = Vec::new();
    let mut never = 0u64;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (step, count) = line
            .split_once(' ')
            .ok_or_else(|| anyhow!("bad line {line:?} in {}", path.display()))?;
        let count: u64 = count.trim().parse().with_context(|| format!("bad count in {}", path.display()))?;
        if step == "never" {
            never = count;
        } else {
            counts.push(count);
        }
    }
    // Buckets 1..=K, then one more for never-crossed examples.
    let k = counts.len() as u32;
    counts.push(never);
    let top = counts.iter().copied().max().unwrap_or(0).max(1);
    let file = out.join("step_histogram.svg");
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("minimal attack step (bucket {} = never)", k + 1), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d((1u32..k + 1).into_segmented(), 0u64..top + top / 10 + 1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("step")
        .y_desc("examples")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(
            Histogram::vertical(&chart)
                .style(BLUE.mix(0.6).filled())
                .margin(2)
                .data(counts.iter().enumerate().map(|(i, &c)| (i as u32 + 1, c))),
        )
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    drop(chart);
    drop(root);
    Ok(file)
}

fn per_class(dir: &Path, out: &Path) -> Result<PathBuf> {
    let path = dir.join("reports/overconfidence.csv");
    let text = read_series(&path, "per-class over-confidence")?;
    let rows = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| numbers(&l.replace(',', " "), 3, &path))
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let file = out.join("per_class.svg");
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("per-class over-confidence (bars) and robust accuracy (line)", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(-0.5f64..n - 0.5, 0f64..1f64)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("class").draw().map_err(draw_err)?;
    chart
        .draw_series(
            rows.iter()
                .map(|r| Rectangle::new([(r[0] - 0.35, 0.0), (r[0] + 0.35, r[1])], RED.mix(0.5).filled())),
        )
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r[0], r[2])), BLUE.stroke_width(2)))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    drop(chart);
    drop(root);
    Ok(file)
}

/// Worst-class robust error against the swept value, averaged over seeds.
fn ablation(summary: &Path, out: &Path) -> Result<PathBuf> {
    let text = read_series(summary, "ablation summary")?;
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        bail!("{} is not an ablation summary", summary.display());
    }
    let mut param = String::new();
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 11 {
            bail!("bad row {line:?} in {}", summary.display());
        }
        param = f[0].to_string();
        let worst: f64 = f[8].parse()?;
        let avg: f64 = f[5].parse()?;
        if !acc.contains_key(f[1]) {
            order.push(f[1].to_string());
        }
        let e = acc.entry(f[1].to_string()).or_default();
        e.0 += worst;
        e.1 += avg;
        e.2 += 1;
    }
    if order.is_empty() {
        bail!("{} has no runs to plot", summary.display());
    }
    let mean = |v: &str, pick: fn(&(f64, f64, usize)) -> f64| {
        let e = &acc[v];
        pick(e) / e.2 as f64
    };
    let n = order.len() as f64;
    let file = out.join("ablation.svg");
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("robust error vs {param}"), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(-0.5f64..n - 0.5, 0f64..1f64)
        .map_err(draw_err)?;
    let labels = order.clone();
    chart
        .configure_mesh()
        .x_labels(order.len())
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .x_desc(param.as_str())
        .y_desc("robust error")
        .draw()
        .map_err(draw_err)?;
    let worst = order.iter().enumerate().map(|(i, v)| (i as f64, mean(v, |e| e.0)));
    let avg = order.iter().enumerate().map(|(i, v)| (i as f64, mean(v, |e| e.1)));
    chart
        .draw_series(LineSeries::new(worst, RED.stroke_width(2)))
        .map_err(draw_err)?
        .label("worst class")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
    chart
        .draw_series(LineSeries::new(avg, BLUE.stroke_width(2)))
        .map_err(draw_err)?
        .label("average")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    drop(chart);
    drop(root);
    Ok(file)
}

/// Renders every figure the input supports and returns the written files.
pub fn plot(args: &PlotArgs) -> Result<Vec<PathBuf>> {
    let input = &args.input;
    if input.is_file() {
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).join("plots"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        return Ok(vec![ablation(input, &out)?]);
    }
    if !input.is_dir() {
        bail!("{} does not exist", input.display());
    }
    let out = args.out.clone().unwrap_or_else(|| input.join("plots"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(vec![scatter(input, &out)?, per_class(input, &out)?, histogram(input, &out)?])
}
