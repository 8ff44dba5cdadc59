use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::learner::Algorithm;

use super::{Band, Record};

pub const CSV_HEADER: [&str; 5] = ["algorithm", "seed", "task", "iteration", "return"];

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn write_rows<T: serde::Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(header).map_err(csv_error(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_error(path))?;
    }
    let mut file = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Writes records in the given order; floats are written in shortest
/// round-trip form, so [`read_csv`] recovers them exactly.
pub fn write_csv(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    write_rows(path.as_ref(), &CSV_HEADER, records)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let header = r.headers().map_err(csv_error(path))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidConfig(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error(path))
}

/// One row per band: `algorithm,task,iteration,seeds,mean,std,lower,upper`.
pub fn write_summary_csv(path: impl AsRef<Path>, bands: &[Band]) -> Result<()> {
    let header = ["algorithm", "task", "iteration", "seeds", "mean", "std", "lower", "upper"];
    write_rows(path.as_ref(), &header, bands)
}

fn color(algorithm: Algorithm) -> RGBColor {
    match algorithm {
        Algorithm::Stlrq => RGBColor(31, 119, 180),
        Algorithm::Lrq => RGBColor(44, 160, 44),
        Algorithm::Clrq => RGBColor(214, 39, 40),
    }
}

fn plot_task(path: &Path, title: &str, bands: &[&Band]) -> std::result::Result<(), String> {
    let (mut x_max, mut y_min, mut y_max) = (1u64, f64::INFINITY, f64::NEG_INFINITY);
    for b in bands {
        x_max = x_max.max(b.iteration);
        y_min = y_min.min(b.lower);
        y_max = y_max.max(b.upper);
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-6);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max as f64, (y_min - pad)..(y_max + pad))
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("transitions")
        .y_desc("mean return")
        .draw()
        .map_err(|e| e.to_string())?;

    for algorithm in Algorithm::ALL {
        let curve: Vec<&&Band> = bands.iter().filter(|b| b.algorithm == algorithm).collect();
        if curve.is_empty() {
            continue;
        }
        let c = color(algorithm);
        let outline: Vec<(f64, f64)> = curve
            .iter()
            .map(|b| (b.iteration as f64, b.upper))
            .chain(curve.iter().rev().map(|b| (b.iteration as f64, b.lower)))
            .collect();
        chart
            .draw_series(std::iter::once(Polygon::new(outline, c.mix(0.2).filled())))
            .map_err(|e| e.to_string())?;
        chart
            .draw_series(LineSeries::new(
                curve.iter().map(|b| (b.iteration as f64, b.mean)),
                c.stroke_width(2),
            ))
            .map_err(|e| e.to_string())?
            .label(algorithm.label())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}

/// Writes `<prefix>task<m>.svg` for every task in `bands`, overlaying each
/// algorithm's mean curve and band. Returns the written paths.
pub fn write_plots(dir: impl AsRef<Path>, prefix: &str, bands: &[Band]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tasks: Vec<usize> = bands.iter().map(|b| b.task).collect();
    tasks.sort_unstable();
    tasks.dedup();
    tasks
        .into_iter()
        .map(|task| {
            let path = dir.join(format!("{prefix}task{task}.svg"));
            let subset: Vec<&Band> = bands.iter().filter(|b| b.task == task).collect();
            plot_task(&path, &format!("{prefix}task {task}"), &subset).map_err(|message| Error::Plot {
                path: path.clone(),
                message,
            })?;
            Ok(path)
        })
        .collect()
}
