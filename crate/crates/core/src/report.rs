//! Correlation statistics and report artifacts: per-layer NRSE-vs-error
//! correlations, per-pass metrics, scatter plots, and activation heat
//! images. Plots are plain SVG text; every plot has a CSV next to it.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ioutil;
use crate::net::ActivationTrace;
use crate::selection::{LoopHistory, ScoreTable, METRICS_CSV_HEADER};

/// Pearson product-moment correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::input(format!(
            "correlation needs at least 2 points, found {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::input("correlation input is not finite".to_string()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::input(
            "undefined correlation: an input has zero variance".to_string(),
        ));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCorrelation {
    pub layer: usize,
    pub r: f64,
    /// Utterances with a frame error available.
    pub n: usize,
}

/// One row of a loop metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PassRow {
    pub pass: usize,
    pub k: usize,
    pub eval_matched_fer: f64,
    pub eval_mismatched_fer: f64,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<PassRow>> {
    let text = ioutil::read_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_CSV_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "{}: expected header {METRICS_CSV_HEADER:?}, found {:?}",
                path.display(),
                other.map(|(_, l)| l).unwrap_or("")
            )));
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::input(format!(
                "{}:{}: expected 4 fields, found {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let bad = |what: &str, s: &str| {
            Error::input(format!(
                "{}:{}: invalid {what} {s:?}",
                path.display(),
                lineno + 1
            ))
        };
        rows.push(PassRow {
            pass: fields[0].parse().map_err(|_| bad("pass", fields[0]))?,
            k: fields[1].parse().map_err(|_| bad("k", fields[1]))?,
            eval_matched_fer: fields[2].parse().map_err(|_| bad("fer", fields[2]))?,
            eval_mismatched_fer: fields[3].parse().map_err(|_| bad("fer", fields[3]))?,
        });
    }
    Ok(rows)
}

pub fn history_to_pass_rows(history: &LoopHistory) -> Vec<PassRow> {
    history
        .passes
        .iter()
        .map(|p| PassRow {
            pass: p.pass_index,
            k: p.k,
            eval_matched_fer: p.eval_matched.frame_error_rate,
            eval_mismatched_fer: p.eval_mismatched.frame_error_rate,
        })
        .collect()
}

/// Everything a report is built from. Score tables must carry frame
/// errors; traces should come from one matched and one mismatched
/// utterance at the same tapped layer.
#[derive(Debug)]
pub struct ReportInputs<'a> {
    pub tables: &'a [(usize, ScoreTable)],
    pub passes: &'a [PassRow],
    /// (matched FER, mismatched FER) of the unadapted model, when known.
    pub baseline: Option<(f64, f64)>,
    pub matched_trace: &'a ActivationTrace<f32>,
    pub mismatched_trace: &'a ActivationTrace<f32>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub correlations: Vec<LayerCorrelation>,
    pub files: Vec<PathBuf>,
}

const WER_NOTE: &str = "frame error rate stands in for word error rate";
pub const CORRELATIONS_CSV_HEADER: &str = "layer,r,n";
/// Heat images show at most this many neurons.
pub const HEATMAP_NEURONS: usize = 20;

fn correlation_for_table(layer: usize, table: &ScoreTable) -> Result<LayerCorrelation> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in table.rows() {
        if let Some(fe) = row.frame_error {
            xs.push(row.nrse);
            ys.push(fe);
        }
    }
    if xs.len() < 2 {
        return Err(Error::input(format!(
            "layer {layer}: only {} scored utterances have a frame error; need at least 2",
            xs.len()
        )));
    }
    let r = pearson_r(&xs, &ys).map_err(|e| Error::input(format!("layer {layer}: {e}")))?;
    Ok(LayerCorrelation {
        layer,
        r,
        n: xs.len(),
    })
}

fn svg_open(width: usize, height: usize, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<!-- {WER_NOTE} -->\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>\n",
        width / 2
    )
}

fn scatter_svg(layer: usize, table: &ScoreTable) -> String {
    let (width, height) = (640usize, 480usize);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let pw = width as f64 - left - right;
    let ph = height as f64 - top - bottom;
    let mut svg = svg_open(
        width,
        height,
        &format!("NRSE vs frame error rate, layer {layer}"),
    );
    // Axes with fixed [0, 1] ranges on both sides.
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        y0 = top + ph,
        x1 = left + pw,
    ));
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let x = left + frac * pw;
        let y = top + (1.0 - frac) * ph;
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{y0}\" x2=\"{x:.1}\" y2=\"{y1}\" stroke=\"black\"/>\n\
             <text x=\"{x:.1}\" y=\"{ylab}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{frac:.1}</text>\n",
            y0 = top + ph,
            y1 = top + ph + 5.0,
            ylab = top + ph + 18.0,
        ));
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{left}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
             <text x=\"{xlab}\" y=\"{ytext:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{frac:.1}</text>\n",
            x0 = left - 5.0,
            xlab = left - 8.0,
            ytext = y + 4.0,
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{xc}\" y=\"{yb}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">NRSE</text>\n\
         <text x=\"16\" y=\"{yc}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 16 {yc})\">frame error rate (WER stand-in)</text>\n",
        xc = left + pw / 2.0,
        yb = height as f64 - 12.0,
        yc = top + ph / 2.0,
    ));
    for row in table.rows() {
        if let Some(fe) = row.frame_error {
            let x = left + row.nrse.clamp(0.0, 1.0) * pw;
            let y = top + (1.0 - fe.clamp(0.0, 1.0)) * ph;
            svg.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>\n"
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn heatmap_svg(trace: &ActivationTrace<f32>, label: &str) -> String {
    let frames = trace.values.nrows();
    let neurons = trace.values.ncols().min(HEATMAP_NEURONS);
    let cell_w = 2usize;
    let cell_h = 14usize;
    let (left, top) = (60usize, 40usize);
    let width = left + frames * cell_w + 20;
    let height = top + neurons * cell_h + 30;
    let mut svg = svg_open(
        width,
        height,
        &format!(
            "layer {} activations, first {neurons} neurons, {label}",
            trace.layer_index
        ),
    );
    for n in 0..neurons {
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"10\">{n}</text>\n",
            x = left - 6,
            y = top + n * cell_h + cell_h / 2 + 4,
        ));
        for t in 0..frames {
            let a = trace.values[[t, n]].clamp(0.0, 1.0) as f64;
            let v = 255 - (a * 255.0).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell_w}\" height=\"{cell_h}\" \
                 fill=\"rgb({v},{v},{v})\"/>\n",
                x = left + t * cell_w,
                y = top + n * cell_h,
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{xc}\" y=\"{yb}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">frame (dark = high activation)</text>\n</svg>\n",
        xc = left + frames * cell_w / 2,
        yb = height - 8,
    ));
    svg
}

/// Builds every report artifact under `out_dir`: correlations.csv plus a
/// scatter SVG per layer, passes.csv, and one activation heat image per
/// condition. All inputs are validated and all statistics computed before
/// the first write, so a failing report leaves no partial output.
pub fn build_report(inputs: &ReportInputs, out_dir: &Path) -> Result<Report> {
    if inputs.tables.is_empty() {
        return Err(Error::input(
            "report needs at least one score table".to_string(),
        ));
    }
    let mut correlations = Vec::with_capacity(inputs.tables.len());
    for (layer, table) in inputs.tables {
        correlations.push(correlation_for_table(*layer, table)?);
    }
    for (trace, label) in [
        (inputs.matched_trace, "matched"),
        (inputs.mismatched_trace, "mismatched"),
    ] {
        if trace.values.is_empty() {
            return Err(Error::input(format!("{label} activation trace is empty")));
        }
        let bad = trace.values.iter().any(|v| !v.is_finite());
        if bad {
            return Err(Error::input(format!(
                "{label} activation trace is not finite"
            )));
        }
    }

    let mut corr_csv = format!("# {WER_NOTE}\n{CORRELATIONS_CSV_HEADER}\n");
    for c in &correlations {
        corr_csv.push_str(&format!("{},{:.6},{}\n", c.layer, c.r, c.n));
    }
    let mut passes_csv = format!("# {WER_NOTE}\n");
    if let Some((m, mm)) = inputs.baseline {
        passes_csv.push_str(&format!(
            "# unadapted baseline: eval_matched_fer={m:.6}, eval_mismatched_fer={mm:.6}\n"
        ));
    }
    passes_csv.push_str(METRICS_CSV_HEADER);
    passes_csv.push('\n');
    for row in inputs.passes {
        passes_csv.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            row.pass, row.k, row.eval_matched_fer, row.eval_mismatched_fer
        ));
    }

    ioutil::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let emit = |name: String, content: &str, files: &mut Vec<PathBuf>| -> Result<()> {
        let path = out_dir.join(name);
        ioutil::write_string(&path, content)?;
        files.push(path);
        Ok(())
    };
    emit("correlations.csv".to_string(), &corr_csv, &mut files)?;
    emit("passes.csv".to_string(), &passes_csv, &mut files)?;
    for (layer, table) in inputs.tables {
        emit(
            format!("scatter_layer{layer}.svg"),
            &scatter_svg(*layer, table),
            &mut files,
        )?;
    }
    emit(
        "activations_matched.svg".to_string(),
        &heatmap_svg(inputs.matched_trace, "matched"),
        &mut files,
    )?;
    emit(
        "activations_mismatched.svg".to_string(),
        &heatmap_svg(inputs.mismatched_trace, "mismatched"),
        &mut files,
    )?;
    Ok(Report {
        correlations,
        files,
    })
}
