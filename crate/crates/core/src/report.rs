//! Comparison tables across placements of one job set, plus SVG rendering.
//!
//! Each placement becomes one row carrying its makespan, fragmentation and
//! ratios against the theoretical bounds; cross-ratios are normalized
//! against the row labeled `idealloc` when present. Values below 1.0 mean
//! "better than the reference". Ratios are rounded to 4 decimal places at
//! construction, so CSV and JSON emission round-trip losslessly.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::{
    ba_upper_bound, fragmentation, load_profile, makespan, robson_bound, round_ratio,
    validate_placement, MetricsError, Placement,
};

/// Label of the offline-oracle row that cross-ratios normalize against.
pub const ORACLE_LABEL: &str = "idealloc";

/// Fragmentation ratio against the oracle row.
///
/// A zero-fragmentation oracle makes the quotient meaningless for any
/// nonzero numerator; that case is reported as a distinguished marker
/// rather than a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FragRatio {
    Ratio(f64),
    OracleZero,
}

/// One comparison table row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub workload: String,
    pub n_jobs: u64,
    pub setting: String,
    #[serde(rename = "L")]
    pub max_load: u64,
    pub h_max: u64,
    pub robson: Option<u64>,
    pub ba_upper: u64,
    pub makespan: u64,
    pub fragmentation: f64,
    pub makespan_vs_robson: Option<f64>,
    pub makespan_vs_ba_bound: f64,
    pub makespan_vs_oracle: Option<f64>,
    #[serde(serialize_with = "serialize_frag_ratio")]
    pub frag_vs_oracle: Option<FragRatio>,
}

fn serialize_frag_ratio<S: serde::Serializer>(
    value: &Option<FragRatio>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match value {
        None => s.serialize_none(),
        Some(FragRatio::Ratio(r)) => s.serialize_f64(*r),
        Some(FragRatio::OracleZero) => s.serialize_str("oracle-zero"),
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("placement `{0}` does not cover the same job set as `{1}`")]
    JobSetMismatch(String, String),
    #[error("no placements to compare")]
    Empty,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("comparison csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Builds one comparison row per placement.
///
/// All placements must describe the same job set (ids, times, heights).
/// When a row labeled [`ORACLE_LABEL`] is present, the per-row oracle
/// ratios are computed against it.
pub fn compare(
    workload: &str,
    placements: &[Placement],
    page_size: u64,
) -> Result<Vec<ComparisonRow>, ReportError> {
    let first = placements.first().ok_or(ReportError::Empty)?;
    let mut reference = first.to_jobs();
    reference.sort_unstable_by_key(|j| j.id);
    for p in &placements[1..] {
        let mut jobs = p.to_jobs();
        jobs.sort_unstable_by_key(|j| j.id);
        if jobs != reference {
            return Err(ReportError::JobSetMismatch(
                p.label.clone(),
                first.label.clone(),
            ));
        }
    }
    let profile = load_profile(&reference);
    let robson = robson_bound(profile.max_load, profile.h_max).ok();
    let ba = ba_upper_bound(profile.max_load, profile.h_max);
    let oracle = placements.iter().find(|p| p.label == ORACLE_LABEL);
    let oracle_measures = match oracle {
        Some(p) => Some((
            makespan(p),
            fragmentation(p, page_size)?.fragmentation,
        )),
        None => None,
    };

    let mut rows = Vec::with_capacity(placements.len());
    for p in placements {
        let span = makespan(p);
        let frag = fragmentation(p, page_size)?.fragmentation;
        let (vs_oracle, frag_vs_oracle) = match oracle_measures {
            Some((oracle_span, oracle_frag)) => {
                let m = (oracle_span > 0).then(|| round_ratio(span as f64 / oracle_span as f64));
                let f = if oracle_frag == 0.0 && frag == 0.0 {
                    Some(FragRatio::Ratio(1.0))
                } else if oracle_frag == 0.0 {
                    Some(FragRatio::OracleZero)
                } else {
                    Some(FragRatio::Ratio(round_ratio(frag / oracle_frag)))
                };
                (m, f)
            }
            None => (None, None),
        };
        rows.push(ComparisonRow {
            workload: workload.to_string(),
            n_jobs: reference.len() as u64,
            setting: p.label.clone(),
            max_load: profile.max_load,
            h_max: profile.h_max,
            robson,
            ba_upper: ba,
            makespan: span,
            fragmentation: round_ratio(frag),
            makespan_vs_robson: robson.map(|r| round_ratio(span as f64 / r as f64)),
            makespan_vs_ba_bound: round_ratio(span as f64 / ba as f64),
            makespan_vs_oracle: vs_oracle,
            frag_vs_oracle,
        });
    }
    Ok(rows)
}

/// Fixed comparison CSV header.
pub const COMPARISON_HEADER: &str = "workload,n_jobs,setting,L,h_max,robson,ba_upper,makespan,\
fragmentation,makespan_vs_robson,makespan_vs_ba_bound,makespan_vs_oracle,frag_vs_oracle";

/// Writes comparison rows as CSV; absent ratios become empty cells, the
/// oracle-zero marker the literal `oracle-zero`.
pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.workload,
            row.n_jobs,
            row.setting,
            row.max_load,
            row.h_max,
            row.robson.map_or(String::new(), |v| v.to_string()),
            row.ba_upper,
            row.makespan,
            row.fragmentation,
            row.makespan_vs_robson.map_or(String::new(), |v| v.to_string()),
            row.makespan_vs_ba_bound,
            row.makespan_vs_oracle.map_or(String::new(), |v| v.to_string()),
            match row.frag_vs_oracle {
                None => String::new(),
                Some(FragRatio::Ratio(r)) => r.to_string(),
                Some(FragRatio::OracleZero) => "oracle-zero".to_string(),
            },
        );
    }
    out
}

/// Parses the comparison CSV back into rows.
pub fn comparison_from_csv(text: &str) -> Result<Vec<ComparisonRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == COMPARISON_HEADER => {}
        _ => {
            return Err(ReportError::Csv {
                line: 1,
                message: "missing or wrong header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(ReportError::Csv {
                line: lineno,
                message: format!("expected 13 fields, got {}", fields.len()),
            });
        }
        let err = |message: String| ReportError::Csv { line: lineno, message };
        let parse_u64 = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| err(format!("{what} `{s}` is not a u64")))
        };
        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("{what} `{s}` is not a number")))
        };
        let opt_u64 = |s: &str, what: &str| -> Result<Option<u64>, ReportError> {
            if s.is_empty() { Ok(None) } else { parse_u64(s, what).map(Some) }
        };
        let opt_f64 = |s: &str, what: &str| -> Result<Option<f64>, ReportError> {
            if s.is_empty() { Ok(None) } else { parse_f64(s, what).map(Some) }
        };
        rows.push(ComparisonRow {
            workload: fields[0].to_string(),
            n_jobs: parse_u64(fields[1], "n_jobs")?,
            setting: fields[2].to_string(),
            max_load: parse_u64(fields[3], "L")?,
            h_max: parse_u64(fields[4], "h_max")?,
            robson: opt_u64(fields[5], "robson")?,
            ba_upper: parse_u64(fields[6], "ba_upper")?,
            makespan: parse_u64(fields[7], "makespan")?,
            fragmentation: parse_f64(fields[8], "fragmentation")?,
            makespan_vs_robson: opt_f64(fields[9], "makespan_vs_robson")?,
            makespan_vs_ba_bound: parse_f64(fields[10], "makespan_vs_ba_bound")?,
            makespan_vs_oracle: opt_f64(fields[11], "makespan_vs_oracle")?,
            frag_vs_oracle: match fields[12] {
                "" => None,
                "oracle-zero" => Some(FragRatio::OracleZero),
                s => Some(FragRatio::Ratio(parse_f64(s, "frag_vs_oracle")?)),
            },
        });
    }
    Ok(rows)
}

/// Serializes comparison rows as a JSON array.
pub fn comparison_to_json(rows: &[ComparisonRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Rendering options for [`render_svg`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub width_px: u32,
    pub height_px: u32,
    pub page_gridlines: bool,
    pub page_size: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width_px: 1200,
            height_px: 600,
            page_gridlines: false,
            page_size: crate::metrics::DEFAULT_PAGE_SIZE,
        }
    }
}

/// Renders a valid placement as an SVG document: byte-time on the x axis,
/// addresses on the y axis (upward), one rectangle per job with a
/// deterministic per-id color. Rendering is a pure function of its inputs.
pub fn render_svg(placement: &Placement, options: &RenderOptions) -> Result<String, ReportError> {
    if !validate_placement(placement).is_valid() {
        return Err(ReportError::Metrics(MetricsError::InvalidPlacement(0)));
    }
    let width = options.width_px.max(1) as f64;
    let height = options.height_px.max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        options.width_px, options.height_px, options.width_px, options.height_px
    );
    if !placement.jobs.is_empty() {
        let t_max = placement.jobs.iter().map(|j| j.end).max().unwrap().max(1);
        let a_max = placement.jobs.iter().map(|j| j.top()).max().unwrap().max(1);
        let sx = width / t_max as f64;
        let sy = height / a_max as f64;
        if options.page_gridlines {
            let mut line = options.page_size;
            while line < a_max {
                let y = height - line as f64 * sy;
                let _ = writeln!(
                    svg,
                    r##"  <line x1="0" y1="{y:.3}" x2="{width:.3}" y2="{y:.3}" stroke="#999999" stroke-width="0.5"/>"##
                );
                line += options.page_size;
            }
        }
        for job in &placement.jobs {
            let x = job.start as f64 * sx;
            let w = (job.end - job.start) as f64 * sx;
            let y = height - job.top() as f64 * sy;
            let h = job.height as f64 * sy;
            let _ = writeln!(
                svg,
                r#"  <rect data-id="{}" x="{x:.3}" y="{y:.3}" width="{w:.3}" height="{h:.3}" fill="{}"/>"#,
                job.id,
                id_color(job.id)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Deterministic medium-brightness color derived from a job id.
fn id_color(id: u64) -> String {
    let h = id.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let r = 64 + (h & 0x7F) as u8;
    let g = 64 + ((h >> 7) & 0x7F) as u8;
    let b = 64 + ((h >> 14) & 0x7F) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}
