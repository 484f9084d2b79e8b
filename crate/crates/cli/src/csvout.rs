//! Metrics CSV export with the fixed schema
//! `iter,time_s,objective,fixed_point_residual,isnr`.
//!
//! Floats are written with Rust's shortest round-trip formatting; unavailable
//! metrics leave their field empty. Wall time is omitted by default so that
//! identical runs produce byte-identical files; pass `wall_time = true` to
//! record it at the cost of reproducibility.

use std::io::Write;

use pdsplit_core::solvers::TraceRecord;

pub const CSV_HEADER: &str = "iter,time_s,objective,fixed_point_residual,isnr";

pub fn write_header(w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")
}

pub fn write_record(w: &mut dyn Write, rec: &TraceRecord, wall_time: bool) -> std::io::Result<()> {
    let time = if wall_time {
        format_float(rec.elapsed_s)
    } else {
        String::new()
    };
    writeln!(
        w,
        "{},{},{},{},{}",
        rec.iter,
        time,
        rec.objective.map(format_float).unwrap_or_default(),
        format_float(rec.residual),
        rec.isnr.map(format_float).unwrap_or_default(),
    )
}

fn format_float(v: f64) -> String {
    format!("{v}")
}
