use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use levymut::analysis::{ConvergenceStudy, EnsembleSummary, PointStats, RegimeVerdict};
use levymut::bounds::BoundTrajectories;
use levymut::report::RunReport;
use levymut::{PathRecord, Species};
use serde::Serialize;

/// 17 significant digits, enough to reproduce any double exactly.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub const PATH_COLUMNS: [&str; 9] = ["t", "x", "y", "lnx", "lny", "M1", "M2", "Q1", "Q2"];
pub const BOUND_COLUMNS: [&str; 4] = ["Lambda", "lambda", "Theta", "theta"];

pub fn path_file_name(index: usize) -> String {
    format!("path_{index:03}.csv")
}

/// Writes every `stride`-th grid point of a path, and always the last one.
pub fn write_path_csv(
    out: &mut impl Write,
    path: &PathRecord,
    bounds: Option<&BoundTrajectories>,
    stride: usize,
) -> io::Result<()> {
    let mut header: Vec<&str> = PATH_COLUMNS.to_vec();
    if bounds.is_some() {
        header.extend(BOUND_COLUMNS);
    }
    writeln!(out, "{}", header.join(","))?;
    let times = path.times();
    let last = times.len() - 1;
    let mut line = String::new();
    for i in (0..times.len()).filter(|&i| i % stride == 0 || i == last) {
        line.clear();
        let mut cols = vec![
            times[i],
            path.state[0][i],
            path.state[1][i],
            path.log_state[0][i],
            path.log_state[1][i],
            path.diffusion[0][i],
            path.diffusion[1][i],
            path.jump[0][i],
            path.jump[1][i],
        ];
        if let Some(b) = bounds {
            cols.extend([
                b.upper(Species::X)[i],
                b.lower(Species::X)[i],
                b.upper(Species::Y)[i],
                b.lower(Species::Y)[i],
            ]);
        }
        for (k, v) in cols.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&num(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_path_file(
    file: &Path,
    path: &PathRecord,
    bounds: Option<&BoundTrajectories>,
    stride: usize,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(file)?);
    write_path_csv(&mut w, path, bounds, stride)?;
    w.flush()
}

pub fn write_json(file: &Path, value: &impl Serialize) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(file)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

fn stats_header(out: &mut String, prefix: &str) {
    for stat in ["mean", "q05", "q50", "q95"] {
        let _ = write!(out, ",{prefix}_{stat}");
    }
}

fn stats_row(out: &mut String, s: &PointStats) {
    for v in [s.mean, s.q05, s.q50, s.q95] {
        out.push(',');
        out.push_str(&num(v));
    }
}

/// One row per sample time: state and time-average statistics, then the
/// moment curves.
pub fn ensemble_csv(e: &EnsembleSummary) -> String {
    let mut out = String::from("t");
    for prefix in ["x", "y", "xbar", "ybar"] {
        stats_header(&mut out, prefix);
    }
    for q in &e.moment_orders {
        let _ = write!(out, ",Ex^{q},Ey^{q}");
    }
    out.push('\n');
    for (t, time) in e.sample_times.iter().enumerate() {
        out.push_str(&num(*time));
        for stats in [&e.state[0], &e.state[1], &e.time_average[0], &e.time_average[1]] {
            stats_row(&mut out, &stats[t]);
        }
        for m in &e.moments {
            let _ = write!(out, ",{},{}", num(m[0][t]), num(m[1][t]));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Flat view of the checks: one row per measurement.
pub fn report_csv(r: &RunReport) -> String {
    let mut out =
        String::from("check,verdict,quantity,species,value,relation,bound,bound_high,ci_low,ci_high,passed\n");
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for c in &r.checks {
        let verdict = serde_json::to_value(c.verdict).expect("verdict serializes");
        let verdict = verdict.as_str().unwrap_or_default();
        if c.measurements.is_empty() {
            let _ = writeln!(out, "{},{verdict},,,,,,,,,", c.name);
        }
        for m in &c.measurements {
            let _ = writeln!(
                out,
                "{},{verdict},{},{},{},{},{},{},{},{},{}",
                c.name,
                csv_field(&m.quantity),
                m.species.map(|s| s.to_string()).unwrap_or_default(),
                num(m.value),
                m.relation,
                num(m.bound),
                opt(m.bound_high),
                opt(m.ci.map(|c| c.0)),
                opt(m.ci.map(|c| c.1)),
                m.passed
            );
        }
    }
    out
}

pub fn regime_csv(v: &RegimeVerdict) -> String {
    let mut out = String::from("species,class,r_inf,r_sup,beta_inf,beta_sup,threshold_low,threshold_high,case\n");
    for s in Species::BOTH {
        let r = &v.species[s.index()];
        let _ = writeln!(
            out,
            "{},{:?},{},{},{},{},{},{},{:?}",
            s.number(),
            r.class,
            num(r.growth.inf),
            num(r.growth.sup),
            num(r.beta.inf),
            num(r.beta.sup),
            num(r.threshold_low),
            num(r.threshold_high),
            v.case
        );
    }
    out
}

pub fn convergence_csv(s: &ConvergenceStudy) -> String {
    let mut out = String::from("dt_coarse,dt_fine,rms_difference,ratio,log_scheme_rms_difference\n");
    for k in 0..s.rms_differences.len() {
        let ratio = if k == 0 { String::new() } else { num(s.ratios[k - 1]) };
        let _ = writeln!(
            out,
            "{},{},{},{ratio},{}",
            num(s.dts[k]),
            num(s.dts[k + 1]),
            num(s.rms_differences[k]),
            num(s.log_scheme_rms_differences[k])
        );
    }
    out
}
