//! File formats: sample CSV, grid JSON, and the trace / study / history / sweep
//! tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so output is
//! byte-identical across runs.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::SensitivityPoint;
use crate::distributions::{GridDistribution, SampleSet};
use crate::error::{Error, Result};
use crate::fdc::FdcState;
use crate::math::logsumexp;
use crate::threshold::{StudyRow, TracePoint};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// `x1,..,xd,reward,log_weight`; log weights are written normalized and the
/// reward column is empty when rewards were never evaluated.
pub fn write_samples_csv_to<W: Write>(out: W, set: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=set.dim()).map(|k| format!("x{k}")).collect();
    header.push("reward".into());
    header.push("log_weight".into());
    w.write_record(&header)?;
    let lw = set.normalized_log_weights();
    let rewards = set.rewards().ok();
    for (i, p) in set.points().enumerate() {
        let mut row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        row.push(fmt_opt(rewards.map(|r| r[i])));
        row.push(lw[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples_csv(path: &Path, set: &SampleSet) -> Result<()> {
    write_samples_csv_to(create(path)?, set)
}

pub fn read_samples_csv_from<R: Read>(input: R) -> Result<SampleSet> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let dim = cols.iter().take_while(|c| c.starts_with('x')).count();
    if dim == 0 || cols.len() != dim + 2 || cols[dim] != "reward" || cols[dim + 1] != "log_weight" {
        return Err(Error::Malformed(format!("unexpected sample header {cols:?}")));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Malformed(format!("bad number {s:?}: {e}")))
    };
    let (mut coords, mut rewards, mut lw) = (Vec::new(), Vec::new(), Vec::new());
    let mut any_missing_reward = false;
    for rec in rdr.records() {
        let rec = rec?;
        for k in 0..dim {
            coords.push(parse(&rec[k])?);
        }
        if rec[dim].trim().is_empty() {
            any_missing_reward = true;
        } else {
            rewards.push(parse(&rec[dim])?);
        }
        lw.push(parse(&rec[dim + 1])?);
    }
    let mut set = SampleSet::new(dim, coords)?;
    if !any_missing_reward {
        set = set.with_reward_values(rewards)?;
    } else if !rewards.is_empty() {
        return Err(Error::Malformed("reward column is only partially filled".into()));
    }
    set.with_log_weights(lw)
}

pub fn read_samples_csv(path: &Path) -> Result<SampleSet> {
    read_samples_csv_from(File::open(path)?)
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// `-inf` log mass is stored as `null`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: usize,
    log_mass: Vec<Option<f64>>,
}

pub fn grid_to_json(grid: &GridDistribution) -> Result<String> {
    let file = GridFile {
        lo: grid.lo().to_vec(),
        hi: grid.hi().to_vec(),
        n: grid.n(),
        log_mass: grid.log_mass().iter().map(|l| l.is_finite().then_some(*l)).collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parse and validate a grid file; a total mass off by more than `1e-8` is
/// reported as malformed rather than silently renormalized.
pub fn grid_from_json(text: &str) -> Result<GridDistribution> {
    let file: GridFile = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("grid file: {e}")))?;
    if file.log_mass.len() != file.n * file.n {
        return Err(Error::Malformed(format!(
            "grid file has {} cells, expected {}",
            file.log_mass.len(),
            file.n * file.n
        )));
    }
    let lm: Vec<f64> = file.log_mass.iter().map(|l| l.unwrap_or(f64::NEG_INFINITY)).collect();
    let total = logsumexp(&lm);
    if !(total.abs() <= 1e-8) {
        return Err(Error::Malformed(format!(
            "grid file total log mass is {total}, expected 0"
        )));
    }
    GridDistribution::from_log_mass(&file.lo, &file.hi, file.n, lm).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn write_grid_json(path: &Path, grid: &GridDistribution) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(grid_to_json(grid)?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_grid_json(path: &Path) -> Result<GridDistribution> {
    grid_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

fn write_rows<W: Write>(out: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv_to<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    write_rows(
        out,
        &["iter", "t", "objective", "gradient", "batch_size"],
        trace.iter().map(|p| {
            vec![
                p.iter.to_string(),
                p.t.to_string(),
                p.objective.to_string(),
                p.gradient.to_string(),
                p.batch_size.to_string(),
            ]
        }),
    )
}

pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    write_trace_csv_to(create(path)?, trace)
}

pub fn write_study_csv(path: &Path, rows: &[StudyRow]) -> Result<()> {
    write_rows(
        create(path)?,
        &["N", "bias", "variance", "trials"],
        rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.bias.to_string(),
                r.variance.to_string(),
                r.trials.to_string(),
            ]
        }),
    )
}

/// `k,eta,t_k,kl,js,tv`; `eta` is empty on the initial row.
pub fn write_fdc_history_csv_to<W: Write>(out: W, state: &FdcState) -> Result<()> {
    write_rows(
        out,
        &["k", "eta", "t_k", "kl", "js", "tv"],
        (0..state.t_history.len()).map(|k| {
            let d = state.distance_history[k];
            vec![
                k.to_string(),
                fmt_opt(state.eta_history[k]),
                state.t_history[k].to_string(),
                d.kl.to_string(),
                d.js.to_string(),
                d.tv.to_string(),
            ]
        }),
    )
}

pub fn write_fdc_history_csv(path: &Path, state: &FdcState) -> Result<()> {
    write_fdc_history_csv_to(create(path)?, state)
}

/// `mode,alpha,beta,delta,kl_measured,kl_bound` followed by `sign,t_star,printed_bound_holds`.
pub fn write_sweep_csv_to<W: Write>(out: W, points: &[SensitivityPoint]) -> Result<()> {
    write_rows(
        out,
        &[
            "mode",
            "alpha",
            "beta",
            "delta",
            "kl_measured",
            "kl_bound",
            "sign",
            "t_star",
            "printed_bound_holds",
        ],
        points.iter().map(|p| {
            vec![
                p.mode.to_string(),
                p.alpha.to_string(),
                p.beta.to_string(),
                p.delta.to_string(),
                p.kl_measured.to_string(),
                p.kl_bound.to_string(),
                p.sign.to_string(),
                p.t_star.to_string(),
                p.printed_bound_holds.to_string(),
            ]
        }),
    )
}

pub fn write_sweep_csv(path: &Path, points: &[SensitivityPoint]) -> Result<()> {
    write_sweep_csv_to(create(path)?, points)
}

/// Two-column table with the given header.
pub fn write_xy_csv(path: &Path, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("column lengths differ"));
    }
    write_rows(
        create(path)?,
        &header,
        xs.iter().zip(ys).map(|(x, y)| vec![x.to_string(), y.to_string()]),
    )
}

/// Generic table writer for callers with their own schema.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_rows(create(path)?, header, rows.iter().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{sample_prior, GaussianPrior, RewardField};

    #[test]
    fn samples_round_trip() {
        let s = sample_prior(&GaussianPrior::standard(2), 50, 3)
            .unwrap()
            .with_rewards(&RewardField::sum2());
        let s = s.reweight_by(&vec![0.25; 50]).unwrap();
        let mut buf = Vec::new();
        write_samples_csv_to(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,reward,log_weight\n"));
        let back = read_samples_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 50);
        assert_eq!(back.rewards().unwrap(), s.rewards().unwrap());
        for (a, b) in back.weights().iter().zip(s.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_round_trip_and_corruption() {
        let mut lm = vec![0.0; 16];
        lm[3] = f64::NEG_INFINITY;
        let g = GridDistribution::from_log_mass(&[0.0, 0.0], &[1.0, 2.0], 4, lm).unwrap();
        let text = grid_to_json(&g).unwrap();
        assert!(text.contains("null"));
        let back = grid_from_json(&text).unwrap();
        assert_eq!(back, g);

        assert!(matches!(grid_from_json("{not json"), Err(Error::Malformed(_))));
        let short = r#"{"lo":[0,0],"hi":[1,1],"n":2,"log_mass":[0,0,0]}"#;
        assert!(matches!(grid_from_json(short), Err(Error::Malformed(_))));
        let unnormalized = r#"{"lo":[0,0],"hi":[1,1],"n":2,"log_mass":[0,0,0,0]}"#;
        assert!(matches!(grid_from_json(unnormalized), Err(Error::Malformed(_))));
    }
}
