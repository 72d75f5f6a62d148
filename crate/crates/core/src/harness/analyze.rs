//! Cross-seed regret curves from a directory of trace files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::RunSummary;

use super::experiment::summary_file_name;
use super::trace::{fmt_sig9, read_trace};

/// Splits `trace-<policy>-seed<k>.csv`.
pub fn parse_trace_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_prefix("trace-")?.strip_suffix(".csv")?;
    let (policy, seed) = stem.rsplit_once("-seed")?;
    if policy.is_empty() {
        return None;
    }
    Some((policy.to_string(), seed.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSeries {
    pub policy: String,
    pub seeds: Vec<u64>,
    /// Index `t - 1` holds round `t`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RegretSeries {
    pub fn file_name(&self) -> String {
        format!("series-{}.csv", self.policy)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "mean_cum_regret", "std_cum_regret", "num_seeds"])?;
        let n = self.seeds.len().to_string();
        for (k, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            w.write_record([(k + 1).to_string(), fmt_sig9(*m), fmt_sig9(*s), n.clone()])?;
        }
        w.flush().map_err(|e| Error::io("<series writer>", e))?;
        Ok(())
    }
}

fn list_traces(dir: &Path) -> Result<BTreeMap<String, Vec<(u64, PathBuf)>>> {
    let mut groups: BTreeMap<String, Vec<(u64, PathBuf)>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some((policy, seed)) = name.to_str().and_then(parse_trace_name) {
            groups.entry(policy).or_default().push((seed, entry.path()));
        }
    }
    for v in groups.values_mut() {
        v.sort_unstable_by_key(|(s, _)| *s);
    }
    Ok(groups)
}

fn sibling_grid(dir: &Path, policy: &str, seed: u64) -> Result<Option<Vec<f64>>> {
    let p = dir.join(summary_file_name(policy, seed));
    if !p.exists() {
        return Ok(None);
    }
    let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let summary: RunSummary = serde_json::from_str(&s)?;
    Ok(Some(summary.grid))
}

/// Reads every trace in `dir`, checks they share a horizon and (where
/// summaries exist) a grid, and averages cumulative regret per policy.
pub fn analyze_dir(dir: &Path) -> Result<Vec<RegretSeries>> {
    let groups = list_traces(dir)?;
    if groups.is_empty() {
        return Err(Error::Empty("trace files"));
    }
    let mut horizon: Option<(usize, PathBuf)> = None;
    let mut grid: Option<(Vec<f64>, PathBuf)> = None;
    let mut out = Vec::with_capacity(groups.len());
    for (policy, files) in groups {
        let mut curves = Vec::with_capacity(files.len());
        for (seed, path) in &files {
            let rows = read_trace(path)?;
            if rows.is_empty() {
                return Err(Error::IncompatibleTraces(format!("{} has no rows", path.display())));
            }
            if rows.iter().enumerate().any(|(k, r)| r.round != k + 1) {
                return Err(Error::IncompatibleTraces(format!("{} rounds are not 1..T", path.display())));
            }
            match &horizon {
                Some((t, first)) if *t != rows.len() => {
                    return Err(Error::IncompatibleTraces(format!(
                        "{} has {} rounds but {} has {t}",
                        path.display(),
                        rows.len(),
                        first.display()
                    )))
                }
                None => horizon = Some((rows.len(), path.clone())),
                _ => {}
            }
            if let Some(g) = sibling_grid(dir, &policy, *seed)? {
                match &grid {
                    Some((g0, first)) if *g0 != g => {
                        return Err(Error::IncompatibleTraces(format!(
                            "{} uses grid {g:?} but {} uses {g0:?}",
                            path.display(),
                            first.display()
                        )))
                    }
                    None => grid = Some((g, path.clone())),
                    _ => {}
                }
            }
            curves.push(rows.into_iter().map(|r| r.cum_regret).collect::<Vec<_>>());
        }
        let t = curves[0].len();
        let n = curves.len() as f64;
        let mut mean = vec![0.0; t];
        let mut std = vec![0.0; t];
        for k in 0..t {
            let m = curves.iter().map(|c| c[k]).sum::<f64>() / n;
            mean[k] = m;
            if curves.len() > 1 {
                std[k] = (curves.iter().map(|c| (c[k] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            }
        }
        out.push(RegretSeries {
            policy,
            seeds: files.iter().map(|(s, _)| *s).collect(),
            mean,
            std,
        });
    }
    Ok(out)
}

/// Writes one `series-<policy>.csv` per policy into `out_dir`.
pub fn write_series(series: &[RegretSeries], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    series
        .iter()
        .map(|s| {
            let p = out_dir.join(s.file_name());
            let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            s.write_to(std::io::BufWriter::new(f))?;
            Ok(p)
        })
        .collect()
}
