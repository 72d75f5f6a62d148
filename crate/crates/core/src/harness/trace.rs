//! Per-round CSV traces.
//!
//! Header: `round,arm,exit_layer,score,reward,correct_prob,correct,cum_regret`.
//! `arm` is empty for rounds that ran to the final layer without a threshold;
//! `correct` is 0 or 1; floats carry 9 significant digits.

use std::io::{Read, Write};
use std::path::Path;

use crate::bandit::RunTrace;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const TRACE_HEADER: [&str; 8] = [
    "round",
    "arm",
    "exit_layer",
    "score",
    "reward",
    "correct_prob",
    "correct",
    "cum_regret",
];

/// `%.9g`-style formatting.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// One parsed trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub round: usize,
    pub arm: Option<usize>,
    pub exit_layer: usize,
    pub score: f64,
    pub reward: f64,
    pub correct_prob: f64,
    pub correct: bool,
    pub cum_regret: f64,
}

pub fn write_trace_to<F: Real, W: Write>(trace: &RunTrace<F>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.rows {
        w.write_record([
            r.round.to_string(),
            r.arm.map(|a| a.to_string()).unwrap_or_default(),
            r.exit_layer.to_string(),
            fmt_sig9(r.score.to_f64_lossy()),
            fmt_sig9(r.reward.to_f64_lossy()),
            fmt_sig9(r.correct_prob.to_f64_lossy()),
            u8::from(r.correct).to_string(),
            fmt_sig9(r.cum_regret.to_f64_lossy()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

pub fn write_trace<F: Real>(trace: &RunTrace<F>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(trace, std::io::BufWriter::new(f))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
    rec.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::IncompatibleTraces(format!("line {line}: bad `{}` field", TRACE_HEADER[k])))
}

pub fn read_trace_from<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::IncompatibleTraces(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let arm = match rec.get(1) {
            Some("") => None,
            _ => Some(field(&rec, 1, line)?),
        };
        let correct: u8 = field(&rec, 6, line)?;
        rows.push(TraceRecord {
            round: field(&rec, 0, line)?,
            arm,
            exit_layer: field(&rec, 2, line)?,
            score: field(&rec, 3, line)?,
            reward: field(&rec, 4, line)?,
            correct_prob: field(&rec, 5, line)?,
            correct: correct == 1,
            cum_regret: field(&rec, 7, line)?,
        });
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace_from(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::TraceRow;

    #[test]
    fn sig9_examples() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(-2.0 / 3.0), "-0.666666667");
        assert_eq!(fmt_sig9(123456.789), "123456.789");
        assert_eq!(fmt_sig9(1234567891.0), "1.23456789e+09");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig9(0.0001234), "0.0001234");
        assert_eq!(fmt_sig9(12.0), "12");
    }

    #[test]
    fn round_trip() {
        let rows = vec![
            TraceRow {
                round: 1,
                arm: Some(3),
                exit_layer: 4,
                score: 0.812345678912,
                reward: 0.8,
                correct_prob: 0.9,
                correct: true,
                reliability: 0.7,
                cum_regret: 0.0,
            },
            TraceRow {
                round: 2,
                arm: None,
                exit_layer: 12,
                score: 0.1,
                reward: -0.01,
                correct_prob: 0.95,
                correct: false,
                reliability: 0.7,
                cum_regret: 0.25,
            },
        ];
        let t = RunTrace {
            policy: "x".into(),
            num_layers: 12,
            grid: vec![0.5, 1.0],
            rows,
        };
        let mut buf = Vec::new();
        write_trace_to(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,arm,exit_layer,score,reward,correct_prob,correct,cum_regret\n"));
        assert!(text.contains("\n2,,12,0.1,-0.01,0.95,0,0.25\n"));
        let back = read_trace_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].arm, Some(3));
        assert_eq!(back[1].arm, None);
        assert!((back[0].score - 0.812345679).abs() < 1e-12);
        assert!(!back[1].correct);
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(read_trace_from("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "round,arm,exit_layer,score,reward,correct_prob,correct,cum_regret\n1,x,2,0,0,0,1,0\n";
        assert!(read_trace_from(bad.as_bytes()).is_err());
    }
}
