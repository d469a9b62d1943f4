//! File formats. Floats are written in the shortest decimal form that
//! parses back to the same `f64`.
//!
//! | file | columns |
//! |------|---------|
//! | summary CSV | `mechanism,trials,seed,mean_error,error_sd,q50,q90,q99,failure_threshold,failure_frequency,mean_rounds,mean_budget` |
//! | trials JSONL | one [`TrialRecord`] object per line |
//! | query log CSV | `round,rho_i,sensitivity_bound,answer` |
//! | instance CSV | `index,loss` |
//! | certification CSV | `claim,parameters,verdict,margin` |
//! | equal-budget CSV | the fields of [`EqualBudgetRow`] in declaration order |

use std::io::{BufRead, Read, Write};

use privsel_core::oracle::QueryRecord;
use privsel_core::{LossInstance, SelectionResult};
use serde::{Deserialize, Serialize};

use crate::certify::ReportRow;
use crate::equal_budget::EqualBudgetRow;
use crate::error::{Error, Result};
use crate::harness::{ExperimentSummary, TrialRecord};

pub const SUMMARY_HEADER: &str =
    "mechanism,trials,seed,mean_error,error_sd,q50,q90,q99,failure_threshold,failure_frequency,mean_rounds,mean_budget";
pub const QUERY_LOG_HEADER: &str = "round,rho_i,sensitivity_bound,answer";
pub const INSTANCE_HEADER: &str = "index,loss";
pub const REPORT_HEADER: &str = "claim,parameters,verdict,margin";

pub fn write_summary_csv<W: Write>(w: W, summary: &ExperimentSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in &summary.rows {
        out.serialize(row)?;
    }
    if summary.rows.is_empty() {
        out.write_record(SUMMARY_HEADER.split(','))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trials_jsonl<W: Write>(mut w: W, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_jsonl<R: BufRead>(r: R) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct QueryRow {
    round: usize,
    rho_i: f64,
    sensitivity_bound: f64,
    answer: f64,
}

pub fn write_query_log_csv<W: Write>(w: W, log: &[QueryRecord]) -> Result<()> {
    // Explicit header so an empty log still names its columns.
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(QUERY_LOG_HEADER.split(','))?;
    for q in log {
        out.serialize(QueryRow {
            round: q.round,
            rho_i: q.rho_i,
            sensitivity_bound: q.sensitivity_bound,
            answer: q.answer,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a query log back as `(round, rho_i, sensitivity_bound, answer)`.
pub fn read_query_log_csv<R: Read>(r: R) -> Result<Vec<(usize, f64, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<QueryRow>()
        .map(|row| {
            let q = row?;
            Ok((q.round, q.rho_i, q.sensitivity_bound, q.answer))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct InstanceRow {
    index: usize,
    loss: f64,
}

pub fn write_instance_csv<W: Write>(w: W, inst: &LossInstance) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (index, &loss) in inst.losses().iter().enumerate() {
        out.serialize(InstanceRow { index, loss })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an instance CSV; rows must be in index order starting at 0.
pub fn read_instance_csv<R: Read>(r: R) -> Result<LossInstance> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut losses = Vec::new();
    for row in rdr.deserialize::<InstanceRow>() {
        let row = row?;
        if row.index != losses.len() {
            return Err(Error::Config(format!("instance row {} out of order", row.index)));
        }
        losses.push(row.loss);
    }
    Ok(LossInstance::new(losses)?)
}

pub fn write_report_csv<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER.split(','))?;
    for r in rows {
        out.write_record([r.claim.as_str(), r.parameters.as_str(), r.verdict.name(), &r.margin.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_equal_budget_csv<W: Write>(w: W, rows: &[EqualBudgetRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn selection_json(result: &SelectionResult) -> Result<String> {
    Ok(serde_json::to_string(result)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::MechanismSummary;

    #[test]
    fn summary_header_is_frozen() {
        let s = ExperimentSummary {
            rows: vec![MechanismSummary {
                mechanism: "bin_tree".into(),
                trials: 4,
                seed: 7,
                mean_error: 2.5,
                error_sd: 5.0,
                q50: 0.0,
                q90: 10.0,
                q99: 10.0,
                failure_threshold: 5.0,
                failure_frequency: 0.25,
                mean_rounds: 10.0,
                mean_budget: 1.0,
            }],
        };
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SUMMARY_HEADER));
        assert_eq!(lines.next(), Some("bin_tree,4,7,2.5,5.0,0.0,10.0,10.0,5.0,0.25,10.0,1.0"));
    }

    #[test]
    fn query_log_round_trips_exactly() {
        let log = vec![
            QueryRecord { round: 0, rho_i: 0.1, sensitivity_bound: 1.0, answer: -1.234567890123e-7, true_value: 0.0 },
            QueryRecord { round: 1, rho_i: 1.0 / 3.0, sensitivity_bound: 0.5, answer: 12345.678, true_value: 0.0 },
        ];
        let mut buf = Vec::new();
        write_query_log_csv(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,rho_i,sensitivity_bound,answer\n0,0.1,1.0,"));
        let back = read_query_log_csv(buf.as_slice()).unwrap();
        for (q, b) in log.iter().zip(back) {
            assert_eq!((q.round, q.rho_i, q.sensitivity_bound, q.answer), b);
        }
    }

    #[test]
    fn empty_query_log_still_has_header() {
        let mut buf = Vec::new();
        write_query_log_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,rho_i,sensitivity_bound,answer\n");
    }

    #[test]
    fn instance_round_trips() {
        let inst = LossInstance::new(vec![0.0, 0.1, 1e-300, 7.5]).unwrap();
        let mut buf = Vec::new();
        write_instance_csv(&mut buf, &inst).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("index,loss\n0,0.0\n1,0.1\n"));
        assert_eq!(read_instance_csv(buf.as_slice()).unwrap(), inst);
    }

    #[test]
    fn selection_result_json_has_four_fields() {
        let r = SelectionResult { winner: 3, rounds_used: 10, budget_spent: 1.0, recursion_depth: 0 };
        assert_eq!(
            selection_json(&r).unwrap(),
            r#"{"winner":3,"rounds_used":10,"budget_spent":1.0,"recursion_depth":0}"#
        );
    }
}
