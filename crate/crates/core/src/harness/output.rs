//! CSV persistence of traces, summaries and environment logs.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{AgentKind, RegretRecord, RegretTrace};

use super::envlog::EnvRow;
use super::stats::SummaryRow;

pub const TRACE_HEADER: [&str; 6] = ["run", "task", "round", "agent", "instant_regret", "cumulative_regret"];
pub const SUMMARY_HEADER: [&str; 4] = ["agent", "task", "mean_cumulative_regret", "stderr"];
pub const ENV_HEADER: [&str; 6] = ["run", "agent", "task", "round", "field", "hash"];

/// Decimal notation with 12 significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (11 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_trace<W: Write>(out: W, trace: &RegretTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.run.to_string(),
            r.task.to_string(),
            r.round.to_string(),
            r.agent.to_string(),
            format_sig(r.instant_regret),
            format_sig(r.cumulative_regret),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.agent.to_string(),
            r.task.to_string(),
            format_sig(r.mean_cumulative_regret),
            format_sig(r.stderr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_env_log<W: Write>(out: W, rows: &[EnvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ENV_HEADER)?;
    for r in rows {
        w.write_record([
            r.run.to_string(),
            r.agent.to_string(),
            r.task.to_string(),
            r.round.to_string(),
            r.field.as_str().to_string(),
            format!("{:016x}", r.hash),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("missing column `{name}`")))
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("bad value in column `{name}`")))
}

fn agent(rec: &csv::StringRecord, i: usize) -> Result<AgentKind> {
    let s = rec.get(i).unwrap_or_default();
    AgentKind::parse(s).ok_or_else(|| Error::Config(format!("unknown agent `{s}`")))
}

pub fn read_trace<R: Read>(input: R) -> Result<RegretTrace> {
    let mut rd = csv::Reader::from_reader(input);
    let h = rd.headers()?.clone();
    let idx: Vec<usize> = TRACE_HEADER.iter().map(|n| column(&h, n)).collect::<Result<_>>()?;
    let mut trace = RegretTrace::new();
    for rec in rd.records() {
        let rec = rec?;
        trace.records.push(RegretRecord {
            run: parse(&rec, idx[0], "run")?,
            task: parse(&rec, idx[1], "task")?,
            round: parse(&rec, idx[2], "round")?,
            agent: agent(&rec, idx[3])?,
            instant_regret: parse(&rec, idx[4], "instant_regret")?,
            cumulative_regret: parse(&rec, idx[5], "cumulative_regret")?,
        });
    }
    Ok(trace)
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let h = rd.headers()?.clone();
    let idx: Vec<usize> = SUMMARY_HEADER.iter().map(|n| column(&h, n)).collect::<Result<_>>()?;
    rd.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SummaryRow {
                agent: agent(&rec, idx[0])?,
                task: parse(&rec, idx[1], "task")?,
                mean_cumulative_regret: parse(&rec, idx[2], "mean_cumulative_regret")?,
                stderr: parse(&rec, idx[3], "stderr")?,
            })
        })
        .collect()
}

pub fn write_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut f)?;
    f.flush()?;
    Ok(())
}
