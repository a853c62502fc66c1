//! Readers and writers for the CSV artifacts. Floats are written with Rust's
//! shortest round-trip formatting, so parsing a file and writing it back
//! reproduces it byte for byte.

use super::HarnessError;
use crate::trainer::METRICS_HEADER;

pub const BASELINES_HEADER: &str = "method,lifetime,lifetime_continuous";

/// One baseline. `lifetime` is whole rounds, averaged for the random baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub method: String,
    pub lifetime: f64,
    pub continuous: f64,
}

fn bad(what: &str, line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{what} line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(what: &str, line: usize, tok: &str) -> Result<T, HarnessError> {
    tok.parse().map_err(|_| bad(what, line, format!("`{tok}` is not a number")))
}

fn rows<'a>(what: &'a str, text: &'a str, header: &str, width: usize) -> Result<Vec<(usize, Vec<&'a str>)>, HarnessError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(bad(what, 1, "unexpected header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != width {
                return Err(bad(what, i + 1, format!("expected {width} columns, found {}", cols.len())));
            }
            Ok((i + 1, cols))
        })
        .collect()
}

pub fn baselines_csv(rows: &[BaselineRow]) -> String {
    let mut out = format!("{BASELINES_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.method, r.lifetime, r.continuous));
    }
    out
}

pub fn parse_baselines_csv(text: &str) -> Result<Vec<BaselineRow>, HarnessError> {
    const W: &str = "baselines";
    rows(W, text, BASELINES_HEADER, 3)?
        .into_iter()
        .map(|(i, c)| {
            if c[0].is_empty() {
                return Err(bad(W, i, "empty method name"));
            }
            Ok(BaselineRow { method: c[0].to_string(), lifetime: num(W, i, c[1])?, continuous: num(W, i, c[2])? })
        })
        .collect()
}

/// One row of the per-iteration metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub mean_lifetime: f64,
    pub std_lifetime: f64,
    pub best_lifetime: u64,
    pub greedy_lifetime: u64,
    pub loss: f64,
    pub episodes: usize,
    pub sims: usize,
    pub mean_episode_reward: f64,
    pub active_sensors: usize,
    /// Empty unless the network changed right before this iteration.
    pub network_change: String,
    pub star_lifetime: u64,
    pub random_mean_lifetime: f64,
    pub mst_lifetime: u64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_lifetime,
            self.std_lifetime,
            self.best_lifetime,
            self.greedy_lifetime,
            self.loss,
            self.episodes,
            self.sims,
            self.mean_episode_reward,
            self.active_sensors,
            self.network_change,
            self.star_lifetime,
            self.random_mean_lifetime,
            self.mst_lifetime
        )
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    const W: &str = "metrics";
    rows(W, text, METRICS_HEADER, 14)?
        .into_iter()
        .map(|(i, c)| {
            Ok(MetricsRow {
                iteration: num(W, i, c[0])?,
                mean_lifetime: num(W, i, c[1])?,
                std_lifetime: num(W, i, c[2])?,
                best_lifetime: num(W, i, c[3])?,
                greedy_lifetime: num(W, i, c[4])?,
                loss: num(W, i, c[5])?,
                episodes: num(W, i, c[6])?,
                sims: num(W, i, c[7])?,
                mean_episode_reward: num(W, i, c[8])?,
                active_sensors: num(W, i, c[9])?,
                network_change: c[10].to_string(),
                star_lifetime: num(W, i, c[11])?,
                random_mean_lifetime: num(W, i, c[12])?,
                mst_lifetime: num(W, i, c[13])?,
            })
        })
        .collect()
}

pub fn metrics_text(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}
