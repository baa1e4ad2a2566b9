use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{EvfError, Result};

use super::mpc::EpisodeRecord;
use super::task::{ObjectSplit, TaskKind};

/// One line of an episode table: the per-episode numbers the summary needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub method: String,
    pub kind: TaskKind,
    pub split: ObjectSplit,
    pub object_id: u32,
    pub episode: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub mean_error: f64,
}

pub const EPISODE_HEADER: &str = "method,task,split,object_id,episode,initial_error,final_error,mean_error";

impl EpisodeSummary {
    pub fn of(record: &EpisodeRecord, episode: usize) -> Self {
        Self {
            method: record.method.clone(),
            kind: record.kind,
            split: record.split,
            object_id: record.object_id,
            episode,
            initial_error: record.initial_error,
            final_error: record.final_error(),
            mean_error: record.mean_error(),
        }
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.kind.name(),
            self.split.name(),
            self.object_id,
            self.episode,
            self.initial_error,
            self.final_error,
            self.mean_error
        )
    }
}

pub fn episodes_csv(rows: &[EpisodeSummary]) -> String {
    let mut s = format!("{EPISODE_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

/// Parses a table written by [`episodes_csv`].
pub fn parse_episodes_csv(text: &str) -> Result<Vec<EpisodeSummary>> {
    let bad = |n: usize, what: &str| EvfError::Config(format!("episode table line {n}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EPISODE_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(n, "expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        out.push(EpisodeSummary {
            method: f[0].to_string(),
            kind: TaskKind::parse(f[1]).map_err(|_| bad(n, "bad task"))?,
            split: ObjectSplit::parse(f[2]).map_err(|_| bad(n, "bad split"))?,
            object_id: f[3].parse().map_err(|_| bad(n, "bad object id"))?,
            episode: f[4].parse().map_err(|_| bad(n, "bad episode"))?,
            initial_error: num(f[5])?,
            final_error: num(f[6])?,
            mean_error: num(f[7])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub method: String,
    pub kind: TaskKind,
    pub split: ObjectSplit,
    pub episodes: usize,
    pub mean_final: f64,
    pub median_final: f64,
    /// Mean over episodes of the per-episode mean error across steps.
    pub mean_over_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSummary {
    pub rows: Vec<ControlRow>,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Groups records by (method, task, split).
pub fn report_control(records: &[EpisodeRecord]) -> ControlSummary {
    let rows: Vec<EpisodeSummary> = records.iter().enumerate().map(|(i, r)| EpisodeSummary::of(r, i)).collect();
    summarize(&rows)
}

pub fn summarize(episodes: &[EpisodeSummary]) -> ControlSummary {
    let mut groups: BTreeMap<(String, TaskKind, ObjectSplit), Vec<&EpisodeSummary>> = BTreeMap::new();
    for r in episodes {
        groups.entry((r.method.clone(), r.kind, r.split)).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((method, kind, split), rs)| {
            let finals: Vec<f64> = rs.iter().map(|r| r.final_error).collect();
            let over_time: Vec<f64> = rs.iter().map(|r| r.mean_error).collect();
            ControlRow {
                method,
                kind,
                split,
                episodes: rs.len(),
                mean_final: mean(&finals),
                median_final: median(&finals),
                mean_over_time: mean(&over_time),
            }
        })
        .collect();
    ControlSummary { rows }
}

impl ControlSummary {
    pub fn find(&self, method: &str, kind: TaskKind, split: ObjectSplit) -> Option<&ControlRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.kind == kind && r.split == split)
    }

    /// Unseen over seen median final error per (method, task), where both
    /// splits are present and the seen median is positive.
    pub fn degradations(&self) -> Vec<(String, TaskKind, f64)> {
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| r.split == ObjectSplit::Seen) {
            if let Some(u) = self.find(&r.method, r.kind, ObjectSplit::Unseen) {
                if r.median_final > 0.0 {
                    out.push((r.method.clone(), r.kind, u.median_final / r.median_final));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,task,split,episodes,mean_final,median_final,mean_over_time\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.method,
                r.kind.name(),
                r.split.name(),
                r.episodes,
                r.mean_final,
                r.median_final,
                r.mean_over_time
            );
        }
        s
    }

    /// Aligned table with one row per method and task, seen and unseen side
    /// by side.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<(String, TaskKind)> = self.rows.iter().map(|r| (r.method.clone(), r.kind)).collect();
        keys.sort();
        keys.dedup();
        let cell = |r: Option<&ControlRow>, f: fn(&ControlRow) -> f64| r.map_or("-".to_string(), |r| format!("{:.1}", f(r)));
        let mut s = format!(
            "{:<12} {:<11} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
            "method", "task", "seen mean", "seen median", "seen time", "unseen mean", "unseen med", "unseen time"
        );
        for (m, k) in keys {
            let seen = self.find(&m, k, ObjectSplit::Seen);
            let unseen = self.find(&m, k, ObjectSplit::Unseen);
            let _ = writeln!(
                s,
                "{:<12} {:<11} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
                m,
                k.name(),
                cell(seen, |r| r.mean_final),
                cell(seen, |r| r.median_final),
                cell(seen, |r| r.mean_over_time),
                cell(unseen, |r| r.mean_final),
                cell(unseen, |r| r.median_final),
                cell(unseen, |r| r.mean_over_time)
            );
        }
        s
    }
}
