//! Text dumps of a replay buffer and of episode outcomes.
//!
//! Buffer snapshot (`cluster<c>_buffer.csv`):
//!
//! ```text
//! # replay-snapshot v1 capacity=<n> alpha=<f> priority_epsilon=<f> mode=<per|uniform> max_priority=<f> next_slot=<n>
//! slot,priority,id,episode_id,round,action,reward,done,terminal_kind,hazard_at_next,goal_dist_delta,obs,next_obs
//! 0,0.7071,12,3,0,4,-0.01,0,none,0.0001,-0.02,0.05 0.04 ...,0.05 0.09 ...
//! ```
//!
//! `priority` is the sampling leaf value. Observations are space-separated.
//! Floats use the shortest representation that parses back to the same
//! bits, so a restored buffer samples identically to the original.
//!
//! Episode outcomes (`cluster<c>_episodes.csv`):
//!
//! ```text
//! episode_id,terminal_kind,final_goal_distance
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::ReplayBuffer;
use crate::config::ReplayMode;
use crate::environment::{EpisodeOutcome, Observation, TerminalKind, Transition};
use crate::error::{Error, Result};

const BUFFER_MAGIC: &str = "# replay-snapshot v1";
const BUFFER_HEADER: &str =
    "slot,priority,id,episode_id,round,action,reward,done,terminal_kind,hazard_at_next,goal_dist_delta,obs,next_obs";
const EPISODE_HEADER: &str = "episode_id,terminal_kind,final_goal_distance";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_buffer(w: &mut impl Write, buf: &ReplayBuffer) -> Result<()> {
    writeln!(
        w,
        "{BUFFER_MAGIC} capacity={} alpha={} priority_epsilon={} mode={} max_priority={} next_slot={}",
        buf.capacity(),
        buf.alpha(),
        buf.priority_epsilon(),
        buf.mode().as_str(),
        buf.max_priority(),
        buf.next_slot()
    )?;
    writeln!(w, "{BUFFER_HEADER}")?;
    for (slot, t) in buf.iter() {
        writeln!(
            w,
            "{slot},{},{},{},{},{},{},{},{},{},{},{},{}",
            buf.priority_at_slot(slot),
            t.id,
            t.episode_id,
            t.round_collected,
            t.action,
            t.reward,
            t.done as u8,
            t.terminal_kind.as_str(),
            t.hazard_at_next,
            t.goal_dist_delta,
            join(t.obs.as_slice()),
            join(t.next_obs.as_slice()),
        )?;
    }
    Ok(())
}

fn field<T: FromStr>(value: &str, name: &str, line: usize) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::format("buffer snapshot", format!("line {line}: bad {name} `{value}`")))
}

fn observation(value: &str, line: usize) -> Result<Observation> {
    let values = value
        .split_whitespace()
        .map(|v| field::<f64>(v, "observation", line))
        .collect::<Result<Vec<_>>>()?;
    Observation::from_slice(&values)
}

pub fn read_buffer(r: impl BufRead) -> Result<ReplayBuffer> {
    let mut lines = r.lines();
    let meta = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::format("buffer snapshot", "empty file"))?;
    let rest = meta
        .strip_prefix(BUFFER_MAGIC)
        .ok_or_else(|| Error::format("buffer snapshot", "missing header line"))?;
    let mut kv = BTreeMap::new();
    for part in rest.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::format("buffer snapshot", format!("bad header entry `{part}`")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::format("buffer snapshot", format!("header lacks `{k}`")))
    };
    let capacity: usize = field(&get("capacity")?, "capacity", 1)?;
    let alpha: f64 = field(&get("alpha")?, "alpha", 1)?;
    let priority_epsilon: f64 = field(&get("priority_epsilon")?, "priority_epsilon", 1)?;
    let mode: ReplayMode = get("mode")?
        .parse()
        .map_err(|e: String| Error::format("buffer snapshot", e))?;
    let max_priority: f64 = field(&get("max_priority")?, "max_priority", 1)?;
    let next_slot: usize = field(&get("next_slot")?, "next_slot", 1)?;
    if capacity == 0 {
        return Err(Error::format("buffer snapshot", "capacity must be positive"));
    }

    match lines.next().transpose()? {
        Some(h) if h == BUFFER_HEADER => {}
        _ => return Err(Error::format("buffer snapshot", "missing column header")),
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 13 {
            return Err(Error::format(
                "buffer snapshot",
                format!("line {n}: expected 13 columns, found {}", cols.len()),
            ));
        }
        let done = match cols[7] {
            "0" => false,
            "1" => true,
            other => return Err(Error::format("buffer snapshot", format!("line {n}: bad done `{other}`"))),
        };
        let t = Transition {
            id: field(cols[2], "id", n)?,
            obs: observation(cols[11], n)?,
            action: field(cols[5], "action", n)?,
            reward: field(cols[6], "reward", n)?,
            next_obs: observation(cols[12], n)?,
            done,
            terminal_kind: cols[8].parse()?,
            episode_id: field(cols[3], "episode_id", n)?,
            hazard_at_next: field(cols[9], "hazard_at_next", n)?,
            goal_dist_delta: field(cols[10], "goal_dist_delta", n)?,
            round_collected: field(cols[4], "round", n)?,
        };
        entries.push((field(cols[0], "slot", n)?, t, field(cols[1], "priority", n)?));
    }
    ReplayBuffer::restore(capacity, alpha, priority_epsilon, mode, max_priority, next_slot, entries)
}

pub fn write_outcomes(w: &mut impl Write, outcomes: &BTreeMap<u64, EpisodeOutcome>) -> Result<()> {
    writeln!(w, "{EPISODE_HEADER}")?;
    for (id, o) in outcomes {
        writeln!(w, "{id},{},{}", o.terminal.as_str(), o.final_goal_distance)?;
    }
    Ok(())
}

pub fn read_outcomes(r: impl BufRead) -> Result<BTreeMap<u64, EpisodeOutcome>> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h == EPISODE_HEADER => {}
        _ => return Err(Error::format("episode outcomes", "missing column header")),
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::format("episode outcomes", format!("line {n}: expected 3 columns")));
        }
        let id: u64 = field(cols[0], "episode_id", n)?;
        let terminal: TerminalKind = cols[1].parse()?;
        let dist: f64 = field(cols[2], "final_goal_distance", n)?;
        out.insert(
            id,
            EpisodeOutcome {
                terminal,
                final_goal_distance: dist,
            },
        );
    }
    Ok(out)
}
