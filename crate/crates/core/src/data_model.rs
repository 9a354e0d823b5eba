//! Subjects, time grids and discrete survival records.
//!
//! Time is an integer tick (one observation period). A subject carries two
//! independent, possibly ragged channels: continuous measurements `y` at
//! `obs_ticks`, and binary event records `r` at `event_ticks`. The dense
//! per-subject event grid is built from the event records by filling the
//! unrecorded periods with zeros.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of integer ticks shared by all subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    ticks: Vec<i64>,
    /// Real-valued time of tick 0.
    pub origin: f64,
}

impl TimeGrid {
    pub fn new(mut ticks: Vec<i64>) -> Self {
        ticks.sort_unstable();
        ticks.dedup();
        TimeGrid { ticks, origin: 0.0 }
    }

    /// Union of every tick appearing in any subject.
    pub fn from_subjects(subjects: &[SubjectSeries]) -> Self {
        let ticks = subjects
            .iter()
            .flat_map(|s| s.obs_ticks.iter().chain(s.event_ticks.iter()).copied())
            .collect();
        TimeGrid::new(ticks)
    }

    pub fn ticks(&self) -> &[i64] {
        &self.ticks
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn index_of(&self, tick: i64) -> Option<usize> {
        self.ticks.binary_search(&tick).ok()
    }

    pub fn contains(&self, tick: i64) -> bool {
        self.index_of(tick).is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject_id: String,
    pub obs_ticks: Vec<i64>,
    pub y: Vec<f64>,
    pub event_ticks: Vec<i64>,
    pub r: Vec<u8>,
}

impl SubjectSeries {
    pub fn new(
        subject_id: impl Into<String>,
        obs_ticks: Vec<i64>,
        y: Vec<f64>,
        event_ticks: Vec<i64>,
        r: Vec<u8>,
    ) -> Result<Self> {
        let s = SubjectSeries {
            subject_id: subject_id.into(),
            obs_ticks,
            y,
            event_ticks,
            r,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.subject_id;
        if self.y.len() != self.obs_ticks.len() {
            return Err(Error::Data(format!(
                "subject {id}: {} responses for {} observation ticks",
                self.y.len(),
                self.obs_ticks.len()
            )));
        }
        if self.r.len() != self.event_ticks.len() {
            return Err(Error::Data(format!(
                "subject {id}: {} event statuses for {} event ticks",
                self.r.len(),
                self.event_ticks.len()
            )));
        }
        if !strictly_increasing(&self.obs_ticks) || !strictly_increasing(&self.event_ticks) {
            return Err(Error::Data(format!(
                "subject {id}: ticks not strictly increasing"
            )));
        }
        if let Some(bad) = self.r.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!(
                "subject {id}: non-binary status {bad}"
            )));
        }
        Ok(())
    }

    pub fn has_events(&self) -> bool {
        !self.event_ticks.is_empty()
    }

    /// First tick of the subject's observation window.
    pub fn first_tick(&self) -> Option<i64> {
        match (self.obs_ticks.first(), self.event_ticks.first()) {
            (Some(&a), Some(&b)) => Some(a.min(b)),
            (Some(&a), None) => Some(a),
            (None, Some(&b)) => Some(b),
            (None, None) => None,
        }
    }

    /// Last recorded tick in either channel.
    pub fn last_tick(&self) -> Option<i64> {
        match (self.obs_ticks.last(), self.event_ticks.last()) {
            (Some(&a), Some(&b)) => Some(a.max(b)),
            (Some(&a), None) => Some(a),
            (None, Some(&b)) => Some(b),
            (None, None) => None,
        }
    }

    pub fn n_events(&self) -> usize {
        self.r.iter().filter(|&&v| v == 1).count()
    }
}

fn strictly_increasing(v: &[i64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// One at-risk stretch of a dense event grid: slots `start..=end`, closed
/// either by an event in slot `end` or by censoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    pub event: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Dense binary event sequence over a subject's window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventGrid {
    /// Tick of slot 0.
    pub start: i64,
    pub r: Vec<u8>,
    pub episodes: Vec<Episode>,
}

impl EventGrid {
    /// Builds a grid directly from a dense 0/1 sequence starting at `start`.
    pub fn from_dense(start: i64, r: Vec<u8>) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::Data("empty event sequence".into()));
        }
        if r.iter().any(|&v| v > 1) {
            return Err(Error::Data("non-binary event indicator".into()));
        }
        let mut episodes = Vec::new();
        let mut begin = 0;
        for (k, &v) in r.iter().enumerate() {
            if v == 1 {
                episodes.push(Episode {
                    start: begin,
                    end: k,
                    event: true,
                });
                begin = k + 1;
            }
        }
        if begin < r.len() {
            episodes.push(Episode {
                start: begin,
                end: r.len() - 1,
                event: false,
            });
        }
        Ok(EventGrid { start, r, episodes })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn ticks(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.r.len() as i64).map(move |k| self.start + k)
    }

    pub fn end(&self) -> i64 {
        self.start + self.r.len() as i64 - 1
    }
}

/// Dense event grid from the subject's first tick to its last event record,
/// with every unrecorded period filled by a zero.
pub fn build_event_grid(s: &SubjectSeries) -> Result<EventGrid> {
    let (first_event, last_event) = match (s.event_ticks.first(), s.event_ticks.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return Err(Error::Data(format!(
                "subject {}: no event records",
                s.subject_id
            )))
        }
    };
    let start = match s.obs_ticks.first() {
        Some(&first_obs) => {
            if first_event < first_obs {
                return Err(Error::Data(format!(
                    "subject {}: event record at tick {first_event} precedes first observation at tick {first_obs}",
                    s.subject_id
                )));
            }
            first_obs
        }
        None => first_event,
    };
    let len = (last_event - start + 1) as usize;
    let mut r = vec![0u8; len];
    for (&t, &v) in s.event_ticks.iter().zip(&s.r) {
        r[(t - start) as usize] = v;
    }
    EventGrid::from_dense(start, r)
}

const LONGITUDINAL_HEADER: [&str; 3] = ["subject_id", "tick", "y"];
const EVENTS_HEADER: [&str; 3] = ["subject_id", "tick", "status"];

#[derive(Default)]
struct Partial {
    obs: Vec<(i64, f64)>,
    events: Vec<(i64, u8)>,
}

/// Reads the longitudinal file (`subject_id,tick,y`) and the events file
/// (`subject_id,tick,status`). Rows may come in any order. A missing or
/// header-only events file yields longitudinal-only subjects.
pub fn ingest_csv(longitudinal: &Path, events: Option<&Path>) -> Result<Vec<SubjectSeries>> {
    let mut by_subject: BTreeMap<String, Partial> = BTreeMap::new();

    read_rows(
        longitudinal,
        &LONGITUDINAL_HEADER,
        |row, id, tick, value| {
            let y: f64 = value
                .parse()
                .map_err(|_| row_err(longitudinal, row, format!("bad response `{value}`")))?;
            if !y.is_finite() {
                return Err(row_err(longitudinal, row, "non-finite response"));
            }
            by_subject.entry(id).or_default().obs.push((tick, y));
            Ok(())
        },
    )?;
    // Duplicates are detected after sorting, so keep row numbers alongside.
    check_duplicate_obs(longitudinal, &by_subject)?;

    if let Some(events) = events {
        read_rows(events, &EVENTS_HEADER, |row, id, tick, value| {
            let status = match value.trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(row_err(
                        events,
                        row,
                        format!("status must be 0 or 1, got `{other}`"),
                    ))
                }
            };
            by_subject
                .entry(id)
                .or_default()
                .events
                .push((tick, status));
            Ok(())
        })?;
    }

    by_subject
        .into_iter()
        .map(|(id, mut p)| {
            p.obs.sort_by_key(|&(t, _)| t);
            p.events.sort_by_key(|&(t, _)| t);
            // Two records in the same slot collapse to one; an event wins over a zero.
            let mut events: Vec<(i64, u8)> = Vec::with_capacity(p.events.len());
            for (t, v) in p.events {
                match events.last_mut() {
                    Some(last) if last.0 == t => last.1 = last.1.max(v),
                    _ => events.push((t, v)),
                }
            }
            SubjectSeries::new(
                id,
                p.obs.iter().map(|o| o.0).collect(),
                p.obs.iter().map(|o| o.1).collect(),
                events.iter().map(|e| e.0).collect(),
                events.iter().map(|e| e.1).collect(),
            )
        })
        .collect()
}

fn row_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::DataRow {
        file: path.display().to_string(),
        row,
        message: message.into(),
    }
}

fn check_duplicate_obs(path: &Path, by_subject: &BTreeMap<String, Partial>) -> Result<()> {
    for (id, p) in by_subject {
        let mut seen = std::collections::HashSet::with_capacity(p.obs.len());
        for &(t, _) in &p.obs {
            if !seen.insert(t) {
                // Re-scan to report the offending row.
                let row = find_row(path, id, t).unwrap_or(0);
                return Err(row_err(
                    path,
                    row,
                    format!("duplicate record for subject {id} at tick {t}"),
                ));
            }
        }
    }
    Ok(())
}

fn find_row(path: &Path, id: &str, tick: i64) -> Option<usize> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).ok()?;
    let mut hits = 0;
    for rec in rdr.records() {
        let rec = rec.ok()?;
        if rec.get(0) == Some(id)
            && rec.get(1).and_then(|t| t.trim().parse::<i64>().ok()) == Some(tick)
        {
            hits += 1;
            if hits == 2 {
                return rec.position().map(|p| p.line() as usize);
            }
        }
    }
    None
}

fn read_rows(
    path: &Path,
    header: &[&str; 3],
    mut on_row: impl FnMut(usize, String, i64, &str) -> Result<()>,
) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let found = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if found.is_empty() {
        // Completely empty file: no rows.
        return Ok(());
    }
    let names: Vec<&str> = found.iter().map(str::trim).collect();
    if names != header.as_slice() {
        return Err(Error::format(
            path,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                names.join(",")
            ),
        ));
    }
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 3 {
            return Err(row_err(
                path,
                row,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(row_err(path, row, "empty subject_id"));
        }
        let tick: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| row_err(path, row, format!("bad tick `{}`", &rec[1])))?;
        on_row(row, id, tick, rec[2].trim())?;
    }
    Ok(())
}

pub fn write_longitudinal_csv(path: &Path, subjects: &[SubjectSeries]) -> Result<()> {
    let mut out = String::from("subject_id,tick,y\n");
    for s in subjects {
        for (t, y) in s.obs_ticks.iter().zip(&s.y) {
            out.push_str(&format!("{},{},{}\n", s.subject_id, t, y));
        }
    }
    write_file(path, out.as_bytes())
}

pub fn write_events_csv(path: &Path, subjects: &[SubjectSeries]) -> Result<()> {
    let mut out = String::from("subject_id,tick,status\n");
    for s in subjects {
        for (t, r) in s.event_ticks.iter().zip(&s.r) {
            out.push_str(&format!("{},{},{}\n", s.subject_id, t, r));
        }
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
