//! Fixed-width windowing of raw events.

use serde::{Deserialize, Serialize};

use super::events::{Event, EventStream};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_SECONDS: f64 = 20.0 * 60.0;
pub const DEFAULT_HORIZON_SECONDS: f64 = 48.0 * 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub horizon_seconds: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_seconds: DEFAULT_WINDOW_SECONDS,
            horizon_seconds: DEFAULT_HORIZON_SECONDS,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds > 0.0 && self.horizon_seconds >= self.window_seconds) {
            return Err(Error::InvalidArgument(format!(
                "window ({}) must be positive and no longer than the horizon ({})",
                self.window_seconds, self.horizon_seconds
            )));
        }
        Ok(())
    }
}

/// Non-empty windows of one entity, with per-feature means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSequence {
    pub entity_id: String,
    /// Window index `⌊t / window⌋` of each step, strictly increasing.
    pub window_index: Vec<u64>,
    /// `T × p`; `None` where the feature was not measured in that window.
    pub values: Vec<Vec<Option<f64>>>,
    pub config: WindowConfig,
}

impl WindowedSequence {
    pub fn len(&self) -> usize {
        self.window_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_index.is_empty()
    }

    /// Step start times in seconds, rebased so the first step is at 0.
    pub fn times_seconds(&self) -> Vec<f64> {
        let first = self.window_index.first().copied().unwrap_or(0);
        self.window_index
            .iter()
            .map(|&i| (i - first) as f64 * self.config.window_seconds)
            .collect()
    }

    /// Step times as a fraction of the horizon, first step at 0.
    pub fn times_normalized(&self) -> Vec<f64> {
        self.times_seconds()
            .into_iter()
            .map(|t| t / self.config.horizon_seconds)
            .collect()
    }
}

/// Windows the events of a single entity. Events at or beyond the horizon are
/// dropped; windows with no events are skipped.
pub fn window_entity<'a>(
    entity_id: &str,
    events: impl IntoIterator<Item = &'a Event>,
    p: usize,
    config: WindowConfig,
) -> Result<WindowedSequence> {
    config.validate()?;
    let n_windows = (config.horizon_seconds / config.window_seconds).ceil() as usize;
    let mut sums = vec![vec![(0.0f64, 0u32); p]; n_windows];
    for e in events {
        if e.time_seconds < 0.0 || e.time_seconds >= config.horizon_seconds {
            continue;
        }
        let w = (e.time_seconds / config.window_seconds).floor() as usize;
        let slot = &mut sums[w.min(n_windows - 1)][e.feature];
        slot.0 += e.value;
        slot.1 += 1;
    }
    let mut window_index = Vec::new();
    let mut values = Vec::new();
    for (w, row) in sums.into_iter().enumerate() {
        if row.iter().all(|(_, n)| *n == 0) {
            continue;
        }
        window_index.push(w as u64);
        values.push(
            row.into_iter()
                .map(|(s, n)| (n > 0).then(|| s / f64::from(n)))
                .collect(),
        );
    }
    if window_index.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(WindowedSequence {
        entity_id: entity_id.to_string(),
        window_index,
        values,
        config,
    })
}

/// Windows every entity in the stream, in entity-id order. Entities with no
/// events inside the horizon are omitted; an empty result is an error.
pub fn window_events(stream: &EventStream, config: WindowConfig) -> Result<Vec<WindowedSequence>> {
    let mut out = Vec::new();
    for (entity, events) in stream.by_entity() {
        match window_entity(entity, events, stream.p(), config) {
            Ok(seq) => out.push(seq),
            Err(Error::EmptySequence) => continue,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(out)
}
