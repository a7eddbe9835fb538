use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::events::{Channel, EventKind, Measure};

/// Number of entries in every catalog version.
pub const CATALOG_LEN: usize = 58;

const V1: &str = include_str!("../../catalog/features-v1.csv");

/// How a feature is computed from the events of one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Event count per second of analysed signal.
    Rate,
    /// Median of a per-event measure, pooled over all windows of the key.
    Median(Measure, Channel),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub event: EventKind,
    pub binding: Binding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCatalog {
    version: String,
    entries: Vec<FeatureSpec>,
}

fn parse_event(s: &str) -> Option<EventKind> {
    match s {
        "Fix" => Some(EventKind::Fixation),
        "Sac" => Some(EventKind::Saccade),
        _ => None,
    }
}

impl FeatureCatalog {
    /// The shipped catalog.
    pub fn v1() -> Self {
        Self::parse("v1", V1).expect("shipped catalog is valid")
    }

    /// Looks a catalog up by version tag.
    pub fn by_version(version: &str) -> Result<Self> {
        match version {
            "v1" => Ok(Self::v1()),
            other => Err(Error::Config(format!("unknown feature catalog version {other:?}"))),
        }
    }

    /// Parses `name,event,measure,channel,agg` rows and validates them.
    pub fn parse(version: &str, text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Config(format!("catalog {version}, line {line}: {msg}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "name,event,measure,channel,agg" => {}
            _ => return Err(Error::Config(format!("catalog {version}: bad header"))),
        }
        let mut entries = Vec::new();
        let mut names = HashSet::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let [name, event, measure, channel, agg] = cols[..] else {
                return Err(bad(line_no, format!("expected 5 columns, got {}", cols.len())));
            };
            let ev = parse_event(event).ok_or_else(|| bad(line_no, format!("unknown event {event:?}")))?;
            let (binding, expected) = match agg {
                "Rate" => {
                    if measure != "Count" || !channel.is_empty() {
                        return Err(bad(line_no, "Rate features take measure Count and no channel".into()));
                    }
                    (Binding::Rate, format!("{event}_Rate"))
                }
                "Md" => {
                    let m = Measure::parse(measure)
                        .ok_or_else(|| bad(line_no, format!("unknown measure {measure:?}")))?;
                    let c = Channel::parse(channel)
                        .ok_or_else(|| bad(line_no, format!("unknown channel {channel:?}")))?;
                    (Binding::Median(m, c), format!("{event}_{measure}_{channel}_Md"))
                }
                other => return Err(bad(line_no, format!("unknown aggregation {other:?}"))),
            };
            if name != expected {
                return Err(bad(line_no, format!("name {name:?} does not match its binding ({expected})")));
            }
            if !names.insert(name.to_string()) {
                return Err(bad(line_no, format!("duplicate feature {name:?}")));
            }
            entries.push(FeatureSpec {
                name: name.to_string(),
                event: ev,
                binding,
            });
        }
        if entries.len() != CATALOG_LEN {
            return Err(Error::Config(format!(
                "catalog {version} has {} entries, expected {CATALOG_LEN}",
                entries.len()
            )));
        }
        Ok(Self {
            version: version.to_string(),
            entries,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entries(&self) -> &[FeatureSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}
