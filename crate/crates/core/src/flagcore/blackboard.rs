use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{FlagError, FlagName, FlagRegistryEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagSource {
    Sensing,
    Action,
    External,
}

/// One value-changing write. `version` is the board version after the write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagEvent {
    pub name: FlagName,
    pub old: bool,
    pub new: bool,
    pub version: u64,
    pub tick: u64,
    pub source: FlagSource,
}

/// Point-in-time copy of every flag, all taken at one version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u64,
    pub values: BTreeMap<FlagName, bool>,
}

impl Snapshot {
    pub fn get(&self, name: &str) -> Option<bool> {
        self.values
            .iter()
            .find_map(|(k, v)| (k.as_str() == name).then_some(*v))
    }
}

struct Subscriber {
    names: BTreeSet<FlagName>,
    tx: mpsc::Sender<FlagEvent>,
}

struct Inner {
    values: BTreeMap<FlagName, bool>,
    version: u64,
    history: Vec<FlagEvent>,
    subscribers: Vec<Subscriber>,
}

/// Versioned shared flag store. All operations take one lock, so they are
/// atomic and linearizable; share it behind an `Arc` across threads.
pub struct GlobalBlackboard {
    registry: Vec<FlagRegistryEntry>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for GlobalBlackboard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let snap = self.snapshot();
        f.debug_struct("GlobalBlackboard")
            .field("version", &snap.version)
            .field("values", &snap.values)
            .finish()
    }
}

impl GlobalBlackboard {
    pub fn new(registry: Vec<FlagRegistryEntry>) -> Result<Self, FlagError> {
        let mut values = BTreeMap::new();
        for entry in &registry {
            if values.insert(entry.name.clone(), entry.initial).is_some() {
                return Err(FlagError::DuplicateFlag(entry.name.clone()));
            }
        }
        Ok(Self {
            registry,
            inner: Mutex::new(Inner {
                values,
                version: 0,
                history: Vec::new(),
                subscribers: Vec::new(),
            }),
        })
    }

    pub fn registry(&self) -> &[FlagRegistryEntry] {
        &self.registry
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.registry.iter().any(|e| e.name.as_str() == name)
    }

    /// Stores `value`; returns the version after the call. Writing the value
    /// a flag already holds is a no-op.
    pub fn set_flag(
        &self,
        name: &str,
        value: bool,
        source: FlagSource,
        tick: u64,
    ) -> Result<u64, FlagError> {
        let mut inner = self.inner.lock();
        let inner = &mut *inner;
        let (key, slot) = inner
            .values
            .iter_mut()
            .find(|(k, _)| k.as_str() == name)
            .ok_or_else(|| FlagError::UnknownFlag(name.to_string()))?;
        if *slot == value {
            return Ok(inner.version);
        }
        let old = *slot;
        *slot = value;
        inner.version += 1;
        let event = FlagEvent {
            name: key.clone(),
            old,
            new: value,
            version: inner.version,
            tick,
            source,
        };
        // Dropped receivers are pruned here.
        inner.subscribers.retain(|s| {
            !s.names.contains(&event.name) || s.tx.send(event.clone()).is_ok()
        });
        inner.history.push(event);
        Ok(inner.version)
    }

    pub fn get_flag(&self, name: &str) -> Result<bool, FlagError> {
        let inner = self.inner.lock();
        inner
            .values
            .iter()
            .find_map(|(k, v)| (k.as_str() == name).then_some(*v))
            .ok_or_else(|| FlagError::UnknownFlag(name.to_string()))
    }

    pub fn version(&self) -> u64 {
        self.inner.lock().version
    }

    pub fn snapshot(&self) -> Snapshot {
        let inner = self.inner.lock();
        Snapshot {
            version: inner.version,
            values: inner.values.clone(),
        }
    }

    pub fn history(&self) -> Vec<FlagEvent> {
        self.inner.lock().history.clone()
    }

    pub fn history_len(&self) -> usize {
        self.inner.lock().history.len()
    }

    /// Events from `from_version` (exclusive) onwards.
    pub fn history_since(&self, from_version: u64) -> Vec<FlagEvent> {
        let inner = self.inner.lock();
        // history[i].version == i + 1
        inner.history[from_version as usize..].to_vec()
    }

    /// Every later change to one of `names` is delivered to the returned
    /// handle in version order.
    pub fn subscribe<I, S>(&self, names: I) -> Result<Subscription, FlagError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut inner = self.inner.lock();
        let mut set = BTreeSet::new();
        for n in names {
            let n = n.as_ref();
            let key = inner
                .values
                .keys()
                .find(|k| k.as_str() == n)
                .ok_or_else(|| FlagError::UnknownFlag(n.to_string()))?;
            set.insert(key.clone());
        }
        let (tx, rx) = mpsc::channel();
        inner.subscribers.push(Subscriber { names: set, tx });
        Ok(Subscription { rx })
    }

    /// Rebuilds a board by applying `history` to the registry's initial values.
    pub fn replay(
        registry: Vec<FlagRegistryEntry>,
        history: &[FlagEvent],
    ) -> Result<Self, FlagError> {
        let bb = Self::new(registry)?;
        for e in history {
            bb.set_flag(e.name.as_str(), e.new, e.source, e.tick)?;
        }
        Ok(bb)
    }

    /// Writes the history as JSON lines, one event per line.
    pub fn export_history<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in self.history() {
            serde_json::to_writer(&mut out, &e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads a JSON-lines history written by [`GlobalBlackboard::export_history`].
pub fn read_history<R: BufRead>(input: R) -> io::Result<Vec<FlagEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Single-consumer change feed returned by [`GlobalBlackboard::subscribe`].
pub struct Subscription {
    rx: mpsc::Receiver<FlagEvent>,
}

impl Subscription {
    /// Drains everything delivered so far without blocking.
    pub fn drain(&self) -> Vec<FlagEvent> {
        self.rx.try_iter().collect()
    }

    pub fn try_next(&self) -> Option<FlagEvent> {
        self.rx.try_recv().ok()
    }

    pub fn next_timeout(&self, timeout: Duration) -> Option<FlagEvent> {
        self.rx.recv_timeout(timeout).ok()
    }
}
