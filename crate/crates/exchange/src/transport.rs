//! Mailbox transports. A mailbox is addressed by (run id, direction,
//! round) and holds exactly one message.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::codec::{decode, encode, wire_stats, Files, WireStats, MANIFEST, TRIGGER};
use crate::error::{ExchangeError, Result};
use crate::message::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Directory,
    Loopback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportConfig {
    pub mode: Mode,
    /// Mailbox root for directory mode.
    pub root: PathBuf,
    /// Seconds between trigger-file checks.
    pub wait_time_min: f64,
    /// Seconds before a wait gives up.
    pub wait_time_max: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Directory,
            root: PathBuf::from("."),
            wait_time_min: 3.0,
            wait_time_max: 7200.0,
        }
    }
}

impl TransportConfig {
    pub fn directory(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            ..Self::default()
        }
    }

    pub fn loopback() -> Self {
        Self {
            mode: Mode::Loopback,
            ..Self::default()
        }
    }

    pub fn with_waits(mut self, min: f64, max: f64) -> Self {
        self.wait_time_min = min;
        self.wait_time_max = max;
        self
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.wait_time_min > 0.0 && self.wait_time_min.is_finite()) {
            return Err(format!("wait_time_min must be positive, got {}", self.wait_time_min));
        }
        if !(self.wait_time_max >= self.wait_time_min && self.wait_time_max.is_finite()) {
            return Err(format!(
                "wait_time_max ({}) must be at least wait_time_min ({})",
                self.wait_time_max, self.wait_time_min
            ));
        }
        Ok(())
    }

    fn poll_interval(&self) -> Duration {
        Duration::from_secs_f64(self.wait_time_min)
    }

    fn max_wait(&self) -> Duration {
        Duration::from_secs_f64(self.wait_time_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ToPartner(i64),
    FromPartner(i64),
}

impl Direction {
    pub fn partner_id(self) -> i64 {
        match self {
            Direction::ToPartner(k) | Direction::FromPartner(k) => k,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::ToPartner(k) => write!(f, "to_dp{k}"),
            Direction::FromPartner(k) => write!(f, "from_dp{k}"),
        }
    }
}

pub fn mailbox_dir(root: &Path, run_id: &str, direction: Direction, round: u32) -> PathBuf {
    root.join(run_id).join(direction.to_string()).join(format!("round_{round}"))
}

fn mailbox_name(run_id: &str, direction: Direction, round: u32) -> String {
    format!("{run_id}/{direction}/round_{round}")
}

type Key = (String, Direction, u32);

#[derive(Default)]
struct Hub {
    boxes: Mutex<HashMap<Key, Files>>,
    arrived: Condvar,
}

/// Either a shared directory tree or an in-memory hub. Clones share the
/// same mailboxes, so a loopback transport is cloned into every partner
/// thread.
#[derive(Clone)]
pub struct Transport {
    cfg: TransportConfig,
    hub: Option<Arc<Hub>>,
}

impl fmt::Debug for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transport").field("cfg", &self.cfg).finish()
    }
}

impl Transport {
    pub fn new(cfg: TransportConfig) -> Self {
        let hub = (cfg.mode == Mode::Loopback).then(|| Arc::new(Hub::default()));
        Self { cfg, hub }
    }

    pub fn config(&self) -> &TransportConfig {
        &self.cfg
    }

    pub fn send(&self, direction: Direction, msg: &Message) -> Result<WireStats> {
        let files = encode(msg);
        let stats = wire_stats(&files);
        let name = mailbox_name(&msg.run_id, direction, msg.round);
        match &self.hub {
            Some(hub) => {
                let mut boxes = hub.boxes.lock().expect("mailbox lock poisoned");
                let key = (msg.run_id.clone(), direction, msg.round);
                if boxes.contains_key(&key) {
                    return Err(ExchangeError::MailboxCollision { mailbox: name });
                }
                boxes.insert(key, files);
                hub.arrived.notify_all();
            }
            None => {
                let dir = mailbox_dir(&self.cfg.root, &msg.run_id, direction, msg.round);
                if let Some(parent) = dir.parent() {
                    fs::create_dir_all(parent).map_err(|e| ExchangeError::io(parent, e))?;
                }
                match fs::create_dir(&dir) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                        return Err(ExchangeError::MailboxCollision { mailbox: name });
                    }
                    Err(e) => return Err(ExchangeError::io(&dir, e)),
                }
                for (file, bytes) in &files {
                    let path = dir.join(file);
                    fs::write(&path, bytes).map_err(|e| ExchangeError::io(&path, e))?;
                }
                let trigger = dir.join(TRIGGER);
                fs::write(&trigger, b"").map_err(|e| ExchangeError::io(&trigger, e))?;
            }
        }
        log::debug!("sent {} to {name} ({} rows)", msg.kind().as_str(), stats.rows);
        Ok(stats)
    }

    /// Waits for the mailbox to fill, then decodes it.
    pub fn receive(&self, direction: Direction, run_id: &str, round: u32) -> Result<(Message, WireStats)> {
        let name = mailbox_name(run_id, direction, round);
        let started = Instant::now();
        let files = match &self.hub {
            Some(hub) => self.wait_loopback(hub, (run_id.to_string(), direction, round), &name, started)?,
            None => self.wait_directory(&mailbox_dir(&self.cfg.root, run_id, direction, round), &name, started)?,
        };
        let msg = decode(&files)?;
        if msg.run_id != run_id || msg.round != round {
            return Err(ExchangeError::malformed(
                MANIFEST,
                format!("{name} holds run `{}` round {}", msg.run_id, msg.round),
            ));
        }
        log::debug!("received {} from {name}", msg.kind().as_str());
        Ok((msg, wire_stats(&files)))
    }

    fn timeout(&self, name: &str, started: Instant) -> ExchangeError {
        ExchangeError::Timeout {
            mailbox: name.to_string(),
            waited_secs: started.elapsed().as_secs_f64(),
        }
    }

    fn wait_loopback(&self, hub: &Hub, key: Key, name: &str, started: Instant) -> Result<Files> {
        let deadline = started + self.cfg.max_wait();
        let mut boxes = hub.boxes.lock().expect("mailbox lock poisoned");
        loop {
            if let Some(files) = boxes.get(&key) {
                return Ok(files.clone());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(self.timeout(name, started));
            }
            boxes = hub
                .arrived
                .wait_timeout(boxes, deadline - now)
                .expect("mailbox lock poisoned")
                .0;
        }
    }

    fn wait_directory(&self, dir: &Path, name: &str, started: Instant) -> Result<Files> {
        let trigger = dir.join(TRIGGER);
        let max = self.cfg.max_wait();
        while !trigger.exists() {
            let waited = started.elapsed();
            if waited >= max {
                return Err(self.timeout(name, started));
            }
            std::thread::sleep(self.cfg.poll_interval().min(max - waited));
        }
        let mut files = Files::new();
        let entries = fs::read_dir(dir).map_err(|e| ExchangeError::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| ExchangeError::io(dir, e))?;
            let file = entry.file_name().to_string_lossy().into_owned();
            if file == TRIGGER {
                continue;
            }
            let path = entry.path();
            files.insert(file, fs::read(&path).map_err(|e| ExchangeError::io(&path, e))?);
        }
        Ok(files)
    }
}
