//! Single-line structured log records: `ts level event k=v ...`.
//!
//! `ts` is unix milliseconds. Values containing spaces or `=` are quoted so
//! lines stay machine-splittable.

use std::fmt::{self, Display, Write as _};
use std::io::Write as _;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Debug,
    Info,
    Warn,
    Error,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Debug => "DEBUG",
            Level::Info => "INFO",
            Level::Warn => "WARN",
            Level::Error => "ERROR",
        }
    }
}

type Sink = Arc<dyn Fn(&str) + Send + Sync>;

/// Cheap-to-clone handle; all clones write to the same sink.
#[derive(Clone)]
pub struct EventLog {
    sink: Option<Sink>,
    min_level: Level,
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog").field("enabled", &self.sink.is_some()).finish()
    }
}

impl Default for EventLog {
    fn default() -> Self {
        Self::disabled()
    }
}

/// Shared buffer behind [`EventLog::memory`].
pub type MemoryLines = Arc<Mutex<Vec<String>>>;

impl EventLog {
    pub fn disabled() -> Self {
        EventLog { sink: None, min_level: Level::Info }
    }

    pub fn stderr() -> Self {
        Self::with_sink(|line| {
            let _ = writeln!(std::io::stderr().lock(), "{line}");
        })
    }

    pub fn with_sink(f: impl Fn(&str) + Send + Sync + 'static) -> Self {
        EventLog { sink: Some(Arc::new(f)), min_level: Level::Info }
    }

    /// Collects lines in memory, for tests and scraping.
    pub fn memory() -> (Self, MemoryLines) {
        let lines: MemoryLines = Arc::default();
        let l = lines.clone();
        (Self::with_sink(move |line| l.lock().expect("log buffer").push(line.to_owned())), lines)
    }

    pub fn with_min_level(mut self, level: Level) -> Self {
        self.min_level = level;
        self
    }

    pub fn emit(&self, level: Level, event: &str, fields: &[(&str, &dyn Display)]) {
        let Some(sink) = &self.sink else { return };
        if level < self.min_level {
            return;
        }
        let ts = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let mut line = format!("{ts} {} {event}", level.as_str());
        for (k, v) in fields {
            let v = v.to_string();
            if v.is_empty() || v.contains([' ', '=', '"']) {
                let _ = write!(line, " {k}={v:?}");
            } else {
                let _ = write!(line, " {k}={v}");
            }
        }
        sink(&line);
    }

    pub fn info(&self, event: &str, fields: &[(&str, &dyn Display)]) {
        self.emit(Level::Info, event, fields);
    }

    pub fn warn(&self, event: &str, fields: &[(&str, &dyn Display)]) {
        self.emit(Level::Warn, event, fields);
    }

    pub fn error(&self, event: &str, fields: &[(&str, &dyn Display)]) {
        self.emit(Level::Error, event, fields);
    }
}

/// Splits a line back into `(level, event, fields)`.
pub fn parse_line(line: &str) -> Option<(String, String, Vec<(String, String)>)> {
    let mut parts = line.splitn(4, ' ');
    parts.next()?.parse::<u128>().ok()?;
    let level = parts.next()?.to_owned();
    let event = parts.next()?.to_owned();
    let mut fields = Vec::new();
    let mut rest = parts.next().unwrap_or("");
    while !rest.is_empty() {
        let (k, after) = rest.split_once('=')?;
        let (v, next) = if let Some(q) = after.strip_prefix('"') {
            let mut end = None;
            let mut escaped = false;
            for (i, ch) in q.char_indices() {
                match ch {
                    '\\' if !escaped => escaped = true,
                    '"' if !escaped => {
                        end = Some(i);
                        break;
                    }
                    _ => escaped = false,
                }
            }
            let end = end?;
            let quoted = &after[..end + 2];
            (serde_json::from_str::<String>(quoted).ok()?, q[end + 1..].trim_start())
        } else {
            match after.split_once(' ') {
                Some((v, n)) => (v.to_owned(), n),
                None => (after.to_owned(), ""),
            }
        };
        fields.push((k.to_owned(), v));
        rest = next;
    }
    Some((level, event, fields))
}
