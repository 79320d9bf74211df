//! MQTT 3.1.1 topic names, filters and matching.

use std::fmt;

pub const MAX_LEVELS: usize = 16;
pub const MAX_TOPIC_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic exceeds {MAX_TOPIC_BYTES} bytes")]
    TooLong,
    #[error("topic exceeds {MAX_LEVELS} levels")]
    TooDeep,
    #[error("wildcard not allowed in a topic name")]
    WildcardInName,
    #[error("'+' must occupy a whole level")]
    BadPlus,
    #[error("'#' must be the whole last level")]
    BadHash,
    #[error("topic contains a NUL character")]
    Nul,
}

fn check_common(s: &str) -> Result<(), TopicError> {
    if s.is_empty() {
        return Err(TopicError::Empty);
    }
    if s.len() > MAX_TOPIC_BYTES {
        return Err(TopicError::TooLong);
    }
    if s.contains('\0') {
        return Err(TopicError::Nul);
    }
    if s.split('/').count() > MAX_LEVELS {
        return Err(TopicError::TooDeep);
    }
    Ok(())
}

/// A concrete topic a message is published to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(s: &str) -> Result<Self, TopicError> {
        check_common(s)?;
        if s.contains(['+', '#']) {
            return Err(TopicError::WildcardInName);
        }
        Ok(TopicName(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

/// A subscription pattern, possibly containing `+` and a trailing `#`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter(String);

impl TopicFilter {
    pub fn new(s: &str) -> Result<Self, TopicError> {
        check_common(s)?;
        let levels: Vec<&str> = s.split('/').collect();
        for (i, level) in levels.iter().enumerate() {
            if level.contains('+') && *level != "+" {
                return Err(TopicError::BadPlus);
            }
            if level.contains('#') && (*level != "#" || i + 1 != levels.len()) {
                return Err(TopicError::BadHash);
            }
        }
        Ok(TopicFilter(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// MQTT 3.1.1 matching: `+` is exactly one level, `#` is zero or more
/// trailing levels, and `$`-topics never match a leading wildcard.
pub fn topic_match(filter: &TopicFilter, topic: &TopicName) -> bool {
    let f: Vec<&str> = filter.levels().collect();
    let t: Vec<&str> = topic.levels().collect();
    if topic.as_str().starts_with('$') && matches!(f[0], "+" | "#") {
        return false;
    }
    for (i, fl) in f.iter().enumerate() {
        match *fl {
            "#" => return true,
            "+" if i < t.len() => {}
            lit if i < t.len() && lit == t[i] => {}
            _ => return false,
        }
    }
    f.len() == t.len()
}

/// True when every topic matched by `inner` is also matched by `outer`.
pub fn filter_subsumes(outer: &TopicFilter, inner: &TopicFilter) -> bool {
    let o: Vec<&str> = outer.levels().collect();
    let n: Vec<&str> = inner.levels().collect();
    // A leading wildcard in `outer` cannot reach '$' topics that `inner` may name.
    if matches!(o[0], "+" | "#") && n[0].starts_with('$') {
        return false;
    }
    for (i, ol) in o.iter().enumerate() {
        match *ol {
            "#" => return true,
            _ if i >= n.len() => return false,
            "+" if n[i] != "#" => {}
            lit if lit == n[i] => {}
            _ => return false,
        }
    }
    o.len() == n.len()
}
