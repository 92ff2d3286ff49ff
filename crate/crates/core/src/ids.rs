use std::borrow::Borrow;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use ulid::Ulid;

use crate::time::Timestamp;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifier of an involved user (actor).
    UserId
);
string_id!(ProposalId);
string_id!(CollaborationId);

/// Sortable identifiers in ULID text form.
///
/// The 48-bit time component is the command timestamp and the 80-bit tail is
/// a process-wide counter, so identifiers are unique within one engine and
/// reproducible from the command log.
#[derive(Debug, Default)]
pub struct IdGenerator {
    counter: AtomicU64,
}

impl IdGenerator {
    pub fn starting_at(counter: u64) -> Self {
        IdGenerator {
            counter: AtomicU64::new(counter),
        }
    }

    pub fn next(&self, at: Timestamp) -> String {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let millis = at.as_millis().max(0) as u64;
        Ulid::from_parts(millis, n as u128).to_string()
    }

    /// Moves the counter past an identifier produced by an earlier run.
    pub fn observe(&self, id: &str) {
        if let Ok(ulid) = Ulid::from_string(id) {
            let tail = (ulid.random() & u64::MAX as u128) as u64;
            self.counter.fetch_max(tail.saturating_add(1), Ordering::SeqCst);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_sort_by_generation_order() {
        let ids = IdGenerator::default();
        let at = Timestamp::from_millis(1_000);
        let a = ids.next(at);
        let b = ids.next(at);
        let c = ids.next(at.plus_millis(1));
        assert_eq!(a.len(), 26);
        assert!(a < b && b < c);
    }

    #[test]
    fn observe_skips_past_existing_ids() {
        let first = IdGenerator::default();
        let at = Timestamp::from_millis(7);
        let seen: Vec<_> = (0..5).map(|_| first.next(at)).collect();
        let second = IdGenerator::default();
        for id in &seen {
            second.observe(id);
        }
        assert!(!seen.contains(&second.next(at)));
    }
}
