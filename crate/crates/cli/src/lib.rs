//! Library side of the `gdm` binary: session scripts and text renderings.

pub mod script;

use std::fmt::Write as _;

use gdm_core::policy::{DecisionPolicy, PatternDescriptor};

/// Renders a pattern descriptor as a plain-text manual page.
pub fn render_descriptor(d: &PatternDescriptor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", d.name);
    let _ = writeln!(out, "{}", "=".repeat(d.name.chars().count()));
    let _ = writeln!(out, "\nIntent\n  {}", d.intent);
    let list = |out: &mut String, title: &str, items: &[String]| {
        let _ = writeln!(out, "\n{title}");
        for item in items {
            let _ = writeln!(out, "  - {item}");
        }
    };
    list(&mut out, "Applications", &d.applications);
    let _ = writeln!(out, "\nSolution\n  {}", d.solution);
    list(&mut out, "Known uses", &d.known_uses);
    list(&mut out, "Related patterns", &d.related_patterns);
    out
}

/// One line per policy: id, display name and co-decision settings.
pub fn render_policy_line(p: &DecisionPolicy) -> String {
    let c = &p.co_decision;
    format!(
        "{:<20} {:<22} threshold={} preference={} process={} rounds={}",
        p.policy_id,
        p.descriptor.name,
        c.threshold,
        serde_plain(&c.preference_kind),
        serde_plain(&c.process_kind),
        p.max_rounds
    )
}

fn serde_plain<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gdm_core::policy::PolicyRepository;

    #[test]
    fn manual_lists_every_section() {
        let d = PolicyRepository::default().describe("MajorityDeciding").unwrap();
        let text = render_descriptor(&d);
        for section in ["Intent", "Applications", "Solution", "Known uses", "Related patterns"] {
            assert!(text.contains(section), "{section}");
        }
        assert!(text.starts_with("Majority Deciding\n"));
    }
}
