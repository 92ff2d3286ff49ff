//! Scripted sessions: a roster of actors plus an ordered list of requests,
//! executed against an embedded engine with a stepped clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use gdm_core::domain::InvolvedUser;
use gdm_core::engine::{Engine, EngineConfig};
use gdm_core::request::Request;
use gdm_core::summary::Summary;
use gdm_core::time::SteppedClock;
use gdm_core::{CollaborationId, GdmError, Timestamp, UserId};
use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_UNRESOLVED: i32 = 2;
pub const EXIT_SCRIPT_ERROR: i32 = 3;
pub const EXIT_ENGINE_ERROR: i32 = 4;

/// Default clock origin when a script gives none.
const DEFAULT_START: i64 = 1_704_067_200_000; // 2024-01-01T00:00:00Z
const DEFAULT_STEP_MILLIS: i64 = 1_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SessionScript {
    #[serde(default)]
    pub start_at: Option<Timestamp>,
    #[serde(default)]
    pub step_millis: Option<i64>,
    #[serde(default)]
    pub intent: Option<String>,
    pub actors: Vec<InvolvedUser>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Step {
    pub actor: UserId,
    pub command: String,
    #[serde(default)]
    pub args: Value,
    /// Label bound to the identifier this step creates; later steps write `@label`.
    #[serde(default, rename = "as")]
    pub bind: Option<String>,
    /// Error code the step must fail with.
    #[serde(default)]
    pub expect: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("invalid script: {0}")]
    Parse(String),
    #[error("no steps")]
    NoSteps,
    #[error("step {index}: {reason}")]
    Step { index: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("step {index}: {error}")]
    Engine { index: usize, error: GdmError },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Script(_) => EXIT_SCRIPT_ERROR,
            RunError::Engine { .. } => EXIT_ENGINE_ERROR,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub collaboration_id: Option<CollaborationId>,
    pub summary: Option<Summary>,
    pub error: Option<RunError>,
    pub exit_code: i32,
}

impl SessionScript {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let script: SessionScript = serde_json::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.steps.is_empty() {
            return Err(ScriptError::NoSteps);
        }
        if self.step_millis.is_some_and(|s| s <= 0) {
            return Err(ScriptError::Parse("stepMillis must be positive".into()));
        }
        for (index, step) in self.steps.iter().enumerate() {
            if !self.actors.iter().any(|a| a.user_id == step.actor) {
                return Err(ScriptError::Step {
                    index,
                    reason: format!("undeclared actor {}", step.actor),
                });
            }
            if step.bind.as_deref().is_some_and(|b| b == "moderator" || b.is_empty()) {
                return Err(ScriptError::Step {
                    index,
                    reason: "reserved or empty label".into(),
                });
            }
        }
        Ok(())
    }

    pub fn clock(&self) -> Arc<SteppedClock> {
        Arc::new(SteppedClock::new(
            self.start_at.unwrap_or(Timestamp::from_millis(DEFAULT_START)),
            self.step_millis.unwrap_or(DEFAULT_STEP_MILLIS),
        ))
    }

    /// An in-memory engine driven by this script's clock.
    pub fn engine(&self, config: EngineConfig) -> Engine {
        Engine::in_memory(self.clock(), config)
    }

    /// Executes every step in order. The summary is that of the collaboration
    /// the script creates, taken after the last executed step.
    pub fn run(&self, engine: &Engine) -> RunReport {
        let mut labels = BTreeMap::new();
        let mut collab: Option<CollaborationId> = None;
        let mut error = None;
        for (index, step) in self.steps.iter().enumerate() {
            if let Err(e) = self.run_step(engine, index, step, &mut labels, &mut collab) {
                error = Some(e);
                break;
            }
        }
        let summary = collab.as_ref().and_then(|id| engine.summary(id).ok());
        if error.is_none() && collab.is_none() {
            error = Some(RunError::Script(ScriptError::Parse(
                "the script never creates a collaboration".into(),
            )));
        }
        let exit_code = match (&error, &summary) {
            (Some(e), _) => e.exit_code(),
            (None, Some(s)) if s.converged() => EXIT_CONVERGED,
            _ => EXIT_UNRESOLVED,
        };
        RunReport {
            collaboration_id: collab,
            summary,
            error,
            exit_code,
        }
    }

    fn run_step(
        &self,
        engine: &Engine,
        index: usize,
        step: &Step,
        labels: &mut BTreeMap<String, String>,
        collab: &mut Option<CollaborationId>,
    ) -> Result<(), RunError> {
        let fail = |reason: String| RunError::Script(ScriptError::Step { index, reason });
        let mut args = substitute(&step.args, labels).map_err(fail)?;
        args_object(&mut args).map_err(fail)?;
        let creates = step.command == "createCollaboration";
        if creates {
            if collab.is_some() {
                return Err(fail("a script drives a single collaboration".into()));
            }
            let obj = args_object(&mut args).map_err(fail)?;
            if !obj.contains_key("involvedUsers") {
                let users = serde_json::to_value(&self.actors).map_err(|e| fail(e.to_string()))?;
                obj.insert("involvedUsers".into(), users);
            }
            if let (false, Some(intent)) = (obj.contains_key("intent"), &self.intent) {
                obj.insert("intent".into(), Value::String(intent.clone()));
            }
        } else if collab.is_none() {
            return Err(fail("no collaboration has been created yet".into()));
        }
        let wire = serde_json::json!({ "command": step.command, "args": args });
        let request: Request = serde_json::from_value(wire).map_err(|e| fail(format!("bad {}: {e}", step.command)))?;
        match (engine.execute(collab.as_ref(), &step.actor, &request), &step.expect) {
            (Ok(outcome), None) => {
                if creates {
                    *collab = Some(outcome.collaboration.collaboration_id.clone());
                }
                if let Some(label) = &step.bind {
                    let id = outcome
                        .created
                        .ok_or_else(|| fail(format!("{} creates nothing to bind", step.command)))?;
                    labels.insert(label.clone(), id);
                }
                Ok(())
            }
            (Ok(_), Some(code)) => Err(fail(format!("expected {code} but the step succeeded"))),
            (Err(e), Some(code)) if e.code() == code => Ok(()),
            (Err(error), _) => Err(RunError::Engine { index, error }),
        }
    }
}

fn args_object(args: &mut Value) -> Result<&mut Map<String, Value>, String> {
    if args.is_null() {
        *args = Value::Object(Map::new());
    }
    args.as_object_mut().ok_or_else(|| "args must be an object".to_string())
}

/// Replaces every string of the form `@label` with the bound identifier.
/// `@moderator` is a selector understood by the engine and is kept.
fn substitute(value: &Value, labels: &BTreeMap<String, String>) -> Result<Value, String> {
    Ok(match value {
        Value::String(s) => match s.strip_prefix('@') {
            Some("moderator") | None => value.clone(),
            Some(label) => Value::String(
                labels
                    .get(label)
                    .cloned()
                    .ok_or_else(|| format!("unknown label @{label}"))?,
            ),
        },
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute(v, labels)).collect::<Result<_, _>>()?),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| Ok((k.clone(), substitute(v, labels)?)))
                .collect::<Result<_, String>>()?,
        ),
        other => other.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn script(steps: Value) -> String {
        json!({
            "actors": [
                {"userId": "mod", "displayName": "Moderator", "isModerator": true, "expertiseLevel": 1},
                {"userId": "ann", "displayName": "Ann", "expertiseLevel": 1}
            ],
            "steps": steps
        })
        .to_string()
    }

    #[test]
    fn empty_step_list_is_rejected() {
        let err = SessionScript::parse(&script(json!([]))).unwrap_err();
        assert_eq!(err.to_string(), "no steps");
    }

    #[test]
    fn undeclared_actor_reports_index() {
        let err = SessionScript::parse(&script(json!([
            {"actor": "mod", "command": "createCollaboration"},
            {"actor": "zed", "command": "notifyActors"}
        ])))
        .unwrap_err();
        assert!(matches!(err, ScriptError::Step { index: 1, .. }), "{err}");
    }

    #[test]
    fn labels_substitute_and_moderator_selector_survives() {
        let mut labels = BTreeMap::new();
        labels.insert("p1".to_string(), "01ABC".to_string());
        let v = substitute(&json!({"a": "@p1", "b": ["@moderator", "x"]}), &labels).unwrap();
        assert_eq!(v, json!({"a": "01ABC", "b": ["@moderator", "x"]}));
        assert!(substitute(&json!("@nope"), &labels).is_err());
    }

    #[test]
    fn engine_errors_and_expectations() {
        let s = SessionScript::parse(&script(json!([
            {"actor": "mod", "command": "createCollaboration", "args": {"intent": "x"}},
            {"actor": "ann", "command": "defineSituation", "args": {"intent": "y"}, "expect": "NotModerator"},
            {"actor": "ann", "command": "defineSituation", "args": {"intent": "y"}}
        ])))
        .unwrap();
        let report = s.run(&s.engine(EngineConfig::default()));
        assert_eq!(report.exit_code, EXIT_ENGINE_ERROR);
        assert!(matches!(report.error, Some(RunError::Engine { index: 2, .. })));
        assert!(report.summary.is_some());
    }

    #[test]
    fn unknown_command_is_a_script_error() {
        let s = SessionScript::parse(&script(json!([
            {"actor": "mod", "command": "createCollaboration"},
            {"actor": "mod", "command": "dance"}
        ])))
        .unwrap();
        let report = s.run(&s.engine(EngineConfig::default()));
        assert_eq!(report.exit_code, EXIT_SCRIPT_ERROR);
    }
}
