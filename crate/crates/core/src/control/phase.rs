use serde::{Deserialize, Serialize};

use super::{BlendConfig, ControlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Approach,
    Transition,
    ForceHold,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Approach => "approach",
            Phase::Transition => "transition",
            Phase::ForceHold => "force_hold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    /// Contact must stay off this long before force holding is abandoned [s].
    pub retreat_dwell: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { retreat_dwell: 0.2 }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.retreat_dwell >= 0.0) {
            return Err(ControlError::InvalidConfig("retreat dwell must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub phase: Phase,
    /// [s]
    pub entered: f64,
    /// Start of the current contact-off interval while force holding.
    pub off_since: Option<f64>,
}

impl PhaseState {
    pub fn start(time: f64) -> Self {
        Self { phase: Phase::Approach, entered: time, off_since: None }
    }
}

/// Advances the phase machine. `depth` is the visual depth when available;
/// `contact` is the debounced contact detector state.
///
/// Approach moves to Transition once the depth enters the blend window,
/// Transition moves to ForceHold when contact is detected, and ForceHold
/// falls back to Transition after contact has been off for the retreat
/// dwell.
pub fn phase_update(
    state: &PhaseState,
    time: f64,
    depth: Option<f64>,
    contact: bool,
    blend: &BlendConfig,
    cfg: &PhaseConfig,
) -> PhaseState {
    let enter = |phase| PhaseState { phase, entered: time, off_since: None };
    match state.phase {
        Phase::Approach => match depth {
            Some(d) if d < blend.d_max => enter(Phase::Transition),
            _ if contact => enter(Phase::Transition),
            _ => *state,
        },
        Phase::Transition if contact => enter(Phase::ForceHold),
        Phase::Transition => *state,
        Phase::ForceHold if contact => PhaseState { off_since: None, ..*state },
        Phase::ForceHold => {
            let since = state.off_since.unwrap_or(time);
            if time - since > cfg.retreat_dwell {
                enter(Phase::Transition)
            } else {
                PhaseState { off_since: Some(since), ..*state }
            }
        }
    }
}
