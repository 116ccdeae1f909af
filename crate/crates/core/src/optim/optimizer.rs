use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::step::{adamw_step, lamb_step, maxlamb_step, merit_step};
use super::{HyperParams, OptimState};
use crate::diagnostics::{count_bound_active, count_clipped};
use crate::error::{Error, Result};
use crate::params::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adamw,
    Lamb,
    Maxlamb,
    Merit,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adamw => "adamw",
            OptimizerKind::Lamb => "lamb",
            OptimizerKind::Maxlamb => "maxlamb",
            OptimizerKind::Merit => "merit",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            OptimizerKind::Adamw => 0,
            OptimizerKind::Lamb => 1,
            OptimizerKind::Maxlamb => 2,
            OptimizerKind::Merit => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => OptimizerKind::Adamw,
            1 => OptimizerKind::Lamb,
            2 => OptimizerKind::Maxlamb,
            3 => OptimizerKind::Merit,
            _ => return None,
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adamw" => Ok(OptimizerKind::Adamw),
            "lamb" => Ok(OptimizerKind::Lamb),
            "maxlamb" => Ok(OptimizerKind::Maxlamb),
            "merit" => Ok(OptimizerKind::Merit),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Clip and lower-bound trigger counts for one tensor in one MERIT step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TensorTrigger {
    pub clipped: usize,
    pub elements: usize,
    /// Positions where `b > max(r[i], c[j])`; zero for non-matrices.
    pub bound_active: usize,
    /// Positions considered for the bound (matrix elements only).
    pub bound_elements: usize,
}

/// Per-tensor trigger counts from one step. Empty for optimizers other than
/// MERIT.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub triggers: BTreeMap<String, TensorTrigger>,
}

/// Applies one optimizer to a whole parameter map, keeping one
/// [`OptimState`] per tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    hp: HyperParams,
    states: BTreeMap<String, OptimState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hp: HyperParams, params: &Params) -> Result<Self> {
        hp.validate()?;
        let states = params
            .iter()
            .map(|(name, t)| (name.to_string(), OptimState::new(t.shape())))
            .collect();
        Ok(Self { kind, hp, states })
    }

    /// Rebuild from saved moment state.
    pub fn from_states(kind: OptimizerKind, hp: HyperParams, states: BTreeMap<String, OptimState>) -> Result<Self> {
        hp.validate()?;
        Ok(Self { kind, hp, states })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn states(&self) -> &BTreeMap<String, OptimState> {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut BTreeMap<String, OptimState> {
        &mut self.states
    }

    /// Update every tensor in `params` from the matching entry in `grads`.
    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<StepReport> {
        params.expect_same_layout(grads)?;
        let mut report = StepReport::default();
        for ((name, w), (_, g)) in params.iter_mut().zip(grads.iter()) {
            let state = self
                .states
                .get_mut(name)
                .ok_or_else(|| Error::Input(format!("no optimizer state for {name}")))?;
            match self.kind {
                OptimizerKind::Adamw => adamw_step(w, g, state, &self.hp, lr)?,
                OptimizerKind::Lamb => lamb_step(w, g, state, &self.hp, lr)?,
                OptimizerKind::Maxlamb => maxlamb_step(w, g, state, &self.hp, lr)?,
                OptimizerKind::Merit => {
                    let diag = merit_step(w, g, state, &self.hp, lr)?;
                    let (bound_active, bound_elements) = match &diag.ratios {
                        Some(tr) => (count_bound_active(tr), tr.s.numel()),
                        None => (0, 0),
                    };
                    report.triggers.insert(
                        name.to_string(),
                        TensorTrigger {
                            clipped: count_clipped(&diag.pre_clip, self.hp.clip_threshold),
                            elements: diag.pre_clip.numel(),
                            bound_active,
                            bound_elements,
                        },
                    );
                }
            }
        }
        Ok(report)
    }
}
