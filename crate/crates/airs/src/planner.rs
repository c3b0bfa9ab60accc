//! Expected-utility response planning: min-max normalization of the profile
//! matrix, per-cell utilities, per-action sums over the detected attacks,
//! and argmax selection.

use std::fmt::Write as _;

use thiserror::Error;

use crate::kb::KnowledgeBase;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("knowledge base has no profiles to normalize")]
    EmptyProfiles,
    #[error("value {raw} outside normalization range [{min}, {max}]")]
    ValueOutOfRange { raw: f64, min: f64, max: f64 },
    #[error("unknown attack `{0}`")]
    UnknownAttack(String),
    #[error("no utility cell for action `{action_id}` and attack `{attack_id}`")]
    MissingCell {
        action_id: String,
        attack_id: String,
    },
    #[error("detected attack set is empty")]
    EmptyAttackSet,
}

/// Global min/max per metric, computed over every profile cell of the
/// knowledge base. One pair per metric, shared across all attacks and
/// actions; probabilities are never normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationContext {
    pub time_min: f64,
    pub time_max: f64,
    pub cost_min: f64,
    pub cost_max: f64,
}

impl NormalizationContext {
    pub fn normalize_time(&self, raw: f64) -> Result<f64, PlannerError> {
        normalize(raw, self.time_min, self.time_max)
    }

    pub fn normalize_cost(&self, raw: f64) -> Result<f64, PlannerError> {
        normalize(raw, self.cost_min, self.cost_max)
    }
}

/// Min-max normalization onto [0, 1]. A degenerate range (max = min) maps
/// everything to 0.
pub fn normalize(raw: f64, min: f64, max: f64) -> Result<f64, PlannerError> {
    if raw < min || raw > max {
        return Err(PlannerError::ValueOutOfRange { raw, min, max });
    }
    if min == max {
        return Ok(0.0);
    }
    Ok((raw - min) / (max - min))
}

/// Scans every profile of the knowledge base for the global time and cost
/// ranges.
pub fn build_normalization(kb: &KnowledgeBase) -> Result<NormalizationContext, PlannerError> {
    if kb.profiles.is_empty() {
        return Err(PlannerError::EmptyProfiles);
    }
    let mut ctx = NormalizationContext {
        time_min: f64::INFINITY,
        time_max: f64::NEG_INFINITY,
        cost_min: f64::INFINITY,
        cost_max: f64::NEG_INFINITY,
    };
    for profile in &kb.profiles {
        ctx.time_min = ctx.time_min.min(profile.time);
        ctx.time_max = ctx.time_max.max(profile.time);
        ctx.cost_min = ctx.cost_min.min(profile.cost);
        ctx.cost_max = ctx.cost_max.max(profile.cost);
    }
    Ok(ctx)
}

/// Utility of one (action, attack) cell: probability / (cost + time + 1)
/// with cost and time already normalized.
pub fn utility_cell(probability: f64, norm_cost: f64, norm_time: f64) -> f64 {
    probability / (norm_cost + norm_time + 1.0)
}

/// One evaluated cell of the utility table.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityCell {
    pub action_id: String,
    pub attack_id: String,
    pub norm_time: f64,
    pub norm_cost: f64,
    pub probability: f64,
    pub utility: f64,
}

/// All cells over (actions x detected attacks) plus the per-action sums.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    pub attack_ids: Vec<String>,
    pub cells: Vec<UtilityCell>,
    pub action_sums: Vec<(String, f64)>,
}

impl UtilityTable {
    pub fn cell(&self, action_id: &str, attack_id: &str) -> Option<&UtilityCell> {
        self.cells
            .iter()
            .find(|c| c.action_id == action_id && c.attack_id == attack_id)
    }

    pub fn action_sum(&self, action_id: &str) -> Option<f64> {
        self.action_sums
            .iter()
            .find(|(id, _)| id == action_id)
            .map(|(_, sum)| *sum)
    }
}

/// The selected response with the evidence that justified it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePlan {
    pub selected_action_id: String,
    pub expected_utility: f64,
    pub detected_attacks: Vec<String>,
    pub table: UtilityTable,
    pub decided_at_us: u64,
}

/// Sum of an action's utility cells over exactly the detected attacks.
/// An empty attack set sums to 0.
pub fn expected_utility(
    action_id: &str,
    detected_attacks: &[String],
    cells: &[UtilityCell],
) -> Result<f64, PlannerError> {
    let mut sum = 0.0;
    for attack_id in detected_attacks {
        let cell = cells
            .iter()
            .find(|c| c.action_id == action_id && c.attack_id == *attack_id)
            .ok_or_else(|| PlannerError::MissingCell {
                action_id: action_id.to_string(),
                attack_id: attack_id.clone(),
            })?;
        sum += cell.utility;
    }
    Ok(sum)
}

/// Builds the utility table over the detected attacks and selects the
/// action with the largest sum. Normalization ranges come from the full
/// knowledge base, not just the detected columns. Ties go to the action
/// declared first.
pub fn select_response(
    kb: &KnowledgeBase,
    detected_attacks: &[String],
    decided_at_us: u64,
) -> Result<ResponsePlan, PlannerError> {
    if detected_attacks.is_empty() {
        return Err(PlannerError::EmptyAttackSet);
    }
    for attack_id in detected_attacks {
        if kb.attack(attack_id).is_none() {
            return Err(PlannerError::UnknownAttack(attack_id.clone()));
        }
    }
    // canonical column order: knowledge-base declaration order, deduplicated
    let attack_ids: Vec<String> = kb
        .attacks
        .iter()
        .filter(|a| detected_attacks.contains(&a.id))
        .map(|a| a.id.clone())
        .collect();
    let ctx = build_normalization(kb)?;
    let mut cells = Vec::with_capacity(kb.actions.len() * attack_ids.len());
    for action in &kb.actions {
        for attack_id in &attack_ids {
            let profile =
                kb.profile(&action.id, attack_id)
                    .ok_or_else(|| PlannerError::MissingCell {
                        action_id: action.id.clone(),
                        attack_id: attack_id.clone(),
                    })?;
            let norm_time = ctx.normalize_time(profile.time)?;
            let norm_cost = ctx.normalize_cost(profile.cost)?;
            cells.push(UtilityCell {
                action_id: action.id.clone(),
                attack_id: attack_id.clone(),
                norm_time,
                norm_cost,
                probability: profile.probability,
                utility: utility_cell(profile.probability, norm_cost, norm_time),
            });
        }
    }
    let mut action_sums = Vec::with_capacity(kb.actions.len());
    for action in &kb.actions {
        action_sums.push((
            action.id.clone(),
            expected_utility(&action.id, &attack_ids, &cells)?,
        ));
    }
    let (selected_action_id, best) = action_sums
        .iter()
        .fold(None::<(&str, f64)>, |best, (id, sum)| match best {
            Some((_, best_sum)) if *sum <= best_sum => best,
            _ => Some((id, *sum)),
        })
        .expect("knowledge base validation guarantees at least one action");
    Ok(ResponsePlan {
        selected_action_id: selected_action_id.to_string(),
        expected_utility: best,
        detected_attacks: attack_ids.clone(),
        table: UtilityTable {
            attack_ids,
            cells,
            action_sums,
        },
        decided_at_us,
    })
}

/// Utility table rendering: one row per action, one column per detected
/// attack, and the per-action sum.
pub fn render_plan_table(plan: &ResponsePlan) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for attack_id in &plan.table.attack_ids {
        let _ = write!(out, "{attack_id:>10}");
    }
    let _ = writeln!(out, "{:>10}", "Sum");
    for (action_id, sum) in &plan.table.action_sums {
        let _ = write!(out, "{action_id:<8}");
        for attack_id in &plan.table.attack_ids {
            let utility = plan
                .table
                .cell(action_id, attack_id)
                .map(|c| c.utility)
                .unwrap_or(f64::NAN);
            let _ = write!(out, "{utility:>10.3}");
        }
        let _ = writeln!(out, "{sum:>10.3}");
    }
    out
}

/// Machine-readable summary: `selected=<action> eu=<value> attacks=<ids>`.
pub fn plan_summary_line(plan: &ResponsePlan) -> String {
    format!(
        "selected={} eu={:.6} attacks={}",
        plan.selected_action_id,
        plan.expected_utility,
        plan.detected_attacks.join(",")
    )
}
