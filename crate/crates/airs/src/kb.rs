//! Knowledge base: attack catalog, response actions, per-pair effectiveness
//! profiles, signature rules, persistence, and the outcome feedback rule.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;

use crate::analysis::{Matcher, SignatureRule};
use crate::capture::{Protocol, TcpFlags};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing profile for action `{action_id}` against attack `{attack_id}`")]
    IncompleteMatrix {
        action_id: String,
        attack_id: String,
    },
    #[error("{referrer} references unknown {kind} `{id}`")]
    DanglingReference {
        referrer: String,
        kind: &'static str,
        id: String,
    },
    #[error("invalid knowledge base: {0}")]
    Invariant(String),
}

/// A known attack class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackType {
    pub id: String,
    pub name: String,
    pub description: String,
}

/// The closed catalog of countermeasure kinds the executor understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Notify,
    BlockSource,
    RateLimitSource,
    IsolateTarget,
    RestartTarget,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Notify => "notify",
            ActionKind::BlockSource => "block-source",
            ActionKind::RateLimitSource => "rate-limit-source",
            ActionKind::IsolateTarget => "isolate-target",
            ActionKind::RestartTarget => "restart-target",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "notify" => Ok(ActionKind::Notify),
            "block-source" => Ok(ActionKind::BlockSource),
            "rate-limit-source" => Ok(ActionKind::RateLimitSource),
            "isolate-target" => Ok(ActionKind::IsolateTarget),
            "restart-target" => Ok(ActionKind::RestartTarget),
            other => Err(format!("unknown action kind `{other}`")),
        }
    }
}

/// A response the system can take against an attack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseAction {
    pub id: String,
    pub name: String,
    pub kind: ActionKind,
}

/// Per (action, attack) effectiveness estimates plus outcome history counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProfile {
    pub action_id: String,
    pub attack_id: String,
    /// Elapsed-time estimate, abstract units.
    pub time: f64,
    /// Execution-cost estimate, abstract units.
    pub cost: f64,
    /// Success probability.
    pub probability: f64,
    pub trials: u64,
    pub successes: u64,
}

/// Observed result of one executed response.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRecord {
    pub action_id: String,
    pub attack_id: String,
    pub success: bool,
    pub observed_time: f64,
    pub observed_cost: f64,
    pub timestamp_us: u64,
}

/// Immutable snapshot of everything the engine knows: attacks, actions,
/// profiles, and detection signatures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    pub attacks: Vec<AttackType>,
    pub actions: Vec<ResponseAction>,
    pub profiles: Vec<ActionProfile>,
    pub signatures: Vec<SignatureRule>,
}

impl KnowledgeBase {
    pub fn attack(&self, id: &str) -> Option<&AttackType> {
        self.attacks.iter().find(|a| a.id == id)
    }

    pub fn action(&self, id: &str) -> Option<&ResponseAction> {
        self.actions.iter().find(|a| a.id == id)
    }

    pub fn profile(&self, action_id: &str, attack_id: &str) -> Option<&ActionProfile> {
        self.profiles
            .iter()
            .find(|p| p.action_id == action_id && p.attack_id == attack_id)
    }

    /// Checks every structural invariant; load and save both go through this.
    pub fn validate(&self) -> Result<(), KbError> {
        let mut attack_ids = HashSet::new();
        for attack in &self.attacks {
            check_id("attack", &attack.id)?;
            check_field("attack name", &attack.name)?;
            if attack.description.contains('\n') {
                return Err(KbError::Invariant(format!(
                    "description of attack `{}` contains a newline",
                    attack.id
                )));
            }
            if !attack_ids.insert(&attack.id) {
                return Err(KbError::Invariant(format!(
                    "duplicate attack id `{}`",
                    attack.id
                )));
            }
        }
        let mut action_ids = HashSet::new();
        for action in &self.actions {
            check_id("action", &action.id)?;
            check_field("action name", &action.name)?;
            if !action_ids.insert(&action.id) {
                return Err(KbError::Invariant(format!(
                    "duplicate action id `{}`",
                    action.id
                )));
            }
        }
        let mut pairs = HashSet::new();
        for profile in &self.profiles {
            if self.action(&profile.action_id).is_none() {
                return Err(KbError::DanglingReference {
                    referrer: format!("profile ({}, {})", profile.action_id, profile.attack_id),
                    kind: "action",
                    id: profile.action_id.clone(),
                });
            }
            if self.attack(&profile.attack_id).is_none() {
                return Err(KbError::DanglingReference {
                    referrer: format!("profile ({}, {})", profile.action_id, profile.attack_id),
                    kind: "attack",
                    id: profile.attack_id.clone(),
                });
            }
            if !pairs.insert((&profile.action_id, &profile.attack_id)) {
                return Err(KbError::Invariant(format!(
                    "duplicate profile for ({}, {})",
                    profile.action_id, profile.attack_id
                )));
            }
            if !(0.0..=1.0).contains(&profile.probability) {
                return Err(KbError::Invariant(format!(
                    "profile ({}, {}) probability {} outside [0, 1]",
                    profile.action_id, profile.attack_id, profile.probability
                )));
            }
            if !profile.time.is_finite() || profile.time < 0.0 {
                return Err(KbError::Invariant(format!(
                    "profile ({}, {}) time {} must be finite and >= 0",
                    profile.action_id, profile.attack_id, profile.time
                )));
            }
            if !profile.cost.is_finite() || profile.cost < 0.0 {
                return Err(KbError::Invariant(format!(
                    "profile ({}, {}) cost {} must be finite and >= 0",
                    profile.action_id, profile.attack_id, profile.cost
                )));
            }
            if profile.successes > profile.trials {
                return Err(KbError::Invariant(format!(
                    "profile ({}, {}) has more successes than trials",
                    profile.action_id, profile.attack_id
                )));
            }
        }
        for action in &self.actions {
            for attack in &self.attacks {
                if !pairs.contains(&(&action.id, &attack.id)) {
                    return Err(KbError::IncompleteMatrix {
                        action_id: action.id.clone(),
                        attack_id: attack.id.clone(),
                    });
                }
            }
        }
        for rule in &self.signatures {
            check_id("signature", &rule.id)?;
            if self.attack(&rule.attack_id).is_none() {
                return Err(KbError::DanglingReference {
                    referrer: format!("signature {}", rule.id),
                    kind: "attack",
                    id: rule.attack_id.clone(),
                });
            }
            if let Matcher::PayloadContains(pattern) = &rule.matcher {
                if pattern.is_empty() {
                    return Err(KbError::Invariant(format!(
                        "signature {} has an empty payload pattern",
                        rule.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies one observed outcome and returns the updated snapshot.
    ///
    /// Probability becomes the Laplace estimate (successes+1)/(trials+2)
    /// over the updated counts. Time and cost become the running mean of
    /// every observation so far, with the initial estimate weighted as one
    /// pseudo-observation.
    pub fn record_outcome(&self, outcome: &OutcomeRecord) -> Result<KnowledgeBase, KbError> {
        if !outcome.observed_time.is_finite() || outcome.observed_time < 0.0 {
            return Err(KbError::Invariant(format!(
                "observed time {} must be finite and >= 0",
                outcome.observed_time
            )));
        }
        if !outcome.observed_cost.is_finite() || outcome.observed_cost < 0.0 {
            return Err(KbError::Invariant(format!(
                "observed cost {} must be finite and >= 0",
                outcome.observed_cost
            )));
        }
        let mut kb = self.clone();
        let profile = kb
            .profiles
            .iter_mut()
            .find(|p| p.action_id == outcome.action_id && p.attack_id == outcome.attack_id)
            .ok_or_else(|| KbError::DanglingReference {
                referrer: "outcome record".into(),
                kind: "profile",
                id: format!("({}, {})", outcome.action_id, outcome.attack_id),
            })?;
        let weight = profile.trials + 1;
        profile.time = (profile.time * weight as f64 + outcome.observed_time) / (weight + 1) as f64;
        profile.cost = (profile.cost * weight as f64 + outcome.observed_cost) / (weight + 1) as f64;
        profile.trials += 1;
        if outcome.success {
            profile.successes += 1;
        }
        profile.probability = (profile.successes + 1) as f64 / (profile.trials + 2) as f64;
        Ok(kb)
    }

    /// Serializes to the section-based text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[attacks]\n");
        for attack in &self.attacks {
            out.push_str(&format!(
                "{},{},{}\n",
                attack.id, attack.name, attack.description
            ));
        }
        out.push_str("[actions]\n");
        for action in &self.actions {
            out.push_str(&format!("{},{},{}\n", action.id, action.name, action.kind));
        }
        out.push_str("[profiles]\n");
        for profile in &self.profiles {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                profile.action_id,
                profile.attack_id,
                profile.time,
                profile.cost,
                profile.probability,
                profile.trials,
                profile.successes
            ));
        }
        out.push_str("[signatures]\n");
        for rule in &self.signatures {
            let (matcher, pattern) = match &rule.matcher {
                Matcher::PayloadContains(bytes) => ("payload-contains", BASE64.encode(bytes)),
                Matcher::FlagPattern(flags) => ("flag-pattern", render_flag_pattern(*flags)),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                rule.id, rule.attack_id, rule.protocol, matcher, pattern
            ));
        }
        out
    }

    /// Parses the text format. `path` is used for error reporting only.
    pub fn parse(text: &str, path: &Path) -> Result<KnowledgeBase, KbError> {
        let mut kb = KnowledgeBase::default();
        let mut section: Option<Section> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| KbError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(match name {
                    "attacks" => Section::Attacks,
                    "actions" => Section::Actions,
                    "profiles" => Section::Profiles,
                    "signatures" => Section::Signatures,
                    other => return Err(err(format!("unknown section `{other}`"))),
                });
                continue;
            }
            match section {
                None => return Err(err("record before any section header".into())),
                Some(Section::Attacks) => {
                    let mut fields = line.splitn(3, ',');
                    let id = fields.next().unwrap_or_default();
                    let name = fields
                        .next()
                        .ok_or_else(|| err("attack record needs id,name,description".into()))?;
                    let description = fields
                        .next()
                        .ok_or_else(|| err("attack record needs id,name,description".into()))?;
                    kb.attacks.push(AttackType {
                        id: id.to_string(),
                        name: name.to_string(),
                        description: description.to_string(),
                    });
                }
                Some(Section::Actions) => {
                    let fields: Vec<&str> = line.split(',').collect();
                    if fields.len() != 3 {
                        return Err(err("action record needs id,name,kind".into()));
                    }
                    let kind = fields[2].parse().map_err(err)?;
                    kb.actions.push(ResponseAction {
                        id: fields[0].to_string(),
                        name: fields[1].to_string(),
                        kind,
                    });
                }
                Some(Section::Profiles) => {
                    let fields: Vec<&str> = line.split(',').collect();
                    if fields.len() != 7 {
                        return Err(err(
                            "profile record needs action,attack,time,cost,probability,trials,successes"
                                .into(),
                        ));
                    }
                    kb.profiles.push(ActionProfile {
                        action_id: fields[0].to_string(),
                        attack_id: fields[1].to_string(),
                        time: parse_num(fields[2], "time").map_err(&err)?,
                        cost: parse_num(fields[3], "cost").map_err(&err)?,
                        probability: parse_num(fields[4], "probability").map_err(&err)?,
                        trials: fields[5]
                            .parse()
                            .map_err(|_| err(format!("bad trials `{}`", fields[5])))?,
                        successes: fields[6]
                            .parse()
                            .map_err(|_| err(format!("bad successes `{}`", fields[6])))?,
                    });
                }
                Some(Section::Signatures) => {
                    let rule = parse_signature_record(line).map_err(err)?;
                    kb.signatures.push(rule);
                }
            }
        }
        kb.validate()?;
        Ok(kb)
    }
}

enum Section {
    Attacks,
    Actions,
    Profiles,
    Signatures,
}

fn check_id(kind: &str, id: &str) -> Result<(), KbError> {
    if id.is_empty() {
        return Err(KbError::Invariant(format!("{kind} id is empty")));
    }
    if id.contains(',') || id.contains('\n') || id.contains('\t') {
        return Err(KbError::Invariant(format!(
            "{kind} id `{id}` contains a reserved character"
        )));
    }
    Ok(())
}

fn check_field(what: &str, value: &str) -> Result<(), KbError> {
    if value.contains(',') || value.contains('\n') {
        return Err(KbError::Invariant(format!(
            "{what} `{value}` contains a reserved character"
        )));
    }
    Ok(())
}

fn parse_num(field: &str, what: &str) -> Result<f64, String> {
    field
        .parse::<f64>()
        .map_err(|_| format!("bad {what} `{field}`"))
}

fn render_flag_pattern(flags: TcpFlags) -> String {
    let rendered = flags.to_string();
    if rendered == "-" {
        rendered
    } else {
        rendered.replace(',', "|")
    }
}

/// Parses one signature record: `id,attack,protocol,matcher,pattern` where
/// the pattern is base64 for `payload-contains` and `|`-joined flag names
/// (or `-`) for `flag-pattern`. Shared with inline rule lists in config files.
pub fn parse_signature_record(line: &str) -> Result<SignatureRule, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 {
        return Err("signature record needs id,attack,protocol,matcher,pattern".into());
    }
    let protocol: Protocol = fields[2].parse()?;
    let matcher = match fields[3] {
        "payload-contains" => {
            let bytes = BASE64
                .decode(fields[4])
                .map_err(|_| format!("bad base64 pattern `{}`", fields[4]))?;
            Matcher::PayloadContains(bytes)
        }
        "flag-pattern" => {
            let flags: TcpFlags = fields[4].replace('|', ",").parse()?;
            Matcher::FlagPattern(flags)
        }
        other => return Err(format!("unknown matcher `{other}`")),
    };
    Ok(SignatureRule {
        id: fields[0].to_string(),
        attack_id: fields[1].to_string(),
        protocol,
        matcher,
    })
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, KbError> {
    let text = fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    KnowledgeBase::parse(&text, path)
}

pub fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<(), KbError> {
    kb.validate()?;
    fs::write(path, kb.to_text()).map_err(|source| KbError::Io {
        path: path.to_path_buf(),
        source,
    })
}
