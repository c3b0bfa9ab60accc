//! Built-in knowledge base and signature rule set.
//!
//! The shipped defaults cover three attack classes with a complete 3x3
//! profile matrix and one payload signature per attack. Commands fall back
//! to these when no knowledge-base file is given.

use std::net::Ipv4Addr;

use crate::analysis::{Matcher, SignatureRule};
use crate::capture::Protocol;
use crate::kb::{ActionKind, ActionProfile, AttackType, KnowledgeBase, ResponseAction};

/// Default victim address used by the dataset generators.
pub const DEFAULT_TARGET_IP: Ipv4Addr = Ipv4Addr::new(150, 162, 63, 23);

/// Payload marker identifying each default attack.
const MARKERS: [(&str, &[u8]); 3] = [
    ("E1", b"SQL INJECT"),
    ("E2", b"<script>alert(1)</script>"),
    ("E3", b"../../etc/passwd"),
];

pub fn default_attack_ids() -> Vec<String> {
    MARKERS.iter().map(|(id, _)| id.to_string()).collect()
}

/// Marker bytes for a default attack id, if it has a payload signature.
pub fn signature_marker(attack_id: &str) -> Option<Vec<u8>> {
    MARKERS
        .iter()
        .find(|(id, _)| *id == attack_id)
        .map(|(_, marker)| marker.to_vec())
}

pub fn default_rules() -> Vec<SignatureRule> {
    MARKERS
        .iter()
        .enumerate()
        .map(|(i, (attack_id, marker))| SignatureRule {
            id: format!("s{}", i + 1),
            attack_id: attack_id.to_string(),
            protocol: Protocol::Tcp,
            matcher: Matcher::PayloadContains(marker.to_vec()),
        })
        .collect()
}

/// Source pool for generated legitimate traffic.
pub fn legit_host_pool() -> Vec<Ipv4Addr> {
    (10..18)
        .map(|last| Ipv4Addr::new(192, 168, 0, last))
        .collect()
}

/// The built-in knowledge base: 3 attacks, 3 actions, and the 3x3 profile
/// matrix of time/cost/probability estimates used throughout the test suite
/// and the `paper-example` command.
pub fn default_kb() -> KnowledgeBase {
    let attacks = vec![
        AttackType {
            id: "E1".into(),
            name: "sql-injection-flood".into(),
            description: "HTTP request flood carrying SQL injection payloads".into(),
        },
        AttackType {
            id: "E2".into(),
            name: "xss-probe".into(),
            description: "script injection attempts against web form parameters".into(),
        },
        AttackType {
            id: "E3".into(),
            name: "path-traversal-sweep".into(),
            description: "repeated directory traversal attempts against static routes".into(),
        },
    ];
    let actions = vec![
        ResponseAction {
            id: "a1".into(),
            name: "notify operator".into(),
            kind: ActionKind::Notify,
        },
        ResponseAction {
            id: "a2".into(),
            name: "block attacking source".into(),
            kind: ActionKind::BlockSource,
        },
        ResponseAction {
            id: "a3".into(),
            name: "rate-limit attacking source".into(),
            kind: ActionKind::RateLimitSource,
        },
    ];
    let estimates: [(&str, &str, f64, f64, f64); 9] = [
        ("a1", "E1", 2.0, 2.0, 0.1),
        ("a1", "E2", 3.0, 4.0, 0.3),
        ("a1", "E3", 20.0, 10.0, 0.5),
        ("a2", "E1", 5.0, 6.0, 0.2),
        ("a2", "E2", 3.0, 5.0, 0.1),
        ("a2", "E3", 30.0, 10.0, 0.4),
        ("a3", "E1", 1.0, 1.0, 0.0),
        ("a3", "E2", 5.0, 7.0, 0.2),
        ("a3", "E3", 20.0, 10.0, 0.1),
    ];
    let profiles = estimates
        .iter()
        .map(
            |(action_id, attack_id, time, cost, probability)| ActionProfile {
                action_id: action_id.to_string(),
                attack_id: attack_id.to_string(),
                time: *time,
                cost: *cost,
                probability: *probability,
                trials: 0,
                successes: 0,
            },
        )
        .collect();
    KnowledgeBase {
        attacks,
        actions,
        profiles,
        signatures: default_rules(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_kb_is_valid() {
        default_kb().validate().unwrap();
    }

    #[test]
    fn every_default_attack_has_a_marker() {
        for attack in default_kb().attacks {
            assert!(signature_marker(&attack.id).is_some());
        }
    }
}
