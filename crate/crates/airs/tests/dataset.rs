//! Dataset-scale checks: large capture round trips and full-pipeline
//! detection counts on generated datasets.

use airs::analysis::{map_detect, partition, run_analysis};
use airs::capture::{
    generate_legit_traffic, read_capture, scale_dataset, write_capture, TrafficSpec,
};
use airs::defaults;

#[test]
fn large_capture_roundtrips_exactly() {
    let records = scale_dataset(130_000, 306, 1).unwrap();
    assert_eq!(records.len(), 130_000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("large.cap");
    write_capture(&records, &path).unwrap();
    let back = read_capture(&path).unwrap();
    assert_eq!(back, records);
}

#[test]
fn large_legit_dataset_raises_no_alerts() {
    let spec = TrafficSpec {
        legit_packet_count: 130_000,
        legit_hosts: defaults::legit_host_pool(),
        target_ip: defaults::DEFAULT_TARGET_IP,
        attack_runs: vec![],
        seed: 2,
    };
    let records = generate_legit_traffic(&spec).unwrap();
    assert!(map_detect(&records, &defaults::default_rules()).is_empty());
}

#[test]
fn partitions_of_large_capture_concatenate_to_input() {
    let records = scale_dataset(130_000, 306, 3).unwrap();
    let parts = partition(&records, 8).unwrap();
    assert_eq!(parts.len(), 8);
    let sizes: Vec<usize> = parts.iter().map(|p| p.records.len()).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let rebuilt: Vec<_> = parts.iter().flat_map(|p| p.records.to_vec()).collect();
    assert_eq!(rebuilt, records);
}

#[test]
fn heavy_dataset_recovers_every_injected_run() {
    // 700k packets with 803 runs, the second dataset shape
    let records = scale_dataset(700_000, 803, 4).unwrap();
    assert_eq!(records.len(), 700_000);
    let aggregates = run_analysis(&records, &defaults::default_rules(), 8).unwrap();
    assert_eq!(aggregates.len(), 803);
    assert!(aggregates.iter().all(|a| a.quantity == 100));
}
