//! Small fixtures compiled into the crate.

use crate::corpus::{parse_instances, RelationInstance};
use crate::episode::{parse_episodes, Episode};

/// Hand-parsed instances: "Bill Gates founded Microsoft", "Bill Gates is
/// the founder of Microsoft" and "John moved to New York City".
pub const SAMPLES_JSONL: &str = include_str!("../data/samples.jsonl");

/// Rule strings quoted in the literature on this method, one per line.
pub const QUOTED_RULES: &str = include_str!("../data/quoted_rules.txt");

pub fn sample_instances() -> Vec<RelationInstance> {
    parse_instances(SAMPLES_JSONL).expect("bundled fixtures parse")
}

pub fn quoted_rules() -> Vec<&'static str> {
    QUOTED_RULES.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// The rule that matches the first sample sentence.
pub const FOUNDED_RULE: &str = "[ne=per]+ <nsubj founded >dobj [ne=org]+";

/// The 200-episode test benchmark, as produced by
/// `generate_benchmark(&BenchmarkConfig::mini())`.
pub const MINI_BENCHMARK_JSONL: &str = include_str!("../data/mini_benchmark.jsonl");

/// The 100-episode development benchmark (`BenchmarkConfig::dev()`).
pub const MINI_DEV_JSONL: &str = include_str!("../data/mini_dev.jsonl");

pub fn mini_benchmark() -> Vec<Episode> {
    parse_episodes(MINI_BENCHMARK_JSONL).expect("bundled benchmark parses")
}

pub fn mini_dev() -> Vec<Episode> {
    parse_episodes(MINI_DEV_JSONL).expect("bundled benchmark parses")
}
