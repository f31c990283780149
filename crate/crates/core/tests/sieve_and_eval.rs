use std::collections::BTreeMap;

use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use softrules::episode::NO_RELATION;
use softrules::eval::{report, threshold_grid, tune_threshold, Metrics, ScoredEpisode};
use softrules::sieve::{Channel, EpisodeScores, Mode, SieveConfig};

const RELS: &[&str] = &["a", "b", "c"];

fn rel() -> impl Strategy<Value = String> {
    proptest::sample::select(RELS).prop_map(str::to_string)
}

fn scores() -> impl Strategy<Value = EpisodeScores> {
    let strict = vec((rel(), 0u8..100), 0..3).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (r, s))| (format!("r{i}"), r, Some(s as f64 / 100.0)))
            .collect()
    });
    let soft = btree_map(rel(), 0u8..=100, 0..4).prop_map(|m| m.into_iter().map(|(r, s)| (r.clone(), (s as f64 / 100.0, format!("{r}-best")))).collect());
    (strict, soft).prop_map(|(strict, soft)| EpisodeScores { strict, soft })
}

fn scored() -> impl Strategy<Value = Vec<ScoredEpisode>> {
    vec((scores(), prop_oneof![rel(), Just(NO_RELATION.to_string())]), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (scores, gold))| ScoredEpisode { id: format!("e{i}"), gold, scores })
            .collect()
    })
}

fn cfg(mode: Mode, threshold: f64) -> SieveConfig {
    SieveConfig { mode, threshold, ..SieveConfig::default() }
}

proptest! {
    #[test]
    fn hybrid_defers_to_hard_then_soft(s in scores(), t in 0u8..=100) {
        let t = t as f64 / 100.0;
        let hard = s.predict(&cfg(Mode::Hard, t));
        let soft = s.predict(&cfg(Mode::Soft, t));
        let hybrid = s.predict(&cfg(Mode::Hybrid, t));
        if hard.channel == Channel::Hard {
            prop_assert_eq!(&hybrid, &hard);
            prop_assert_eq!(hard.score, 1.0);
        } else {
            prop_assert_eq!(&hybrid, &soft);
        }
        prop_assert_eq!(hard.channel == Channel::Hard, !s.strict.is_empty());
    }

    #[test]
    fn soft_positives_shrink_as_threshold_rises(s in scores(), a in 0u8..=100, b in 0u8..=100) {
        let (lo, hi) = (a.min(b) as f64 / 100.0, a.max(b) as f64 / 100.0);
        let p_hi = s.predict(&cfg(Mode::Soft, hi));
        let p_lo = s.predict(&cfg(Mode::Soft, lo));
        if p_hi.is_positive() {
            prop_assert_eq!(p_lo.relation, p_hi.relation);
        }
    }

    #[test]
    fn override_only_touches_its_relation(s in scores(), t in 0u8..=100, o in 0u8..=100) {
        let base = cfg(Mode::Soft, t as f64 / 100.0);
        let mut with = base.clone();
        with.overrides = BTreeMap::from([("a".to_string(), o as f64 / 100.0)]);
        let (p, q) = (s.predict(&base), s.predict(&with));
        if p.relation != "a" && q.relation != "a" {
            prop_assert_eq!(p, q);
        }
    }

    #[test]
    fn tuning_matches_an_exhaustive_scan(eps in scored(), hybrid in any::<bool>()) {
        let c = cfg(if hybrid { Mode::Hybrid } else { Mode::Soft }, 0.5);
        let tuned = tune_threshold(&eps, &c, 0.05).unwrap();
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let f1 = report(&eps, &SieveConfig { threshold: t, ..c.clone() }).metrics.f1;
            if f1 > best.1 {
                best = (t, f1);
            }
        }
        prop_assert_eq!((tuned.threshold, tuned.f1), best);
    }

    #[test]
    fn micro_f1_is_a_harmonic_mean(labels in vec((prop_oneof![rel(), Just(NO_RELATION.to_string())], prop_oneof![rel(), Just(NO_RELATION.to_string())]), 0..50)) {
        let m = Metrics::from_labels(labels.iter().map(|(g, p)| (g.as_str(), p.as_str())));
        prop_assert!((0.0..=1.0).contains(&m.f1));
        prop_assert!(m.correct_positive <= m.predicted_positive.min(m.gold_positive));
        if m.precision + m.recall > 0.0 {
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_has_exact_endpoints() {
    let g = threshold_grid(0.01).unwrap();
    assert_eq!(g.len(), 101);
    assert_eq!(g[0], 0.0);
    assert_eq!(g[100], 1.0);
    assert_eq!(g[57], 0.57);
    assert!(threshold_grid(0.0).is_err());
    assert!(threshold_grid(1.5).is_err());
}

#[test]
fn empty_soft_map_abstains() {
    let s = EpisodeScores { strict: Vec::new(), soft: BTreeMap::new() };
    let p = s.predict(&cfg(Mode::Hybrid, 0.0));
    assert_eq!(p.relation, NO_RELATION);
    assert_eq!(p.channel, Channel::None);
}
