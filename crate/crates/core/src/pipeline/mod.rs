//! Synthetic (rule, sentence) training data: sampling, pair building,
//! de-duplication and per-type-pair capping, synonym augmentation, and
//! paraphrase expansion.

mod paraphrase;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use paraphrase::{paraphrase_prompt, parse_numbered_list, tokenize, ParaphraseError, Paraphraser, TemplateParaphraser};
#[cfg(feature = "http-paraphraser")]
pub use paraphrase::HttpParaphraser;

use crate::corpus::{
    entity_mentions, entity_type_pair, mark_entities, normalize_type, AnnotatedSentence, CorpusError, MarkedText,
    RelationInstance,
};
use crate::rule::Rule;
use crate::rulegen::{generate_syntactic_rule, RuleGenConfig};
use crate::synonyms::SynonymTable;

/// Entity type pairs sampled by default, written with their long names.
pub const DEFAULT_TYPE_PAIRS: &[(&str, &str)] = &[
    ("ORGANIZATION", "ORGANIZATION"),
    ("ORGANIZATION", "PERSON"),
    ("ORGANIZATION", "COUNTRY"),
    ("ORGANIZATION", "CITY"),
    ("ORGANIZATION", "STATE_OR_PROVINCE"),
    ("ORGANIZATION", "IDEOLOGY"),
    ("ORGANIZATION", "LOCATION"),
    ("ORGANIZATION", "URL"),
    ("ORGANIZATION", "EMAIL"),
    ("PERSON", "ORGANIZATION"),
    ("PERSON", "CAUSE_OF_DEATH"),
    ("PERSON", "NATIONALITY"),
    ("PERSON", "COUNTRY"),
    ("PERSON", "LOCATION"),
    ("PERSON", "CITY"),
    ("PERSON", "STATE_OR_PROVINCE"),
    ("PERSON", "IDEOLOGY"),
    ("PERSON", "CRIMINAL_CHARGE"),
    ("PERSON", "RELIGION"),
    ("PERSON", "EMAIL"),
    ("PERSON", "MONEY"),
    ("TITLE", "PERSON"),
    ("CITY", "ORGANIZATION"),
    ("CITY", "STATE_OR_PROVINCE"),
    ("PERSON", "PERSON"),
    ("PERSON", "TITLE"),
    ("PERSON", "NUMBER"),
    ("COUNTRY", "ORGANIZATION"),
    ("NATIONALITY", "PERSON"),
    ("PERSON", "DATE"),
    ("COUNTRY", "PERSON"),
    ("CITY", "PERSON"),
    ("STATE_OR_PROVINCE", "PERSON"),
    ("ORGANIZATION", "DATE"),
    ("NUMBER", "PERSON"),
    ("DATE", "PERSON"),
    ("ORGANIZATION", "NUMBER"),
    ("CAUSE_OF_DEATH", "PERSON"),
    ("DATE", "ORGANIZATION"),
    ("LOCATION", "ORGANIZATION"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Sampled,
    Paraphrase,
}

/// One (rule, marked sentence) training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub rule: String,
    pub sentence: MarkedText,
    pub origin: Origin,
    /// Normalized (subject, object) types of the source instance.
    pub type_pair: (String, String),
    /// Whether the subject is the first marked entity. Pipeline-internal.
    #[serde(skip, default = "yes")]
    pub subj_first: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_paraphrase: bool,
    pub no_preprocess: bool,
    pub no_augment: bool,
}

impl Ablations {
    pub fn all() -> Self {
        Self {
            no_paraphrase: true,
            no_preprocess: true,
            no_augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Normalized (subject, object) type pairs to sample.
    pub allowed_type_pairs: BTreeSet<(String, String)>,
    pub per_pair_cap: usize,
    pub synonym_table: SynonymTable,
    pub augment_prob: f64,
    pub paraphrase: bool,
    pub seed: u64,
    pub ablations: Ablations,
    /// Entity pairs drawn per sentence.
    pub pairs_per_sentence: usize,
    /// Concurrent paraphrase requests.
    pub max_in_flight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            allowed_type_pairs: DEFAULT_TYPE_PAIRS
                .iter()
                .map(|(a, b)| (normalize_type(a), normalize_type(b)))
                .collect(),
            per_pair_cap: 500,
            synonym_table: SynonymTable::default(),
            augment_prob: 0.3,
            paraphrase: true,
            seed: 0,
            ablations: Ablations::default(),
            pairs_per_sentence: 1,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return Err(PipelineError::Config(format!("augment_prob {} outside [0, 1]", self.augment_prob)));
        }
        if self.per_pair_cap == 0 {
            return Err(PipelineError::Config("per_pair_cap must be at least 1".into()));
        }
        if self.pairs_per_sentence == 0 || self.max_in_flight == 0 {
            return Err(PipelineError::Config(
                "pairs_per_sentence and max_in_flight must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn rng(&self, stage: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Draws up to `pairs_per_sentence` ordered entity pairs with an allowed
/// type pair from each sentence.
pub fn sample_pairs(corpus: &[AnnotatedSentence], cfg: &PipelineConfig) -> Vec<RelationInstance> {
    let mut rng = cfg.rng(1);
    let mut out = Vec::new();
    for s in corpus {
        let mentions = entity_mentions(s);
        let mut options = Vec::new();
        for (i, a) in mentions.iter().enumerate() {
            for (j, b) in mentions.iter().enumerate() {
                let pair = (normalize_type(&a.etype), normalize_type(&b.etype));
                if i != j && cfg.allowed_type_pairs.contains(&pair) {
                    options.push((i, j));
                }
            }
        }
        if options.is_empty() {
            continue;
        }
        let sentence = Arc::new(s.clone());
        let picks: Vec<_> = options.choose_multiple(&mut rng, cfg.pairs_per_sentence).copied().collect();
        for (i, j) in picks {
            let id = format!("{}:{i}-{j}", s.id);
            if let Ok(inst) = RelationInstance::new(id, sentence.clone(), mentions[i].clone(), mentions[j].clone(), None) {
                out.push(inst);
            }
        }
    }
    out
}

/// One training pair per instance with a connecting dependency path.
/// Returns the pairs and the number of skipped instances.
pub fn build_pairs(instances: &[RelationInstance]) -> (Vec<TrainingPair>, usize) {
    let built: Vec<Option<TrainingPair>> = instances
        .par_iter()
        .map(|inst| {
            let rule = generate_syntactic_rule(inst, &RuleGenConfig::default()).ok()?;
            let sentence = mark_entities(inst).ok()?;
            Some(TrainingPair {
                rule: rule.to_string(),
                sentence,
                origin: Origin::Sampled,
                type_pair: entity_type_pair(inst),
                subj_first: inst.subj.start < inst.obj.start,
            })
        })
        .collect();
    let skipped = built.iter().filter(|p| p.is_none()).count();
    (built.into_iter().flatten().collect(), skipped)
}

/// Drops exact (rule, sentence) duplicates, then keeps at most
/// `per_pair_cap` pairs per type pair by seeded uniform sampling. Survivors
/// keep their input order.
pub fn dedup_and_subsample(pairs: Vec<TrainingPair>, cfg: &PipelineConfig) -> Vec<TrainingPair> {
    let mut seen = HashSet::new();
    let pairs: Vec<TrainingPair> = pairs
        .into_iter()
        .filter(|p| seen.insert((p.rule.clone(), p.sentence.text.clone())))
        .collect();
    let mut groups: BTreeMap<&(String, String), Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(&p.type_pair).or_default().push(i);
    }
    let mut rng = cfg.rng(2);
    let mut keep = vec![false; pairs.len()];
    for idx in groups.values() {
        if idx.len() <= cfg.per_pair_cap {
            idx.iter().for_each(|&i| keep[i] = true);
        } else {
            for k in rand::seq::index::sample(&mut rng, idx.len(), cfg.per_pair_cap) {
                keep[idx[k]] = true;
            }
        }
    }
    pairs
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Replaces each entity type, with probability `augment_prob`, by a random
/// synonym, identically in the rule and in the sentence marker. Lexicalized
/// rule entities and types outside the table are left alone.
pub fn augment_entity_synonyms(pair: &TrainingPair, cfg: &PipelineConfig, rng: &mut impl Rng) -> TrainingPair {
    let Ok(rule) = pair.rule.parse::<Rule>() else {
        return pair.clone();
    };
    let Ok((tokens, regions)) = pair.sentence.parse() else {
        return pair.clone();
    };
    let (si, oi) = if pair.subj_first { (0, 1) } else { (1, 0) };
    let mut rule_vals = [rule.first_entity().value.clone(), rule.last_entity().value.clone()];
    let mut marks = [regions[si].etype.clone(), regions[oi].etype.clone()];
    let mut changed = false;
    for slot in 0..2 {
        if !rng.random_bool(cfg.augment_prob) {
            continue;
        }
        let current = &marks[slot];
        if normalize_type(&rule_vals[slot]) != normalize_type(current) {
            continue;
        }
        let candidates = cfg.synonym_table.candidates(current);
        if let Some(new) = candidates.choose(rng) {
            rule_vals[slot] = new.to_string();
            marks[slot] = new.to_string();
            changed = true;
        }
    }
    if !changed {
        return pair.clone();
    }
    let Ok(rule) = rule.with_entity_values(&rule_vals[0], &rule_vals[1]) else {
        return pair.clone();
    };
    let span = |r: &crate::corpus::MarkedRegion| (r.start, r.start + r.entity.len());
    let (s, o) = (span(&regions[si]), span(&regions[oi]));
    let Ok(sentence) = MarkedText::from_tokens(&tokens, (s.0, s.1, &marks[0]), (o.0, o.1, &marks[1])) else {
        return pair.clone();
    };
    TrainingPair {
        rule: rule.to_string(),
        sentence,
        ..pair.clone()
    }
}

/// Paraphrases requested for a sentence of `tokens` tokens.
pub fn paraphrase_count(tokens: usize) -> usize {
    match tokens {
        0..=8 => 2,
        9..=15 => 3,
        16..=25 => 4,
        _ => 5,
    }
}

/// Counters from [`paraphrase_expand`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseStats {
    pub requested: usize,
    pub returned: usize,
    pub kept: usize,
    pub missing_entity: usize,
    pub repeated_entity: usize,
    pub unchanged: usize,
    pub errors: usize,
}

impl ParaphraseStats {
    fn add(&mut self, o: &Self) {
        self.requested += o.requested;
        self.returned += o.returned;
        self.kept += o.kept;
        self.missing_entity += o.missing_entity;
        self.repeated_entity += o.repeated_entity;
        self.unchanged += o.unchanged;
        self.errors += o.errors;
    }
}

fn occurrences(hay: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .collect()
}

/// Paraphrases of the pair's sentence that keep each entity exactly once,
/// re-marked and paired with the original rule.
pub fn paraphrase_expand(pair: &TrainingPair, paraphraser: &dyn Paraphraser) -> (Vec<TrainingPair>, ParaphraseStats) {
    let mut stats = ParaphraseStats::default();
    let Ok((tokens, regions)) = pair.sentence.parse() else {
        return (Vec::new(), stats);
    };
    let text = tokens.join(" ");
    let e1 = &regions[0].entity;
    let e2 = &regions[1].entity;
    let n = paraphrase_count(tokens.len());
    stats.requested = n;
    let outs = match paraphraser.paraphrase(&text, &e1.join(" "), &e2.join(" "), n) {
        Ok(o) => o,
        Err(e) => {
            tracing::warn!(error = %e, "paraphrasing failed; keeping the pair unexpanded");
            stats.errors = 1;
            return (Vec::new(), stats);
        }
    };
    stats.returned = outs.len();
    let mut seen = HashSet::from([text.clone()]);
    let mut kept = Vec::new();
    for out in outs {
        let toks = tokenize(&out);
        let (o1, o2) = (occurrences(&toks, e1), occurrences(&toks, e2));
        if o1.is_empty() || o2.is_empty() {
            stats.missing_entity += 1;
            continue;
        }
        if o1.len() > 1 || o2.len() > 1 {
            stats.repeated_entity += 1;
            continue;
        }
        let (s1, s2) = (o1[0], o2[0]);
        let (r1, r2) = ((s1, s1 + e1.len()), (s2, s2 + e2.len()));
        if r1.0 < r2.1 && r2.0 < r1.1 {
            stats.repeated_entity += 1;
            continue;
        }
        if !seen.insert(toks.join(" ")) {
            stats.unchanged += 1;
            continue;
        }
        let Ok(sentence) = MarkedText::from_tokens(
            &toks,
            (r1.0, r1.1, &regions[0].etype),
            (r2.0, r2.1, &regions[1].etype),
        ) else {
            continue;
        };
        // region 0 is the subject iff `subj_first`; it stays first iff s1 < s2
        let subj_first = pair.subj_first == (s1 < s2);
        kept.push(TrainingPair {
            rule: pair.rule.clone(),
            sentence,
            origin: Origin::Paraphrase,
            type_pair: pair.type_pair.clone(),
            subj_first,
        });
    }
    stats.kept = kept.len();
    (kept, stats)
}

/// Per-stage counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub sentences: usize,
    pub sampled: usize,
    pub built: usize,
    pub skipped_no_path: usize,
    pub after_dedup: usize,
    pub after_cap: usize,
    pub augmented: usize,
    pub paraphrase: ParaphraseStats,
    pub output: usize,
    pub per_type_pair: BTreeMap<String, usize>,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pairs: Vec<TrainingPair>,
    pub stats: PipelineStats,
}

/// sample → build → dedup/cap → augment → paraphrase, each stage skippable
/// through the ablation flags.
pub fn run_pipeline(
    corpus: &[AnnotatedSentence],
    cfg: &PipelineConfig,
    paraphraser: Option<&dyn Paraphraser>,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let mut stats = PipelineStats {
        sentences: corpus.len(),
        ..PipelineStats::default()
    };
    let instances = sample_pairs(corpus, cfg);
    stats.sampled = instances.len();
    let (mut pairs, skipped) = build_pairs(&instances);
    stats.built = pairs.len();
    stats.skipped_no_path = skipped;
    if !cfg.ablations.no_preprocess {
        let before = pairs.len();
        pairs = dedup_and_subsample(pairs, &PipelineConfig {
            per_pair_cap: usize::MAX,
            ..cfg.clone()
        });
        stats.after_dedup = pairs.len();
        debug_assert!(stats.after_dedup <= before);
        pairs = dedup_and_subsample(pairs, cfg);
    } else {
        stats.after_dedup = pairs.len();
    }
    stats.after_cap = pairs.len();
    if !cfg.ablations.no_augment && cfg.augment_prob > 0.0 {
        let mut rng = cfg.rng(3);
        pairs = pairs
            .iter()
            .map(|p| {
                let a = augment_entity_synonyms(p, cfg, &mut rng);
                if a != *p {
                    stats.augmented += 1;
                }
                a
            })
            .collect();
    }
    if cfg.paraphrase && !cfg.ablations.no_paraphrase {
        if let Some(para) = paraphraser {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.max_in_flight)
                .build()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let expanded: Vec<(Vec<TrainingPair>, ParaphraseStats)> =
                pool.install(|| pairs.par_iter().map(|p| paraphrase_expand(p, para)).collect());
            let mut out = Vec::with_capacity(pairs.len() * 2);
            for (p, (extra, s)) in pairs.into_iter().zip(expanded) {
                stats.paraphrase.add(&s);
                out.push(p);
                out.extend(extra);
            }
            pairs = out;
        }
    }
    stats.output = pairs.len();
    for p in &pairs {
        *stats
            .per_type_pair
            .entry(format!("{}/{}", p.type_pair.0, p.type_pair.1))
            .or_default() += 1;
    }
    stats.sha256 = dataset_sha256(&pairs);
    Ok(PipelineOutput { pairs, stats })
}

/// Pipeline output over a synthetic corpus of `sentences` sentences, with
/// the template paraphraser, shuffled and cut to at most `pairs` pairs. The
/// corpus, pipeline and shuffle all use `seed`.
pub fn synthetic_dataset(sentences: usize, pairs: usize, seed: u64) -> Result<Vec<TrainingPair>, PipelineError> {
    let corpus = crate::synth::generate_corpus(sentences, seed);
    let cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    let mut out = run_pipeline(&corpus, &cfg, Some(&TemplateParaphraser::new()))?.pairs;
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out.truncate(pairs);
    Ok(out)
}

/// Sampled (never paraphrased) pairs over a fresh synthetic corpus, for
/// held-out retrieval checks.
pub fn synthetic_heldout(sentences: usize, corpus_seed: u64, pipeline_seed: u64) -> Result<Vec<TrainingPair>, PipelineError> {
    let corpus = crate::synth::generate_corpus(sentences, corpus_seed);
    let cfg = PipelineConfig {
        seed: pipeline_seed,
        paraphrase: false,
        ..PipelineConfig::default()
    };
    Ok(run_pipeline(&corpus, &cfg, None)?.pairs)
}

/// JSONL rendering of a dataset.
pub fn serialize_dataset(pairs: &[TrainingPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of [`serialize_dataset`].
pub fn dataset_sha256(pairs: &[TrainingPair]) -> String {
    let digest = Sha256::digest(serialize_dataset(pairs).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_dataset(path: impl AsRef<Path>, pairs: &[TrainingPair]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, serialize_dataset(pairs)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<TrainingPair>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<TrainingPair>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| CorpusError::Json { line: i + 1, source }))
        .collect()
}

/// Splits pairs into (train, held-out) by rule text, so held-out rules are
/// unseen in training. Deterministic in `seed`.
pub fn split_dataset(pairs: &[TrainingPair], heldout_fraction: f64, seed: u64) -> (Vec<TrainingPair>, Vec<TrainingPair>) {
    let mut rules: Vec<&str> = pairs.iter().map(|p| p.rule.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    rules.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (rules.len() as f64 * heldout_fraction).round() as usize;
    let held: HashSet<&str> = rules[..cut].iter().copied().collect();
    pairs.iter().cloned().partition(|p| !held.contains(p.rule.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_buckets() {
        assert_eq!(paraphrase_count(5), 2);
        assert_eq!(paraphrase_count(8), 2);
        assert_eq!(paraphrase_count(9), 3);
        assert_eq!(paraphrase_count(25), 4);
        assert_eq!(paraphrase_count(40), 5);
    }

    #[test]
    fn default_pairs_are_normalized() {
        let cfg = PipelineConfig::default();
        assert!(cfg.allowed_type_pairs.contains(&("per".into(), "org".into())));
        assert!(cfg.allowed_type_pairs.contains(&("org".into(), "country".into())));
        assert!(!cfg.allowed_type_pairs.contains(&("date".into(), "date".into())));
    }
}
