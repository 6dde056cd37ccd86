//! Synthetic data with a known decomposition of the target into a group bias,
//! an image-only component, and a title-conditioned semantic component.
//!
//! Every descriptor word `w` (and its alias) owns a fixed unit direction
//! `v_w` in feature space. For a record with features `x` in group `g`:
//!
//! ```text
//! target = clamp(mid + bias * mu_g + image * <u, x> + semantic * sum_w <v_w, x> / sqrt(|T_g|) + noise)
//! ```
//!
//! Each title also ends in a made-up subject word unique to its group, so a
//! title carries at least the information of a group id.
//!
//! Group identity alone recovers `bias * mu_g`; only the title says which
//! directions carry the semantic term; an image-only model sees `<u, x>` and
//! whatever semantic mass is shared across titles.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::transforms::derangement;
use super::{DataError, Dataset, DatasetHeader, ParaphraseMap, SampleRecord};

const DESCRIPTORS: [(&str, &str); 24] = [
    ("vivid", "bright"),
    ("moody", "somber"),
    ("minimal", "sparse"),
    ("golden", "amber"),
    ("urban", "metropolitan"),
    ("rustic", "pastoral"),
    ("serene", "tranquil"),
    ("dramatic", "striking"),
    ("vintage", "retro"),
    ("abstract", "nonfigurative"),
    ("candid", "unposed"),
    ("misty", "foggy"),
    ("geometric", "angular"),
    ("lush", "verdant"),
    ("nocturnal", "nighttime"),
    ("symmetric", "balanced"),
    ("weathered", "worn"),
    ("playful", "whimsical"),
    ("monochrome", "grayscale"),
    ("reflective", "mirrored"),
    ("textured", "tactile"),
    ("coastal", "seaside"),
    ("frozen", "icy"),
    ("festive", "celebratory"),
];

/// (canonical, alias) descriptor pairs; both words share one latent direction.
pub fn descriptor_pairs() -> &'static [(&'static str, &'static str)] {
    &DESCRIPTORS
}

// Stream ids for the direction generator.
const IMAGE_DIRECTION: u64 = 10_000;
const PERCEPTUAL_DIRECTION: u64 = 10_001;
const GROUP_STREAM: u64 = 1;
const RECORD_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_groups: usize,
    pub samples_per_group: usize,
    pub d_input: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub bias_strength: f64,
    pub semantic_strength: f64,
    pub image_strength: f64,
    pub noise_std: f64,
    /// Seeds the latent directions of descriptor words and the image axes.
    pub title_seed: u64,
    pub words_per_title: usize,
    /// How many descriptor pairs titles draw from (at most 24).
    pub n_descriptors: usize,
    /// Probability that a title word appears in its alias form.
    pub alias_rate: f64,
    /// Share of each group held out for testing.
    pub test_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::ava_default()
    }
}

impl SynthSpec {
    /// 40 challenges x 60 images, with bias, image and semantic components.
    pub fn ava_default() -> Self {
        Self {
            n_groups: 40,
            samples_per_group: 60,
            d_input: 16,
            score_min: 1.0,
            score_max: 10.0,
            bias_strength: 0.4,
            semantic_strength: 0.7,
            image_strength: 0.3,
            noise_std: 0.15,
            title_seed: 0,
            words_per_title: 3,
            n_descriptors: 8,
            alias_rate: 0.0,
            test_fraction: 0.2,
        }
    }

    /// 100 generation prompts x 25 images; alignment depends on the prompt,
    /// perceptual quality on the image alone.
    pub fn agiqa_default() -> Self {
        Self {
            n_groups: 100,
            samples_per_group: 25,
            score_min: 0.0,
            score_max: 5.0,
            bias_strength: 0.0,
            semantic_strength: 0.6,
            image_strength: 0.4,
            noise_std: 0.15,
            alias_rate: 0.5,
            ..Self::ava_default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::DegenerateSpec(m.into()));
        if self.n_groups == 0 || self.samples_per_group == 0 {
            return bad("zero groups or samples");
        }
        if self.d_input == 0 {
            return bad("zero feature dimension");
        }
        if !(self.score_min < self.score_max) {
            return bad("empty score range");
        }
        let strengths = [
            self.bias_strength,
            self.semantic_strength,
            self.image_strength,
            self.noise_std,
        ];
        if strengths.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("strengths must be finite and non-negative");
        }
        if self.n_descriptors == 0 || self.n_descriptors > DESCRIPTORS.len() {
            return bad("n_descriptors must be in 1..=24");
        }
        if self.words_per_title == 0 || self.words_per_title > self.n_descriptors {
            return bad("words_per_title must be in 1..=n_descriptors");
        }
        if !(0.0..=1.0).contains(&self.alias_rate) {
            return bad("alias_rate must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_held_out() == 0 {
            return bad("test_fraction must leave at least one test sample per group");
        }
        if self.test_held_out() >= self.samples_per_group {
            return bad("test_fraction leaves no training samples");
        }
        Ok(())
    }

    pub fn test_held_out(&self) -> usize {
        (self.samples_per_group as f64 * self.test_fraction).round() as usize
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.score_min + self.score_max)
    }

    fn header(&self, has_target2: bool) -> DatasetHeader {
        DatasetHeader {
            version: 1,
            d_input: self.d_input,
            score_min: self.score_min,
            score_max: self.score_max,
            has_target2,
        }
    }

    fn direction(&self, stream: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.title_seed);
        rng.set_stream(stream);
        let v: Vec<f64> = (0..self.d_input).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / norm).collect()
    }

    /// Sum of `<v_w, x>` over descriptor words in `prompt`, scaled by
    /// `1/sqrt(#words)`. Unknown words contribute nothing.
    pub fn semantic_signal(&self, prompt: &str, features: &[f64]) -> f64 {
        let lookup = word_index();
        let words: Vec<usize> = prompt
            .split_whitespace()
            .filter_map(|w| lookup.get(w.to_lowercase().as_str()).copied())
            .collect();
        if words.is_empty() {
            return 0.0;
        }
        let total: f64 = words.iter().map(|&w| dot(&self.direction(w as u64), features)).sum();
        total / (words.len() as f64).sqrt()
    }

    pub fn image_signal(&self, features: &[f64]) -> f64 {
        dot(&self.direction(IMAGE_DIRECTION), features)
    }

    pub fn perceptual_signal(&self, features: &[f64]) -> f64 {
        dot(&self.direction(PERCEPTUAL_DIRECTION), features)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn word_index() -> HashMap<&'static str, usize> {
    DESCRIPTORS
        .iter()
        .enumerate()
        .flat_map(|(i, (w, a))| [(*w, i), (*a, i)])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

struct Group {
    id: String,
    title: String,
    bias: f64,
    word_ids: Vec<usize>,
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Distinct word sets per group, drawn sequentially from one stream.
fn make_groups(spec: &SynthSpec, seed: u64, capitalized: bool) -> Vec<Group> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GROUP_STREAM);
    let mut used: BTreeSet<Vec<usize>> = BTreeSet::new();
    let max_distinct = binomial(spec.n_descriptors, spec.words_per_title);
    (0..spec.n_groups)
        .map(|g| {
            let bias = rng.random_range(-1.0..1.0);
            let mut word_ids;
            loop {
                word_ids = sample(&mut rng, spec.n_descriptors, spec.words_per_title).into_vec();
                let mut key = word_ids.clone();
                key.sort_unstable();
                if used.len() as u128 >= max_distinct || used.insert(key) {
                    break;
                }
            }
            let mut words: Vec<String> = word_ids
                .iter()
                .map(|&w| {
                    let (canon, alias) = DESCRIPTORS[w];
                    let word = if rng.random::<f64>() < spec.alias_rate {
                        alias
                    } else {
                        canon
                    };
                    if capitalized {
                        capitalize(word)
                    } else {
                        word.to_string()
                    }
                })
                .collect();
            let subject = subject_name(g);
            words.push(if capitalized { capitalize(&subject) } else { subject });
            Group {
                id: format!("g{g:03}"),
                title: words.join(" "),
                bias,
                word_ids,
            }
        })
        .collect()
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "te", "vo", "ne", "si", "da", "fu", "pe", "zo", "ba", "gi", "ho", "wu",
];

/// A made-up subject word unique to group `g` ("kaka", "kalo", ...). It
/// names the group without pointing at any latent direction.
fn subject_name(g: usize) -> String {
    let n = SYLLABLES.len();
    let mut name = String::new();
    let mut rest = g;
    for _ in 0..3 {
        name.push_str(SYLLABLES[rest % n]);
        rest /= n;
    }
    name.push_str(&"x".repeat(rest));
    name
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RECORD_STREAM_BASE + index as u64);
    rng
}

fn features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    std * z
}

fn split(spec: &SynthSpec, records: Vec<SampleRecord>, has_target2: bool) -> Result<SplitDataset, DataError> {
    let per = spec.samples_per_group;
    let held = spec.test_held_out();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in records.into_iter().enumerate() {
        if i % per >= per - held {
            test.push(r);
        } else {
            train.push(r);
        }
    }
    Ok(SplitDataset {
        train: Dataset::new(spec.header(has_target2), train)?,
        test: Dataset::new(spec.header(has_target2), test)?,
    })
}

/// Grouped data with challenge-style titles. Every group appears in both
/// splits; the last `test_fraction` of each group is held out.
pub fn generate_ava_like(spec: &SynthSpec, seed: u64) -> Result<SplitDataset, DataError> {
    spec.validate()?;
    let groups = make_groups(spec, seed, true);
    let image_dir = spec.direction(IMAGE_DIRECTION);
    let word_dirs: Vec<Vec<f64>> = (0..spec.n_descriptors).map(|w| spec.direction(w as u64)).collect();
    let mid = spec.midpoint();
    let mut records = Vec::with_capacity(spec.n_groups * spec.samples_per_group);
    for (g, group) in groups.iter().enumerate() {
        let norm = (group.word_ids.len() as f64).sqrt();
        for s in 0..spec.samples_per_group {
            let index = g * spec.samples_per_group + s;
            let mut rng = record_rng(seed, index);
            let x = features(&mut rng, spec.d_input);
            let semantic: f64 = group.word_ids.iter().map(|&w| dot(&word_dirs[w], &x)).sum::<f64>() / norm;
            let raw = mid
                + spec.bias_strength * group.bias
                + spec.image_strength * dot(&image_dir, &x)
                + spec.semantic_strength * semantic
                + gaussian(&mut rng, spec.noise_std);
            records.push(SampleRecord {
                id: format!("{}-{s:03}", group.id),
                image_features: x,
                prompt: group.title.clone(),
                group_id: group.id.clone(),
                group_title: group.title.clone(),
                target: raw.clamp(spec.score_min, spec.score_max),
                target2: None,
            });
        }
    }
    split(spec, records, false)
}

/// Dual-target data: each group is one generation prompt. `target` measures
/// prompt-image alignment (prompt directions against features); `target2`
/// is perceptual quality and ignores the prompt.
pub fn generate_agiqa_like(spec: &SynthSpec, seed: u64) -> Result<SplitDataset, DataError> {
    spec.validate()?;
    let groups = make_groups(spec, seed, false);
    let image_dir = spec.direction(IMAGE_DIRECTION);
    let perceptual_dir = spec.direction(PERCEPTUAL_DIRECTION);
    let word_dirs: Vec<Vec<f64>> = (0..spec.n_descriptors).map(|w| spec.direction(w as u64)).collect();
    let mid = spec.midpoint();
    let mut records = Vec::with_capacity(spec.n_groups * spec.samples_per_group);
    for (g, group) in groups.iter().enumerate() {
        let norm = (group.word_ids.len() as f64).sqrt();
        for s in 0..spec.samples_per_group {
            let index = g * spec.samples_per_group + s;
            let mut rng = record_rng(seed, index);
            let x = features(&mut rng, spec.d_input);
            let semantic: f64 = group.word_ids.iter().map(|&w| dot(&word_dirs[w], &x)).sum::<f64>() / norm;
            let alignment = mid
                + spec.bias_strength * group.bias
                + spec.image_strength * dot(&image_dir, &x)
                + spec.semantic_strength * semantic
                + gaussian(&mut rng, spec.noise_std);
            let perceptual = mid
                + (spec.image_strength + spec.semantic_strength) * dot(&perceptual_dir, &x)
                + gaussian(&mut rng, spec.noise_std);
            records.push(SampleRecord {
                id: format!("{}-{s:03}", group.id),
                image_features: x,
                prompt: group.title.clone(),
                group_id: group.id.clone(),
                group_title: group.title.clone(),
                target: alignment.clamp(spec.score_min, spec.score_max),
                target2: Some(perceptual.clamp(spec.score_min, spec.score_max)),
            });
        }
    }
    split(spec, records, true)
}

fn swap_word(word: &str) -> Option<String> {
    let lower = word.to_lowercase();
    let partner = DESCRIPTORS.iter().find_map(|(w, a)| {
        if *w == lower {
            Some(*a)
        } else if *a == lower {
            Some(*w)
        } else {
            None
        }
    })?;
    let capital = word.chars().next().is_some_and(char::is_uppercase);
    Some(if capital {
        capitalize(partner)
    } else {
        partner.to_string()
    })
}

/// Maps each distinct prompt to the same prompt with every descriptor word
/// swapped for its partner (canonical to alias and back).
pub fn synonym_map(ds: &Dataset) -> ParaphraseMap {
    ds.prompts()
        .map(|p| {
            let swapped: Vec<String> = p
                .split(' ')
                .map(|w| swap_word(w).unwrap_or_else(|| w.to_string()))
                .collect();
            (p.to_string(), swapped.join(" "))
        })
        .collect()
}

/// Maps each distinct prompt to a different, randomly chosen prompt of the
/// same dataset.
pub fn adversarial_map(ds: &Dataset, seed: u64) -> Result<ParaphraseMap, DataError> {
    let distinct: Vec<&str> = ds.prompts().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = derangement(distinct.len(), &mut rng)?;
    Ok(distinct
        .iter()
        .enumerate()
        .map(|(i, p)| (p.to_string(), distinct[perm[i]].to_string()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_paraphrase_map, records_to_string, shuffle_prompts, shuffle_titles};
    use crate::metrics::plcc;

    fn small() -> SynthSpec {
        SynthSpec {
            n_groups: 10,
            samples_per_group: 20,
            ..SynthSpec::ava_default()
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        let zero = SynthSpec { n_groups: 0, ..small() };
        assert!(matches!(generate_ava_like(&zero, 1), Err(DataError::DegenerateSpec(_))));
        let zero = SynthSpec {
            samples_per_group: 0,
            ..small()
        };
        assert!(matches!(
            generate_agiqa_like(&zero, 1),
            Err(DataError::DegenerateSpec(_))
        ));
        let neg = SynthSpec {
            noise_std: -1.0,
            ..small()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn subject_names_are_unique_and_not_descriptors() {
        let descriptors: BTreeSet<&str> = DESCRIPTORS.iter().flat_map(|&(a, b)| [a, b]).collect();
        let names: BTreeSet<String> = (0..10_000).map(subject_name).collect();
        assert_eq!(names.len(), 10_000);
        assert!(names.iter().all(|n| !descriptors.contains(n.as_str())));
    }

    #[test]
    fn stratified_split_and_titles() {
        let s = small();
        let d = generate_ava_like(&s, 3).unwrap();
        assert_eq!(d.train.len(), 160);
        assert_eq!(d.test.len(), 40);
        assert_eq!(d.train.group_order(), d.test.group_order());
        let titles: BTreeSet<&str> = d.train.records.iter().map(|r| r.group_title.as_str()).collect();
        assert_eq!(titles.len(), 10);
        for r in &d.train.records {
            assert_eq!(r.prompt, r.group_title);
            assert_eq!(r.prompt.split(' ').count(), 4);
        }
    }

    #[test]
    fn generation_is_pure() {
        let s = SynthSpec::agiqa_default();
        let a = generate_agiqa_like(&s, 11).unwrap();
        let b = generate_agiqa_like(&s, 11).unwrap();
        assert_eq!(a.train.len() + a.test.len(), 2500);
        assert_eq!(records_to_string(&a.train), records_to_string(&b.train));
        assert_eq!(records_to_string(&a.test), records_to_string(&b.test));
        let c = generate_agiqa_like(&s, 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn three_thousand_records_regenerate_bit_identically() {
        let s = SynthSpec {
            n_groups: 120,
            samples_per_group: 25,
            ..SynthSpec::agiqa_default()
        };
        let a = generate_agiqa_like(&s, 99).unwrap();
        let b = generate_agiqa_like(&s, 99).unwrap();
        assert_eq!(a.train.len() + a.test.len(), 3000);
        let bits = |d: &Dataset| -> Vec<u64> {
            d.records
                .iter()
                .flat_map(|r| r.image_features.iter().chain([&r.target, r.target2.as_ref().unwrap()]))
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&a.train), bits(&b.train));
        assert_eq!(bits(&a.test), bits(&b.test));
    }

    /// One-way ANOVA F statistic of targets grouped by group id.
    fn group_f_statistic(ds: &Dataset) -> f64 {
        let mut by_group: HashMap<&str, Vec<f64>> = HashMap::new();
        for r in &ds.records {
            by_group.entry(&r.group_id).or_default().push(r.target);
        }
        let n = ds.len() as f64;
        let k = by_group.len() as f64;
        let grand = ds.records.iter().map(|r| r.target).sum::<f64>() / n;
        let (mut between, mut within) = (0.0, 0.0);
        for values in by_group.values() {
            let m = values.iter().sum::<f64>() / values.len() as f64;
            between += values.len() as f64 * (m - grand).powi(2);
            within += values.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        }
        (between / (k - 1.0)) / (within / (n - k))
    }

    #[test]
    fn no_bias_no_semantics_means_flat_group_means() {
        let s = SynthSpec {
            bias_strength: 0.0,
            semantic_strength: 0.0,
            ..SynthSpec::ava_default()
        };
        // Under the null the F statistic has mean ~1 and sd ~0.23 per draw.
        let seeds = 20;
        let mean_f = (0..seeds)
            .map(|seed| group_f_statistic(&generate_ava_like(&s, seed).unwrap().train))
            .sum::<f64>()
            / seeds as f64;
        assert!((0.85..1.15).contains(&mean_f), "mean F = {mean_f}");
        let strong = SynthSpec {
            bias_strength: 1.0,
            ..SynthSpec::ava_default()
        };
        let biased = generate_ava_like(&strong, 5).unwrap();
        assert!(group_f_statistic(&biased.train) > 5.0);
    }

    #[test]
    fn semantic_signal_tracks_true_titles_only() {
        let s = SynthSpec::ava_default();
        let d = generate_ava_like(&s, 7).unwrap().train;
        let residual: Vec<f64> = d
            .records
            .iter()
            .map(|r| r.target - s.image_strength * s.image_signal(&r.image_features))
            .collect();
        let signal = |ds: &Dataset| -> Vec<f64> {
            ds.records
                .iter()
                .map(|r| s.semantic_signal(&r.group_title, &r.image_features))
                .collect()
        };
        let true_corr = plcc(&signal(&d), &residual).unwrap();
        let shuffled = shuffle_titles(&d, 1).unwrap();
        let shuffled_corr = plcc(&signal(&shuffled), &residual).unwrap();
        assert!(true_corr > 0.5, "true {true_corr}");
        assert!(shuffled_corr.abs() < 0.25, "shuffled {shuffled_corr}");
        assert!(true_corr - shuffled_corr > 0.4);
    }

    #[test]
    fn perceptual_target_ignores_prompts() {
        let s = SynthSpec::agiqa_default();
        let d = generate_agiqa_like(&s, 2).unwrap().train;
        let shuffled = shuffle_prompts(&d, 4).unwrap();
        let perceptual = |ds: &Dataset| ds.targets(crate::data::TargetSelect::Secondary).unwrap();
        assert_eq!(perceptual(&d), perceptual(&shuffled));
        // Shuffling breaks the link except through descriptor words a random
        // prompt happens to share with the original.
        let match_term = |ds: &Dataset| -> Vec<f64> {
            ds.records
                .iter()
                .map(|r| s.semantic_signal(&r.prompt, &r.image_features))
                .collect()
        };
        let t = d.targets(crate::data::TargetSelect::Primary).unwrap();
        let true_corr = plcc(&match_term(&d), &t).unwrap();
        let shuffled_corr = plcc(&match_term(&shuffled), &t).unwrap();
        assert!(true_corr > 0.5, "true {true_corr}");
        assert!(shuffled_corr.abs() < 0.35, "shuffled {shuffled_corr}");
        assert!(true_corr - shuffled_corr > 0.45);
    }

    #[test]
    fn synonym_map_swaps_descriptors_and_keeps_semantics() {
        let s = SynthSpec::agiqa_default();
        let d = generate_agiqa_like(&s, 3).unwrap().train;
        let map = synonym_map(&d);
        let para = apply_paraphrase_map(&d, &map).unwrap();
        for (a, b) in d.records.iter().zip(&para.records) {
            assert_ne!(a.prompt, b.prompt);
            let sa = s.semantic_signal(&a.prompt, &a.image_features);
            let sb = s.semantic_signal(&b.prompt, &b.image_features);
            assert_eq!(sa, sb);
        }
        assert_eq!(swap_word("Vivid").as_deref(), Some("Bright"));
        assert_eq!(swap_word("icy").as_deref(), Some("frozen"));
        assert_eq!(swap_word("photo"), None);
    }

    #[test]
    fn adversarial_map_changes_every_prompt() {
        let d = generate_ava_like(&small(), 3).unwrap().train;
        let map = adversarial_map(&d, 9).unwrap();
        assert_eq!(map.len(), 10);
        for (k, v) in &map {
            assert_ne!(k, v);
        }
    }
}
