use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

/// Original prompt text to replacement text.
pub type ParaphraseMap = BTreeMap<String, String>;

/// How prompts are rewritten before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptTransform {
    Identity,
    Strip,
    /// Titles permuted across groups (no group keeps its own).
    ShuffleTitles {
        seed: u64,
    },
    /// Prompts permuted across records (no record keeps its own).
    ShufflePrompts {
        seed: u64,
    },
    SubstituteGroupIds,
    Paraphrase(ParaphraseMap),
}

impl PromptTransform {
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        match self {
            PromptTransform::Identity => Ok(ds.clone()),
            PromptTransform::Strip => Ok(strip(ds)),
            PromptTransform::ShuffleTitles { seed } => shuffle_titles(ds, *seed),
            PromptTransform::ShufflePrompts { seed } => shuffle_prompts(ds, *seed),
            PromptTransform::SubstituteGroupIds => Ok(substitute_group_ids(ds)),
            PromptTransform::Paraphrase(map) => apply_paraphrase_map(ds, map),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PromptTransform::Identity => "identity",
            PromptTransform::Strip => "strip",
            PromptTransform::ShuffleTitles { .. } => "shuffle_titles",
            PromptTransform::ShufflePrompts { .. } => "shuffle_prompts",
            PromptTransform::SubstituteGroupIds => "group_ids",
            PromptTransform::Paraphrase(_) => "paraphrase",
        }
    }
}

/// Uniformly random permutation of `0..n` with no fixed points (rejection
/// sampling; the acceptance rate tends to 1/e).
pub fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, DataError> {
    if n < 2 {
        return Err(DataError::ImpossibleDerangement(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

pub fn strip(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for r in &mut out.records {
        r.prompt.clear();
    }
    out
}

/// Group-level title derangement. The permutation is drawn over group ids in
/// sorted order, so it depends only on the seed and the set of groups.
pub fn shuffle_titles(ds: &Dataset, seed: u64) -> Result<Dataset, DataError> {
    let titles: BTreeMap<&str, &str> = ds
        .records
        .iter()
        .map(|r| (r.group_id.as_str(), r.group_title.as_str()))
        .collect();
    let ids: Vec<&str> = titles.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = derangement(ids.len(), &mut rng)?;
    let reassigned: HashMap<&str, String> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, titles[ids[perm[i]]].to_string()))
        .collect();
    let mut out = ds.clone();
    for r in &mut out.records {
        let title = &reassigned[r.group_id.as_str()];
        r.group_title = title.clone();
        r.prompt = title.clone();
    }
    Ok(out)
}

/// Record-level prompt derangement.
pub fn shuffle_prompts(ds: &Dataset, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = derangement(ds.len(), &mut rng)?;
    let mut out = ds.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        r.prompt = ds.records[perm[i]].prompt.clone();
    }
    Ok(out)
}

/// Prompt becomes the decimal index of the record's group, numbered densely
/// in first-seen order.
pub fn substitute_group_ids(ds: &Dataset) -> Dataset {
    let index: HashMap<&str, usize> = ds.group_order().into_iter().enumerate().map(|(i, g)| (g, i)).collect();
    let mut out = ds.clone();
    for r in &mut out.records {
        r.prompt = index[r.group_id.as_str()].to_string();
    }
    out
}

pub fn apply_paraphrase_map(ds: &Dataset, map: &ParaphraseMap) -> Result<Dataset, DataError> {
    let missing: BTreeSet<&str> = ds.prompts().filter(|p| !map.contains_key(*p)).collect();
    if !missing.is_empty() {
        return Err(DataError::MissingParaphrase(
            missing.into_iter().map(String::from).collect(),
        ));
    }
    let mut out = ds.clone();
    for r in &mut out.records {
        r.prompt = map[&r.prompt].clone();
    }
    Ok(out)
}
