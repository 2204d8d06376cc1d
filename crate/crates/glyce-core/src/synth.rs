//! Synthetic task corpora over a glyph atlas.
//!
//! Characters are partitioned into "motif families" by a purely visual
//! statistic: which quadrant of the script-0 bitmap holds the most ink.
//! Characters whose top two quadrants are too close are left out, so
//! family membership is always visually crisp. Every task derives its
//! gold labels from families:
//!
//! - tagging: sentences are concatenations of short single-family runs,
//!   adjacent runs from different families; BMES labels mark run bounds
//! - classification: the class is the family that dominates the document
//! - pairs: label 1 iff both sentences share the same dominant family
//!
//! Each generator is a pure function of (atlas, sizes, seed), and each
//! task ships a rule oracle that recovers the gold labels from glyph
//! statistics alone, proving the label signal is visual by construction.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::atlas::GlyphAtlas;
use crate::error::{GlyceError, Result};
use crate::math::ceil;
use crate::metrics::{BMES_B, BMES_E, BMES_M, BMES_S};
use crate::rng::GlyceRng;

/// Minimum lead of the best quadrant's ink share over the runner-up for
/// a character to join a family.
pub const FAMILY_MARGIN: f64 = 0.05;

const STREAM_TAGGING: u64 = 101;
const STREAM_CLASSIFICATION: u64 = 102;
const STREAM_PAIR: u64 = 103;

/// Visual family assignment per character; `None` marks characters too
/// ambiguous to use.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMap {
    pub n_families: usize,
    assignment: Vec<Option<usize>>,
    members: Vec<Vec<u32>>,
}

impl FamilyMap {
    pub fn of(&self, char_id: u32) -> Option<usize> {
        self.assignment.get(char_id as usize).copied().flatten()
    }

    pub fn members(&self, family: usize) -> &[u32] {
        &self.members[family]
    }
}

/// Ink share of each quadrant of one bitmap.
fn quadrant_shares(plane: &[f64], d: usize) -> [f64; 4] {
    let mut q = [0.0; 4];
    let half = d / 2;
    for r in 0..d {
        for c in 0..d {
            let idx = usize::from(r >= half) * 2 + usize::from(c >= half);
            q[idx] += plane[r * d + c];
        }
    }
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        for v in &mut q {
            *v /= total;
        }
    }
    q
}

/// Assigns characters to families by dominant ink quadrant. Characters
/// whose dominant quadrant is outside `0..n_families` or whose lead is
/// below `margin` stay unassigned.
pub fn family_partition(atlas: &GlyphAtlas, n_families: usize, margin: f64) -> Result<FamilyMap> {
    if !(2..=4).contains(&n_families) {
        return Err(GlyceError::Config(format!(
            "family partition: {n_families} families requested, supported range is 2..=4 (one per bitmap quadrant)"
        )));
    }
    let d = atlas.d_font() as usize;
    let mut assignment = Vec::with_capacity(atlas.n_chars() as usize);
    let mut members = alloc::vec![Vec::new(); n_families];
    for ch in 0..atlas.n_chars() {
        let q = quadrant_shares(atlas.glyph(ch, 0)?, d);
        let mut best = 0;
        for i in 1..4 {
            if q[i] > q[best] {
                best = i;
            }
        }
        let second = (0..4).filter(|&i| i != best).map(|i| q[i]).fold(f64::NEG_INFINITY, f64::max);
        if best < n_families && q[best] - second >= margin {
            assignment.push(Some(best));
            members[best].push(ch);
        } else {
            assignment.push(None);
        }
    }
    for (f, m) in members.iter().enumerate() {
        if m.len() < 4 {
            return Err(GlyceError::Data(format!(
                "family partition: family {f} has only {} usable characters; enlarge the atlas",
                m.len()
            )));
        }
    }
    Ok(FamilyMap { n_families, assignment, members })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Tagging,
    Classification,
    Pair,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Tagging => "tagging",
            TaskKind::Classification => "classification",
            TaskKind::Pair => "pair",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "tagging" => Ok(TaskKind::Tagging),
            "classification" => Ok(TaskKind::Classification),
            "pair" => Ok(TaskKind::Pair),
            other => Err(GlyceError::Config(format!(
                "unknown task '{other}' (want tagging | classification | pair)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub chars: Vec<u32>,
    /// Second sentence for pair tasks.
    pub chars2: Option<Vec<u32>>,
    /// Per-character labels for tagging.
    pub tags: Option<Vec<usize>>,
    /// Class id for classification and pair tasks.
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub task: TaskKind,
    pub items: Vec<CorpusItem>,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Families for tagging/pair, classes for classification.
    pub n_families: usize,
    /// Tag identifying the generation recipe, compared when reports mix
    /// runs.
    pub dataset_tag: String,
}

impl LabeledCorpus {
    /// Every character id appearing anywhere in the corpus.
    pub fn used_chars(&self) -> BTreeSet<u32> {
        let mut set = BTreeSet::new();
        for item in &self.items {
            set.extend(item.chars.iter().copied());
            if let Some(s2) = &item.chars2 {
                set.extend(s2.iter().copied());
            }
        }
        set
    }

    pub fn split_items(&self, split: &[usize]) -> Vec<&CorpusItem> {
        split.iter().map(|&i| &self.items[i]).collect()
    }

    fn check_split_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in self.train.iter().chain(&self.dev).chain(&self.test) {
            if i >= self.items.len() || !seen.insert(i) {
                return Err(GlyceError::Contract(format!(
                    "corpus splits overlap or overflow at item {i}"
                )));
            }
        }
        Ok(())
    }
}

/// 80/10/10 split over a shuffled index list.
fn make_splits(n: usize, rng: &mut GlyceRng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_dev = (n / 10).max(1);
    let n_test = (n / 10).max(1);
    let n_train = n - n_dev - n_test;
    let train = idx[0..n_train].to_vec();
    let dev = idx[n_train..n_train + n_dev].to_vec();
    let test = idx[n_train + n_dev..].to_vec();
    (train, dev, test)
}

/// BMES labels of the maximal equal-family blocks of a sentence.
pub fn rule_tags(families: &FamilyMap, chars: &[u32]) -> Result<Vec<usize>> {
    let fam: Vec<usize> = chars
        .iter()
        .map(|&c| {
            families.of(c).ok_or_else(|| {
                GlyceError::Data(format!("character {c} belongs to no family"))
            })
        })
        .collect::<Result<_>>()?;
    let mut tags = Vec::with_capacity(chars.len());
    let mut i = 0;
    while i < fam.len() {
        let mut j = i + 1;
        while j < fam.len() && fam[j] == fam[i] {
            j += 1;
        }
        if j - i == 1 {
            tags.push(BMES_S);
        } else {
            tags.push(BMES_B);
            for _ in i + 1..j - 1 {
                tags.push(BMES_M);
            }
            tags.push(BMES_E);
        }
        i = j;
    }
    Ok(tags)
}

/// Dominant family of a sentence; dominance is strict by construction in
/// generated data, ties break toward the lower family id.
pub fn rule_dominant_family(families: &FamilyMap, chars: &[u32]) -> Result<usize> {
    let mut counts = alloc::vec![0usize; families.n_families];
    for &c in chars {
        let f = families
            .of(c)
            .ok_or_else(|| GlyceError::Data(format!("character {c} belongs to no family")))?;
        counts[f] += 1;
    }
    let mut best = 0;
    for f in 1..counts.len() {
        if counts[f] > counts[best] {
            best = f;
        }
    }
    Ok(best)
}

/// 1 iff both sentences share the same dominant family.
pub fn rule_pair_label(families: &FamilyMap, s1: &[u32], s2: &[u32]) -> Result<usize> {
    Ok(usize::from(rule_dominant_family(families, s1)? == rule_dominant_family(families, s2)?))
}

fn pick(rng: &mut GlyceRng, pool: &[u32]) -> u32 {
    pool[rng.below(pool.len())]
}

/// Sentence with a strict majority of `dominant` chars. `share` of the
/// length (rounded up) comes from the dominant family, the rest from the
/// other families, then positions are shuffled.
fn dominated_sentence(
    rng: &mut GlyceRng,
    families: &FamilyMap,
    dominant: usize,
    len: usize,
    share: f64,
) -> Vec<u32> {
    let n_dom = (ceil(len as f64 * share) as usize).clamp(len / 2 + 1, len);
    let mut chars = Vec::with_capacity(len);
    for _ in 0..n_dom {
        chars.push(pick(rng, families.members(dominant)));
    }
    let others: Vec<usize> =
        (0..families.n_families).filter(|&f| f != dominant).collect();
    for _ in n_dom..len {
        let f = others[rng.below(others.len())];
        chars.push(pick(rng, families.members(f)));
    }
    rng.shuffle(&mut chars);
    chars
}

pub const TAGGING_FAMILIES: usize = 4;

/// Sentences of length 10..=30 built from single-family runs of length
/// 1..=4; adjacent runs always change family.
pub fn gen_tagging_corpus(
    atlas: &GlyphAtlas,
    n_sentences: usize,
    seed: u64,
) -> Result<LabeledCorpus> {
    if n_sentences < 10 {
        return Err(GlyceError::Config(format!(
            "tagging corpus: need at least 10 sentences, got {n_sentences}"
        )));
    }
    let families = family_partition(atlas, TAGGING_FAMILIES, FAMILY_MARGIN)?;
    let mut rng = GlyceRng::seed_from(seed, STREAM_TAGGING);
    let mut items = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let target = rng.range_inclusive(10, 30);
        let mut chars: Vec<u32> = Vec::with_capacity(target);
        let mut prev_family = usize::MAX;
        while chars.len() < target {
            let mut f = rng.below(families.n_families);
            if f == prev_family {
                f = (f + 1 + rng.below(families.n_families - 1)) % families.n_families;
            }
            let run = rng.range_inclusive(1, 4).min(target - chars.len());
            for _ in 0..run {
                chars.push(pick(&mut rng, families.members(f)));
            }
            prev_family = f;
        }
        let tags = rule_tags(&families, &chars)?;
        items.push(CorpusItem { chars, chars2: None, tags: Some(tags), class: None });
    }
    let (train, dev, test) = make_splits(items.len(), &mut rng);
    let corpus = LabeledCorpus {
        task: TaskKind::Tagging,
        items,
        train,
        dev,
        test,
        seed,
        n_families: TAGGING_FAMILIES,
        dataset_tag: format!("tagging-n{n_sentences}-s{seed}"),
    };
    corpus.check_split_invariants()?;
    Ok(corpus)
}

/// Documents of length 8..=20; classes cycle round-robin so priors stay
/// balanced; 60% of each document comes from the class family.
pub fn gen_classification_corpus(
    atlas: &GlyphAtlas,
    n_docs: usize,
    n_classes: usize,
    seed: u64,
) -> Result<LabeledCorpus> {
    if n_docs < n_classes * 2 {
        return Err(GlyceError::Config(format!(
            "classification corpus: {n_docs} docs cannot cover {n_classes} classes"
        )));
    }
    let families = family_partition(atlas, n_classes, FAMILY_MARGIN)?;
    let mut rng = GlyceRng::seed_from(seed, STREAM_CLASSIFICATION);
    let mut items = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let class = i % n_classes;
        let len = rng.range_inclusive(8, 20);
        let chars = dominated_sentence(&mut rng, &families, class, len, 0.6);
        debug_assert_eq!(rule_dominant_family(&families, &chars)?, class);
        items.push(CorpusItem { chars, chars2: None, tags: None, class: Some(class) });
    }
    let (train, dev, test) = make_splits(items.len(), &mut rng);
    let corpus = LabeledCorpus {
        task: TaskKind::Classification,
        items,
        train,
        dev,
        test,
        seed,
        n_families: n_classes,
        dataset_tag: format!("classification-n{n_docs}-c{n_classes}-s{seed}"),
    };
    corpus.check_split_invariants()?;
    Ok(corpus)
}

pub const PAIR_FAMILIES: usize = 4;

/// Sentence pairs of length 5..=10 per side; labels alternate so the
/// positive/negative balance is exact to within one item.
pub fn gen_pair_corpus(atlas: &GlyphAtlas, n_pairs: usize, seed: u64) -> Result<LabeledCorpus> {
    if n_pairs < 10 {
        return Err(GlyceError::Config(format!(
            "pair corpus: need at least 10 pairs, got {n_pairs}"
        )));
    }
    let families = family_partition(atlas, PAIR_FAMILIES, FAMILY_MARGIN)?;
    let mut rng = GlyceRng::seed_from(seed, STREAM_PAIR);
    let mut items = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let positive = i % 2 == 0;
        let f1 = rng.below(families.n_families);
        let f2 = if positive {
            f1
        } else {
            (f1 + 1 + rng.below(families.n_families - 1)) % families.n_families
        };
        let l1 = rng.range_inclusive(5, 10);
        let l2 = rng.range_inclusive(5, 10);
        let s1 = dominated_sentence(&mut rng, &families, f1, l1, 0.7);
        let s2 = dominated_sentence(&mut rng, &families, f2, l2, 0.7);
        debug_assert_eq!(rule_pair_label(&families, &s1, &s2)?, usize::from(positive));
        items.push(CorpusItem {
            chars: s1,
            chars2: Some(s2),
            tags: None,
            class: Some(usize::from(positive)),
        });
    }
    let (train, dev, test) = make_splits(items.len(), &mut rng);
    let corpus = LabeledCorpus {
        task: TaskKind::Pair,
        items,
        train,
        dev,
        test,
        seed,
        n_families: PAIR_FAMILIES,
        dataset_tag: format!("pair-n{n_pairs}-s{seed}"),
    };
    corpus.check_split_invariants()?;
    Ok(corpus)
}

/// Most frequent gold label per character over the given items, the
/// frequency baseline for tagging. Unseen characters fall back to S.
pub fn majority_tagger(items: &[&CorpusItem], n_chars: u32) -> Vec<usize> {
    let mut counts = alloc::vec![[0usize; 4]; n_chars as usize];
    for item in items {
        let tags = item.tags.as_ref().expect("tagging item");
        for (&c, &t) in item.chars.iter().zip(tags) {
            counts[c as usize][t] += 1;
        }
    }
    counts
        .iter()
        .map(|c| {
            let mut best = BMES_S;
            let mut best_n = 0;
            for (t, &n) in c.iter().enumerate() {
                if n > best_n {
                    best_n = n;
                    best = t;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{tagging_f1, Scheme, SpanCounts};

    fn atlas() -> GlyphAtlas {
        GlyphAtlas::generate(100, 2, 12, 7).unwrap()
    }

    #[test]
    fn family_partition_is_populated_and_crisp() {
        let a = atlas();
        let fams = family_partition(&a, 4, FAMILY_MARGIN).unwrap();
        let mut assigned = 0;
        for f in 0..4 {
            assert!(fams.members(f).len() >= 4, "family {f} too small");
            assigned += fams.members(f).len();
        }
        assert!(assigned >= 30, "only {assigned} of 100 chars usable");
        for f in 0..4 {
            for &c in fams.members(f) {
                assert_eq!(fams.of(c), Some(f));
                let q = quadrant_shares(a.glyph(c, 0).unwrap(), 12);
                let best = (0..4).max_by(|&x, &y| q[x].partial_cmp(&q[y]).unwrap()).unwrap();
                assert_eq!(best, f);
            }
        }
        assert!(family_partition(&a, 5, FAMILY_MARGIN).is_err());
        assert!(family_partition(&a, 1, FAMILY_MARGIN).is_err());
    }

    #[test]
    fn tagging_corpus_is_deterministic_and_well_formed() {
        let a = atlas();
        let c1 = gen_tagging_corpus(&a, 50, 3).unwrap();
        let c2 = gen_tagging_corpus(&a, 50, 3).unwrap();
        assert_eq!(c1, c2);
        let c3 = gen_tagging_corpus(&a, 50, 4).unwrap();
        assert_ne!(c1, c3);

        for item in &c1.items {
            assert!((10..=30).contains(&item.chars.len()));
            let tags = item.tags.as_ref().unwrap();
            assert_eq!(tags.len(), item.chars.len());
            // Well-formed BMES: decoding must consume it without repairs,
            // checked by re-encoding the decoded spans.
            let spans = Scheme::Bmes.decode_spans(tags).unwrap();
            let mut rebuilt = Vec::new();
            for s in &spans {
                assert!(s.end - s.start <= 4, "run longer than 4");
                if s.end - s.start == 1 {
                    rebuilt.push(BMES_S);
                } else {
                    rebuilt.push(BMES_B);
                    rebuilt.extend(core::iter::repeat(BMES_M).take(s.end - s.start - 2));
                    rebuilt.push(BMES_E);
                }
            }
            assert_eq!(&rebuilt, tags);
        }
        assert_eq!(
            c1.train.len() + c1.dev.len() + c1.test.len(),
            c1.items.len()
        );
    }

    #[test]
    fn tagging_rule_oracle_is_perfect_and_majority_is_not() {
        let a = atlas();
        let corpus = gen_tagging_corpus(&a, 120, 9).unwrap();
        let fams = family_partition(&a, TAGGING_FAMILIES, FAMILY_MARGIN).unwrap();

        let mut rule = SpanCounts::default();
        for item in &corpus.items {
            let pred = rule_tags(&fams, &item.chars).unwrap();
            rule.update(&pred, item.tags.as_ref().unwrap(), Scheme::Bmes).unwrap();
        }
        assert_eq!(rule.f1().f1, 1.0, "generative rule must recover gold exactly");

        let train_items = corpus.split_items(&corpus.train);
        let table = majority_tagger(&train_items, a.n_chars());
        let mut maj = SpanCounts::default();
        for item in corpus.split_items(&corpus.test) {
            let pred: Vec<usize> = item.chars.iter().map(|&c| table[c as usize]).collect();
            maj.update(&pred, item.tags.as_ref().unwrap(), Scheme::Bmes).unwrap();
        }
        assert!(
            maj.f1().f1 < 1.0,
            "char-frequency baseline should not solve the task (got {})",
            maj.f1().f1
        );
    }

    #[test]
    fn classification_corpus_priors_and_oracle() {
        let a = atlas();
        let corpus = gen_classification_corpus(&a, 200, 4, 5).unwrap();
        assert_eq!(corpus, gen_classification_corpus(&a, 200, 4, 5).unwrap());
        let fams = family_partition(&a, 4, FAMILY_MARGIN).unwrap();
        let mut counts = [0usize; 4];
        for item in &corpus.items {
            let class = item.class.unwrap();
            counts[class] += 1;
            assert_eq!(rule_dominant_family(&fams, &item.chars).unwrap(), class);
            assert!((8..=20).contains(&item.chars.len()));
        }
        for &c in &counts {
            let frac = c as f64 / 200.0;
            assert!((frac - 0.25).abs() <= 0.05, "class prior {frac} off uniform");
        }
    }

    #[test]
    fn pair_corpus_balance_symmetry_and_oracle() {
        let a = atlas();
        let corpus = gen_pair_corpus(&a, 100, 2).unwrap();
        assert_eq!(corpus, gen_pair_corpus(&a, 100, 2).unwrap());
        let fams = family_partition(&a, PAIR_FAMILIES, FAMILY_MARGIN).unwrap();
        let mut positives = 0;
        for item in &corpus.items {
            let s1 = &item.chars;
            let s2 = item.chars2.as_ref().unwrap();
            let label = item.class.unwrap();
            positives += label;
            assert_eq!(rule_pair_label(&fams, s1, s2).unwrap(), label);
            assert_eq!(rule_pair_label(&fams, s2, s1).unwrap(), label, "rule not symmetric");
        }
        let frac = positives as f64 / 100.0;
        assert!((frac - 0.5).abs() <= 0.05, "balance {frac}");
    }

    #[test]
    fn corpus_chars_all_exist_in_atlas() {
        let a = atlas();
        for corpus in [
            gen_tagging_corpus(&a, 30, 1).unwrap(),
            gen_classification_corpus(&a, 30, 3, 1).unwrap(),
            gen_pair_corpus(&a, 30, 1).unwrap(),
        ] {
            for &c in corpus.used_chars().iter() {
                assert!(c < a.n_chars());
            }
            assert!(!corpus.dataset_tag.is_empty());
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let a = atlas();
        let corpus = gen_tagging_corpus(&a, 57, 8).unwrap();
        let mut seen = BTreeSet::new();
        for &i in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            assert!(seen.insert(i), "index {i} duplicated across splits");
        }
        assert_eq!(seen.len(), 57);
        assert!(corpus.dev.len() >= 5);
        assert!(corpus.test.len() >= 5);
    }

    #[test]
    fn tagging_f1_against_shifted_labels_is_below_one() {
        // Safety net for the metric wiring: a rotation of gold labels
        // scores below perfect on any nontrivial corpus.
        let a = atlas();
        let corpus = gen_tagging_corpus(&a, 20, 6).unwrap();
        let item = &corpus.items[0];
        let gold = item.tags.as_ref().unwrap();
        let mut shifted = gold.clone();
        shifted.rotate_left(1);
        let f1 = tagging_f1(&shifted, gold, Scheme::Bmes).unwrap();
        assert!(f1.f1 < 1.0);
    }
}
