//! Report curation: part-level parsing with redaction, slide association
//! categories, clean/noisy pair sets, and deterministic case/site splits.
//!
//! A case's diagnostic text is split into parts by part indicators
//! ("a.", "b.", "part 1:" ...). Each part is a `label : finding` sentence.
//! Labels and findings are lowercased and whitespace-normalized, and a rule
//! file of regular expressions strips content that cannot be inferred from
//! the image alone (laterality, anatomic location, sizes).

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

use crate::util::seeded_rng;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no part indicator matched in case {0}")]
    NoPartIndicators(String),
    #[error("malformed part {part_index} in case {case_id}: {reason}")]
    MalformedPart {
        case_id: String,
        part_index: usize,
        reason: String,
    },
    #[error("slide list is empty")]
    EmptySlideList,
    #[error("slide {0} has no matching part")]
    OrphanSlide(String),
    #[error("study {0} has no sites")]
    EmptyStudy(String),
    #[error("bad rule file line {line}: {reason}")]
    BadRuleFile { line: usize, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDocument {
    pub case_id: String,
    pub raw_text: String,
}

/// One span removed from a part text by a redaction rule. Offsets index the
/// normalized (lowercased, whitespace-collapsed) pre-redaction text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redaction {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub rule_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub case_id: String,
    pub part_index: usize,
    pub label: String,
    pub finding: String,
    pub redactions: Vec<Redaction>,
}

impl PartRecord {
    /// Canonical serialized form; `parse_part_text` of this string yields an
    /// equal label/finding with no further redactions.
    pub fn canonical_text(&self) -> String {
        format!("{} : {}", self.label, self.finding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub case_id: String,
    pub part_index: usize,
    pub block_index: usize,
    pub image_uri: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssociationCategory {
    Cat1,
    Cat2,
    Cat3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Clean,
    Noisy,
}

/// Field order matters: the pair manifest is golden-file tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedExample {
    pub slide_id: String,
    pub text: String,
    pub category: AssociationCategory,
    pub split: Split,
    pub source: Source,
    #[serde(default)]
    pub case_id: String,
}

// ---------------------------------------------------------------------------
// Rule files
// ---------------------------------------------------------------------------

/// A named regular expression loaded from a plain-text rule file.
#[derive(Debug, Clone)]
pub struct Rule {
    pub id: String,
    pub pattern: Regex,
}

/// Rule set for parsing: part indicators plus redaction rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub indicators: Vec<Rule>,
    pub redactions: Vec<Rule>,
}

pub const DEFAULT_INDICATOR_RULES: &str = "\
lettered|(?m)^\\s*[a-z][.)]\\s+
numbered|(?m)^\\s*part\\s+\\d+\\s*[:.]\\s*
";

pub const DEFAULT_REDACTION_RULES: &str = "\
laterality|\\b(left|right|bilateral)\\b
anatomic_location|\\b(proximal|distal|upper|lower|anterior|posterior|medial|lateral|third part|second part|antrum|fundus|sigmoid|ascending|descending|transverse)\\b
size_measurement|\\b\\d+(\\.\\d+)?\\s*(mm|cm)\\b
";

/// Parses a `rule_id|regex` per-line rule file. `#` starts a comment.
pub fn parse_rule_lines(text: &str) -> Result<Vec<Rule>, ReportError> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, pat) = line.split_once('|').ok_or(ReportError::BadRuleFile {
            line: i + 1,
            reason: "expected `rule_id|regex`".into(),
        })?;
        let pattern = Regex::new(pat.trim()).map_err(|e| ReportError::BadRuleFile {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rules.push(Rule { id: id.trim().to_string(), pattern });
    }
    Ok(rules)
}

impl RuleSet {
    pub fn from_texts(indicators: &str, redactions: &str) -> Result<Self, ReportError> {
        Ok(RuleSet {
            indicators: parse_rule_lines(indicators)?,
            redactions: parse_rule_lines(redactions)?,
        })
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_texts(DEFAULT_INDICATOR_RULES, DEFAULT_REDACTION_RULES)
            .expect("builtin rules parse")
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Collapses artifacts left behind by span removal: repeated commas,
/// comma-before-colon, leading/trailing separators.
fn cleanup_punct(s: &str) -> String {
    let mut t = normalize_ws(s);
    loop {
        let next = t
            .replace(", ,", ",")
            .replace(",,", ",")
            .replace(" ,", ",")
            .replace(", .", ".");
        if next == t {
            break;
        }
        t = next;
    }
    t.trim_matches(|c: char| c == ',' || c.is_whitespace()).to_string()
}

fn apply_redactions(text: &str, rules: &[Rule]) -> (String, Vec<Redaction>) {
    let mut redactions = Vec::new();
    // Spans are located against the original normalized text, then removed
    // in one pass so recorded offsets stay meaningful.
    let mut removed = vec![false; text.len()];
    for rule in rules {
        for m in rule.pattern.find_iter(text) {
            if removed[m.start()..m.end()].iter().any(|&b| b) {
                continue; // already claimed by an earlier rule
            }
            removed[m.start()..m.end()].iter_mut().for_each(|b| *b = true);
            redactions.push(Redaction {
                start: m.start(),
                end: m.end(),
                text: m.as_str().to_string(),
                rule_id: rule.id.clone(),
            });
        }
    }
    redactions.sort_by_key(|r| r.start);
    let kept: String = text
        .char_indices()
        .filter(|(i, _)| !removed[*i])
        .map(|(_, c)| c)
        .collect();
    (cleanup_punct(&kept), redactions)
}

/// Parses one part body of the canonical `label : finding` shape.
pub fn parse_part_text(
    case_id: &str,
    part_index: usize,
    body: &str,
    rules: &RuleSet,
) -> Result<PartRecord, ReportError> {
    let normalized = normalize_ws(&body.to_lowercase());
    let (label_raw, finding_raw) =
        normalized.split_once(" : ").ok_or(ReportError::MalformedPart {
            case_id: case_id.to_string(),
            part_index,
            reason: "missing `label : finding` separator".into(),
        })?;
    let (label, mut redactions) = apply_redactions(label_raw.trim(), &rules.redactions);
    let (finding, finding_reds) = apply_redactions(finding_raw.trim(), &rules.redactions);
    // Finding offsets are recorded relative to the finding substring.
    redactions.extend(finding_reds);
    if label.is_empty() || finding.is_empty() {
        return Err(ReportError::MalformedPart {
            case_id: case_id.to_string(),
            part_index,
            reason: if label.is_empty() { "empty label" } else { "empty finding" }.into(),
        });
    }
    Ok(PartRecord { case_id: case_id.to_string(), part_index, label, finding, redactions })
}

/// Splits a final-diagnosis text into part records, in document order.
///
/// When no configured indicator matches, a document that is itself a single
/// `label : finding` sentence parses as one part; anything else fails with
/// `NoPartIndicators`.
pub fn parse_report(doc: &ReportDocument, rules: &RuleSet) -> Result<Vec<PartRecord>, ReportError> {
    let text = doc.raw_text.to_lowercase();
    // Find all indicator matches, sorted by position.
    let mut marks: Vec<(usize, usize)> = Vec::new(); // (start, end of indicator)
    for rule in &rules.indicators {
        for m in rule.pattern.find_iter(&text) {
            marks.push((m.start(), m.end()));
        }
    }
    marks.sort();
    marks.dedup_by_key(|&mut (s, _)| s);

    let mut parts = Vec::new();
    if marks.is_empty() {
        if text.contains(" : ") {
            parts.push(parse_part_text(&doc.case_id, 0, &text, rules)?);
            return Ok(parts);
        }
        return Err(ReportError::NoPartIndicators(doc.case_id.clone()));
    }
    for (i, &(_, body_start)) in marks.iter().enumerate() {
        let body_end = marks.get(i + 1).map(|&(s, _)| s).unwrap_or(text.len());
        let body = &text[body_start..body_end];
        parts.push(parse_part_text(&doc.case_id, i, body, rules)?);
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// Association categories and pair sets
// ---------------------------------------------------------------------------

/// Category is a total function of the slide/block multiset for one part.
pub fn assign_category(slides: &[SlideRecord]) -> Result<AssociationCategory, ReportError> {
    if slides.is_empty() {
        return Err(ReportError::EmptySlideList);
    }
    let blocks: BTreeSet<usize> = slides.iter().map(|s| s.block_index).collect();
    Ok(if blocks.len() > 1 {
        AssociationCategory::Cat3
    } else if slides.len() == 1 {
        AssociationCategory::Cat1
    } else {
        AssociationCategory::Cat2
    })
}

/// Builds the clean (single-slide parts) and noisy (all pairs) sets.
/// Splits are assigned later; every pair starts in the train bucket.
pub fn build_pair_sets(
    parts: &[PartRecord],
    slides: &[SlideRecord],
) -> Result<(Vec<PairedExample>, Vec<PairedExample>), ReportError> {
    let mut by_part: HashMap<(String, usize), &PartRecord> = HashMap::new();
    for p in parts {
        by_part.insert((p.case_id.clone(), p.part_index), p);
    }
    let mut slides_by_part: BTreeMap<(String, usize), Vec<&SlideRecord>> = BTreeMap::new();
    for s in slides {
        if !by_part.contains_key(&(s.case_id.clone(), s.part_index)) {
            return Err(ReportError::OrphanSlide(s.slide_id.clone()));
        }
        slides_by_part.entry((s.case_id.clone(), s.part_index)).or_default().push(s);
    }

    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (key, part_slides) in &slides_by_part {
        let part = by_part[key];
        let category = assign_category(
            &part_slides.iter().map(|&s| s.clone()).collect::<Vec<_>>(),
        )?;
        for slide in part_slides {
            let mk = |source| PairedExample {
                slide_id: slide.slide_id.clone(),
                text: part.canonical_text(),
                category,
                split: Split::Train,
                source,
                case_id: part.case_id.clone(),
            };
            if category == AssociationCategory::Cat1 {
                clean.push(mk(Source::Clean));
            }
            noisy.push(mk(Source::Noisy));
        }
    }
    Ok((clean, noisy))
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Deterministic case-level 90/5/5 split. Cases are sorted, shuffled under
/// the seed, and the 5% buckets rounded to the nearest case; the train
/// bucket takes the remainder.
pub fn split_cases(clean: &[PairedExample], seed: u64) -> BTreeMap<String, Split> {
    let mut cases: Vec<String> = clean
        .iter()
        .map(|p| p.case_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = seeded_rng(seed, "case-split");
    cases.shuffle(&mut rng);
    let n = cases.len();
    let n_val = ((n as f64) * 0.05).round() as usize;
    let n_test = ((n as f64) * 0.05).round() as usize;
    let mut out = BTreeMap::new();
    for (i, case) in cases.into_iter().enumerate() {
        let split = if i < n_val {
            Split::Validation
        } else if i < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
        out.insert(case, split);
    }
    out
}

/// Applies a case-level assignment to the clean set and filters the noisy set
/// down to its training subset: every case seen in clean validation/test is
/// excluded, and all remaining noisy pairs are train.
pub fn apply_split(
    clean: &mut [PairedExample],
    noisy: &[PairedExample],
    assignment: &BTreeMap<String, Split>,
) -> Vec<PairedExample> {
    for p in clean.iter_mut() {
        p.split = assignment.get(&p.case_id).copied().unwrap_or(Split::Train);
    }
    let held_out: BTreeSet<&String> = assignment
        .iter()
        .filter(|(_, s)| **s != Split::Train)
        .map(|(c, _)| c)
        .collect();
    noisy
        .iter()
        .filter(|p| !held_out.contains(&p.case_id))
        .map(|p| PairedExample { split: Split::Train, ..p.clone() })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteCase {
    pub case_id: String,
    pub study_id: String,
    pub site_code: String,
}

/// Site split for one study. Sites sorted by case count descending are
/// assigned to train while the running total stays within 55% of the study's
/// cases, stopping before the first site that would exceed it; the remainder
/// alternates validation, test, validation, ... If the largest site alone
/// exceeds 55% it still goes to train.
pub fn split_study_sites(
    study_id: &str,
    site_sizes: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, Split>, ReportError> {
    if site_sizes.is_empty() {
        return Err(ReportError::EmptyStudy(study_id.to_string()));
    }
    let total: usize = site_sizes.values().sum();
    let cap = 0.55 * total as f64;
    let mut ordered: Vec<(&String, usize)> =
        site_sizes.iter().map(|(s, &c)| (s, c)).collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut out = BTreeMap::new();
    let mut train_total = 0usize;
    let mut rest = Vec::new();
    let mut filling_train = true;
    for (i, (site, count)) in ordered.into_iter().enumerate() {
        // Assignment stops before the first site whose addition exceeds the
        // cap; the largest site trains even when it alone exceeds it.
        let fits = (train_total + count) as f64 <= cap;
        if filling_train && (i == 0 || fits) {
            train_total += count;
            out.insert(site.clone(), Split::Train);
        } else {
            filling_train = false;
            rest.push(site);
        }
    }
    for (j, site) in rest.into_iter().enumerate() {
        let split = if j % 2 == 0 { Split::Validation } else { Split::Test };
        out.insert(site.clone(), split);
    }
    Ok(out)
}

/// Groups cases by study and applies [`split_study_sites`] to each.
pub fn split_by_site(
    cases: &[SiteCase],
) -> Result<BTreeMap<(String, String), Split>, ReportError> {
    let mut by_study: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for c in cases {
        *by_study
            .entry(c.study_id.clone())
            .or_default()
            .entry(c.site_code.clone())
            .or_insert(0) += 1;
    }
    let mut out = BTreeMap::new();
    for (study, sites) in by_study {
        for (site, split) in split_study_sites(&study, &sites)? {
            out.insert((study.clone(), site), split);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slide(id: &str, case: &str, part: usize, block: usize) -> SlideRecord {
        SlideRecord {
            slide_id: id.into(),
            case_id: case.into(),
            part_index: part,
            block_index: block,
            image_uri: format!("images/{id}.png"),
        }
    }

    #[test]
    fn single_part_without_indicator_parses() {
        let doc = ReportDocument {
            case_id: "c1".into(),
            raw_text: "duodenum, biopsy : unremarkable intestinal mucosa.".into(),
        };
        let parts = parse_report(&doc, &RuleSet::default()).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].label, "duodenum, biopsy");
        assert_eq!(parts[0].finding, "unremarkable intestinal mucosa.");
    }

    #[test]
    fn empty_finding_is_malformed() {
        let doc = ReportDocument {
            case_id: "c1".into(),
            raw_text: "a. colon, biopsy : ".into(),
        };
        let err = parse_report(&doc, &RuleSet::default()).unwrap_err();
        assert!(matches!(err, ReportError::MalformedPart { .. }));
    }

    #[test]
    fn missing_separator_is_malformed() {
        let doc = ReportDocument {
            case_id: "c1".into(),
            raw_text: "a. colon biopsy with no separator".into(),
        };
        let err = parse_report(&doc, &RuleSet::default()).unwrap_err();
        assert!(matches!(err, ReportError::MalformedPart { .. }));
    }

    #[test]
    fn no_indicator_and_no_separator_fails() {
        let doc = ReportDocument { case_id: "c1".into(), raw_text: "just prose".into() };
        assert_eq!(
            parse_report(&doc, &RuleSet::default()).unwrap_err(),
            ReportError::NoPartIndicators("c1".into())
        );
    }

    #[test]
    fn two_part_document_with_laterality_redaction() {
        // Hand-applied rule set: part b's label loses "left" and the removal
        // is recorded with its span in the normalized pre-redaction text.
        let doc = ReportDocument {
            case_id: "c9".into(),
            raw_text: "a. colon, biopsy : tubular adenoma.\nb. skin, left arm, biopsy : intradermal nevus.".into(),
        };
        let parts = parse_report(&doc, &RuleSet::default()).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].part_index, 0);
        assert_eq!(parts[0].label, "colon, biopsy");
        assert!(parts[0].redactions.is_empty());
        assert_eq!(parts[1].part_index, 1);
        assert_eq!(parts[1].label, "skin, arm, biopsy");
        assert_eq!(parts[1].redactions.len(), 1);
        let r = &parts[1].redactions[0];
        assert_eq!(r.text, "left");
        assert_eq!(r.rule_id, "laterality");
        assert_eq!(&"skin, left arm, biopsy"[r.start..r.end], "left");
    }

    #[test]
    fn numbered_part_indicators() {
        let doc = ReportDocument {
            case_id: "c2".into(),
            raw_text: "part 1: colon, biopsy : hyperplastic polyp.\npart 2: cecum, biopsy : tubular adenoma.".into(),
        };
        let parts = parse_report(&doc, &RuleSet::default()).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].label, "cecum, biopsy");
    }

    #[test]
    fn size_measurements_redacted_from_findings() {
        let doc = ReportDocument {
            case_id: "c3".into(),
            raw_text: "a. breast, lumpectomy : invasive carcinoma, 2.5 cm in greatest dimension.".into(),
        };
        let parts = parse_report(&doc, &RuleSet::default()).unwrap();
        assert_eq!(parts[0].finding, "invasive carcinoma, in greatest dimension.");
        assert_eq!(parts[0].redactions[0].rule_id, "size_measurement");
    }

    #[test]
    fn canonical_round_trip() {
        let rules = RuleSet::default();
        let doc = ReportDocument {
            case_id: "c4".into(),
            raw_text: "a. stomach, biopsy : chronic gastritis, left side noted.".into(),
        };
        let parts = parse_report(&doc, &rules).unwrap();
        let text = parts[0].canonical_text();
        let reparsed = parse_part_text("c4", 0, &text, &rules).unwrap();
        assert_eq!(reparsed.label, parts[0].label);
        assert_eq!(reparsed.finding, parts[0].finding);
        assert!(reparsed.redactions.is_empty());
    }

    #[test]
    fn category_examples() {
        assert_eq!(
            assign_category(&[slide("s1", "c", 0, 0)]).unwrap(),
            AssociationCategory::Cat1
        );
        assert_eq!(
            assign_category(&[
                slide("s1", "c", 0, 0),
                slide("s2", "c", 0, 0),
                slide("s3", "c", 0, 0)
            ])
            .unwrap(),
            AssociationCategory::Cat2
        );
        assert_eq!(
            assign_category(&[slide("s1", "c", 0, 0), slide("s2", "c", 0, 1)]).unwrap(),
            AssociationCategory::Cat3
        );
        assert_eq!(assign_category(&[]).unwrap_err(), ReportError::EmptySlideList);
    }

    #[test]
    fn category_matches_brute_force_case_analysis() {
        // All (blocks, slides) with 1 <= b <= s <= 5: distribute s slides over
        // b blocks (each block non-empty) and compare with the direct rule.
        for b in 1usize..=5 {
            for s in b..=5 {
                let mut slides = Vec::new();
                for i in 0..s {
                    let block = if i < b { i } else { 0 };
                    slides.push(slide(&format!("s{i}"), "c", 0, block));
                }
                let got = assign_category(&slides).unwrap();
                let expect = if b > 1 {
                    AssociationCategory::Cat3
                } else if s == 1 {
                    AssociationCategory::Cat1
                } else {
                    AssociationCategory::Cat2
                };
                assert_eq!(got, expect, "b={b} s={s}");
            }
        }
    }

    fn part(case: &str, idx: usize, label: &str, finding: &str) -> PartRecord {
        PartRecord {
            case_id: case.into(),
            part_index: idx,
            label: label.into(),
            finding: finding.into(),
            redactions: vec![],
        }
    }

    #[test]
    fn pair_sets_single_slide() {
        let parts = vec![part("c", 0, "colon, biopsy", "polyp.")];
        let slides = vec![slide("s1", "c", 0, 0)];
        let (clean, noisy) = build_pair_sets(&parts, &slides).unwrap();
        assert_eq!(clean.len(), 1);
        assert_eq!(noisy.len(), 1);
        assert_eq!(clean[0].source, Source::Clean);
        assert_eq!(noisy[0].source, Source::Noisy);
    }

    #[test]
    fn pair_sets_cat2_part_is_noisy_only() {
        let parts = vec![part("c", 0, "colon, biopsy", "polyp.")];
        let slides = vec![
            slide("s1", "c", 0, 0),
            slide("s2", "c", 0, 0),
            slide("s3", "c", 0, 0),
        ];
        let (clean, noisy) = build_pair_sets(&parts, &slides).unwrap();
        assert!(clean.is_empty());
        assert_eq!(noisy.len(), 3);
        assert!(noisy.iter().all(|p| p.category == AssociationCategory::Cat2));
    }

    #[test]
    fn pair_sets_mixed_categories() {
        // One single-slide part and one two-block/two-slide part:
        // clean = 1 pair, noisy = 3 pairs with categories {Cat1, Cat3, Cat3}.
        let parts = vec![
            part("c", 0, "colon, biopsy", "polyp."),
            part("c", 1, "stomach, biopsy", "gastritis."),
        ];
        let slides = vec![
            slide("s1", "c", 0, 0),
            slide("s2", "c", 1, 0),
            slide("s3", "c", 1, 1),
        ];
        let (clean, noisy) = build_pair_sets(&parts, &slides).unwrap();
        assert_eq!(clean.len(), 1);
        assert_eq!(noisy.len(), 3);
        let cats: Vec<_> = noisy.iter().map(|p| p.category).collect();
        assert_eq!(
            cats.iter().filter(|&&c| c == AssociationCategory::Cat3).count(),
            2
        );
        assert_eq!(
            cats.iter().filter(|&&c| c == AssociationCategory::Cat1).count(),
            1
        );
    }

    #[test]
    fn orphan_slide_rejected() {
        let parts = vec![part("c", 0, "colon, biopsy", "polyp.")];
        let slides = vec![slide("s1", "c", 7, 0)];
        assert_eq!(
            build_pair_sets(&parts, &slides).unwrap_err(),
            ReportError::OrphanSlide("s1".into())
        );
    }

    fn clean_pairs(n_cases: usize) -> Vec<PairedExample> {
        (0..n_cases)
            .map(|i| PairedExample {
                slide_id: format!("s{i}"),
                text: "t : f".into(),
                category: AssociationCategory::Cat1,
                split: Split::Train,
                source: Source::Clean,
                case_id: format!("case{i:04}"),
            })
            .collect()
    }

    #[test]
    fn case_split_is_90_5_5() {
        let pairs = clean_pairs(100);
        let assignment = split_cases(&pairs, 7);
        let count = |s: Split| assignment.values().filter(|&&v| v == s).count();
        assert_eq!(count(Split::Train), 90);
        assert_eq!(count(Split::Validation), 5);
        assert_eq!(count(Split::Test), 5);
    }

    #[test]
    fn single_case_goes_to_train() {
        let pairs = clean_pairs(1);
        let assignment = split_cases(&pairs, 3);
        assert_eq!(assignment["case0000"], Split::Train);
    }

    #[test]
    fn case_split_deterministic() {
        let pairs = clean_pairs(53);
        assert_eq!(split_cases(&pairs, 11), split_cases(&pairs, 11));
        assert_ne!(split_cases(&pairs, 11), split_cases(&pairs, 12));
    }

    #[test]
    fn split_is_case_closed_and_noisy_excludes_held_out() {
        // Cases with two slides each: both slides of a case share its split.
        let parts: Vec<PartRecord> = (0..40)
            .flat_map(|i| {
                vec![
                    part(&format!("c{i}"), 0, "a", "f."),
                    part(&format!("c{i}"), 1, "b", "g."),
                ]
            })
            .collect();
        let slides: Vec<SlideRecord> = (0..40)
            .flat_map(|i| {
                vec![
                    slide(&format!("s{i}a"), &format!("c{i}"), 0, 0),
                    slide(&format!("s{i}b"), &format!("c{i}"), 1, 0),
                ]
            })
            .collect();
        let (mut clean, noisy) = build_pair_sets(&parts, &slides).unwrap();
        let assignment = split_cases(&clean, 5);
        let noisy_train = apply_split(&mut clean, &noisy, &assignment);

        let mut case_splits: HashMap<&str, BTreeSet<Split>> = HashMap::new();
        for p in &clean {
            case_splits.entry(p.case_id.as_str()).or_default().insert(p.split);
        }
        assert!(case_splits.values().all(|s| s.len() == 1), "case split leaked");

        let held: BTreeSet<&String> = assignment
            .iter()
            .filter(|(_, s)| **s != Split::Train)
            .map(|(c, _)| c)
            .collect();
        assert!(!held.is_empty());
        assert!(noisy_train.iter().all(|p| !held.contains(&p.case_id)));
        assert!(noisy_train.iter().all(|p| p.split == Split::Train));
    }

    fn site_cases(study: &str, sizes: &[(&str, usize)]) -> Vec<SiteCase> {
        let mut v = Vec::new();
        for (site, n) in sizes {
            for i in 0..*n {
                v.push(SiteCase {
                    case_id: format!("{study}-{site}-{i}"),
                    study_id: study.into(),
                    site_code: (*site).into(),
                });
            }
        }
        v
    }

    #[test]
    fn site_split_hand_trace() {
        // Sizes [40,30,20,10,10,10]: 55% of 120 is 66, so train = {40} and the
        // rest alternates validation, test, validation, ...
        let cases = site_cases(
            "st1",
            &[("a", 40), ("b", 30), ("c", 20), ("d", 10), ("e", 10), ("f", 10)],
        );
        let got = split_by_site(&cases).unwrap();
        let s = |site: &str| got[&("st1".to_string(), site.to_string())];
        assert_eq!(s("a"), Split::Train);
        assert_eq!(s("b"), Split::Validation);
        assert_eq!(s("c"), Split::Test);
        assert_eq!(s("d"), Split::Validation);
        assert_eq!(s("e"), Split::Test);
        assert_eq!(s("f"), Split::Validation);
    }

    #[test]
    fn site_split_single_site_trains() {
        let cases = site_cases("st1", &[("only", 12)]);
        let got = split_by_site(&cases).unwrap();
        assert_eq!(got[&("st1".to_string(), "only".to_string())], Split::Train);
    }

    #[test]
    fn site_split_two_equal_sites() {
        let cases = site_cases("st1", &[("a", 10), ("b", 10)]);
        let got = split_by_site(&cases).unwrap();
        assert_eq!(got[&("st1".to_string(), "a".to_string())], Split::Train);
        assert_eq!(got[&("st1".to_string(), "b".to_string())], Split::Validation);
    }

    #[test]
    fn site_split_empty_study_is_error() {
        let err = split_study_sites("st1", &BTreeMap::new()).unwrap_err();
        assert_eq!(err, ReportError::EmptyStudy("st1".into()));
    }

    #[test]
    fn site_split_train_fraction_bounded_when_feasible() {
        use rand::Rng;
        let mut rng = seeded_rng(99, "site-prop");
        for trial in 0..200 {
            let n_sites = rng.gen_range(1..8);
            let sizes: Vec<(String, usize)> = (0..n_sites)
                .map(|i| (format!("s{i}"), rng.gen_range(1..40)))
                .collect();
            let refs: Vec<(&str, usize)> =
                sizes.iter().map(|(n, c)| (n.as_str(), *c)).collect();
            let cases = site_cases(&format!("study{trial}"), &refs);
            let total: usize = sizes.iter().map(|(_, c)| c).sum();
            let got = split_by_site(&cases).unwrap();
            let train_total: usize = sizes
                .iter()
                .filter(|(name, _)| {
                    got[&(format!("study{trial}"), name.clone())] == Split::Train
                })
                .map(|(_, c)| *c)
                .sum();
            let largest = sizes.iter().map(|(_, c)| *c).max().unwrap();
            if (largest as f64) <= 0.55 * total as f64 {
                assert!(
                    train_total as f64 <= 0.55 * total as f64,
                    "trial {trial}: train {train_total} of {total}"
                );
            }
        }
    }
}
