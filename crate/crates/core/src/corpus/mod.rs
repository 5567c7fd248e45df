//! Synthetic job-search corpus, rule-based teacher grades, soft labels and
//! scoring-prompt assembly.

mod generator;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{self, Encoder, TAG_ANS, TAG_DESC, TAG_DESC_END, TAG_META, TAG_META_END, TAG_Q, TAG_Q_END};

pub const SYSTEM_PREFIX: &str = "<|sys|>Decide if the job matches the query. Answer yes or no.<|/sys|>";
pub const SUFFIX: &str = TAG_ANS;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmploymentType {
    FullTime,
    PartTime,
    Contract,
    Internship,
}

impl EmploymentType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FullTime => "full_time",
            Self::PartTime => "part_time",
            Self::Contract => "contract",
            Self::Internship => "internship",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobItem {
    pub id: String,
    pub title: String,
    pub company: String,
    pub location: String,
    pub employment_type: EmploymentType,
    pub remote_eligible: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedPair {
    pub query_id: String,
    pub item_id: String,
    pub grade: u8,
    pub p_star_yes: f64,
    pub p_star_no: f64,
}

/// The five pieces of a scoring prompt, each including its template tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSegments {
    pub system_prefix: String,
    pub query_text: String,
    pub metadata_text: String,
    pub description_text: String,
    pub suffix: String,
}

impl PromptSegments {
    pub fn full(&self) -> String {
        let mut s = String::with_capacity(
            self.system_prefix.len()
                + self.query_text.len()
                + self.metadata_text.len()
                + self.description_text.len()
                + self.suffix.len(),
        );
        s.push_str(&self.system_prefix);
        s.push_str(&self.query_text);
        s.push_str(&self.metadata_text);
        s.push_str(&self.description_text);
        s.push_str(&self.suffix);
        s
    }

    /// System prefix plus query block: the region shared by every prompt of a request.
    pub fn shared_prefix(&self) -> String {
        format!("{}{}", self.system_prefix, self.query_text)
    }
}

/// Deterministic corpus for a seed.
pub fn generate_corpus(seed: u64, n_queries: usize, n_items: usize) -> (Vec<Query>, Vec<JobItem>) {
    let queries = (0..n_queries).map(|i| generator::generate_query(seed, i)).collect();
    let items = (0..n_items).map(|i| generator::generate_item(seed, i)).collect();
    (queries, items)
}

fn term_set(text: &str) -> HashSet<String> {
    tokenizer::words(text).into_iter().collect()
}

fn metadata_terms(item: &JobItem) -> HashSet<String> {
    let mut m = term_set(&item.location);
    m.extend(term_set(&item.company));
    m.extend(term_set(item.employment_type.as_str()));
    if item.remote_eligible {
        m.insert("remote".to_string());
    }
    m
}

/// Teacher relevance score in [0, 1] before bucketing:
/// `0.6·J(query, title) + 0.3·recall(query in title ∪ description) + 0.1·[any query term hits metadata]`.
pub fn teacher_score(query: &Query, item: &JobItem) -> f64 {
    let q = term_set(&query.text);
    if q.is_empty() {
        return 0.0;
    }
    let title = term_set(&item.title);
    let inter = q.intersection(&title).count();
    let union = q.union(&title).count();
    let jaccard = if union == 0 { 0.0 } else { inter as f64 / union as f64 };

    let mut doc = title;
    doc.extend(tokenizer::words(&item.description));
    let recall = q.iter().filter(|t| doc.contains(*t)).count() as f64 / q.len() as f64;

    let meta = metadata_terms(item);
    let bonus = if q.iter().any(|t| meta.contains(t)) { 1.0 } else { 0.0 };

    0.6 * jaccard + 0.3 * recall + 0.1 * bonus
}

pub const GRADE_THRESHOLDS: [f64; 4] = [0.15, 0.35, 0.55, 0.75];

pub fn bucket_grade(score: f64) -> u8 {
    GRADE_THRESHOLDS.iter().filter(|&&t| score >= t).count() as u8
}

/// Rule-based ordinal grade in [0, 4].
pub fn teacher_grade(query: &Query, item: &JobItem) -> u8 {
    bucket_grade(teacher_score(query, item))
}

pub const SOFT_LABELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Map a grade to `(p*_yes, p*_no)`.
pub fn soft_label(grade: u8) -> Result<(f64, f64)> {
    let p = *SOFT_LABELS.get(grade as usize).ok_or(Error::GradeOutOfRange(grade))?;
    Ok((p, 1.0 - p))
}

pub fn graded_pair(query: &Query, item: &JobItem) -> GradedPair {
    let grade = teacher_grade(query, item);
    let (p_star_yes, p_star_no) = soft_label(grade).expect("teacher grades are in range");
    GradedPair { query_id: query.id.clone(), item_id: item.id.clone(), grade, p_star_yes, p_star_no }
}

pub fn assemble_prompt(query: &Query, item: &JobItem) -> PromptSegments {
    PromptSegments {
        system_prefix: SYSTEM_PREFIX.to_string(),
        query_text: format!("{TAG_Q}{}{TAG_Q_END}", query.text),
        metadata_text: format!(
            "{TAG_META}{}|{}|{}|{}|{}{TAG_META_END}",
            item.title,
            item.company,
            item.location,
            item.employment_type.as_str(),
            item.remote_eligible
        ),
        description_text: format!("{TAG_DESC}{}{TAG_DESC_END}", item.description),
        suffix: SUFFIX.to_string(),
    }
}

/// Drop description tokens from the end until the tokenized prompt fits
/// `token_budget`. The description block (tags included) disappears when
/// not even its two tags fit.
pub fn truncate_description(segments: &PromptSegments, token_budget: usize, encoder: &Encoder<'_>) -> Result<PromptSegments> {
    let fixed = encoder.count(&segments.system_prefix)
        + encoder.count(&segments.query_text)
        + encoder.count(&segments.metadata_text)
        + encoder.count(&segments.suffix);
    if token_budget < fixed {
        return Err(Error::BudgetTooSmall { budget: token_budget, required: fixed });
    }
    let desc_tokens = encoder.count(&segments.description_text);
    if fixed + desc_tokens <= token_budget {
        return Ok(segments.clone());
    }
    let mut out = segments.clone();
    let room = token_budget - fixed;
    let body = segments
        .description_text
        .strip_prefix(TAG_DESC)
        .and_then(|s| s.strip_suffix(TAG_DESC_END));
    out.description_text = match body {
        Some(body) if room >= 2 => {
            let keep = room - 2;
            let kept = match keep.checked_sub(1) {
                None => "",
                Some(last) => {
                    let end = encoder.pieces(body).nth(last).map(|(r, _)| r.end);
                    &body[..end.unwrap_or(body.len())]
                }
            };
            format!("{TAG_DESC}{kept}{TAG_DESC_END}")
        }
        Some(_) => String::new(),
        // not a tagged block: cut raw tokens
        None => {
            let end = if room == 0 {
                0
            } else {
                encoder.pieces(&segments.description_text).nth(room - 1).map(|(r, _)| r.end).unwrap_or(0)
            };
            segments.description_text[..end].to_string()
        }
    };
    Ok(out)
}

/// Per query: the `n_candidates / 2` items with the highest title overlap
/// (a lexical retrieval stand-in) plus random fill, all teacher-graded.
pub fn build_pairs(queries: &[Query], items: &[JobItem], n_candidates: usize, seed: u64) -> Vec<GradedPair> {
    let n_candidates = n_candidates.min(items.len());
    let titles: Vec<HashSet<String>> = items.iter().map(|i| term_set(&i.title)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(queries.len() * n_candidates);
    for q in queries {
        let qt = term_set(&q.text);
        let mut by_overlap: Vec<(usize, usize)> =
            titles.iter().enumerate().map(|(i, t)| (qt.intersection(t).count(), i)).collect();
        by_overlap.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let retrieved = n_candidates / 2;
        let mut chosen: Vec<usize> = by_overlap.iter().take(retrieved).map(|&(_, i)| i).collect();
        let mut rest: Vec<usize> = by_overlap.iter().skip(retrieved).map(|&(_, i)| i).collect();
        rest.shuffle(&mut rng);
        chosen.extend(rest.into_iter().take(n_candidates - retrieved));
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|i| graded_pair(q, &items[i])));
    }
    pairs
}

pub fn write_ndjson<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// `queries.ndjson`, `items.ndjson`, `pairs.ndjson` in one directory.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub queries: Vec<Query>,
    pub items: Vec<JobItem>,
    pub pairs: Vec<GradedPair>,
}

impl Corpus {
    pub fn generate(seed: u64, n_queries: usize, n_items: usize, n_candidates: usize) -> Self {
        let (queries, items) = generate_corpus(seed, n_queries, n_items);
        let pairs = build_pairs(&queries, &items, n_candidates, seed ^ 0x5eed);
        Self { queries, items, pairs }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_ndjson(&dir.join("queries.ndjson"), &self.queries)?;
        write_ndjson(&dir.join("items.ndjson"), &self.items)?;
        write_ndjson(&dir.join("pairs.ndjson"), &self.pairs)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            queries: read_ndjson(&dir.join("queries.ndjson"))?,
            items: read_ndjson(&dir.join("items.ndjson"))?,
            pairs: read_ndjson(&dir.join("pairs.ndjson"))?,
        })
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }

    pub fn item_index(&self) -> std::collections::HashMap<&str, &JobItem> {
        self.items.iter().map(|i| (i.id.as_str(), i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocab;
    use proptest::prelude::*;

    fn item(title: &str, desc: &str) -> JobItem {
        JobItem {
            id: "j1".into(),
            title: title.into(),
            company: "Acme".into(),
            location: "Berlin".into(),
            employment_type: EmploymentType::FullTime,
            remote_eligible: true,
            description: desc.into(),
        }
    }

    fn q(text: &str) -> Query {
        Query { id: "q1".into(), text: text.into() }
    }

    #[test]
    fn corpus_is_deterministic_and_seed_sensitive() {
        let a = generate_corpus(7, 2, 5);
        let b = generate_corpus(7, 2, 5);
        let c = generate_corpus(8, 2, 5);
        let bytes = |x: &(Vec<Query>, Vec<JobItem>)| serde_json::to_vec(x).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn soft_label_table() {
        assert_eq!(soft_label(4).unwrap(), (0.9, 1.0 - 0.9));
        assert_eq!(soft_label(2).unwrap(), (0.5, 0.5));
        assert_eq!(soft_label(0).unwrap(), (0.1, 1.0 - 0.1));
        assert!(matches!(soft_label(5), Err(Error::GradeOutOfRange(5))));
        for g in 0..=4 {
            let (y, n) = soft_label(g).unwrap();
            assert_eq!(y + n, 1.0);
            if g > 0 {
                assert!(y > soft_label(g - 1).unwrap().0);
            }
        }
    }

    #[test]
    fn identical_title_with_metadata_is_top_grade() {
        let it = item("Rust Engineer", "We build compilers in Berlin.");
        // J=1, recall=1 -> 0.9
        assert_eq!(teacher_grade(&q("Rust Engineer"), &it), 4);
        // J=2/3, recall=1, metadata hit -> 0.8
        assert_eq!(teacher_grade(&q("rust engineer berlin"), &it), 4);
    }

    #[test]
    fn zero_overlap_is_grade_zero() {
        let it = item("Pastry Chef", "Bake bread every morning.");
        assert_eq!(teacher_grade(&q("rust engineer"), &it), 0);
    }

    /// Twenty hand-built fixtures; the comment on each line is the rule
    /// evaluated by hand (0.6·J + 0.3·recall + 0.1·meta), chosen away from
    /// the bucket edges.
    #[test]
    fn mid_overlap_fixtures_cover_grades_one_to_three() {
        let cases: &[(&str, &str, &str, u8)] = &[
            ("rust engineer", "Senior Python Engineer", "x", 1),             // .15+.15     = .30
            ("remote engineer", "Senior Python Engineer", "x", 2),           // .15+.15+.1  = .40
            ("rust engineer", "Senior Rust Engineer", "x", 3),               // .40+.30     = .70
            ("rust engineer tokio", "Rust Engineer", "y", 3),                // .40+.20     = .60
            ("rust engineer tokio", "Rust Engineer", "tokio services", 3),   // .40+.30     = .70
            ("rust developer acme", "Data Analyst", "rust", 1),              // 0+.10+.1    = .20
            ("python developer", "Python Engineer", "developer tools", 2),   // .20+.30     = .50
            ("lead data scientist", "Junior Data Analyst Intern", "x", 1),   // .10+.10     = .20
            ("lead data scientist", "Lead Data Analyst", "x", 2),            // .30+.20     = .50
            ("lead data scientist", "Lead Data Analyst", "scientist wanted", 3), // .30+.30 = .60
            ("tax", "Tax Accountant", "x", 3),                               // .30+.30     = .60
            ("remote accountant", "Tax Accountant", "x", 2),                 // .20+.15+.1  = .45
            ("remote nurse", "Tax Accountant", "nurse", 1),                  // 0+.15+.1    = .25
            ("acme pastry chef", "Chef", "x", 2),                            // .20+.10+.1  = .40
            ("rust developer berlin", "Rust Engineer", "developer tools", 2), // .15+.20+.1 = .45
            ("rust engineer berlin", "Rust Engineer", "hello", 3),           // .40+.20+.1  = .70
            ("chef berlin nurse", "Data Analyst", "chef", 1),                // 0+.10+.1    = .20
            ("senior rust engineer", "Senior Rust Engineer", "x", 4),        // .60+.30     = .90
            ("data analyst", "Senior Data Analyst", "x", 3),                 // .40+.30     = .70
            ("graphic designer toronto", "Ux Designer", "figma", 1),         // .15+.10     = .25
        ];
        let mut seen = HashSet::new();
        for (query, title, desc, want) in cases {
            let got = teacher_grade(&q(query), &item(title, desc));
            assert_eq!(
                got,
                *want,
                "query {query:?} vs title {title:?} (score {})",
                teacher_score(&q(query), &item(title, desc))
            );
            seen.insert(got);
        }
        assert!(seen.contains(&1) && seen.contains(&2) && seen.contains(&3));
    }

    #[test]
    fn prompt_follows_template_order() {
        let (qs, items) = generate_corpus(3, 1, 2);
        let a = assemble_prompt(&qs[0], &items[0]).full();
        let qpos = a.find(&qs[0].text).unwrap();
        let mpos = a.find(TAG_META).unwrap();
        let dpos = a.find(TAG_DESC).unwrap();
        assert!(qpos < mpos && mpos < dpos);
        assert!(a.starts_with(SYSTEM_PREFIX) && a.ends_with(SUFFIX));
        let b = assemble_prompt(&qs[0], &items[1]);
        assert_eq!(assemble_prompt(&qs[0], &items[0]).shared_prefix(), b.shared_prefix());
    }

    #[test]
    fn golden_prompt_for_rust_engineer() {
        let query = Query { id: "q00000".into(), text: "rust engineer".into() };
        let it = JobItem {
            id: "j000000".into(),
            title: "Senior Rust Engineer".into(),
            company: "Acme".into(),
            location: "Berlin".into(),
            employment_type: EmploymentType::FullTime,
            remote_eligible: true,
            description: "Build reliable services in Rust. Own the deployment pipeline.".into(),
        };
        let golden = include_str!("../../tests/golden/prompt_rust_engineer.txt");
        assert_eq!(assemble_prompt(&query, &it).full(), golden.trim_end_matches('\n'));
    }

    #[test]
    fn truncation_no_op_and_boundary() {
        let v = Vocab::default();
        let enc = Encoder::new(&v);
        let (qs, items) = generate_corpus(11, 1, 1);
        let seg = assemble_prompt(&qs[0], &items[0]);
        let total = enc.count(&seg.full());
        assert_eq!(truncate_description(&seg, total, &enc).unwrap(), seg);

        let fixed = total - enc.count(&seg.description_text);
        let cut = truncate_description(&seg, fixed, &enc).unwrap();
        assert_eq!(cut.description_text, "");
        assert_eq!(cut.suffix, SUFFIX);
        assert_eq!(enc.count(&cut.full()), fixed);

        assert!(matches!(
            truncate_description(&seg, fixed - 1, &enc),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn truncation_of_long_prompt_hits_budget_exactly() {
        let v = Vocab::default();
        let enc = Encoder::new(&v);
        let words: Vec<String> = (0..3000).map(|i| format!("w{i}")).collect();
        let mut it = item("Rust Engineer", &words.join(" "));
        it.description.push('.');
        let seg = assemble_prompt(&q("rust engineer"), &it);
        assert!(enc.count(&seg.full()) > 3000);
        let cut = truncate_description(&seg, 2048, &enc).unwrap();
        let n = enc.count(&cut.full());
        // one word is one token here, so "≤ 2048 and > 2048 − 1"
        assert!(n <= 2048 && n > 2047, "{n}");
        assert!(cut.description_text.ends_with(TAG_DESC_END));
    }

    #[test]
    fn ndjson_roundtrip() {
        let dir = std::env::temp_dir().join(format!("slmrank-corpus-{}", std::process::id()));
        let c = Corpus::generate(5, 3, 10, 4);
        c.save(&dir).unwrap();
        let back = Corpus::load(&dir).unwrap();
        assert_eq!(back.queries, c.queries);
        assert_eq!(back.items, c.items);
        assert_eq!(back.pairs, c.pairs);
        let first = std::fs::read_to_string(dir.join("items.ndjson")).unwrap();
        assert!(first.lines().next().unwrap().contains("\"employment_type\":"));
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn truncation_never_touches_fixed_segments(seed in 0u64..200, extra in 0usize..400) {
            let v = Vocab::default();
            let enc = Encoder::new(&v);
            let (qs, items) = generate_corpus(seed, 1, 1);
            let seg = assemble_prompt(&qs[0], &items[0]);
            let fixed = enc.count(&seg.full()) - enc.count(&seg.description_text);
            let cut = truncate_description(&seg, fixed + extra, &enc).unwrap();
            prop_assert_eq!(&cut.system_prefix, &seg.system_prefix);
            prop_assert_eq!(&cut.query_text, &seg.query_text);
            prop_assert_eq!(&cut.metadata_text, &seg.metadata_text);
            prop_assert_eq!(&cut.suffix, &seg.suffix);
            prop_assert!(enc.count(&cut.full()) <= fixed + extra);
            prop_assert!(seg.description_text.starts_with(cut.description_text.trim_end_matches(TAG_DESC_END)));
        }

        #[test]
        fn adding_a_title_term_never_lowers_the_grade(seed in 0u64..500, pick in 0usize..8) {
            let (qs, items) = generate_corpus(seed, 1, 1);
            let it = &items[0];
            let title_words = tokenizer::words(&it.title);
            let w = &title_words[pick % title_words.len()];
            let before = teacher_grade(&qs[0], it);
            let extended = Query { id: qs[0].id.clone(), text: format!("{} {w}", qs[0].text) };
            prop_assert!(teacher_grade(&extended, it) >= before);
        }
    }
}
