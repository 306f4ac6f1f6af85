//! Evaluation measures for externally produced model outputs.
//!
//! Text metrics work on lowercased whitespace tokens. BLEU-2 is
//! sentence-level and unsmoothed; corpus figures are macro averages.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod score;

pub use score::{
    read_predictions, read_ratings, read_references, score_task, Prediction, Reference,
    ScoreCounts, ScoreReport, TokenScores,
};

/// Metrics a task can declare in its registry profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Bleu2,
    RougeL,
    KnowledgeF1,
    BeginsWith,
    Spearman,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Bleu2 => "bleu2",
            MetricKind::RougeL => "rouge_l",
            MetricKind::KnowledgeF1 => "knowledge_f1",
            MetricKind::BeginsWith => "begins_with",
            MetricKind::Spearman => "spearman",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingField {
    Overall,
    Turing,
    Relevance,
    Appropriateness,
}

impl RatingField {
    pub const ALL: [RatingField; 4] = [
        RatingField::Overall,
        RatingField::Turing,
        RatingField::Relevance,
        RatingField::Appropriateness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RatingField::Overall => "overall",
            RatingField::Turing => "turing",
            RatingField::Relevance => "relevance",
            RatingField::Appropriateness => "appropriateness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub instance_id: String,
    pub rating_field: RatingField,
    pub rating: f64,
}

/// Trim plus case-fold, the normalization for exact-match comparisons.
pub fn normalize(text: &str) -> String {
    text.trim().to_lowercase()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScore {
    pub accuracy: f64,
    pub out_of_option_rate: f64,
    pub n: usize,
}

/// Exact-match accuracy and the fraction of predictions naming no option.
/// A missing prediction is wrong and out of option.
pub fn classification_accuracy<P, G, O>(preds: &[Option<P>], golds: &[G], options: &[O]) -> Result<ClassificationScore>
where
    P: AsRef<str>,
    G: AsRef<str>,
    O: AsRef<[String]>,
{
    if preds.len() != golds.len() || preds.len() != options.len() {
        return Err(Error::Metric(format!(
            "misaligned inputs: {} predictions, {} golds, {} option lists",
            preds.len(),
            golds.len(),
            options.len()
        )));
    }
    let n = preds.len();
    if n == 0 {
        return Ok(ClassificationScore {
            accuracy: 0.0,
            out_of_option_rate: 0.0,
            n,
        });
    }
    let mut correct = 0;
    let mut outside = 0;
    for ((pred, gold), opts) in preds.iter().zip(golds).zip(options) {
        let Some(pred) = pred else {
            outside += 1;
            continue;
        };
        let p = normalize(pred.as_ref());
        if p == normalize(gold.as_ref()) {
            correct += 1;
        }
        if !opts.as_ref().iter().any(|o| normalize(o) == p) {
            outside += 1;
        }
    }
    Ok(ClassificationScore {
        accuracy: correct as f64 / n as f64,
        out_of_option_rate: outside as f64 / n as f64,
        n,
    })
}

fn counts<T: Eq + Hash>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    counts(tokens.windows(n))
}

/// Clipped n-gram matches and the candidate n-gram total.
fn modified_precision(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand_counts = ngrams(cand, n);
    let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
    let matched = cand_counts
        .iter()
        .map(|(g, &c)| {
            let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            c.min(max_ref)
        })
        .sum();
    (matched, cand.len().saturating_sub(n - 1))
}

/// Sentence BLEU with uniform weights over unigrams and bigrams.
///
/// The brevity penalty uses the reference length closest to the candidate
/// (shorter wins ties). No smoothing: any zero precision gives 0.
pub fn bleu2<S: AsRef<str>>(candidate: &str, references: &[S]) -> f64 {
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let (m1, t1) = modified_precision(&cand, &refs, 1);
    let (m2, t2) = modified_precision(&cand, &refs, 2);
    if m1 == 0 || m2 == 0 {
        return 0.0;
    }
    // one rounding before the root keeps simple ratios exact
    let geo_mean = ((m1 * m2) as f64 / (t1 * t2) as f64).sqrt();
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty refs");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * geo_mean
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f_measure(overlap: usize, cand_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// LCS-based F-measure with equal weight on precision and recall.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    f_measure(lcs_len(&c, &r), c.len(), r.len())
}

/// Unigram F1 with count-aware overlap, no stopword removal.
pub fn knowledge_f1(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let rc = counts(r.iter());
    let overlap = counts(c.iter())
        .into_iter()
        .map(|(tok, n)| n.min(rc.get(tok).copied().unwrap_or(0)))
        .sum();
    f_measure(overlap, c.len(), r.len())
}

pub fn begins_with(pred: &str, phrase: &str) -> bool {
    pred.trim_start().to_lowercase().starts_with(&phrase.trim_start().to_lowercase())
}

/// Fraction of predictions starting with their initial phrase.
pub fn begins_with_accuracy<P: AsRef<str>, Q: AsRef<str>>(preds: &[P], phrases: &[Q]) -> Result<f64> {
    if preds.len() != phrases.len() {
        return Err(Error::Metric(format!(
            "misaligned inputs: {} predictions, {} phrases",
            preds.len(),
            phrases.len()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(phrases)
        .filter(|(p, q)| begins_with(p.as_ref(), q.as_ref()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `p_yes / (p_yes + p_no)`.
pub fn relevance_score(p_yes: f64, p_no: f64) -> Result<f64> {
    if !(p_yes.is_finite() && p_no.is_finite()) || p_yes < 0.0 || p_no < 0.0 {
        return Err(Error::Metric(format!(
            "probabilities must be finite and non-negative, got ({p_yes}, {p_no})"
        )));
    }
    if p_yes + p_no == 0.0 {
        return Err(Error::Metric("p(yes) and p(no) are both zero".into()));
    }
    Ok(decimal_ratio(p_yes, p_no).unwrap_or(p_yes / (p_yes + p_no)))
}

/// Shortest round-trip decimal form of a finite non-negative float as
/// `(digits, exponent)`, so `0.3` is `(3, -1)`.
fn decimal(x: f64) -> (u128, i32) {
    let s = format!("{x:e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits = format!("{int}{frac}").parse().expect("decimal digits");
    (digits, exp.parse::<i32>().expect("exponent") - frac.len() as i32)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `a / (a + b)` computed on the decimal values the floats print as, which
/// is how probabilities arrive from JSON. `None` when the reduced fraction
/// is too large for a correctly rounded division.
fn decimal_ratio(a: f64, b: f64) -> Option<f64> {
    let ((ma, ea), (mb, eb)) = (decimal(a), decimal(b));
    if ma == 0 || mb == 0 {
        return Some(if ma == 0 { 0.0 } else { 1.0 });
    }
    let e = ea.min(eb);
    let ma = ma.checked_mul(10u128.checked_pow((ea - e) as u32)?)?;
    let mb = mb.checked_mul(10u128.checked_pow((eb - e) as u32)?)?;
    let sum = ma.checked_add(mb)?;
    let g = gcd(ma, sum);
    let (n, d) = (ma / g, sum / g);
    const EXACT: u128 = 1 << 53;
    (n < EXACT && d < EXACT).then(|| n as f64 / d as f64)
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Metric("spearman needs at least two pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Metric("spearman inputs must be finite".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
        .ok_or_else(|| Error::Metric("correlation undefined for a constant input".into()))
}

/// Spearman between model scores and human ratings, per rating field.
/// Fields with fewer than two joined pairs, or a constant side, are absent.
pub fn correlate_ratings(scores: &HashMap<String, f64>, ratings: &[RatingRecord]) -> BTreeMap<RatingField, f64> {
    let mut joined: BTreeMap<RatingField, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in ratings {
        if let Some(&s) = scores.get(&r.instance_id) {
            let e = joined.entry(r.rating_field).or_default();
            e.0.push(s);
            e.1.push(r.rating);
        }
    }
    joined
        .into_iter()
        .filter_map(|(field, (s, r))| spearman(&s, &r).ok().map(|rho| (field, rho)))
        .collect()
}
