//! Corpus-level scoring of prediction files against references.
//!
//! Predictions: `{"instance_id", "text"?, "token_scores"?: {"yes", "no"}, "grade"?}`.
//! References: either `{"instance_id", "reference" | "references", "options"?,
//! "initial_phrase"?}` or compiled corpus lines, from which the gold output,
//! option labels and initial phrase are recovered by parsing the input.
//! Ratings: `{"instance_id", "rating_field", "rating"}`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    begins_with, bleu2, classification_accuracy, correlate_ratings, knowledge_f1, relevance_score,
    rouge_l, MetricKind, RatingRecord,
};
use crate::error::{Error, Result};
use crate::formatter::Segments;
use crate::mixer::CorpusLine;
use crate::registry::TaskSpec;
use crate::tokens::{OPTIONS, TOKEN_PATTERN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub yes: f64,
    pub no: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_scores: Option<TokenScores>,
    /// Precomputed external GRADE score, averaged but never computed here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<f64>,
}

impl Prediction {
    /// The predicted label: the text if given, otherwise the likelier of
    /// yes/no from the token scores.
    fn label(&self) -> Option<String> {
        match (&self.text, self.token_scores) {
            (Some(t), _) => Some(t.clone()),
            (None, Some(s)) => Some(if s.yes > s.no { "yes" } else { "no" }.to_owned()),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub instance_id: String,
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_phrase: Option<String>,
}

#[derive(Deserialize)]
struct RawReference {
    instance_id: String,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    references: Option<Vec<String>>,
    #[serde(default)]
    options: Option<Vec<String>>,
    #[serde(default)]
    initial_phrase: Option<String>,
}

impl Reference {
    /// Recovers a reference from a compiled corpus line.
    pub fn from_corpus_line(line: &CorpusLine) -> Result<Self> {
        let segs = Segments::parse(&line.input)?;
        let options = segs.options.as_deref().map(option_labels);
        let initial_phrase = field_values(&segs.custom_fields)
            .into_iter()
            .find(|(tok, _)| tok == "[INITIAL PHRASE]")
            .map(|(_, v)| v);
        Ok(Reference {
            instance_id: line.instance_id.clone(),
            references: vec![line.output.clone()],
            options,
            initial_phrase,
        })
    }
}

/// The strings a correct prediction may take for a rendered option segment:
/// the names of a name list, or `1..n` for an indexed list.
fn option_labels(segment: &str) -> Vec<String> {
    let body = match segment.find(OPTIONS) {
        Some(i) => segment[i + OPTIONS.len()..].trim_start(),
        None => segment,
    };
    if body.starts_with("1: ") {
        let mut n = 1;
        while body.contains(&format!(", {}: ", n + 1)) {
            n += 1;
        }
        (1..=n).map(|i| i.to_string()).collect()
    } else {
        body.split(" | ").map(str::to_owned).collect()
    }
}

/// `[TOKEN] value` pairs of a rendered custom-field segment.
fn field_values(segment: &str) -> Vec<(String, String)> {
    let marks: Vec<_> = TOKEN_PATTERN.find_iter(segment).collect();
    marks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let end = marks.get(i + 1).map_or(segment.len(), |n| n.start());
            (m.as_str().to_owned(), segment[m.end()..end].trim().to_owned())
        })
        .collect()
}

fn read_jsonl<T, F>(path: &Path, mut parse: F) -> Result<Vec<T>>
where
    F: FnMut(&str) -> std::result::Result<T, String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse(&line).map_err(|e| Error::Metric(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

fn from_json<T: DeserializeOwned>(line: &str) -> std::result::Result<T, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    read_jsonl(path.as_ref(), |line| {
        let p: Prediction = from_json(line)?;
        if p.text.is_none() && p.token_scores.is_none() {
            return Err("prediction has neither text nor token_scores".into());
        }
        if let Some(s) = p.token_scores {
            if !(s.yes >= 0.0 && s.no >= 0.0) {
                return Err(format!("negative token score ({}, {})", s.yes, s.no));
            }
        }
        Ok(p)
    })
}

pub fn read_references(path: impl AsRef<Path>) -> Result<Vec<Reference>> {
    read_jsonl(path.as_ref(), |line| {
        let value: serde_json::Value = from_json(line)?;
        if value.get("input").is_some() {
            let corpus: CorpusLine = serde_json::from_value(value).map_err(|e| e.to_string())?;
            return Reference::from_corpus_line(&corpus).map_err(|e| e.to_string());
        }
        let raw: RawReference = serde_json::from_value(value).map_err(|e| e.to_string())?;
        let mut references = raw.references.unwrap_or_default();
        references.extend(raw.reference);
        if references.is_empty() {
            return Err("reference record has no reference text".into());
        }
        Ok(Reference {
            instance_id: raw.instance_id,
            references,
            options: raw.options,
            initial_phrase: raw.initial_phrase,
        })
    })
}

pub fn read_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    read_jsonl(path.as_ref(), |line| {
        let r: RatingRecord = from_json(line)?;
        if !r.rating.is_finite() {
            return Err("rating must be finite".into());
        }
        Ok(r)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub references: usize,
    pub predictions: usize,
    /// References with a matching prediction.
    pub matched: usize,
    /// References without a prediction; scored as empty output.
    pub missing_predictions: usize,
    /// Predictions whose instance id has no reference; ignored.
    pub unmatched_predictions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating_pairs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub spearman: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<f64>,
    pub counts: ScoreCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn best(cand: &str, refs: &[String], f: fn(&str, &str) -> f64) -> f64 {
    refs.iter().map(|r| f(cand, r)).fold(0.0, f64::max)
}

/// Scores predictions with the metric profile registered for `spec`.
pub fn score_task(
    spec: &TaskSpec,
    preds: &[Prediction],
    refs: &[Reference],
    ratings: Option<&[RatingRecord]>,
) -> Result<ScoreReport> {
    if spec.metrics.is_empty() {
        return Err(Error::Metric(format!("no metric profile for task {}", spec.name)));
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.instance_id.as_str(), p).is_some() {
            return Err(Error::Metric(format!("duplicate prediction for {}", p.instance_id)));
        }
    }
    let mut ref_ids = HashMap::with_capacity(refs.len());
    for r in refs {
        if ref_ids.insert(r.instance_id.as_str(), ()).is_some() {
            return Err(Error::Metric(format!("duplicate reference for {}", r.instance_id)));
        }
    }

    let aligned: Vec<(&Reference, Option<&Prediction>)> =
        refs.iter().map(|r| (r, by_id.get(r.instance_id.as_str()).copied())).collect();
    let matched = aligned.iter().filter(|(_, p)| p.is_some()).count();
    let mut counts = ScoreCounts {
        references: refs.len(),
        predictions: preds.len(),
        matched,
        missing_predictions: refs.len() - matched,
        unmatched_predictions: preds.iter().filter(|p| !ref_ids.contains_key(p.instance_id.as_str())).count(),
        rating_pairs: None,
    };
    let mut warnings = Vec::new();
    if counts.missing_predictions > 0 {
        warnings.push(format!("{} references have no prediction", counts.missing_predictions));
    }
    if counts.unmatched_predictions > 0 {
        warnings.push(format!("{} predictions have no reference", counts.unmatched_predictions));
    }

    let texts: Vec<&str> = aligned
        .iter()
        .map(|(_, p)| p.and_then(|p| p.text.as_deref()).unwrap_or(""))
        .collect();
    let mut metrics = BTreeMap::new();
    let mut spearman_out = BTreeMap::new();

    for &kind in &spec.metrics {
        match kind {
            MetricKind::Accuracy => {
                let labels: Vec<Option<String>> = aligned.iter().map(|(_, p)| p.and_then(Prediction::label)).collect();
                let golds: Vec<&str> = aligned.iter().map(|(r, _)| r.references[0].as_str()).collect();
                let have_options = aligned.iter().all(|(r, _)| r.options.is_some());
                let options: Vec<Vec<String>> = aligned
                    .iter()
                    .map(|(r, _)| r.options.clone().unwrap_or_default())
                    .collect();
                let s = classification_accuracy(&labels, &golds, &options)?;
                metrics.insert("accuracy".to_owned(), s.accuracy);
                if have_options {
                    metrics.insert("out_of_option_rate".to_owned(), s.out_of_option_rate);
                } else {
                    warnings.push("references lack option lists; out_of_option_rate not computed".into());
                }
            }
            MetricKind::Bleu2 => {
                let v: Vec<f64> = aligned.par_iter().zip(&texts).map(|((r, _), t)| bleu2(t, &r.references)).collect();
                metrics.insert(kind.as_str().to_owned(), mean(&v));
            }
            MetricKind::RougeL => {
                let v: Vec<f64> = aligned.par_iter().zip(&texts).map(|((r, _), t)| best(t, &r.references, rouge_l)).collect();
                metrics.insert(kind.as_str().to_owned(), mean(&v));
            }
            MetricKind::KnowledgeF1 => {
                let v: Vec<f64> =
                    aligned.par_iter().zip(&texts).map(|((r, _), t)| best(t, &r.references, knowledge_f1)).collect();
                metrics.insert(kind.as_str().to_owned(), mean(&v));
            }
            MetricKind::BeginsWith => {
                let hits: Vec<f64> = aligned
                    .iter()
                    .zip(&texts)
                    .filter_map(|((r, _), t)| r.initial_phrase.as_deref().map(|q| f64::from(u8::from(begins_with(t, q)))))
                    .collect();
                if hits.len() < aligned.len() {
                    warnings.push(format!(
                        "{} references lack an initial phrase; begins_with uses the other {}",
                        aligned.len() - hits.len(),
                        hits.len()
                    ));
                }
                if !hits.is_empty() {
                    metrics.insert(kind.as_str().to_owned(), mean(&hits));
                }
            }
            MetricKind::Spearman => {
                let Some(ratings) = ratings else {
                    warnings.push("spearman needs a ratings file".into());
                    continue;
                };
                let mut scores = HashMap::new();
                for (r, p) in &aligned {
                    let Some(s) = p.and_then(|p| p.token_scores) else { continue };
                    match relevance_score(s.yes, s.no) {
                        Ok(v) => {
                            scores.insert(r.instance_id.clone(), v);
                        }
                        Err(e) => warnings.push(format!("{}: {e}", r.instance_id)),
                    }
                }
                counts.rating_pairs = Some(ratings.iter().filter(|r| scores.contains_key(&r.instance_id)).count());
                for (field, rho) in correlate_ratings(&scores, ratings) {
                    spearman_out.insert(field.as_str().to_owned(), rho);
                }
                if spearman_out.is_empty() {
                    warnings.push("no rating field had two or more non-constant joined pairs".into());
                }
            }
        }
    }

    let grades: Vec<f64> = aligned.iter().filter_map(|(_, p)| p.and_then(|p| p.grade)).collect();
    Ok(ScoreReport {
        task: spec.name.clone(),
        metrics,
        spearman: spearman_out,
        grade: (!grades.is_empty()).then(|| mean(&grades)),
        counts,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RatingField;
    use crate::registry::Registry;

    fn pred(id: &str, text: &str) -> Prediction {
        Prediction {
            instance_id: id.into(),
            text: Some(text.into()),
            token_scores: None,
            grade: None,
        }
    }

    fn reference(id: &str, text: &str) -> Reference {
        Reference {
            instance_id: id.into(),
            references: vec![text.into()],
            options: None,
            initial_phrase: None,
        }
    }

    #[test]
    fn identical_generation_scores_one() {
        let reg = Registry::builtin();
        let spec = reg.get("begins with").unwrap();
        let mut refs = vec![reference("a", "Please describe the suitcase."), reference("b", "It is blue and small.")];
        for r in &mut refs {
            r.initial_phrase = Some(r.references[0].split(' ').next().unwrap().to_owned());
        }
        let preds: Vec<_> = refs.iter().map(|r| pred(&r.instance_id, &r.references[0])).collect();
        let report = score_task(spec, &preds, &refs, None).unwrap();
        assert_eq!(report.metrics["bleu2"], 1.0);
        assert_eq!(report.metrics["rouge_l"], 1.0);
        assert_eq!(report.metrics["begins_with"], 1.0);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn missing_predictions_are_counted() {
        let reg = Registry::builtin();
        let spec = reg.get("response generation").unwrap();
        let refs = vec![reference("a", "x y"), reference("b", "x y")];
        let report = score_task(spec, &[pred("a", "x y"), pred("zz", "q")], &refs, None).unwrap();
        assert_eq!(report.counts.missing_predictions, 1);
        assert_eq!(report.counts.unmatched_predictions, 1);
        assert_eq!(report.metrics["bleu2"], 0.5);
    }

    #[test]
    fn relevance_with_ratings() {
        let reg = Registry::builtin();
        let spec = reg.get("eval relevance").unwrap();
        let refs: Vec<_> = (0..4)
            .map(|i| Reference {
                options: Some(vec!["yes".into(), "no".into()]),
                ..reference(&format!("i{i}"), "yes")
            })
            .collect();
        let preds: Vec<_> = (0..4)
            .map(|i| Prediction {
                instance_id: format!("i{i}"),
                text: None,
                token_scores: Some(TokenScores {
                    yes: 0.1 * i as f64 + 0.05,
                    no: 0.3,
                }),
                grade: None,
            })
            .collect();
        let ratings: Vec<_> = (0..4)
            .map(|i| RatingRecord {
                instance_id: format!("i{i}"),
                rating_field: RatingField::Overall,
                rating: i as f64,
            })
            .collect();
        let report = score_task(spec, &preds, &refs, Some(&ratings)).unwrap();
        assert_eq!(report.spearman["overall"], 1.0);
        assert_eq!(report.metrics["accuracy"], 0.25);
        assert_eq!(report.metrics["out_of_option_rate"], 0.0);
    }

    #[test]
    fn no_profile_is_an_error() {
        let mut spec = Registry::builtin().get("response generation").unwrap().clone();
        spec.metrics.clear();
        let err = score_task(&spec, &[], &[], None).unwrap_err();
        assert!(err.to_string().contains("no metric profile"));
    }

    #[test]
    fn option_label_recovery() {
        assert_eq!(option_labels("The possible intents are: [OPTIONS] a | b c"), vec!["a", "b c"]);
        assert_eq!(option_labels("[OPTIONS] 1: x, y, 2: z, 3: w"), vec!["1", "2", "3"]);
        assert_eq!(
            field_values("[EMOTION] sad [INITIAL PHRASE] Please describe"),
            vec![
                ("[EMOTION]".to_string(), "sad".to_string()),
                ("[INITIAL PHRASE]".to_string(), "Please describe".to_string())
            ]
        );
    }
}
