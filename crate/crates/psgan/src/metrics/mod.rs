//! Recognition metrics: word accuracy, edit distance, character error
//! rate, and dataset/per-image aggregation over a pluggable recognizer.

pub mod recognizer;

pub use recognizer::{
    evaluate_targets, training_proxy, OracleRecognizer, ProxyReport, Recognizer, ToyRecognizer,
};

use crate::error::{Error, Result};
use crate::mask::MaskSet;

/// 1 iff the strings match exactly after case folding.
pub fn word_accuracy(pred: &str, truth: &str) -> u32 {
    u32::from(pred.to_lowercase() == truth.to_lowercase())
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1)
                .min(row[j] + 1)
                .min(diag + usize::from(lc != sc));
            diag = up;
        }
    }
    row[short.len()]
}

/// Case-folded edit distance normalized by the truth length.
pub fn char_error_rate(pred: &str, truth: &str) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("char_error_rate", "empty truth"));
    }
    let (p, t) = (pred.to_lowercase(), truth.to_lowercase());
    Ok(edit_distance(&p, &t) as f64 / t.chars().count() as f64)
}

/// Score of one recognized region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub correct: bool,
    pub cer: f64,
}

/// The reported metric set: every fraction is reported both as a flat mean
/// over regions and as a mean of per-image means. `wer` is the word-level
/// error (1 - accuracy); `cer` is the character-level error rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_image_accuracy: f64,
    pub wer: f64,
    pub per_image_wer: f64,
    pub cer: f64,
    pub per_image_cer: f64,
    pub n_regions: usize,
    pub n_images: usize,
}

impl MetricsReport {
    /// Human-readable two-column table.
    pub fn table(&self) -> String {
        let rows = [
            ("accuracy", self.accuracy),
            ("per_image_accuracy", self.per_image_accuracy),
            ("wer", self.wer),
            ("per_image_wer", self.per_image_wer),
            ("cer", self.cer),
            ("per_image_cer", self.per_image_cer),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<20} {v:.4}\n"));
        }
        out.push_str(&format!("{:<20} {}\n", "n_regions", self.n_regions));
        out.push_str(&format!("{:<20} {}\n", "n_images", self.n_images));
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn record(&self) -> String {
        format!(
            "accuracy={}\nper_image_accuracy={}\nwer={}\nper_image_wer={}\ncer={}\nper_image_cer={}\nn_regions={}\nn_images={}\n",
            self.accuracy,
            self.per_image_accuracy,
            self.wer,
            self.per_image_wer,
            self.cer,
            self.per_image_cer,
            self.n_regions,
            self.n_images
        )
    }
}

/// Folds per-region scores, grouped by image, into a report. Dataset-level
/// values are flat means over all regions; per-image values average each
/// image's own mean. Empty groups (or no groups) are rejected.
pub fn aggregate(groups: &[Vec<RegionScore>]) -> Result<MetricsReport> {
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::EmptyReduction { op: "aggregate" });
    }
    let n_images = groups.len();
    let n_regions: usize = groups.iter().map(|g| g.len()).sum();
    let mut acc_flat = 0.0;
    let mut cer_flat = 0.0;
    let mut acc_img = 0.0;
    let mut cer_img = 0.0;
    for g in groups {
        let ga: f64 = g.iter().map(|r| f64::from(r.correct)).sum();
        let gc: f64 = g.iter().map(|r| r.cer).sum();
        acc_flat += ga;
        cer_flat += gc;
        acc_img += ga / g.len() as f64;
        cer_img += gc / g.len() as f64;
    }
    let accuracy = acc_flat / n_regions as f64;
    let per_image_accuracy = acc_img / n_images as f64;
    Ok(MetricsReport {
        accuracy,
        per_image_accuracy,
        wer: 1.0 - accuracy,
        per_image_wer: 1.0 - per_image_accuracy,
        cer: cer_flat / n_regions as f64,
        per_image_cer: cer_img / n_images as f64,
        n_regions,
        n_images,
    })
}

/// One image to score: planar `[3,S,S]` pixels in [-1,1] plus the region
/// masks and the strings the regions are supposed to read as.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub size: usize,
    pub pixels: Vec<f32>,
    pub masks: MaskSet,
    pub truths: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RegionDetail {
    pub image_id: String,
    pub region_idx: usize,
    pub truth: String,
    pub pred: String,
    pub correct: bool,
    pub cer: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub details: Vec<RegionDetail>,
    /// Regions where the recognizer itself failed (scored as empty).
    pub n_failures: usize,
}

fn quote_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Evaluation {
    /// `image_id,region_idx,truth,pred,acc,cer` lines.
    pub fn detail_lines(&self) -> String {
        let mut out = String::new();
        for d in &self.details {
            out.push_str(&format!(
                "{},{},{},{},{},{:.4}\n",
                quote_field(&d.image_id),
                d.region_idx,
                quote_field(&d.truth),
                quote_field(&d.pred),
                u32::from(d.correct),
                d.cer
            ));
        }
        out
    }
}

/// Runs the recognizer over every region of every case and aggregates.
/// A recognizer error on a region scores as an empty prediction.
pub fn evaluate<R: Recognizer>(cases: &[EvalCase], recognizer: &R) -> Result<Evaluation> {
    let mut groups = Vec::with_capacity(cases.len());
    let mut details = Vec::new();
    let mut n_failures = 0;
    for case in cases {
        if case.truths.len() != case.masks.len() {
            return Err(Error::invalid(
                "evaluate",
                format!(
                    "case {}: {} truths for {} masks",
                    case.id,
                    case.truths.len(),
                    case.masks.len()
                ),
            ));
        }
        let mut scores = Vec::with_capacity(case.masks.len());
        for (i, (mask, truth)) in case.masks.iter().zip(&case.truths).enumerate() {
            let pred = match recognizer.recognize(&case.pixels, case.size, mask) {
                Ok(p) => p,
                Err(_) => {
                    n_failures += 1;
                    String::new()
                }
            };
            let score = RegionScore {
                correct: word_accuracy(&pred, truth) == 1,
                cer: char_error_rate(&pred, truth)?,
            };
            scores.push(score);
            details.push(RegionDetail {
                image_id: case.id.clone(),
                region_idx: i,
                truth: truth.clone(),
                pred,
                correct: score.correct,
                cer: score.cer,
            });
        }
        groups.push(scores);
    }
    Ok(Evaluation {
        report: aggregate(&groups)?,
        details,
        n_failures,
    })
}
