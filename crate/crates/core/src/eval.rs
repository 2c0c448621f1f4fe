//! Detection-to-ground-truth matching, precision/recall, and the
//! Table 7-shaped report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{by_score_desc, iou, BoundingBox, Detection};
use crate::image::{draw_box, draw_line, to_grayscale, Image, BLUE, RED, WHITE};
use crate::floors::FloorLine;

/// True-positive, false-positive and false-negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }

    pub fn precision_recall(&self) -> (f64, f64) {
        precision_recall(self.tp, self.fp, self.fn_)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub counts: Counts,
    /// `(detection index, ground-truth index, iou)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching: detections in descending score order each
/// take the unmatched ground-truth box of highest IOU at or above the
/// threshold (ties to the box with the smallest `(x, y, w, h)`).
pub fn match_detections(dets: &[Detection], gt: &[BoundingBox], iou_threshold: f64) -> MatchResult {
    debug_assert!(iou_threshold > 0.0 && iou_threshold <= 1.0);
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(&dets[a], &dets[b]).then(a.cmp(&b)));
    let mut taken = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for &d in &order {
        let mut best: Option<(f64, usize)> = None;
        for (g, b) in gt.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, b);
            if v < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, bg)) => v > bv || (v == bv && key(b) < key(&gt[bg])),
            };
            if better {
                best = Some((v, g));
            }
        }
        if let Some((v, g)) = best {
            taken[g] = true;
            pairs.push((d, g, v));
        }
    }
    let tp = pairs.len();
    MatchResult { counts: Counts { tp, fp: dets.len() - tp, fn_: gt.len() - tp }, pairs }
}

fn key(b: &BoundingBox) -> (i32, i32, i32, i32) {
    (b.x, b.y, b.w, b.h)
}

/// Eq. 2 and Eq. 3. With no detections precision is 1 if nothing was
/// missed and 0 otherwise; with no ground truth recall is 1.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        if fn_ == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    (precision, recall)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Cascade,
    Svm,
}

impl ClassifierKind {
    pub fn label(self) -> &'static str {
        match self {
            ClassifierKind::Cascade => "Cascade Classifier",
            ClassifierKind::Svm => "Linear SVM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cascade" => Ok(ClassifierKind::Cascade),
            "svm" => Ok(ClassifierKind::Svm),
            other => Err(Error::InvalidParameter(format!("unknown classifier {other:?}"))),
        }
    }
}

/// Cumulative stage combinations of Table 7.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSet {
    Classifier,
    FloorFilter,
    SpacingSelect,
}

impl StageSet {
    pub const ALL: [StageSet; 3] = [StageSet::Classifier, StageSet::FloorFilter, StageSet::SpacingSelect];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classifier" | "raw" => Ok(StageSet::Classifier),
            "floor" | "floor_filter" => Ok(StageSet::FloorFilter),
            "spacing" | "spacing_select" => Ok(StageSet::SpacingSelect),
            other => Err(Error::InvalidParameter(format!("unknown stage {other:?}"))),
        }
    }
}

/// Row label in Table 7's wording.
pub fn row_label(kind: ClassifierKind, stage: StageSet) -> String {
    match stage {
        StageSet::Classifier => kind.label().to_string(),
        StageSet::FloorFilter => format!("{} and Floor Detection", kind.label()),
        StageSet::SpacingSelect => format!("{} and Floor Detection and Space Estimation", kind.label()),
    }
}

/// Table 7's row order: stage-major, cascade before SVM.
pub fn table7_rows() -> Vec<(ClassifierKind, StageSet)> {
    StageSet::ALL
        .iter()
        .flat_map(|&s| [(ClassifierKind::Cascade, s), (ClassifierKind::Svm, s)])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub detections: usize,
    pub ground_truth: usize,
}

/// One row of the summary: micro-averaged over the test images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub classifier: ClassifierKind,
    pub stage: StageSet,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub per_image: Vec<ImageEval>,
}

impl EvalReport {
    pub fn from_images(classifier: ClassifierKind, stage: StageSet, per_image: Vec<ImageEval>) -> Self {
        let counts = per_image.iter().fold(Counts::default(), |acc, e| acc.add(e.counts));
        let (precision, recall) = counts.precision_recall();
        EvalReport { label: row_label(classifier, stage), classifier, stage, counts, precision, recall, per_image }
    }
}

pub const CSV_HEADER: &str = "method,precision,recall,tp,fp,fn";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(rows: &[EvalReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{},{},{}",
            csv_field(&r.label),
            r.precision,
            r.recall,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_
        );
    }
    out
}

/// Aligned plain-text table in Table 7's layout.
pub fn report_text(rows: &[EvalReport]) -> String {
    let head = "Method";
    let width = rows.iter().map(|r| r.label.len()).chain([head.len()]).max().unwrap();
    let mut out = String::new();
    let _ = writeln!(out, "{head:<width$}  {:>9}  {:>9}  {:>6}  {:>6}  {:>6}", "Precision", "Recall", "tp", "fp", "fn");
    let _ = writeln!(out, "{}", "-".repeat(width + 2 + 9 + 2 + 9 + 3 * 8));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>6}  {:>6}  {:>6}",
            r.label, r.precision, r.recall, r.counts.tp, r.counts.fp, r.counts.fn_
        );
    }
    out
}

#[derive(Serialize)]
struct ImageLine<'a> {
    method: &'a str,
    #[serde(flatten)]
    image: &'a ImageEval,
}

/// Per-image breakdown of every row, one JSON object per line.
pub fn report_jsonl(rows: &[EvalReport]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        for e in &r.per_image {
            out.push_str(&serde_json::to_string(&ImageLine { method: &r.label, image: e })?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parse a report CSV written by [`report_csv`] (per-image data is not stored there).
pub fn parse_report_csv(text: &str) -> Result<Vec<(String, f64, f64, Counts)>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidParameter("not an evaluation report CSV".into()));
    }
    let bad = |l: &str| Error::InvalidParameter(format!("malformed report row {l:?}"));
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let (label, rest) = if let Some(stripped) = line.strip_prefix('"') {
            let end = stripped.find("\",").ok_or_else(|| bad(line))?;
            (stripped[..end].replace("\"\"", "\""), &stripped[end + 2..])
        } else {
            let (l, r) = line.split_once(',').ok_or_else(|| bad(line))?;
            (l.to_string(), r)
        };
        let f: Vec<&str> = rest.split(',').collect();
        if f.len() != 5 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        let cnt = |s: &str| s.parse::<usize>().map_err(|_| bad(line));
        out.push((label, num(f[0])?, num(f[1])?, Counts { tp: cnt(f[2])?, fp: cnt(f[3])?, fn_: cnt(f[4])? }));
    }
    Ok(out)
}

/// RGB overlay: floors in white, ground truth in red, detections in blue.
pub fn render_overlay(img: &Image, dets: &[Detection], gt: &[BoundingBox], floors: &[FloorLine]) -> Image {
    let mut out = to_grayscale(img).to_rgb();
    for f in floors {
        draw_line(&mut out, f.slope, f.intercept, WHITE);
    }
    for b in gt {
        draw_box(&mut out, b, RED, 2);
    }
    for d in dets {
        draw_box(&mut out, &d.bbox, BLUE, 2);
    }
    out
}
