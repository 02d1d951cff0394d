//! Vote-histogram ingestion and binary labeling.
//!
//! Metadata lines carry a record index, an image id, and ten vote counts for
//! ratings 1..=10. The label of an image is decided by its mode rating (ties
//! broken toward the lowest rating): 1..=4 is LOW, 7..=10 is HIGH, and 5..=6
//! is EXCLUDED from the binary task. Splits are stratified per class and
//! fully determined by the seed. The manifest is line-oriented, tab-separated
//! text so goldens diff cleanly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AvaError {
    #[error("vote histogram has no votes")]
    EmptyHistogram,
    #[error("record `{id}`: vote histogram has no votes")]
    EmptyHistogramRecord { id: String },
    #[error("rating {0} is outside 1..=10")]
    InvalidRating(u8),
    #[error("record `{id}` has no derived label; derive labels before this step")]
    Unlabeled { id: String },
    #[error("no {class} records present; cannot build stratified splits")]
    ClassMissing { class: &'static str },
    #[error("split ratios must be positive and sum to 1, got {detail}")]
    BadRatios { detail: String },
    #[error("manifest line {line}: unknown label token `{token}`")]
    BadLabel { line: usize, token: String },
    #[error("manifest line {line}: unknown split token `{token}`")]
    BadSplit { line: usize, token: String },
    #[error("manifest line {line}: {detail}")]
    ManifestFormat { line: usize, detail: String },
    #[error("record `{id}`: {field} contains a tab or newline and cannot be written")]
    UnencodableField { id: String, field: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> AvaError {
    AvaError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Votes per rating; `counts[r - 1]` is the number of votes for rating `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteHistogram {
    counts: [u32; 10],
}

impl VoteHistogram {
    pub fn new(counts: [u32; 10]) -> VoteHistogram {
        VoteHistogram { counts }
    }

    pub fn counts(&self) -> &[u32; 10] {
        &self.counts
    }

    pub fn count_for(&self, rating: u8) -> u32 {
        assert!((1..=10).contains(&rating), "rating {rating} out of range");
        self.counts[rating as usize - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AestheticLabel {
    Low,
    High,
    Excluded,
}

impl AestheticLabel {
    pub fn token(&self) -> &'static str {
        match self {
            AestheticLabel::Low => "LOW",
            AestheticLabel::High => "HIGH",
            AestheticLabel::Excluded => "EXCLUDED",
        }
    }

    fn parse(token: &str) -> Option<AestheticLabel> {
        match token {
            "LOW" => Some(AestheticLabel::Low),
            "HIGH" => Some(AestheticLabel::High),
            "EXCLUDED" => Some(AestheticLabel::Excluded),
            _ => None,
        }
    }
}

impl fmt::Display for AestheticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn token(&self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
            Split::None => "NONE",
        }
    }

    pub fn parse(token: &str) -> Option<Split> {
        match token {
            "TRAIN" => Some(Split::Train),
            "VAL" => Some(Split::Val),
            "TEST" => Some(Split::Test),
            "NONE" => Some(Split::None),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub histogram: VoteHistogram,
    pub label: Option<AestheticLabel>,
    pub split: Split,
}

/// One rejected metadata line; parsing continues past it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub reason: LineIssueReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineIssueReason {
    TooFewColumns { found: usize },
    BadCount { column: usize, token: String },
}

impl fmt::Display for LineIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reason {
            LineIssueReason::TooFewColumns { found } => write!(
                f,
                "line {}: expected at least 12 columns, found {found}",
                self.line
            ),
            LineIssueReason::BadCount { column, token } => write!(
                f,
                "line {}: column {column} is not a vote count: `{token}`",
                self.line
            ),
        }
    }
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<ImageRecord>,
    pub issues: Vec<LineIssue>,
}

/// Parse whitespace-delimited metadata: record index, image id, ten vote
/// counts, then ignored trailing columns. Output order is input order;
/// malformed lines become issues instead of aborting the pass.
pub fn parse_metadata<R: BufRead>(reader: R) -> std::io::Result<ParseOutcome> {
    let mut outcome = ParseOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 12 {
            outcome.issues.push(LineIssue {
                line: lineno,
                reason: LineIssueReason::TooFewColumns { found: cols.len() },
            });
            continue;
        }
        let mut counts = [0u32; 10];
        let mut bad = None;
        for (slot, (offset, tok)) in counts.iter_mut().zip(cols[2..12].iter().enumerate()) {
            match tok.parse::<u32>() {
                Ok(v) => *slot = v,
                Err(_) => {
                    bad = Some(LineIssue {
                        line: lineno,
                        reason: LineIssueReason::BadCount {
                            column: offset + 3,
                            token: (*tok).to_string(),
                        },
                    });
                    break;
                }
            }
        }
        if let Some(issue) = bad {
            outcome.issues.push(issue);
            continue;
        }
        let id = cols[1].to_string();
        outcome.records.push(ImageRecord {
            path: PathBuf::from(format!("{id}.jpg")),
            id,
            histogram: VoteHistogram::new(counts),
            label: None,
            split: Split::None,
        });
    }
    Ok(outcome)
}

/// Rating with the most votes; ties break toward the lowest rating.
pub fn mode_rating(h: &VoteHistogram) -> Result<u8, AvaError> {
    if h.total() == 0 {
        return Err(AvaError::EmptyHistogram);
    }
    let mut best_rating = 1u8;
    let mut best_count = 0u32;
    for rating in 1..=10u8 {
        let count = h.count_for(rating);
        if count > best_count {
            best_count = count;
            best_rating = rating;
        }
    }
    Ok(best_rating)
}

pub fn binarize(rating: u8) -> Result<AestheticLabel, AvaError> {
    match rating {
        1..=4 => Ok(AestheticLabel::Low),
        5 | 6 => Ok(AestheticLabel::Excluded),
        7..=10 => Ok(AestheticLabel::High),
        other => Err(AvaError::InvalidRating(other)),
    }
}

pub fn label_for(h: &VoteHistogram) -> Result<AestheticLabel, AvaError> {
    binarize(mode_rating(h)?)
}

/// Derive and store the label of every record.
pub fn derive_labels(records: &mut [ImageRecord]) -> Result<(), AvaError> {
    for rec in records.iter_mut() {
        let label = label_for(&rec.histogram).map_err(|e| match e {
            AvaError::EmptyHistogram => AvaError::EmptyHistogramRecord { id: rec.id.clone() },
            other => other,
        })?;
        rec.label = Some(label);
    }
    Ok(())
}

/// Images per mode rating, plus the total record count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RatingSummary {
    pub counts: [u64; 10],
    pub total: u64,
}

impl fmt::Display for RatingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>7}  {:>10}", "rating", "images")?;
        for (idx, count) in self.counts.iter().enumerate() {
            writeln!(f, "{:>7}  {:>10}", idx + 1, count)?;
        }
        write!(f, "{:>7}  {:>10}", "total", self.total)
    }
}

pub fn summarize_by_rating(records: &[ImageRecord]) -> Result<RatingSummary, AvaError> {
    let mut summary = RatingSummary::default();
    for rec in records {
        let rating = mode_rating(&rec.histogram).map_err(|e| match e {
            AvaError::EmptyHistogram => AvaError::EmptyHistogramRecord { id: rec.id.clone() },
            other => other,
        })?;
        summary.counts[rating as usize - 1] += 1;
        summary.total += 1;
    }
    Ok(summary)
}

/// Largest-remainder split of `n` into three parts proportional to `ratios`:
/// each part is within one of its exact quota and the parts sum to `n`.
fn apportion(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let quotas = [
        n as f64 * ratios.0,
        n as f64 * ratios.1,
        n as f64 * ratios.2,
    ];
    let mut parts = [0usize; 3];
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut assigned = 0usize;
    for (i, q) in quotas.iter().enumerate() {
        parts[i] = q.floor() as usize;
        assigned += parts[i];
        fractions.push((i, q - q.floor()));
    }
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fractions.iter().take(n.saturating_sub(assigned)) {
        parts[*i] += 1;
    }
    parts
}

/// Assign TRAIN/VAL/TEST stratified by class. EXCLUDED records keep split
/// NONE. Deterministic for a fixed seed.
pub fn make_splits(
    records: &mut [ImageRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(), AvaError> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if ratios.0 <= 0.0 || ratios.1 <= 0.0 || ratios.2 <= 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(AvaError::BadRatios {
            detail: format!("({}, {}, {})", ratios.0, ratios.1, ratios.2),
        });
    }
    let mut low_idx = Vec::new();
    let mut high_idx = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        match rec.label {
            Some(AestheticLabel::Low) => low_idx.push(i),
            Some(AestheticLabel::High) => high_idx.push(i),
            Some(AestheticLabel::Excluded) => {}
            None => {
                return Err(AvaError::Unlabeled {
                    id: records[i].id.clone(),
                })
            }
        }
    }
    if low_idx.is_empty() {
        return Err(AvaError::ClassMissing { class: "LOW" });
    }
    if high_idx.is_empty() {
        return Err(AvaError::ClassMissing { class: "HIGH" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [&mut low_idx, &mut high_idx] {
        class.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(class.len(), ratios);
        for (pos, &rec_idx) in class.iter().enumerate() {
            records[rec_idx].split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    for rec in records.iter_mut() {
        if rec.label == Some(AestheticLabel::Excluded) {
            rec.split = Split::None;
        }
    }
    Ok(())
}

const MANIFEST_FIELDS: usize = 14;

/// Write one record per line: id, path, ten counts, label, split, all
/// tab-separated. Labels must be derived first.
pub fn write_manifest(records: &[ImageRecord], path: &Path) -> Result<(), AvaError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for rec in records {
        let label = rec.label.ok_or_else(|| AvaError::Unlabeled {
            id: rec.id.clone(),
        })?;
        let path_str = rec.path.display().to_string();
        for (field, name) in [(&rec.id, "id"), (&path_str, "path")] {
            if field.contains('\t') || field.contains('\n') {
                return Err(AvaError::UnencodableField {
                    id: rec.id.clone(),
                    field: name,
                });
            }
        }
        write!(out, "{}\t{}", rec.id, path_str).map_err(|e| io_err(path, e))?;
        for c in rec.histogram.counts() {
            write!(out, "\t{c}").map_err(|e| io_err(path, e))?;
        }
        writeln!(out, "\t{}\t{}", label, rec.split).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>, AvaError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != MANIFEST_FIELDS {
            return Err(AvaError::ManifestFormat {
                line: lineno,
                detail: format!(
                    "expected {MANIFEST_FIELDS} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        let mut counts = [0u32; 10];
        for (slot, tok) in counts.iter_mut().zip(&fields[2..12]) {
            *slot = tok.parse().map_err(|_| AvaError::ManifestFormat {
                line: lineno,
                detail: format!("bad vote count `{tok}`"),
            })?;
        }
        let label = AestheticLabel::parse(fields[12]).ok_or_else(|| AvaError::BadLabel {
            line: lineno,
            token: fields[12].to_string(),
        })?;
        let split = Split::parse(fields[13]).ok_or_else(|| AvaError::BadSplit {
            line: lineno,
            token: fields[13].to_string(),
        })?;
        records.push(ImageRecord {
            id: fields[0].to_string(),
            path: PathBuf::from(fields[1]),
            histogram: VoteHistogram::new(counts),
            label: Some(label),
            split,
        });
    }
    Ok(records)
}
