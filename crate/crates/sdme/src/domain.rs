//! Classification data: elicited points, apparent proportions, per-subject
//! performance measures, and the assembled dataset consumed by the fitters.
//!
//! Subject and image ids are arbitrary integers externally; internally they
//! are remapped to dense 0-based indices with the id maps kept alongside.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::spatial::SpatialGraph;
use crate::{Result, SdmeError};

/// Which of the three data regimes a site belongs to.
///
/// * `Training`: classifications and ground truth available (d = d̂ = 1)
/// * `Testing`: classifications only (d = 0, d̂ = 1)
/// * `Unsampled`: neither (d = d̂ = 0)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Training,
    Testing,
    Unsampled,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Training => "training",
            Partition::Testing => "testing",
            Partition::Unsampled => "unsampled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Partition::Training),
            "testing" => Ok(Partition::Testing),
            "unsampled" => Ok(Partition::Unsampled),
            other => Err(SdmeError::InvalidInput(format!(
                "unknown partition label '{other}'"
            ))),
        }
    }
}

/// One elicited point: subject `i` labelled point `k` of image `j` as `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub subject_id: i64,
    pub image_id: i64,
    /// 1-based point index within the image, `1..=q`.
    pub point_id: u32,
    pub z: u8,
    pub true_label: Option<u8>,
}

/// One georeferenced image site with covariates and partition flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site_id: i64,
    pub lon: f64,
    pub lat: f64,
    pub partition: Partition,
    /// Known latent proportion; present iff `partition == Training`.
    pub y_true: Option<f64>,
    pub covariates: Vec<f64>,
}

/// All sites, ordered by dense site index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTable {
    pub sites: Vec<SiteRecord>,
    pub covariate_names: Vec<String>,
}

impl SiteTable {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn partition_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in &self.sites {
            match s.partition {
                Partition::Training => c.0 += 1,
                Partition::Testing => c.1 += 1,
                Partition::Unsampled => c.2 += 1,
            }
        }
        c
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.sites {
            if !seen.insert(s.site_id) {
                return Err(SdmeError::InvalidInput(format!(
                    "duplicate site_id {} in site table",
                    s.site_id
                )));
            }
            if s.covariates.len() != self.covariate_names.len() {
                return Err(SdmeError::InvalidInput(format!(
                    "site {} has {} covariates, expected {}",
                    s.site_id,
                    s.covariates.len(),
                    self.covariate_names.len()
                )));
            }
            match (s.partition, s.y_true) {
                (Partition::Training, None) => {
                    return Err(SdmeError::InvalidInput(format!(
                        "training site {} lacks y_true",
                        s.site_id
                    )))
                }
                (_, Some(y)) if !(0.0..=1.0).contains(&y) => {
                    return Err(SdmeError::InvalidInput(format!(
                        "site {} has y_true {} outside [0,1]",
                        s.site_id, y
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// 2x2 confusion counts for one subject over truth-labelled points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

/// Sensitivity/specificity/accuracy plus moment-matched beta prior shapes.
///
/// A measure whose denominator is zero is `None` ("undefined"), never imputed
/// as 0. Shapes come from the point-level Jeffreys-smoothed moments of the
/// corresponding counts, so they stay strictly positive and feasible even at
/// perfect scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMeasures {
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub acc: Option<f64>,
    pub se_shapes: Option<(f64, f64)>,
    pub sp_shapes: Option<(f64, f64)>,
    pub acc_shapes: Option<(f64, f64)>,
}

/// Apparent proportion of an image: the fraction of its `q` elicited points
/// labelled positive by one subject.
///
/// The records must be the complete elicitation of one `(subject, image)`
/// pair; absent point ids are reported in the error.
pub fn apparent_proportion(records: &[ClassificationRecord], q: u32) -> Result<f64> {
    if records.is_empty() {
        return Err(SdmeError::InvalidInput(
            "no records supplied for apparent proportion".into(),
        ));
    }
    let (subject, image) = (records[0].subject_id, records[0].image_id);
    let mut present = vec![false; q as usize];
    let mut positives = 0u32;
    for r in records {
        if (r.subject_id, r.image_id) != (subject, image) {
            return Err(SdmeError::InvalidInput(format!(
                "records mix ({subject},{image}) with ({},{})",
                r.subject_id, r.image_id
            )));
        }
        if r.point_id == 0 || r.point_id > q {
            return Err(SdmeError::InvalidInput(format!(
                "point_id {} outside 1..={q}",
                r.point_id
            )));
        }
        if present[(r.point_id - 1) as usize] {
            return Err(SdmeError::InvalidInput(format!(
                "duplicate point {} for subject {subject} image {image}",
                r.point_id
            )));
        }
        present[(r.point_id - 1) as usize] = true;
        positives += u32::from(r.z);
    }
    let missing: Vec<u32> = (1..=q).filter(|&k| !present[(k - 1) as usize]).collect();
    if !missing.is_empty() {
        return Err(SdmeError::MissingPoints {
            subject,
            image,
            missing,
        });
    }
    Ok(f64::from(positives) / f64::from(q))
}

/// Confusion counts of one subject over all supplied records that carry a
/// true label. Errors if the subject has no labelled records.
pub fn confusion_counts(records: &[ClassificationRecord], subject_id: i64) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    let mut any = false;
    for r in records.iter().filter(|r| r.subject_id == subject_id) {
        let Some(truth) = r.true_label else { continue };
        any = true;
        match (r.z, truth) {
            (1, 1) => counts.true_pos += 1,
            (0, 0) => counts.true_neg += 1,
            (1, 0) => counts.false_pos += 1,
            (0, 1) => counts.false_neg += 1,
            _ => {
                return Err(SdmeError::InvalidInput(format!(
                    "non-binary z or true_label for subject {subject_id}"
                )))
            }
        }
    }
    if !any {
        return Err(SdmeError::NoLabeledRecords(subject_id));
    }
    Ok(counts)
}

/// Jeffreys-smoothed beta shapes for `successes` out of `successes+failures`
/// trials, routed through the moment equations.
fn smoothed_shapes(successes: u64, failures: u64) -> Option<(f64, f64)> {
    if successes + failures == 0 {
        return None;
    }
    let a = successes as f64 + 0.5;
    let b = failures as f64 + 0.5;
    let s = a + b;
    let mean = a / s;
    let var = a * b / (s * s * (s + 1.0));
    match moment_match_beta(mean, var, s).ok()? {
        MomentMatchedBeta::Exact { alpha, beta } => Some((alpha, beta)),
        MomentMatchedBeta::FallbackPrecision { alpha, beta, .. } => Some((alpha, beta)),
    }
}

/// Sensitivity, specificity and accuracy from confusion counts, with the
/// moment-matched prior shapes attached.
pub fn performance_measures(counts: &ConfusionCounts) -> PerformanceMeasures {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let pos = counts.true_pos + counts.false_neg;
    let neg = counts.true_neg + counts.false_pos;
    PerformanceMeasures {
        se: ratio(counts.true_pos, pos),
        sp: ratio(counts.true_neg, neg),
        acc: ratio(counts.true_pos + counts.true_neg, counts.total()),
        se_shapes: smoothed_shapes(counts.true_pos, counts.false_neg),
        sp_shapes: smoothed_shapes(counts.true_neg, counts.false_pos),
        acc_shapes: smoothed_shapes(
            counts.true_pos + counts.true_neg,
            counts.false_pos + counts.false_neg,
        ),
    }
}

/// Outcome of the low-accuracy exclusion rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionOutcome {
    pub retained: Vec<i64>,
    pub excluded: Vec<i64>,
    /// Subjects whose training accuracy is undefined; retained, but flagged.
    pub undefined: Vec<i64>,
}

impl ExclusionOutcome {
    pub fn all_excluded(&self) -> bool {
        self.retained.is_empty()
    }
}

/// Removes subjects whose training accuracy falls below `threshold`
/// (default 0.40 in the cleaning pipeline). Accuracy must have been computed
/// on the training partition only. Subjects with undefined accuracy are kept
/// and listed separately.
pub fn exclude_low_accuracy(
    subjects: &BTreeMap<i64, PerformanceMeasures>,
    threshold: f64,
) -> ExclusionOutcome {
    let mut out = ExclusionOutcome {
        retained: Vec::new(),
        excluded: Vec::new(),
        undefined: Vec::new(),
    };
    for (&id, perf) in subjects {
        match perf.acc {
            Some(acc) if acc < threshold => out.excluded.push(id),
            Some(_) => out.retained.push(id),
            None => {
                out.undefined.push(id);
                out.retained.push(id);
            }
        }
    }
    out
}

/// Result of matching beta shapes to a mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MomentMatchedBeta {
    /// Shapes reproduce the requested moments exactly.
    Exact { alpha: f64, beta: f64 },
    /// Requested variance was infeasible; shapes use the supplied default
    /// precision instead (alpha = mean * precision).
    FallbackPrecision { alpha: f64, beta: f64, precision: f64 },
}

impl MomentMatchedBeta {
    pub fn shapes(&self) -> (f64, f64) {
        match *self {
            MomentMatchedBeta::Exact { alpha, beta } => (alpha, beta),
            MomentMatchedBeta::FallbackPrecision { alpha, beta, .. } => (alpha, beta),
        }
    }
}

/// Beta shapes from the mean/precision parametrization:
/// `alpha = mean * precision`, `beta = (1 - mean) * precision`.
pub fn beta_shapes_mean_precision(mean: f64, precision: f64) -> (f64, f64) {
    (mean * precision, (1.0 - mean) * precision)
}

/// Solves the beta moment equations for the given mean and variance.
///
/// Requires `mean` in (0,1) and `variance > 0`. A variance at or above
/// `mean*(1-mean)` is infeasible for a beta distribution; the result then
/// falls back to the mean/precision parametrization with
/// `fallback_precision`, flagged via [`MomentMatchedBeta::FallbackPrecision`].
pub fn moment_match_beta(
    mean: f64,
    variance: f64,
    fallback_precision: f64,
) -> Result<MomentMatchedBeta> {
    if !(0.0 < mean && mean < 1.0) {
        return Err(SdmeError::InvalidInput(format!(
            "beta mean {mean} outside (0,1)"
        )));
    }
    if !(variance > 0.0) {
        return Err(SdmeError::InvalidInput(format!(
            "beta variance {variance} not positive"
        )));
    }
    let bound = mean * (1.0 - mean);
    if variance >= bound {
        let (alpha, beta) = beta_shapes_mean_precision(mean, fallback_precision);
        return Ok(MomentMatchedBeta::FallbackPrecision {
            alpha,
            beta,
            precision: fallback_precision,
        });
    }
    let nu = bound / variance - 1.0;
    Ok(MomentMatchedBeta::Exact {
        alpha: mean * nu,
        beta: (1.0 - mean) * nu,
    })
}

/// One aggregated classification: subject `subject` labelled `positives` of
/// the `q` points of site `site` as the target class (dense indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub subject: usize,
    pub site: usize,
    pub positives: u32,
    pub q: u32,
}

impl Observation {
    pub fn apparent(&self) -> f64 {
        f64::from(self.positives) / f64::from(self.q)
    }
}

/// Fully validated dataset: sites with their adjacency graph, dense subject
/// ids, per-(subject, image) aggregated observations, and the raw records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sites: SiteTable,
    pub graph: SpatialGraph,
    pub q: u32,
    /// Dense subject index -> original subject_id, sorted ascending.
    pub subject_ids: Vec<i64>,
    pub observations: Vec<Observation>,
    pub records: Vec<ClassificationRecord>,
}

impl Dataset {
    /// Validates and assembles the dataset: checks record uniqueness and
    /// completeness per (subject, image), partition consistency, and that the
    /// graph covers exactly the site table.
    pub fn assemble(
        sites: SiteTable,
        graph: SpatialGraph,
        records: Vec<ClassificationRecord>,
        q: u32,
    ) -> Result<Self> {
        if q == 0 {
            return Err(SdmeError::InvalidInput("q must be positive".into()));
        }
        sites.validate()?;
        let site_ids: Vec<i64> = sites.sites.iter().map(|s| s.site_id).collect();
        if graph.site_ids != site_ids {
            return Err(SdmeError::InvalidInput(
                "graph site ids do not match the site table order".into(),
            ));
        }
        let site_index: BTreeMap<i64, usize> =
            site_ids.iter().enumerate().map(|(j, &id)| (id, j)).collect();

        let mut subject_set = BTreeSet::new();
        let mut grouped: BTreeMap<(i64, i64), Vec<ClassificationRecord>> = BTreeMap::new();
        let mut keys = BTreeSet::new();
        for r in &records {
            if r.z > 1 || r.true_label.map_or(false, |t| t > 1) {
                return Err(SdmeError::InvalidInput(format!(
                    "non-binary label for subject {} image {} point {}",
                    r.subject_id, r.image_id, r.point_id
                )));
            }
            if !keys.insert((r.subject_id, r.image_id, r.point_id)) {
                return Err(SdmeError::InvalidInput(format!(
                    "duplicate record ({}, {}, {})",
                    r.subject_id, r.image_id, r.point_id
                )));
            }
            if !site_index.contains_key(&r.image_id) {
                return Err(SdmeError::InvalidInput(format!(
                    "record references unknown image {}",
                    r.image_id
                )));
            }
            subject_set.insert(r.subject_id);
            grouped.entry((r.subject_id, r.image_id)).or_default().push(*r);
        }
        let subject_ids: Vec<i64> = subject_set.into_iter().collect();
        let subject_index: BTreeMap<i64, usize> = subject_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();

        let mut observations = Vec::with_capacity(grouped.len());
        let mut classified_sites = BTreeSet::new();
        for ((subj, image), group) in &grouped {
            // validates completeness 1..=q and uniqueness of points
            let apparent = apparent_proportion(group, q)?;
            let site = site_index[image];
            classified_sites.insert(site);
            observations.push(Observation {
                subject: subject_index[subj],
                site,
                positives: (apparent * f64::from(q)).round() as u32,
                q,
            });
        }
        for (j, s) in sites.sites.iter().enumerate() {
            let has = classified_sites.contains(&j);
            if s.partition == Partition::Unsampled && has {
                return Err(SdmeError::InvalidInput(format!(
                    "unsampled site {} has classification records",
                    s.site_id
                )));
            }
        }
        Ok(Self {
            sites,
            graph,
            q,
            subject_ids,
            observations,
            records,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    /// Per-subject performance measures from the training partition only,
    /// keyed by original subject_id.
    pub fn score_subjects_on_training(&self) -> BTreeMap<i64, PerformanceMeasures> {
        let training_images: BTreeSet<i64> = self
            .sites
            .sites
            .iter()
            .filter(|s| s.partition == Partition::Training)
            .map(|s| s.site_id)
            .collect();
        let training_records: Vec<ClassificationRecord> = self
            .records
            .iter()
            .filter(|r| training_images.contains(&r.image_id))
            .copied()
            .collect();
        let mut out = BTreeMap::new();
        for &id in &self.subject_ids {
            let perf = match confusion_counts(&training_records, id) {
                Ok(counts) => performance_measures(&counts),
                Err(_) => PerformanceMeasures {
                    se: None,
                    sp: None,
                    acc: None,
                    se_shapes: None,
                    sp_shapes: None,
                    acc_shapes: None,
                },
            };
            out.insert(id, perf);
        }
        out
    }

    /// Drops all records and observations of subjects not in `keep`,
    /// remapping the dense subject indices.
    pub fn retain_subjects(&mut self, keep: &BTreeSet<i64>) {
        let old_ids = self.subject_ids.clone();
        let kept: Vec<i64> = old_ids.iter().copied().filter(|id| keep.contains(id)).collect();
        let new_index: BTreeMap<i64, usize> =
            kept.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        self.records.retain(|r| keep.contains(&r.subject_id));
        self.observations.retain_mut(|o| match new_index.get(&old_ids[o.subject]) {
            Some(&ni) => {
                o.subject = ni;
                true
            }
            None => false,
        });
        self.subject_ids = kept;
    }
}
