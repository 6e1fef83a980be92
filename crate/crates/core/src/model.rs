//! Trained models: the training pipeline, per-image classification, and the
//! portable model file format.
//!
//! A model file is line-oriented UTF-8: a fixed header (magic + version,
//! mode, k, dim, tau, classes, params, CRC32 checksum of the payload), a
//! blank line, then the payload — one centroid per line followed by either a
//! `weights` section (inter) or a `signatures` section (intra). Floats are
//! printed with shortest round-trip precision, so `load(save(m)) == m`
//! field-for-field and retraining with identical flags writes byte-identical
//! files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::classify::{self, Signature, WeightTable};
use crate::codebook::{self, Codebook};
use crate::error::{Error, Result};
use crate::eval::{load_item, EvalItem};
use crate::feature::{self, Descriptor, ExtractMode, FeatureParams};
use crate::imgio::{GrayImage, Mask};
use crate::scalar::Real;

/// Current model file format version.
pub const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_KMEANS_MAX_ITERS: usize = 100;
pub const DEFAULT_KMEANS_TOL: f64 = 1e-4;

/// Which pipeline the model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Weighted-cluster voting over edge-anchored descriptors.
    Inter,
    /// Nearest-signature matching over dense descriptors.
    Intra,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Inter => "inter",
            Mode::Intra => "intra",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inter" => Ok(Mode::Inter),
            "intra" => Ok(Mode::Intra),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Feature and clustering settings a model was trained with; persisted in the
/// model file so classification replays the exact extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<F> {
    pub sigma: F,
    /// Canny thresholds as fractions of the per-image maximum gradient
    /// magnitude.
    pub canny_low: F,
    pub canny_high: F,
    pub stride: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: F,
}

impl<F: Real> Default for ModelParams<F> {
    fn default() -> Self {
        ModelParams {
            sigma: F::from_f64(1.4).unwrap(),
            canny_low: F::from_f64(0.1).unwrap(),
            canny_high: F::from_f64(0.3).unwrap(),
            stride: 2,
            kmeans_max_iters: DEFAULT_KMEANS_MAX_ITERS,
            kmeans_tol: F::from_f64(DEFAULT_KMEANS_TOL).unwrap(),
        }
    }
}

impl<F: Real> ModelParams<F> {
    fn feature_params(&self) -> FeatureParams<F> {
        FeatureParams {
            sigma: self.sigma,
            canny_low: self.canny_low,
            canny_high: self.canny_high,
            stride: self.stride,
        }
    }
}

/// A trained classifier: codebook, match threshold and the mode's matching
/// medium (weight table or labeled signatures).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<F> {
    pub format_version: u32,
    pub mode: Mode,
    pub classes: Vec<String>,
    pub codebook: Codebook<F>,
    pub tau: F,
    pub weight_table: Option<WeightTable<F>>,
    pub signatures: Option<Vec<Signature>>,
    pub params: ModelParams<F>,
}

/// Training configuration for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions<F> {
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub params: ModelParams<F>,
    /// Overrides the self-calibrated tau when set.
    pub tau_override: Option<F>,
}

/// What training observed; `cmd train` prints this.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary<F> {
    pub images: usize,
    pub descriptors: usize,
    pub kmeans_iterations: usize,
    pub inertia: F,
    pub tau: F,
}

/// Per-image classification outcome.
///
/// In inter mode `score` is the winning weight sum and `matched` the number
/// of matched clusters; in intra mode `score` is the signature distance and
/// `matched` the Hamming distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict<F> {
    pub label: String,
    pub score: F,
    pub matched: usize,
}

impl<F: Real> TrainedModel<F> {
    /// Classifies one preloaded image/mask pair with the model's own
    /// extraction settings.
    pub fn classify_image(&self, image: &GrayImage, mask: &Mask) -> Result<Verdict<F>> {
        let descs = self.extract(image, mask)?;
        self.classify_descriptors(&descs)
    }

    /// Feature extraction in the model's mode with the model's parameters.
    pub fn extract(
        &self,
        image: &GrayImage,
        mask: &Mask,
    ) -> Result<Vec<(feature::Keypoint, Descriptor<F>)>> {
        let mode = match self.mode {
            Mode::Inter => ExtractMode::Inter,
            Mode::Intra => ExtractMode::Intra,
        };
        feature::extract(image, mask, mode, &self.params.feature_params())
    }

    fn classify_descriptors(
        &self,
        descs: &[(feature::Keypoint, Descriptor<F>)],
    ) -> Result<Verdict<F>> {
        let descriptors: Vec<Descriptor<F>> = descs.iter().map(|(_, d)| d.clone()).collect();
        match self.mode {
            Mode::Inter => {
                let wt = self.weight_table.as_ref().expect("inter model");
                let score = classify::classify_inter(&descriptors, &self.codebook, wt, self.tau)?;
                let best = wt
                    .classes
                    .iter()
                    .position(|c| *c == score.predicted)
                    .unwrap();
                Ok(Verdict {
                    label: score.predicted,
                    score: score.scores[best],
                    matched: score.matched_clusters,
                })
            }
            Mode::Intra => {
                if descriptors.is_empty() {
                    return Err(Error::NoFeatures);
                }
                let sigs = self.signatures.as_ref().expect("intra model");
                let query = classify::build_signature(&descriptors, &self.codebook, self.tau)?;
                let m = classify::classify_intra(&query, sigs)?;
                Ok(Verdict {
                    label: m.label,
                    score: F::from_f64(m.distance).unwrap(),
                    matched: m.hamming,
                })
            }
        }
    }

    /// Checks the structural invariants: version, tau > 0, exactly one
    /// matching medium present and consistent with mode, classes, and sizes.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidParam(format!(
                "format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if !(self.tau > F::zero()) {
            return Err(Error::InvalidParam(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidParam("model has no classes".into()));
        }
        for label in &self.classes {
            validate_label(label)?;
        }
        if self.codebook.centroids.len() != self.codebook.k {
            return Err(Error::InvalidParam("codebook centroid count != k".into()));
        }
        if self
            .codebook
            .centroids
            .iter()
            .any(|c| c.len() != self.codebook.dim)
        {
            return Err(Error::InvalidParam("centroid dimension != dim".into()));
        }
        match self.mode {
            Mode::Inter => {
                if self.signatures.is_some() {
                    return Err(Error::InvalidParam(
                        "inter model must not carry signatures".into(),
                    ));
                }
                let wt = self
                    .weight_table
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("inter model lacks a weight table".into()))?;
                if wt.k != self.codebook.k
                    || wt.classes != self.classes
                    || wt.weights.len() != wt.k
                    || wt.weights.iter().any(|row| row.len() != wt.classes.len())
                {
                    return Err(Error::InvalidParam("weight table inconsistent".into()));
                }
            }
            Mode::Intra => {
                if self.weight_table.is_some() {
                    return Err(Error::InvalidParam(
                        "intra model must not carry a weight table".into(),
                    ));
                }
                let sigs = self
                    .signatures
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("intra model lacks signatures".into()))?;
                if sigs.is_empty() {
                    return Err(Error::InvalidParam("intra model has no signatures".into()));
                }
                for (i, s) in sigs.iter().enumerate() {
                    if s.bits.len() != self.codebook.k {
                        return Err(Error::InvalidParam(format!(
                            "signature {i} has {} bits, expected {}",
                            s.bits.len(),
                            self.codebook.k
                        )));
                    }
                    match &s.label {
                        Some(l) if self.classes.contains(l) => {}
                        Some(l) => {
                            return Err(Error::InvalidParam(format!(
                                "signature {i} labeled {l:?}, not a model class"
                            )))
                        }
                        None => {
                            return Err(Error::InvalidParam(format!(
                                "signature {i} has no label"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Class labels appear in header lines and signature lines, so they must not
/// contain separators.
pub(crate) fn validate_label(label: &str) -> Result<()> {
    if label.is_empty() || label.contains(',') || label.chars().any(|c| c.is_whitespace()) {
        return Err(Error::InvalidParam(format!(
            "class label {label:?} must be non-empty and free of commas and whitespace"
        )));
    }
    Ok(())
}

/// Runs the full training scheme over the given items: per-image feature
/// extraction, K-means codebook, tau calibration, then the mode's matching
/// medium (weight table or per-image signatures).
pub fn train<F: Real>(
    classes: &[String],
    items: &[EvalItem],
    opts: &TrainOptions<F>,
) -> Result<(TrainedModel<F>, TrainSummary<F>)> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("no classes".into()));
    }
    for label in classes {
        validate_label(label)?;
    }

    // Per-class, per-image descriptor lists in deterministic item order.
    let mode = match opts.mode {
        Mode::Inter => ExtractMode::Inter,
        Mode::Intra => ExtractMode::Intra,
    };
    let mut per_class: Vec<Vec<Vec<Descriptor<F>>>> = vec![Vec::new(); classes.len()];
    for item in items {
        if item.class >= classes.len() {
            return Err(Error::Dataset(format!(
                "item {} references class index {} out of range",
                item.image.display(),
                item.class
            )));
        }
        let (image, mask) = load_item(item)?;
        let descs: Vec<Descriptor<F>> =
            feature::extract(&image, &mask, mode, &opts.params.feature_params())?
                .into_iter()
                .map(|(_, d)| d)
                .collect();
        per_class[item.class].push(descs);
    }
    if let Some(c) = per_class.iter().position(|imgs| imgs.is_empty()) {
        return Err(Error::EmptyInput(format!(
            "class {} has no training images",
            classes[c]
        )));
    }

    let all: Vec<Descriptor<F>> = per_class.iter().flatten().flatten().cloned().collect();
    if all.is_empty() {
        return Err(Error::NoFeatures);
    }
    let (codebook, trace) = codebook::kmeans_with_trace(
        &all,
        opts.k,
        opts.seed,
        opts.params.kmeans_max_iters,
        opts.params.kmeans_tol,
    )?;

    let tau = match opts.tau_override {
        Some(t) if t > F::zero() => t,
        Some(t) => {
            return Err(Error::InvalidParam(format!("tau must be > 0, got {t}")));
        }
        None => calibrate_tau(&all, &codebook)?,
    };

    let (weight_table, signatures) = match opts.mode {
        Mode::Inter => {
            let wt = classify::assign_weights(&codebook, classes, &per_class, tau)?;
            (Some(wt), None)
        }
        Mode::Intra => {
            let mut sigs = Vec::new();
            for (c, images) in per_class.iter().enumerate() {
                for descs in images {
                    sigs.push(
                        classify::build_signature(descs, &codebook, tau)?
                            .with_label(classes[c].clone()),
                    );
                }
            }
            (None, Some(sigs))
        }
    };

    let summary = TrainSummary {
        images: items.len(),
        descriptors: all.len(),
        kmeans_iterations: trace.len().saturating_sub(1),
        inertia: codebook.inertia,
        tau,
    };
    let model = TrainedModel {
        format_version: FORMAT_VERSION,
        mode: opts.mode,
        classes: classes.to_vec(),
        codebook,
        tau,
        weight_table,
        signatures,
        params: opts.params,
    };
    model.validate()?;
    Ok((model, summary))
}

/// Median nearest-centroid distance over the training descriptors: a
/// scale-free, deterministic default for the match threshold. Falls back to
/// the smallest positive distance when the median collapses to zero (k close
/// to the number of distinct descriptors).
fn calibrate_tau<F: Real>(descriptors: &[Descriptor<F>], cb: &Codebook<F>) -> Result<F> {
    let mut dists: Vec<F> = descriptors
        .iter()
        .map(|d| codebook::assign(d, cb).map(|a| a.distance))
        .collect::<Result<_>>()?;
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        (dists[n / 2 - 1] + dists[n / 2]) / F::from_f64(2.0).unwrap()
    };
    if median > F::zero() {
        return Ok(median);
    }
    dists
        .into_iter()
        .find(|&d| d > F::zero())
        .ok_or_else(|| Error::InvalidParam(
            "cannot calibrate tau: every descriptor coincides with a centroid; pass an explicit tau"
                .into(),
        ))
}

/// Serializes the model; see the module docs for the exact layout.
pub fn save_model<F: Real>(model: &TrainedModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model_to_string(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a model file, verifying version and payload checksum.
pub fn load_model<F: Real>(path: impl AsRef<Path>) -> Result<TrainedModel<F>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}

pub fn model_to_string<F: Real>(model: &TrainedModel<F>) -> Result<String> {
    model.validate()?;
    let mut payload = String::new();
    for centroid in &model.codebook.centroids {
        let line: Vec<String> = centroid.iter().map(|v| v.to_string()).collect();
        payload.push_str(&line.join(" "));
        payload.push('\n');
    }
    match model.mode {
        Mode::Inter => {
            payload.push_str("weights\n");
            for row in &model.weight_table.as_ref().unwrap().weights {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                payload.push_str(&line.join(" "));
                payload.push('\n');
            }
        }
        Mode::Intra => {
            payload.push_str("signatures\n");
            for sig in model.signatures.as_ref().unwrap() {
                payload.push_str(sig.label.as_deref().unwrap());
                payload.push(' ');
                payload.extend(sig.bits.iter().map(|&b| if b { '1' } else { '0' }));
                payload.push('\n');
            }
        }
    }
    let checksum = crc32fast::hash(payload.as_bytes());

    let p = &model.params;
    let cb = &model.codebook;
    let header = format!(
        "ESVC {}\nmode {}\nk {}\ndim {}\ntau {}\nclasses {}\nparams sigma={} low={} high={} stride={} max_iters={} tol={} seed={} inertia={}\nchecksum {:08x}\n\n",
        model.format_version,
        model.mode,
        cb.k,
        cb.dim,
        model.tau,
        model.classes.join(","),
        p.sigma,
        p.canny_low,
        p.canny_high,
        p.stride,
        p.kmeans_max_iters,
        p.kmeans_tol,
        cb.seed,
        cb.inertia,
        checksum,
    );
    Ok(header + &payload)
}

struct ModelReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
    path: &'a Path,
}

impl<'a> ModelReader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::ModelFormat {
            path: self.path.to_path_buf(),
            reason: format!("line {}: {}", self.line_no, reason.into()),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| self.err("unexpected end of file"))
    }

    fn keyed_line(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected `{key} ...`, got {line:?}")))
    }

    fn parse_num<T: FromStr>(&self, token: &str, what: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.err(format!("invalid {what}: {token:?}")))
    }
}

pub fn model_from_str<F: Real>(text: &str, path: &Path) -> Result<TrainedModel<F>> {
    let mut r = ModelReader {
        lines: text.lines(),
        line_no: 0,
        path,
    };

    let magic = r.next_line()?;
    let version: u32 = match magic.strip_prefix("ESVC ") {
        Some(v) => r.parse_num(v, "format version")?,
        None => return Err(r.err("missing ESVC magic")),
    };
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }

    let mode: Mode = {
        let tok = r.keyed_line("mode")?;
        tok.parse().map_err(|e: String| r.err(e))?
    };
    let k: usize = {
        let tok = r.keyed_line("k")?;
        r.parse_num(tok, "k")?
    };
    let dim: usize = {
        let tok = r.keyed_line("dim")?;
        r.parse_num(tok, "dim")?
    };
    let tau: F = {
        let tok = r.keyed_line("tau")?;
        r.parse_num(tok, "tau")?
    };
    let classes: Vec<String> = r
        .keyed_line("classes")?
        .split(',')
        .map(String::from)
        .collect();

    let params_line = r.keyed_line("params")?;
    let mut kv = std::collections::HashMap::new();
    for pair in params_line.split(' ') {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| r.err(format!("malformed params entry {pair:?}")))?;
        if kv.insert(key, value).is_some() {
            return Err(r.err(format!("duplicate params key {key:?}")));
        }
    }
    let expected_keys = [
        "sigma", "low", "high", "stride", "max_iters", "tol", "seed", "inertia",
    ];
    for key in expected_keys {
        if !kv.contains_key(key) {
            return Err(r.err(format!("params missing key {key:?}")));
        }
    }
    if kv.len() != expected_keys.len() {
        return Err(r.err("params carries unknown keys"));
    }
    let params = ModelParams {
        sigma: r.parse_num(kv["sigma"], "sigma")?,
        canny_low: r.parse_num(kv["low"], "low")?,
        canny_high: r.parse_num(kv["high"], "high")?,
        stride: r.parse_num(kv["stride"], "stride")?,
        kmeans_max_iters: r.parse_num(kv["max_iters"], "max_iters")?,
        kmeans_tol: r.parse_num(kv["tol"], "tol")?,
    };
    let seed: u64 = r.parse_num(kv["seed"], "seed")?;
    let inertia: F = r.parse_num(kv["inertia"], "inertia")?;

    let checksum_hex = r.keyed_line("checksum")?;
    let stored_checksum = u32::from_str_radix(checksum_hex, 16)
        .map_err(|_| r.err(format!("invalid checksum {checksum_hex:?}")))?;

    let blank = r.next_line()?;
    if !blank.is_empty() {
        return Err(r.err("expected blank line after header"));
    }

    // Everything after the blank line is the checksummed payload.
    let header_len: usize = text
        .split_inclusive('\n')
        .take(r.line_no)
        .map(|l| l.len())
        .sum();
    let payload = &text[header_len..];
    let computed = crc32fast::hash(payload.as_bytes());
    if computed != stored_checksum {
        return Err(Error::ChecksumMismatch {
            path: path.to_path_buf(),
            stored: format!("{stored_checksum:08x}"),
            computed: format!("{computed:08x}"),
        });
    }

    let mut centroids = Vec::with_capacity(k);
    for _ in 0..k {
        let line = r.next_line()?;
        let row: Vec<F> = line
            .split(' ')
            .map(|tok| r.parse_num(tok, "centroid component"))
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(r.err(format!("centroid has {} components, dim is {dim}", row.len())));
        }
        centroids.push(row);
    }

    let section = r.next_line()?;
    let (weight_table, signatures) = match (mode, section) {
        (Mode::Inter, "weights") => {
            let mut weights = Vec::with_capacity(k);
            for _ in 0..k {
                let line = r.next_line()?;
                let row: Vec<F> = line
                    .split(' ')
                    .map(|tok| r.parse_num(tok, "weight"))
                    .collect::<Result<_>>()?;
                if row.len() != classes.len() {
                    return Err(r.err(format!(
                        "weight row has {} entries, expected {}",
                        row.len(),
                        classes.len()
                    )));
                }
                weights.push(row);
            }
            (
                Some(WeightTable {
                    k,
                    classes: classes.clone(),
                    weights,
                }),
                None,
            )
        }
        (Mode::Intra, "signatures") => {
            let mut sigs = Vec::new();
            loop {
                let Some(line) = r.lines.next() else { break };
                r.line_no += 1;
                if line.is_empty() {
                    return Err(r.err("unexpected blank line in signatures"));
                }
                let (label, bits_str) = line
                    .split_once(' ')
                    .ok_or_else(|| r.err(format!("malformed signature line {line:?}")))?;
                let bits: Vec<bool> = bits_str
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(r.err(format!("invalid signature bit {other:?}"))),
                    })
                    .collect::<Result<_>>()?;
                sigs.push(Signature {
                    bits,
                    label: Some(label.to_string()),
                });
            }
            (None, Some(sigs))
        }
        (_, other) => {
            return Err(r.err(format!(
                "expected section matching mode {mode}, got {other:?}"
            )))
        }
    };
    if mode == Mode::Inter {
        if let Some(line) = r.lines.next() {
            r.line_no += 1;
            return Err(r.err(format!("trailing data: {line:?}")));
        }
    }

    let model = TrainedModel {
        format_version: version,
        mode,
        classes,
        codebook: Codebook {
            k,
            dim,
            centroids,
            seed,
            inertia,
        },
        tau,
        weight_table,
        signatures,
        params,
    };
    model.validate().map_err(|e| Error::ModelFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(model)
}
