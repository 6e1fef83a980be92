//! The two matching media and classifiers.
//!
//! Inter-class: every cluster carries a per-class weight, the fraction m/n of
//! a class's training images the cluster matches; a query's class scores are
//! the sums of the weights of the clusters it matches.
//!
//! Intra-class: every image is reduced to a K-bit signature recording which
//! clusters it matches; a query takes the label of the nearest training
//! signature under Euclidean distance on 0/1 vectors (the square root of the
//! Hamming distance).
//!
//! A cluster "matches" an image when any of the image's descriptors lies
//! within `tau` of the centroid.

use crate::codebook::{squared_distance, Codebook};
use crate::error::{Error, Result};
use crate::feature::{Descriptor, DESCRIPTOR_LEN};
use crate::scalar::Real;

/// Per-cluster, per-class match-frequency weights, all in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable<F> {
    pub k: usize,
    /// Ordered class labels; columns of `weights`.
    pub classes: Vec<String>,
    /// `k` rows of one weight per class.
    pub weights: Vec<Vec<F>>,
}

/// K-bit presence vector describing one image; training signatures carry
/// their class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub bits: Vec<bool>,
    pub label: Option<String>,
}

impl Signature {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn hamming(&self, other: &Signature) -> usize {
        debug_assert_eq!(self.bits.len(), other.bits.len());
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Inter-class verdict: one score per class plus the winning label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore<F> {
    /// Scores aligned with the weight table's class order.
    pub scores: Vec<F>,
    pub predicted: String,
    pub matched_clusters: usize,
}

/// Intra-class verdict: nearest training signature.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraMatch {
    pub label: String,
    /// Euclidean distance on bits = sqrt(hamming).
    pub distance: f64,
    pub hamming: usize,
    /// Index of the matched training signature.
    pub index: usize,
}

/// True when the minimum Euclidean distance from `centroid` to any descriptor
/// is at most `tau`; an empty descriptor list matches nothing.
pub fn cluster_matches_image<F: Real>(
    centroid: &[F],
    image_descriptors: &[Descriptor<F>],
    tau: F,
) -> Result<bool> {
    if centroid.len() != DESCRIPTOR_LEN {
        return Err(Error::DimensionMismatch(format!(
            "centroid dim {} != descriptor dim {DESCRIPTOR_LEN}",
            centroid.len()
        )));
    }
    let tau2 = tau * tau;
    Ok(image_descriptors
        .iter()
        .any(|d| squared_distance(centroid, d.values()) <= tau2))
}

/// One match bit per cluster; the shared core of weight assignment and image
/// description.
fn match_vector<F: Real>(
    cb: &Codebook<F>,
    image_descriptors: &[Descriptor<F>],
    tau: F,
) -> Result<Vec<bool>> {
    cb.centroids
        .iter()
        .map(|c| cluster_matches_image(c, image_descriptors, tau))
        .collect()
}

/// Builds the weight table: for cluster `j` and class `c` with `n_c` training
/// images of which `m` match the cluster, `weights[j][c] = m / n_c`.
///
/// `per_class[c]` holds the descriptor lists of class `c`'s training images,
/// aligned with `classes`.
pub fn assign_weights<F: Real>(
    cb: &Codebook<F>,
    classes: &[String],
    per_class: &[Vec<Vec<Descriptor<F>>>],
    tau: F,
) -> Result<WeightTable<F>> {
    if classes.len() != per_class.len() {
        return Err(Error::InvalidParam(format!(
            "{} class labels but {} descriptor groups",
            classes.len(),
            per_class.len()
        )));
    }
    if let Some(c) = per_class.iter().position(|imgs| imgs.is_empty()) {
        return Err(Error::EmptyInput(format!(
            "class {} has no training images",
            classes[c]
        )));
    }

    let mut weights = vec![vec![F::zero(); classes.len()]; cb.k];
    for (c, images) in per_class.iter().enumerate() {
        let n = F::from_usize(images.len()).unwrap();
        for descs in images {
            for (j, bit) in match_vector(cb, descs, tau)?.iter().enumerate() {
                if *bit {
                    weights[j][c] = weights[j][c] + F::one();
                }
            }
        }
        for row in &mut weights {
            row[c] = row[c] / n;
        }
    }
    Ok(WeightTable {
        k: cb.k,
        classes: classes.to_vec(),
        weights,
    })
}

/// Weighted-cluster voting: sums, per class, the weights of every cluster the
/// query matches. The predicted class is the argmax, first class on ties.
///
/// A query with no descriptors raises [`Error::NoFeatures`]; a query whose
/// descriptors match no cluster at all raises [`Error::NoMatches`] rather
/// than silently reporting the all-zero tie.
pub fn classify_inter<F: Real>(
    query: &[Descriptor<F>],
    cb: &Codebook<F>,
    wt: &WeightTable<F>,
    tau: F,
) -> Result<ClassScore<F>> {
    if wt.k != cb.k {
        return Err(Error::DimensionMismatch(format!(
            "weight table has {} clusters, codebook {}",
            wt.k, cb.k
        )));
    }
    if query.is_empty() {
        return Err(Error::NoFeatures);
    }
    let matches = match_vector(cb, query, tau)?;
    let matched_clusters = matches.iter().filter(|&&b| b).count();
    if matched_clusters == 0 {
        return Err(Error::NoMatches);
    }
    let mut scores = vec![F::zero(); wt.classes.len()];
    for (j, &m) in matches.iter().enumerate() {
        if m {
            for (c, s) in scores.iter_mut().enumerate() {
                *s = *s + wt.weights[j][c];
            }
        }
    }
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(ClassScore {
        predicted: wt.classes[best].clone(),
        scores,
        matched_clusters,
    })
}

/// Describes an image as the K-bit vector of clusters it matches. An empty
/// descriptor list yields the all-zero signature.
pub fn build_signature<F: Real>(
    image_descriptors: &[Descriptor<F>],
    cb: &Codebook<F>,
    tau: F,
) -> Result<Signature> {
    Ok(Signature {
        bits: match_vector(cb, image_descriptors, tau)?,
        label: None,
    })
}

/// Nearest-signature matching: returns the label of the training signature
/// with the smallest Euclidean distance on bits, earliest index on ties.
pub fn classify_intra(query: &Signature, training: &[Signature]) -> Result<IntraMatch> {
    if training.is_empty() {
        return Err(Error::EmptyInput("no training signatures".into()));
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, t) in training.iter().enumerate() {
        if t.bits.len() != query.bits.len() {
            return Err(Error::DimensionMismatch(format!(
                "signature {} has {} bits, query has {}",
                i,
                t.bits.len(),
                query.bits.len()
            )));
        }
        let h = query.hamming(t);
        if best.is_none_or(|(_, bh)| h < bh) {
            best = Some((i, h));
        }
    }
    let (index, hamming) = best.unwrap();
    let label = training[index].label.clone().ok_or_else(|| {
        Error::InvalidParam(format!("training signature {index} has no label"))
    })?;
    Ok(IntraMatch {
        label,
        distance: (hamming as f64).sqrt(),
        hamming,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desc(fill: &[(usize, f64)]) -> Descriptor<f64> {
        let mut v = [0.0; DESCRIPTOR_LEN];
        for &(i, x) in fill {
            v[i] = x;
        }
        Descriptor::from_values(&v)
    }

    /// Codebook with unit-basis centroids e_0 .. e_{k-1}; pairwise distance
    /// sqrt(2).
    fn basis_codebook(k: usize) -> Codebook<f64> {
        Codebook {
            k,
            dim: DESCRIPTOR_LEN,
            centroids: (0..k)
                .map(|j| {
                    let mut c = vec![0.0; DESCRIPTOR_LEN];
                    c[j] = 1.0;
                    c
                })
                .collect(),
            seed: 0,
            inertia: 0.0,
        }
    }

    fn sig(bits: &[u8], label: Option<&str>) -> Signature {
        Signature {
            bits: bits.iter().map(|&b| b != 0).collect(),
            label: label.map(String::from),
        }
    }

    #[test]
    fn exact_descriptor_matches_for_any_positive_tau() {
        let cb = basis_codebook(4);
        let descs = vec![desc(&[(2, 1.0)])];
        assert!(cluster_matches_image(&cb.centroids[2], &descs, 1e-12).unwrap());
    }

    #[test]
    fn empty_descriptor_list_matches_nothing() {
        let cb = basis_codebook(4);
        assert!(!cluster_matches_image(&cb.centroids[0], &[], 1e9).unwrap());
    }

    #[test]
    fn match_threshold_is_inclusive_at_the_boundary() {
        // Descriptor at exact distance 0.5 from the centroid.
        let centroid = vec![0.0; DESCRIPTOR_LEN];
        let descs = vec![desc(&[(0, 0.5)])];
        assert!(!cluster_matches_image(&centroid, &descs, 0.4).unwrap());
        assert!(cluster_matches_image(&centroid, &descs, 0.6).unwrap());
        assert!(cluster_matches_image(&centroid, &descs, 0.5).unwrap());
    }

    #[test]
    fn weights_are_match_frequencies() {
        let cb = basis_codebook(2);
        let classes = vec!["car".to_string(), "van".to_string()];
        // car: 10 images, 3 of which contain a descriptor at centroid 0.
        let car: Vec<Vec<Descriptor<f64>>> = (0..10)
            .map(|i| {
                if i < 3 {
                    vec![desc(&[(0, 1.0)])]
                } else {
                    vec![desc(&[(5, 1.0)])]
                }
            })
            .collect();
        // van: 4 images, all matching centroid 1, none matching centroid 0.
        let van: Vec<Vec<Descriptor<f64>>> =
            (0..4).map(|_| vec![desc(&[(1, 1.0)])]).collect();
        let wt = assign_weights(&cb, &classes, &[car, van], 0.1).unwrap();
        assert_eq!(wt.weights[0][0], 0.3);
        assert_eq!(wt.weights[0][1], 0.0);
        assert_eq!(wt.weights[1][0], 0.0);
        assert_eq!(wt.weights[1][1], 1.0);
    }

    #[test]
    fn empty_class_is_rejected() {
        let cb = basis_codebook(2);
        let classes = vec!["car".to_string(), "van".to_string()];
        let car = vec![vec![desc(&[(0, 1.0)])]];
        let err = assign_weights(&cb, &classes, &[car, Vec::new()], 0.1).unwrap_err();
        assert!(err.to_string().contains("van"), "{err}");
    }

    #[test]
    fn single_matched_cluster_scores_its_weights() {
        let cb = basis_codebook(1);
        let wt = WeightTable {
            k: 1,
            classes: vec!["car".into(), "van".into()],
            weights: vec![vec![0.9, 0.1]],
        };
        let got = classify_inter(&[desc(&[(0, 1.0)])], &cb, &wt, 0.1).unwrap();
        assert_eq!(got.predicted, "car");
        assert_eq!(got.scores, vec![0.9, 0.1]);
        assert_eq!(got.matched_clusters, 1);
    }

    #[test]
    fn summed_weights_pick_the_larger_class() {
        let cb = basis_codebook(2);
        let wt = WeightTable {
            k: 2,
            classes: vec!["car".into(), "van".into()],
            weights: vec![vec![0.5, 0.5], vec![0.2, 0.8]],
        };
        let query = vec![desc(&[(0, 1.0)]), desc(&[(1, 1.0)])];
        let got = classify_inter(&query, &cb, &wt, 0.1).unwrap();
        assert_eq!(got.predicted, "van");
        assert!((got.scores[0] - 0.7).abs() < 1e-12);
        assert!((got.scores[1] - 1.3).abs() < 1e-12);
        assert_eq!(got.matched_clusters, 2);
    }

    #[test]
    fn empty_query_and_unmatched_query_are_distinct_errors() {
        let cb = basis_codebook(2);
        let wt = WeightTable {
            k: 2,
            classes: vec!["car".into(), "van".into()],
            weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert!(matches!(
            classify_inter::<f64>(&[], &cb, &wt, 0.1),
            Err(Error::NoFeatures)
        ));
        // A descriptor far from every centroid.
        let query = vec![desc(&[(9, 100.0)])];
        assert!(matches!(
            classify_inter(&query, &cb, &wt, 0.1),
            Err(Error::NoMatches)
        ));
    }

    #[test]
    fn tie_scores_pick_the_first_class() {
        let cb = basis_codebook(1);
        let wt = WeightTable {
            k: 1,
            classes: vec!["car".into(), "van".into()],
            weights: vec![vec![0.5, 0.5]],
        };
        let got = classify_inter(&[desc(&[(0, 1.0)])], &cb, &wt, 0.1).unwrap();
        assert_eq!(got.predicted, "car");
    }

    #[test]
    fn argmax_is_invariant_under_positive_weight_scaling() {
        let cb = basis_codebook(3);
        let mk = |scale: f64| WeightTable {
            k: 3,
            classes: vec!["a".into(), "b".into()],
            weights: vec![
                vec![0.3 * scale, 0.6 * scale],
                vec![0.8 * scale, 0.1 * scale],
                vec![0.4 * scale, 0.9 * scale],
            ],
        };
        let query = vec![desc(&[(0, 1.0)]), desc(&[(2, 1.0)])];
        let base = classify_inter(&query, &cb, &mk(1.0), 0.1).unwrap();
        for scale in [0.25, 3.0, 1e6] {
            let scaled = classify_inter(&query, &cb, &mk(scale), 0.1).unwrap();
            assert_eq!(scaled.predicted, base.predicted);
        }
    }

    #[test]
    fn signature_of_empty_list_is_all_zero() {
        let cb = basis_codebook(5);
        let s = build_signature::<f64>(&[], &cb, 0.3).unwrap();
        assert_eq!(s.ones(), 0);
        assert_eq!(s.bits.len(), 5);
    }

    #[test]
    fn signature_sets_exactly_the_touched_clusters() {
        // Basis centroids are sqrt(2) apart, so tau = 0.5 isolates them.
        let cb = basis_codebook(5);
        let descs = vec![desc(&[(0, 1.0)]), desc(&[(3, 1.0)])];
        let s = build_signature(&descs, &cb, 0.5).unwrap();
        assert_eq!(
            s.bits,
            vec![true, false, false, true, false]
        );
        let again = build_signature(&descs, &cb, 0.5).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn infinite_tau_sets_all_bits_and_zero_tau_only_exact_hits() {
        let cb = basis_codebook(4);
        let descs = vec![desc(&[(1, 1.0)])];
        let all = build_signature(&descs, &cb, f64::INFINITY).unwrap();
        assert_eq!(all.ones(), 4);
        let exact = build_signature(&descs, &cb, 0.0).unwrap();
        assert_eq!(exact.bits, vec![false, true, false, false]);
    }

    #[test]
    fn identical_signature_matches_at_distance_zero() {
        let train = vec![
            sig(&[1, 0, 1, 0], Some("sedan")),
            sig(&[0, 1, 1, 1], Some("taxi")),
        ];
        let got = classify_intra(&sig(&[0, 1, 1, 1], None), &train).unwrap();
        assert_eq!(got.label, "taxi");
        assert_eq!(got.distance, 0.0);
        assert_eq!(got.index, 1);
    }

    #[test]
    fn four_differing_bits_give_distance_two() {
        let train = vec![sig(&[0, 0, 0, 0, 0], Some("sedan"))];
        let got = classify_intra(&sig(&[1, 1, 1, 1, 0], None), &train).unwrap();
        assert_eq!(got.hamming, 4);
        assert_eq!(got.distance, 2.0);
    }

    #[test]
    fn intra_ties_take_the_earliest_training_signature() {
        let train = vec![
            sig(&[1, 1, 0, 0], Some("a")),
            sig(&[0, 0, 1, 1], Some("b")),
        ];
        // Equidistant (hamming 2) from both.
        let got = classify_intra(&sig(&[1, 0, 1, 0], None), &train).unwrap();
        assert_eq!(got.label, "a");
        assert_eq!(got.index, 0);
    }

    #[test]
    fn intra_rejects_empty_training_and_length_mismatch() {
        assert!(classify_intra(&sig(&[1], None), &[]).is_err());
        let train = vec![sig(&[1, 0], Some("a"))];
        assert!(classify_intra(&sig(&[1, 0, 1], None), &train).is_err());
    }

    #[test]
    fn intra_matches_brute_force_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let train: Vec<Signature> = (0..10)
                .map(|i| {
                    let bits: Vec<bool> = (0..16).map(|_| rng.random()).collect();
                    Signature {
                        bits,
                        label: Some(format!("c{}", i % 3)),
                    }
                })
                .collect();
            let query = Signature {
                bits: (0..16).map(|_| rng.random()).collect(),
                label: None,
            };
            let got = classify_intra(&query, &train).unwrap();
            let brute = train
                .iter()
                .enumerate()
                .map(|(i, t)| (query.hamming(t), i))
                .min()
                .unwrap();
            assert_eq!(got.index, brute.1);
            assert_eq!(got.hamming, brute.0);
        }
    }

    proptest! {
        /// Enlarging tau can only turn signature bits on.
        #[test]
        fn signature_bits_dominate_under_larger_tau(
            seed in any::<u64>(),
            tau in 0.05f64..1.5,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cb = basis_codebook(8);
            let descs: Vec<Descriptor<f64>> = (0..6)
                .map(|_| {
                    let mut v = [0.0; DESCRIPTOR_LEN];
                    for x in v.iter_mut().take(10) {
                        *x = rng.random::<f64>();
                    }
                    Descriptor::from_values(&v)
                })
                .collect();
            let small = build_signature(&descs, &cb, tau).unwrap();
            let large = build_signature(&descs, &cb, tau * 2.0).unwrap();
            for (s, l) in small.bits.iter().zip(&large.bits) {
                prop_assert!(!s || *l);
            }
        }

        /// Weights always stay within [0, 1].
        #[test]
        fn weights_stay_in_unit_interval(seed in any::<u64>(), tau in 0.1f64..2.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cb = basis_codebook(4);
            let classes = vec!["a".to_string(), "b".to_string()];
            let gen_images = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<Descriptor<f64>>> {
                (0..3)
                    .map(|_| {
                        (0..2)
                            .map(|_| {
                                let mut v = [0.0; DESCRIPTOR_LEN];
                                for x in v.iter_mut().take(4) {
                                    *x = rng.random::<f64>();
                                }
                                Descriptor::from_values(&v)
                            })
                            .collect()
                    })
                    .collect()
            };
            let per_class = [gen_images(&mut rng), gen_images(&mut rng)];
            let wt = assign_weights(&cb, &classes, &per_class, tau).unwrap();
            for row in &wt.weights {
                for &w in row {
                    prop_assert!((0.0..=1.0).contains(&w));
                }
            }
        }
    }
}
