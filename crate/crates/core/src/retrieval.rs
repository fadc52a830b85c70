//! Shape descriptors, ranking, and retrieval metrics.
//!
//! Relevance is an exact label match. Each query is ranked against every
//! other object; its relevant set is the rest of its class.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::multiview::{EnsembleModel, MultiviewError};
use crate::nn::layers::softmax;
use crate::nn::{Scalar, Tensor};
use crate::par;
use crate::render::{DepthImage, ImageKind};

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub object_id: String,
    pub label: usize,
    /// Softmax of the aggregated scores.
    pub probs: Vec<f64>,
}

impl Descriptor {
    pub fn from_scores<T: Scalar>(object_id: impl Into<String>, label: usize, scores: &[T]) -> Self {
        let s: Vec<f64> = scores.iter().map(|&v| Scalar::to_f64(v)).collect();
        Descriptor { object_id: object_id.into(), label, probs: softmax(&s) }
    }
}

/// Descriptor of one object from its selected views.
pub fn descriptor<T: Scalar>(
    ensemble: &EnsembleModel<T>,
    object_id: impl Into<String>,
    label: usize,
    views: &[Tensor<T>],
) -> Result<Descriptor, MultiviewError> {
    Ok(Descriptor::from_scores(object_id, label, &ensemble.predict(views)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    L1,
    #[default]
    L2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        match name.to_ascii_lowercase().as_str() {
            "l1" => Some(Metric::L1),
            "l2" => Some(Metric::L2),
            _ => None,
        }
    }
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match metric {
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    /// Corpus indices, nearest first.
    pub ranked: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Orders the corpus by ascending distance to `query`, ties by object id.
/// Entries with the query's own id are left out.
pub fn rank(query: &Descriptor, corpus: &[Descriptor], metric: Metric) -> RankedList {
    let mut scored: Vec<(f64, usize)> = corpus
        .iter()
        .enumerate()
        .filter(|(_, d)| d.object_id != query.object_id)
        .map(|(i, d)| (distance(&query.probs, &d.probs, metric), i))
        .collect();
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| corpus[a.1].object_id.cmp(&corpus[b.1].object_id)).then(a.1.cmp(&b.1))
    });
    RankedList {
        query_id: query.object_id.clone(),
        ranked: scored.iter().map(|s| s.1).collect(),
        distances: scored.iter().map(|s| s.0).collect(),
    }
}

/// `(1/R) Σ_{k relevant} precision@k` with `R` the number of relevant entries
/// in the list; 0 when nothing is relevant.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_average_precision(lists: &[Vec<bool>]) -> f64 {
    mean(lists.iter().map(|r| average_precision(r)))
}

/// DCG over the first `depth` entries (gain 1 per relevant entry, discount
/// `1/log2(i+1)`), divided by the DCG of the ideal ordering.
pub fn ndcg(relevance: &[bool], depth: usize) -> f64 {
    let depth = depth.min(relevance.len());
    let discount = |i: usize| 1.0 / libm::log2((i + 2) as f64);
    let dcg: f64 = (0..depth).filter(|&i| relevance[i]).map(discount).sum();
    let relevant = relevance.iter().filter(|&&r| r).count();
    let ideal: f64 = (0..depth.min(relevant)).map(discount).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Precision and recall of the first `cutoff` entries.
pub fn precision_recall(relevance: &[bool], cutoff: usize, total_relevant: usize) -> (f64, f64) {
    let cutoff = cutoff.min(relevance.len());
    let hits = relevance[..cutoff].iter().filter(|&&r| r).count() as f64;
    let p = if cutoff == 0 { 0.0 } else { hits / cutoff as f64 };
    let r = if total_relevant == 0 { 0.0 } else { hits / total_relevant as f64 };
    (p, r)
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// `(micro, macro)`: the mean of per-query F over all queries, and the mean
/// over categories of each category's mean F. Input is `(label, F)` pairs.
pub fn f_scores(per_query: &[(usize, f64)]) -> (f64, f64) {
    let micro = mean(per_query.iter().map(|q| q.1));
    let mut labels: Vec<usize> = per_query.iter().map(|q| q.0).collect();
    labels.sort_unstable();
    labels.dedup();
    let macro_f = mean(labels.iter().map(|&l| mean(per_query.iter().filter(|q| q.0 == l).map(|q| q.1))));
    (micro, macro_f)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RetrievalMetrics {
    pub map: f64,
    pub ndcg: f64,
    pub micro_f: f64,
    pub macro_f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub metrics: RetrievalMetrics,
    pub rankings: Vec<RankedList>,
}

/// Every descriptor queried against all the others. NDCG and F use a cutoff
/// equal to the number of other members of the query's class.
pub fn evaluate_retrieval(corpus: &[Descriptor], metric: Metric) -> RetrievalReport {
    let rankings = par::map_range(corpus.len(), |q| rank(&corpus[q], corpus, metric));
    let mut aps = Vec::with_capacity(corpus.len());
    let mut ndcgs = Vec::with_capacity(corpus.len());
    let mut fs = Vec::with_capacity(corpus.len());
    for (q, list) in rankings.iter().enumerate() {
        let label = corpus[q].label;
        let rel: Vec<bool> = list.ranked.iter().map(|&i| corpus[i].label == label).collect();
        let relevant = rel.iter().filter(|&&r| r).count();
        aps.push(average_precision(&rel));
        ndcgs.push(ndcg(&rel, relevant));
        let (p, r) = precision_recall(&rel, relevant, relevant);
        fs.push((label, f_score(p, r)));
    }
    let (micro_f, macro_f) = f_scores(&fs);
    RetrievalReport {
        metrics: RetrievalMetrics {
            map: mean(aps.into_iter()),
            ndcg: mean(ndcgs.into_iter()),
            micro_f,
            macro_f,
        },
        rankings,
    }
}

/// Pairwise distances with rows and columns grouped by label.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    /// Corpus index of each row/column.
    pub order: Vec<usize>,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.order.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size() + col]
    }

    /// Grayscale image of the distances scaled by the largest one.
    pub fn to_image(&self) -> DepthImage {
        let n = self.size();
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let mut img = DepthImage::blank(n, n, ImageKind::SimilarityMatrix);
        for (p, &v) in img.pixels.iter_mut().zip(&self.values) {
            *p = (v * scale) as f32;
        }
        img
    }

    /// Mean distance between distinct members of one class, and between
    /// members of different classes.
    pub fn class_separation(&self, corpus: &[Descriptor]) -> (f64, f64) {
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for (r, &i) in self.order.iter().enumerate() {
            for (c, &j) in self.order.iter().enumerate() {
                if i == j {
                    continue;
                }
                if corpus[i].label == corpus[j].label {
                    within += self.get(r, c);
                    nw += 1;
                } else {
                    between += self.get(r, c);
                    nb += 1;
                }
            }
        }
        (within / nw.max(1) as f64, between / nb.max(1) as f64)
    }
}

pub fn similarity_matrix(corpus: &[Descriptor], metric: Metric) -> SimilarityMatrix {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| match corpus[a].label.cmp(&corpus[b].label) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let n = order.len();
    let mut values = vec![0.0; n * n];
    for r in 0..n {
        for c in r + 1..n {
            let d = distance(&corpus[order[r]].probs, &corpus[order[c]].probs, metric);
            values[r * n + c] = d;
            values[c * n + r] = d;
        }
    }
    SimilarityMatrix { order, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;

    fn desc(id: &str, label: usize, probs: &[f64]) -> Descriptor {
        Descriptor { object_id: id.into(), label, probs: probs.to_vec() }
    }

    #[test]
    fn descriptor_is_a_distribution() {
        let d = Descriptor::from_scores("a", 0, &[0.3f32, -1.0, 2.5]);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d.probs.iter().all(|&p| p >= 0.0));
        let u = Descriptor::from_scores("u", 0, &[0.7f64; 4]);
        assert!(u.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn distances() {
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], Metric::L1), 2.0);
        assert!((distance(&[1.0, 0.0], &[0.0, 1.0], Metric::L2) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(distance(&[0.2, 0.8], &[0.2, 0.8], Metric::L2), 0.0);
    }

    #[test]
    fn ranking_rules() {
        let q = desc("q", 0, &[1.0, 0.0]);
        let one = [desc("x", 1, &[0.0, 1.0])];
        assert_eq!(rank(&q, &one, Metric::L2).ranked, vec![0]);

        let corpus = [
            desc("b", 0, &[0.5, 0.5]),
            desc("a", 0, &[0.5, 0.5]),
            desc("q", 0, &[1.0, 0.0]),
            desc("dup", 0, &[1.0, 0.0]),
        ];
        let r = rank(&q, &corpus, Metric::L1);
        assert_eq!(r.ranked, vec![3, 1, 0]);
        assert_eq!(r.distances[0], 0.0);
        assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));

        let reversed: Vec<Descriptor> = corpus.iter().rev().cloned().collect();
        let ids = |list: &RankedList, c: &[Descriptor]| -> Vec<String> {
            list.ranked.iter().map(|&i| c[i].object_id.clone()).collect()
        };
        assert_eq!(ids(&rank(&q, &reversed, Metric::L1), &reversed), ids(&r, &corpus));
    }

    #[test]
    fn metric_examples() {
        assert!((average_precision(&[true, false, true]) - 0.833_333).abs() < 1e-4);
        assert_eq!(average_precision(&[true; 5]), 1.0);
        assert_eq!(average_precision(&[false; 5]), 0.0);

        assert_eq!(ndcg(&[true, true, false], 3), 1.0);
        assert!((ndcg(&[false, true], 2) - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg(&[false, false], 2), 0.0);

        assert_eq!(f_score(1.0, 1.0), 1.0);
        assert_eq!(f_score(1.0, 0.0), 0.0);
        let (micro, macro_f) = f_scores(&[(0, 1.0), (1, 0.0), (1, 0.0), (1, 0.0)]);
        assert!((macro_f - 0.5).abs() < 1e-12);
        assert!((micro - 0.25).abs() < 1e-12);
    }

    /// Precision@k recounted from scratch at every relevant position.
    fn brute_force_ap(rel: &[bool]) -> f64 {
        let r = rel.iter().filter(|&&x| x).count();
        if r == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for k in 1..=rel.len() {
            if rel[k - 1] {
                let hits = rel[..k].iter().filter(|&&x| x).count();
                sum += hits as f64 / k as f64;
            }
        }
        sum / r as f64
    }

    proptest! {
        #[test]
        fn ap_equals_brute_force(rel in proptest::collection::vec(any::<bool>(), 0..50)) {
            prop_assert_eq!(average_precision(&rel), brute_force_ap(&rel));
        }

        #[test]
        fn l1_and_l2_agree_on_corners(labels in proptest::collection::vec(0usize..4, 2..20)) {
            let corpus: Vec<Descriptor> = labels.iter().enumerate().map(|(i, &l)| {
                let mut p = vec![0.0; 4];
                p[l] = 1.0;
                desc(&format!("o{i:02}"), l, &p)
            }).collect();
            for q in &corpus {
                prop_assert_eq!(rank(q, &corpus, Metric::L1).ranked, rank(q, &corpus, Metric::L2).ranked);
            }
        }
    }

    #[test]
    fn metrics_depend_only_on_order() {
        let corpus = [
            desc("a", 0, &[0.9, 0.1]),
            desc("b", 0, &[0.8, 0.2]),
            desc("c", 1, &[0.3, 0.7]),
            desc("d", 1, &[0.1, 0.9]),
        ];
        let perfect = evaluate_retrieval(&corpus, Metric::L2).metrics;
        assert_eq!(perfect, RetrievalMetrics { map: 1.0, ndcg: 1.0, micro_f: 1.0, macro_f: 1.0 });
        // Sharpening every descriptor keeps the order and the metrics.
        let sharper: Vec<Descriptor> = corpus
            .iter()
            .map(|d| {
                let p0 = d.probs[0] * d.probs[0];
                let p1 = d.probs[1] * d.probs[1];
                desc(&d.object_id, d.label, &[p0 / (p0 + p1), p1 / (p0 + p1)])
            })
            .collect();
        assert_eq!(evaluate_retrieval(&sharper, Metric::L1).metrics, perfect);
    }

    #[test]
    fn similarity_matrix_layout() {
        let corpus = [
            desc("a", 1, &[0.1, 0.9]),
            desc("b", 0, &[0.9, 0.1]),
            desc("c", 1, &[0.2, 0.8]),
            desc("d", 0, &[0.8, 0.2]),
        ];
        let m = similarity_matrix(&corpus, Metric::L2);
        assert_eq!(m.order, vec![1, 3, 0, 2]);
        for i in 0..4 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..4 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
            }
        }
        let (within, between) = m.class_separation(&corpus);
        assert!(within < between);
        let img = m.to_image();
        assert_eq!((img.rows, img.cols, img.kind), (4, 4, ImageKind::SimilarityMatrix));
        assert_eq!(img.pixels.iter().copied().fold(0.0, f32::max), 1.0);
    }
}
