//! Brute-force reference implementations, written independently of the
//! graph-based versions they check.

use crate::modality::Modality;

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Batch-hard triplet loss as the largest hinge over every `(positive,
/// negative)` pair of each anchor, summed over anchors.
pub fn triplet_by_enumeration(feats: &[Vec<f64>], labels: &[usize], rho: f64) -> f64 {
    let n = feats.len();
    let mut total = 0.0;
    for a in 0..n {
        let mut worst = f64::NEG_INFINITY;
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                let h = (rho + euclid(&feats[a], &feats[p]) - euclid(&feats[a], &feats[q])).max(0.0);
                worst = worst.max(h);
            }
        }
        total += worst;
    }
    total
}

/// Per-identity visible and thermal centers, identities ascending.
pub fn naive_centers(
    feats: &[Vec<f64>],
    labels: &[usize],
    modalities: &[Modality],
) -> (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let dim = feats.first().map_or(0, Vec::len);
    let mean_of = |id: usize, m: Modality| {
        let rows: Vec<&Vec<f64>> = (0..feats.len())
            .filter(|&i| labels[i] == id && modalities[i] == m)
            .map(|i| &feats[i])
            .collect();
        (0..dim)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect::<Vec<f64>>()
    };
    let vis = ids.iter().map(|&i| mean_of(i, Modality::Visible)).collect();
    let thr = ids.iter().map(|&i| mean_of(i, Modality::Thermal)).collect();
    (ids, vis, thr)
}

/// Hetero-center triplet loss: each of the `2P` centers is an anchor, its
/// other-modality center the positive, and every center of another identity
/// a candidate negative. The hinge is maximized over negatives.
pub fn center_triplet_by_enumeration(visible: &[Vec<f64>], thermal: &[Vec<f64>], rho: f64) -> f64 {
    let p = visible.len();
    let mut total = 0.0;
    for i in 0..p {
        for (anchor, positive) in [(&visible[i], &thermal[i]), (&thermal[i], &visible[i])] {
            let dp = euclid(anchor, positive);
            let mut worst = f64::NEG_INFINITY;
            for j in (0..p).filter(|&j| j != i) {
                for neg in [&visible[j], &thermal[j]] {
                    worst = worst.max((rho + dp - euclid(anchor, neg)).max(0.0));
                }
            }
            total += worst;
        }
    }
    total
}

/// Distance evaluations for hard mining, counted by listing pairs.
pub fn enumerate_pairs(p: usize, k: usize) -> (usize, usize, usize, usize) {
    let labels: Vec<usize> = (0..p).flat_map(|i| std::iter::repeat_n(i, 2 * k)).collect();
    let (mut bp, mut bn) = (0, 0);
    for a in 0..labels.len() {
        for b in (0..labels.len()).filter(|&b| b != a) {
            if labels[a] == labels[b] {
                bp += 1;
            } else {
                bn += 1;
            }
        }
    }
    let centers: Vec<(usize, usize)> = (0..p).flat_map(|i| [(i, 0), (i, 1)]).collect();
    let (mut hp, mut hn) = (0, 0);
    for &(ia, ma) in &centers {
        for &(ib, mb) in &centers {
            if ia == ib && ma != mb {
                hp += 1;
            } else if ia != ib {
                hn += 1;
            }
        }
    }
    (bp, bn, hp, hn)
}

/// Reference retrieval metrics: `(cmc, mAP, mINP)` from a full distance
/// matrix, ranking ties by gallery index.
pub fn metrics_by_enumeration(
    query: &[Vec<f64>],
    query_labels: &[usize],
    gallery: &[Vec<f64>],
    gallery_labels: &[usize],
) -> (Vec<f64>, f64, f64) {
    let g = gallery.len();
    let mut first_hits = vec![0usize; g + 1];
    let (mut ap_sum, mut inp_sum) = (0.0, 0.0);
    for (q, &ql) in query.iter().zip(query_labels) {
        let d: Vec<f64> = gallery.iter().map(|x| euclid(q, x)).collect();
        // 1-based rank of gallery item j
        let rank = |j: usize| 1 + (0..g).filter(|&i| d[i] < d[j] || (d[i] == d[j] && i < j)).count();
        let mut hits: Vec<usize> = (0..g).filter(|&j| gallery_labels[j] == ql).map(rank).collect();
        hits.sort_unstable();
        first_hits[hits[0]] += 1;
        ap_sum += hits.iter().enumerate().map(|(k, &r)| (k + 1) as f64 / r as f64).sum::<f64>() / hits.len() as f64;
        inp_sum += hits.len() as f64 / *hits.last().unwrap() as f64;
    }
    let nq = query.len() as f64;
    let cmc = (1..=g)
        .map(|r| first_hits[1..=r].iter().sum::<usize>() as f64 / nq)
        .collect();
    (cmc, ap_sum / nq, inp_sum / nq)
}

/// Smallest distance from a non-smooth point of the batch-hard loss: the gap
/// between the two hardest positives, the two hardest negatives, and the
/// hinge argument, minimized over anchors.
pub fn triplet_kink_gap(feats: &[Vec<f64>], labels: &[usize], rho: f64) -> f64 {
    let n = feats.len();
    let mut gap = f64::INFINITY;
    for a in 0..n {
        let mut pos: Vec<f64> = (0..n)
            .filter(|&p| p != a && labels[p] == labels[a])
            .map(|p| euclid(&feats[a], &feats[p]))
            .collect();
        let mut neg: Vec<f64> = (0..n)
            .filter(|&q| labels[q] != labels[a])
            .map(|q| euclid(&feats[a], &feats[q]))
            .collect();
        pos.sort_by(|x, y| y.total_cmp(x));
        neg.sort_by(f64::total_cmp);
        gap = gap.min(top_two_gap(&pos)).min(top_two_gap(&neg));
        gap = gap.min((rho + pos[0] - neg[0]).abs());
    }
    gap
}

/// Same as [`triplet_kink_gap`] for the center-based loss.
pub fn center_kink_gap(visible: &[Vec<f64>], thermal: &[Vec<f64>], rho: f64) -> f64 {
    let p = visible.len();
    let mut gap = f64::INFINITY;
    for i in 0..p {
        for (anchor, positive) in [(&visible[i], &thermal[i]), (&thermal[i], &visible[i])] {
            let mut neg: Vec<f64> = (0..p)
                .filter(|&j| j != i)
                .flat_map(|j| [euclid(anchor, &visible[j]), euclid(anchor, &thermal[j])])
                .collect();
            neg.sort_by(f64::total_cmp);
            gap = gap
                .min(top_two_gap(&neg))
                .min((rho + euclid(anchor, positive) - neg[0]).abs());
        }
    }
    gap
}

fn top_two_gap(sorted: &[f64]) -> f64 {
    if sorted.len() < 2 {
        f64::INFINITY
    } else {
        (sorted[0] - sorted[1]).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_oracle_hand_example() {
        let v = vec![vec![0.0], vec![0.5]];
        let t = vec![vec![0.4], vec![0.9]];
        assert!((center_triplet_by_enumeration(&v, &t, 0.3) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn pair_enumeration_matches_table_row() {
        assert_eq!(enumerate_pairs(8, 4), (448, 3584, 16, 224));
    }

    #[test]
    fn metric_oracle_fixture() {
        let q = vec![vec![0.0]];
        let g = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let (cmc, map, minp) = metrics_by_enumeration(&q, &[0], &g, &[0, 1, 0, 1]);
        assert_eq!(cmc, vec![1.0; 4]);
        assert!((map - 5.0 / 6.0).abs() < 1e-12);
        assert!((minp - 2.0 / 3.0).abs() < 1e-12);
    }
}
