//! Locally scaled kNN affinity graph with symmetric degree normalisation.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::math::{fmt_f64, sq_dist};

pub const DEFAULT_NEIGHBORS: usize = 10;

/// Lower bound on the local scale, reached when the h-th neighbour coincides with the point.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Undirected weighted graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
    h: Option<usize>,
}

impl AffinityGraph {
    /// Builds a graph from undirected edges `(i, j, weight)`, `i != j`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], h: Option<usize>) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Schema(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::Schema(format!("self-edge on node {i}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Schema(format!("edge ({i}, {j}) has weight {w}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Schema(format!("duplicate edge ({i}, {j})")));
            }
            neighbors[i].push((j, w));
            neighbors[j].push((i, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(AffinityGraph { neighbors, h })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbour count the graph was built with, when known.
    pub fn h(&self) -> Option<usize> {
        self.h
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map_or(0.0, |p| self.neighbors[i][p].1)
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&(_, w)| w).sum()
    }

    /// Undirected edges with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&(j, _)| j > i).map(|&(j, w)| (i, j, w)));
        }
        out
    }

    /// Writes the `i,j,weight` edge list.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["i", "j", "weight"])?;
        for (i, j, w) in self.edges() {
            wtr.write_record([i.to_string(), j.to_string(), fmt_f64(w)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, n: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            i: usize,
            j: usize,
            weight: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut edges = Vec::new();
        for row in rdr.deserialize() {
            let r: Row = row?;
            if r.i >= r.j {
                return Err(Error::Schema(format!(
                    "edge list rows need i < j, found ({}, {})",
                    r.i, r.j
                )));
            }
            edges.push((r.i, r.j, r.weight));
        }
        AffinityGraph::from_edges(n, &edges, None)
    }
}

/// The `h` nearest other points of every point under ℓ2 distance, nearest
/// first. Ties go to the lower index.
pub fn knn<X: AsRef<[f64]> + Sync>(xs: &[X], h: usize) -> Result<Vec<Vec<usize>>> {
    let n = xs.len();
    if h == 0 || n <= h {
        return Err(Error::InsufficientNodes { n, h });
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let xi = xs[i].as_ref();
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(xi, xs[j].as_ref()), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if h < cand.len() {
                cand.select_nth_unstable_by(h - 1, cmp);
                cand.truncate(h);
            }
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Locally scaled kernel `exp(-d²(i,j) / (σ_i σ_j))` over the union of the
/// directed kNN edges, with `σ_i` the distance from `i` to its h-th neighbour.
///
/// Weights that underflow are floored at the smallest positive normal so
/// that every kNN edge keeps a strictly positive weight.
pub fn local_scaled_weights<X: AsRef<[f64]> + Sync>(
    xs: &[X],
    nbrs: &[Vec<usize>],
    h: usize,
) -> Result<AffinityGraph> {
    let n = xs.len();
    if nbrs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: nbrs.len(),
            context: "neighbour lists".into(),
        });
    }
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let far = *nbrs[i]
                .get(h.saturating_sub(1))
                .or(nbrs[i].last())
                .ok_or(Error::InsufficientNodes { n, h })?;
            Ok(sq_dist(xs[i].as_ref(), xs[far].as_ref()).sqrt().max(SIGMA_FLOOR))
        })
        .collect::<Result<_>>()?;

    let mut pairs = BTreeSet::new();
    for (i, list) in nbrs.iter().enumerate() {
        for &j in list {
            if j != i {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    let edges: Vec<(usize, usize, f64)> = pairs
        .into_iter()
        .map(|(i, j)| {
            let d2 = sq_dist(xs[i].as_ref(), xs[j].as_ref());
            let w = (-d2 / (sigma[i] * sigma[j])).exp().max(f64::MIN_POSITIVE);
            (i, j, w)
        })
        .collect();
    AffinityGraph::from_edges(n, &edges, Some(h))
}

/// `D^{-1/2} V D^{-1/2}` with `D` the pre-normalisation degrees.
pub fn normalize(g: &AffinityGraph) -> Result<AffinityGraph> {
    let deg: Vec<f64> = (0..g.n()).map(|i| g.degree(i)).collect();
    if let Some(i) = deg.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::IsolatedNode(i));
    }
    let edges: Vec<(usize, usize, f64)> = g
        .edges()
        .into_iter()
        .map(|(i, j, w)| (i, j, w / (deg[i] * deg[j]).sqrt()))
        .collect();
    AffinityGraph::from_edges(g.n(), &edges, g.h)
}

/// kNN search, local-scale weighting and normalisation in one call.
pub fn build_graph<X: AsRef<[f64]> + Sync>(xs: &[X], h: usize) -> Result<AffinityGraph> {
    let nbrs = knn(xs, h)?;
    normalize(&local_scaled_weights(xs, &nbrs, h)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, 0);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn knn_on_a_line() {
        let xs = vec![vec![0.0], vec![1.0], vec![10.0]];
        let nb = knn(&xs, 1).unwrap();
        assert_eq!(nb, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn knn_with_h_n_minus_one_is_complete() {
        let xs = random_points(6, 2, 3);
        let nb = knn(&xs, 5).unwrap();
        for (i, list) in nb.iter().enumerate() {
            let mut sorted = list.clone();
            sorted.sort();
            let expected: Vec<usize> = (0..6).filter(|&j| j != i).collect();
            assert_eq!(sorted, expected);
        }
    }

    #[test]
    fn knn_requires_more_nodes_than_neighbours() {
        let xs = random_points(3, 2, 0);
        assert!(matches!(knn(&xs, 3), Err(Error::InsufficientNodes { n: 3, h: 3 })));
    }

    #[test]
    fn knn_ties_break_toward_lower_index() {
        let xs = vec![vec![0.0], vec![1.0], vec![-1.0], vec![2.0]];
        assert_eq!(knn(&xs, 1).unwrap()[0], vec![1]);
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        let xs = random_points(50, 3, 11);
        let nb = knn(&xs, 10).unwrap();
        for i in 0..50 {
            let mut all: Vec<(f64, usize)> = (0..50)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    (d.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle: Vec<usize> = all.iter().take(10).map(|p| p.1).collect();
            assert_eq!(nb[i], oracle);
        }
    }

    #[test]
    fn kernel_value_at_unit_exponent() {
        // σ_0 = σ_1 = 2 and d = 2, so the exponent is -1.
        let xs = vec![vec![0.0], vec![2.0], vec![-2.0]];
        let nbrs = vec![vec![1], vec![0], vec![0]];
        let g = local_scaled_weights(&xs, &nbrs, 1).unwrap();
        assert!((g.weight(0, 1) - (-1f64).exp()).abs() < 1e-15);
        assert!((g.weight(0, 1) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn duplicate_points_get_unit_weight() {
        let xs = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        let nbrs = knn(&xs, 1).unwrap();
        let g = local_scaled_weights(&xs, &nbrs, 1).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
    }

    #[test]
    fn far_clusters_have_no_strong_cross_edges() {
        let mut xs = random_points(40, 2, 5);
        for p in xs.iter_mut().skip(20) {
            p[0] += 100.0 * 2.0;
        }
        let g = local_scaled_weights(&xs, &knn(&xs, 5).unwrap(), 5).unwrap();
        for (i, j, w) in g.edges() {
            if (i < 20) != (j < 20) {
                assert!(w <= 1e-6, "edge ({i},{j}) weight {w}");
            }
        }
    }

    #[test]
    fn normalize_two_node_and_path() {
        let g = AffinityGraph::from_edges(2, &[(0, 1, 1.0)], None).unwrap();
        assert_eq!(normalize(&g).unwrap().weight(0, 1), 1.0);

        let path = AffinityGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], None).unwrap();
        let p = normalize(&path).unwrap();
        let expected = 1.0 / 2f64.sqrt();
        assert!((p.weight(0, 1) - expected).abs() < 1e-15);
        assert!((p.weight(2, 1) - expected).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_isolated_node() {
        let g = AffinityGraph::from_edges(3, &[(0, 1, 1.0)], None).unwrap();
        assert!(matches!(normalize(&g), Err(Error::IsolatedNode(2))));
    }

    #[test]
    fn edge_csv_round_trip() {
        let xs = random_points(30, 4, 9);
        let g = build_graph(&xs, 4).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("i,j,weight\n"));
        let back = AffinityGraph::read_csv(buf.as_slice(), 30).unwrap();
        assert_eq!(back.edges(), g.edges());
    }

    fn spectral_radius(g: &AffinityGraph) -> f64 {
        // power iteration on a shifted positive vector
        let n = g.n();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let mut next = vec![0.0; n];
            for (i, out) in next.iter_mut().enumerate() {
                *out = g.neighbors(i).iter().map(|&(j, w)| w * v[j]).sum();
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = next.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn graphs_are_symmetric_and_bounded(seed in 0u64..10_000, n in 5usize..40, h in 1usize..5) {
            let xs = random_points(n, 3, seed);
            let raw = local_scaled_weights(&xs, &knn(&xs, h).unwrap(), h).unwrap();
            let norm = normalize(&raw).unwrap();
            for g in [&raw, &norm] {
                for i in 0..n {
                    prop_assert_eq!(g.weight(i, i), 0.0);
                    for &(j, w) in g.neighbors(i) {
                        prop_assert_eq!(w, g.weight(j, i));
                        prop_assert!(w > 0.0 && w.is_finite());
                    }
                }
            }
            for (_, _, w) in raw.edges() {
                prop_assert!(w <= 1.0);
            }
            prop_assert!(spectral_radius(&norm) <= 1.0 + 1e-9);
        }

        #[test]
        fn knn_is_permutation_equivariant(seed in 0u64..10_000, n in 4usize..25) {
            let xs = random_points(n, 2, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = rng_for(seed, 1);
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            // permuted[k] = xs[perm[k]]
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| xs[p].clone()).collect();
            let a = knn(&xs, 2).unwrap();
            let b = knn(&permuted, 2).unwrap();
            // continuous random points have no distance ties
            for k in 0..n {
                let mapped: Vec<usize> = b[k].iter().map(|&j| perm[j]).collect();
                prop_assert_eq!(&mapped, &a[perm[k]]);
            }
        }
    }
}
