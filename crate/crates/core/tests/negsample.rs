//! Sampler distributions and negative-graph invariants.

mod common;

use std::collections::{BTreeMap, HashSet};

use common::random_graph;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use yygnn::graph::{split_edges, CsrGraph};
use yygnn::negsample::{
    sample_negative_graph, sample_negative_set, sample_supervision_negatives, sample_supervision_pairs, SamplerMode,
};

fn canonical(e: (usize, usize)) -> (usize, usize) {
    (e.0.min(e.1), e.0.max(e.1))
}

fn non_edges(g: &CsrGraph) -> Vec<(usize, usize)> {
    let n = g.num_nodes();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !g.has_edge(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Upper-tail p-value of Pearson's statistic for observed counts against
/// expected probabilities.
fn chi_square_p(counts: &BTreeMap<(usize, usize), usize>, probs: &BTreeMap<(usize, usize), f64>, total: usize) -> f64 {
    let mut stat = 0.0;
    for (cell, &p) in probs {
        let expect = p * total as f64;
        let obs = *counts.get(cell).unwrap_or(&0) as f64;
        stat += (obs - expect).powi(2) / expect;
    }
    assert!(counts.keys().all(|c| probs.contains_key(c)), "sample outside the support");
    let dof = (probs.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn global_uniform_one_slot_is_uniform_over_non_edges() {
    let g = random_graph(20, 0.1, 7);
    let slot = g.edges().next().unwrap();
    let draws = sample_supervision_pairs(&g, &[slot], 10_000, SamplerMode::GlobalUniform, 99).unwrap();
    let mut counts = BTreeMap::new();
    for &e in &draws.pairs {
        *counts.entry(canonical(e)).or_insert(0) += 1;
    }
    let cells = non_edges(&g);
    let probs: BTreeMap<_, _> = cells.iter().map(|&c| (c, 1.0 / cells.len() as f64)).collect();
    let p = chi_square_p(&counts, &probs, draws.pairs.len());
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn negative_graph_edges_are_uniform_in_aggregate() {
    let g = random_graph(20, 0.08, 8);
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for seed in 0..600 {
        let neg = sample_negative_graph(&g, SamplerMode::GlobalUniform, seed).unwrap();
        for e in neg.edges() {
            *counts.entry(e).or_insert(0) += 1;
            total += 1;
        }
    }
    let cells = non_edges(&g);
    let probs: BTreeMap<_, _> = cells.iter().map(|&c| (c, 1.0 / cells.len() as f64)).collect();
    let p = chi_square_p(&counts, &probs, total);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn source_uniform_keeps_an_endpoint_and_is_uniform_given_it() {
    let g = random_graph(20, 0.15, 9);
    let slot = g.edges().next().unwrap();
    let draws = sample_supervision_pairs(&g, &[slot], 10_000, SamplerMode::SourceUniform, 5).unwrap();
    // Either endpoint is the source with probability 1/2, then the
    // destination is uniform over that source's non-neighbours.
    let mut probs = BTreeMap::new();
    for src in [slot.0, slot.1] {
        let dests: Vec<usize> = (0..20).filter(|&j| j != src && !g.has_edge(src, j)).collect();
        for j in &dests {
            *probs.entry(canonical((src, *j))).or_insert(0.0) += 0.5 / dests.len() as f64;
        }
    }
    let mut counts = BTreeMap::new();
    for &e in &draws.pairs {
        assert!(e.0 == slot.0 || e.0 == slot.1 || e.1 == slot.0 || e.1 == slot.1);
        *counts.entry(canonical(e)).or_insert(0) += 1;
    }
    let p = chi_square_p(&counts, &probs, draws.pairs.len());
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn many_supervision_negatives_avoid_positives() {
    let g = random_graph(200, 0.05, 10);
    let split = split_edges(&g, (0.7, 0.1, 0.2), 1).unwrap();
    let per_edge = 100_000 / split.train_edges.len() + 1;
    let sup = sample_supervision_negatives(&split, per_edge, 3).unwrap();
    assert!(sup.pairs.len() >= 100_000);
    let train: HashSet<(usize, usize)> = split.train_edges.iter().map(|&e| canonical(e)).collect();
    assert!(sup.pairs.iter().all(|&e| e.0 != e.1 && !train.contains(&canonical(e))));
    assert_eq!(sup, sample_supervision_negatives(&split, per_edge, 3).unwrap());
}

#[test]
fn k_three_degree_handshake() {
    let g = random_graph(50, 0.1, 11);
    let set = sample_negative_set(&g, 3, SamplerMode::SourceUniform, 4).unwrap();
    assert_eq!(set.combined_degrees().iter().sum::<usize>(), 2 * 3 * g.num_edges());
    assert!(set.graphs().iter().all(|ng| ng.num_edges() == g.num_edges()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn negatives_never_hit_positives_or_self(seed in 0u64..10_000, n in 4usize..40, k in 1usize..4, source in any::<bool>()) {
        let g = random_graph(n, 0.25, seed);
        prop_assume!(!g.is_complete());
        let mode = if source { SamplerMode::SourceUniform } else { SamplerMode::GlobalUniform };
        let set = sample_negative_set(&g, k, mode, seed).unwrap();
        set.check_consistency(&g).unwrap();
        for ng in set.graphs() {
            prop_assert_eq!(ng.num_edges(), g.num_edges());
            for (i, j) in ng.edges() {
                prop_assert!(i != j && !g.has_edge(i, j));
            }
        }
        let mut deg = vec![0usize; n];
        for ng in set.graphs() {
            for i in 0..n {
                deg[i] += ng.degree(i);
            }
        }
        prop_assert_eq!(deg.as_slice(), set.combined_degrees());
    }

    #[test]
    fn epochs_resample(seed in 0u64..10_000, n in 10usize..40) {
        let g = random_graph(n, 0.2, seed);
        let a = sample_negative_set(&g, 1, SamplerMode::SourceUniform, seed).unwrap();
        let b = sample_negative_set(&g, 1, SamplerMode::SourceUniform, seed + 1).unwrap();
        prop_assert_ne!(a.graphs(), b.graphs());
    }
}
