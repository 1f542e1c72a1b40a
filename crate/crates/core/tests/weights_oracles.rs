//! Weight-iteration and uncertainty checks against hand-built oracles:
//! the convergence sandwich, per-pass monotonicity, the finite-vs-linear
//! bonus agreement, and the posterior-sampling variance identity.

use nalgebra::DVector;
use offrl_core::backend::{Cell, FiniteBackend, FunctionClass, LinearBackend};
use offrl_core::rng::rng_from_seed;
use offrl_core::weights::{bootstrap_variance, iterate_weights, iterate_weights_traced};
use rand::Rng;

fn random_linear_instance(seed: u64, n_max: usize, d_max: usize) -> (LinearBackend, Vec<Cell>) {
    let mut rng = rng_from_seed(seed);
    let d = 1 + (rng.random::<f64>() * d_max as f64) as usize % d_max;
    let n = 2 + (rng.random::<f64>() * (n_max - 2) as f64) as usize;
    let mut phi = vec![vec![vec![0.0; d]; 1]; n];
    for srow in phi.iter_mut() {
        let raw: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        // scale inside the unit ball, some points near the boundary
        let scale = (0.2 + 0.8 * rng.random::<f64>()) / norm;
        srow[0] = raw.iter().map(|x| x * scale).collect();
    }
    let points: Vec<Cell> = (0..n).map(|s| (s, 0)).collect();
    (LinearBackend::new(d, phi), points)
}

#[test]
fn sandwich_holds_on_random_instances() {
    for trial in 0..40 {
        let (backend, points) = random_linear_instance(1000 + trial, 30, 5);
        let alpha = 0.05 + 0.4 * ((trial % 7) as f64);
        let lambda = 0.25 + 0.5 * ((trial % 5) as f64);
        let wv = iterate_weights(&points, &backend, alpha, lambda).unwrap();
        let psi: Vec<f64> = backend
            .uncertainties(&points, &points, &wv.sigma_sq, lambda)
            .unwrap()
            .iter()
            .map(|u| u / alpha)
            .collect();
        for (i, &s2) in wv.sigma_sq.iter().enumerate() {
            let lo = (psi[i] / 2.0).max(1.0) - 1e-9;
            let hi = psi[i].max(1.0) + 1e-9;
            assert!(
                s2 >= lo && s2 <= hi,
                "trial {trial} point {i}: sigma^2 {s2} outside [{lo}, {hi}]"
            );
        }
    }
}

#[test]
fn squared_weights_never_decrease_across_passes() {
    for trial in 0..20 {
        let (backend, points) = random_linear_instance(7000 + trial, 25, 4);
        let (_, trace) = iterate_weights_traced(&points, &backend, 0.05, 0.25).unwrap();
        for w in trace.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(b >= a, "squared weight decreased: {a} -> {b}");
            }
        }
    }
}

#[test]
fn weights_respect_the_global_bound() {
    for trial in 0..20 {
        let (backend, points) = random_linear_instance(3000 + trial, 40, 5);
        let (alpha, lambda) = (0.07, 0.5);
        let wv = iterate_weights(&points, &backend, alpha, lambda).unwrap();
        let bound = (1.0 / (alpha * lambda.sqrt())).max(1.0);
        for &s2 in &wv.sigma_sq {
            assert!((1.0..=bound + 1e-9).contains(&s2));
        }
    }
}

/// Builds a finite class as the image of a linear map, with an aligned pair
/// per distinct feature so the closed-form and enumerated uncertainties agree
/// up to the `1/(lambda^{1/4} + 1)` factor.
fn aligned_finite_class(
    backend: &LinearBackend,
    points: &[Cell],
    cells: &[Cell],
    feature_cells: &[Cell],
    lambda: f64,
) -> FiniteBackend {
    let unit = vec![1.0; points.len()];
    let gram = backend.gram(points, &unit, lambda);
    let chol = gram.clone().cholesky().unwrap();
    let d = backend.d;
    let mut deltas: Vec<DVector<f64>> = Vec::new();
    for &fc in feature_cells {
        let phi = backend.feature(fc);
        let dir = chol.solve(&phi);
        let s_target = lambda.max(lambda.sqrt());
        let quad = phi.dot(&dir); // phi^T Gram^{-1} phi
        let c = (s_target / quad).sqrt();
        deltas.push(dir * c);
    }
    // all pairwise differences must stay below unit norm for the closed-form
    // upper bound to apply
    let max_norm = deltas.iter().map(DVector::norm).fold(0.0, f64::max);
    assert!(max_norm <= 0.5, "construction too aggressive: {max_norm}");

    let (s_count, a_count) = (
        cells.iter().map(|c| c.0).max().unwrap() + 1,
        cells.iter().map(|c| c.1).max().unwrap() + 1,
    );
    let mut tables = Vec::new();
    let zero = DVector::zeros(d);
    for w in std::iter::once(&zero).chain(deltas.iter()) {
        let mut t = vec![vec![0.5; a_count]; s_count];
        for &(s, a) in cells {
            t[s][a] = 0.5 + backend.feature((s, a)).dot(w);
            assert!((0.0..=1.0).contains(&t[s][a]));
        }
        tables.push(t);
    }
    FiniteBackend::new(tables).unwrap()
}

#[test]
fn finite_class_uncertainty_sandwiches_the_closed_form() {
    let mut rng = rng_from_seed(424242);
    for trial in 0..5 {
        let d = 2 + trial % 3;
        let m = d + 3; // distinct feature vectors
        let mut phi = vec![vec![vec![0.0; d]; 1]; m];
        for (k, srow) in phi.iter_mut().enumerate() {
            let raw: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = (0.55 + 0.4 * ((k % 3) as f64) / 3.0) / norm;
            srow[0] = raw.iter().map(|x| x * scale).collect();
        }
        let backend = LinearBackend::new(d, phi);
        let cells: Vec<Cell> = (0..m).map(|s| (s, 0)).collect();
        // data: enough visits per cell that the Gram matrix dominates lambda
        let mut points = Vec::new();
        for _rep in 0..25 {
            points.extend(cells.iter().copied());
        }
        let lambda = 0.25 + 0.15 * trial as f64;
        let fb = aligned_finite_class(&backend, &points, &cells, &cells, lambda);

        let unit = vec![1.0; points.len()];
        let b_lin = backend
            .uncertainties(&cells, &points, &unit, lambda)
            .unwrap();
        let b_fin = fb.uncertainties(&cells, &points, &unit, lambda).unwrap();
        let factor = lambda.powf(0.25) + 1.0;
        for (q, (&bl, &bf)) in b_lin.iter().zip(&b_fin).enumerate() {
            assert!(
                bf <= bl + 1e-8,
                "trial {trial} query {q}: finite {bf} above linear {bl}"
            );
            assert!(
                bf >= bl / factor - 1e-8,
                "trial {trial} query {q}: finite {bf} below {bl}/{factor}"
            );
        }
    }
}

#[test]
fn bootstrap_variance_matches_rank_one_inverse() {
    // one unit-vector point, lambda=1: posterior response variance is 1/2
    let backend = LinearBackend::new(2, vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 1]);
    let points = vec![(0, 0)];
    let v = bootstrap_variance((0, 0), &points, &[0.7], &backend, 1.0, 20_000, 5).unwrap();
    assert!((v - 0.5).abs() / 0.5 < 0.05, "variance {v}");
}

#[test]
fn bootstrap_variance_tracks_the_quadratic_form_on_random_instances() {
    let mut rng = rng_from_seed(909);
    for trial in 0..3 {
        let d = 2 + trial;
        let n = 8;
        let mut phi = vec![vec![vec![0.0; d]; 1]; n + 1];
        for srow in phi.iter_mut() {
            let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            srow[0] = raw.iter().map(|x| 0.9 * x / norm).collect();
        }
        let backend = LinearBackend::new(d, phi);
        let points: Vec<Cell> = (0..n).map(|s| (s, 0)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let query = (n, 0);

        let unit = vec![1.0; n];
        let gram = backend.gram(&points, &unit, 0.8);
        let exact = {
            let chol = gram.cholesky().unwrap();
            let q: DVector<f64> = backend.feature(query);
            q.dot(&chol.solve(&q))
        };
        let mc =
            bootstrap_variance(query, &points, &targets, &backend, 0.8, 30_000, 100 + trial as u64)
                .unwrap();
        assert!(
            (mc - exact).abs() / exact < 0.05,
            "trial {trial}: mc {mc} vs exact {exact}"
        );
    }
}

#[test]
fn finite_and_linear_agree_when_class_is_a_linear_image() {
    // 5 tables from a d=2 map over 4 cells, 6 data points: the enumerated
    // value never exceeds the closed form.
    let phi = vec![
        vec![vec![0.9, 0.1], vec![0.2, 0.7]],
        vec![vec![0.5, 0.5], vec![0.1, 0.2]],
    ];
    let backend = LinearBackend::new(2, phi);
    let cells: Vec<Cell> = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
    let ws = [
        DVector::from_vec(vec![0.0, 0.0]),
        DVector::from_vec(vec![0.3, 0.1]),
        DVector::from_vec(vec![-0.2, 0.25]),
        DVector::from_vec(vec![0.15, -0.3]),
        DVector::from_vec(vec![-0.1, -0.15]),
    ];
    let tables: Vec<Vec<Vec<f64>>> = ws
        .iter()
        .map(|w| {
            (0..2)
                .map(|s| {
                    (0..2)
                        .map(|a| 0.5 + backend.feature((s, a)).dot(w))
                        .collect()
                })
                .collect()
        })
        .collect();
    let fb = FiniteBackend::new(tables).unwrap();
    let points = vec![(0, 0), (0, 1), (1, 0), (1, 1), (0, 0), (1, 1)];
    let unit = vec![1.0; points.len()];
    let lam = 0.5;
    let b_lin = backend.uncertainties(&cells, &points, &unit, lam).unwrap();
    let b_fin = fb.uncertainties(&cells, &points, &unit, lam).unwrap();
    for ((&bl, &bf), &c) in b_lin.iter().zip(&b_fin).zip(&cells) {
        assert!(bf <= bl + 1e-12, "cell {c:?}: {bf} > {bl}");
        assert!(bf > 0.0);
    }
}
