//! Statistical checks on the generators.

use edgeless::io::write_dataset;
use edgeless::synthesis::{
    generate, mask_random, separation, sierpinski_layout, triad_of, CommunityLayout, GeneratorConfig, SizeDistribution,
    WithinPrecision,
};
use nalgebra::DMatrix;

/// Upper 0.001 quantile of chi-square with four degrees of freedom.
const CHI2_DF4_999: f64 = 18.467;

#[test]
fn within_community_spread_matches_the_wishart_draw() {
    // E[Λ⁻¹] = I / (ν - p - 1), so the pooled sd is 1/√47 against the nominal 1/√50
    let (mut sum, mut count) = (0.0, 0usize);
    for seed in 0..200 {
        let inst = generate(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap();
        let truth = &inst.truth;
        for (i, &g) in truth.labels.iter().enumerate() {
            sum += (truth.loadings.row(i) - truth.centers.row(g)).norm_squared();
            count += 2;
        }
    }
    let sd = (sum / count as f64).sqrt();
    let nominal = 50f64.sqrt().recip();
    assert!((sd / nominal - 1.0).abs() < 0.05, "pooled sd {sd}");
}

#[test]
fn labels_cover_the_communities_and_dimensions_match() {
    let inst = generate(&GeneratorConfig { seed: 9, ..GeneratorConfig::default() }).unwrap();
    assert_eq!((inst.dataset.n_times(), inst.dataset.n_series()), (100, 50));
    assert!(inst.truth.labels.iter().all(|&g| g < 5));
    assert_eq!(inst.truth.latent.shape(), (100, 2));
    assert_eq!(inst.truth.noise.len(), 50);
}

#[test]
fn column_covariance_matches_the_model() {
    let t = 200_000;
    let config = GeneratorConfig { n: 4, t, k: 2, noise_gamma: (4.0, 4.0), seed: 3, ..GeneratorConfig::default() };
    let inst = generate(&config).unwrap();
    let truth = &inst.truth;
    let mut sigma = &truth.loadings * truth.loadings.transpose();
    for i in 0..4 {
        sigma[(i, i)] += truth.noise[i].recip();
    }
    let y = inst.dataset.values();
    let means: Vec<f64> = (0..4).map(|i| y.column(i).mean()).collect();
    for i in 0..4 {
        for j in 0..=i {
            let cov = (0..t).map(|r| (y[(r, i)] - means[i]) * (y[(r, j)] - means[j])).sum::<f64>() / t as f64;
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / t as f64).sqrt();
            assert!((cov - sigma[(i, j)]).abs() <= 4.0 * se, "({i},{j}): {cov} vs {}", sigma[(i, j)]);
        }
    }
}

fn chi_square(labels: &[usize], probs: &[f64]) -> f64 {
    let n = labels.len() as f64;
    let mut counts = vec![0.0; probs.len()];
    for &g in labels {
        counts[g] += 1.0;
    }
    counts.iter().zip(probs).map(|(o, p)| (o - n * p).powi(2) / (n * p)).sum()
}

#[test]
fn label_frequencies_pass_a_chi_square_test() {
    let base = GeneratorConfig { n: 10_000, t: 3, seed: 11, ..GeneratorConfig::default() };
    let uniform = generate(&base).unwrap().truth.labels;
    let stat = chi_square(&uniform, &[0.2; 5]);
    assert!(stat < CHI2_DF4_999, "uniform chi-square {stat}");

    let weights = vec![1.0, 2.0, 3.0, 1.5, 2.5];
    let config = GeneratorConfig { sizes: SizeDistribution::Weights { weights: weights.clone() }, ..base };
    let labels = generate(&config).unwrap().truth.labels;
    let probs: Vec<f64> = weights.iter().map(|w| w / 10.0).collect();
    let stat = chi_square(&labels, &probs);
    assert!(stat < CHI2_DF4_999, "weighted chi-square {stat}");
}

#[test]
fn layout_distances_match_a_direct_construction() {
    let scale = 2.7;
    // outer triangle with one side on the x axis; each triad shrinks it by a
    // third about the outer centroid, then moves to one outer vertex
    let h = scale * 3f64.sqrt() / 2.0;
    let outer = [[0.0, 0.0], [scale, 0.0], [scale / 2.0, h]];
    let centroid = [scale / 2.0, h / 3.0];
    let mut direct = Vec::new();
    for a in outer {
        for b in outer {
            direct.push([a[0] + (b[0] - centroid[0]) / 3.0, a[1] + (b[1] - centroid[1]) / 3.0]);
        }
    }
    let distances = |pts: &[[f64; 2]]| {
        let mut d: Vec<f64> = (0..9)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        d
    };
    let got = sierpinski_layout(2, scale).unwrap();
    for (a, b) in distances(&got).iter().zip(distances(&direct)) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    // triads are tight: every within-triad distance is the inner side
    for i in 0..9 {
        for j in 0..i {
            let d = ((got[i][0] - got[j][0]).powi(2) + (got[i][1] - got[j][1]).powi(2)).sqrt();
            if triad_of(i) == triad_of(j) {
                assert!((d - scale / 3.0).abs() <= 1e-12);
            } else {
                assert!(d > scale / 3.0);
            }
        }
    }
}

#[test]
fn hierarchical_instances_have_balanced_sizes() {
    let inst = generate(&GeneratorConfig::sierpinski(95, 20, 3.0, 100.0, 4)).unwrap();
    let mut sizes = [0usize; 9];
    for &g in &inst.truth.labels {
        sizes[g] += 1;
    }
    assert!(sizes.iter().all(|&s| s == 10 || s == 11), "{sizes:?}");
    assert_eq!(sizes.iter().filter(|&&s| s == 11).count(), 5);
}

#[test]
fn separation_is_invariant_to_compensating_scales() {
    for h in [0.5, 1.0, 4.0, 20.0] {
        let base = GeneratorConfig::with_separation(20, 10, 3, h, 0);
        for c in [0.01, 3.0, 1e4] {
            let scaled = GeneratorConfig {
                within_precision: WithinPrecision::Isotropic { precision: 10.0 * c },
                mean_variance: base.mean_variance / c,
                ..base.clone()
            };
            let (a, b) = (separation(&base).unwrap(), separation(&scaled).unwrap());
            assert!((a - h).abs() <= 1e-12 * h && (b - h).abs() <= 1e-12 * h);
        }
    }
    let explicit = GeneratorConfig {
        k: 2,
        layout: CommunityLayout::Explicit { means: vec![vec![0.0, 1.0], vec![1.0, 0.0]] },
        ..GeneratorConfig::default()
    };
    assert!(separation(&explicit).is_err());
}

#[test]
fn instances_serialize_identically_for_equal_seeds() {
    let bytes = |seed| {
        let mut out = Vec::new();
        write_dataset(&generate(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap().dataset, &mut out).unwrap();
        out
    };
    assert_eq!(bytes(17), bytes(17));
    assert_ne!(bytes(17), bytes(18));
}

#[test]
fn masking_counts_and_refuses_to_orphan_series() {
    let data = generate(&GeneratorConfig::default()).unwrap().dataset;
    let masked = mask_random(&data, 0.1, 1).unwrap();
    assert_eq!(data.observed_count() - masked.observed_count(), 500);
    let again = mask_random(&masked, 0.1, 2).unwrap();
    assert_eq!(masked.observed_count() - again.observed_count(), 500);
    assert!((0..50).all(|i| again.observed_in_series(i) > 0));

    // one row: masking any cell orphans its series
    let single = edgeless::model::Dataset::from_matrix(DMatrix::from_element(1, 10, 1.0)).unwrap();
    assert!(mask_random(&single, 0.3, 0).is_err());
    assert!(mask_random(&data, 1.0, 0).is_err());
}
