use attralign::dataset::{generate_synthetic, Split, SynthConfig};
use attralign::diagnostics::*;
use attralign::model::{ModelSpec, ProjectionModel};
use attralign::numerics::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn probe_on_shuffled_labels_is_near_chance() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let x: Vec<f64> = (0..n).flat_map(|i| [if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0]).collect();
        let x = Matrix::new(n, 2, x).unwrap();
        let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        let (tr, te) = (0..300, 300..n);
        let rows = |r: std::ops::Range<usize>| Matrix::from_rows(&r.clone().map(|i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let acc = linear_probe(&rows(tr.clone()), &labels[tr], &rows(te.clone()), &labels[te], ProbeConfig::default()).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "seed {seed}: {acc}");
    }
}

#[test]
fn intra_variance_rises_with_sigma() {
    for seed in 0..5u64 {
        let mut last = -1.0;
        for sigma in [0.05, 0.1, 0.2, 0.35, 0.6] {
            let ds = generate_synthetic(&SynthConfig { intra_class_sigma: sigma, seed, ..Default::default() }).unwrap();
            let ids: Vec<usize> = (0..ds.len()).collect();
            let d = discriminability(&ds.object_matrix(&ids), &ds.labels(&ids)).unwrap();
            assert!(d.intra_class_variance > last, "seed {seed} sigma {sigma}");
            last = d.intra_class_variance;
        }
    }
}

#[test]
fn untrained_mc_is_in_chance_band() {
    for seed in 0..5u64 {
        let ds = generate_synthetic(&SynthConfig { seed: 7 + seed, ..Default::default() }).unwrap();
        let model = ProjectionModel::new(&ModelSpec::for_dims(32, 32), 7 + seed).unwrap();
        let r = evaluate_mc(&ds, &model, Choices::All, 0).unwrap();
        assert!(r.accuracy <= 0.3, "seed {seed}: {}", r.accuracy);
        let counts: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(counts, vec![10; 10]);
    }
}

#[test]
fn raw_alignment_before_training_is_low() {
    // objects and category names live in different spaces of equal dim here
    let ds = generate_synthetic(&SynthConfig::default()).unwrap();
    let ids: Vec<usize> = (0..ds.len()).collect();
    let q = alignment_quality_raw(&ds.object_matrix(&ids), &ds.labels(&ids), &ds.table().embedding_matrix()).unwrap();
    assert!(q < 0.5, "{q}");
}

#[test]
fn mc_all_is_invariant_to_category_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cats = Matrix::new(6, 4, (0..24).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let objs = Matrix::new(30, 4, (0..120).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let labels: Vec<usize> = (0..30).map(|i| i % 6).collect();
    let base = evaluate_mc_raw(&objs, &labels, &cats, Choices::All, 0).unwrap();
    let perm = [3, 0, 5, 1, 4, 2];
    let mut rows = vec![Vec::new(); 6];
    for (old, &new) in perm.iter().enumerate() {
        rows[new] = cats.row(old).to_vec();
    }
    let permuted = evaluate_mc_raw(&objs, &labels.iter().map(|&l| perm[l]).collect::<Vec<_>>(), &Matrix::from_rows(&rows).unwrap(), Choices::All, 0).unwrap();
    assert_eq!(base.accuracy, permuted.accuracy);
}

#[test]
fn alignment_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cats = Matrix::new(3, 5, (0..15).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let objs = Matrix::new(9, 5, (0..45).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let q = alignment_quality_raw(&objs, &labels, &cats).unwrap();
    let mut scaled = objs.clone();
    for r in 0..9 {
        let k = rng.gen_range(0.1..10.0);
        scaled.row_mut(r).iter_mut().for_each(|x| *x *= k);
    }
    assert!((alignment_quality_raw(&scaled, &labels, &cats).unwrap() - q).abs() < 1e-12);
    assert!((-1.0..=1.0).contains(&q));
}

/// Mean squared residual after projecting onto two components equals the
/// sum of the trailing covariance eigenvalues.
#[test]
fn pca_reconstruction_error_is_trailing_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d) = (100, 5);
    let scales = [3.0, 2.0, 1.0, 0.5, 0.2];
    let x = Matrix::new(n, d, (0..n * d).map(|i| scales[i % d] * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
    let (coords, eig) = pca2d(&x).unwrap();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let total: f64 = (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n as f64;
    let kept: f64 = (0..n).map(|i| coords.get(i, 0).powi(2) + coords.get(i, 1).powi(2)).sum::<f64>() / n as f64;
    let trailing: f64 = eig[2..].iter().sum();
    assert!((total - kept - trailing).abs() < 1e-9, "{} vs {trailing}", total - kept);
}

#[test]
fn report_formats_agree() {
    let ds = generate_synthetic(&SynthConfig { num_classes: 3, samples_per_class: 10, ..Default::default() }).unwrap();
    let model = ProjectionModel::new(&ModelSpec::for_dims(32, 32), 1).unwrap();
    let r = metrics_report(&ds, &model, &ReportConfig::default()).unwrap();
    let trace: u64 = (0..3).map(|c| r.confusion[c][c]).sum();
    let total: u64 = r.confusion.iter().flatten().sum();
    assert_eq!(total as usize, ds.split_ids(Split::Test).len());
    assert!((r.mc_accuracy - trace as f64 / total as f64).abs() < 1e-15);
    let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.confusion_grid().lines().count(), 3);
    assert!(r.to_tsv().contains("probe_accuracy.raw_object\t"));
}
