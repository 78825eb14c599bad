//! Mining against brute-force scoring.

use attralign::dataset::{generate_synthetic, AlignmentDataset, Split, SynthConfig};
use attralign::mining::{mine, MiningReference, NegativeEntry};
use proptest::prelude::*;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn brute_force(ds: &AlignmentDataset, k: usize) -> Vec<(usize, Vec<NegativeEntry>)> {
    let train: Vec<_> = ds.samples().iter().filter(|s| s.split == Split::Train).collect();
    let c = ds.num_categories();
    let d = ds.dim_object();
    let mut centroid = vec![vec![0.0; d]; c];
    let mut count = vec![0usize; c];
    for s in &train {
        count[s.category] += 1;
        for (a, x) in centroid[s.category].iter_mut().zip(s.object_embedding.as_slice()) {
            *a += x;
        }
    }
    for (cen, &n) in centroid.iter_mut().zip(&count) {
        cen.iter_mut().for_each(|x| *x /= n.max(1) as f64);
    }
    train
        .iter()
        .map(|anchor| {
            let x = anchor.object_embedding.as_slice();
            let mut scored: Vec<(usize, f64)> = (0..c)
                .filter(|&cat| cat != anchor.category && count[cat] > 0)
                .map(|cat| (cat, cos(x, &centroid[cat])))
                .collect();
            // stable sort keeps ascending ids among ties
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let entries = scored
                .iter()
                .take(k)
                .map(|&(cat, _)| {
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    for s in train.iter().filter(|s| s.category == cat) {
                        let sim = cos(x, s.object_embedding.as_slice());
                        if sim > best.0 {
                            best = (sim, s.id);
                        }
                    }
                    NegativeEntry { category: cat, sample: best.1 }
                })
                .collect();
            (anchor.id, entries)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn mine_equals_brute_force(
        seed in any::<u64>(),
        classes in 2usize..=20,
        per_class in 1usize..=25,
        dim in 2usize..=12,
        sigma in 0.0f64..1.0,
        k in 1usize..=4,
    ) {
        let ds = generate_synthetic(&SynthConfig {
            num_classes: classes,
            samples_per_class: per_class,
            dim_object: dim,
            dim_text: dim,
            intra_class_sigma: sigma,
            seed,
            ..Default::default()
        }).unwrap();
        prop_assume!(ds.len() <= 500);
        let hn = mine(&ds, k, MiningReference::ObjectEmbedding).unwrap();
        let expected = brute_force(&ds, k);
        prop_assert_eq!(hn.len(), expected.len());
        for (anchor, entries) in expected {
            let got = hn.get(anchor).unwrap();
            prop_assert_eq!(got, entries.as_slice());
            let own = ds.sample(anchor).unwrap().category;
            prop_assert!(got.iter().all(|e| e.category != own));
            prop_assert!(got.iter().all(|e| ds.sample(e.sample).unwrap().category == e.category));
            prop_assert_eq!(got.len(), k.min(classes - 1));
        }
    }
}
