mod common;

use caopd_core::metrics::{auroc, ece, spr};
use caopd_core::PredictionRecord;
use rand::Rng;

fn brute_pairs(recs: &[PredictionRecord]) -> Option<(f64, f64)> {
    let (mut gt, mut tie, mut total) = (0u64, 0u64, 0u64);
    for p in recs.iter().filter(|r| r.correct) {
        for q in recs.iter().filter(|r| !r.correct) {
            total += 1;
            if p.confidence > q.confidence {
                gt += 1;
            } else if p.confidence == q.confidence {
                tie += 1;
            }
        }
    }
    (total > 0).then(|| (gt as f64 / total as f64, (2 * gt + tie) as f64 / (2 * total) as f64))
}

fn brute_ece(recs: &[PredictionRecord], bins: usize) -> f64 {
    let n = recs.len() as f64;
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let members: Vec<_> = recs
                .iter()
                .filter(|r| (r.confidence > lo && r.confidence <= hi) || (b == 0 && r.confidence == 0.0))
                .collect();
            if members.is_empty() {
                return 0.0;
            }
            let m = members.len() as f64;
            let conf = members.iter().map(|r| r.confidence).sum::<f64>() / m;
            let acc = members.iter().filter(|r| r.correct).count() as f64 / m;
            m / n * (acc - conf).abs()
        })
        .sum()
}

#[test]
fn fast_metrics_match_pair_count_and_per_bin_definitions() {
    let mut r = common::rng(77);
    for set in 0..100 {
        let n = r.random_range(1..=500);
        // coarse grids force ties; set 0 mod 3 draws continuous values
        let levels = [0usize, 4, 20][set % 3];
        let recs: Vec<PredictionRecord> = (0..n)
            .map(|_| {
                let c = if levels == 0 { r.random::<f64>() } else { r.random_range(0..=levels) as f64 / levels as f64 };
                PredictionRecord::new(c, r.random_bool(0.6)).unwrap()
            })
            .collect();
        let expect = brute_pairs(&recs);
        assert_eq!(spr(&recs).unwrap(), expect.map(|e| e.0), "set {set}");
        assert_eq!(auroc(&recs).unwrap(), expect.map(|e| e.1), "set {set}");
        for bins in [1, 10, 15] {
            let e = ece(&recs, bins).unwrap();
            assert!((e - brute_ece(&recs, bins)).abs() <= 1e-12, "set {set} bins {bins}");
        }
    }
}

#[test]
fn all_certain_predictions_anchor() {
    let recs: Vec<PredictionRecord> = (0..1000).map(|i| PredictionRecord::new(1.0, i < 576).unwrap()).collect();
    let rep = caopd_core::metrics::report(&recs, 10).unwrap();
    assert!((rep.ece - 0.424).abs() < 1e-12);
    assert_eq!(rep.spr, Some(0.0));
    assert_eq!(rep.auroc, Some(0.5));
}
