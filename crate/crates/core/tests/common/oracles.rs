use rocp_core::conformal::{build_set_aps, build_set_thr, quantile_index, ScoreConvention, Threshold};

pub fn quantile_index_brute_force() {
    for p in 1..=200usize {
        for eps in [0.01, 0.05, 0.1, 0.2, 0.5] {
            // smallest i with i ≥ (1−ε)(p+1), largest i with i ≤ ε(p+1), in exact rational arithmetic
            let num = (eps * 100.0_f64).round() as usize;
            let non = (1..=p + 1).find(|&i| i * 100 >= (100 - num) * (p + 1)).unwrap();
            let con = (0..=p).rev().find(|&i| i * 100 <= num * (p + 1)).unwrap();
            assert_eq!(quantile_index(p, eps, ScoreConvention::Nonconformity), non, "p={p} eps={eps}");
            assert_eq!(quantile_index(p, eps, ScoreConvention::Conformity), con, "p={p} eps={eps}");
        }
    }
}

pub fn set_builders_brute_force_grid() {
    // every probability vector on a 0.05 grid with K = 3
    let mut rows = Vec::new();
    for a in 0..=20u32 {
        for b in 0..=20 - a {
            rows.push([a as f64 / 20.0, b as f64 / 20.0, (20 - a - b) as f64 / 20.0]);
        }
    }
    let thresholds: Vec<f64> = (0..=22).map(|i| i as f64 / 20.0 - 0.025).collect();
    for probs in &rows {
        for &t in &thresholds {
            let thr = build_set_thr(probs, Threshold(t));
            for (k, &p) in probs.iter().enumerate() {
                assert_eq!(thr.contains(k), p >= t);
            }
            // enumerate all 7 nonempty subsets; the APS set is the smallest one
            // that is closed upward in the ranking and reaches mass t
            let aps = build_set_aps(probs, Threshold(t));
            let ranked_above = |i: usize, j: usize| probs[i] > probs[j] || (probs[i] == probs[j] && i < j);
            let mut best: Option<(usize, u8)> = None;
            for mask in 1u8..8 {
                let members: Vec<usize> = (0..3).filter(|&c| mask & (1 << c) != 0).collect();
                let closed = (0..3).all(|c| {
                    mask & (1 << c) != 0 || members.iter().all(|&m| ranked_above(m, c))
                });
                let mass: f64 = members.iter().map(|&c| probs[c]).sum();
                let reaches = mass >= t - 1e-12 || mask == 7;
                if closed && reaches && best.is_none_or(|(n, _)| members.len() < n) {
                    best = Some((members.len(), mask));
                }
            }
            let (_, mask) = best.unwrap();
            for c in 0..3 {
                assert_eq!(aps.contains(c), mask & (1 << c) != 0, "probs {probs:?} t {t}");
            }
        }
    }
}
