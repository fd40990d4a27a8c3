//! Exhaustive-enumeration oracles for the greedy metrics.

use chronoseg::metrics::ScoredInterval;
use chronoseg::temporal::Interval;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn oracle_tiou(a: Interval, b: Interval) -> f64 {
    let lo = if a.start > b.start { a.start } else { b.start };
    let hi = if a.end < b.end { a.end } else { b.end };
    let inter = if hi > lo { hi - lo } else { 0.0 };
    inter / ((a.end - a.start) + (b.end - b.start) - inter)
}

pub fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
    let s = rng.random_range(0..12) as f64;
    let len = rng.random_range(1..6) as f64;
    Interval::new(s, s + len)
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<ScoredInterval>, Vec<Interval>, f64) {
    let np = rng.random_range(0..=5);
    let ng = rng.random_range(0..=5);
    let preds = (0..np)
        .map(|_| ScoredInterval {
            interval: random_interval(rng),
            // Few distinct scores so ties are common.
            score: rng.random_range(1..4) as f64 / 4.0,
        })
        .collect();
    let gts = (0..ng).map(|_| random_interval(rng)).collect();
    let thr = [0.1, 0.3, 0.5, 0.7][rng.random_range(0..4)];
    (preds, gts, thr)
}

/// Every partial injective map from `n` items into `m` slots.
pub fn all_assignments(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::new();
        for a in &out {
            next.push([a.clone(), vec![None]].concat());
            for g in 0..m {
                if !a.contains(&Some(g)) {
                    next.push([a.clone(), vec![Some(g)]].concat());
                }
            }
        }
        out = next;
    }
    out
}

/// Rank order by selection: repeatedly take the highest score, earliest
/// start, earliest end.
pub fn oracle_rank(preds: &[ScoredInterval]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..preds.len()).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            let (a, b) = (&preds[left[k]], &preds[left[best]]);
            let key = |p: &ScoredInterval| (-p.score, p.interval.start, p.interval.end);
            if key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less) {
                best = k;
            }
        }
        order.push(left.remove(best));
    }
    order
}

pub fn ap_oracle(preds: &[ScoredInterval], gts: &[Interval], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let order = oracle_rank(preds);
    let ranked: Vec<Interval> = order.iter().map(|&i| preds[i].interval).collect();
    let consistent: Vec<Vec<Option<usize>>> = all_assignments(ranked.len(), gts.len())
        .into_iter()
        .filter(|a| {
            (0..ranked.len()).all(|k| {
                let free: Vec<usize> = (0..gts.len())
                    .filter(|g| !a[..k].contains(&Some(*g)))
                    .collect();
                let eligible: Vec<usize> = free
                    .into_iter()
                    .filter(|&g| oracle_tiou(ranked[k], gts[g]) >= thr)
                    .collect();
                match a[k] {
                    None => eligible.is_empty(),
                    Some(g) => {
                        eligible.contains(&g)
                            && eligible.iter().all(|&h| {
                                let (x, y) = (
                                    oracle_tiou(ranked[k], gts[h]),
                                    oracle_tiou(ranked[k], gts[g]),
                                );
                                x < y || (x == y && h >= g)
                            })
                    }
                }
            })
        })
        .collect();
    assert_eq!(consistent.len(), 1, "greedy assignment must be unique");
    let a = &consistent[0];
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (k, slot) in a.iter().enumerate() {
        if slot.is_some() {
            hits += 1.0;
            sum += hits / (k + 1) as f64;
        }
    }
    sum / gts.len() as f64
}

pub fn f1_oracle(preds: &[Interval], gts: &[Interval], thr: f64) -> f64 {
    // Pair priority: higher tIoU, then lower prediction index, then lower gt index.
    let outranks = |(p1, g1): (usize, usize), (p2, g2): (usize, usize)| {
        let (a, b) = (
            oracle_tiou(preds[p1], gts[g1]),
            oracle_tiou(preds[p2], gts[g2]),
        );
        a > b || (a == b && (p1, g1) < (p2, g2))
    };
    let eligible = |p: usize, g: usize| oracle_tiou(preds[p], gts[g]) >= thr;
    let dominant: Vec<Vec<Option<usize>>> = all_assignments(preds.len(), gts.len())
        .into_iter()
        .filter(|a| {
            a.iter()
                .enumerate()
                .all(|(p, s)| s.is_none_or(|g| eligible(p, g)))
        })
        .filter(|a| {
            let chosen: Vec<(usize, usize)> = a
                .iter()
                .enumerate()
                .filter_map(|(p, s)| s.map(|g| (p, g)))
                .collect();
            (0..preds.len()).all(|p| {
                (0..gts.len()).filter(|&g| eligible(p, g)).all(|g| {
                    let blocked = chosen.iter().any(|&(q, h)| {
                        (q == p || h == g) && (q, h) != (p, g) && outranks((q, h), (p, g))
                    });
                    chosen.contains(&(p, g)) != blocked
                })
            })
        })
        .collect();
    assert_eq!(
        dominant.len(),
        1,
        "locally dominant matching must be unique"
    );
    let m = dominant[0].iter().filter(|s| s.is_some()).count() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let (p, r) = (m / preds.len() as f64, m / gts.len() as f64);
    2.0 * p * r / (p + r)
}
