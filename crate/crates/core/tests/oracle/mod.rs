//! Brute-force reference for constraint filtering and ranking.
//!
//! Written directly from the scoring rules with plain loops and no calls into
//! the library's ranking code, so it can be compared against `rank`.
#![allow(dead_code, clippy::needless_range_loop, clippy::manual_clamp)]

use recombot_core::{ConstraintSet, PriceUnit, Station};

/// True when `s` breaks a present constraint. A price cap only binds
/// stations priced in the cap's unit; free stations never break it.
pub fn violates(s: &Station, c: &ConstraintSet) -> bool {
    if let Some(d) = c.max_distance_km {
        if s.distance_km > d {
            return true;
        }
    }
    if let Some(p) = c.min_power_kw {
        if s.power_kw < p {
            return true;
        }
    }
    if let (Some(cap), Some(price)) = (c.max_price, s.price) {
        if price.unit() != PriceUnit::Free
            && price.unit() == cap.unit()
            && price.amount() > cap.amount()
        {
            return true;
        }
    }
    false
}

fn cost(s: &Station) -> Option<f64> {
    let p = s.price?;
    match p.unit() {
        PriceUnit::Free => Some(0.0),
        PriceUnit::PerKwh => Some(p.amount()),
        PriceUnit::PerMinute => Some(p.amount() * 60.0 / s.power_kw),
        PriceUnit::Flat => None,
    }
}

fn scale(v: Option<f64>, lo: f64, hi: f64, larger_is_better: bool) -> f64 {
    match v {
        Some(v) if hi > lo => {
            if larger_is_better {
                (v - lo) / (hi - lo)
            } else {
                (hi - v) / (hi - lo)
            }
        }
        _ => 0.5,
    }
}

fn bounds(values: &[Option<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.iter().flatten() {
        if *v < lo {
            lo = *v;
        }
        if *v > hi {
            hi = *v;
        }
    }
    (lo, hi)
}

/// Features in canonical order (distance, price, power, rating).
pub fn features(stations: &[Station]) -> Vec<[f64; 4]> {
    let d: Vec<_> = stations.iter().map(|s| Some(s.distance_km)).collect();
    let p: Vec<_> = stations.iter().map(cost).collect();
    let c: Vec<_> = stations.iter().map(|s| Some(s.power_kw)).collect();
    let r: Vec<_> = stations.iter().map(|s| s.rating).collect();
    let (dl, dh) = bounds(&d);
    let (pl, ph) = bounds(&p);
    let (cl, ch) = bounds(&c);
    let (rl, rh) = bounds(&r);
    (0..stations.len())
        .map(|i| {
            [
                scale(d[i], dl, dh, false),
                scale(p[i], pl, ph, false),
                scale(c[i], cl, ch, true),
                scale(r[i], rl, rh, true),
            ]
        })
        .collect()
}

/// Cosine similarity clamped to [0, 1]; an all-zero station scores 0.
pub fn score(w: &[f64; 4], s: &[f64; 4]) -> f64 {
    let mut dot = 0.0;
    let mut ww = 0.0;
    let mut ss = 0.0;
    for j in 0..4 {
        dot += w[j] * s[j];
    }
    for j in 0..4 {
        ww += w[j] * w[j];
    }
    for j in 0..4 {
        ss += s[j] * s[j];
    }
    if ss == 0.0 {
        return 0.0;
    }
    let v = dot / (ww.sqrt() * ss.sqrt());
    if v < 0.0 {
        0.0
    } else if v > 1.0 {
        1.0
    } else {
        v
    }
}

/// Station ids of the top `k`, best first.
pub fn brute_force_rank(
    stations: &[Station],
    w: &[f64; 4],
    c: &ConstraintSet,
    k: usize,
) -> Vec<String> {
    let feasible: Vec<Station> = stations
        .iter()
        .filter(|s| !violates(s, c))
        .cloned()
        .collect();
    if feasible.is_empty() {
        return Vec::new();
    }
    let f = features(&feasible);
    let mut scored: Vec<(f64, &Station)> = feasible
        .iter()
        .zip(&f)
        .map(|(s, fv)| (score(w, fv), s))
        .collect();
    // Insertion sort, best first.
    for i in 1..scored.len() {
        let mut j = i;
        while j > 0 && better(&scored[j], &scored[j - 1]) {
            scored.swap(j, j - 1);
            j -= 1;
        }
    }
    scored
        .into_iter()
        .take(k)
        .map(|(_, s)| s.id.clone())
        .collect()
}

fn better(a: &(f64, &Station), b: &(f64, &Station)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.distance_km != b.1.distance_km {
        return a.1.distance_km < b.1.distance_km;
    }
    a.1.id < b.1.id
}
