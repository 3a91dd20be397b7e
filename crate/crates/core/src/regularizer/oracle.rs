//! Brute-force proximal oracle used to check the closed-form maps.
//!
//! Minimizes `penalty(v) + (v - y)² / (2τ)` over the window `[y - 3, y + 3]`
//! by a grid scan, zooms into the best few local minima of the grid
//! repeatedly, and finishes with a golden-section pass around the winner.
//! Keeping several candidates alive through the zoom keeps the oracle from
//! committing to the wrong basin when two local minima are nearly tied, as
//! happens for the W-shaped penalty near `y = 0`.

const WINDOW: f64 = 3.0;
const BEAM: usize = 4;
const ZOOM_POINTS: usize = 41;
const FINAL_SPACING: f64 = 1e-11;

/// Grid resolution used by the test suites.
pub const DEFAULT_RESOLUTION: f64 = 1e-3;

pub fn prox_oracle<F>(penalty: F, y: f64, tau: f64, resolution: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    assert!(resolution > 0.0, "grid resolution must be positive");
    assert!(tau > 0.0, "prox step must be positive");
    let objective = |v: f64| penalty(v) + (v - y) * (v - y) / (2.0 * tau);

    let lo = y - WINDOW;
    let steps = (2.0 * WINDOW / resolution).ceil() as usize;
    let mut spacing = 2.0 * WINDOW / steps as f64;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * spacing).collect();
    let mut beam = best_local_minima(&grid, &objective);

    while spacing > FINAL_SPACING {
        let next = 2.0 * spacing / (ZOOM_POINTS - 1) as f64;
        let mut pooled = Vec::new();
        for &(c, _) in &beam {
            let sub: Vec<f64> = (0..ZOOM_POINTS)
                .map(|i| c - spacing + i as f64 * next)
                .collect();
            pooled.extend(best_local_minima(&sub, &objective));
        }
        pooled.sort_by(|a, b| a.1.total_cmp(&b.1));
        pooled.dedup_by(|a, b| (a.0 - b.0).abs() < next * 0.5);
        pooled.truncate(BEAM);
        beam = pooled;
        spacing = next;
    }

    let (mut best, mut best_val) = beam[0];
    for &(c, _) in &beam {
        let v = golden_section(&objective, c - spacing, c + spacing);
        let f = objective(v);
        if f < best_val {
            best = v;
            best_val = f;
        }
    }
    best
}

fn best_local_minima<G: Fn(f64) -> f64>(points: &[f64], objective: &G) -> Vec<(f64, f64)> {
    let vals: Vec<f64> = points.iter().map(|&v| objective(v)).collect();
    let mut minima: Vec<(f64, f64)> = (0..points.len())
        .filter(|&i| {
            let left = i == 0 || vals[i] <= vals[i - 1];
            let right = i + 1 == points.len() || vals[i] <= vals[i + 1];
            left && right && vals[i].is_finite()
        })
        .map(|i| (points[i], vals[i]))
        .collect();
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    minima.truncate(BEAM);
    minima
}

fn golden_section<G: Fn(f64) -> f64>(objective: &G, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}
