//! Fits the LTS small-sample correction constants.
//!
//! For each p, simulates clean normal regressions over a grid of n, takes
//! the median of the asymptotically consistent LTS scale (without the
//! correction), and fits `1 - median = exp(a) / n^b` by least squares on the
//! log scale. Prints the table to paste into the consistency module.
//!
//! cargo run --release -p robustbench --example calibrate_small_sample [reps]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use robustbench::estimators::{consistency_factor, default_h, lts_fit, LtsConfig};
use robustbench::{Dataset, RngStream};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1000);
    let root = RngStream::new(20_240_601, 0);
    let mut table = Vec::new();
    for p in 1..=12usize {
        let grid: Vec<usize> = [20, 30, 40, 60, 80, 100, 150, 200, 300]
            .into_iter()
            .filter(|&n| n >= 3 * p + 8)
            .collect();
        let mut pts = Vec::new();
        for &n in &grid {
            let h = default_h(n, p);
            let cf = consistency_factor(h as f64 / n as f64, 1).unwrap();
            let scales: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let s = root.child(&[p as u64, n as u64, rep as u64]);
                    let mut rng = s.rng();
                    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
                    let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let d = Dataset::new(&x * DVector::from_element(p, 1.0) + e, x, None).unwrap();
                    let fit = lts_fit(&d, &LtsConfig::new(s.child(&[1]))).unwrap();
                    cf * fit.diag("raw_scale").unwrap()
                })
                .collect();
            let med = median(scales);
            eprintln!("p={p:2} n={n:4} median={med:.4}");
            if med < 1.0 {
                pts.push(((n as f64).ln(), (1.0 - med).ln()));
            }
        }
        // least squares line ln(1 - med) = a - b ln n
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let a = my - slope * mx;
        table.push((a, -slope));
        eprintln!("p={p:2} a={a:.4} b={:.4}", -slope);
    }
    for (a, b) in table {
        println!("    ({a:.4}, {b:.4}),");
    }
}
