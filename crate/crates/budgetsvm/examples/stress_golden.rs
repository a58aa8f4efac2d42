//! Offline robustness sweep: golden-section merge vs a fine grid oracle
//! across many random instances and seeds.

use budgetsvm::merge::{golden_section_merge, objective_along_line, GoldenSectionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let gs = GoldenSectionParams {
        tol: 1e-6,
        max_iters: 400,
    };
    let gammas = [0.01, 1.0, 32.0];
    let mut worst: f64 = 0.0;
    let mut fails = 0u64;
    let trials = 200_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for t in 0..trials {
        let mut a = || loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if v != 0.0 {
                break v;
            }
        };
        let (ai, aj) = (a(), a());
        let d_sq: f64 = rng.random_range(0.0..10.0);
        let gamma = gammas[(t % 3) as usize];
        let (_, az, _) = golden_section_merge(ai, aj, d_sq, gamma, &gs);
        let (lo, hi) = if ai * aj > 0.0 {
            (0.0, 1.0)
        } else {
            (-1.0, 2.0)
        };
        let mut best = 0.0f64;
        for k in 0..=20_000 {
            let h = lo + (hi - lo) * k as f64 / 20_000.0;
            let f = objective_along_line(ai, aj, d_sq, gamma, h);
            best = best.max(f * f);
        }
        let gap = best.sqrt() - az.abs();
        if gap > worst {
            worst = gap;
        }
        if gap > 1e-6 {
            fails += 1;
        }
    }
    println!("trials {trials}, failures(>1e-6) {fails}, worst shortfall {worst:.3e}");
}
