// probe: reproduce acceptance 4 round 39 and inspect magnitudes
use nalgebra::DMatrix;
use panelcausal::did::{encode_fixed_effects, treatment_residuals, twfe_fit};
use panelcausal::panel::{DesignMatrix, RowKey};
use panelcausal::regress::SeMode;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_panel(rng: &mut ChaCha8Rng, n_countries: usize, n_years: usize, keep_prob: f64, n_confounders: usize, tau: f64) -> DesignMatrix {
    loop {
        let gamma_c: Vec<f64> = (0..n_countries).map(|_| rng.random::<f64>() * 0.2).collect();
        let gamma_t: Vec<f64> = (0..n_years).map(|_| rng.random::<f64>() * 0.2).collect();
        let beta: Vec<f64> = (0..n_confounders).map(|_| rng.random::<f64>() * 0.2 - 0.1).collect();
        let mut rows = Vec::new(); let mut y = Vec::new(); let mut d = Vec::new(); let mut xs = Vec::new();
        for c in 0..n_countries { for t in 0..n_years {
            if rng.random::<f64>() > keep_prob { continue; }
            let treated = rng.random_bool(0.3);
            let confs: Vec<f64> = (0..n_confounders).map(|_| rng.random::<f64>()).collect();
            let mut value = gamma_c[c] + gamma_t[t] + tau * f64::from(treated) + 0.05 * rng.random::<f64>();
            for (b, x) in beta.iter().zip(&confs) { value += b * x; }
            rows.push(RowKey::new(format!("C{c:02}"), 2000 + t as i32));
            y.push(value); d.push(f64::from(treated)); xs.extend(confs);
        }}
        let n = rows.len();
        let treated_count = d.iter().filter(|&&v| v == 1.0).count();
        if treated_count == 0 || treated_count == n { continue; }
        let dm = DesignMatrix::new(rows, y, d, DMatrix::from_row_slice(n, n_confounders, &xs),
            (0..n_confounders).map(|j| format!("x{j}")).collect(), true).unwrap();
        if dm.countries().len() == n_countries && dm.years().len() == n_years { return dm; }
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    for round in 0..50 {
        let dm = random_panel(&mut rng, 6, 8, 0.85, 0, -0.05);
        let fe = encode_fixed_effects(&dm).unwrap();
        let tau = twfe_fit(&fe, SeMode::Classical).unwrap().coefficient("D").unwrap();
        let eps = treatment_residuals(&fe).unwrap();
        let num: f64 = eps.iter().zip(&dm.response).map(|(e, y)| e * y).sum();
        let den: f64 = eps.iter().zip(&dm.treatment).map(|(e, d)| e * d).sum();
        let diff = (tau - num / den).abs();
        if diff > 1e-10 {
            println!("round {round}: n={} treated={} den={den:.3e} tau={tau:.6e} fwl={:.6e} diff={diff:.3e}", dm.n_rows(), dm.treated_rows(), num/den);
        }
    }
}
