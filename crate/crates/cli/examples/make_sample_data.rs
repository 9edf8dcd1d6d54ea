//! Regenerates the bundled sample panels under `data/sample/` (or the
//! directory given as the first argument).
//!
//! The reference curve follows AR(1) Nelson-Siegel factors; the response
//! curve has its own factors plus a loading on the reference curve's
//! deviations from its mean, so the functional regression has something to
//! find. About 1% of cells are blanked, and each file omits some canonical
//! tenors, which `dnsfr prepare` has to synthesise.

use std::fmt::Write as _;
use std::path::PathBuf;

use dnsfr_core::market_data::Month;
use dnsfr_core::nelson_siegel::ns_yield;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const LAMBDA: f64 = 0.0609;
const MONTHS: usize = 108;
const REFERENCE_TENORS: [f64; 11] = [1.0, 3.0, 6.0, 12.0, 24.0, 36.0, 60.0, 84.0, 120.0, 240.0, 360.0];
const RESPONSE_TENORS: [f64; 10] = [1.0, 3.0, 6.0, 12.0, 24.0, 36.0, 60.0, 120.0, 240.0, 360.0];

struct Ar {
    mean: f64,
    phi: f64,
    sd: f64,
}

fn factor_paths(spec: &[Ar; 3], rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut x = [spec[0].mean, spec[1].mean, spec[2].mean];
    (0..MONTHS)
        .map(|_| {
            for (j, s) in spec.iter().enumerate() {
                x[j] = s.mean + s.phi * (x[j] - s.mean) + s.sd * z.sample(rng);
            }
            x
        })
        .collect()
}

fn curve(f: &[f64; 3], tenors: &[f64]) -> Vec<f64> {
    tenors.iter().map(|&t| ns_yield(f, t, LAMBDA).unwrap()).collect()
}

fn write_panel(path: &PathBuf, tenors: &[f64], rows: &[Vec<f64>], rng: &mut ChaCha8Rng) {
    let start = Month::new(2012, 1).unwrap();
    let mut s = String::from("date");
    for t in tenors {
        let _ = write!(s, ",{t}");
    }
    s.push('\n');
    for (r, row) in rows.iter().enumerate() {
        let _ = write!(s, "{}", start.offset(r as i32));
        // at most two holes per date keeps every row fit for interpolation
        let mut holes = 0;
        for v in row {
            if holes < 2 && rng.random_bool(0.01) {
                holes += 1;
                s.push(',');
            } else {
                let _ = write!(s, ",{v:.4}");
            }
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/sample".into()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2012);
    let noise = Normal::new(0.0, 0.03).unwrap();

    let reference = factor_paths(
        &[
            Ar { mean: 2.6, phi: 0.97, sd: 0.12 },
            Ar { mean: -1.8, phi: 0.94, sd: 0.2 },
            Ar { mean: -0.5, phi: 0.85, sd: 0.35 },
        ],
        &mut rng,
    );
    let response = factor_paths(
        &[
            Ar { mean: 1.8, phi: 0.96, sd: 0.1 },
            Ar { mean: -1.2, phi: 0.93, sd: 0.18 },
            Ar { mean: 0.3, phi: 0.8, sd: 0.3 },
        ],
        &mut rng,
    );

    let ref_curves: Vec<Vec<f64>> = reference.iter().map(|f| curve(f, &REFERENCE_TENORS)).collect();
    let ref_mean = curve(&[2.6, -1.8, -0.5], &RESPONSE_TENORS);
    let ref_rows: Vec<Vec<f64>> = ref_curves
        .iter()
        .map(|c| c.iter().map(|v| v + noise.sample(&mut rng)).collect())
        .collect();
    let resp_rows: Vec<Vec<f64>> = (0..MONTHS)
        .map(|t| {
            let spill = curve(&reference[t], &RESPONSE_TENORS);
            curve(&response[t], &RESPONSE_TENORS)
                .iter()
                .zip(spill.iter().zip(&ref_mean))
                .enumerate()
                .map(|(i, (y, (s, m)))| {
                    // spill-over fades along the curve
                    let w = 0.4 - 0.02 * i as f64;
                    y + w * (s - m) + noise.sample(&mut rng)
                })
                .collect()
        })
        .collect();
    write_panel(&dir.join("reference.csv"), &REFERENCE_TENORS, &ref_rows, &mut rng);
    write_panel(&dir.join("response.csv"), &RESPONSE_TENORS, &resp_rows, &mut rng);

    let market = "date,effr_percent,fx
2019-12,,1.32018
2020-01,1.59,1.28231
2020-02,1.59,1.24086
2020-03,0.08,1.25907
2020-04,0.05,1.23455
2020-05,0.05,1.23992
2020-06,0.08,1.30770
2020-07,0.10,1.33690
2020-08,0.09,1.29115
2020-09,0.09,1.29457
2020-10,0.09,1.33173
2020-11,0.09,1.36561
2020-12,0.09,1.36893
";
    std::fs::write(dir.join("market.csv"), market).unwrap();
    println!("wrote sample data to {}", dir.display());
}
