//! Fast seeded invariant checks over the core library.

use pca_debias::cluster::delta_clusters;
use pca_debias::estimators::variance_forms;
use pca_debias::lowerbound::{b_matrix, g_derivative_check, whitened_norm_sq};
use pca_debias::montecarlo::{ks_distance, ls_slope, normal_cdf, run_scenario};
use pca_debias::perturbation::{linear_form, linear_term, remainder};
use pca_debias::spectral::{decompose_default, schatten_norm, weyl_deviation, SchattenP};
use pca_debias::testing::{gaussian_vector, random_symmetric, rotated_diagonal};
use pca_debias::{make_model, EstimatorKind, FunctionalSpec, LossFunction, ModelSpec, Scenario};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub check: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn spectrum(seed: u64, d: usize) -> Vec<f64> {
    (0..d).map(|i| 3.0 - i as f64 * (2.5 / d as f64) + 0.01 * (seed % 7) as f64).collect()
}

fn worst(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

fn weyl() -> Check {
    let excess = worst((0..100).map(|s| {
        let a = random_symmetric(6, 1.0, s);
        let b = random_symmetric(6, 1.0, s + 1000);
        let dev = weyl_deviation(&decompose_default(&a).unwrap(), &decompose_default(&b).unwrap()).unwrap();
        dev - schatten_norm(&a.sub(&b).unwrap(), SchattenP::Inf).unwrap()
    }));
    Check {
        check: "weyl",
        pass: excess <= 1e-10,
        detail: format!("max excess {excess:.3e}"),
    }
}

fn identities() -> Check {
    let mut var = 0.0f64;
    let mut bid = 0.0f64;
    let mut lin = 0.0f64;
    for s in 0..100 {
        let dec = decompose_default(&rotated_diagonal(&spectrum(s, 5), s)).unwrap();
        let u = gaussian_vector(5, s + 1);
        let r = 1 + (s as usize % 5);
        let (a, b) = variance_forms(&dec, r, &u).unwrap();
        var = var.max((a - b).abs() / a.abs().max(1e-300));
        let bm = b_matrix(&dec, r, &u).unwrap();
        bid = bid.max((2.0 * whitened_norm_sq(&dec, &bm).unwrap() - a).abs() / a.max(1e-300));
        let e = random_symmetric(5, 1.0, s + 2);
        let theta = dec.simple_eigenvector(r).unwrap();
        let direct = (linear_term(&dec, r, &e).unwrap().matrix() * theta).dot(&u);
        let form = linear_form(&dec, r, &e, &u).unwrap();
        lin = lin.max((direct - form).abs() / direct.abs().max(form.abs()).max(1e-12));
    }
    Check {
        check: "identities",
        pass: var <= 1e-10 && bid <= 1e-8 && lin <= 1e-10,
        detail: format!("variance forms {var:.2e}, B identity {bid:.2e}, linear form {lin:.2e}"),
    }
}

fn quadratic_remainder() -> Check {
    let dec = decompose_default(&rotated_diagonal(&[3.0, 2.0, 1.2, 0.5], 3)).unwrap();
    let e = random_symmetric(4, 1.0, 4);
    let pts: Vec<(f64, f64)> = [1e-4f64, 3e-4, 1e-3, 3e-3]
        .iter()
        .map(|t| (t.ln(), remainder(&dec, 2, &e.scale(*t)).unwrap().remainder.frobenius().ln()))
        .collect();
    let slope = ls_slope(&pts);
    Check {
        check: "quadratic_remainder",
        pass: (slope - 2.0).abs() <= 0.1,
        detail: format!("log-log slope {slope:.4}"),
    }
}

fn g_derivative() -> Check {
    let model = make_model(rotated_diagonal(&[3.0, 1.0, 0.5], 5)).unwrap();
    let u = gaussian_vector(3, 6);
    let h = b_matrix(&model.dec, 1, &u).unwrap();
    let rel = worst((0..11).map(|k| {
        let t = -1.0 + 0.2 * k as f64;
        let (a, b) = g_derivative_check(&model, 1, &u, &h, 100.0, t).unwrap();
        (a - b).abs() / (1.0 + a.abs())
    }));
    Check {
        check: "g_derivative",
        pass: rel <= 1e-5,
        detail: format!("max relative gap {rel:.3e}"),
    }
}

fn clusters() -> Check {
    let ok = (0..200u64).all(|s| {
        let mut v: Vec<f64> = gaussian_vector(8, s).iter().map(|x| (2.0 * x).round() / 2.0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let delta = 0.3 + 0.1 * (s % 10) as f64;
        let c = delta_clusters(&v, delta).unwrap();
        c.clusters.windows(2).all(|w| w[0].end == w[1].start && v[w[0].end - 1] - v[w[1].start] >= delta)
            && c.clusters.iter().all(|r| r.clone().skip(1).all(|i| v[i - 1] - v[i] < delta))
            && c.clusters.iter().map(|r| r.len()).sum::<usize>() == v.len()
    });
    Check {
        check: "delta_clusters",
        pass: ok,
        detail: "partition and gap property on 200 spectra".into(),
    }
}

fn ks() -> Check {
    let brute = |xs: &[f64]| {
        let n = xs.len() as f64;
        xs.iter().fold(0.0f64, |acc, &x| {
            let le = xs.iter().filter(|y| **y <= x).count() as f64;
            let lt = xs.iter().filter(|y| **y < x).count() as f64;
            let f = normal_cdf(x);
            acc.max((le / n - f).abs()).max((f - lt / n).abs())
        })
    };
    let mismatches = (0..50u64)
        .filter(|s| {
            let xs: Vec<f64> = gaussian_vector(1 + (*s as usize * 7) % 100, *s).iter().map(|x| (4.0 * x).round() / 4.0).collect();
            ks_distance(&xs).unwrap() != brute(&xs)
        })
        .count();
    Check {
        check: "ks_oracle",
        pass: mismatches == 0,
        detail: format!("{mismatches} mismatches over 50 samples"),
    }
}

fn determinism() -> Check {
    let s = Scenario {
        name: None,
        model: ModelSpec::Prop32 { r: 1, a: 2.0, d: 3, mu1: 1.0 },
        r: 1,
        u: FunctionalSpec::Named("e2".into()),
        n: 100,
        tau: 0.1,
        m: None,
        estimator: EstimatorKind::Debiased,
        reps: 20,
        master_seed: 11,
        alpha: 0.05,
        loss: LossFunction::Squared,
    };
    let a = run_scenario(&s).unwrap().without_timing();
    let b = run_scenario(&s).unwrap().without_timing();
    Check {
        check: "determinism",
        pass: a == b,
        detail: "repeated scenario gives identical reports".into(),
    }
}

pub fn run() -> Vec<Check> {
    vec![weyl(), identities(), quadratic_remainder(), g_derivative(), clusters(), ks(), determinism()]
}
