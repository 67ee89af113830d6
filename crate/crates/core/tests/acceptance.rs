use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use pca_debias::cluster::delta_clusters;
use pca_debias::estimators::variance_forms;
use pca_debias::lowerbound::{b_matrix, exact_van_trees, g_derivative_check, van_trees_bound, van_trees_evaluate, whitened_norm_sq};
use pca_debias::montecarlo::{
    ks_distance, ls_slope, mean_and_stderr, normal_cdf, run_scenario, run_scenario_detailed, seed_derive, EstimatorKind,
    FunctionalSpec, Scenario,
};
use pca_debias::perturbation::{a_r, bias_oracle_mc, linear_form, linear_term, remainder};
use pca_debias::sampling::{draw, make_model, prop32_model, sample_covariance, ModelSpec};
use pca_debias::spectral::{decompose_default, schatten_norm, spectral_gaps, weyl_deviation, SchattenP, SymMatrix};
use pca_debias::cluster::empirical_projector;
use pca_debias::estimators::LossFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C1_SIGMAS: f64 = 4.0;
const C2_REL: f64 = 0.30;
const C2_SIGMAS: f64 = 3.0;
const C2_SLOPE: (f64, f64) = (0.8, 1.2);
const C3_SIGMAS: f64 = 3.0;
const C4_KS: f64 = 0.05;
const C4_SIGMAS: f64 = 3.0;
const C4_RISK: (f64, f64) = (0.85, 1.15);
const C5_COVERAGE: (f64, f64) = (0.93, 0.97);
const C6_FACTOR: f64 = 0.25;
const C6_SIGMAS: f64 = 3.0;
const C7_REL: f64 = 0.01;
const C8_WEYL: f64 = 1e-10;
const C8_VARIANCE: f64 = 1e-10;
const C8_B: f64 = 1e-8;
const C8_LINEAR: f64 = 1e-10;
const C8_SLOPE: (f64, f64) = (1.9, 2.1);
const C8_DERIV: f64 = 1e-5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn e(d: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[i] = 1.0;
    v
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)))
}

fn random_spd(values: &[f64], rng: &mut ChaCha8Rng) -> SymMatrix {
    let d = values.len();
    let g = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let q = g.qr().q();
    SymMatrix::symmetrize(&q * nalgebra::DMatrix::from_diagonal(&DVector::from_column_slice(values)) * q.transpose())
}

fn random_symmetric(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let g = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    SymMatrix::symmetrize((&g + g.transpose()) * 0.5)
}

fn distinct_spectrum(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| 0.2 + 3.0 * rng.random::<f64>()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    for i in 1..d {
        if v[i - 1] - v[i] < 0.05 {
            v[i] = v[i - 1] - 0.05;
        }
    }
    let shift = 0.2 - v[d - 1];
    if shift > 0.0 {
        v.iter_mut().for_each(|x| *x += shift);
    }
    v
}

/// Diag(2, 1, ..., 1), d = 20, n = 200: mean of ||L_1(E)||_2^2 against A_1/n.
fn criterion_1() -> Outcome {
    let (d, n, reps) = (20, 200, 5000);
    let mut diag = vec![1.0; d];
    diag[0] = 2.0;
    let model = make_model(SymMatrix::from_diagonal(&diag)).unwrap();
    let target = a_r(&model.dec, 1).unwrap() / n as f64;
    let vals: Vec<f64> = (0..reps)
        .map(|i| {
            let x = draw(&model, n, seed_derive(101, i)).unwrap();
            let e = sample_covariance(&x).unwrap().sub(&model.sigma).unwrap();
            linear_term(&model.dec, 1, &e).unwrap().matrix().norm_squared()
        })
        .collect();
    let (mean, se) = mean_and_stderr(&vals);
    let z = (mean - target) / se;
    outcome(
        z.abs() <= C1_SIGMAS,
        format!("mean {mean:.6} vs A_r/n {target:.6}, z = {z:.2} (tol {C1_SIGMAS} se)"),
    )
}

/// Bias law over r(Sigma) in {5, 10, 20, 40}.
fn criterion_2() -> Outcome {
    let (n, reps) = (500, 5000);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut points = Vec::new();
    for (k, d) in [8usize, 18, 38, 78].into_iter().enumerate() {
        let model = prop32_model(1, 2.0, d, 1.0).unwrap();
        let reff = model.effective_rank().unwrap();
        let b = bias_oracle_mc(&model, 1, n, reps, 200 + k as u64).unwrap();
        let diff = (b.value - b.theoretical).abs();
        let tol = (C2_REL * b.theoretical.abs()).max(C2_SIGMAS * b.stderr);
        ok &= diff <= tol;
        parts.push(format!("r={reff:.0}: {:.5} vs {:.5}", b.value, b.theoretical));
        points.push((reff.ln(), b.value.abs().ln()));
    }
    let slope = ls_slope(&points);
    ok &= slope >= C2_SLOPE.0 && slope <= C2_SLOPE.1;
    outcome(ok, format!("{}; slope {slope:.3}", parts.join(", ")))
}

/// Plug-in centering at Sigma = diag(3, 1), n = 500.
fn criterion_3() -> Outcome {
    let (n, reps) = (500, 5000);
    let s = Scenario {
        name: None,
        model: ModelSpec::Diagonal { values: vec![3.0, 1.0] },
        r: 1,
        u: FunctionalSpec::Coordinates(vec![1.0, 1.0]),
        n,
        tau: 0.1,
        m: None,
        estimator: EstimatorKind::Plugin,
        reps,
        master_seed: 301,
        alpha: 0.05,
        loss: LossFunction::Squared,
    };
    let rep = run_scenario(&s).unwrap();
    let model = s.model.build().unwrap();
    let b = bias_oracle_mc(&model, 1, n, reps, 302).unwrap();
    let truth = rep.truth;
    let predicted = (1.0 + b.value).sqrt() * truth;
    let pred_se = truth.abs() * b.stderr / (2.0 * (1.0 + b.value).sqrt());
    let mean = rep.mean_estimate.unwrap();
    let se = rep.stderr.unwrap().hypot(pred_se);
    let z = (mean - predicted) / se;
    outcome(
        z.abs() <= C3_SIGMAS && rep.failures == 0,
        format!("mean {mean:.6} vs sqrt(1+b)<theta,u> {predicted:.6} (b = {:.5}), z = {z:.2}", b.value),
    )
}

fn debiased_scenario(d: usize, seed: u64) -> Scenario {
    Scenario {
        name: None,
        model: ModelSpec::Prop32 { r: 1, a: 2.0, d, mu1: 1.0 },
        r: 1,
        u: FunctionalSpec::Named("e2".into()),
        n: 4000,
        tau: 0.1,
        m: None,
        estimator: EstimatorKind::Debiased,
        reps: 2000,
        master_seed: seed,
        alpha: 0.05,
        loss: LossFunction::Squared,
    }
}

/// Debiased normality and feasible coverage share one run.
fn criteria_4_5() -> (Outcome, Outcome) {
    let rep = run_scenario(&debiased_scenario(50, 401)).unwrap();
    let ks = rep.ks_to_normal.unwrap();
    let mean = rep.mean_standardized.unwrap();
    let se = rep.stderr_standardized.unwrap();
    let risk = rep.risk.unwrap();
    let pass4 = ks <= C4_KS && mean.abs() <= C4_SIGMAS * se && risk >= C4_RISK.0 && risk <= C4_RISK.1;
    let cov = rep.coverage.unwrap();
    let fails = format!("failures {}/{}, m = {:.0}", rep.failures, rep.reps, rep.mean_m.unwrap_or(f64::NAN));
    (
        outcome(pass4, format!("KS {ks:.4}, mean {mean:.4} (se {se:.4}), risk {risk:.4}; {fails}")),
        outcome(cov >= C5_COVERAGE.0 && cov <= C5_COVERAGE.1, format!("coverage {cov:.4}; {fails}")),
    )
}

const C6_N: usize = 200;
const C6_A: f64 = 1.05;
const C6_REPS: usize = 300;

/// Plug-in bias of order r(Sigma)/n against the debiased estimator.
fn criterion_6() -> Outcome {
    let r_target = (C6_N as f64).powf(0.75);
    let mu2 = 1.0 - 1.0 / C6_A;
    let d = ((r_target - 1.0) / mu2).round() as usize;
    let base = Scenario {
        name: None,
        model: ModelSpec::Prop32 { r: 1, a: C6_A, d, mu1: 1.0 },
        r: 1,
        u: FunctionalSpec::Named("(e1+e2)/sqrt2".into()),
        n: C6_N,
        tau: 0.1,
        m: None,
        estimator: EstimatorKind::Plugin,
        reps: C6_REPS,
        master_seed: 601,
        alpha: 0.05,
        loss: LossFunction::Squared,
    };
    let p = base.prepare().unwrap();
    let mu = p.model.dec.groups().iter().map(|g| g.value).collect::<Vec<_>>();
    let (mu1, mur) = (mu[0], mu[base.r - 1]);
    let c = 0.5 * p.truth.abs() / p.u.norm() * mu1 * mur / ((mu1 - mur).powi(2).max(mur * mur));
    let threshold = C6_FACTOR * c * p.effective_rank / C6_N as f64 * p.u.norm();
    let plug = run_scenario(&base).unwrap();
    let deb = run_scenario(&Scenario {
        estimator: EstimatorKind::Debiased,
        master_seed: 602,
        ..base
    })
    .unwrap();
    let pe = plug.mean_error.unwrap();
    let (de, dse) = (deb.mean_error.unwrap(), deb.stderr.unwrap());
    outcome(
        pe.abs() >= threshold && de.abs() <= C6_SIGMAS * dse,
        format!(
            "d = {d}, r(Sigma) = {:.1}, c = {c:.4}; plug-in |err| {:.5} vs {threshold:.5}; debiased err {de:.5} (se {dse:.5}); failures {}+{}",
            p.effective_rank,
            pe.abs(),
            plug.failures,
            deb.failures
        ),
    )
}

/// Van Trees limit at diag(2, 1) and the bound against debiased risk.
fn criterion_7() -> Outcome {
    let model = make_model(SymMatrix::from_diagonal(&[2.0, 1.0])).unwrap();
    let u = e(2, 1);
    let res = van_trees_evaluate(&model, 1, &u, 1e8, 1e3).unwrap();
    let ratio = res.bound / res.sigma2;
    let clause1 = ratio >= 1.0 - C7_REL && ratio <= 1.0;
    let clause2 = res.bound <= res.sigma2;

    let s = debiased_scenario(1, 701);
    let p = s.prepare().unwrap();
    let n = s.n as f64;
    let best = (0..=60)
        .map(|k| 10f64.powf(-1.0 + k as f64 * 0.05))
        .filter_map(|c| van_trees_bound(&p.model, 1, &p.u, n, c).ok())
        .map(|r| r.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let (_, results) = run_scenario_detailed(&s).unwrap();
    let sq: Vec<f64> = results.iter().filter_map(|r| r.scaled_error).map(|x| x * x).collect();
    let (risk, risk_se) = mean_and_stderr(&sq);
    let clause3 = best.is_finite() && risk >= best;
    outcome(
        clause1 && clause2 && clause3,
        format!(
            "bound(1e8, 1e3)/sigma^2 = {ratio:.4} (admissibility violations: {}; quadrature value {:.4}); n*risk at n=4000 {risk:.4} (se {risk_se:.4}) vs best admissible bound {best:.4}",
            res.violations.len(),
            exact_van_trees(&model, 1, &u, 1e8, 1e3).map_or(f64::NAN, |x| x / res.sigma2),
        ),
    )
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/acceptance_summary.json")
}

fn golden_scenario() -> Scenario {
    Scenario {
        name: Some("golden".into()),
        model: ModelSpec::Prop32 { r: 1, a: 2.0, d: 5, mu1: 1.0 },
        r: 1,
        u: FunctionalSpec::Named("e2".into()),
        n: 200,
        tau: 0.1,
        m: None,
        estimator: EstimatorKind::Debiased,
        reps: 50,
        master_seed: 7,
        alpha: 0.05,
        loss: LossFunction::Squared,
    }
}

/// Invariant suite.
fn criterion_8() -> Outcome {
    let mut fails = Vec::new();
    let mut g = rng(801);

    for _ in 0..200 {
        let d = 2 + g.random_range(0..8);
        let a = random_symmetric(d, &mut g);
        let b = random_symmetric(d, &mut g);
        let lhs = weyl_deviation(&decompose_default(&a).unwrap(), &decompose_default(&b).unwrap()).unwrap();
        if lhs > schatten_norm(&a.sub(&b).unwrap(), SchattenP::Inf).unwrap() + C8_WEYL {
            fails.push("weyl");
            break;
        }
    }

    for _ in 0..200 {
        let d = 2 + g.random_range(0..7);
        let vals = distinct_spectrum(d, &mut g);
        let sigma = random_spd(&vals, &mut g);
        let dec = decompose_default(&sigma).unwrap();
        let r = 1 + g.random_range(0..d);
        let u = gaussian(d, &mut g);
        let (s1, s2) = variance_forms(&dec, r, &u).unwrap();
        if (s1 - s2).abs() > C8_VARIANCE * s1.abs().max(1e-300) {
            fails.push("variance forms");
            break;
        }
        let b = b_matrix(&dec, r, &u).unwrap();
        if (2.0 * whitened_norm_sq(&dec, &b).unwrap() - s1).abs() > C8_B * s1.max(1e-300) {
            fails.push("B identity");
            break;
        }
        let e = random_symmetric(d, &mut g);
        let theta = dec.simple_eigenvector(r).unwrap();
        let direct = (linear_term(&dec, r, &e).unwrap().matrix() * &theta).dot(&u);
        let form = linear_form(&dec, r, &e, &u).unwrap();
        if (direct - form).abs() > C8_LINEAR * direct.abs().max(form.abs()).max(1e-12) {
            fails.push("linear form");
            break;
        }
    }

    for _ in 0..20 {
        let vals = distinct_spectrum(5, &mut g);
        let dec = decompose_default(&random_spd(&vals, &mut g)).unwrap();
        let e = random_symmetric(5, &mut g);
        let e = e.scale(1.0 / schatten_norm(&e, SchattenP::Inf).unwrap());
        let pts: Vec<(f64, f64)> = [1e-4, 3e-4, 1e-3, 3e-3]
            .iter()
            .map(|eps| {
                let rep = remainder(&dec, 2, &e.scale(*eps)).unwrap();
                (eps.ln(), rep.remainder.frobenius().ln())
            })
            .collect();
        let slope = ls_slope(&pts);
        if !(slope >= C8_SLOPE.0 && slope <= C8_SLOPE.1) {
            fails.push("quadratic remainder");
            break;
        }
    }

    for k in 0..50 {
        let vals = distinct_spectrum(4, &mut g);
        let model = make_model(random_spd(&vals, &mut g)).unwrap();
        let u = gaussian(4, &mut g);
        let h = b_matrix(&model.dec, 1, &u).unwrap();
        let t = -1.0 + 2.0 * (k as f64) / 49.0;
        let (a, nmr) = g_derivative_check(&model, 1, &u, &h, 1e4, t).unwrap();
        if (a - nmr).abs() > C8_DERIV * (1.0 + a.abs()) {
            fails.push("g derivative");
            break;
        }
    }

    for _ in 0..200 {
        let len = 1 + g.random_range(0..12);
        let mut v: Vec<f64> = (0..len).map(|_| (10.0 * g.random::<f64>()).round() / 2.0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let delta = 0.1 + 2.0 * g.random::<f64>();
        let c = delta_clusters(&v, delta).unwrap();
        let covered: usize = c.clusters.iter().map(|r| r.len()).sum();
        let mut ok = covered == len && c.clusters.first().map_or(false, |r| r.start == 0);
        for w in c.clusters.windows(2) {
            ok &= w[0].end == w[1].start && v[w[0].end - 1] - v[w[1].start] >= delta;
        }
        for r in &c.clusters {
            ok &= r.clone().skip(1).all(|i| v[i - 1] - v[i] < delta);
        }
        if !ok {
            fails.push("delta clusters");
            break;
        }
    }

    let model = make_model(SymMatrix::from_diagonal(&[4.0, 4.0, 2.0, 1.0, 1.0, 1.0])).unwrap();
    let (r, tau) = (2, 0.1);
    let gbar = spectral_gaps(&model.dec, r).unwrap().1;
    let mut checked = 0;
    for i in 0..100 {
        let x = draw(&model, 20_000, seed_derive(802, i)).unwrap();
        let cov = sample_covariance(&x).unwrap();
        let dec = decompose_default(&cov).unwrap();
        let delta = tau * dec.norm();
        let enorm = schatten_norm(&cov.sub(&model.sigma).unwrap(), SchattenP::Inf).unwrap();
        if enorm < delta / 2.0 && delta < gbar / 2.0 {
            checked += 1;
            let ok = (1..=r).all(|s| {
                empirical_projector(&dec, s, tau).map(|p| p.cluster) == Ok(model.dec.group(s).unwrap().indices.clone())
            });
            if !ok {
                fails.push("cluster recovery");
                break;
            }
        }
    }
    if checked < 50 {
        fails.push("cluster recovery premise rarely held");
    }

    let rep = run_scenario(&golden_scenario()).unwrap().without_timing();
    let json = serde_json::to_string_pretty(&rep).unwrap();
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &json).unwrap();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let again = pool.install(|| run_scenario(&golden_scenario()).unwrap().without_timing());
    if std::fs::read_to_string(&path).ok().as_deref() != Some(json.as_str()) || again != rep {
        fails.push("golden determinism");
    }

    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("all invariant families hold; cluster recovery checked on {checked} draws")
        } else {
            format!("failed: {}", fails.join(", "))
        },
    )
}

fn brute_ks(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut best = 0.0f64;
    for &x in xs {
        let mut le = 0usize;
        let mut lt = 0usize;
        for &y in xs {
            if y <= x {
                le += 1;
            }
            if y < x {
                lt += 1;
            }
        }
        let f = normal_cdf(x);
        best = best.max((le as f64 / n - f).abs()).max((f - lt as f64 / n).abs());
    }
    best
}

/// KS distance against a brute-force double loop.
fn criterion_9() -> Outcome {
    let mut g = rng(901);
    let mut mismatches = 0;
    for _ in 0..100 {
        let len = 1 + g.random_range(0..100);
        let xs: Vec<f64> = (0..len)
            .map(|_| {
                let x: f64 = g.sample(rand_distr::StandardNormal);
                if g.random::<f64>() < 0.2 { (x * 2.0).round() / 2.0 } else { x }
            })
            .collect();
        if ks_distance(&xs).unwrap() != brute_ks(&xs) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 100 samples"))
}

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: u32| only.is_empty() || only.contains(&k);
    let mut lines: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let run = |k: u32, name: &'static str, f: &dyn Fn() -> Outcome, lines: &mut Vec<_>| {
        if wanted(k) {
            let t = Instant::now();
            let o = f();
            lines.push((k, name, o, t.elapsed().as_secs_f64()));
        }
    };
    run(1, "linear term second moment", &criterion_1, &mut lines);
    run(2, "bias law", &criterion_2, &mut lines);
    run(3, "plug-in centering", &criterion_3, &mut lines);
    if wanted(4) || wanted(5) {
        let t = Instant::now();
        let (o4, o5) = criteria_4_5();
        let el = t.elapsed().as_secs_f64();
        lines.push((4, "debiased normality", o4, el));
        lines.push((5, "feasible interval coverage", o5, 0.0));
    }
    run(6, "plug-in rate failure vs debiased", &criterion_6, &mut lines);
    run(7, "van Trees consistency", &criterion_7, &mut lines);
    run(8, "invariant suite", &criterion_8, &mut lines);
    run(9, "KS oracle", &criterion_9, &mut lines);

    let mut failed = 0;
    for (k, name, o, secs) in &lines {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {k} [{tag}] {name}: {} ({secs:.1}s)", o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
