//! Van Trees lower bound along the one-parameter family
//! `Sigma_t = Sigma + t H / sqrt(n)`, `|t| <= c`, with `H = B`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::variance_true;
use crate::sampling::CovarianceModel;
use crate::spectral::{decompose_default, schatten_norm, spectral_gaps, SchattenP, SpectralDecomposition, SymMatrix};

/// Fisher information `J_pi` of the base prior `cos^2(pi t / 2)` on `[-1, 1]`.
pub const J_PI: f64 = PI * PI;

/// Unit constants standing in for the unnamed `B_1`, `D_1` of the remainder
/// terms.
pub const B1: f64 = 1.0;
pub const D1: f64 = 1.0;

const SINGULAR_TOL: f64 = 1e-12;

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // Split first so that integrands vanishing at the midpoint are resolved.
    let pieces = 8;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            step(f, x0, x1, f0, fm, f1, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// Prior `pi_c(t) = pi(t / c) / c` with `pi(t) = cos^2(pi t / 2)` on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prior {
    pub c: f64,
    pub j_const: f64,
}

impl Prior {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::validation(format!("prior half-width c must be positive, got {c}")));
        }
        Ok(Prior { c, j_const: J_PI })
    }

    pub fn base_density(t: f64) -> f64 {
        if t.abs() <= 1.0 {
            (0.5 * PI * t).cos().powi(2)
        } else {
            0.0
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        Self::base_density(t / self.c) / self.c
    }

    /// `J_{pi_c} = J_pi / c^2`.
    pub fn information(&self) -> f64 {
        self.j_const / (self.c * self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanTreesResult {
    pub n: f64,
    pub c: f64,
    /// `sigma^2 (1 - numerator / denominator) * sigma_factor`.
    pub bound: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// `1 - D_1 / sigma^2 ||Sigma||^2 / g^3 c ||B|| / sqrt(n) |u|^2`.
    pub sigma_factor: f64,
    /// `||Sigma^{-1/2} B Sigma^{-1/2}||_2^2`.
    pub b_norm: f64,
    pub sigma2: f64,
    /// `B_1 c ||B||^2 |u| / (2 g^2 sqrt(n))`.
    pub remainder_b1: f64,
    /// `3 c ||Sigma^{-1} B||_2^3 / sqrt(n)`.
    pub remainder_fisher: f64,
    /// `J_pi / c^2`.
    pub prior_info: f64,
    /// `D_1 / sigma^2 ||Sigma||^2 / g^3 c ||B|| / sqrt(n) |u|^2`.
    pub remainder_d1: f64,
    /// Failed admissibility conditions; empty when admissible.
    pub violations: Vec<String>,
}

fn check_nonsingular(dec: &SpectralDecomposition) -> Result<()> {
    let min = *dec.eigenvalues().last().expect("non-empty spectrum");
    if !(min > SINGULAR_TOL * dec.norm()) {
        return Err(Error::domain(format!("covariance is singular (min eigenvalue {min:.3e})")));
    }
    Ok(())
}

/// `V diag(f(lambda)) V^T x`.
fn apply_function(dec: &SpectralDecomposition, f: impl Fn(f64) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let v = dec.eigenvectors();
    let mut c = v.tr_mul(x);
    for (cj, l) in c.iter_mut().zip(dec.eigenvalues()) {
        *cj *= f(*l);
    }
    v * c
}

/// `B = 1/2 (Sigma theta_r ⊗ Sigma C_r u + Sigma C_r u ⊗ Sigma theta_r)`.
pub fn b_matrix(dec: &SpectralDecomposition, r: usize, u: &DVector<f64>) -> Result<SymMatrix> {
    check_nonsingular(dec)?;
    if u.len() != dec.dim() {
        return Err(Error::validation("u dimension mismatch"));
    }
    let theta = dec.simple_eigenvector(r)?;
    let a = apply_function(dec, |l| l, &theta);
    let b = apply_function(dec, |l| l, &dec.apply_resolvent(r, u)?);
    let bm = SymMatrix::symmetrize((&a * b.transpose() + &b * a.transpose()) * 0.5);
    debug_assert!({
        let s2 = variance_true(dec, r, u)?;
        (2.0 * whitened_norm_sq(dec, &bm)? - s2).abs() <= 1e-8 * s2.max(f64::MIN_POSITIVE) + 1e-14
    });
    Ok(bm)
}

/// `||Sigma^{-1/2} H Sigma^{-1/2}||_2^2`.
pub fn whitened_norm_sq(dec: &SpectralDecomposition, h: &SymMatrix) -> Result<f64> {
    check_nonsingular(dec)?;
    let v = dec.eigenvectors();
    let w = v.transpose() * h.matrix() * v;
    let lam = dec.eigenvalues();
    Ok(w.iter()
        .enumerate()
        .map(|(k, x)| {
            let (i, j) = (k % w.nrows(), k / w.nrows());
            x * x / (lam[i] * lam[j])
        })
        .sum())
}

/// `I(Sigma_t; H) = 1/2 tr(Sigma_t^{-1} H Sigma_t^{-1} H)`.
pub fn fisher_info(sigma_t: &SymMatrix, h: &SymMatrix) -> Result<f64> {
    sigma_t.check_dim(h)?;
    let chol = sigma_t
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::domain("Sigma_t is not positive definite"))?;
    let l = chol.l();
    let m = l
        .solve_lower_triangular(h.matrix())
        .ok_or_else(|| Error::domain("Sigma_t is singular"))?;
    let w = l
        .solve_lower_triangular(&m.transpose())
        .ok_or_else(|| Error::domain("Sigma_t is singular"))?;
    Ok(0.5 * w.norm_squared())
}

fn inverse_times(dec: &SpectralDecomposition, h: &SymMatrix) -> DMatrix<f64> {
    let inv = dec.spectral_function(|_, l| 1.0 / l);
    inv.matrix() * h.matrix()
}

/// A point `Sigma_t` of the path with the eigenvector matched to index
/// `index` of `Sigma` and signed against `theta0`.
struct PathPoint {
    dec: SpectralDecomposition,
    r: usize,
    theta: DVector<f64>,
}

fn path_point(
    sigma: &SymMatrix,
    h: &SymMatrix,
    n: f64,
    t: f64,
    index: usize,
    theta0: &DVector<f64>,
) -> Result<PathPoint> {
    let st = SymMatrix::symmetrize(sigma.matrix() + h.matrix() * (t / n.sqrt()));
    let dec = decompose_default(&st)?;
    let (pos, g) = dec
        .groups()
        .iter()
        .enumerate()
        .find(|(_, g)| g.indices.contains(&index))
        .expect("index within dimension");
    if g.multiplicity() != 1 {
        return Err(Error::Matching(format!(
            "eigenvalue {} is not simple at t = {t}",
            index + 1
        )));
    }
    let mut theta = dec.eigenvector(index);
    if theta.dot(theta0) < 0.0 {
        theta.neg_mut();
    }
    Ok(PathPoint { dec, r: pos + 1, theta })
}

/// `<L_t(H) theta_t, u> = <H theta_t, C_t u>`.
fn path_linear_form(p: &PathPoint, h: &SymMatrix, u: &DVector<f64>) -> Result<f64> {
    Ok((h.matrix() * &p.theta).dot(&p.dec.apply_resolvent(p.r, u)?))
}

fn validate_path_inputs(model: &CovarianceModel, u: &DVector<f64>, h: &SymMatrix, n: f64) -> Result<()> {
    if u.len() != model.dim() {
        return Err(Error::validation("u dimension mismatch"));
    }
    model.sigma.check_dim(h)?;
    if !(n > 0.0) {
        return Err(Error::validation("n must be positive"));
    }
    Ok(())
}

/// `g'(t)` of `g(t) = <theta_t, u>`: the closed form
/// `n^{-1/2} <L_t(H) theta_t, u>` and a central difference with step
/// `1e-6 (1 + |t|)`.
pub fn g_derivative_check(
    model: &CovarianceModel,
    r: usize,
    u: &DVector<f64>,
    h: &SymMatrix,
    n: f64,
    t: f64,
) -> Result<(f64, f64)> {
    validate_path_inputs(model, u, h, n)?;
    let theta0 = model.dec.simple_eigenvector(r)?;
    let index = model.dec.group(r)?.indices.start;
    let at = |s: f64| path_point(&model.sigma, h, n, s, index, &theta0);
    let p = at(t)?;
    let analytic = path_linear_form(&p, h, u)? / n.sqrt();
    let step = 1e-6 * (1.0 + t.abs());
    let numeric = (at(t + step)?.theta.dot(u) - at(t - step)?.theta.dot(u)) / (2.0 * step);
    Ok((analytic, numeric))
}

/// The van Trees ratio `(int <L_t(B) theta_t, u> pi_c)^2 / (int I(t) pi_c +
/// J_pi / c^2)` for `H = B`, by quadrature along the path.
pub fn exact_van_trees(model: &CovarianceModel, r: usize, u: &DVector<f64>, n: f64, c: f64) -> Result<f64> {
    let prior = Prior::new(c)?;
    let b = b_matrix(&model.dec, r, u)?;
    validate_path_inputs(model, u, &b, n)?;
    let theta0 = model.dec.simple_eigenvector(r)?;
    let index = model.dec.group(r)?.indices.start;
    // Composite Simpson on a fixed grid; the integrands are smooth in t.
    let panels = 512;
    let h = 2.0 * c / panels as f64;
    let (mut num, mut info) = (0.0, 0.0);
    for k in 0..=panels {
        let t = -c + k as f64 * h;
        let w = match k {
            0 => 1.0,
            k if k == panels => 1.0,
            k if k % 2 == 1 => 4.0,
            _ => 2.0,
        } * h
            / 3.0
            * prior.density(t);
        if w == 0.0 {
            continue;
        }
        let p = path_point(&model.sigma, &b, n, t, index, &theta0)?;
        num += w * path_linear_form(&p, &b, u)?;
        let st = SymMatrix::symmetrize(model.sigma.matrix() + b.matrix() * (t / n.sqrt()));
        info += w * fisher_info(&st, &b)?;
    }
    Ok(num * num / (info + prior.information()))
}

/// The class-level form of the bound, in units of `sigma_r^2`, for gap
/// ratio bound `a` and variance floor `sigma0_sq`.
pub fn class_bound(a: f64, sigma0_sq: f64, u_norm: f64, n: f64, c: f64) -> f64 {
    let s = c / n.sqrt();
    let u3 = u_norm.powi(3);
    let j = J_PI / (c * c);
    let first = 1.0 - (B1 * a.powi(4) * u3 * s + 3.0 * a.powi(3) * u3 * s + j) / (sigma0_sq / 4.0 + 3.0 * a.powi(3) * u3 * s + j);
    first * (1.0 - D1 / sigma0_sq * a.powi(4) * u3 * s)
}

/// Evaluate the bound and every intermediate without enforcing
/// admissibility; failed conditions are listed in `violations`.
pub fn van_trees_evaluate(model: &CovarianceModel, r: usize, u: &DVector<f64>, n: f64, c: f64) -> Result<VanTreesResult> {
    let prior = Prior::new(c)?;
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::validation(format!("n must be positive, got {n}")));
    }
    let dec = &model.dec;
    let b = b_matrix(dec, r, u)?;
    let sigma2 = variance_true(dec, r, u)?;
    if !(sigma2 > 0.0) {
        return Err(Error::domain("sigma_r^2(Sigma; u) is zero"));
    }
    let b_norm = whitened_norm_sq(dec, &b)?;
    let (g_r, g_bar) = spectral_gaps(dec, r)?;
    let sigma_norm = dec.norm();
    let u_norm = u.norm();
    let b_op = schatten_norm(&b, SchattenP::Inf)?;
    let b_nuc = schatten_norm(&b, SchattenP::One)?;
    let sib = inverse_times(dec, &b);
    let sib_hs = sib.norm();
    let sib_op = sib.clone().singular_values().max();
    let rt = n.sqrt();

    let remainder_b1 = B1 * c * b_op * b_op / (2.0 * g_r * g_r * rt) * u_norm;
    let remainder_fisher = 3.0 * c * sib_hs.powi(3) / rt;
    let prior_info = prior.information();
    let numerator = remainder_b1 + remainder_fisher + prior_info;
    let denominator = sigma2 / 4.0 + remainder_fisher + prior_info;
    let remainder_d1 = D1 / sigma2 * sigma_norm.powi(2) / g_r.powi(3) * c * b_op / rt * u_norm * u_norm;
    let sigma_factor = 1.0 - remainder_d1;
    let bound = sigma2 * (1.0 - numerator / denominator) * sigma_factor;

    let lambda_min = *dec.eigenvalues().last().expect("non-empty spectrum");
    let delta = 0.5 * lambda_min.min(g_bar / 4.0);
    let mut violations = Vec::new();
    let cond_h = c * b_nuc / rt;
    if !(cond_h < delta) {
        violations.push(format!("cond_H: c ||B||_1 / sqrt(n) = {cond_h:.6e} is not below delta = {delta:.6e}"));
    }
    if !(delta < lambda_min) {
        violations.push(format!("cond_delta_1: delta = {delta:.6e} is not below ||Sigma^-1||^-1 = {lambda_min:.6e}"));
    }
    if !(delta < g_bar / 4.0) {
        violations.push(format!("cond_delta_2: delta = {delta:.6e} is not below bar g_r / 4 = {:.6e}", g_bar / 4.0));
    }
    let cond_hh = c * sib_op / rt;
    if !(cond_hh <= 0.5) {
        violations.push(format!("cond_HH: c ||Sigma^-1 B|| / sqrt(n) = {cond_hh:.6e} exceeds 1/2"));
    }
    let xyz = D1 / sigma2 * sigma_norm.powi(4) / g_r.powi(4) * c / rt * u_norm.powi(3);
    if !(xyz <= 1.0) {
        violations.push(format!("assump_XYZ: D_1 / sigma^2 ||Sigma||^4 / g^4 c / sqrt(n) |u|^3 = {xyz:.6e} exceeds 1"));
    }
    Ok(VanTreesResult {
        n,
        c,
        bound,
        numerator,
        denominator,
        sigma_factor,
        b_norm,
        sigma2,
        remainder_b1,
        remainder_fisher,
        prior_info,
        remainder_d1,
        violations,
    })
}

/// [`van_trees_evaluate`], failing with an admissibility error when any
/// condition on `(n, c)` does not hold.
pub fn van_trees_bound(model: &CovarianceModel, r: usize, u: &DVector<f64>, n: f64, c: f64) -> Result<VanTreesResult> {
    let res = van_trees_evaluate(model, r, u, n, c)?;
    if !res.violations.is_empty() {
        return Err(Error::Admissibility(res.violations));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::linear_form;
    use crate::sampling::make_model;
    use crate::testing::{gaussian_vector, random_symmetric, rotated_diagonal};
    use proptest::prelude::*;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn diag_model(v: &[f64]) -> CovarianceModel {
        make_model(SymMatrix::from_diagonal(v)).unwrap()
    }

    #[test]
    fn prior_properties() {
        assert_eq!(Prior::base_density(1.0), (0.5 * PI).cos().powi(2));
        assert!(Prior::base_density(1.0) < 1e-30 && Prior::base_density(-1.0) < 1e-30);
        let p = Prior::new(2.5).unwrap();
        let mass = integrate(&|t| p.density(t), -2.5, 2.5, 1e-12);
        assert!((mass - 1.0).abs() < 1e-8);
        // J_pi = int pi'^2 / pi = int pi^2 sin^2(pi t / 2).
        let j = integrate(&|t| (PI * (0.5 * PI * t).sin()).powi(2), -1.0, 1.0, 1e-12);
        assert!((j - J_PI).abs() < 1e-8);
        // J_{pi_c} from the scaled density directly.
        let jc = integrate(
            &|t| {
                let s = t / p.c;
                let dens = p.density(t);
                let deriv = -(PI / 2.0) * (PI * s).sin() / (p.c * p.c);
                if dens > 0.0 { deriv * deriv / dens } else { 0.0 }
            },
            -p.c,
            p.c,
            1e-12,
        );
        assert!((jc - p.information()).abs() < 1e-7);
        assert!(Prior::new(0.0).is_err());
    }

    #[test]
    fn b_matrix_examples() {
        let m = diag_model(&[2.0, 1.0]);
        assert_eq!(b_matrix(&m.dec, 1, &e(2, 0)).unwrap().matrix().amax(), 0.0);
        let b = b_matrix(&m.dec, 1, &e(2, 1)).unwrap();
        let want = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((b.matrix() - want.matrix()).amax() < 1e-15);
        assert!(matches!(b_matrix(&diag_model(&[2.0, 0.0]).dec, 1, &e(2, 1)), Err(Error::Domain(_))));
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_info(&SymMatrix::identity(2), &SymMatrix::zeros(2)).unwrap(), 0.0);
        assert!((fisher_info(&SymMatrix::identity(2), &SymMatrix::identity(2)).unwrap() - 1.0).abs() < 1e-15);
        let h = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let f = fisher_info(&SymMatrix::from_diagonal(&[2.0, 1.0]), &h).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
        assert!(fisher_info(&SymMatrix::from_diagonal(&[1.0, 0.0]), &h).is_err());
    }

    #[test]
    fn linear_form_of_b_is_whitened_norm() {
        for seed in 0..20 {
            let model = make_model(rotated_diagonal(&[3.0, 2.0, 1.2, 0.5], seed)).unwrap();
            let u = gaussian_vector(4, seed + 50);
            let b = b_matrix(&model.dec, 2, &u).unwrap();
            let lhs = linear_form(&model.dec, 2, &b, &u).unwrap();
            let rhs = whitened_norm_sq(&model.dec, &b).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-12));
        }
    }

    #[test]
    fn limit_and_admissibility_at_large_n() {
        let m = diag_model(&[2.0, 1.0]);
        let res = van_trees_evaluate(&m, 1, &e(2, 1), 1e8, 1e3).unwrap();
        assert_eq!(res.sigma2, 2.0);
        assert!(res.bound <= res.sigma2);
        // The unit-constant display is far from its limit here, and the
        // nuclear-norm condition fails.
        assert!(res.violations.iter().any(|v| v.starts_with("cond_H:")));
        assert!(matches!(van_trees_bound(&m, 1, &e(2, 1), 1e8, 1e3), Err(Error::Admissibility(_))));
        let exact = exact_van_trees(&m, 1, &e(2, 1), 1e8, 1e3).unwrap();
        assert!(exact <= res.sigma2 && exact > 0.98 * res.sigma2);
    }

    #[test]
    fn bound_approaches_limit() {
        let m = diag_model(&[2.0, 1.0]);
        let res = van_trees_bound(&m, 1, &e(2, 1), 1e16, 1e3).unwrap();
        assert!(res.bound / res.sigma2 > 0.99 && res.bound <= res.sigma2);
    }

    #[test]
    fn bound_is_monotone_in_n() {
        let m = diag_model(&[2.0, 1.0]);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..12 {
            let n = 1e6 * 10f64.powf(k as f64 * 0.5);
            let res = van_trees_bound(&m, 1, &e(2, 1), n, 10.0).unwrap();
            assert!(res.bound >= prev - 1e-12);
            assert!(res.bound <= res.sigma2 + 1e-8);
            prev = res.bound;
        }
    }

    #[test]
    fn g_derivative_examples() {
        let m = diag_model(&[3.0, 1.0, 0.5]);
        let u = gaussian_vector(3, 8);
        let (a, b) = g_derivative_check(&m, 1, &u, &SymMatrix::zeros(3), 100.0, 0.2).unwrap();
        assert_eq!(a, 0.0);
        assert!(b.abs() < 1e-12);

        let h = b_matrix(&m.dec, 1, &u).unwrap();
        let (a, b) = g_derivative_check(&m, 1, &u, &h, 100.0, 0.2).unwrap();
        assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");

        // u equal to theta_t at the evaluation point.
        let st = SymMatrix::symmetrize(m.sigma.matrix() + h.matrix() * 0.02);
        let theta_t = decompose_default(&st).unwrap().eigenvector(0);
        let (a, b) = g_derivative_check(&m, 1, &theta_t, &h, 100.0, 0.2).unwrap();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-6);
    }

    #[test]
    fn class_bound_tends_to_one() {
        assert!(class_bound(2.0, 1.0, 1.0, 1e30, 1e5) > 0.999);
        assert!(class_bound(2.0, 1.0, 1.0, 1e4, 10.0) < 1.0);
    }

    proptest! {
        #[test]
        fn b_identities(seed in 0u64..300, r in 1usize..=3) {
            let mut vals: Vec<f64> = gaussian_vector(4, seed).iter().map(|x| x.abs() + 0.1).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            let model = make_model(rotated_diagonal(&vals, seed + 1)).unwrap();
            prop_assume!(model.dec.num_groups() == 4);
            let u = gaussian_vector(4, seed + 2);
            let b = b_matrix(&model.dec, r, &u).unwrap();
            let sigma2 = variance_true(&model.dec, r, &u).unwrap();
            let w = whitened_norm_sq(&model.dec, &b).unwrap();
            prop_assert!((2.0 * w - sigma2).abs() <= 1e-8 * sigma2.max(1e-300));

            let (g_r, _) = spectral_gaps(&model.dec, r).unwrap();
            let s = model.dec.norm();
            let un = u.norm();
            let op = schatten_norm(&b, SchattenP::Inf).unwrap();
            let hs = schatten_norm(&b, SchattenP::Two).unwrap();
            let nuc = schatten_norm(&b, SchattenP::One).unwrap();
            let slack = 1.0 + 1e-10;
            prop_assert!(op <= hs * slack);
            prop_assert!(hs <= s * s / g_r * un / 2f64.sqrt() * slack);
            prop_assert!(nuc <= s * s / g_r * un * slack);
            let sib = inverse_times(&model.dec, &b).norm();
            prop_assert!(sib <= s / g_r * un / 2f64.sqrt() * slack);

            let sv = nalgebra::SymmetricEigen::new(b.matrix().clone()).eigenvalues;
            let mut mags: Vec<f64> = sv.iter().map(|x| x.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            prop_assert!(mags[2] <= 1e-10 * mags[0].max(1e-300));
        }

        #[test]
        fn fisher_scaling(seed in 0u64..200, k in 0.1f64..5.0) {
            let s = rotated_diagonal(&[3.0, 1.0, 0.4], seed);
            let h = random_symmetric(3, 1.0, seed + 1);
            let f = fisher_info(&s, &h).unwrap();
            prop_assert!(f >= 0.0);
            let f2 = fisher_info(&s, &h.scale(k)).unwrap();
            prop_assert!((f2 - k * k * f).abs() <= 1e-10 * f2.max(1e-300));
        }

        #[test]
        fn g_derivative_agrees(seed in 0u64..100, t in -1.0f64..1.0) {
            let model = make_model(rotated_diagonal(&[3.0, 1.5, 0.5], seed)).unwrap();
            let u = gaussian_vector(3, seed + 3);
            let h = b_matrix(&model.dec, 1, &u).unwrap();
            let (a, b) = g_derivative_check(&model, 1, &u, &h, 400.0, t).unwrap();
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
        }
    }
}
