//! Linearization of the forward map, misfit gradients and the nonlinearity
//! diagnostics: linearization-error scans, cross terms and Jacobian spectra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::adjoint::{
    backprop, extended_adjoint_lowrank, extended_adjoint_slicewise, AdjointRoute, RieszMap,
};
use crate::error::{invalid, Error, Result};
use crate::forward::{residual_of, solve_many, Evaluation, ForwardMode, ForwardProblem};
use crate::grid::Field;
use crate::param::ParamVector;
use crate::stochastic::{
    cross_covariance, hermitian_factors, mixed_covariance, sample_rng, solve_columns, CovKernel,
};

/// `φ_j = −D(θ)⁻¹ B(u_j) h`, reusing the factorization of `eval`.
pub fn linearized_states(problem: &ForwardProblem, eval: &Evaluation, h: &ParamVector) -> Result<Vec<Field>> {
    let states = eval.states.as_ref().ok_or_else(|| invalid("linearized states need ensemble states"))?;
    let model = problem.model();
    let rhs = states
        .iter()
        .map(|u| Ok(model.apply_b(&eval.theta, u, h)?.scaled(Complex64::new(-1.0, 0.0))))
        .collect::<Result<Vec<_>>>()?;
    solve_many(&eval.op, &rhs, problem.executor())
}

/// `A + Aᴴ`, exactly Hermitian.
fn hermitian_sum(a: &CovKernel) -> CovKernel {
    let n = a.values().nrows();
    let v = a.values();
    let out = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(2.0 * v[(i, i)].re, 0.0)
        } else if i < j {
            v[(i, j)] + v[(j, i)].conj()
        } else {
            (v[(j, i)] + v[(i, j)].conj()).conj()
        }
    });
    CovKernel::new(*a.grid(), out, true).expect("same grid")
}

/// `F'(θ)h`. Ensemble mode: `(1/J) Σ u_j φ_jᴴ + φ_j u_jᴴ` (`J` solves).
/// Pushforward mode: `A + Aᴴ` with `A(·,x') = −D⁻¹ B(C(·,x'))h` (`n_total` solves).
pub fn jacobian_apply(problem: &ForwardProblem, eval: &Evaluation, h: &ParamVector) -> Result<CovKernel> {
    let model = problem.model();
    model.check_admissible(&eval.theta)?;
    let a = match problem.mode() {
        ForwardMode::Ensemble => {
            let phi = linearized_states(problem, eval, h)?;
            mixed_covariance(&phi, eval.states.as_ref().expect("ensemble states"))?
        }
        ForwardMode::Pushforward => {
            let grid = *problem.grid();
            let n = grid.n_total();
            let mut m = DMatrix::zeros(n, n);
            for col in 0..n {
                let c = eval.cov.column_field(col);
                let b = model.apply_b(&eval.theta, &c, h)?;
                for (row, v) in b.values().iter().enumerate() {
                    m[(row, col)] = -v;
                }
            }
            solve_columns(&eval.op, &mut m, problem.executor())?;
            CovKernel::new(grid, m, false)?
        }
    };
    Ok(hermitian_sum(&a))
}

/// `F'(θ)^* y` for Hermitian `y` through the chosen extended-adjoint route.
/// Returns the direction and the adjoint solves spent.
pub fn backprop_at(
    problem: &ForwardProblem,
    eval: &Evaluation,
    y: &CovKernel,
    riesz: &RieszMap,
    route: AdjointRoute,
) -> Result<(ParamVector, u64)> {
    let adj = eval.adjoint_operator();
    let psi = match route {
        AdjointRoute::Slicewise => extended_adjoint_slicewise(&adj, y, problem.executor())?,
        AdjointRoute::Lowrank => extended_adjoint_lowrank(&adj, &hermitian_factors(y)?, problem.executor())?,
    };
    let g = backprop(problem.model(), &eval.theta, &eval.cov, &psi, riesz, problem.executor())?;
    Ok((g, psi.solves_used))
}

#[derive(Debug)]
pub struct GradientEvaluation {
    pub eval: Evaluation,
    pub residual: CovKernel,
    pub residual_norm: f64,
    /// `½‖F(θ) − y‖²_𝒴`
    pub misfit: f64,
    /// `F'(θ)^*(F(θ) − y)`
    pub gradient: ParamVector,
    pub adjoint_solves: u64,
}

pub fn gradient_of_misfit(
    problem: &ForwardProblem,
    theta: &ParamVector,
    data: &CovKernel,
    riesz: &RieszMap,
    route: AdjointRoute,
) -> Result<GradientEvaluation> {
    let eval = problem.evaluate(theta)?;
    let (residual, residual_norm) = residual_of(&eval.cov, data)?;
    let (gradient, adjoint_solves) = backprop_at(problem, &eval, &residual, riesz, route)?;
    Ok(GradientEvaluation {
        eval,
        residual,
        residual_norm,
        misfit: 0.5 * residual_norm * residual_norm,
        gradient,
        adjoint_solves,
    })
}

pub fn misfit(problem: &ForwardProblem, theta: &ParamVector, data: &CovKernel) -> Result<f64> {
    let (_, r) = problem.residual(theta, data)?;
    Ok(0.5 * r * r)
}

/// `‖F(θ) − F(θ̃) − F'(θ)(θ − θ̃)‖_𝒴`
pub fn linearization_error(problem: &ForwardProblem, theta: &ParamVector, theta_ref: &ParamVector) -> Result<f64> {
    let f_ref = problem.forward(theta_ref)?;
    let eval = problem.evaluate(theta)?;
    linearization_error_at(problem, &eval, &f_ref, theta_ref)
}

fn linearization_error_at(
    problem: &ForwardProblem,
    eval: &Evaluation,
    f_ref: &CovKernel,
    theta_ref: &ParamVector,
) -> Result<f64> {
    let dtheta = eval.theta.plus(-1.0, theta_ref)?;
    let lin = jacobian_apply(problem, eval, &dtheta)?;
    Ok(eval.cov.sub(f_ref)?.sub(&lin)?.norm())
}

/// Mixed covariance `cov(v, u)` of the states at `theta_v` and `theta_u`.
pub fn state_cross_covariance(
    problem: &ForwardProblem,
    theta_v: &ParamVector,
    theta_u: &ParamVector,
) -> Result<CovKernel> {
    let dv = problem.operator(theta_v)?;
    let du = problem.operator(theta_u)?;
    match problem.mode() {
        ForwardMode::Ensemble => mixed_covariance(&problem.solve_states(&dv)?, &problem.solve_states(&du)?),
        ForwardMode::Pushforward => cross_covariance(&dv, &du, problem.source_kernel(), problem.executor()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TccScanReport {
    /// Perturbation sizes, strictly decreasing.
    pub t: Vec<f64>,
    pub e_lin: Vec<f64>,
    /// `‖F(θ̃ + t h) − F(θ̃)‖_𝒴`
    pub image_diff: Vec<f64>,
    /// `‖cov(v − u, u)‖_𝒴` with `u = S(θ̃)`, `v = S(θ̃ + t h)`.
    pub cross_term: Vec<f64>,
    /// `E_lin / (‖Δθ‖·‖ΔF‖ + ‖Δθ‖²)`
    pub bound_ratio: Vec<f64>,
    pub e_lin_slope: f64,
    pub image_diff_slope: f64,
    pub cross_term_slope: f64,
}

impl TccScanReport {
    /// `max / min` of the bound ratios.
    pub fn bound_ratio_spread(&self) -> f64 {
        let max = self.bound_ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.bound_ratio.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (libm::log(*a), libm::log(*b)))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Geometric sequence from `start` down to `end` with `count` points.
pub fn geometric_steps(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return alloc::vec![start];
    }
    let ratio = libm::pow(end / start, 1.0 / (count - 1) as f64);
    (0..count).map(|i| start * libm::pow(ratio, i as f64)).collect()
}

/// Scans `θ = θ̃ + t h` over `t_list`. Sizes whose perturbation leaves the
/// admissible set are dropped with a warning.
pub fn tcc_scan(
    problem: &ForwardProblem,
    theta_ref: &ParamVector,
    h: &ParamVector,
    t_list: &[f64],
) -> Result<TccScanReport> {
    let model = problem.model();
    model.check_admissible(theta_ref)?;
    let mut ts: Vec<f64> = t_list.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let f_ref = problem.forward(theta_ref)?;
    let h_norm = h.norm();
    let mut report = TccScanReport {
        t: Vec::new(),
        e_lin: Vec::new(),
        image_diff: Vec::new(),
        cross_term: Vec::new(),
        bound_ratio: Vec::new(),
        e_lin_slope: f64::NAN,
        image_diff_slope: f64::NAN,
        cross_term_slope: f64::NAN,
    };
    for &t in &ts {
        let theta = theta_ref.plus(t, h)?;
        if let Err(e) = model.check_admissible(&theta) {
            log::warn!("dropping t = {t} from the scan: {e}");
            continue;
        }
        let eval = problem.evaluate(&theta)?;
        let e_lin = linearization_error_at(problem, &eval, &f_ref, theta_ref)?;
        let image = eval.cov.sub(&f_ref)?.norm();
        let cross = state_cross_covariance(problem, &theta, theta_ref)?.sub(&f_ref)?.norm();
        let dn = t * h_norm;
        report.t.push(t);
        report.e_lin.push(e_lin);
        report.image_diff.push(image);
        report.cross_term.push(cross);
        report.bound_ratio.push(e_lin / (dn * image + dn * dn));
    }
    if report.t.len() < 2 {
        return Err(Error::Admissibility("too few admissible perturbation sizes in the scan".into()));
    }
    report.e_lin_slope = log_log_slope(&report.t, &report.e_lin);
    report.image_diff_slope = log_log_slope(&report.t, &report.image_diff);
    report.cross_term_slope = log_log_slope(&report.t, &report.cross_term);
    Ok(report)
}

/// Leading singular values (descending) of the central finite-difference
/// Jacobian of `F` at `theta`, restricted to the parameter `blocks`, with an
/// `L²`-orthonormal nodal basis on the parameter side.
pub fn fd_jacobian_singular_values(
    problem: &ForwardProblem,
    theta: &ParamVector,
    blocks: &[usize],
    count: usize,
) -> Result<Vec<f64>> {
    let grid = *problem.grid();
    let n = grid.n_total();
    let w = grid.weight();
    let step = libm::cbrt(f64::EPSILON) * theta.max_abs().max(1.0);
    let basis_scale = 1.0 / libm::sqrt(w);
    let p = blocks.len() * n;
    let mut jac = DMatrix::<f64>::zeros(2 * n * n, p);
    let mut col = 0;
    for &b in blocks {
        if b >= theta.n_blocks() {
            return Err(invalid("block index out of range"));
        }
        for i in 0..n {
            let mut e = ParamVector::zeros(grid, theta.n_blocks());
            e.block_mut(b)[i] = step;
            let fp = problem.forward(&theta.plus(1.0, &e)?)?;
            let fm = problem.forward(&theta.plus(-1.0, &e)?)?;
            // 𝒴 weight h^dim per entry so that Euclidean norms are 𝒴 norms
            let s = basis_scale * w / (2.0 * step);
            for (k, (a, c)) in fp.values().iter().zip(fm.values().iter()).enumerate() {
                let d = (a - c) * s;
                jac[(2 * k, col)] = d.re;
                jac[(2 * k + 1, col)] = d.im;
            }
            col += 1;
        }
    }
    let gram = jac.tr_mul(&jac);
    let mut sv: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|v| libm::sqrt(v.max(0.0))).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(count);
    Ok(sv)
}

/// Ratios `‖S(θ)f − S(θ̃)f‖ / ‖θ − θ̃‖` for random admissible `θ̃` in a ball of
/// the given radius around `theta`, using the first stored source.
pub fn lipschitz_ratios(
    problem: &ForwardProblem,
    theta: &ParamVector,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let f = problem
        .sources()
        .and_then(|s| s.samples().first())
        .ok_or_else(|| invalid("Lipschitz diagnostic needs a source sample"))?;
    let model = problem.model();
    let u = problem.operator(theta)?.solve(f)?;
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let mut rng = sample_rng(seed, k as u64);
        let mut d = ParamVector::zeros(*theta.grid(), theta.n_blocks());
        for v in d.data_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let d = d.scaled(radius / d.norm());
        let other = model.project(&theta.plus(1.0, &d)?);
        let dist = other.plus(-1.0, theta)?.norm();
        if dist == 0.0 {
            continue;
        }
        let v = problem.operator(&other)?.solve(f)?;
        let diff = Field::new(*theta.grid(), v.values().iter().zip(u.values()).map(|(a, b)| a - b).collect())?;
        out.push(diff.norm() / dist);
    }
    if let Some(max) = out.iter().copied().reduce(f64::max) {
        log::info!("Lipschitz ratio max {max:.3e} over {} samples", out.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{Admissibility, BiHelmholtzParameterization, Model};
    use crate::stochastic::{sample_covariance, sample_ensemble, SourceCovariance};
    use crate::test_util::{random_field, random_real, rng};

    fn problem(mode: ForwardMode) -> (ForwardProblem, ParamVector) {
        let grid = Grid::uniform(2, 6, 1.0).unwrap();
        let model = Model::abc(grid, Admissibility::with_defaults(0.5, &grid));
        let mut theta = model.zeros();
        for (i, v) in theta.block_mut(0).iter_mut().enumerate() {
            let x = grid.coords(i);
            *v = 1.0 + 0.2 * libm::sin(3.0 * x[0]) * x[1];
        }
        theta.block_mut(1).fill(0.05);
        theta.block_mut(3).fill(0.2);
        let cov = SourceCovariance::white(grid, 1.0).unwrap();
        let ens = sample_ensemble(&cov, 3, 11).unwrap();
        let p = match mode {
            ForwardMode::Ensemble => ForwardProblem::ensemble(model, cov, ens),
            ForwardMode::Pushforward => ForwardProblem::pushforward_of_ensemble(model, cov, ens),
        };
        (p.unwrap(), theta)
    }

    fn smooth_direction(p: &ForwardProblem) -> ParamVector {
        let grid = *p.grid();
        let mut h = p.model().zeros();
        for b in 0..h.n_blocks() {
            for (i, v) in h.block_mut(b).iter_mut().enumerate() {
                let x = grid.coords(i);
                *v = 0.1 * libm::cos(2.0 * x[0] + b as f64) * libm::sin(3.0 * x[1]);
            }
        }
        h
    }

    #[test]
    fn linearized_states_are_linear_and_vanish_for_zero_direction() {
        let (p, theta) = problem(ForwardMode::Ensemble);
        let eval = p.evaluate(&theta).unwrap();
        let h = smooth_direction(&p);
        let zero = linearized_states(&p, &eval, &p.model().zeros()).unwrap();
        assert!(zero.iter().all(|f| f.norm() == 0.0));
        let a = linearized_states(&p, &eval, &h).unwrap();
        let b = linearized_states(&p, &eval, &h.scaled(2.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.values().iter().zip(y.values()) {
                assert!((u * 2.0 - v).norm() < 1e-12 * (1.0 + v.norm()));
            }
        }
    }

    #[test]
    fn state_taylor_remainder_is_quadratic() {
        let (p, theta) = problem(ForwardMode::Ensemble);
        let eval = p.evaluate(&theta).unwrap();
        let h = smooth_direction(&p);
        let phi = linearized_states(&p, &eval, &h).unwrap();
        let u = eval.states.as_ref().unwrap();
        let ts = geometric_steps(1e-1, 1e-3, 5);
        let mut errs = Vec::new();
        for &t in &ts {
            let v = p.states(&theta.plus(t, &h).unwrap()).unwrap();
            let mut sq = 0.0;
            for ((vj, uj), pj) in v.iter().zip(u).zip(&phi) {
                for ((a, b), c) in vj.values().iter().zip(uj.values()).zip(pj.values()) {
                    sq += (a - b - c * t).norm_sqr();
                }
            }
            errs.push(libm::sqrt(sq));
        }
        let slope = log_log_slope(&ts, &errs);
        assert!((1.9..=2.1).contains(&slope), "{slope}");
    }

    #[test]
    fn jacobian_is_hermitian_and_matches_finite_differences() {
        for mode in [ForwardMode::Ensemble, ForwardMode::Pushforward] {
            let (p, theta) = problem(mode);
            let eval = p.evaluate(&theta).unwrap();
            let h = smooth_direction(&p);
            let zero = jacobian_apply(&p, &eval, &p.model().zeros()).unwrap();
            assert_eq!(zero.max_abs(), 0.0);
            let jh = jacobian_apply(&p, &eval, &h).unwrap();
            assert!(jh.hermitian_flag() && jh.hermitian_defect() == 0.0);
            let t = 1e-4 * theta.norm() / h.norm();
            let fp = p.forward(&theta.plus(t, &h).unwrap()).unwrap();
            let fm = p.forward(&theta.plus(-t, &h).unwrap()).unwrap();
            let fd = fp.sub(&fm).unwrap().scaled(0.5 / t);
            assert!(fd.relative_difference(&jh).unwrap() < 1e-5, "{mode:?}");
        }
    }

    #[test]
    fn ensemble_and_pushforward_jacobians_agree() {
        let (pe, theta) = problem(ForwardMode::Ensemble);
        let (pp, _) = problem(ForwardMode::Pushforward);
        let h = smooth_direction(&pe);
        let a = jacobian_apply(&pe, &pe.evaluate(&theta).unwrap(), &h).unwrap();
        let b = jacobian_apply(&pp, &pp.evaluate(&theta).unwrap(), &h).unwrap();
        assert!(b.relative_difference(&a).unwrap() < 1e-9);
    }

    #[test]
    fn adjoint_identity_for_both_routes_and_riesz_choices() {
        use crate::adjoint::RieszKind;
        let (p, theta) = problem(ForwardMode::Ensemble);
        let grid = *p.grid();
        let eval = p.evaluate(&theta).unwrap();
        let mut r = rng(3);
        for kind in [RieszKind::Identity, RieszKind::InvLaplacian, RieszKind::InvBilaplacian] {
            let riesz = RieszMap::uniform(grid, 4, kind);
            for route in [AdjointRoute::Slicewise, AdjointRoute::Lowrank] {
                let mut h = p.model().zeros();
                for b in 0..4 {
                    h.block_mut(b).copy_from_slice(random_real(&grid, &mut r).values());
                }
                let a: Vec<Field> = (0..2).map(|_| random_field(&grid, &mut r)).collect();
                let y = sample_covariance(&a).unwrap().sub(&sample_covariance(&a[..1]).unwrap().scaled(1.5)).unwrap();
                let lhs = jacobian_apply(&p, &eval, &h).unwrap().inner_product(&y).unwrap().re;
                let (g, _) = backprop_at(&p, &eval, &y, &riesz, route).unwrap();
                let rhs = riesz.inner_product(&h, &g).unwrap();
                let scale = riesz.norm(&h).unwrap() * y.norm();
                assert!((lhs - rhs).abs() <= 1e-8 * scale, "{kind:?} {route:?}: {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn gradient_matches_misfit_finite_differences() {
        let (p, theta) = problem(ForwardMode::Ensemble);
        let riesz = RieszMap::identity(*p.grid(), 4);
        let data = p.forward(&theta.plus(0.5, &smooth_direction(&p)).unwrap()).unwrap();
        let ge = gradient_of_misfit(&p, &theta, &data, &riesz, AdjointRoute::Slicewise).unwrap();
        let h = smooth_direction(&p);
        let t = libm::cbrt(f64::EPSILON) * theta.norm() / h.norm();
        let fd = (misfit(&p, &theta.plus(t, &h).unwrap(), &data).unwrap()
            - misfit(&p, &theta.plus(-t, &h).unwrap(), &data).unwrap())
            / (2.0 * t);
        let dir = riesz.inner_product(&h, &ge.gradient).unwrap();
        assert!((fd - dir).abs() <= 1e-5 * dir.abs(), "{fd} {dir}");
        // zero residual → zero gradient
        let same = p.forward(&theta).unwrap();
        let g0 = gradient_of_misfit(&p, &theta, &same, &riesz, AdjointRoute::Slicewise).unwrap();
        assert_eq!(g0.gradient.max_abs(), 0.0);
    }

    #[test]
    fn bihelmholtz_gradient_and_chain_rule() {
        let grid = Grid::uniform(2, 6, 1.0).unwrap();
        let cov = SourceCovariance::white(grid, 1.0).unwrap();
        let ens = sample_ensemble(&cov, 3, 2).unwrap();
        let kf = |x: &[f64]| 2.0 + libm::sin(2.0 * x[0]) * x[1];
        let mut k = ParamVector::zeros(grid, 1);
        for (i, v) in k.data_mut().iter_mut().enumerate() {
            *v = kf(&grid.coords(i));
        }
        let ksq = ParamVector::from_data(grid, k.data().iter().map(|v| v * v).collect()).unwrap();
        let pk = ForwardProblem::ensemble(Model::bihelmholtz(grid, BiHelmholtzParameterization::Wavenumber), cov.clone(), ens.clone()).unwrap();
        let ps = ForwardProblem::ensemble(Model::bihelmholtz(grid, BiHelmholtzParameterization::Squared), cov, ens).unwrap();
        let riesz = RieszMap::identity(grid, 1);
        let data = pk.forward(&k.scaled(1.2)).unwrap();
        let gk = gradient_of_misfit(&pk, &k, &data, &riesz, AdjointRoute::Slicewise).unwrap();
        let gs = gradient_of_misfit(&ps, &ksq, &data, &riesz, AdjointRoute::Slicewise).unwrap();
        for ((a, b), kv) in gk.gradient.data().iter().zip(gs.gradient.data()).zip(k.data()) {
            assert!((a - 2.0 * kv * b).abs() <= 1e-10 * a.abs().max(1e-300) + 1e-14 * gk.gradient.max_abs());
        }
        let h = ParamVector::from_data(grid, (0..36).map(|i| libm::cos(i as f64)).collect()).unwrap();
        let t = libm::cbrt(f64::EPSILON) * k.norm() / h.norm();
        let fd = (misfit(&pk, &k.plus(t, &h).unwrap(), &data).unwrap()
            - misfit(&pk, &k.plus(-t, &h).unwrap(), &data).unwrap())
            / (2.0 * t);
        let dir = h.dot(&gk.gradient).unwrap();
        assert!((fd - dir).abs() <= 1e-5 * dir.abs(), "{fd} {dir}");
        // k = 0 gives a zero gradient
        let g0 = gradient_of_misfit(&pk, &pk.model().zeros(), &data, &riesz, AdjointRoute::Slicewise).unwrap();
        assert_eq!(g0.gradient.max_abs(), 0.0);
    }

    #[test]
    fn linearization_error_properties() {
        let (p, theta) = problem(ForwardMode::Ensemble);
        assert_eq!(linearization_error(&p, &theta, &theta).unwrap(), 0.0);
        let mut h = p.model().zeros();
        h.block_mut(3).copy_from_slice(smooth_direction(&p).block(3));
        let t = 1e-3;
        let plus = linearization_error(&p, &theta.plus(t, &h).unwrap(), &theta).unwrap();
        let minus = linearization_error(&p, &theta.plus(-t, &h).unwrap(), &theta).unwrap();
        assert!(plus > 0.0);
        assert!((0.8..=1.25).contains(&(plus / minus)), "{}", plus / minus);
    }

    #[test]
    fn tcc_scan_slopes_and_shrinking() {
        let (p, theta) = problem(ForwardMode::Ensemble);
        let mut h = p.model().zeros();
        h.block_mut(3).copy_from_slice(smooth_direction(&p).block(3));
        let mut ts = geometric_steps(1e-1, 1e-3, 5);
        ts.push(50.0); // leaves the admissible set and is dropped
        let rep = tcc_scan(&p, &theta, &h, &ts).unwrap();
        assert_eq!(rep.t.len(), 5);
        assert!(rep.t.windows(2).all(|w| w[0] > w[1]));
        assert!((1.9..=2.1).contains(&rep.e_lin_slope), "{}", rep.e_lin_slope);
        assert!((0.9..=1.1).contains(&rep.image_diff_slope));
        assert!((0.9..=1.1).contains(&rep.cross_term_slope));
        assert!(rep.bound_ratio_spread() < 10.0);
    }

    #[test]
    fn slope_helper() {
        let x = [1.0, 0.1, 0.01];
        let y = [3.0, 0.03, 0.0003];
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
        let g = geometric_steps(1e-1, 1e-3, 3);
        assert!((g[1] - 1e-2).abs() < 1e-15 && (g[2] - 1e-3).abs() < 1e-16);
    }

    #[test]
    fn lipschitz_ratios_are_finite() {
        let (p, theta) = problem(ForwardMode::Ensemble);
        let r = lipschitz_ratios(&p, &theta, 0.05, 4, 1).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}
