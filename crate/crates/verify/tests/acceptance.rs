//! Acceptance criteria 1–10. Each test prints one `criterion N: PASS|FAIL`
//! line to stdout (visible even when output capture is on) and then asserts.

use std::time::Instant;

use mdfa::asymptotics::{normality_study, NormalityConfig};
use mdfa::estimator::{empirical_loss, update_scores};
use mdfa::model::{center_columns, covariance, phi_to_theta};
use mdfa::population::{population_loss, uniform_gap};
use mdfa::report::{render_report, Metric};
use mdfa::simulation::{
    gen_dataset, gen_true_params, records_to_csv, run_replications, summarize, summary_to_csv,
    Estimator, SettingId, SettingSpec, SimulationConfig,
};
use mdfa::{
    concentrated_loss, fit_mdfa, fit_mdfa_cov, fit_ols, Denominator, FactorParams, FitOptions,
    Init, Mat, Vector,
};
use mdfa_verify::*;
use rand::Rng;

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}

fn factor_data(rng: &mut impl Rng, params: &FactorParams, n: usize) -> Mat {
    let f = gaussian(rng, n, params.m());
    let e = gaussian(rng, n, params.p());
    f * params.lambda.transpose() + e * Mat::from_diagonal(&params.psi)
}

fn pick_denominator(rng: &mut impl Rng) -> Denominator {
    if rng.random_bool(0.5) {
        Denominator::N
    } else {
        Denominator::NMinus1
    }
}

fn sign(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) { 1.0 } else { -1.0 }
}

fn is_nonincreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

#[test]
fn c01_score_step_matches_closed_form_loss() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut errors = 0;
    for i in 0..500u64 {
        let mut rng = rng(&[1, i]);
        let p = rng.random_range(3..=6);
        let m = rng.random_range(1..=2);
        let n = rng.random_range(20..=60);
        let truth = FactorParams::random(&mut rng, p, m, 0.9, (0.4, 1.0));
        let x = center_columns(&factor_data(&mut rng, &truth, n)).unwrap();
        let phi = FactorParams::random(&mut rng, p, m, 1.5, (0.2, 1.5));
        let den = pick_denominator(&mut rng);
        let outcome = update_scores(&x, &phi, den).and_then(|z| {
            let direct = empirical_loss(&x, &phi, &z);
            Ok((direct - concentrated_loss(&phi, &covariance(&x, den))?).abs())
        });
        match outcome {
            Ok(gap) => worst = worst.max(gap),
            Err(_) => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && errors == 0 && secs < 60.0;
    verdict(1, pass, &format!("max |L_n(Φ,Ẑ) − closed form| = {worst:.2e} over 500 instances, {errors} errors, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn c02_population_loss_vanishes_only_at_the_truth() {
    let _g = serial();
    let start = Instant::now();
    let mut worst_at_truth = 0.0f64;
    let mut errors = 0;
    for i in 0..100u64 {
        let mut rng = rng(&[2, 0, i]);
        let p = rng.random_range(3..=8);
        let m = rng.random_range(1..p.min(4));
        let star = FactorParams::random(&mut rng, p, m, 0.9, (0.3, 1.0));
        match population_loss(&star, &star.implied_covariance()) {
            Ok(l) => worst_at_truth = worst_at_truth.max(l.value),
            Err(_) => errors += 1,
        }
    }
    let mut smallest_away = f64::INFINITY;
    let mut i = 0u64;
    let mut accepted = 0;
    while accepted < 500 {
        let mut rng = rng(&[2, 1, i]);
        i += 1;
        let p = rng.random_range(3..=8);
        let m = rng.random_range(1..p.min(4));
        let star = FactorParams::random(&mut rng, p, m, 0.9, (0.3, 1.0));
        let sigma = star.implied_covariance();
        // half of the candidates are local perturbations of the truth
        let phi = if rng.random_bool(0.5) {
            FactorParams::random(&mut rng, p, m, 1.0, (0.2, 1.2))
        } else {
            let scale = rng.random_range(0.02..0.3);
            let mut phi = star.clone();
            phi.lambda += gaussian(&mut rng, p, m) * scale;
            phi.psi += gaussian(&mut rng, p, 1).column(0) * scale;
            phi
        };
        if (phi.implied_covariance() - &sigma).norm() <= 0.1 {
            continue;
        }
        accepted += 1;
        match population_loss(&phi, &sigma) {
            Ok(l) => smallest_away = smallest_away.min(l.value),
            Err(_) => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_at_truth < 1e-10 && smallest_away > 1e-4 && errors == 0 && secs < 60.0;
    verdict(2, pass, &format!(
        "max L(Φ*) = {worst_at_truth:.2e} (100 truths); min L(Φ) = {smallest_away:.2e} over 500 Φ with ‖ΦΦᵀ−Σ*‖_F > 0.1; {errors} errors, {secs:.1}s"
    ));
    assert!(pass);
}

/// Constants `(c_Λ, c_L, c_U)` and a point of the parameter space. A quarter
/// of the coordinates sit on the boundary so the bounds are probed where
/// they are tightest.
struct SpaceDraw {
    c_lambda: f64,
    c_l: f64,
    c_u: f64,
}

impl SpaceDraw {
    fn new(rng: &mut impl Rng) -> Self {
        let c_l = rng.random_range(0.2..0.6);
        SpaceDraw {
            c_lambda: rng.random_range(0.5..1.5),
            c_l,
            c_u: rng.random_range(c_l + 0.2..1.6),
        }
    }

    fn phi(&self, rng: &mut impl Rng, p: usize, m: usize) -> Mat {
        let mut phi = Mat::zeros(p, m + p);
        for j in 0..p {
            for k in 0..m {
                phi[(j, k)] = if rng.random_bool(0.25) {
                    sign(rng) * self.c_lambda
                } else {
                    rng.random_range(-self.c_lambda..=self.c_lambda)
                };
            }
            let magnitude = match rng.random_range(0..8) {
                0 => self.c_l,
                1 => self.c_u,
                _ => rng.random_range(self.c_l..=self.c_u),
            };
            phi[(j, m + j)] = sign(rng) * magnitude;
        }
        phi
    }

    fn radius2(&self) -> f64 {
        self.c_lambda.powi(2) + self.c_u.powi(2)
    }
}

#[derive(Default)]
struct Tally {
    draws: usize,
    violations: usize,
    max_ratio: f64,
}

impl Tally {
    /// Records `lhs ≤ rhs`; the ratio is tracked for the report.
    fn check(&mut self, lhs: f64, rhs: f64) {
        self.draws += 1;
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        self.max_ratio = self.max_ratio.max(ratio);
        if !(lhs <= rhs * (1.0 + 1e-12) + 1e-14) {
            self.violations += 1;
        }
    }

    fn ok(&self) -> bool {
        self.draws >= 1000 && self.violations == 0
    }

    fn line(&self, name: &str) -> String {
        format!(
            "    {name:<28} {} ({} of {} draws violated, max lhs/rhs = {:.3e})",
            if self.ok() { "holds" } else { "VIOLATED" },
            self.violations,
            self.draws,
            self.max_ratio
        )
    }
}

#[test]
fn c03_appendix_inequalities() {
    let _g = serial();
    let start = Instant::now();
    let mut holder = Tally::default();
    let mut holder_dim = Tally::default();
    let mut davis_kahan = Tally::default();
    let mut a = Tally::default();
    let mut b = Tally::default();
    let mut b_rowwise = Tally::default();
    let mut c = Tally::default();
    let mut c_identity = 0.0f64;
    let mut d = Tally::default();
    let mut e_first = Tally::default();
    let mut e_second = Tally::default();
    let mut term_one = Tally::default();

    for i in 0..1000u64 {
        let mut rng = rng(&[3, 0, i]);
        let dim = rng.random_range(2..=8);
        let ra = rng.random_range(1..=dim);
        let rb = rng.random_range(1..=dim);
        let ga = gaussian(&mut rng, dim, ra);
        let gb = gaussian(&mut rng, dim, rb) * rng.random_range(0.1..3.0);
        let (ma, mb) = (&ga * ga.transpose(), &gb * gb.transpose());
        let lhs = (sqrtm(&ma) - sqrtm(&mb)).norm();
        let gap = (&ma - &mb).norm().sqrt();
        holder.check(lhs, gap);
        holder_dim.check(lhs, (dim as f64).powf(0.25) * gap);
    }

    for i in 0..1000u64 {
        let mut rng = rng(&[3, 1, i]);
        let space = SpaceDraw::new(&mut rng);
        let p = rng.random_range(3..=8);
        let m = rng.random_range(1..=p.min(4) - 1);
        let phi = space.phi(&mut rng, p, m);
        let phi_star = space.phi(&mut rng, p, m);
        let sigma = &phi_star * phi_star.transpose();
        // With Ŝ positive definite both leading eigenspaces equal range(Φᵀ), so
        // the projector bound is only exercised by rank-deficient Ŝ.
        let n = if rng.random_bool(0.3) { rng.random_range(2..=p) } else { rng.random_range(p + 2..=400) };
        let x = gaussian(&mut rng, n, m + p) * phi_star.transpose();
        let s = sample_cov(&x);
        let diff_norm = sym_norm2(&(&s - &sigma));
        let r2 = space.radius2();
        let cl = space.c_l;

        // (a) smallest eigenvalue of ΦΦᵀ
        let gram_eigs = eigh(&(&phi * phi.transpose())).0;
        a.check(cl * cl, gram_eigs[p - 1]);
        // (b) squared Frobenius norm
        let phi_f = phi.norm();
        b.check(phi_f * phi_f, p as f64 * r2);
        b_rowwise.check(phi_f * phi_f, p as f64 * (m as f64 * space.c_lambda.powi(2) + space.c_u.powi(2)));
        // (c) ‖Φ⁺‖²_F = Σ 1/λ_j(ΦΦᵀ) ≤ p/c_L²
        let pinv = wide_pinv(&phi);
        let inv_sum: f64 = gram_eigs.iter().map(|v| 1.0 / v).sum();
        c_identity = c_identity.max((pinv.norm_squared() - inv_sum).abs() / inv_sum);
        c.check(pinv.norm_squared(), p as f64 / (cl * cl));
        // (d) p-th eigenvalue of ΦᵀΣ*Φ
        let inner_pop = phi.transpose() * &sigma * &phi;
        d.check(cl.powi(4), eigh(&inner_pop).0[p - 1]);
        // (e) ‖Â‖_F through the sample projector
        let inner_hat = phi.transpose() * &s * &phi;
        let proj_hat = top_projector(&inner_hat, p);
        let a_hat = &phi * &proj_hat * &pinv;
        let middle = phi_f * sym_norm2(&proj_hat) * pinv.norm();
        e_first.check(a_hat.norm(), middle);
        e_second.check(middle, p as f64 * r2.sqrt() / cl);
        // projector perturbation with the explicit constant
        let proj_pop = top_projector(&inner_pop, p);
        let constant = 2.0 * 2f64.sqrt() * p as f64 * r2 / cl.powi(4);
        davis_kahan.check((&proj_hat - &proj_pop).norm(), constant * diff_norm);
        // first term of the uniform deviation
        let resid = Mat::identity(p, p) - &a_hat;
        let t1 = (resid.transpose() * (&s - &sigma) * &resid).trace().abs();
        term_one.check(t1, (1.0 + r2.sqrt() / cl).powi(2) * (p * p) as f64 * diff_norm);
    }
    let secs = start.elapsed().as_secs_f64();

    let checks = [
        (&holder, "Hölder sqrt (literal)"),
        (&davis_kahan, "projector perturbation"),
        (&a, "basic bound (a)"),
        (&b, "basic bound (b)"),
        (&c, "basic bound (c)"),
        (&d, "basic bound (d)"),
        (&e_first, "basic bound (e), first"),
        (&e_second, "basic bound (e), second"),
    ];
    let pass = checks.iter().all(|(t, _)| t.ok()) && c_identity < 1e-8 && secs < 120.0;
    let failed: Vec<&str> = checks.iter().filter(|(t, _)| !t.ok()).map(|(_, n)| *n).collect();
    verdict(3, pass, &format!(
        "{} inequality families × ≥1000 draws, {secs:.1}s{}",
        checks.len(),
        if failed.is_empty() { String::new() } else { format!("; violated: {}", failed.join(", ")) }
    ));
    for (t, name) in checks {
        emit(&t.line(name));
    }
    emit(&holder_dim.line("Hölder sqrt with d^(1/4)"));
    emit(&b_rowwise.line("(b) with m·c_Λ²"));
    emit(&term_one.line("projection-term deviation"));
    emit(&format!("    ‖Φ⁺‖²_F = Σ 1/λ_j identity: max rel. error {c_identity:.1e}"));
    assert!(pass);
}

#[test]
fn c04_alternation_traces_never_increase() {
    let _g = serial();
    let start = Instant::now();
    let mut bad = [0usize; 4];
    let mut errors = [0usize; 4];
    for i in 0..400u64 {
        let mut rng = rng(&[4, i]);
        let p = rng.random_range(4..=8);
        let m = rng.random_range(1..=2);
        let n = rng.random_range(30..=200);
        let truth = FactorParams::random(&mut rng, p, m, 0.9, (0.3, 1.0));
        let x = factor_data(&mut rng, &truth, n);
        let den = pick_denominator(&mut rng);
        let opts = FitOptions {
            max_iter: 500,
            denominator: den,
            ic5: rng.random_bool(0.5),
            init: if rng.random_bool(0.5) { Init::PcaBased } else { Init::Random(rng.random()) },
            ..FitOptions::default()
        };
        let s = covariance(&center_columns(&x).unwrap(), den);
        let sparse = FitOptions {
            sparsity_k: Some(rng.random_range(m..=p * m)),
            ..opts.clone()
        };
        let traces = [
            fit_mdfa(&x, m, &opts).map(|f| f.loss_trace),
            fit_mdfa_cov(&s, m, &opts).map(|f| f.loss_trace),
            fit_mdfa(&x, m, &sparse).map(|f| f.loss_trace),
            fit_ols(&s, m, &opts).map(|f| f.objective_trace),
        ];
        for (k, t) in traces.iter().enumerate() {
            match t {
                Ok(t) if !is_nonincreasing(t) => bad[k] += 1,
                Ok(_) => {}
                Err(_) => errors[k] += 1,
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.iter().chain(errors.iter()).all(|&c| c == 0) && secs < 120.0;
    verdict(4, pass, &format!(
        "increasing traces (data, covariance, sparse, OLS) = {bad:?}, errors = {errors:?} over 400 instances, {secs:.1}s"
    ));
    assert!(pass);
}

#[test]
fn c05_data_and_covariance_paths_agree() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut errors = 0;
    for i in 0..100u64 {
        let mut rng = rng(&[5, i]);
        let p = rng.random_range(4..=8);
        let m = rng.random_range(1..=2);
        let n = rng.random_range(50..=300);
        let truth = FactorParams::random(&mut rng, p, m, 0.9, (0.3, 1.0));
        let x = factor_data(&mut rng, &truth, n);
        let den = pick_denominator(&mut rng);
        let opts = FitOptions {
            max_iter: 300,
            tol: f64::MIN_POSITIVE,
            denominator: den,
            ic5: rng.random_bool(0.5),
            init: if rng.random_bool(0.5) { Init::PcaBased } else { Init::Random(rng.random()) },
            ..FitOptions::default()
        };
        let s = covariance(&center_columns(&x).unwrap(), den);
        match (fit_mdfa(&x, m, &opts), fit_mdfa_cov(&s, m, &opts)) {
            (Ok(a), Ok(b)) => worst = worst.max((a.params.phi() - b.params.phi()).norm()),
            _ => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-6 && errors == 0 && secs < 60.0;
    verdict(5, pass, &format!("max ‖Φ_data − Φ_cov‖_F = {worst:.2e} over 100 instances, {errors} errors, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn c06_consistency_against_pca() {
    let _g = serial();
    let start = Instant::now();
    let grid = vec![100, 400, 1600, 6400];
    let mut config = SimulationConfig::new(
        vec![SettingSpec::desk(SettingId::S1)],
        grid.clone(),
        50,
        vec![Estimator::Mdfa, Estimator::Pca],
        SEED,
    );
    config.workers = workers();
    let records = run_replications(&config).expect("simulation runs");
    let rows = summarize(&records);
    let medians = |name: &str| -> Vec<f64> {
        grid.iter()
            .map(|&n| {
                rows.iter()
                    .find(|r| r.estimator == name && r.n == n)
                    .and_then(|r| r.median_se_lambda)
                    .unwrap_or(f64::NAN)
            })
            .collect()
    };
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    let mdfa = medians("mdfa");
    let pca = medians("pca");
    let last = grid.len() - 1;
    let secs = start.elapsed().as_secs_f64();
    let pass = strictly_decreasing(&mdfa) && mdfa[last] < 0.05 && pca[last] > mdfa[last] && secs < 600.0;
    verdict(6, pass, &format!(
        "median SE_Λ mdfa [{}], pca [{}] at n = {grid:?}; {failures} failed fits, {secs:.1}s",
        fmt_list(&mdfa),
        fmt_list(&pca)
    ));
    assert!(pass);
}

#[test]
fn c07_asymptotic_normality() {
    let _g = serial();
    let start = Instant::now();
    let loadings = [0.8, 0.7, 0.6, 0.5, 0.4];
    let lambda = Mat::from_column_slice(5, 1, &loadings);
    let psi2 = Vector::from_iterator(5, loadings.iter().map(|l| 1.0 - l * l));
    let truth = FactorParams::from_unique_variances(lambda, &psi2).unwrap();
    let theta = phi_to_theta(&truth).unwrap();
    let mut config = NormalityConfig::new(5, 1, theta, 20000, 2000, SEED);
    config.workers = workers();
    let report = normality_study(&config).expect("normality study runs");
    let mc = report.diagnostics.monte_carlo.as_ref().expect("Monte Carlo diagnostics");
    let ratio_ok = mc.variance_ratio.iter().all(|r| (0.85..=1.15).contains(r));
    let kurt_ok = mc.kurtosis.iter().all(|k| *k > 2.5 && *k < 3.5);
    let secs = start.elapsed().as_secs_f64();
    let pass = ratio_ok && kurt_ok && secs < 1800.0;
    verdict(7, pass, &format!(
        "variance ratios [{}]; kurtosis [{}]; {} failed fits, {secs:.1}s",
        mc.variance_ratio.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", "),
        mc.kurtosis.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", "),
        mc.failures
    ));
    assert!(pass);
}

#[test]
fn c08_uniform_deviation_shrinks() {
    let _g = serial();
    let start = Instant::now();
    let spec = SettingSpec::desk(SettingId::S1);
    let truth = gen_true_params(&spec, mdfa::rng::derive_seed(SEED, &[8, 0])).unwrap();
    let mut grid_rng = rng(&[8, 1]);
    let grid: Vec<FactorParams> = (0..200)
        .map(|_| FactorParams::random(&mut grid_rng, spec.p, spec.m, 1.0, (0.3, 1.2)))
        .collect();
    let sizes = [200usize, 800, 3200, 12800];
    let mut medians = Vec::new();
    for (a, &n) in sizes.iter().enumerate() {
        let gaps: Vec<f64> = (0..50u64)
            .map(|r| {
                let x = gen_dataset(&truth.sigma, n, mdfa::rng::derive_seed(SEED, &[8, 2, a as u64, r])).unwrap();
                let s = covariance(&center_columns(&x).unwrap(), Denominator::N);
                uniform_gap(&grid, &s.s, &truth.sigma).unwrap()
            })
            .collect();
        medians.push(median(gaps));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = strictly_decreasing(&medians) && secs < 300.0;
    verdict(8, pass, &format!("median max|L_n − L| over a 200-point grid = [{}] at n = {sizes:?}, {secs:.1}s", fmt_list(&medians)));
    assert!(pass);
}

#[test]
fn c09_outputs_are_reproducible() {
    let _g = serial();
    let start = Instant::now();
    let mut notes = Vec::new();

    let sim = |w: usize| {
        let mut config = SimulationConfig::new(
            vec![SettingSpec::desk(SettingId::S1), SettingSpec::desk(SettingId::S2)],
            vec![100, 200],
            3,
            vec![Estimator::Mdfa, Estimator::MdfaCov, Estimator::MdfaSparse(8), Estimator::Pca, Estimator::Ols],
            SEED,
        );
        config.workers = w;
        run_replications(&config).unwrap()
    };
    let runs = [sim(1), sim(1), sim(4)];
    let csv: Vec<String> = runs.iter().map(|r| records_to_csv(r)).collect();
    let summaries: Vec<String> = runs.iter().map(|r| summary_to_csv(&summarize(r))).collect();
    let svgs: Vec<Vec<(SettingId, String)>> = runs.iter().map(|r| render_report(r, Metric::MeanSeLambda)).collect();
    let sim_ok = csv.windows(2).all(|w| w[0] == w[1]) && summaries.windows(2).all(|w| w[0] == w[1]);
    let svg_ok = svgs.windows(2).all(|w| w[0] == w[1]) && !svgs[0].is_empty();
    notes.push(format!("simulation csv {}", if sim_ok { "identical" } else { "DIFFERS" }));
    notes.push(format!("svg {}", if svg_ok { "identical" } else { "DIFFERS" }));

    let truth = FactorParams::from_unique_variances(
        Mat::from_column_slice(5, 1, &[0.8, 0.7, 0.6, 0.5, 0.4]),
        &Vector::from_column_slice(&[0.36, 0.51, 0.64, 0.75, 0.84]),
    )
    .unwrap();
    let theta = phi_to_theta(&truth).unwrap();
    let study = |w: usize| {
        let mut config = NormalityConfig::new(5, 1, theta.clone(), 2000, 24, SEED);
        config.workers = w;
        normality_study(&config).unwrap().to_json()
    };
    let json = [study(1), study(1), study(3)];
    let json_ok = json.windows(2).all(|w| w[0] == w[1]);
    notes.push(format!("asymptotics json {}", if json_ok { "identical" } else { "DIFFERS" }));

    let mut rng = rng(&[9]);
    let params = FactorParams::random(&mut rng, 6, 2, 0.9, (0.4, 1.0));
    let x = factor_data(&mut rng, &params, 150);
    let fits: Vec<Vec<u64>> = (0..2)
        .map(|_| {
            let fit = fit_mdfa(&x, 2, &FitOptions::default()).unwrap();
            fit.params.phi().iter().chain(fit.loss_trace.iter()).map(|v| v.to_bits()).collect()
        })
        .collect();
    let fit_ok = fits[0] == fits[1];
    notes.push(format!("fit {}", if fit_ok { "identical" } else { "DIFFERS" }));

    let secs = start.elapsed().as_secs_f64();
    let pass = sim_ok && svg_ok && json_ok && fit_ok;
    verdict(9, pass, &format!("{} (reruns and 1 vs 3–4 workers), {secs:.1}s", notes.join(", ")));
    assert!(pass);
}

#[test]
fn c10_sparse_fit_recovers_simple_structure() {
    let _g = serial();
    let start = Instant::now();
    let spec = SettingSpec::desk(SettingId::S1);
    let mut f1 = Vec::new();
    let mut over_budget = 0;
    let mut errors = 0;
    for r in 0..50u64 {
        let truth = gen_true_params(&spec, mdfa::rng::derive_seed(SEED, &[10, r, 0])).unwrap();
        let k = truth.lambda.iter().filter(|v| **v != 0.0).count();
        let x = gen_dataset(&truth.sigma, 4000, mdfa::rng::derive_seed(SEED, &[10, r, 1])).unwrap();
        let opts = FitOptions {
            sparsity_k: Some(k),
            ..FitOptions::default()
        };
        match fit_mdfa(&x, spec.m, &opts) {
            Ok(fit) => {
                if fit.params.lambda.iter().filter(|v| **v != 0.0).count() > k {
                    over_budget += 1;
                }
                f1.push(support_f1(&fit.params.lambda, &truth.lambda));
            }
            Err(_) => errors += 1,
        }
    }
    let min_f1 = f1.iter().copied().fold(f64::INFINITY, f64::min);
    let med = median(f1);
    let secs = start.elapsed().as_secs_f64();
    let pass = med >= 0.9 && over_budget == 0 && errors == 0;
    verdict(10, pass, &format!(
        "median support F1 = {med:.3} (min {min_f1:.3}) over 50 reps at n = 4000; ‖Λ̂‖₀ > k in {over_budget}, {errors} errors, {secs:.1}s"
    ));
    assert!(pass);
}
