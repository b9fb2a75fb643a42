//! The `verify` subcommand: run the invariant suite against a user instance
//! or the built-in corpus, emit a LemmaReport CSV, and fail loudly on any
//! violated inequality. These are all theorems; a red row means a code bug
//! or a convention error, never "bad luck".

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdforge_core::{
    bellman_apply, estimate_mixing, gradient_bound_check, gradient_splitting_residual,
    lemma_sum_a1, lemma_sum_a2, lemma_sum_a3, lipschitz_check, martingale_sum_check, potential,
    run_td0, stationary_gradient, td_update, tv_bias_check, xi_lipschitz_check, FeatureMap,
    InducedChain, InstanceDoc, LemmaReport, StartState, TdConfig, TdOracle, ValueVector,
};

use crate::experiment::prepare;
use crate::generator::{generate_instance, ChainScheme, FeatureScheme, GeneratorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Fast,
    Full,
}

pub struct VerifyOutcome {
    pub reports: Vec<LemmaReport>,
    pub failures: usize,
    pub elapsed_secs: f64,
}

impl VerifyOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LemmaReport::csv_header());
        out.push('\n');
        for r in &self.reports {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }
}

struct NamedInstance {
    name: &'static str,
    chain: InducedChain,
    features: FeatureMap,
    oracle: TdOracle,
}

fn corpus() -> Result<Vec<NamedInstance>> {
    let specs: Vec<(&'static str, GeneratorSpec)> = vec![
        (
            "two-state-slow",
            GeneratorSpec {
                n: 2,
                d: 2,
                gamma: 0.9,
                features: FeatureScheme::Tabular,
                chain: ChainScheme::TwoState { a: 0.05, b: 0.05 },
                seed: 11,
            },
        ),
        (
            "tabular-5",
            GeneratorSpec {
                n: 5,
                d: 5,
                gamma: 0.9,
                features: FeatureScheme::Tabular,
                chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
                seed: 12,
            },
        ),
        (
            "adversarial-1e-1",
            GeneratorSpec {
                n: 6,
                d: 3,
                gamma: 0.9,
                features: FeatureScheme::Adversarial { eps: 1e-1 },
                chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
                seed: 13,
            },
        ),
        (
            "adversarial-1e-2",
            GeneratorSpec {
                n: 6,
                d: 3,
                gamma: 0.9,
                features: FeatureScheme::Adversarial { eps: 1e-2 },
                chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
                seed: 13,
            },
        ),
        (
            "adversarial-1e-3",
            GeneratorSpec {
                n: 6,
                d: 3,
                gamma: 0.9,
                features: FeatureScheme::Adversarial { eps: 1e-3 },
                chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
                seed: 13,
            },
        ),
        (
            "dirichlet-8x3",
            GeneratorSpec {
                n: 8,
                d: 3,
                gamma: 0.9,
                features: FeatureScheme::RandomGaussian,
                chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
                seed: 14,
            },
        ),
        (
            "dirichlet-12x4",
            GeneratorSpec {
                n: 12,
                d: 4,
                gamma: 0.99,
                features: FeatureScheme::RandomGaussian,
                chain: ChainScheme::RandomDirichlet { concentration: 0.5 },
                seed: 15,
            },
        ),
    ];
    let mut out = Vec::new();
    for (name, spec) in specs {
        let doc = generate_instance(&spec)?;
        let prepared = prepare(&doc)?;
        out.push(NamedInstance {
            name,
            chain: prepared.chain,
            features: prepared.features,
            oracle: prepared.oracle,
        });
    }
    Ok(out)
}

fn named(report: LemmaReport, instance: &str) -> LemmaReport {
    LemmaReport::new(
        report.lemma_id,
        if report.params.is_empty() {
            format!("instance={instance}")
        } else {
            format!("instance={instance},{}", report.params)
        },
        report.lhs,
        report.bound,
    )
}

/// Worst-violation campaign summary: lhs is `max(lhs_i - bound_i)` over the
/// fuzz cases, so a negative lhs means every case passed with room.
fn campaign(lemma_id: &'static str, instance: &str, cases: usize, worst: f64) -> LemmaReport {
    LemmaReport::new(
        lemma_id,
        format!("instance={instance},cases={cases}"),
        worst,
        0.0,
    )
}

fn random_theta(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 * scale - scale)
}

fn check_instance(
    inst: &NamedInstance,
    level: VerifyLevel,
    reports: &mut Vec<LemmaReport>,
) -> Result<()> {
    let chain = &inst.chain;
    let fm = &inst.features;
    let oracle = &inst.oracle;
    let d = fm.dim();
    let n = chain.n_states();
    let phi_inf = fm.phi_inf();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);

    // Fixed-point characterizations.
    let residual = (oracle.a_matrix() * oracle.theta_star() - oracle.b_vec()).amax();
    reports.push(named(
        LemmaReport::new("fixed_point_residual", String::new(), residual, 1e-10),
        inst.name,
    ));
    reports.push(named(
        LemmaReport::new(
            "gbar_at_star",
            String::new(),
            stationary_gradient(oracle, oracle.theta_star()).amax(),
            1e-10,
        ),
        inst.name,
    ));
    let v_star = fm.phi() * oracle.theta_star();
    let t_v = bellman_apply(chain, &ValueVector::new(v_star.clone())?)?;
    let projected = tdforge_core::project_d(chain, fm, t_v.as_vector())?;
    reports.push(named(
        LemmaReport::new(
            "bellman_projection",
            String::new(),
            (projected - v_star).amax(),
            1e-8,
        ),
        inst.name,
    ));

    // Gradient-splitting identity, relative residual over random thetas.
    let splits = match level {
        VerifyLevel::Fast => 100,
        VerifyLevel::Full => 500,
    };
    let mut worst_split = f64::NEG_INFINITY;
    for _ in 0..splits {
        let theta = random_theta(&mut rng, d, 4.0);
        let f = potential(oracle, chain, fm, &theta)?;
        let res = gradient_splitting_residual(oracle, chain, fm, &theta)?.abs();
        worst_split = worst_split.max(res - 1e-9 * (1.0 + f.abs()));
    }
    reports.push(campaign(
        "gradient_splitting",
        inst.name,
        splits,
        worst_split,
    ));

    // Hessian vs central finite differences of the potential. The FD oracle
    // carries cancellation noise ~ eps_mach |f| / h^2, so the per-entry
    // tolerance is 1e-5 relative plus that noise floor.
    let h = 1e-4;
    let theta0 = random_theta(&mut rng, d, 1.0);
    let mut worst_fd = f64::NEG_INFINITY;
    for i in 0..d {
        for j in 0..d {
            let mut pp = theta0.clone();
            pp[i] += h;
            pp[j] += h;
            let mut pm = theta0.clone();
            pm[i] += h;
            pm[j] -= h;
            let mut mp = theta0.clone();
            mp[i] -= h;
            mp[j] += h;
            let mut mm = theta0.clone();
            mm[i] -= h;
            mm[j] -= h;
            let f_pp = potential(oracle, chain, fm, &pp)?;
            let f_pm = potential(oracle, chain, fm, &pm)?;
            let f_mp = potential(oracle, chain, fm, &mp)?;
            let f_mm = potential(oracle, chain, fm, &mm)?;
            let fd = (f_pp - f_pm - f_mp + f_mm) / (4.0 * h * h);
            let f_max = f_pp.abs().max(f_pm.abs()).max(f_mp.abs()).max(f_mm.abs());
            let exact = oracle.hessian()[(i, j)];
            let tol = 1e-5 * exact.abs() + 8.0 * f64::EPSILON * f_max / (h * h);
            worst_fd = worst_fd.max((fd - exact).abs() - tol);
        }
    }
    reports.push(campaign("hessian_fd", inst.name, d * d, worst_fd));

    // Bellman contraction on random value pairs.
    let mut worst_contraction = f64::NEG_INFINITY;
    for _ in 0..50 {
        let u = ValueVector::new(DVector::from_fn(n, |_, _| rng.random::<f64>() * 10.0 - 5.0))?;
        let v = ValueVector::new(DVector::from_fn(n, |_, _| rng.random::<f64>() * 10.0 - 5.0))?;
        let tu = bellman_apply(chain, &u)?;
        let tv = bellman_apply(chain, &v)?;
        let lhs = (tu.as_vector() - tv.as_vector()).amax();
        let rhs = chain.gamma() * (u.as_vector() - v.as_vector()).amax();
        worst_contraction = worst_contraction.max(lhs - rhs - 1e-12);
    }
    reports.push(campaign(
        "bellman_contraction",
        inst.name,
        50,
        worst_contraction,
    ));

    // TD-update transcription check.
    let mut worst_update = f64::NEG_INFINITY;
    for _ in 0..50 {
        let theta = random_theta(&mut rng, d, 3.0);
        let s = (rng.random::<f64>() * n as f64) as usize % n;
        let s2 = (rng.random::<f64>() * n as f64) as usize % n;
        let r = chain.reward_mu()[(s, s2)];
        let eta = rng.random::<f64>() * 0.2;
        let (next, g) = td_update(&theta, (s, s2, r), chain.gamma(), eta, fm);
        let delta = r + chain.gamma() * fm.row(s2).dot(&theta) - fm.row(s).dot(&theta);
        let expect_g = delta * fm.row(s);
        worst_update = worst_update
            .max((&g - &expect_g).amax() - 1e-12)
            .max((next - (&theta + eta * &expect_g)).amax() - 1e-12);
    }
    reports.push(campaign("td_update_formula", inst.name, 50, worst_update));

    // Lemma fuzz campaigns.
    let (n_grad, n_lip, n_xi) = match level {
        VerifyLevel::Fast => (2_000, 1_000, 300),
        VerifyLevel::Full => (20_000, 10_000, 2_000),
    };
    let r_inf = chain.r_inf();
    let ell = |theta: &DVector<f64>| r_inf * phi_inf + 2.0 * phi_inf * phi_inf * theta.norm();

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_grad {
        let theta = random_theta(&mut rng, d, 10.0);
        let s = (rng.random::<f64>() * n as f64) as usize % n;
        let s2 = (rng.random::<f64>() * n as f64) as usize % n;
        let gamma = rng.random::<f64>();
        let rep = gradient_bound_check(
            &theta,
            (s, s2, chain.reward_mu()[(s, s2)]),
            gamma,
            fm,
            r_inf,
        );
        worst = worst.max(rep.lhs - rep.bound);
    }
    reports.push(campaign("gradient_bound_fuzz", inst.name, n_grad, worst));

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_lip {
        let a = random_theta(&mut rng, d, 5.0);
        let b = random_theta(&mut rng, d, 5.0);
        let s = (rng.random::<f64>() * n as f64) as usize % n;
        let s2 = (rng.random::<f64>() * n as f64) as usize % n;
        let (g_rep, gbar_rep) =
            lipschitz_check(&a, &b, (s, s2, chain.reward_mu()[(s, s2)]), chain, fm)?;
        worst = worst
            .max(g_rep.lhs - g_rep.bound)
            .max(gbar_rep.lhs - gbar_rep.bound);
    }
    reports.push(campaign("lipschitz_fuzz", inst.name, n_lip, worst));

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_xi {
        let a = random_theta(&mut rng, d, 5.0);
        let b = random_theta(&mut rng, d, 5.0);
        let s = (rng.random::<f64>() * n as f64) as usize % n;
        let s2 = (rng.random::<f64>() * n as f64) as usize % n;
        let tr = (s, s2, chain.reward_mu()[(s, s2)]);
        let d_b = (&b - oracle.theta_star()).norm();
        let rep = xi_lipschitz_check(&a, &b, tr, ell(&a), d_b, chain, fm, oracle)?;
        worst = worst.max(rep.lhs - rep.bound);
    }
    reports.push(campaign("xi_lipschitz_fuzz", inst.name, n_xi, worst));

    Ok(())
}

fn tv_sweep_reports(inst: &NamedInstance, reports: &mut Vec<LemmaReport>) -> Result<()> {
    let mixing = estimate_mixing(&inst.chain, 40)?;
    let theta = DVector::from_element(inst.features.dim(), 0.7);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..=30 {
        let rep = tv_bias_check(
            &theta,
            0,
            k,
            &inst.chain,
            &inst.features,
            &inst.oracle,
            &mixing,
        )?;
        worst = worst.max(rep.lhs - rep.bound);
    }
    reports.push(campaign("tv_bias_sweep", inst.name, 31, worst));
    Ok(())
}

fn sum_lemma_reports(level: VerifyLevel, reports: &mut Vec<LemmaReport>) {
    let ts: &[usize] = &[1_000, 100_000];
    for &u in &[0usize, 1, 10, 100, 1_000] {
        for &t in ts {
            reports.push(lemma_sum_a1(u, t));
            reports.push(lemma_sum_a2(u, t));
        }
    }
    for &t in ts {
        reports.push(lemma_sum_a3(t));
    }
    if level == VerifyLevel::Full {
        reports.push(lemma_sum_a3(10_000_000));
    }
}

fn martingale_reports(instances: &[NamedInstance], reports: &mut Vec<LemmaReport>) -> Result<()> {
    for inst in instances.iter().take(2) {
        let config = TdConfig::new(100.0, 1024, 0, StartState::StationaryDraw, 1024)?;
        let sums: Vec<f64> = (0..200)
            .map(|i| {
                run_td0(
                    &inst.chain,
                    &inst.features,
                    Some(&inst.oracle),
                    &config.with_seed(i as u64),
                )
                .map(|r| r.martingale_sum.unwrap())
            })
            .collect::<tdforge_core::Result<Vec<f64>>>()?;
        let stat = martingale_sum_check(&sums);
        reports.push(LemmaReport::new(
            "martingale_z",
            format!("instance={},reps=200", inst.name),
            stat.z.abs(),
            3.0,
        ));
    }
    Ok(())
}

/// Run the verification suite. `instance` (when given) replaces the built-in
/// corpus with a user-provided document.
pub fn run_verify(
    instance: Option<&Path>,
    level: VerifyLevel,
    out_dir: Option<&Path>,
) -> Result<VerifyOutcome> {
    let started = Instant::now();
    let instances: Vec<NamedInstance> = match instance {
        Some(path) => {
            let doc = InstanceDoc::load(path)?;
            let prepared = prepare(&doc)?;
            vec![NamedInstance {
                name: "user",
                chain: prepared.chain,
                features: prepared.features,
                oracle: prepared.oracle,
            }]
        }
        None => corpus()?,
    };

    let mut reports = Vec::new();
    for inst in &instances {
        check_instance(inst, level, &mut reports)?;
    }
    // The slow two-state mixer drives the TV sweep; for user instances the
    // sweep runs on the instance itself.
    if let Some(slow) = instances
        .iter()
        .find(|i| i.name == "two-state-slow")
        .or_else(|| instances.first())
    {
        tv_sweep_reports(slow, &mut reports)?;
    }
    sum_lemma_reports(level, &mut reports);
    if level == VerifyLevel::Full {
        martingale_reports(&instances, &mut reports)?;
    }

    // Curvature ladder across the adversarial family when present.
    let eigs: Vec<(f64, f64)> = instances
        .iter()
        .filter_map(|i| {
            i.name.strip_prefix("adversarial-1e-").map(|suffix| {
                let eps = 10f64.powi(-(suffix.parse::<i32>().unwrap()));
                (eps, tdforge_core::hessian_min_eigenvalue(&i.oracle))
            })
        })
        .collect();
    if eigs.len() >= 2 {
        let ratios: Vec<f64> = eigs.iter().map(|(e, l)| l / (e * e)).collect();
        let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
        reports.push(LemmaReport::new(
            "curvature_eps_sq_scaling",
            format!("ratios={ratios:?}"),
            hi / lo,
            2.0,
        ));
    }

    let failures = reports.iter().filter(|r| !r.pass).count();
    let outcome = VerifyOutcome {
        reports,
        failures,
        elapsed_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("lemma_reports.csv"), outcome.to_csv())?;
    }
    Ok(outcome)
}
