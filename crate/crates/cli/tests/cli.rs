//! End-to-end checks of the CLI surface: instance round-trips, exit codes,
//! determinism of run artifacts, and the sweep CSV contract.

use std::path::{Path, PathBuf};
use std::process::Command;

use tdforge::experiment::{
    run_experiment, sweep_experiment, AlgorithmConfig, ExperimentConfig, InstanceSource,
    OutputConfig, SweepAxes,
};
use tdforge::generator::{generate_instance, ChainScheme, FeatureScheme, GeneratorSpec};
use tdforge_core::{InstanceDoc, Mdp, Policy};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tdforge"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = tempfile::Builder::new()
        .prefix(&format!("tdforge-{tag}-"))
        .tempdir()
        .unwrap()
        .keep();
    dir
}

fn zero_reward_instance(path: &Path) {
    let transition = vec![vec![vec![0.7, 0.3]], vec![vec![0.4, 0.6]]];
    let reward = vec![vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]];
    let mdp = Mdp::new(transition, reward, 0.9).unwrap();
    let policy = Policy::uniform(2, 1);
    let features =
        tdforge_core::build_feature_map(nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, -0.5]))
            .unwrap();
    InstanceDoc::new(&mdp, &policy, &features)
        .save(path)
        .unwrap();
}

fn base_config(instance: InstanceSource, out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        instance,
        algorithm: AlgorithmConfig {
            c: 100.0,
            t_grid: vec![256],
            replications: 8,
            base_seed: 41,
            record_stride: 32,
        },
        output: OutputConfig {
            dir: out,
            write_replication_csv: true,
        },
        sweep: None,
    }
}

#[test]
fn generate_round_trip_is_byte_identical() {
    let dir = tmpdir("gen");
    let path = dir.join("inst.json");
    let status = bin()
        .args([
            "generate",
            "--n",
            "2",
            "--d",
            "2",
            "--features",
            "tabular",
            "--chain",
            "two-state:0.1,0.1",
            "--seed",
            "5",
            "--out",
        ])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());

    let first = std::fs::read(&path).unwrap();
    let doc = InstanceDoc::load(&path).unwrap();
    doc.save(&path).unwrap();
    let second = std::fs::read(&path).unwrap();
    assert_eq!(first, second);

    // The embedded chain is the symmetric slow mixer with uniform pi.
    let (chain, _) = doc.build_chain(1e-10).unwrap();
    assert_eq!(chain.p_mu()[(0, 0)], 0.9);
    let pi = chain.pi().unwrap();
    assert!((pi[0] - 0.5).abs() < 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn generate_adversarial_matches_block_layout() {
    let dir = tmpdir("adv");
    let path = dir.join("adv.json");
    let status = bin()
        .args([
            "generate",
            "--n",
            "6",
            "--d",
            "3",
            "--features",
            "adversarial:0.001",
            "--chain",
            "random-dirichlet:1.0",
            "--seed",
            "2",
            "--out",
        ])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let doc = InstanceDoc::load(&path).unwrap();
    let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    assert!((doc.features[0][0] - inv_sqrt2).abs() < 1e-12);
    assert!((doc.features[0][1] + inv_sqrt2).abs() < 1e-12);
    assert_eq!(doc.features[1][1], 0.001);
    assert_eq!(doc.features[2][2], 0.001);
    assert_eq!(doc.features[4], vec![0.0, 0.0, 0.0]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn zero_reward_run_has_zero_objective() {
    let dir = tmpdir("zero");
    let inst = dir.join("zero.json");
    zero_reward_instance(&inst);
    let config = base_config(InstanceSource::Path { path: inst }, dir.join("out"));
    let aggregate = run_experiment(&config, Some(2)).unwrap();
    assert_eq!(aggregate.per_t[0].f_bar_mean, 0.0);
    assert_eq!(aggregate.per_t[0].max_mean_theta_sq, 0.0);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn same_seed_gives_identical_aggregate_bytes() {
    let dir = tmpdir("det");
    let inst = dir.join("inst.json");
    let spec = GeneratorSpec {
        n: 6,
        d: 2,
        gamma: 0.9,
        features: FeatureScheme::RandomGaussian,
        chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
        seed: 3,
    };
    generate_instance(&spec).unwrap().save(&inst).unwrap();

    let mut config = base_config(InstanceSource::Path { path: inst }, dir.join("out-a"));
    run_experiment(&config, Some(2)).unwrap();
    let a = std::fs::read(dir.join("out-a/aggregate.json")).unwrap();
    config.output.dir = dir.join("out-b");
    run_experiment(&config, Some(2)).unwrap();
    let b = std::fs::read(dir.join("out-b/aggregate.json")).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn replication_csv_has_contract_columns() {
    let dir = tmpdir("csv");
    let inst = dir.join("inst.json");
    zero_reward_instance(&inst);
    let config = base_config(InstanceSource::Path { path: inst }, dir.join("out"));
    run_experiment(&config, Some(1)).unwrap();
    let csv = std::fs::read_to_string(dir.join("out/rep_T256_r0000.csv")).unwrap();
    assert!(csv.starts_with("t,eta,theta_norm,dist_to_star,f_value,grad_norm,ell\n"));
    assert_eq!(csv.lines().count(), 1 + 256 / 32);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_eps_axis_shows_quadratic_curvature() {
    let dir = tmpdir("sweep-eps");
    let mut config = base_config(
        InstanceSource::Generator {
            generator: GeneratorSpec {
                n: 6,
                d: 3,
                gamma: 0.9,
                features: FeatureScheme::Adversarial { eps: 0.1 },
                chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
                seed: 13,
            },
        },
        dir.join("out"),
    );
    config.algorithm.replications = 2;
    config.algorithm.t_grid = vec![32];
    config.sweep = Some(SweepAxes {
        eps: Some(vec![1e-1, 1e-2, 1e-3]),
        ..Default::default()
    });
    let rows = sweep_experiment(&config, Some(1)).unwrap();
    assert_eq!(rows.len(), 3);
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda_min.unwrap()).collect();
    assert!(lambdas[0] > lambdas[1] && lambdas[1] > lambdas[2]);
    let ratios: Vec<f64> = rows
        .iter()
        .map(|r| r.lambda_min.unwrap() / (r.eps.unwrap() * r.eps.unwrap()))
        .collect();
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(hi / lo < 2.0, "lambda_min/eps^2 ratios drifted: {ratios:?}");

    let csv = std::fs::read_to_string(dir.join("out/sweep.csv")).unwrap();
    assert!(csv.starts_with("c,T,gamma,eps,mix,lambda_min,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_c_axis_has_decreasing_omega_and_flags_invalid_cells() {
    let dir = tmpdir("sweep-c");
    let inst = dir.join("inst.json");
    zero_reward_instance(&inst);
    let mut config = base_config(InstanceSource::Path { path: inst }, dir.join("out"));
    config.algorithm.replications = 2;
    config.algorithm.t_grid = vec![32];
    config.sweep = Some(SweepAxes {
        c: Some(vec![50.0, 67.0, 100.0, 1000.0]),
        ..Default::default()
    });
    let rows = sweep_experiment(&config, Some(1)).unwrap();
    assert_eq!(rows[0].status, "skipped_invalid_c");
    assert!(rows[0].aggregate.is_none());
    let omegas: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.aggregate.as_ref().unwrap().omega_bound)
        .collect();
    // Zero-reward instances have bound 0; compare omega_c directly instead.
    let omega_direct: Vec<f64> = [67.0, 100.0, 1000.0]
        .iter()
        .map(|&c| tdforge_core::omega_c(c).unwrap())
        .collect();
    assert!(omega_direct[0] > omega_direct[1] && omega_direct[1] > omega_direct[2]);
    assert!(omegas.iter().all(|&b| b == 0.0));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn degenerate_sweep_equals_run_output() {
    let dir = tmpdir("sweep-deg");
    let inst = dir.join("inst.json");
    let spec = GeneratorSpec {
        n: 5,
        d: 2,
        gamma: 0.9,
        features: FeatureScheme::RandomGaussian,
        chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
        seed: 9,
    };
    generate_instance(&spec).unwrap().save(&inst).unwrap();

    let mut config = base_config(InstanceSource::Path { path: inst }, dir.join("out-run"));
    config.algorithm.t_grid = vec![64];
    config.algorithm.replications = 6;
    let run = run_experiment(&config, Some(2)).unwrap();

    config.output.dir = dir.join("out-sweep");
    config.sweep = Some(SweepAxes::default());
    let rows = sweep_experiment(&config, Some(2)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].aggregate.as_ref().unwrap(), &run.per_t[0]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_exit_codes() {
    let dir = tmpdir("verify");
    // Corrupted instance: transition row sums to 0.9.
    let inst = dir.join("bad.json");
    zero_reward_instance(&inst);
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&inst).unwrap()).unwrap();
    doc["transition"][0][0][0] = serde_json::json!(0.6);
    std::fs::write(&inst, serde_json::to_string_pretty(&doc).unwrap()).unwrap();

    let out = bin()
        .args(["verify", "--instance"])
        .arg(&inst)
        .args(["--level", "fast"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("sums to"),
        "diagnostic should name the violated invariant, got: {stderr}"
    );

    // A clean instance verifies with exit 0.
    let good = dir.join("good.json");
    let spec = GeneratorSpec {
        n: 5,
        d: 2,
        gamma: 0.9,
        features: FeatureScheme::RandomGaussian,
        chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
        seed: 4,
    };
    generate_instance(&spec).unwrap().save(&good).unwrap();
    let out = bin()
        .args(["verify", "--instance"])
        .arg(&good)
        .args(["--level", "fast", "--out"])
        .arg(dir.join("reports"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("reports/lemma_reports.csv")).unwrap();
    assert!(csv.starts_with("lemma_id,params,lhs,bound,slack,pass"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_renders_rate_table() {
    let dir = tmpdir("report");
    let inst = dir.join("inst.json");
    let spec = GeneratorSpec {
        n: 5,
        d: 2,
        gamma: 0.9,
        features: FeatureScheme::RandomGaussian,
        chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
        seed: 6,
    };
    generate_instance(&spec).unwrap().save(&inst).unwrap();
    let mut config = base_config(InstanceSource::Path { path: inst }, dir.join("out"));
    config.algorithm.t_grid = vec![64, 256];
    config.algorithm.replications = 4;
    run_experiment(&config, Some(1)).unwrap();

    let out = bin()
        .args(["report", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("f_bar_mean"));
    assert!(stdout.contains("log-log slope"));

    // Missing artifacts: invalid input.
    let out = bin()
        .args(["report", "--out"])
        .arg(dir.join("nope"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_rejects_inadmissible_constant() {
    let dir = tmpdir("badc");
    let inst = dir.join("inst.json");
    zero_reward_instance(&inst);
    let out = bin()
        .args(["run", "--instance"])
        .arg(&inst)
        .args(["--c", "66", "--T", "64", "--reps", "2", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("30 + sqrt(1302)"),
        "refusal should cite the constraint, got: {stderr}"
    );
    std::fs::remove_dir_all(&dir).ok();
}
