//! Named experiment presets and the per-algorithm default hyperparameters.
//!
//! WMLR penalties are quoted as nominal `lambda` and stored as `lambda / 2`
//! (see [`WmlrConfig::half_penalty`]).

use std::path::PathBuf;

use wmlr::em::{GemConfig, SigmaX};
use wmlr::fedsim::FederatedConfig;
use wmlr::model::{ClusterMode, GenConfig, XLaw};
use wmlr::wmlr::WmlrConfig;

use crate::config::{Algorithm, EmSettings, ExperimentConfig, FedSettings, Scenario, SolverConfig};

pub const DIM: usize = 128;
pub const CENTRAL_DATA_SEED: u64 = 1;
pub const FED_DATA_SEED: u64 = 7;
pub const SOLVER_SEED: u64 = 100;
pub const CENTRAL_ITERS: usize = 100;
pub const PER_AGENT_N: usize = 10;

pub const NAMES: [&str; 12] = [
    "centralized-snr10-n10k",
    "centralized-snr10-n100k",
    "centralized-snr1-n10k",
    "centralized-snr1-n100k",
    "federated-snr1-m1k",
    "federated-snr5-m1k",
    "federated-snr10-m1k",
    "federated-snr20-m1k",
    "federated-snr1-m10k",
    "federated-snr5-m10k",
    "federated-snr10-m10k",
    "federated-snr20-m10k",
];

fn is(snr: f64, v: f64) -> bool {
    (snr - v).abs() < 1e-9
}

/// Nominal penalty for centralized minimax runs.
pub fn central_lambda(snr: f64) -> f64 {
    if is(snr, 1.0) {
        0.38
    } else if is(snr, 10.0) {
        0.53
    } else {
        0.5
    }
}

pub fn central_gem_alpha(_snr: f64) -> f64 {
    1.0
}

pub fn fed_lambda(snr: f64) -> f64 {
    if is(snr, 1.0) {
        0.35
    } else {
        0.41
    }
}

pub fn fed_gem_alpha(snr: f64) -> f64 {
    if is(snr, 1.0) {
        2.98
    } else if is(snr, 5.0) {
        0.89
    } else if is(snr, 10.0) {
        0.48
    } else {
        0.14
    }
}

pub const FED_EM_ALPHA: f64 = 0.08;

/// Round budget of a federated run.
pub fn fed_rounds(algorithm: Algorithm, agents: usize) -> usize {
    match algorithm {
        Algorithm::FWmlr => 300,
        Algorithm::FGem if agents > 1000 => 20_000,
        _ => 5_000,
    }
}

/// Default solver settings for `algorithm` at the given SNR.
pub fn solver_for(algorithm: Algorithm, snr: f64) -> SolverConfig {
    match algorithm {
        Algorithm::Wmlr => SolverConfig::Wmlr(WmlrConfig::half_penalty(central_lambda(snr), CENTRAL_ITERS, SOLVER_SEED)),
        Algorithm::FWmlr => SolverConfig::Wmlr(WmlrConfig::half_penalty(fed_lambda(snr), 0, SOLVER_SEED)),
        Algorithm::Em => SolverConfig::Em(EmSettings { iters: CENTRAL_ITERS, sigma_x: SigmaX::Identity }),
        Algorithm::Gem => SolverConfig::Gem(GemConfig::new(central_gem_alpha(snr), CENTRAL_ITERS)),
        Algorithm::FGem => SolverConfig::Gem(GemConfig::new(fed_gem_alpha(snr), 0)),
        Algorithm::FEm => SolverConfig::Gem(GemConfig::new(FED_EM_ALPHA, 0)),
    }
}

fn gen(snr: f64, n: usize, seed: u64) -> GenConfig {
    GenConfig { n, d: DIM, snr, sigma2: 1.0, x_law: XLaw::StandardNormal, seed }
}

pub fn centralized(snr: f64, n: usize, algorithm: Algorithm) -> ExperimentConfig {
    assert_eq!(algorithm.scenario(), Scenario::Centralized);
    ExperimentConfig {
        scenario: Scenario::Centralized,
        algorithm,
        gen: gen(snr, n, CENTRAL_DATA_SEED),
        fed: None,
        solver: solver_for(algorithm, snr),
        data: None,
        eval_against: None,
        output_dir: PathBuf::from(format!("runs/centralized-snr{snr}-n{n}-{algorithm}")),
        seed: SOLVER_SEED,
    }
}

fn fed_settings(algorithm: Algorithm, agents: usize) -> FedSettings {
    FedSettings {
        agents,
        per_agent_n: PER_AGENT_N,
        clusters: ClusterMode::PerAgent,
        config: FederatedConfig::new(fed_rounds(algorithm, agents), SOLVER_SEED),
    }
}

pub fn federated(snr: f64, agents: usize, algorithm: Algorithm) -> ExperimentConfig {
    assert_eq!(algorithm.scenario(), Scenario::Federated);
    ExperimentConfig {
        scenario: Scenario::Federated,
        algorithm,
        gen: gen(snr, agents * PER_AGENT_N, FED_DATA_SEED),
        fed: Some(fed_settings(algorithm, agents)),
        solver: solver_for(algorithm, snr),
        data: None,
        eval_against: None,
        output_dir: PathBuf::from(format!("runs/federated-snr{snr}-m{agents}-{algorithm}")),
        seed: SOLVER_SEED,
    }
}

/// Replaces the algorithm, rebuilding solver (and federated) settings from
/// the defaults while keeping the data settings.
pub fn switch_algorithm(cfg: &mut ExperimentConfig, algorithm: Algorithm) {
    let snr = cfg.gen.snr;
    match (cfg.scenario, algorithm.scenario()) {
        (Scenario::Centralized, Scenario::Federated) => {
            let agents = (cfg.gen.n / PER_AGENT_N).max(1);
            cfg.fed = Some(fed_settings(algorithm, agents));
        }
        (Scenario::Federated, Scenario::Centralized) => {
            if let Some(f) = cfg.fed.take() {
                cfg.gen.n = f.agents * f.per_agent_n;
            }
        }
        (_, Scenario::Federated) => {
            if let Some(f) = &mut cfg.fed {
                f.config.rounds = fed_rounds(algorithm, f.agents);
            }
        }
        _ => {}
    }
    cfg.scenario = algorithm.scenario();
    cfg.algorithm = algorithm;
    cfg.solver = solver_for(algorithm, snr);
}

fn parse_count(s: &str) -> Option<usize> {
    match s.strip_suffix('k') {
        Some(k) => k.parse::<usize>().ok().map(|v| v * 1000),
        None => s.parse().ok(),
    }
}

/// Preset by name: `centralized-snr<S>-n<N>` or `federated-snr<S>-m<M>`, with
/// an optional `k` suffix on counts. The algorithm defaults to the minimax solver.
pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    let (scenario, rest) = name.split_once("-snr")?;
    let (snr, count) = rest.split_once('-')?;
    let snr: f64 = snr.parse().ok()?;
    let mut cfg = match scenario {
        "centralized" => centralized(snr, parse_count(count.strip_prefix('n')?)?, Algorithm::Wmlr),
        "federated" => federated(snr, parse_count(count.strip_prefix('m')?)?, Algorithm::FWmlr),
        _ => return None,
    };
    cfg.output_dir = PathBuf::from("runs").join(name);
    Some(cfg)
}
