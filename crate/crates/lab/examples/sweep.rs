//! Guidance-strength sweep used to pick the shipped settings. For each
//! (bandwidth, gamma) pair and N paired seeds starting at FIRST it counts the
//! seeds where guidance raises Vendi and lowers MSS, where guided FID stays
//! within 10% of baseline, and where the Top-1 > 0.6 fraction is
//! non-increasing over n_step = 1, 3, 5; it also sums the Top-1 > 0.6
//! fraction with references at the mixture means (guided/baseline).
//!
//! FIRST=500 N=60 cargo run --release -p deskdiff --example sweep -- default.json

use deskdiff::config::ReferenceSource;
use deskdiff::experiment::{evaluate_ablation, evaluate_experiment, AblationAxis};
use deskdiff::RunConfig;

fn env(name: &str, default: u64) -> u64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> deskdiff::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "default.json".into());
    let base = RunConfig::load(path.as_ref())?;
    let (first, n) = (env("FIRST", 500), env("N", 20));
    for bw in [0.2, 0.3, 0.4] {
        for gamma in [0.003, 0.005, 0.007, 0.01, 0.02, 0.05, 0.2, 0.5, 1.0] {
            let mut cfg = base.clone();
            cfg.embedder.bandwidth = bw;
            cfg.guidance.gamma = gamma;
            let (mut diverse, mut fid_ok, mut mono, mut rep_b, mut rep_g) = (0, 0, 0, 0.0, 0.0);
            for s in first..first + n {
                cfg.seed = s;
                let m = evaluate_experiment(&cfg)?.metrics;
                if m.guided.vendi > m.baseline.vendi && m.guided.mss < m.baseline.mss {
                    diverse += 1;
                }
                if m.guided.fid.unwrap() <= 1.1 * m.baseline.fid.unwrap() {
                    fid_ok += 1;
                }
                let rows = evaluate_ablation(&cfg, &AblationAxis::NStep(vec![1, 3, 5]))?;
                let f: Vec<f64> = rows.iter().map(|r| r.report.top1(0.6).unwrap()).collect();
                if f[0] >= f[1] && f[1] >= f[2] {
                    mono += 1;
                }
                let mut at_means = cfg.clone();
                at_means.references = ReferenceSource::Means;
                let m = evaluate_experiment(&at_means)?.metrics;
                rep_b += m.baseline.top1(0.6).unwrap();
                rep_g += m.guided.top1(0.6).unwrap();
            }
            println!(
                "bw={bw} gamma={gamma}: diversity {diverse}/{n} fid_ok {fid_ok}/{n} n_step {mono}/{n} replication {:.2}",
                rep_g / rep_b
            );
        }
    }
    Ok(())
}
