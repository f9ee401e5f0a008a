use rdpf_core::copulas::SourceSpec;
use rdpf_core::marginals::{MarginalDistribution, MarginalFamily};
use rdpf_core::optimizer::{run_estimation, OptimizerConfig};
use rdpf_core::projection::{DistortionKind, ProjectionProblem};

fn main() {
    let source = SourceSpec::scalar(
        MarginalDistribution::make_standardized(MarginalFamily::Gaussian, 0.0, 1.0).unwrap(),
    );
    let target = SourceSpec::scalar(
        MarginalDistribution::make_standardized(MarginalFamily::Gaussian, 0.0, 4.0).unwrap(),
    );
    let problem =
        ProjectionProblem::new(source, target, DistortionKind::Mse, 1.5, 4).unwrap();
    for (t, step) in [(2500usize, 1e-2), (10000, 1e-2), (30000, 2e-2)] {
        let config = OptimizerConfig {
            batch_size: 8192,
            iterations: t,
            averaging_window: 500,
            step_size: step,
            seed: 3,
            tolerance: 5e-3,
            ..OptimizerConfig::default()
        };
        let r = run_estimation(&problem, &config, None).unwrap();
        println!(
            "T={t} step={step}: mi={:.4} achieved={:.4} residmax={:.4} converged={} iters={} theta={:.3} mu={:.3}",
            r.mi_nats,
            r.achieved_distortion,
            r.residuals.max_abs(),
            r.converged,
            r.iterations_used(),
            r.multipliers.theta,
            r.multipliers.mu,
        );
        println!("  nu = {:?}", r.multipliers.nu_slice().iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    println!("grid oracle N=4: 0.6079, true OC: 0.7254");
}
