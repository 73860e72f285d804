use cgssl::ecm::EcmOptions;
use cgssl::path::{dcpe, default_ladders, dpe};
use cgssl::sim::{gen_replicate, BenchmarkConfig, Method, OmegaKind};
use cgssl::{Dataset, SslConfig};

/// Seed shared with the acceptance benchmarks.
const SEED: u64 = 20_240_601;

fn dataset(pattern: OmegaKind, r: usize) -> Dataset {
    let config = BenchmarkConfig {
        n: 100,
        p: 10,
        q: 10,
        pattern,
        replicates: r + 1,
        method: Method::Dpe,
        seed: SEED,
        density: 0.2,
    };
    gen_replicate(&config, r).unwrap().sim.data
}

fn base(data: &Dataset) -> (cgssl::path::PenaltyLadders, SslConfig) {
    let ladders = default_ladders(data.n(), data.p(), data.q()).unwrap();
    let cfg = SslConfig::with_default_priors(
        ladders.lambda0[0],
        ladders.lambda1,
        ladders.xi0[0],
        ladders.xi1,
        data.p(),
        data.q(),
    );
    (ladders, cfg)
}

#[test]
fn dcpe_and_dpe_differ_on_ar2() {
    let data = dataset(OmegaKind::Ar2, 0);
    let (ladders, cfg) = base(&data);
    let opts = EcmOptions::default();
    let full = dpe(&data, &ladders, &cfg, &opts).unwrap();
    let conditional = dcpe(&data, &ladders, &cfg, &opts).unwrap();
    let a = &full.final_fit().params;
    let b = &conditional.final_fit.params;
    let gap = (a.psi() - b.psi()).amax().max((a.omega() - b.omega()).amax());
    assert!(gap > 1e-3, "estimates agree to {gap}");
    assert_ne!(full.final_fit().support_omega, conditional.final_fit.support_omega);
}

#[test]
fn psi_support_shrinks_along_lambda0_on_seeded_benchmarks() {
    let opts = EcmOptions::default();
    for (pattern, r) in [(OmegaKind::Ar1, 0), (OmegaKind::Ar1, 1), (OmegaKind::Star, 0)] {
        let data = dataset(pattern, r);
        let (ladders, cfg) = base(&data);
        let grid = dpe(&data, &ladders, &cfg, &opts).unwrap().grid;
        for t in 0..ladders.xi0.len() {
            let counts: Vec<usize> = grid.iter().map(|row| row[t].fit.support_psi.len()).collect();
            assert!(
                counts.windows(2).all(|w| w[1] <= w[0]),
                "{pattern} replicate {r}, column {t}: {counts:?}"
            );
        }
    }
}

#[test]
fn default_hyperparameters() {
    let cfg = SslConfig::with_default_priors(10.0, 1.0, 10.0, 1.0, 7, 4);
    assert_eq!((cfg.a_theta, cfg.b_theta, cfg.a_eta, cfg.b_eta), (1.0, 28.0, 1.0, 4.0));
    assert_eq!(cfg.xi_diag, 1.0);
}
