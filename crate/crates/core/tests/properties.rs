use cgssl::cgquic::{self, CglassoProblem, CgquicOptions};
use cgssl::io::{self, FitMethod, RunConfig};
use cgssl::linalg::cholesky;
use cgssl::model::{self, condition_number, marginal_coefficients, standardize_design};
use cgssl::penalty::{lambda_star, pen, pstar, MixtureRates};
use cgssl::psi::{psi_objective, update_psi_matrices, update_theta, theta_objective, PsiSolveOptions};
use cgssl::sim::{gen_omega, support_metrics, OmegaKind, OmegaPattern};
use cgssl::{ChainGraphParams, Dataset, SslConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-range..range, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

/// AᵀA/q + I: comfortably positive definite.
fn pd(q: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(q, q, 1.0).prop_map(move |a| {
        let mut m = a.transpose() * &a / q as f64 + DMatrix::identity(q, q);
        m = (&m + m.transpose()) * 0.5;
        m
    })
}

fn rates() -> impl Strategy<Value = MixtureRates> {
    (0.01..10.0f64, 1.01..100.0f64, 0.001..0.999f64)
        .prop_map(|(slab, ratio, mix)| MixtureRates::new(slab * ratio, slab, mix).unwrap())
}

fn sparse(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -2.0..2.0f64], rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn naive_log_posterior(
    psi: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    theta: f64,
    eta: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &SslConfig,
) -> f64 {
    let (n, q) = (y.nrows(), y.ncols());
    let sigma = omega.clone().try_inverse().unwrap();
    let r = y * omega - x * psi;
    let mut quad = 0.0;
    for i in 0..n {
        for a in 0..q {
            for b in 0..q {
                quad += r[(i, a)] * sigma[(a, b)] * r[(i, b)];
            }
        }
    }
    let mix = |v: f64, spike: f64, slab: f64, w: f64| {
        (w * slab * (-slab * v.abs()).exp() + (1.0 - w) * spike * (-spike * v.abs()).exp()).ln()
    };
    let mut prior = 0.0;
    for v in psi.iter() {
        prior += mix(*v, cfg.lambda0, cfg.lambda1, theta);
    }
    for k in 0..q {
        prior -= cfg.xi_diag * omega[(k, k)];
        for kp in (k + 1)..q {
            prior += mix(omega[(k, kp)], cfg.xi0, cfg.xi1, eta);
        }
    }
    prior += (cfg.a_theta - 1.0) * theta.ln() + (cfg.b_theta - 1.0) * (1.0 - theta).ln();
    prior += (cfg.a_eta - 1.0) * eta.ln() + (cfg.b_eta - 1.0) * (1.0 - eta).ln();
    0.5 * n as f64 * omega.determinant().ln() - 0.5 * quad + prior
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pstar_monotone_and_lambda_star_bounded(r in rates(), a in 0.0..20.0f64, b in 0.0..20.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pstar(lo, &r) <= pstar(hi, &r));
        prop_assert!(pstar(-hi, &r) == pstar(hi, &r));
        let (l_lo, l_hi) = (lambda_star(lo, &r), lambda_star(hi, &r));
        prop_assert!(l_lo >= l_hi);
        for l in [l_lo, l_hi] {
            prop_assert!(l >= r.rate_slab * (1.0 - 1e-12) && l <= r.rate_spike * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pen_respects_spike_bound(r in rates(), x in -50.0..50.0f64) {
        prop_assert!(pen(x, &r) + r.rate_spike * x.abs() >= -1e-9 * (1.0 + r.rate_spike * x.abs()));
        prop_assert!(pen(x, &r) <= 1e-12);
    }

    #[test]
    fn penalty_is_finite_at_extremes(
        slab_exp in -3.0..8.0f64,
        gap_exp in 0.01..8.0f64,
        mix in 0.0001..0.9999f64,
        x_exp in -8.0..8.0f64,
    ) {
        let slab = 10f64.powf(slab_exp);
        let spike = (slab * 10f64.powf(gap_exp)).min(1e8).max(slab * 1.5);
        let r = MixtureRates::new(spike, slab, mix).unwrap();
        let x = 10f64.powf(x_exp);
        for v in [pstar(x, &r), lambda_star(x, &r), pen(x, &r), r.log_density(x)] {
            prop_assert!(v.is_finite(), "non-finite at x = {x}, rates {r:?}");
        }
    }

    #[test]
    fn log_posterior_matches_naive(
        psi in matrix(3, 4, 1.5),
        omega in pd(4),
        raw in matrix(5, 3, 2.0),
        y in matrix(5, 4, 2.0),
        theta in 0.05..0.95f64,
        eta in 0.05..0.95f64,
    ) {
        let data = match Dataset::from_raw(&raw, y) {
            Ok(d) => d,
            Err(_) => return Ok(()),
        };
        let cfg = SslConfig::with_default_priors(5.0, 1.0, 4.0, 0.5, 3, 4);
        let params = ChainGraphParams::new(psi.clone(), omega.clone(), theta, eta).unwrap();
        let ours = model::log_posterior(&params, &data, &cfg).unwrap();
        let naive = naive_log_posterior(&psi, &omega, theta, eta, data.x(), data.y(), &cfg);
        prop_assert!((ours - naive).abs() <= 1e-10 * naive.abs().max(1.0), "{ours} vs {naive}");
    }

    #[test]
    fn marginal_coefficients_times_omega_is_psi(psi in matrix(3, 4, 2.0), omega in pd(4)) {
        let params = ChainGraphParams::new(psi.clone(), omega.clone(), 0.5, 0.5).unwrap();
        let b = marginal_coefficients(&params).unwrap();
        prop_assert!((b * omega - psi).amax() <= 1e-10);
    }

    #[test]
    fn standardize_is_idempotent(raw in matrix(6, 3, 10.0)) {
        if let Ok((x, _, _)) = standardize_design(&raw) {
            let (x2, centers, scales) = standardize_design(&x).unwrap();
            prop_assert!((x2 - &x).amax() <= 1e-12);
            prop_assert!(centers.amax() <= 1e-12);
            prop_assert!(scales.iter().all(|s| (s - 1.0).abs() <= 1e-12));
        }
    }

    #[test]
    fn condition_number_is_scale_invariant(r in matrix(6, 3, 3.0), c in 0.01..100.0f64) {
        let k1 = condition_number(&r).unwrap();
        let k2 = condition_number(&(&r * c)).unwrap();
        if k1.is_finite() && k1 < 1e8 {
            prop_assert!((k1 - k2).abs() <= 1e-10 * k1, "{k1} vs {k2}");
        }
    }

    #[test]
    fn psi_update_ascends_and_tracks_residual(
        raw in matrix(12, 3, 2.0),
        y in matrix(12, 3, 2.0),
        psi_init in sparse(3, 3),
        omega in pd(3),
        theta in 0.05..0.95f64,
        lambda0 in 2.0..40.0f64,
    ) {
        let (x, _, _) = match standardize_design(&raw) {
            Ok(t) => t,
            Err(_) => return Ok(()),
        };
        let cfg = SslConfig::with_default_priors(lambda0, 1.0, 5.0, 0.5, 3, 3);
        let opts = PsiSolveOptions::default();
        let fit = update_psi_matrices(&psi_init, theta, &omega, &x, &y, &cfg, &opts).unwrap();
        let before = psi_objective(&psi_init, theta, &omega, &x, &y, &cfg).unwrap();
        let after = psi_objective(&fit.psi, theta, &omega, &x, &y, &cfg).unwrap();
        prop_assert!(after >= before - 1e-9, "{after} < {before}");
        let exact = &y * &omega - &x * &fit.psi;
        prop_assert!((&fit.residual - exact).amax() <= 1e-8);

        let t = update_theta(&fit.psi, theta, &cfg, &opts);
        prop_assert!(theta_objective(&fit.psi, t, &cfg) >= theta_objective(&fit.psi, theta, &cfg) - 1e-12);
    }

    #[test]
    fn cgquic_invariants(s_half in matrix(6, 4, 1.0), m_half in matrix(3, 4, 1.0), xi in 0.01..0.5f64) {
        let s = s_half.transpose() * &s_half / 6.0 + DMatrix::identity(4, 4) * 0.1;
        let m = m_half.transpose() * &m_half / 3.0;
        let mut xi_m = DMatrix::from_element(4, 4, xi);
        xi_m.fill_diagonal(xi * 0.5);
        let opts = CgquicOptions::default();
        let mut fits = Vec::new();
        for scale in [1.0, 2.0] {
            let prob = CglassoProblem::new(s.clone(), m.clone(), xi_m.clone(), DMatrix::identity(4, 4) * scale).unwrap();
            let fit = cgquic::solve(&prob, &opts).unwrap();
            for w in fit.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            prop_assert!(cholesky(&fit.omega, "Ω").is_ok());
            prop_assert!(fit.omega == fit.omega.transpose());
            let sub = cgquic::min_norm_subgradient(&fit.omega, &prob).unwrap();
            prop_assert!(sub.amax() <= 1e-4);
            fits.push(fit.omega);
        }
        prop_assert!((&fits[0] - &fits[1]).amax() <= 1e-5);
    }

    #[test]
    fn support_counts_add_up(est in sparse(4, 5), truth in sparse(4, 5), off in any::<bool>()) {
        let m = support_metrics(&est, &truth, off).unwrap();
        let assessed = |mat: &DMatrix<f64>| {
            let mut count = 0;
            for j in 0..mat.ncols() {
                for i in 0..mat.nrows() {
                    if (!off || i > j) && mat[(i, j)] != 0.0 {
                        count += 1;
                    }
                }
            }
            count
        };
        prop_assert_eq!(m.tp + m.fn_, assessed(&truth));
        prop_assert_eq!(m.tp + m.fp, assessed(&est));
    }

    #[test]
    fn csv_round_trip_is_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(4, 3, &values);
        io::write_matrix_csv(&path, &m, &io::numbered_names("c", 3)).unwrap();
        let back = io::read_matrix_csv(&path).unwrap();
        prop_assert!(back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0)));
    }

    #[test]
    fn config_round_trip(
        method in prop_oneof![Just(FitMethod::Dpe), Just(FitMethod::Dcpe), Just(FitMethod::Single)],
        lambda1 in prop::option::of(0.01..5.0f64),
        ladder in prop::option::of(prop::collection::vec(1.0..1e4f64, 1..6)),
        ecm_tol in 1e-8..1e-1f64,
        max_iter in 1usize..1000,
    ) {
        let mut cfg = RunConfig { method, lambda1, lambda0: ladder, ..RunConfig::default() };
        cfg.ecm.ecm_tol = ecm_tol;
        cfg.ecm.max_ecm_iter = max_iter;
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn focal_selection_ignores_genus_order(
        counts in prop::collection::vec(0u32..200, 8 * 5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let mut values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        for i in 0..8 {
            values[i * 5] += 1.0;
        }
        let m = DMatrix::from_row_slice(8, 5, &values);
        let permuted = DMatrix::from_fn(8, 5, |i, g| m[(i, perm[g])]);
        let a = io::select_focal(&m, 0.1, 3).unwrap();
        let b: Vec<usize> = io::select_focal(&permuted, 0.1, 3).unwrap().into_iter().map(|g| perm[g]).collect();
        let mut b_sorted = b.clone();
        b_sorted.sort_unstable();
        prop_assert_eq!(a, b_sorted);
    }
}

#[test]
fn patterns_stay_positive_definite() {
    for q in [4, 10, 30] {
        for kind in OmegaKind::ALL {
            let omega = gen_omega(OmegaPattern::new(kind, q).unwrap()).unwrap();
            assert!(cholesky(&omega, "Ω").is_ok(), "{kind} at q = {q}");
        }
    }
}
