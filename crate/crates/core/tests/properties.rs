use mqc_echo::bruteforce::{fidelity_spectrum_general, magnetization_otoc_general, CouplingMatrix};
use mqc_echo::lindblad::{mqc_with_decoherence, DecoherenceRates, EffectiveField};
use mqc_echo::protocol::{cat_time, coupling_from_drive, i0_approx, i0_exact, run_echo, spectra, uniform_phi_grid, EchoSequence};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn sum_rule_and_parity(n in 2usize..=48, jt in 0.0f64..=1.0, j in 50.0f64..3000.0) {
        let seq = EchoSequence::new(n, j, jt / j).unwrap();
        let (im, am) = spectra(&seq).unwrap();
        let f0 = run_echo(&seq.clone().with_phi_grid(vec![0.0])).unwrap().fidelity[0];
        prop_assert!((im.total() - f0).abs() < 1e-9);
        prop_assert!(im.odd_max() < 1e-10);
        prop_assert!(am.odd_max() < 1e-10);
    }
}

fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    num / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

#[test]
fn otoc_short_time_growth() {
    let n = 16;
    let j = 1000.0;
    let taus: Vec<f64> = (0..6).map(|i| 1e-4 * 1.5f64.powi(i)).collect();
    for m in [2i64, 4] {
        let a: Vec<f64> = taus
            .iter()
            .map(|&t| spectra(&EchoSequence::new(n, j, t).unwrap()).unwrap().1.get(m).norm())
            .collect();
        let slope = log_log_slope(&taus, &a);
        assert!(slope >= (m - 1) as f64 - 0.15, "m={m} slope={slope}");
    }
}

#[test]
fn gaussian_i0_estimate_at_short_times() {
    let n = 48;
    let j = 2451.7;
    for i in 1..=60 {
        let tau = 0.3 * i as f64 / 60.0 / j;
        let exact = i0_exact(n, j, tau).unwrap();
        assert!(((exact - i0_approx(j, tau)) / exact).abs() <= 0.03, "J tau={}", j * tau);
    }
}

#[test]
fn decoherent_i0_follows_collective_decay() {
    let n = 12;
    let rates = DecoherenceRates::new(14.0, 10.0, 91.0, 0.0).unwrap();
    let g = rates.total();
    for j in [200.0, 1000.0, 2451.7] {
        for x in [0.25, 0.5, 1.0] {
            let tau = x / (n as f64 * g);
            let seq = EchoSequence::new(n, j, tau).unwrap();
            let r = mqc_with_decoherence(&seq, &rates, &EffectiveField::default()).unwrap();
            let i0 = r.spectrum.unwrap().get(0);
            let approx = i0_exact(n, j, tau).unwrap() * (-x).exp();
            assert!(((i0 - approx) / approx).abs() < 0.05, "J={j} N Gamma tau={x}");
        }
    }
}

fn highest_order(orders: &[(i64, f64)]) -> i64 {
    orders.iter().filter(|(_, v)| v.abs() > 1e-10).map(|(m, _)| m.abs()).max().unwrap_or(0)
}

#[test]
fn local_couplings_bound_the_otoc_order() {
    let n = 10;
    let phis = uniform_phi_grid(2 * n + 4);
    let graphs = [
        (CouplingMatrix::chain(n, 1, 900.0), 2),
        (CouplingMatrix::chain(n, 2, 900.0), 4),
        (CouplingMatrix::regular(n, 3, 900.0).unwrap(), 4),
    ];
    for (g, bound) in graphs {
        for tau in [2e-4, 7e-4, 1.9e-3] {
            let am = magnetization_otoc_general(&g, tau, &phis).unwrap();
            assert!(am.max_beyond(bound) < 1e-10, "bound {bound} tau={tau}");
            let orders: Vec<(i64, f64)> = am.orders().map(|(m, v)| (m, v.norm())).collect();
            assert_eq!(highest_order(&orders), bound, "tau={tau}");
        }
    }
    // all-to-all reaches beyond any local bound
    let am = magnetization_otoc_general(&CouplingMatrix::all_to_all(n, 900.0), 1.9e-3, &phis).unwrap();
    assert!(am.max_beyond(4) > 1e-6);
    let im = fidelity_spectrum_general(&CouplingMatrix::chain(n, 1, 900.0), 1.9e-3, &phis).unwrap();
    assert!(im.odd_max() < 1e-10);
}

#[test]
fn experimental_drive_numbers() {
    let j3 = coupling_from_drive(7850.0, 4.0 * std::f64::consts::PI / 1e-3);
    assert!((j3 / 2451.7 - 1.0).abs() < 3e-3);
    let frac3 = 1e-3 / cat_time(48, j3).unwrap();
    assert!((frac3 / 0.065 - 1.0).abs() < 3e-3, "{frac3}");
    let tau = 1.2e-3;
    let j4 = coupling_from_drive(7450.0, 2.0 * std::f64::consts::PI / tau);
    let frac4 = tau / cat_time(111, j4).unwrap();
    assert!((frac4 / 0.073 - 1.0).abs() < 3e-3, "{frac4}");
}
