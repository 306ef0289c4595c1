// Symmetric engines against the full 2^N brute-force module.

use mqc_echo::bruteforce::{coherence_sectors, echo_general, lindblad_full, rotate_all, to_x_basis, CouplingMatrix, FullState};
use mqc_echo::lindblad::{mqc_with_decoherence, propagate, DecoherenceRates, EffectiveField, SymmetricDensityState};
use mqc_echo::protocol::{forward_state, run_echo, spectra, EchoSequence};
use mqc_echo::{Axis, CorrelationSpectrum, IsingParams};
use nalgebra::DMatrix;
use num_complex::Complex64;

const CASES: [(usize, f64, f64); 3] = [(2, 310.0, 1.7e-3), (4, 520.0, 0.9e-3), (6, 2451.7, 0.4e-3)];

fn rates() -> DecoherenceRates {
    DecoherenceRates::new(14.0, 10.0, 91.0, 0.0).unwrap()
}

fn plus_density(n: usize) -> DMatrix<Complex64> {
    FullState::plus_state(n).unwrap().to_density().unwrap()
}

// <+...+| rho |+...+> and (1/N) sum_i <sigma_x^i> from the x-basis diagonal
fn mixed_observables(rho: &DMatrix<Complex64>, n: usize) -> (f64, f64) {
    let x = to_x_basis(rho, n);
    let mut m = 0.0;
    for a in 0..x.nrows() {
        let up = n as f64 - 2.0 * a.count_ones() as f64;
        m += x[(a, a)].re * up;
    }
    (x[(0, 0)].re, m / n as f64)
}

#[test]
fn unitary_sweeps_match_brute_force() {
    for (n, j, tau) in CASES {
        let seq = EchoSequence::new(n, j, tau).unwrap();
        let sym = run_echo(&seq).unwrap();
        let pairs = CouplingMatrix::all_to_all(n, j);
        for (i, &phi) in sym.phi.iter().enumerate() {
            let full = echo_general(&pairs, tau, phi, None).unwrap();
            assert!((sym.fidelity[i] - full.fidelity).abs() < 1e-8, "N={n} phi={phi}");
            assert!((sym.magnetization[i] - full.magnetization).abs() < 1e-8, "N={n} phi={phi}");
        }
    }
}

#[test]
fn spectra_match_brute_force() {
    for (n, j, tau) in CASES {
        let seq = EchoSequence::new(n, j, tau).unwrap();
        let (im, am) = spectra(&seq).unwrap();
        // I_m straight from the forward state's coherence sectors
        let psi = forward_state(&seq).unwrap();
        let direct = coherence_sectors(&FullState::from_dicke(&psi).unwrap()).unwrap();
        for m in -(n as i64)..=(n as i64) {
            assert!((im.get(m) - direct.get(m)).abs() < 1e-8, "N={n} m={m}");
        }
        let pairs = CouplingMatrix::all_to_all(n, j);
        let full_am: CorrelationSpectrum =
            mqc_echo::bruteforce::magnetization_otoc_general(&pairs, tau, &seq.phi_grid).unwrap();
        for m in -(n as i64)..=(n as i64) {
            assert!((am.get(m) - full_am.get(m)).norm() < 1e-8, "N={n} m={m}");
        }
    }
}

#[test]
fn lindblad_propagation_matches_full_master_equation() {
    for (n, j, tau) in CASES {
        let ising = IsingParams::new(j, n).unwrap();
        let field = EffectiveField { b: 23.0 };
        let start = SymmetricDensityState::from_dense(&rotate_all(
            &FullState::mixed(n, plus_density(n)).unwrap(),
            Axis::Y,
            0.4,
        )
        .to_density()
        .unwrap())
        .unwrap();
        let sym = propagate(&start, &ising, &field, &rates(), 3.0 * tau).unwrap().to_dense().unwrap();
        let full = lindblad_full(&start.to_dense().unwrap(), &CouplingMatrix::all_to_all(n, j), &rates(), field, 3.0 * tau).unwrap();
        let diff = (&sym - &full).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-7, "N={n} diff={diff:e}");
    }
}

#[test]
fn decoherent_echo_matches_full_master_equation() {
    for (n, j, tau) in CASES {
        let seq = EchoSequence::new(n, j, 4.0 * tau).unwrap();
        let sym = mqc_with_decoherence(&seq, &rates(), &EffectiveField::default()).unwrap();
        let fwd = CouplingMatrix::all_to_all(n, j);
        let bwd = CouplingMatrix::all_to_all(n, -j);
        let rho1 = lindblad_full(&plus_density(n), &fwd, &rates(), EffectiveField::default(), seq.arm_time).unwrap();
        for (i, &phi) in seq.phi_grid.iter().enumerate() {
            let rot = rotate_all(&FullState::mixed(n, rho1.clone()).unwrap(), Axis::X, phi);
            let rho2 = lindblad_full(&rot.to_density().unwrap(), &bwd, &rates(), EffectiveField::default(), seq.arm_time).unwrap();
            let (f, m) = mixed_observables(&rho2, n);
            assert!((sym.fidelity[i].1 - f).abs() < 1e-7, "N={n} phi={phi}");
            assert!((sym.magnetization[i].1 - m).abs() < 1e-7, "N={n} phi={phi}");
        }
    }
}

#[test]
fn cat_state_has_three_sectors() {
    let n = 6;
    let j = 1000.0;
    let t_cat = std::f64::consts::PI * n as f64 / (4.0 * j);
    let seq = EchoSequence::new(n, j, t_cat).unwrap();
    let psi = forward_state(&seq).unwrap();
    let direct = coherence_sectors(&FullState::from_dicke(&psi).unwrap()).unwrap();
    let (im, _) = spectra(&seq).unwrap();
    for m in -6i64..=6 {
        let want = match m {
            0 => 0.5,
            6 | -6 => 0.25,
            _ => 0.0,
        };
        assert!((direct.get(m) - want).abs() < 1e-10, "m={m}");
        assert!((im.get(m) - want).abs() < 1e-10, "m={m}");
    }
}
