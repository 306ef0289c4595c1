// Field noise costs fidelity near phi=0 and none at phi=pi; COM noise does
// the opposite.

use std::f64::consts::PI;

use mqc_echo::phonon::{phonon_sweep, NoiseMode, NoiseParams, Observable, PhononParams, ScatteringDecay};

const OMEGA_Z: f64 = 2.0 * PI * 1.57e6;

fn sweep(n: usize, omega0: f64, tau: f64, delta_com: f64, delta_b: f64, obs: Observable) -> Vec<f64> {
    let p = PhononParams::experimental(omega0, OMEGA_Z, 2.0 * PI / tau, 6.0, tau);
    let noise = NoiseParams {
        delta_com,
        delta_b,
        sample_count: 16,
        rng_seed: 0,
        mode: NoiseMode::Quadrature,
    };
    let r = phonon_sweep(n, &p, tau, &[0.0, PI], &noise, ScatteringDecay { gamma: 0.0 }, false, &[obs]).unwrap();
    let v = match obs {
        Observable::Fidelity => r.fidelity.unwrap(),
        Observable::Magnetization => r.magnetization.unwrap(),
    };
    v.iter().map(|a| a.mean).collect()
}

#[test]
fn field_noise_spares_phi_pi() {
    let tau = 6e-4;
    let clean = sweep(48, 7850.0, tau, 0.0, 0.0, Observable::Fidelity);
    let noisy = sweep(48, 7850.0, tau, 0.0, 2.0 * PI * 40.0, Observable::Fidelity);
    assert!(clean[0] - noisy[0] > 0.05, "{clean:?} {noisy:?}");
    assert!((clean[1] - noisy[1]).abs() < 1e-9, "{clean:?} {noisy:?}");

    let clean = sweep(111, 7450.0, 1.2e-3, 0.0, 0.0, Observable::Magnetization);
    let noisy = sweep(111, 7450.0, 1.2e-3, 0.0, 2.0 * PI * 40.0, Observable::Magnetization);
    assert!(clean[0] - noisy[0] > 0.05, "{clean:?} {noisy:?}");
    assert!((clean[1] - noisy[1]).abs() < 1e-9, "{clean:?} {noisy:?}");
}

#[test]
fn com_noise_hits_phi_pi_harder() {
    let tau = 6e-4;
    let clean = sweep(48, 7850.0, tau, 0.0, 0.0, Observable::Fidelity);
    let noisy = sweep(48, 7850.0, tau, 8e-5 * OMEGA_Z, 0.0, Observable::Fidelity);
    let dip0 = clean[0] - noisy[0];
    let dip_pi = clean[1] - noisy[1];
    assert!(dip_pi > 1.5 * dip0, "dip at 0 {dip0:e}, at pi {dip_pi:e}");
}
