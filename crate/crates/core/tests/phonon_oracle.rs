use mqc_echo::bruteforce::{spin_boson_evolve, SpinBosonSequence};
use mqc_echo::phonon::{EchoArms, NoiseSample, PhononKernel, PhononParams};

fn params(nbar: f64) -> PhononParams {
    PhononParams {
        omega0: 2.4,
        omega_z: 25.0,
        delta: 6.0,
        phi1: 0.3,
        phi2: 1.1,
        nbar,
        t_pi: 0.0,
    }
}

fn compare(nbar: f64, mid_arm_echo: bool) -> f64 {
    let n = 4;
    let p = params(nbar);
    let tau = 1.3;
    let sample = NoiseSample { delta_omega_z: 0.7, b: 0.4 };
    let phis = vec![0.0, 1.2, std::f64::consts::PI, 4.4];
    let seq = SpinBosonSequence { tau, phis: phis.clone(), sample, mid_arm_echo };
    let oracle = spin_boson_evolve(n, &p, (10.0 * (nbar + 1.0)).max(40.0) as usize, &seq).unwrap();
    let arms = EchoArms::protocol(n, &p, tau, sample, mid_arm_echo);
    let kernel = PhononKernel::new(n, &phis).unwrap();
    let f = kernel.fidelity(&arms, nbar);
    let s = kernel.sx(&arms, nbar);
    let mut worst: f64 = 0.0;
    for i in 0..phis.len() {
        worst = worst.max((f[i] - oracle.fidelity[i]).abs()).max((s[i] - oracle.sx[i]).abs());
    }
    worst
}

#[test]
fn thermal_kernels_match_truncated_fock() {
    for (nbar, echo) in [(0.0, false), (2.0, false), (2.0, true), (6.0, false)] {
        let d = compare(nbar, echo);
        assert!(d < 1e-5, "nbar {nbar} echo {echo}: {d:e}");
    }
}
