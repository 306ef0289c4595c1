// One PASS/FAIL line per acceptance criterion. Set MQC_UPDATE_GOLDEN=1 to
// rewrite the golden CSVs from the current build.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use mqc_echo::detect::{fit_fidelity, naive_fidelity, select_threshold, synthesize_histogram, BrightModel, DetectionParams};
use mqc_echo::lindblad::{mqc_with_decoherence, DecoherenceRates, EffectiveField};
use mqc_echo::phonon::{alpha_rwa, PhononParams};
use mqc_echo::protocol::{cat_time, coupling_from_drive, i0_approx, i0_exact, spectra, EchoSequence};
use mqc_echo_cli::verify::{self, Check, ORACLE_CASES};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn worst(checks: &[Check]) -> (bool, f64, Vec<String>) {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{} {}", c.name, c.detail)).collect();
    let max_ratio = checks.iter().map(|c| c.error / c.tolerance).fold(0.0, f64::max);
    (failed.is_empty(), max_ratio, failed)
}

fn timed(limit_s: f64, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let s = t.elapsed().as_secs_f64();
    if s > limit_s {
        o.passed = false;
    }
    o.detail = format!("{}; {s:.1} s (limit {limit_s} s)", o.detail);
    o
}

fn c1() -> Outcome {
    timed(120.0, || {
        let mut checks = Vec::new();
        for (n, j, tau) in ORACLE_CASES {
            checks.push(verify::fidelity_sweep(n, j, tau));
            checks.push(verify::magnetization_sweep(n, j, tau));
            checks.push(verify::mqc_spectrum(n, j, tau));
            checks.push(verify::otoc_spectrum(n, j, tau));
            checks.push(verify::lindblad_propagation(n, j, tau));
            checks.push(verify::lindblad_echo(n, j, tau));
        }
        let (ok, ratio, failed) = worst(&checks);
        outcome(ok, format!("{} checks at N=2,4,6, worst error/tolerance {ratio:.1e} {failed:?}", checks.len()))
    })
}

fn c2() -> Outcome {
    timed(1.0, || {
        let c = verify::cat_state(6);
        outcome(c.passed, format!("I_0=1/2, I_+-6=1/4, rest 0: max deviation {:.1e} (tol 1e-10)", c.error))
    })
}

fn c3() -> Outcome {
    let c = verify::sum_rule(20);
    outcome(c.passed, format!("20 cases N<=48, J tau<=1: max(|sum I_m - F_0|, 10 x odd) = {:.1e} (tol 1e-9)", c.error))
}

fn c4() -> Outcome {
    timed(30.0, || {
        let c = verify::locality();
        outcome(c.passed, format!("N=10 chains and k=3 graph: max |A_m| beyond bound {:.1e} (tol 1e-10)", c.error))
    })
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

fn c5() -> Outcome {
    let (n, j) = (16, 1000.0);
    // two decades of J tau, 1e-3 .. 1e-1
    let taus: Vec<f64> = (0..=10).map(|i| 1e-6 * 10f64.powf(0.2 * i as f64)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [2i64, 4] {
        let a: Vec<f64> = taus
            .iter()
            .map(|&t| spectra(&EchoSequence::new(n, j, t).unwrap()).unwrap().1.get(m).norm())
            .collect();
        let slope = log_log_slope(&taus, &a);
        ok &= slope >= (m - 1) as f64 - 0.15;
        parts.push(format!("m={m} slope {slope:.2} (>= {} - 0.15)", m - 1));
    }
    outcome(ok, parts.join(", "))
}

fn c6() -> Outcome {
    let (n, j) = (48, 2451.7);
    let mut dev: f64 = 0.0;
    for i in 1..=300 {
        let tau = 0.3 * i as f64 / 300.0 / j;
        let exact = i0_exact(n, j, tau).unwrap();
        dev = dev.max(((exact - i0_approx(j, tau)) / exact).abs());
    }
    outcome(dev <= 0.03, format!("N=48, J tau<=0.3: max relative deviation {:.2}% (limit 3%)", 100.0 * dev))
}

fn c7() -> Outcome {
    let n = 12;
    let rates = DecoherenceRates::new(14.0, 10.0, 91.0, 0.0).unwrap();
    let g = rates.total();
    let mut dev: f64 = 0.0;
    for j in [200.0, 1000.0, 2451.7] {
        for x in [0.1, 0.25, 0.5, 0.75, 1.0] {
            let tau = x / (n as f64 * g);
            let seq = EchoSequence::new(n, j, tau).unwrap();
            let r = mqc_with_decoherence(&seq, &rates, &EffectiveField::default()).unwrap();
            let i0 = r.spectrum.unwrap().get(0);
            let approx = i0_exact(n, j, tau).unwrap() * (-x).exp();
            dev = dev.max(((i0 - approx) / approx).abs());
        }
    }
    outcome(dev < 0.05, format!("N=12, N Gamma tau<=1: max relative deviation {:.2}% (limit 5%)", 100.0 * dev))
}

fn c8() -> Outcome {
    let j3 = coupling_from_drive(7850.0, 2.0 * TWO_PI / 1e-3);
    let f3 = 1e-3 / cat_time(48, j3).unwrap();
    let tau = 1.2e-3;
    let f4 = tau / cat_time(111, coupling_from_drive(7450.0, TWO_PI / tau)).unwrap();
    let e = [(j3 / 2451.7 - 1.0).abs(), (f3 / 0.065 - 1.0).abs(), (f4 / 0.073 - 1.0).abs()];
    outcome(
        e.iter().all(|&x| x <= 3e-3),
        format!("J={j3:.1} s^-1, tau/t_cat={:.2}% (N=48), {:.2}% (N=111); tol 0.3%", 100.0 * f3, 100.0 * f4),
    )
}

fn c9() -> Outcome {
    timed(300.0, || {
        let checks = vec![
            verify::phonon_kernels(0.0, false),
            verify::phonon_kernels(2.0, false),
            verify::phonon_kernels(2.0, true),
            verify::phonon_kernels(6.0, false),
        ];
        let (ok, _, failed) = worst(&checks);
        let err = checks.iter().map(|c| c.error).fold(0.0, f64::max);
        let tau = 1e-3;
        let p = PhononParams::experimental(7850.0, TWO_PI * 1.57e6, TWO_PI / tau, 6.0, tau);
        let rwa = alpha_rwa(&p, 48, tau, 0.0).norm();
        outcome(
            ok && rwa < 1e-12,
            format!("N=4, nbar 0/2/6: max |F|,|S_x| error {err:.1e} (tol 1e-5); RWA |alpha| at decoupling {rwa:.1e} {failed:?}"),
        )
    })
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("golden")
}

fn run_preset(sub: &str, preset: &str, out: &Path, workers: Option<usize>) -> Result<(Vec<u8>, f64), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simulate"));
    cmd.args([sub, "--preset", preset, "--out"]).arg(out).env_remove("SIMULATE_OUT_DIR");
    if let Some(w) = workers {
        cmd.args(["--workers", &w.to_string()]);
    }
    let t = Instant::now();
    let o = cmd.output().map_err(|e| e.to_string())?;
    let s = t.elapsed().as_secs_f64();
    if !o.status.success() {
        return Err(format!("{preset} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    let bytes = std::fs::read(out.join(format!("{preset}.csv"))).map_err(|e| e.to_string())?;
    Ok((bytes, s))
}

fn against_golden(preset: &str, bytes: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(format!("{preset}.csv"));
    if std::env::var_os("MQC_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let want = std::fs::read(&path).map_err(|_| format!("{} missing", path.display()))?;
    if want == bytes {
        Ok(())
    } else {
        Err(format!("{preset} differs from golden"))
    }
}

fn c10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    let presets = [("lindblad-run", "fig3b", 300.0), ("phonon-run", "fig4a", 900.0), ("phonon-run", "fig4b", 900.0)];
    let mut fig3b = Vec::new();
    for (sub, preset, limit) in presets {
        match run_preset(sub, preset, dir.path(), None) {
            Ok((bytes, s)) => {
                if s > limit {
                    ok = false;
                }
                notes.push(format!("{preset} {s:.0} s (limit {limit:.0})"));
                if let Err(e) = against_golden(preset, &bytes) {
                    ok = false;
                    notes.push(e);
                }
                if preset == "fig3b" {
                    fig3b = bytes;
                }
            }
            Err(e) => {
                ok = false;
                notes.push(e);
            }
        }
    }
    match run_preset("lindblad-run", "fig3b", &dir.path().join("rerun"), Some(1)) {
        Ok((bytes, _)) if bytes == fig3b => notes.push("fig3b rerun with 1 worker byte-identical".into()),
        Ok(_) => {
            ok = false;
            notes.push("fig3b rerun differs".into());
        }
        Err(e) => {
            ok = false;
            notes.push(e);
        }
    }
    outcome(ok, notes.join(", "))
}

fn c11() -> Outcome {
    let p = DetectionParams::default();
    let threshold = select_threshold(&p, 1).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, f) in [0.0, 0.3, 0.7, 0.95].into_iter().enumerate() {
        let h = synthesize_histogram(f, &p, BrightModel::default(), 10_000, 100 + i as u64).unwrap();
        let mle = fit_fidelity(&h, &p).unwrap().fidelity;
        let naive = naive_fidelity(&h, threshold);
        ok &= (mle - f).abs() < 0.02;
        if f > 0.0 {
            ok &= naive < mle;
        }
        parts.push(format!("F={f}: MLE {mle:.3}, naive {naive:.3}"));
    }
    outcome(ok, parts.join("; "))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", c1),
        ("cat-state spectrum", c2),
        ("sum rule and parity", c3),
        ("locality bound", c4),
        ("short-time scaling", c5),
        ("I_0 approximation", c6),
        ("decoherent fidelity scaling", c7),
        ("drive and cat-time numbers", c8),
        ("phonon closed forms", c9),
        ("figure reproduction", c10),
        ("detection closed loop", c11),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.passed {
            failures += 1;
        }
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
