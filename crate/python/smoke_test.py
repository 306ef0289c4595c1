"""Quick checks of the Python bindings. Run with `python python/smoke_test.py`."""

import math

import numpy as np

import mqc_echo as mq


def check_echo():
    n, j = 6, 1000.0
    t_cat = mq.cat_time(n, j)
    assert abs(t_cat - math.pi * n / (4 * j)) < 1e-15

    r = mq.echo_sweep(n, j, 0.3 * t_cat)
    assert len(r.phi) == 4 * n + 4
    assert abs(r.fidelity[0] - 1.0) < 1e-12

    im, am = mq.spectra(n, j, t_cat)
    assert abs(im.get(0) - 0.5) < 1e-10
    assert abs(im.get(n) - 0.25) < 1e-10
    assert abs(im.total() - 1.0) < 1e-10

    # I_m against a numpy DFT of the sampled fidelity
    r = mq.echo_sweep(n, j, 0.4 * t_cat)
    im, _ = mq.spectra(n, j, 0.4 * t_cat)
    coeffs = np.fft.fft(r.fidelity) / len(r.fidelity)
    for m in range(-n, n + 1):
        assert abs(coeffs[-m].real - im.get(m)) < 1e-10, m

    assert abs(am.get(1)) < 1e-10
    assert abs(mq.i0_approx(2.0, 0.5) - 0.5) < 1e-15


def check_lindblad():
    rates = mq.DecoherenceRates(10.0, 10.0, 91.0)
    n, j, tau = 8, 1000.0, 5e-4
    r = mq.lindblad_echo(n, j, tau, rates)
    assert r.spectrum is not None
    assert 0.0 < r.purity < 1.0
    assert abs(r.fidelity[0] - r.purity) < 1e-9
    pure = mq.echo_sweep(n, j, tau)
    assert all(f <= p + 1e-12 for f, p in zip(r.fidelity, pure.fidelity))


def check_phonon():
    phis = list(np.linspace(0, 2 * math.pi, 8, endpoint=False))
    tau = 4e-4
    r = mq.phonon_sweep(20, 7450.0, tau, phis, delta_b=2 * math.pi * 40, samples=9, quadrature=True)
    clean = mq.phonon_sweep(20, 7450.0, tau, phis)
    assert r.fidelity[0] < clean.fidelity[0]
    assert abs(r.fidelity[4] - clean.fidelity[4]) < 1e-9
    assert all(s == 0.0 for s in r.fidelity_stderr)


def check_detection():
    p = mq.DetectionParams()
    total = sum(p.count_probability(k) for k in range(200))
    assert abs(total - 1.0) < 1e-12
    bins = mq.synthesize_histogram(0.7, p, 10_000, seed=3)
    assert sum(bins) == 10_000
    f, err = mq.fit_fidelity(bins, p)
    assert abs(f - 0.7) < 0.02 and err > 0
    assert mq.naive_fidelity(bins, p.threshold()) < f


def check_errors():
    try:
        mq.echo_sweep(0, 1.0, 1e-3)
    except ValueError:
        pass
    else:
        raise AssertionError("N=0 accepted")


if __name__ == "__main__":
    for f in (check_echo, check_lindblad, check_phonon, check_detection, check_errors):
        f()
        print(f"ok {f.__name__}")
    print("mqc_echo", mq.__version__)
