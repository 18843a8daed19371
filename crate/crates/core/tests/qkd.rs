use photonq::qkd::*;
use photonq::sorter::CrosstalkMatrix;
use proptest::prelude::*;
use std::time::Instant;

fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

#[test]
fn entropy_and_capacity_values() {
    assert!((shannon_entropy(&[0.75, 0.25]).unwrap() - 0.8113).abs() < 1e-4);
    assert!((channel_capacity(25) - 4.6439).abs() < 1e-4);
    assert_eq!(shannon_entropy(&[1.0, 0.0]).unwrap(), 0.0);
    assert!(shannon_entropy(&[0.5, 0.6]).is_err());
    assert!(shannon_entropy(&[-0.1, 1.1]).is_err());
}

#[test]
fn mutual_information_of_symmetric_channels() {
    for p in [0.0, 0.05, 0.2, 0.5] {
        let bsc = vec![vec![1.0 - p, p], vec![p, 1.0 - p]];
        let mi = mutual_information(&bsc, &[0.5, 0.5]).unwrap();
        assert!((mi - (1.0 - binary_entropy(p))).abs() < 1e-12, "p = {p}");
    }
    let ident: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    assert!((mutual_information(&ident, &[0.2; 5]).unwrap() - 5f64.log2()).abs() < 1e-12);
    assert!(mutual_information(&ident, &[0.5, 0.5]).is_err());
}

#[test]
fn intercept_resend_bound_values() {
    assert_eq!(intercept_resend_bound(2, 2).unwrap(), 0.25);
    assert!((intercept_resend_bound(2, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    for n in 2..10 {
        for m in 2..=3 {
            let want = (1.0 - 1.0 / m as f64) * (1.0 - 1.0 / n as f64);
            assert!((intercept_resend_bound(n, m).unwrap() - want).abs() < 1e-15);
        }
    }
    assert!(intercept_resend_bound(1, 2).is_err());
}

#[test]
fn monte_carlo_reproduces_intercept_resend_bound() {
    for (n, m) in [(2, 2), (2, 3), (3, 2), (3, 3), (5, 3), (7, 2)] {
        let cfg = ProtocolConfig::new(Protocol::Bb84, n, m, Eavesdropper::InterceptResend, 100_000, 11);
        let t0 = Instant::now();
        let t = run_bb84(&cfg).unwrap();
        assert!(t0.elapsed().as_secs_f64() < 5.0);
        let bound = intercept_resend_bound(n, m).unwrap();
        assert!((t.qber - bound).abs() < 0.01, "N = {n}, M = {m}: {} vs {bound}", t.qber);
        assert!((t.sift_ratio - 1.0 / m as f64).abs() < 0.01);
    }
}

#[test]
fn honest_runs_are_error_free() {
    for protocol in [Protocol::Bb84, Protocol::Ekert] {
        for (n, m) in [(2, 2), (3, 4), (4, 2), (5, 6)] {
            let t = run_protocol(&ProtocolConfig::new(protocol, n, m, Eavesdropper::None, 20_000, 3)).unwrap();
            assert_eq!(t.errors, 0, "{protocol:?} N = {n}, M = {m}");
            assert!((t.sift_ratio - 1.0 / m as f64).abs() < 0.02);
        }
    }
}

#[test]
fn ekert_detects_intercept_resend() {
    let t = run_ekert(&ProtocolConfig::new(Protocol::Ekert, 3, 2, Eavesdropper::InterceptResend, 50_000, 5)).unwrap();
    let bound = intercept_resend_bound(3, 2).unwrap();
    assert!((t.qber - bound).abs() < 0.02, "{} vs {bound}", t.qber);
}

#[test]
fn transcripts_are_reproducible() {
    let cfg = ProtocolConfig::new(Protocol::Bb84, 3, 3, Eavesdropper::InterceptResend, 5_000, 99);
    let a = run_bb84(&cfg).unwrap();
    let b = run_bb84(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let c = run_bb84(&ProtocolConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

/// Root of `h(e) + e·log2(N−1) − ½·log2 N` on a uniform scan of `(0, 1 − 1/N)`.
fn coherent_scan(n: usize) -> f64 {
    let nf = n as f64;
    let g = |e: f64| binary_entropy(e) + e * (nf - 1.0).log2() - 0.5 * nf.log2();
    let steps = 2_000_000;
    let hi = 1.0 - 1.0 / nf;
    (1..steps).map(|k| hi * k as f64 / steps as f64).find(|e| g(*e) >= 0.0).unwrap()
}

#[test]
fn coherent_attack_bound_values() {
    assert!((coherent_attack_bound(2) - 0.110).abs() < 0.005);
    assert!((coherent_attack_bound(16) - 0.290).abs() < 0.005);
    for n in [2, 4, 7, 16] {
        assert!((coherent_attack_bound(n) - coherent_scan(n)).abs() < 1e-6, "N = {n}");
    }
    let mut prev = 0.0;
    for n in 2..=64 {
        let e = coherent_attack_bound(n);
        assert!(e > prev, "not increasing at N = {n}");
        prev = e;
    }
}

#[test]
fn literal_coherent_bound_form() {
    let e2 = coherent_attack_bound_with(2, BoundForm::Literal).unwrap();
    assert!((e2 - 0.5f64.sqrt()).abs() < 1e-9, "{e2}");
    assert!(matches!(coherent_attack_bound_with(16, BoundForm::Literal), Err(QkdError::NoSolution(16))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mubs_are_flat_and_orthonormal(idx in 0usize..5, extra in 0usize..2) {
        let n = [2, 3, 5, 7, 11][idx];
        let m = (n + 1).min(3 + extra * (n - 1));
        let set = MubSet::new(n, m).unwrap();
        for i in 0..m {
            for s in 0..n {
                for j in 0..m {
                    for t in 0..n {
                        let p = set.overlap(i, s, j, t).norm_sqr();
                        let want = if i == j { if s == t { 1.0 } else { 0.0 } } else { 1.0 / n as f64 };
                        prop_assert!((p - want).abs() < 1e-4, "N={} ({},{}) ({},{}) {}", n, i, s, j, t, p);
                    }
                }
            }
        }
    }
}

#[test]
fn mub_construction_limits() {
    assert!(MubSet::new(4, 2).is_ok());
    assert!(MubSet::new(4, 3).is_err());
    assert!(MubSet::new(5, 7).is_err());
}

fn noisy_channel(n: usize, p_err: f64, loss: f64) -> CrosstalkMatrix {
    let labels: Vec<i32> = (0..n as i32).collect();
    let rows = (0..n)
        .map(|s| {
            let mut row: Vec<f64> = (0..n).map(|b| if b == s { (1.0 - p_err) * (1.0 - loss) } else { p_err * (1.0 - loss) / (n - 1) as f64 }).collect();
            row.push(loss);
            row
        })
        .collect();
    CrosstalkMatrix::new(labels.clone(), labels, rows).unwrap()
}

#[test]
fn channel_noise_sets_the_qber() {
    let ch = noisy_channel(5, 0.08, 0.3);
    let cfg = ProtocolConfig { channel: Some(ch), ..ProtocolConfig::new(Protocol::Bb84, 5, 2, Eavesdropper::None, 200_000, 1) };
    let t = run_bb84(&cfg).unwrap();
    assert!((t.qber - 0.08).abs() < 0.005, "{}", t.qber);
    // Loss acts on the matched half of the pulses only.
    assert!((t.detected as f64 / 200_000.0 - 0.85).abs() < 0.01);
    let wrong = ProtocolConfig { channel: Some(noisy_channel(3, 0.0, 0.0)), ..cfg };
    assert!(wrong.validate().is_err());
}

#[test]
fn decoy_analysis_flags_pns_only() {
    let base = ProtocolConfig {
        source: Source::default_decoy(),
        detection_efficiency: 0.2,
        dark_count: 1e-4,
        ..ProtocolConfig::new(Protocol::Bb84, 2, 2, Eavesdropper::None, 600_000, 21)
    };
    let honest = decoy_analysis(&base).unwrap();
    assert_eq!(honest.verdict, DecoyVerdict::Secure);
    for c in &honest.classes {
        let sigma = (c.expected_gain * (1.0 - c.expected_gain) / c.pulses as f64).sqrt();
        assert!((c.gain - c.expected_gain).abs() < 5.0 * sigma + 1e-12, "{c:?}");
    }
    let pns = decoy_analysis(&ProtocolConfig { eve: Eavesdropper::Pns, ..base.clone() }).unwrap();
    assert_eq!(pns.verdict, DecoyVerdict::Attack);
    assert!(decoy_analysis(&ProtocolConfig { source: Source::SinglePhoton, ..base }).is_err());
}

fn square_mask(n: usize, lo: usize, hi: usize) -> Reflectivity {
    let v = (0..n * n).map(|k| if (lo..hi).contains(&(k % n)) && (lo..hi).contains(&(k / n)) { 1.0 } else { 0.0 }).collect();
    Reflectivity::new(n, n, v).unwrap()
}

#[test]
fn secure_imaging_detects_spoofing() {
    let object = square_mask(16, 4, 12);
    let clean = secure_imaging_scan(&object, &ImagingAttack::None, 64, 1).unwrap();
    assert_eq!(clean.errors, 0);
    assert_eq!(clean.verdict, ImagingVerdict::Secure);
    assert_eq!(clean.received, object.values());
    let spoof = square_mask(16, 0, 6);
    let attacked = secure_imaging_scan(&object, &ImagingAttack::Spoof { image: spoof.clone(), state: Polarization::H }, 64, 1).unwrap();
    assert!((attacked.overall_error - 0.5).abs() < 0.02, "{}", attacked.overall_error);
    assert_eq!(attacked.verdict, ImagingVerdict::Compromised);
    assert_eq!(attacked.received, spoof.values());
    assert!(Reflectivity::new(2, 2, vec![0.0, 1.5, 0.0, 0.0]).is_err());
}
