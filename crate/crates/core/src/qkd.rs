//! Information measures, eavesdropping bounds and Monte-Carlo simulation of
//! high-dimensional BB84 and Ekert QKD, decoy states and secured imaging.
//!
//! Every pulse draws from its own ChaCha8 stream selected by the pulse index,
//! and all reductions are integer counts, so results do not depend on how
//! rayon schedules the work.

use crate::sorter::CrosstalkMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QkdError {
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("no solution in (0, 1) for N = {0}")]
    NoSolution(usize),
}

const NORM_TOL: f64 = 1e-9;

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

fn check_distribution(p: &[f64]) -> Result<(), QkdError> {
    if p.is_empty() {
        return Err(QkdError::InvalidDistribution("empty".into()));
    }
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(QkdError::InvalidDistribution(format!("entry {v} is negative or non-finite")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(QkdError::InvalidDistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// `H = −Σ p log2 p` in bits, with `0·log 0 = 0`.
pub fn shannon_entropy(probs: &[f64]) -> Result<f64, QkdError> {
    check_distribution(probs)?;
    Ok(probs.iter().map(|p| plogp(*p)).sum())
}

/// `log2(N)` bits per photon.
pub fn channel_capacity(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (n as f64).log2()
}

/// `I(X;Y) = H(Y) − H(Y|X)` for a row-stochastic `P(y|x)` and prior `P(x)`.
pub fn mutual_information(conditional: &[Vec<f64>], prior: &[f64]) -> Result<f64, QkdError> {
    if conditional.len() != prior.len() {
        return Err(QkdError::ShapeMismatch(format!("{} rows but {} prior entries", conditional.len(), prior.len())));
    }
    check_distribution(prior)?;
    let width = conditional.first().map_or(0, Vec::len);
    let mut py = vec![0.0; width];
    let mut h_cond = 0.0;
    for (row, px) in conditional.iter().zip(prior) {
        if row.len() != width {
            return Err(QkdError::ShapeMismatch("rows differ in length".into()));
        }
        check_distribution(row)?;
        for (acc, p) in py.iter_mut().zip(row) {
            *acc += px * p;
        }
        h_cond += px * row.iter().map(|p| plogp(*p)).sum::<f64>();
    }
    Ok((py.iter().map(|p| plogp(*p)).sum::<f64>() - h_cond).max(0.0))
}

fn binary_entropy(e: f64) -> f64 {
    plogp(e) + plogp(1.0 - e)
}

/// Error Eve introduces by intercept-resend: `(1 − 1/M)(1 − 1/N)`.
pub fn intercept_resend_bound(n: usize, m: usize) -> Result<f64, QkdError> {
    if n < 2 || m < 2 || m > n + 1 {
        return Err(QkdError::Domain(format!("need N ≥ 2 and 2 ≤ M ≤ N+1, got N={n}, M={m}")));
    }
    Ok((1.0 - 1.0 / m as f64) * (1.0 - 1.0 / n as f64))
}

/// Form of the coherent-attack condition to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundForm {
    /// `h(e) + e·log2(N−1) = ½·log2(N)`.
    Corrected,
    /// `(1−e)·log2(e) + e·log2(e/(N−1)) = −½·log2(N)`, exactly as typeset;
    /// it has no root for most N.
    Literal,
}

/// Largest tolerable error under finite coherent attacks.
pub fn coherent_attack_bound(n: usize) -> f64 {
    coherent_attack_bound_with(n, BoundForm::Corrected).expect("corrected form always has a root for N ≥ 2")
}

/// Smallest root in `(0, 1)` of the chosen condition, by bisection to 1e-12.
pub fn coherent_attack_bound_with(n: usize, form: BoundForm) -> Result<f64, QkdError> {
    if n < 2 {
        return Err(QkdError::Domain(format!("need N ≥ 2, got {n}")));
    }
    let l = (n as f64 - 1.0).log2();
    let target = 0.5 * (n as f64).log2();
    let g = |e: f64| match form {
        BoundForm::Corrected => binary_entropy(e) + e * l - target,
        BoundForm::Literal => (1.0 - e) * e.log2() + e * (e.log2() - l) + target,
    };
    // Bracket the first sign change on a fine scan, then bisect.
    let steps = 4096;
    let mut lo = 1e-12;
    let mut glo = g(lo);
    for k in 1..=steps {
        let hi = (k as f64 / steps as f64).min(1.0 - 1e-12);
        let ghi = g(hi);
        if glo == 0.0 {
            return Ok(lo);
        }
        if glo.signum() != ghi.signum() {
            let (mut a, mut b) = (lo, hi);
            while b - a > 1e-12 {
                let mid = 0.5 * (a + b);
                if g(mid).signum() == glo.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(0.5 * (a + b));
        }
        lo = hi;
        glo = ghi;
    }
    Err(QkdError::NoSolution(n))
}

// ---------------------------------------------------------------------------
// Mutually unbiased bases
// ---------------------------------------------------------------------------

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

/// `M` mutually unbiased bases in dimension `N`: basis 0 is computational,
/// basis `j ≥ 1` has vectors `N^{-1/2}·ω^{s·k + (j−1)·k²}` (for `N = 2` the
/// twist is `i^{(j−1)k²}`). More than two bases requires prime `N`.
#[derive(Debug, Clone)]
pub struct MubSet {
    n: usize,
    m: usize,
    vectors: Vec<Vec<Vec<Complex64>>>,
    /// `|⟨i,s|j,t⟩|²` cumulative over `t`, indexed `[(i·M + j)·N + s]`.
    cumulative: Vec<Vec<f64>>,
}

impl MubSet {
    pub fn new(n: usize, m: usize) -> Result<Self, QkdError> {
        if n < 2 || m < 2 || m > n + 1 {
            return Err(QkdError::Domain(format!("need N ≥ 2 and 2 ≤ M ≤ N+1, got N={n}, M={m}")));
        }
        if m > 2 && !is_prime(n) {
            return Err(QkdError::Domain(format!("M = {m} > 2 bases need prime N, got {n}")));
        }
        let norm = 1.0 / (n as f64).sqrt();
        let mut vectors: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(m);
        vectors.push(
            (0..n).map(|s| (0..n).map(|k| Complex64::new(if k == s { 1.0 } else { 0.0 }, 0.0)).collect()).collect(),
        );
        for j in 1..m {
            let twist = (j - 1) as f64;
            let basis = (0..n)
                .map(|s| {
                    (0..n)
                        .map(|k| {
                            let (k_f, s_f, n_f) = (k as f64, s as f64, n as f64);
                            let quad = if n == 2 { PI / 2.0 * twist * k_f * k_f } else { 2.0 * PI * twist * k_f * k_f / n_f };
                            Complex64::from_polar(norm, 2.0 * PI * s_f * k_f / n_f + quad)
                        })
                        .collect()
                })
                .collect();
            vectors.push(basis);
        }
        let mut cumulative = Vec::with_capacity(m * m * n);
        for i in 0..m {
            for j in 0..m {
                for s in 0..n {
                    let mut acc = 0.0;
                    let row = (0..n)
                        .map(|t| {
                            acc += overlap(&vectors[i][s], &vectors[j][t]).norm_sqr();
                            acc
                        })
                        .collect();
                    cumulative.push(row);
                }
            }
        }
        Ok(Self { n, m, vectors, cumulative })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }
    pub fn count(&self) -> usize {
        self.m
    }
    pub fn vector(&self, basis: usize, symbol: usize) -> &[Complex64] {
        &self.vectors[basis][symbol]
    }

    /// `⟨i,s|j,t⟩`.
    pub fn overlap(&self, i: usize, s: usize, j: usize, t: usize) -> Complex64 {
        overlap(&self.vectors[i][s], &self.vectors[j][t])
    }

    /// Born-rule outcome `t` when measuring `|i,s⟩` in basis `j`.
    fn measure(&self, i: usize, s: usize, j: usize, u: f64) -> usize {
        let row = &self.cumulative[(i * self.m + j) * self.n + s];
        let total = row[self.n - 1];
        row.partition_point(|c| *c <= u * total).min(self.n - 1)
    }
}

fn overlap(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

// ---------------------------------------------------------------------------
// Protocol configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Bb84,
    Ekert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eavesdropper {
    None,
    InterceptResend,
    /// Photon-number splitting on a weak coherent source.
    Pns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    SinglePhoton,
    /// Weak coherent pulses; each pulse picks one mean photon number with
    /// equal probability. Three intensities are read as vacuum, decoy, signal.
    Poisson { intensities: Vec<f64> },
}

impl Source {
    /// Vacuum, weak decoy `ν = 0.1` and signal `μ = 0.5`.
    pub fn default_decoy() -> Self {
        Source::Poisson { intensities: vec![0.0, 0.1, 0.5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityClass {
    Vacuum,
    Decoy,
    Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub dimension: usize,
    pub mub_count: usize,
    pub protocol: Protocol,
    pub source: Source,
    pub eve: Eavesdropper,
    pub pulses: u64,
    pub seed: u64,
    /// Physical channel for matched-basis transmissions; `None` is ideal.
    #[serde(default)]
    pub channel: Option<CrosstalkMatrix>,
    #[serde(default = "one")]
    pub detection_efficiency: f64,
    /// Probability of a dark count in a detection window with no photon.
    #[serde(default)]
    pub dark_count: f64,
    /// Fraction of single-photon pulses a PNS eavesdropper blocks.
    #[serde(default = "one")]
    pub pns_block_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol, dimension: usize, mub_count: usize, eve: Eavesdropper, pulses: u64, seed: u64) -> Self {
        Self {
            dimension,
            mub_count,
            protocol,
            source: Source::SinglePhoton,
            eve,
            pulses,
            seed,
            channel: None,
            detection_efficiency: 1.0,
            dark_count: 0.0,
            pns_block_fraction: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), QkdError> {
        let bad = |s: String| Err(QkdError::InvalidConfig(s));
        if self.dimension < 2 {
            return bad(format!("dimension {} < 2", self.dimension));
        }
        if self.mub_count < 2 || self.mub_count > self.dimension + 1 {
            return bad(format!("mub_count {} outside [2, N+1]", self.mub_count));
        }
        if self.mub_count > 2 && !is_prime(self.dimension) {
            return bad(format!("{} bases need prime dimension, got {}", self.mub_count, self.dimension));
        }
        if self.pulses == 0 {
            return bad("pulses must be positive".into());
        }
        for (name, v) in [
            ("detection_efficiency", self.detection_efficiency),
            ("dark_count", self.dark_count),
            ("pns_block_fraction", self.pns_block_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if let Some(c) = &self.channel {
            if c.send_labels().len() != self.dimension || c.bin_labels().len() != self.dimension {
                return bad(format!("channel matrix is {}×{}, dimension is {}", c.send_labels().len(), c.bin_labels().len(), self.dimension));
            }
        }
        match &self.source {
            Source::SinglePhoton => {
                if self.eve == Eavesdropper::Pns {
                    return bad("PNS attack needs a poisson source".into());
                }
            }
            Source::Poisson { intensities } => {
                if intensities.is_empty() || intensities.len() > 3 {
                    return bad("poisson source needs 1 to 3 intensities".into());
                }
                if intensities.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                    return bad("intensities must be finite and non-negative".into());
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub alice_basis: u32,
    pub alice_symbol: u32,
    pub intensity_class: IntensityClass,
    pub eve_basis: Option<u32>,
    pub eve_symbol: Option<u32>,
    pub photon_count: u32,
    pub bob_basis: u32,
    /// Raw outcome; `None` means no detection.
    pub bob_symbol: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub protocol: Protocol,
    pub dimension: usize,
    pub records: Vec<PulseRecord>,
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
    pub qber: f64,
    pub sift_ratio: f64,
}

impl Transcript {
    /// `pulse,alice_basis,alice_symbol,class,eve_basis,eve_symbol,photons,bob_basis,bob_symbol`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<u32>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("pulse,alice_basis,alice_symbol,class,eve_basis,eve_symbol,photons,bob_basis,bob_symbol\n");
        for (k, r) in self.records.iter().enumerate() {
            let class = match r.intensity_class {
                IntensityClass::Vacuum => "vacuum",
                IntensityClass::Decoy => "decoy",
                IntensityClass::Signal => "signal",
            };
            s.push_str(&format!(
                "{k},{},{},{class},{},{},{},{},{}\n",
                r.alice_basis,
                r.alice_symbol,
                opt(r.eve_basis),
                opt(r.eve_symbol),
                r.photon_count,
                r.bob_basis,
                opt(r.bob_symbol)
            ));
        }
        s
    }
}

/// Key symbol Bob infers from a raw Ekert outcome: OAM outcomes are
/// anti-correlated with Alice's, the other bases index-correlated.
fn ekert_key(basis: u32, raw: u32, n: usize) -> u32 {
    if basis == 0 {
        ((n as u32) - raw) % n as u32
    } else {
        raw
    }
}

pub(crate) fn pulse_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Simulator<'a> {
    cfg: &'a ProtocolConfig,
    mubs: MubSet,
    channel_cum: Option<Vec<Vec<f64>>>,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a ProtocolConfig) -> Result<Self, QkdError> {
        cfg.validate()?;
        let mubs = MubSet::new(cfg.dimension, cfg.mub_count)?;
        let channel_cum = cfg.channel.as_ref().map(|c| {
            c.rows()
                .iter()
                .map(|r| {
                    let mut acc = 0.0;
                    r.iter().map(|p| {
                        acc += p;
                        acc
                    }).collect()
                })
                .collect()
        });
        Ok(Self { cfg, mubs, channel_cum })
    }

    fn pulse(&self, index: u64) -> PulseRecord {
        let cfg = self.cfg;
        let (n, m) = (cfg.dimension, cfg.mub_count);
        let mut rng = pulse_rng(cfg.seed, index);
        let alice_basis = rng.random_range(0..m);
        let alice_symbol = rng.random_range(0..n);
        let (class, mean) = match &cfg.source {
            Source::SinglePhoton => (IntensityClass::Signal, None),
            Source::Poisson { intensities } => {
                let k = rng.random_range(0..intensities.len());
                let class = match (intensities.len(), k) {
                    (1, _) => IntensityClass::Signal,
                    (2, 0) => IntensityClass::Decoy,
                    (2, _) => IntensityClass::Signal,
                    (_, 0) => IntensityClass::Vacuum,
                    (_, 1) => IntensityClass::Decoy,
                    _ => IntensityClass::Signal,
                };
                (class, Some(intensities[k]))
            }
        };
        let photons = match mean {
            None => 1u32,
            Some(mu) if mu > 0.0 => Poisson::new(mu).expect("positive mean").sample(&mut rng) as u32,
            Some(_) => 0,
        };

        let mut state = (alice_basis, alice_symbol);
        let (mut eve_basis, mut eve_symbol) = (None, None);
        let mut arriving = photons;
        match cfg.eve {
            Eavesdropper::None => {}
            Eavesdropper::InterceptResend => {
                let b = rng.random_range(0..m);
                let s = self.mubs.measure(state.0, state.1, b, rng.random());
                eve_basis = Some(b as u32);
                eve_symbol = Some(s as u32);
                state = (b, s);
            }
            Eavesdropper::Pns => {
                let u: f64 = rng.random();
                if photons >= 2 {
                    arriving = photons - 1;
                } else if photons == 1 && u < cfg.pns_block_fraction {
                    arriving = 0;
                }
            }
        }

        let bob_basis = rng.random_range(0..m);
        let u_detect: f64 = rng.random();
        let u_outcome: f64 = rng.random();
        let p_detect = 1.0 - (1.0 - cfg.detection_efficiency).powi(arriving as i32);
        let mut outcome = None;
        if u_detect < p_detect {
            outcome = match (&self.channel_cum, bob_basis == state.0) {
                (Some(cum), true) => {
                    let row = &cum[state.1];
                    let t = row.partition_point(|c| *c <= u_outcome * row[n]);
                    (t < n).then_some(t)
                }
                _ => Some(self.mubs.measure(state.0, state.1, bob_basis, u_outcome)),
            };
        }
        if outcome.is_none() && cfg.dark_count > 0.0 && u_detect >= p_detect {
            let u: f64 = rng.random();
            if u < cfg.dark_count {
                outcome = Some(rng.random_range(0..n));
            }
        }
        let bob_symbol = outcome.map(|t| match cfg.protocol {
            Protocol::Bb84 => t as u32,
            // Raw OAM outcome of Bob's twin photon is −t.
            Protocol::Ekert if bob_basis == 0 => ((n - t) % n) as u32,
            Protocol::Ekert => t as u32,
        });
        PulseRecord {
            alice_basis: alice_basis as u32,
            alice_symbol: alice_symbol as u32,
            intensity_class: class,
            eve_basis,
            eve_symbol,
            photon_count: photons,
            bob_basis: bob_basis as u32,
            bob_symbol,
        }
    }

    fn records(&self) -> Vec<PulseRecord> {
        (0..self.cfg.pulses).into_par_iter().map(|i| self.pulse(i)).collect()
    }
}

fn sift(cfg: &ProtocolConfig, records: Vec<PulseRecord>) -> Transcript {
    let n = cfg.dimension;
    let (mut detected, mut sifted, mut errors) = (0u64, 0u64, 0u64);
    for r in &records {
        let Some(raw) = r.bob_symbol else { continue };
        detected += 1;
        if r.bob_basis != r.alice_basis {
            continue;
        }
        sifted += 1;
        let key = match cfg.protocol {
            Protocol::Bb84 => raw,
            Protocol::Ekert => ekert_key(r.bob_basis, raw, n),
        };
        if key != r.alice_symbol {
            errors += 1;
        }
    }
    Transcript {
        protocol: cfg.protocol,
        dimension: n,
        records,
        detected,
        sifted,
        errors,
        qber: if sifted > 0 { errors as f64 / sifted as f64 } else { 0.0 },
        sift_ratio: sifted as f64 / cfg.pulses as f64,
    }
}

/// Prepare-and-measure BB84 in `N` dimensions over `M` mutually unbiased bases.
pub fn run_bb84(cfg: &ProtocolConfig) -> Result<Transcript, QkdError> {
    if cfg.protocol != Protocol::Bb84 {
        return Err(QkdError::InvalidConfig("run_bb84 needs protocol = bb84".into()));
    }
    let sim = Simulator::new(cfg)?;
    Ok(sift(cfg, sim.records()))
}

/// Entanglement-based protocol with the source state `Σ_ℓ |ℓ⟩|−ℓ⟩/√N`.
///
/// Bob measures the conjugate family `B_{j,t}[k] = conj(A_{j,t}[−k])`, so
/// matched bases are perfectly correlated: in OAM his raw outcome is the
/// negated label, in the DFT basis it equals Alice's index. The joint
/// distribution is `|⟨A_{i,s}|A_{j,t}⟩|²/N`, which is sampled by drawing
/// Alice's outcome uniformly and Bob's conditionally. An eavesdropper acts on
/// Bob's photon.
pub fn run_ekert(cfg: &ProtocolConfig) -> Result<Transcript, QkdError> {
    if cfg.protocol != Protocol::Ekert {
        return Err(QkdError::InvalidConfig("run_ekert needs protocol = ekert".into()));
    }
    if cfg.source != Source::SinglePhoton {
        return Err(QkdError::InvalidConfig("ekert source emits single pairs".into()));
    }
    let sim = Simulator::new(cfg)?;
    Ok(sift(cfg, sim.records()))
}

pub fn run_protocol(cfg: &ProtocolConfig) -> Result<Transcript, QkdError> {
    match cfg.protocol {
        Protocol::Bb84 => run_bb84(cfg),
        Protocol::Ekert => run_ekert(cfg),
    }
}

// ---------------------------------------------------------------------------
// Decoy states
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGain {
    pub class: IntensityClass,
    pub intensity: f64,
    pub pulses: u64,
    pub detections: u64,
    pub gain: f64,
    /// Gain predicted by the channel model without an eavesdropper.
    pub expected_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoyVerdict {
    Secure,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyReport {
    pub classes: Vec<ClassGain>,
    /// Lower bound on the single-photon yield from the measured gains.
    pub single_photon_yield: f64,
    /// Same bound evaluated on the model gains.
    pub expected_single_photon_yield: f64,
    /// Five standard deviations of the measured bound.
    pub tolerance: f64,
    pub verdict: DecoyVerdict,
}

/// `Y1 ≥ μ/(μν−ν²)·(Q_ν e^ν − Q_μ e^μ ν²/μ² − (μ²−ν²)/μ²·Q_0)` and its
/// binomial standard deviation.
fn yield_bound(mu: f64, nu: f64, q: [f64; 3], var: [f64; 3]) -> (f64, f64) {
    let c = mu / (mu * nu - nu * nu);
    let w = [-(mu * mu - nu * nu) / (mu * mu), nu.exp(), -mu.exp() * nu * nu / (mu * mu)];
    let y = c * (w[0] * q[0] + w[1] * q[1] + w[2] * q[2]);
    let v = c * c * (0..3).map(|k| w[k] * w[k] * var[k]).sum::<f64>();
    (y, v.sqrt())
}

/// Per-class gains and the decoy-state verdict.
///
/// Without an attack the gain is `1 − (1−p_d)·e^{−ημ}`. The PNS model keeps
/// one photon of every multi-photon pulse and forwards the rest losslessly,
/// and blocks `pns_block_fraction` of single-photon pulses.
pub fn decoy_analysis(cfg: &ProtocolConfig) -> Result<DecoyReport, QkdError> {
    let Source::Poisson { intensities } = &cfg.source else {
        return Err(QkdError::InvalidConfig("decoy analysis needs a poisson source".into()));
    };
    if intensities.len() != 3 || intensities[0] != 0.0 || !(0.0 < intensities[1] && intensities[1] < intensities[2]) {
        return Err(QkdError::InvalidConfig(format!("intensities must be [0, ν, μ] with 0 < ν < μ, got {intensities:?}")));
    }
    if cfg.protocol != Protocol::Bb84 {
        return Err(QkdError::InvalidConfig("decoy analysis runs on bb84".into()));
    }
    let sim = Simulator::new(cfg)?;
    let classes = [IntensityClass::Vacuum, IntensityClass::Decoy, IntensityClass::Signal];
    let zero = || [(0u64, 0u64); 3];
    let counts = (0..cfg.pulses)
        .into_par_iter()
        .fold(zero, |mut acc, i| {
            let r = sim.pulse(i);
            let k = classes.iter().position(|c| *c == r.intensity_class).unwrap();
            acc[k].0 += 1;
            acc[k].1 += r.bob_symbol.is_some() as u64;
            acc
        })
        .reduce(zero, |mut a, b| {
            for k in 0..3 {
                a[k].0 += b[k].0;
                a[k].1 += b[k].1;
            }
            a
        });
    let eta = cfg.detection_efficiency;
    let model = |mu: f64| 1.0 - (1.0 - cfg.dark_count) * (-eta * mu).exp();
    let gains: Vec<ClassGain> = (0..3)
        .map(|k| {
            let (pulses, detections) = counts[k];
            ClassGain {
                class: classes[k],
                intensity: intensities[k],
                pulses,
                detections,
                gain: if pulses > 0 { detections as f64 / pulses as f64 } else { 0.0 },
                expected_gain: model(intensities[k]),
            }
        })
        .collect();
    let q = [gains[0].gain, gains[1].gain, gains[2].gain];
    let var: [f64; 3] = std::array::from_fn(|k| {
        let n = gains[k].pulses.max(1) as f64;
        let p = gains[k].expected_gain.clamp(1.0 / n, 1.0 - 1.0 / n);
        p * (1.0 - p) / n
    });
    let (mu, nu) = (intensities[2], intensities[1]);
    let (y1, sigma) = yield_bound(mu, nu, q, var);
    let (y1_model, _) = yield_bound(mu, nu, [model(0.0), model(nu), model(mu)], var);
    let tolerance = 5.0 * sigma;
    let verdict = if (y1 - y1_model).abs() > tolerance { DecoyVerdict::Attack } else { DecoyVerdict::Secure };
    Ok(DecoyReport { classes: gains, single_photon_yield: y1, expected_single_photon_yield: y1_model, tolerance, verdict })
}

// ---------------------------------------------------------------------------
// Quantum-secured imaging
// ---------------------------------------------------------------------------

/// Polarization states of the two-basis alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    D,
    A,
}

impl Polarization {
    fn basis_symbol(self) -> (usize, usize) {
        match self {
            Polarization::H => (0, 0),
            Polarization::V => (0, 1),
            Polarization::D => (1, 0),
            Polarization::A => (1, 1),
        }
    }
}

/// Per-pixel reflectivity in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflectivity {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Reflectivity {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, QkdError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(QkdError::InvalidConfig(format!("{} values for a {width}×{height} mask", values.len())));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(QkdError::InvalidConfig("reflectivity must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, values })
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImagingAttack {
    None,
    /// Intercept every photon and return `state` with the spoof image's reflectivity.
    Spoof { image: Reflectivity, state: Polarization },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagingVerdict {
    Secure,
    Compromised,
}

/// Error rate at or above which a received image is declared compromised.
pub const COMPROMISE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingResult {
    pub width: usize,
    pub height: usize,
    /// Detections per pulse at each pixel.
    pub received: Vec<f64>,
    /// Sifted error rate per pixel; `None` where nothing was sifted.
    pub error_rate: Vec<Option<f64>>,
    pub sifted: u64,
    pub errors: u64,
    pub overall_error: f64,
    pub verdict: ImagingVerdict,
}

/// Polarization BB84 per pixel; the photon returns with probability equal to
/// the pixel reflectivity (or the spoofer's image).
pub fn secure_imaging_scan(
    object: &Reflectivity,
    attack: &ImagingAttack,
    pulses_per_pixel: u32,
    seed: u64,
) -> Result<ImagingResult, QkdError> {
    if pulses_per_pixel == 0 {
        return Err(QkdError::InvalidConfig("pulses_per_pixel must be positive".into()));
    }
    if let ImagingAttack::Spoof { image, .. } = attack {
        if image.width != object.width || image.height != object.height {
            return Err(QkdError::ShapeMismatch("spoof image and object differ in size".into()));
        }
    }
    let mubs = MubSet::new(2, 2)?;
    let per_pixel: Vec<(u64, u64, u64)> = (0..object.values.len())
        .into_par_iter()
        .map(|px| {
            let (mut det, mut sifted, mut errors) = (0u64, 0u64, 0u64);
            for k in 0..pulses_per_pixel as u64 {
                let mut rng = pulse_rng(seed, px as u64 * pulses_per_pixel as u64 + k);
                let (ab, asym) = (rng.random_range(0..2usize), rng.random_range(0..2usize));
                let bb = rng.random_range(0..2usize);
                let (u_ret, u_out): (f64, f64) = (rng.random(), rng.random());
                let ((sb, ss), refl) = match attack {
                    ImagingAttack::None => ((ab, asym), object.values[px]),
                    ImagingAttack::Spoof { image, state } => (state.basis_symbol(), image.values[px]),
                };
                if u_ret >= refl {
                    continue;
                }
                det += 1;
                let t = mubs.measure(sb, ss, bb, u_out);
                if bb == ab {
                    sifted += 1;
                    errors += (t != asym) as u64;
                }
            }
            (det, sifted, errors)
        })
        .collect();
    let received = per_pixel.iter().map(|(d, _, _)| *d as f64 / pulses_per_pixel as f64).collect();
    let error_rate = per_pixel.iter().map(|(_, s, e)| (*s > 0).then(|| *e as f64 / *s as f64)).collect();
    let sifted: u64 = per_pixel.iter().map(|p| p.1).sum();
    let errors: u64 = per_pixel.iter().map(|p| p.2).sum();
    let overall_error = if sifted > 0 { errors as f64 / sifted as f64 } else { 0.0 };
    Ok(ImagingResult {
        width: object.width,
        height: object.height,
        received,
        error_rate,
        sifted,
        errors,
        overall_error,
        verdict: if overall_error >= COMPROMISE_THRESHOLD { ImagingVerdict::Compromised } else { ImagingVerdict::Secure },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(shannon_entropy(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy(&[1.5, -0.5]).is_err());
        assert_eq!(shannon_entropy(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn literal_bound_has_no_root_at_sixteen() {
        assert_eq!(coherent_attack_bound_with(16, BoundForm::Literal), Err(QkdError::NoSolution(16)));
        let two = coherent_attack_bound_with(2, BoundForm::Literal).unwrap();
        assert!((two - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mubs_need_prime_dimension_beyond_two() {
        assert!(MubSet::new(4, 3).is_err());
        assert!(MubSet::new(5, 6).is_ok());
        assert!(MubSet::new(3, 5).is_err());
    }

    #[test]
    fn pulse_streams_differ() {
        let a: u64 = pulse_rng(1, 0).random();
        let b: u64 = pulse_rng(1, 1).random();
        let c: u64 = pulse_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
