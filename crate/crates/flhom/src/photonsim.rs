//! Monte Carlo of the two-detector FL-HOM experiment.
//!
//! Two generators share one physics layer (the dip model):
//!
//! * [`simulate_scan`] draws per-delay-point Poisson counts directly —
//!   fast, used for delay scans and precision studies.
//! * [`simulate_timestamps`] emits per-pulse photon records like a TCSPC
//!   unit would, which [`coincidence_histogram`] then pairs up.
//!
//! Both are deterministic for a fixed seed, with independent RNG
//! substreams per delay point so parallel evaluation cannot reorder
//! results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use crate::error::{Error, Result};
use crate::model::{dip_kernel, fwhm_to_sigma, ModelParams};

/// Experiment description for one delay scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Laser repetition rate, Hz.
    pub rep_rate_hz: f64,
    /// Mean detection rate at channel 1, counts/s.
    pub singles_rate_1_hz: f64,
    /// Mean detection rate at channel 2, counts/s.
    pub singles_rate_2_hz: f64,
    /// Coincidence rate far from the dip, counts/s.
    pub coincidence_rate_baseline_hz: f64,
    /// Stage positions, ps, strictly increasing.
    pub delay_grid_ps: Vec<f64>,
    /// Acquisition time per delay point, s.
    pub dwell_time_s: f64,
    /// Pairing window for the correlator, ps.
    pub coincidence_window_ps: f64,
    /// Detector timing jitter, FWHM ps (timestamps only; does not move
    /// counts between channels).
    pub detector_jitter_fwhm_ps: f64,
    pub model: ModelParams,
    pub rng_seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        // paper-scale operating point: 80 MHz, ~1e6 singles/s per arm,
        // 14e3 coincidences/s outside the dip, 16.7 fs stage steps
        let n = 2400;
        let delay_grid_ps = (0..n).map(|i| -10.0 + 0.0167 * i as f64).collect();
        ScanConfig {
            rep_rate_hz: 8e7,
            singles_rate_1_hz: 1e6,
            singles_rate_2_hz: 1e6,
            coincidence_rate_baseline_hz: 14e3,
            delay_grid_ps,
            dwell_time_s: 2.0,
            coincidence_window_ps: 1250.0,
            detector_jitter_fwhm_ps: 0.0,
            model: ModelParams::default(),
            rng_seed: 0x464c_484f_4d31,
        }
    }
}

impl ScanConfig {
    /// Per-pulse detection probabilities (channel 1, channel 2).
    pub fn per_pulse_prob(&self) -> (f64, f64) {
        (
            self.singles_rate_1_hz / self.rep_rate_hz,
            self.singles_rate_2_hz / self.rep_rate_hz,
        )
    }

    /// Check invariants. Returns advisory warnings (pileup regime,
    /// unusually wide window) that callers may surface to users.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.model.validate()?;
        if !self.rep_rate_hz.is_finite() || self.rep_rate_hz <= 0.0 {
            return Err(Error::config(format!(
                "rep_rate_hz must be > 0, got {}",
                self.rep_rate_hz
            )));
        }
        if self.singles_rate_1_hz < 0.0 || self.singles_rate_2_hz < 0.0 {
            return Err(Error::config("singles rates must be >= 0"));
        }
        if self.coincidence_rate_baseline_hz < 0.0 {
            return Err(Error::config("coincidence_rate_baseline_hz must be >= 0"));
        }
        if !(self.dwell_time_s > 0.0) {
            return Err(Error::config(format!(
                "dwell_time_s must be > 0, got {}",
                self.dwell_time_s
            )));
        }
        if self.delay_grid_ps.is_empty() {
            return Err(Error::config("delay_grid_ps must be non-empty"));
        }
        if self.delay_grid_ps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("delay_grid_ps must be strictly increasing"));
        }
        if !(self.coincidence_window_ps > 0.0) {
            return Err(Error::config("coincidence_window_ps must be > 0"));
        }
        if self.detector_jitter_fwhm_ps < 0.0 {
            return Err(Error::config("detector_jitter_fwhm_ps must be >= 0"));
        }
        let (p1, p2) = self.per_pulse_prob();
        if p1 > 1.0 || p2 > 1.0 {
            return Err(Error::config(format!(
                "per-pulse detection probability exceeds 1 (p1 = {p1:.3}, p2 = {p2:.3}); \
                 pileup regime is not representable"
            )));
        }
        let mut warnings = Vec::new();
        if p1 > 0.1 || p2 > 0.1 {
            warnings.push(format!(
                "per-pulse detection probability is high (p1 = {p1:.3}, p2 = {p2:.3}); \
                 dead-time effects are not modeled above ~0.1"
            ));
        } else if p1 > 0.0125 || p2 > 0.0125 {
            warnings.push(format!(
                "per-pulse detection probability (p1 = {p1:.4}, p2 = {p2:.4}) exceeds the \
                 ~1% detector-friendly operating point; pileup is not modeled"
            ));
        }
        Ok(warnings)
    }
}

/// One detection event, timestamped against the pulse clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonRecord {
    /// Detector channel, 1 or 2.
    pub channel: u8,
    pub pulse_index: u64,
    /// Arrival time relative to the pulse clock, fs.
    pub intra_pulse_time_fs: i64,
}

/// Per-delay-point counts of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub delay_ps: Vec<f64>,
    pub coincidences: Vec<u64>,
    pub singles_1: Vec<u64>,
    pub singles_2: Vec<u64>,
    /// Normalized coincidence level; empty until [`normalize_trace`].
    pub normalized: Vec<f64>,
    /// Acquisition time per point, s.
    pub dwell_time_s: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.delay_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delay_ps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.delay_ps.len();
        if n == 0 {
            return Err(Error::domain("trace is empty"));
        }
        if self.coincidences.len() != n || self.singles_1.len() != n || self.singles_2.len() != n {
            return Err(Error::domain("trace column lengths differ"));
        }
        if !self.normalized.is_empty() && self.normalized.len() != n {
            return Err(Error::domain("normalized column length differs"));
        }
        if self.delay_ps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("trace delays must be strictly increasing"));
        }
        Ok(())
    }

    /// Build a noiseless trace directly from the model (counts zeroed).
    /// Useful for estimator tests and as a fit reference.
    pub fn from_model(params: &ModelParams, delay_ps: &[f64]) -> Result<Trace> {
        let normalized = delay_ps
            .iter()
            .map(|&tau| crate::model::dip_model(tau, params))
            .collect::<Result<Vec<_>>>()?;
        let n = delay_ps.len();
        let trace = Trace {
            delay_ps: delay_ps.to_vec(),
            coincidences: vec![0; n],
            singles_1: vec![0; n],
            singles_2: vec![0; n],
            normalized,
            dwell_time_s: 0.0,
        };
        trace.validate()?;
        Ok(trace)
    }
}

/// SplitMix64 step; used to derive independent substream seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn poisson_draw(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive finite lambda").sample(rng) as u64
}

/// Normalized dip shape `1 - V K(tau - t0)` in [1 - V, 1].
fn dip_shape(config: &ScanConfig, delay_ps: f64) -> Result<f64> {
    let m = &config.model;
    let k = dip_kernel(delay_ps - m.delay_offset_t0, m.lifetime_mu, m.ref_sigma)?;
    Ok(1.0 - m.visibility * k)
}

/// Count-level scan: independent Poisson draws of coincidences and
/// singles at every delay point, followed by normalization.
///
/// Each point uses its own RNG stream keyed by point index, so the trace
/// is reproducible regardless of evaluation order.
pub fn simulate_scan(config: &ScanConfig) -> Result<Trace> {
    config.validate()?;
    let n = config.delay_grid_ps.len();
    let mut coincidences = Vec::with_capacity(n);
    let mut singles_1 = Vec::with_capacity(n);
    let mut singles_2 = Vec::with_capacity(n);
    for (i, &delay) in config.delay_grid_ps.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(i as u64);
        let shape = dip_shape(config, delay)?;
        let lam_c = config.coincidence_rate_baseline_hz * config.dwell_time_s * shape;
        coincidences.push(poisson_draw(&mut rng, lam_c));
        singles_1.push(poisson_draw(
            &mut rng,
            config.singles_rate_1_hz * config.dwell_time_s,
        ));
        singles_2.push(poisson_draw(
            &mut rng,
            config.singles_rate_2_hz * config.dwell_time_s,
        ));
    }
    let raw = Trace {
        delay_ps: config.delay_grid_ps.clone(),
        coincidences,
        singles_1,
        singles_2,
        normalized: Vec::new(),
        dwell_time_s: config.dwell_time_s,
    };
    normalize_trace(&raw)
}

/// How the per-point normalization divides the coincidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationMode {
    /// Divide by the product of the two singles counts (standard g2
    /// practice); insensitive to common intensity fluctuations.
    #[default]
    SinglesProduct,
    /// Divide by the sum of the two singles counts.
    SinglesSum,
}

/// Populate `normalized` so the median over the upper delay quartile
/// equals 1 (product normalization; see [`normalize_trace_with`]).
pub fn normalize_trace(raw: &Trace) -> Result<Trace> {
    normalize_trace_with(raw, NormalizationMode::default())
}

/// [`normalize_trace`] with an explicit normalization mode.
pub fn normalize_trace_with(raw: &Trace, mode: NormalizationMode) -> Result<Trace> {
    raw.validate()?;
    let mut ratios = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        let denom = match mode {
            NormalizationMode::SinglesProduct => raw.singles_1[i] as f64 * raw.singles_2[i] as f64,
            NormalizationMode::SinglesSum => (raw.singles_1[i] + raw.singles_2[i]) as f64,
        };
        if denom <= 0.0 {
            return Err(Error::domain(format!(
                "cannot normalize point {i} (delay {} ps): zero singles",
                raw.delay_ps[i]
            )));
        }
        ratios.push(raw.coincidences[i] as f64 / denom);
    }
    let scale = 1.0 / upper_quartile_median(&raw.delay_ps, &ratios)?;
    let mut out = raw.clone();
    out.normalized = ratios.into_iter().map(|r| r * scale).collect();
    Ok(out)
}

/// Median of `values` over the quarter of points with the largest delays.
pub(crate) fn upper_quartile_median(delays: &[f64], values: &[f64]) -> Result<f64> {
    let n = delays.len();
    let take = (n + 3) / 4;
    // delays are sorted ascending, so the upper quartile is the tail
    let mut tail: Vec<f64> = values[n - take..].to_vec();
    tail.sort_by(f64::total_cmp);
    let m = tail.len();
    let median = if m % 2 == 1 {
        tail[m / 2]
    } else {
        0.5 * (tail[m / 2 - 1] + tail[m / 2])
    };
    if !(median > 0.0) {
        return Err(Error::numerical(
            "upper-quartile median is not positive; cannot set the baseline scale",
        ));
    }
    Ok(median)
}

/// Event-level generator: per-pulse joint detection draws whose
/// same-pulse pair rate follows the dip model while each channel's
/// marginal stays flat in delay.
///
/// Channel 1 carries the reference envelope (Gaussian at the stage
/// delay), channel 2 the fluorescence (excitation envelope convolved
/// with the exponential decay); both get Gaussian detector jitter.
/// Records are ordered by (pulse_index, channel).
pub fn simulate_timestamps(config: &ScanConfig, delay_ps: f64) -> Result<Vec<PhotonRecord>> {
    config.validate()?;
    let (p1, p2) = config.per_pulse_prob();
    let shape = dip_shape(config, delay_ps)?;
    // joint per-pulse law: P(pair) tracks the dip while marginals stay flat
    let p11 = p1 * p2 * shape;
    let p10 = p1 - p11;
    let p01 = p2 - p11;
    let q = p11 + p10 + p01; // P(any detection this pulse)
    let n_pulses = (config.dwell_time_s * config.rep_rate_hz).round() as u64;
    let period_fs = (1e15 / config.rep_rate_hz).round() as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(mix_seed(delay_ps.to_bits(), 0x7473));

    let mu = config.model.lifetime_mu;
    let sigma_ref = config.model.ref_sigma;
    let jitter_sigma = fwhm_to_sigma(config.detector_jitter_fwhm_ps);
    let fluor = Exp::new(1.0 / mu).expect("positive rate");
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let mut records = Vec::new();
    if q <= 0.0 || n_pulses == 0 {
        return Ok(records);
    }
    let expected = (n_pulses as f64 * q * (1.0 + p11 / q)) as usize + 16;
    records.reserve(expected.min(1 << 24));

    let ln_1mq = (-q).ln_1p();
    let mut pulse: u64 = 0;
    loop {
        // geometric skip to the next pulse with at least one detection
        let u: f64 = rng.random();
        let gap = if q >= 1.0 {
            0
        } else {
            ((1.0 - u).ln() / ln_1mq) as u64
        };
        pulse = match pulse.checked_add(gap) {
            Some(p) => p,
            None => break,
        };
        if pulse >= n_pulses {
            break;
        }

        let mut time_ref = || -> i64 {
            let mut t = delay_ps + sigma_ref * unit_normal.sample(&mut rng);
            if jitter_sigma > 0.0 {
                t += jitter_sigma * unit_normal.sample(&mut rng);
            }
            fold_to_period((t * 1e3).round() as i64, period_fs)
        };
        let v: f64 = rng.random::<f64>() * q;
        if v < p11 {
            let t1 = time_ref();
            let mut t2 = sigma_ref * unit_normal.sample(&mut rng) + fluor.sample(&mut rng);
            if jitter_sigma > 0.0 {
                t2 += jitter_sigma * unit_normal.sample(&mut rng);
            }
            records.push(PhotonRecord {
                channel: 1,
                pulse_index: pulse,
                intra_pulse_time_fs: t1,
            });
            records.push(PhotonRecord {
                channel: 2,
                pulse_index: pulse,
                intra_pulse_time_fs: fold_to_period((t2 * 1e3).round() as i64, period_fs),
            });
        } else if v < p11 + p10 {
            let t1 = time_ref();
            records.push(PhotonRecord {
                channel: 1,
                pulse_index: pulse,
                intra_pulse_time_fs: t1,
            });
        } else {
            let mut t2 = sigma_ref * unit_normal.sample(&mut rng) + fluor.sample(&mut rng);
            if jitter_sigma > 0.0 {
                t2 += jitter_sigma * unit_normal.sample(&mut rng);
            }
            records.push(PhotonRecord {
                channel: 2,
                pulse_index: pulse,
                intra_pulse_time_fs: fold_to_period((t2 * 1e3).round() as i64, period_fs),
            });
        }
        pulse += 1;
        if pulse >= n_pulses {
            break;
        }
    }
    Ok(records)
}

fn fold_to_period(t_fs: i64, period_fs: i64) -> i64 {
    if t_fs.abs() < period_fs {
        t_fs
    } else {
        t_fs % period_fs
    }
}

/// Count same-pulse cross-channel pairs with intra-pulse times within
/// `window_ps` of each other.
///
/// Single pass over the stream with constant memory per pulse; the input
/// must be sorted by pulse index (the simulator's natural order).
pub fn coincidence_histogram(records: &[PhotonRecord], window_ps: f64) -> Result<u64> {
    if !(window_ps > 0.0) {
        return Err(Error::domain(format!(
            "coincidence window must be > 0 ps, got {window_ps}"
        )));
    }
    let window_fs = (window_ps * 1e3).round() as i64;
    let mut count: u64 = 0;
    let mut current: Option<u64> = None;
    let mut t1: Vec<i64> = Vec::new();
    let mut t2: Vec<i64> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.channel != 1 && r.channel != 2 {
            return Err(Error::domain(format!(
                "record {i} has invalid channel {}",
                r.channel
            )));
        }
        match current {
            Some(p) if r.pulse_index < p => {
                return Err(Error::domain(format!(
                    "records not sorted by pulse_index (record {i}: {} after {p})",
                    r.pulse_index
                )));
            }
            Some(p) if r.pulse_index > p => {
                count += pair_count(&t1, &t2, window_fs);
                t1.clear();
                t2.clear();
                current = Some(r.pulse_index);
            }
            None => current = Some(r.pulse_index),
            _ => {}
        }
        if r.channel == 1 {
            t1.push(r.intra_pulse_time_fs);
        } else {
            t2.push(r.intra_pulse_time_fs);
        }
    }
    count += pair_count(&t1, &t2, window_fs);
    Ok(count)
}

fn pair_count(t1: &[i64], t2: &[i64], window_fs: i64) -> u64 {
    let mut c = 0;
    for &a in t1 {
        for &b in t2 {
            if (a - b).abs() <= window_fs {
                c += 1;
            }
        }
    }
    c
}

/// Reference operating point for [`rate_tradeoff`]: 80 MHz with a 1%
/// per-pulse detection probability at each detector.
pub const REFERENCE_REP_RATE_HZ: f64 = 8e7;
pub const REFERENCE_PER_PULSE_PROB: f64 = 0.01;

/// Coincidence budget of an operating point relative to the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTradeoff {
    /// Expected pair rate `rep_rate * p^2`, counts/s (visibility factor
    /// held fixed across operating points).
    pub coincidence_rate_hz: f64,
    /// Time needed to accumulate the reference operating point's
    /// coincidence count, as a multiple of the reference time; values
    /// above 1 mean this operating point is slower.
    pub time_factor: f64,
}

/// Compare an operating point (repetition rate, per-pulse detection
/// probability) against the 80 MHz / 1% reference.
pub fn rate_tradeoff(rep_rate_hz: f64, per_pulse_prob: f64) -> Result<RateTradeoff> {
    if !rep_rate_hz.is_finite() || rep_rate_hz <= 0.0 {
        return Err(Error::domain(format!(
            "rep_rate_hz must be > 0, got {rep_rate_hz}"
        )));
    }
    if !(0.0..=1.0).contains(&per_pulse_prob) {
        return Err(Error::domain(format!(
            "per_pulse_prob must lie in [0, 1], got {per_pulse_prob}"
        )));
    }
    let rate = rep_rate_hz * per_pulse_prob * per_pulse_prob;
    let reference = REFERENCE_REP_RATE_HZ * REFERENCE_PER_PULSE_PROB * REFERENCE_PER_PULSE_PROB;
    if rate <= 0.0 {
        return Err(Error::domain("operating point yields zero coincidence rate"));
    }
    Ok(RateTradeoff {
        coincidence_rate_hz: rate,
        time_factor: reference / rate,
    })
}

/// How the Monte Carlo SNR estimator counts a measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrMode {
    /// Plain Poisson counting of the coincidences themselves; SNR tracks
    /// sqrt(N).
    PlainPoisson,
    /// Accidental-subtracted estimate formed from the product of the two
    /// arms' window counts; the subtraction noise makes SNR track
    /// N / sqrt(1 + 2N).
    AccidentalSubtracted,
}

/// Empirical SNR (mean/std over `windows` repetitions) of a coincidence
/// estimator with `n_expected` counts per window.
pub fn monte_carlo_snr(
    n_expected: f64,
    windows: usize,
    mode: SnrMode,
    seed: u64,
) -> Result<f64> {
    if !(n_expected > 0.0) {
        return Err(Error::domain("n_expected must be > 0"));
    }
    if windows < 2 {
        return Err(Error::domain("need at least 2 windows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..windows {
        let x = match mode {
            SnrMode::PlainPoisson => poisson_draw(&mut rng, n_expected) as f64,
            SnrMode::AccidentalSubtracted => {
                // product of the two arms' counts: mean N^2, variance
                // N^2 (1 + 2N), the same relative noise the subtracted
                // estimator carries
                let a = poisson_draw(&mut rng, n_expected) as f64;
                let b = poisson_draw(&mut rng, n_expected) as f64;
                a * b
            }
        };
        sum += x;
        sum_sq += x * x;
    }
    let n = windows as f64;
    let mean = sum / n;
    let var = (sum_sq - sum * sum / n) / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::numerical("zero variance across windows"));
    }
    Ok(mean / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> ScanConfig {
        ScanConfig {
            delay_grid_ps: (0..40).map(|i| -5.0 + 0.5 * i as f64).collect(),
            dwell_time_s: 0.05,
            ..ScanConfig::default()
        }
    }

    #[test]
    fn scan_is_deterministic_for_fixed_seed() {
        let config = small_config();
        let a = simulate_scan(&config).unwrap();
        let b = simulate_scan(&config).unwrap();
        assert_eq!(a, b);
        let other = ScanConfig {
            rng_seed: 7,
            ..config
        };
        assert_ne!(simulate_scan(&other).unwrap(), a);
    }

    #[test]
    fn flat_scan_has_flat_normalized_mean() {
        // no interference: binned means of the normalized trace stay
        // within 2% of each other
        let config = ScanConfig {
            model: ModelParams {
                visibility: 0.0,
                ..ModelParams::default()
            },
            delay_grid_ps: (0..100).map(|i| -5.0 + 0.4 * i as f64).collect(),
            dwell_time_s: 0.1,
            rng_seed: 11,
            ..ScanConfig::default()
        };
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for rep in 0..25 {
            let t = simulate_scan(&ScanConfig {
                rng_seed: 100 + rep,
                ..config.clone()
            })
            .unwrap();
            for (i, v) in t.normalized.iter().enumerate() {
                let bin = i * 4 / t.len();
                sums[bin] += v;
                counts[bin] += 1;
            }
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.02, "bins {means:?}");
    }

    #[test]
    fn baseline_counts_match_configured_rate() {
        // 14e3/s baseline and 2 s dwell put ~28000 counts at large delay
        let config = ScanConfig {
            delay_grid_ps: (0..10).map(|i| 200.0 + i as f64).collect(),
            dwell_time_s: 2.0,
            ..ScanConfig::default()
        };
        let mut mean = 0.0;
        let mut n = 0.0;
        for rep in 0..20 {
            let t = simulate_scan(&ScanConfig {
                rng_seed: rep,
                ..config.clone()
            })
            .unwrap();
            for &c in &t.coincidences {
                mean += c as f64;
                n += 1.0;
            }
        }
        mean /= n;
        let want = 28_000.0;
        assert!(
            (mean - want).abs() < 3.0 * want.sqrt(),
            "mean {mean} vs {want}"
        );
    }

    #[test]
    fn poisson_variance_over_mean_is_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = 400.0;
        let reps = 1000;
        let draws: Vec<f64> = (0..reps).map(|_| poisson_draw(&mut rng, lambda) as f64).collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let ratio = var / mean;
        assert!((0.9..=1.1).contains(&ratio), "variance/mean {ratio}");
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let base = Trace {
            delay_ps: vec![0.0, 1.0, 2.0, 3.0],
            coincidences: vec![100, 110, 90, 100],
            singles_1: vec![1000, 1000, 1000, 1000],
            singles_2: vec![2000, 2000, 2000, 2000],
            normalized: vec![],
            dwell_time_s: 1.0,
        };
        let a = normalize_trace(&base).unwrap();
        // doubling laser power at one point: singles x2, coincidences x4
        let mut boosted = base.clone();
        boosted.coincidences[1] *= 4;
        boosted.singles_1[1] *= 2;
        boosted.singles_2[1] *= 2;
        let b = normalize_trace(&boosted).unwrap();
        assert_relative_eq!(a.normalized[1], b.normalized[1], max_relative = 1e-12);
    }

    #[test]
    fn normalization_names_offending_point() {
        let bad = Trace {
            delay_ps: vec![0.0, 1.0, 2.0, 3.0],
            coincidences: vec![10, 10, 10, 10],
            singles_1: vec![100, 0, 100, 100],
            singles_2: vec![100, 100, 100, 100],
            normalized: vec![],
            dwell_time_s: 1.0,
        };
        let err = normalize_trace(&bad).unwrap_err();
        assert!(err.to_string().contains("point 1"), "{err}");
    }

    #[test]
    fn constant_trace_normalizes_to_unity() {
        let flat = Trace {
            delay_ps: (0..8).map(f64::from).map(|v| v as f64).collect(),
            coincidences: vec![500; 8],
            singles_1: vec![10_000; 8],
            singles_2: vec![10_000; 8],
            normalized: vec![],
            dwell_time_s: 1.0,
        };
        let t = normalize_trace(&flat).unwrap();
        for v in t.normalized {
            assert_relative_eq!(v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn sum_normalization_mode_differs_but_scales_to_unity() {
        let raw = Trace {
            delay_ps: vec![0.0, 1.0, 2.0, 3.0],
            coincidences: vec![100, 120, 100, 100],
            singles_1: vec![900, 1100, 1000, 1000],
            singles_2: vec![1100, 900, 1000, 1000],
            normalized: vec![],
            dwell_time_s: 1.0,
        };
        let prod = normalize_trace_with(&raw, NormalizationMode::SinglesProduct).unwrap();
        let sum = normalize_trace_with(&raw, NormalizationMode::SinglesSum).unwrap();
        assert_ne!(prod.normalized, sum.normalized);
    }

    #[test]
    fn timestamps_reference_channel_is_point_mass_without_jitter() {
        let config = ScanConfig {
            model: ModelParams {
                ref_sigma: 0.0,
                ..ModelParams::default()
            },
            detector_jitter_fwhm_ps: 0.0,
            singles_rate_1_hz: 8e5,
            singles_rate_2_hz: 8e5,
            dwell_time_s: 0.01,
            ..ScanConfig::default()
        };
        let delay = 3.25;
        let records = simulate_timestamps(&config, delay).unwrap();
        assert!(!records.is_empty());
        let want_fs = (delay * 1e3).round() as i64;
        for r in records.iter().filter(|r| r.channel == 1) {
            assert_eq!(r.intra_pulse_time_fs, want_fs);
        }
    }

    #[test]
    fn timestamps_channel_counts_are_binomial() {
        // 1e6 pulses at p = 0.01 puts channel 1 at 1e4 +- 300 (3 sigma)
        let config = ScanConfig {
            rep_rate_hz: 8e7,
            singles_rate_1_hz: 8e5,
            singles_rate_2_hz: 8e5,
            dwell_time_s: 1e6 / 8e7,
            rng_seed: 21,
            ..ScanConfig::default()
        };
        let records = simulate_timestamps(&config, 100.0).unwrap();
        let c1 = records.iter().filter(|r| r.channel == 1).count() as f64;
        assert!((c1 - 1e4).abs() < 300.0, "channel-1 count {c1}");
    }

    #[test]
    fn timestamps_are_sorted_and_within_period() {
        let config = ScanConfig {
            dwell_time_s: 0.002,
            ..ScanConfig::default()
        };
        let records = simulate_timestamps(&config, 0.5).unwrap();
        let period = (1e15 / config.rep_rate_hz) as i64;
        for w in records.windows(2) {
            assert!(w[0].pulse_index <= w[1].pulse_index);
        }
        for r in &records {
            assert!(r.intra_pulse_time_fs.abs() < period);
        }
    }

    #[test]
    fn histogram_counts_hand_built_pairs() {
        // six records, two valid pairs
        let records = vec![
            PhotonRecord { channel: 1, pulse_index: 0, intra_pulse_time_fs: 0 },
            PhotonRecord { channel: 2, pulse_index: 0, intra_pulse_time_fs: 800 },
            PhotonRecord { channel: 2, pulse_index: 1, intra_pulse_time_fs: 0 },
            PhotonRecord { channel: 1, pulse_index: 3, intra_pulse_time_fs: -200 },
            PhotonRecord { channel: 2, pulse_index: 3, intra_pulse_time_fs: 900 },
            PhotonRecord { channel: 1, pulse_index: 4, intra_pulse_time_fs: 5_000 },
        ];
        // window 1.2 ps = 1200 fs: pulse 0 pair (|0-800| <= 1200) and
        // pulse 3 pair (|-200-900| = 1100 <= 1200)
        assert_eq!(coincidence_histogram(&records, 1.2).unwrap(), 2);
        // empty stream
        assert_eq!(coincidence_histogram(&[], 1.0).unwrap(), 0);
    }

    #[test]
    fn histogram_rejects_unsorted_and_bad_channel() {
        let unsorted = vec![
            PhotonRecord { channel: 1, pulse_index: 5, intra_pulse_time_fs: 0 },
            PhotonRecord { channel: 2, pulse_index: 4, intra_pulse_time_fs: 0 },
        ];
        assert!(coincidence_histogram(&unsorted, 1.0).is_err());
        let bad = vec![PhotonRecord { channel: 3, pulse_index: 0, intra_pulse_time_fs: 0 }];
        assert!(coincidence_histogram(&bad, 1.0).is_err());
        assert!(coincidence_histogram(&[], 0.0).is_err());
    }

    #[test]
    fn rate_tradeoff_reference_and_examples() {
        let reference = rate_tradeoff(8e7, 0.01).unwrap();
        assert_relative_eq!(reference.time_factor, 1.0, max_relative = 1e-12);
        assert_relative_eq!(reference.coincidence_rate_hz, 8000.0, max_relative = 1e-12);

        // photon-starved low-rate point: 8x fewer coincidences per
        // second, so 1/8 of the reference rate (0.125x)
        let slow = rate_tradeoff(1e5, 0.10).unwrap();
        assert_relative_eq!(slow.coincidence_rate_hz, 1000.0, max_relative = 1e-12);
        assert_relative_eq!(1.0 / slow.time_factor, 0.125, max_relative = 1e-12);

        // doubling p quadruples the rate
        let doubled = rate_tradeoff(8e7, 0.02).unwrap();
        assert_relative_eq!(
            doubled.coincidence_rate_hz,
            4.0 * reference.coincidence_rate_hz,
            max_relative = 1e-12
        );

        assert!(rate_tradeoff(8e7, 1.5).is_err());
        assert!(rate_tradeoff(-1.0, 0.1).is_err());
    }

    #[test]
    fn config_validation_catches_pileup_and_warns() {
        let mut config = ScanConfig::default();
        config.singles_rate_1_hz = 9e7; // p > 1
        assert!(config.validate().is_err());
        config.singles_rate_1_hz = 1.6e6; // p = 0.02 > 1%
        let warnings = config.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        config.singles_rate_1_hz = 1.6e7; // p = 0.2 > 0.1
        let warnings = config.validate().unwrap();
        assert!(warnings[0].contains("dead-time"));
    }
}
