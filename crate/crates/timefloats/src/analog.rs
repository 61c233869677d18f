//! Physical mappings between digital codes, resistances, time pulses and
//! integrated charge, plus the multiplicative Gaussian process-variability
//! model and Monte Carlo error sweeps over it.
//!
//! Two analog quantities carry information in the datapath and are the
//! perturbation points:
//! - the per-element RC discharge instant of the exponent adder (step 1),
//!   re-quantized to an integer sum by the clocked comparator;
//! - the per-element pulse-width x conductance charge contribution on a
//!   crossbar column (step 4).
//!
//! At sigma = 0 both paths de-map exactly back to the digital integers, so
//! every result is independent of the unit constants chosen here.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fp8::{Fp8, Rounding, SignificandMode, EXPONENT_CODE_MAX, MANTISSA_CODE_MAX};
use crate::pipeline::{mac, Variability};
use crate::{oracle_dot, Error, Result, SimConfig};

/// Electrical constants of the analog stages. Units are SI (seconds, ohms,
/// farads); all digital results are invariant to them at sigma = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogConfig {
    /// Pulse width per scaled-mantissa code unit; 1 ns puts a plain 4-bit
    /// code 15 at the 15 ns maximum pulse width.
    pub t_lsb: f64,
    /// Low end of the memristor resistance range (0.1 Mohm).
    pub r_min: f64,
    /// High end of the memristor resistance range (1 Mohm).
    pub r_max: f64,
    /// Column integration capacitance.
    pub c_int: f64,
    /// Supply voltage the RC node is precharged to.
    pub v_dd: f64,
    /// Comparator trip point as a fraction of `v_dd`.
    pub comparator_threshold: f64,
    /// Weight-mantissa conductance map. When true (default) the device
    /// conductance is proportional to the effective significand, with the
    /// largest significand programmed to `1/r_min`; the integrated charge
    /// then de-maps to the digital product-sum by a single division. When
    /// false the stored code runs through the affine resistance ladder and
    /// the conductance is its reciprocal, which is nonlinear in the code and
    /// forfeits exact de-mapping.
    pub linear_conductance: bool,
}

impl Default for AnalogConfig {
    fn default() -> Self {
        AnalogConfig {
            t_lsb: 1e-9,
            r_min: 1e5,
            r_max: 1e6,
            c_int: 1e-14,
            v_dd: 1.0,
            comparator_threshold: 0.5,
            linear_conductance: true,
        }
    }
}

impl AnalogConfig {
    /// Seconds of discharge time per ohm: the comparator trips when the
    /// exponential decay from `v_dd` crosses the threshold fraction.
    #[inline]
    fn time_per_ohm(&self) -> f64 {
        self.c_int * (1.0 / self.comparator_threshold).ln()
    }

    /// Conductance per significand unit under the proportional map.
    #[inline]
    fn conductance_lsb(&self, mode: SignificandMode) -> f64 {
        (1.0 / self.r_min) / mode.max_significand() as f64
    }
}

/// Multiplicative Gaussian perturbation `c -> c * (1 + N(0, sigma))`.
/// `sigma = 0` returns `c` exactly and draws nothing from the stream.
pub fn perturb(c: f64, sigma: f64, rng: &mut dyn RngCore) -> f64 {
    if sigma == 0.0 {
        return c;
    }
    let g: f64 = StandardNormal.sample(rng);
    c * (1.0 + sigma * g)
}

/// Affine map from a 4-bit code to the device resistance range:
/// code 0 -> `r_min`, code 15 -> `r_max`.
pub fn code_to_resistance(code: u8, cfg: &AnalogConfig) -> Result<f64> {
    if code > EXPONENT_CODE_MAX {
        return Err(Error::CodeOutOfRange { field: "resistance" });
    }
    let span = cfg.r_max - cfg.r_min;
    Ok(cfg.r_min + code as f64 / EXPONENT_CODE_MAX as f64 * span)
}

/// Instant at which the discharge through `r_total` crosses the comparator
/// threshold: `r_total * c_int * ln(1/threshold)`. Linear in `r_total`.
pub fn rc_discharge_time(r_total: f64, cfg: &AnalogConfig) -> f64 {
    r_total * cfg.time_per_ohm()
}

/// Conductance programmed into a weight-mantissa device. See
/// [`AnalogConfig::linear_conductance`].
pub fn weight_conductance(
    mantissa_code: u8,
    mode: SignificandMode,
    cfg: &AnalogConfig,
) -> Result<f64> {
    if mantissa_code > MANTISSA_CODE_MAX {
        return Err(Error::CodeOutOfRange { field: "mantissa" });
    }
    if cfg.linear_conductance {
        Ok(mode.significand(mantissa_code) as f64 * cfg.conductance_lsb(mode))
    } else {
        Ok(1.0 / code_to_resistance(mantissa_code, cfg)?)
    }
}

/// One perturbed exponent addition: both codes map to a series resistance,
/// the RC discharge instant is perturbed, and the comparator re-quantizes the
/// pulse to the nearest integer sum in 0..=30.
pub fn exponent_sum_analog(
    x_code: u8,
    w_code: u8,
    cfg: &AnalogConfig,
    sigma: f64,
    rng: &mut dyn RngCore,
) -> Result<u32> {
    let r_total = code_to_resistance(x_code, cfg)? + code_to_resistance(w_code, cfg)?;
    let t = perturb(rc_discharge_time(r_total, cfg), sigma, rng);
    let r_est = t / cfg.time_per_ohm();
    let sum = (r_est - 2.0 * cfg.r_min) / (cfg.r_max - cfg.r_min) * EXPONENT_CODE_MAX as f64;
    Ok(sum.round().clamp(0.0, 2.0 * EXPONENT_CODE_MAX as f64) as u32)
}

/// Charge collected on one column: the sum of per-element pulse-width x
/// conductance contributions, each independently perturbed by `sigma`.
/// Scaled codes are pulse widths in `t_lsb` units; weight codes program the
/// device conductances.
pub fn pulse_and_integrate(
    scaled: &[u32],
    w_man: &[u8],
    mode: SignificandMode,
    cfg: &AnalogConfig,
    sigma: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if scaled.len() != w_man.len() {
        return Err(Error::LengthMismatch { x_len: scaled.len(), w_len: w_man.len() });
    }
    let mut charge = 0.0;
    for (&s, &w) in scaled.iter().zip(w_man) {
        let contribution = s as f64 * cfg.t_lsb * weight_conductance(w, mode, cfg)?;
        charge += perturb(contribution, sigma, rng);
    }
    Ok(charge)
}

/// Inverse of the default charge map: divides out `t_lsb` and the
/// conductance-per-significand constant, recovering the product-sum. Exact
/// (up to f64 rounding) only under the proportional conductance map.
pub fn demap_charge(charge: f64, mode: SignificandMode, cfg: &AnalogConfig) -> f64 {
    charge / (cfg.t_lsb * cfg.conductance_lsb(mode))
}

/// Per-stage Gaussian process-variability levels and the Monte Carlo
/// protocol (trial count and base seed). The same seed always reproduces the
/// same perturbation streams, serial or parallel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariabilityModel {
    pub sigma_exponent: f64,
    pub sigma_mantissa: f64,
    pub seed: u64,
    pub trials: u32,
}

impl Default for VariabilityModel {
    fn default() -> Self {
        VariabilityModel { sigma_exponent: 0.0, sigma_mantissa: 0.0, seed: 0, trials: 100 }
    }
}

/// Which analog stage the sweep perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    ExponentOnly,
    MantissaOnly,
    Both,
}

impl PerturbationMode {
    pub const ALL: [PerturbationMode; 3] =
        [PerturbationMode::ExponentOnly, PerturbationMode::MantissaOnly, PerturbationMode::Both];

    /// Effective (sigma_exponent, sigma_mantissa) after masking.
    fn mask(self, vm: &VariabilityModel) -> (f64, f64) {
        match self {
            PerturbationMode::ExponentOnly => (vm.sigma_exponent, 0.0),
            PerturbationMode::MantissaOnly => (0.0, vm.sigma_mantissa),
            PerturbationMode::Both => (vm.sigma_exponent, vm.sigma_mantissa),
        }
    }
}

impl FromStr for PerturbationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponent_only" => Ok(PerturbationMode::ExponentOnly),
            "mantissa_only" => Ok(PerturbationMode::MantissaOnly),
            "both" => Ok(PerturbationMode::Both),
            _ => Err(Error::UnknownName { what: "perturbation mode", value: s.into() }),
        }
    }
}

impl fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbationMode::ExponentOnly => "exponent_only",
            PerturbationMode::MantissaOnly => "mantissa_only",
            PerturbationMode::Both => "both",
        })
    }
}

/// Relative-error statistics of one Monte Carlo cell, taken over every
/// (trial, workload pair) sample against the exact dot product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// The applied sigma (the larger of the two stage sigmas when both run).
    pub sigma: f64,
    pub mode: PerturbationMode,
    pub mean_rel_err: f64,
    pub p50: f64,
    pub p95: f64,
    pub trials: u32,
    pub seed: u64,
}

impl ErrorStats {
    pub const CSV_HEADER: &'static str = "sigma,mode,mean_rel_err,p50,p95,trials,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.sigma, self.mode, self.mean_rel_err, self.p50, self.p95, self.trials, self.seed
        )
    }
}

/// An operand pair for workload evaluation.
pub type WorkloadPair = (Vec<Fp8>, Vec<Fp8>);

/// Deterministic random workload: element values drawn from a standard
/// normal and truncation-encoded. Pairs whose exact dot product is zero are
/// redrawn so relative error stays well defined.
pub fn random_workload(pairs: usize, len: usize, seed: u64) -> Vec<WorkloadPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_vec = |rng: &mut ChaCha8Rng| -> Vec<Fp8> {
        (0..len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                Fp8::encode(v, Rounding::Truncate).expect("finite draw")
            })
            .collect()
    };
    let mut out = Vec::with_capacity(pairs);
    while out.len() < pairs {
        let x = draw_vec(&mut rng);
        let w = draw_vec(&mut rng);
        if oracle_dot(&x, &w).expect("equal lengths") != 0.0 {
            out.push((x, w));
        }
    }
    out
}

fn rel_err(out: f64, oracle: f64) -> f64 {
    if oracle == 0.0 {
        out.abs()
    } else {
        (out - oracle).abs() / oracle.abs()
    }
}

/// Per-trial RNG: one counter-derived stream per trial index so trials are
/// independent and order-free. Stream 0 is left to the workload generator.
fn trial_rng(seed: u64, trial: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

fn run_trial(
    trial: u32,
    workload: &[WorkloadPair],
    oracles: &[f64],
    sigma_exponent: f64,
    sigma_mantissa: f64,
    vm: &VariabilityModel,
    sim: &SimConfig,
) -> Vec<f64> {
    let mut rng = trial_rng(vm.seed, trial);
    workload
        .iter()
        .zip(oracles)
        .map(|((x, w), &oracle)| {
            let var = Variability { sigma_exponent, sigma_mantissa, rng: &mut rng };
            let trace = mac(x, w, sim, Some(var)).expect("workload validated");
            rel_err(trace.output_value(), oracle)
        })
        .collect()
}

fn validate_monte_carlo(workload: &[WorkloadPair], vm: &VariabilityModel) -> Result<()> {
    if workload.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    if vm.trials == 0 {
        return Err(Error::NoTrials);
    }
    for sigma in [vm.sigma_exponent, vm.sigma_mantissa] {
        if !(sigma >= 0.0) {
            return Err(Error::NegativeSigma(sigma));
        }
    }
    Ok(())
}

fn finish_stats(
    samples_by_trial: Vec<Vec<f64>>,
    vm: &VariabilityModel,
    mode: PerturbationMode,
) -> ErrorStats {
    let samples: Vec<f64> = samples_by_trial.into_iter().flatten().collect();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    // Nearest-rank percentile.
    let rank = |q: f64| -> f64 {
        let idx = ((q * sorted.len() as f64).ceil() as usize).max(1) - 1;
        sorted[idx.min(sorted.len() - 1)]
    };
    let (sigma_exponent, sigma_mantissa) = mode.mask(vm);
    ErrorStats {
        sigma: sigma_exponent.max(sigma_mantissa),
        mode,
        mean_rel_err: mean,
        p50: rank(0.50),
        p95: rank(0.95),
        trials: vm.trials,
        seed: vm.seed,
    }
}

/// Monte Carlo sweep of `vm.trials` perturbed evaluations per workload pair,
/// applying sigma only to the stage(s) selected by `mode`. Deterministic per
/// seed. With the `parallel` feature the trials fan out over rayon;
/// statistics are identical to [`monte_carlo_error_serial`] either way.
pub fn monte_carlo_error(
    workload: &[WorkloadPair],
    vm: &VariabilityModel,
    mode: PerturbationMode,
    sim: &SimConfig,
) -> Result<ErrorStats> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        validate_monte_carlo(workload, vm)?;
        let oracles: Vec<f64> =
            workload.iter().map(|(x, w)| oracle_dot(x, w).expect("equal lengths")).collect();
        let (se, sm) = mode.mask(vm);
        let samples: Vec<Vec<f64>> = (0..vm.trials)
            .into_par_iter()
            .map(|trial| run_trial(trial, workload, &oracles, se, sm, vm, sim))
            .collect();
        Ok(finish_stats(samples, vm, mode))
    }
    #[cfg(not(feature = "parallel"))]
    {
        monte_carlo_error_serial(workload, vm, mode, sim)
    }
}

/// Sequential fallback of [`monte_carlo_error`]; always available and used
/// as the baseline in the benchmark suite.
pub fn monte_carlo_error_serial(
    workload: &[WorkloadPair],
    vm: &VariabilityModel,
    mode: PerturbationMode,
    sim: &SimConfig,
) -> Result<ErrorStats> {
    validate_monte_carlo(workload, vm)?;
    let oracles: Vec<f64> =
        workload.iter().map(|(x, w)| oracle_dot(x, w).expect("equal lengths")).collect();
    let (se, sm) = mode.mask(vm);
    let samples: Vec<Vec<f64>> = (0..vm.trials)
        .map(|trial| run_trial(trial, workload, &oracles, se, sm, vm, sim))
        .collect();
    Ok(finish_stats(samples, vm, mode))
}
