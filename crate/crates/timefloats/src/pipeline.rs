//! The five-step floating-point scalar-product datapath, bit-accurate in its
//! ideal form and delegating the analog stages to [`crate::analog`] when a
//! variability model is attached.
//!
//! Steps: (1) element-wise exponent addition, (2) largest summed-exponent
//! search, (3) mantissa shift-scaling against the maximum, (4) fixed-point
//! product-sum on the crossbar, (5) digitization and reformatting to the
//! 8-bit float format. Signs never enter the analog path: the XOR of the
//! operand sign flags steers each term into a positive or a negative
//! accumulation lane, and the lanes are subtracted digitally before
//! digitization.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::analog::{demap_charge, exponent_sum_analog, pulse_and_integrate};
use crate::energy::{step_energy, PipelineStep};
use crate::fp8::{pow2, Fp8, Rounding, SignificandMode, BIAS, MANTISSA_BITS};
use crate::{Error, Result, SimConfig};

/// How the product-sum becomes an 8-bit float.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigitizeMode {
    /// Normalize to the leading one of the product-sum and keep the four
    /// bits below it, truncated. Lossless whenever the product is
    /// representable. The default.
    #[default]
    IdealNormalize,
    /// Quantize the product-sum through a 4-bit ADC referenced to
    /// `adc_full_scale` before reformatting. Severely lossy by construction.
    Adc4,
}

impl std::str::FromStr for DigitizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal_normalize" => Ok(DigitizeMode::IdealNormalize),
            "adc4" => Ok(DigitizeMode::Adc4),
            _ => Err(Error::UnknownName { what: "digitize mode", value: s.into() }),
        }
    }
}

impl std::fmt::Display for DigitizeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DigitizeMode::IdealNormalize => "ideal_normalize",
            DigitizeMode::Adc4 => "adc4",
        })
    }
}

/// Crossbar geometry and datapath configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rows: usize,
    pub cols: usize,
    pub significand_mode: SignificandMode,
    pub digitize_mode: DigitizeMode,
    /// Shift amount at or above which a term is zeroed. Defaults to the
    /// significand bit width, where the arithmetic right shift would have
    /// emptied the register anyway.
    pub zeroing_threshold: u32,
    /// Product-sum mapped to ADC code 15 in [`DigitizeMode::Adc4`]. Defaults
    /// to the worst-case product-sum `rows * max_significand^2`.
    pub adc_full_scale: u64,
}

impl PipelineConfig {
    pub const DEFAULT_ROWS: usize = 64;
    pub const DEFAULT_COLS: usize = 128;

    /// Mode-appropriate defaults for a 64x128 crossbar.
    pub fn for_mode(mode: SignificandMode) -> Self {
        PipelineConfig {
            rows: Self::DEFAULT_ROWS,
            cols: Self::DEFAULT_COLS,
            significand_mode: mode,
            digitize_mode: DigitizeMode::IdealNormalize,
            zeroing_threshold: mode.significand_bits(),
            adc_full_scale: Self::default_adc_full_scale(Self::DEFAULT_ROWS, mode),
        }
    }

    /// Worst-case product-sum of a full column.
    pub fn default_adc_full_scale(rows: usize, mode: SignificandMode) -> u64 {
        rows as u64 * (mode.max_significand() as u64).pow(2)
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_mode(SignificandMode::HiddenBit)
    }
}

/// Element-wise exponent sums with the participation mask. Elements where
/// either operand is the zero word are invalid: they are excluded from the
/// maximum search and contribute nothing to the product-sum (their recorded
/// sum is the nominal digital one).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentSums {
    pub sums: Vec<u32>,
    pub valid_mask: Vec<bool>,
}

impl ExponentSums {
    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

/// Energy charged to one step of one trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEnergy {
    pub step: u8,
    pub energy_j: f64,
}

/// Full record of one scalar product through the datapath.
///
/// `psum_pos`/`psum_neg` are the exact integer lane sums of the digital
/// crossbar; when mantissa-path variability is active the perturbed,
/// de-mapped lane values land in `analog_psum_pos`/`analog_psum_neg` and
/// drive the digitized output. For invalid elements `shifts` records zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacTrace {
    pub exponent_sums: ExponentSums,
    pub e_max: u32,
    pub e_max_id: usize,
    pub shifts: Vec<u32>,
    pub scaled_mantissas: Vec<u32>,
    pub psum_pos: u64,
    pub psum_neg: u64,
    pub analog_psum_pos: Option<f64>,
    pub analog_psum_neg: Option<f64>,
    pub raw_value: f64,
    pub output: Fp8,
    pub step_energies: Vec<StepEnergy>,
}

impl MacTrace {
    /// Decoded signed value of the digitized output word.
    pub fn output_value(&self) -> f64 {
        self.output.decode()
    }

    pub fn total_energy(&self) -> f64 {
        self.step_energies.iter().map(|s| s.energy_j).sum()
    }

    /// Stable JSON form of the trace.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Perturbation levels and the random stream a variability-aware call draws
/// from. Build one per call; the stream advances deterministically.
pub struct Variability<'a> {
    pub sigma_exponent: f64,
    pub sigma_mantissa: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Step 1: element-wise exponent sums with zero-operand masking.
pub fn add_exponents(x: &[Fp8], w: &[Fp8], cfg: &PipelineConfig) -> Result<ExponentSums> {
    check_operands(x, w, cfg)?;
    let mut sums = Vec::with_capacity(x.len());
    let mut valid_mask = Vec::with_capacity(x.len());
    for (a, b) in x.iter().zip(w) {
        sums.push(a.exponent_code as u32 + b.exponent_code as u32);
        valid_mask.push(!a.is_zero() && !b.is_zero());
    }
    Ok(ExponentSums { sums, valid_mask })
}

/// Step 2: largest valid sum and the index the mux tree selects.
///
/// Implemented as a balanced pairwise tournament padded with absent leaves,
/// mirroring the flip-flop/mux tree: a challenger wins only with a strictly
/// longer pulse, so ties resolve to the lower index. The result always
/// equals a linear-scan first-argmax.
pub fn find_max_exponent(sums: &ExponentSums) -> Result<(u32, usize)> {
    let mut layer: Vec<Option<(u32, usize)>> = sums
        .sums
        .iter()
        .zip(&sums.valid_mask)
        .enumerate()
        .map(|(i, (&s, &valid))| valid.then_some((s, i)))
        .collect();
    if layer.iter().all(Option::is_none) {
        return Err(Error::EmptyExponentSet);
    }
    layer.resize(layer.len().next_power_of_two().max(1), None);
    while layer.len() > 1 {
        layer = layer
            .chunks(2)
            .map(|pair| match (pair[0], pair[1]) {
                (Some(a), Some(b)) => Some(if b.0 > a.0 { b } else { a }),
                (a, None) => a,
                (None, b) => b,
            })
            .collect();
    }
    Ok(layer[0].expect("at least one valid element"))
}

/// Step 3: shift each input significand right by `e_max - sum`, truncating;
/// a term whose shift reaches the zeroing threshold (or whose element is
/// invalid) scales to zero.
pub fn scale_mantissas(
    x_man: &[u8],
    sums: &ExponentSums,
    e_max: u32,
    cfg: &PipelineConfig,
) -> Result<(Vec<u32>, Vec<u32>)> {
    if x_man.len() != sums.len() {
        return Err(Error::LengthMismatch { x_len: x_man.len(), w_len: sums.len() });
    }
    let mut shifts = Vec::with_capacity(x_man.len());
    let mut scaled = Vec::with_capacity(x_man.len());
    for ((&code, &sum), &valid) in x_man.iter().zip(&sums.sums).zip(&sums.valid_mask) {
        if !valid {
            shifts.push(0);
            scaled.push(0);
            continue;
        }
        if sum > e_max {
            return Err(Error::SumExceedsMax { sum, e_max });
        }
        let shift = e_max - sum;
        shifts.push(shift);
        if shift >= cfg.zeroing_threshold {
            scaled.push(0);
        } else {
            let significand = cfg.significand_mode.significand(code);
            scaled.push(significand.checked_shr(shift).unwrap_or(0));
        }
    }
    Ok((shifts, scaled))
}

/// Step 4: exact integer product-sums, split into a positive and a negative
/// lane by the per-element sign XOR.
pub fn crossbar_mac(
    scaled: &[u32],
    w_man: &[u8],
    negative: &[bool],
    mode: SignificandMode,
) -> Result<(u64, u64)> {
    if scaled.len() != w_man.len() || scaled.len() != negative.len() {
        return Err(Error::LengthMismatch { x_len: scaled.len(), w_len: w_man.len() });
    }
    let mut psum_pos: u64 = 0;
    let mut psum_neg: u64 = 0;
    for ((&s, &w), &neg) in scaled.iter().zip(w_man).zip(negative) {
        debug_assert!(s <= mode.max_significand());
        let term = s as u64 * mode.significand(w) as u64;
        if neg {
            psum_neg += term;
        } else {
            psum_pos += term;
        }
    }
    Ok((psum_pos, psum_neg))
}

/// Step 5: subtract the lanes, report the raw value at the common scale
/// `2^(e_max - 2*BIAS - 2*F)`, and reformat to the 8-bit float.
pub fn digitize_and_reformat(
    psum_pos: u64,
    psum_neg: u64,
    e_max: u32,
    cfg: &PipelineConfig,
) -> (Fp8, f64) {
    digitize_net(psum_pos as f64 - psum_neg as f64, e_max, cfg)
}

fn digitize_net(net: f64, e_max: u32, cfg: &PipelineConfig) -> (Fp8, f64) {
    let scale = pow2(e_max as i32 - 2 * (BIAS + MANTISSA_BITS as i32));
    let raw_value = net * scale;
    if net == 0.0 {
        return (Fp8::ZERO, 0.0);
    }
    let output = match cfg.digitize_mode {
        // Equivalent to the hardware leading-one normalization: keep the
        // four bits below the leading one, truncated, and saturate the
        // exponent to the max word or to zero.
        DigitizeMode::IdealNormalize => {
            Fp8::encode(raw_value, Rounding::Truncate).expect("finite raw value")
        }
        DigitizeMode::Adc4 => {
            let full_scale = cfg.adc_full_scale as f64;
            let code = (net.abs() * 15.0 / full_scale).floor().clamp(0.0, 15.0);
            let estimate = code * full_scale / 15.0 * scale;
            let signed = if net < 0.0 { -estimate } else { estimate };
            Fp8::encode(signed, Rounding::Truncate).expect("finite estimate")
        }
    };
    (output, raw_value)
}

fn check_operands(x: &[Fp8], w: &[Fp8], cfg: &PipelineConfig) -> Result<()> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch { x_len: x.len(), w_len: w.len() });
    }
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    if x.len() > cfg.rows {
        return Err(Error::VectorTooLong { len: x.len(), rows: cfg.rows });
    }
    Ok(())
}

/// One full scalar product through the five steps, recording every
/// intermediate. With a [`Variability`] attached, step 1 runs through the
/// perturbed RC path when `sigma_exponent > 0` and step 4 through the
/// perturbed charge path when `sigma_mantissa > 0`.
///
/// An all-invalid operand pair (every element has a zero word on either
/// side) is not an error: it produces the zero word with all intermediates
/// zeroed.
pub fn mac(
    x: &[Fp8],
    w: &[Fp8],
    sim: &SimConfig,
    mut var: Option<Variability<'_>>,
) -> Result<MacTrace> {
    let cfg = &sim.pipeline;
    check_operands(x, w, cfg)?;
    let n = x.len();

    // Step 1.
    let exponent_sums = match &mut var {
        Some(v) if v.sigma_exponent > 0.0 => {
            let mut sums = Vec::with_capacity(n);
            let mut valid_mask = Vec::with_capacity(n);
            for (a, b) in x.iter().zip(w) {
                let valid = !a.is_zero() && !b.is_zero();
                valid_mask.push(valid);
                sums.push(if valid {
                    exponent_sum_analog(
                        a.exponent_code,
                        b.exponent_code,
                        &sim.analog,
                        v.sigma_exponent,
                        v.rng,
                    )?
                } else {
                    a.exponent_code as u32 + b.exponent_code as u32
                });
            }
            ExponentSums { sums, valid_mask }
        }
        _ => add_exponents(x, w, cfg)?,
    };

    let step_energies: Vec<StepEnergy> = PipelineStep::ALL
        .iter()
        .map(|&s| StepEnergy { step: s.id(), energy_j: step_energy(s, n, &sim.energy) })
        .collect();

    if exponent_sums.valid_count() == 0 {
        return Ok(MacTrace {
            exponent_sums,
            e_max: 0,
            e_max_id: 0,
            shifts: vec![0; n],
            scaled_mantissas: vec![0; n],
            psum_pos: 0,
            psum_neg: 0,
            analog_psum_pos: None,
            analog_psum_neg: None,
            raw_value: 0.0,
            output: Fp8::ZERO,
            step_energies,
        });
    }

    // Steps 2 and 3.
    let (e_max, e_max_id) = find_max_exponent(&exponent_sums)?;
    let x_man: Vec<u8> = x.iter().map(|a| a.mantissa_code).collect();
    let (shifts, scaled_mantissas) = scale_mantissas(&x_man, &exponent_sums, e_max, cfg)?;

    // Step 4.
    let w_man: Vec<u8> = w.iter().map(|b| b.mantissa_code).collect();
    let negative: Vec<bool> = x.iter().zip(w).map(|(a, b)| a.sign != b.sign).collect();
    let (psum_pos, psum_neg) =
        crossbar_mac(&scaled_mantissas, &w_man, &negative, cfg.significand_mode)?;

    let (analog_psum_pos, analog_psum_neg) = match &mut var {
        Some(v) if v.sigma_mantissa > 0.0 => {
            let lane = |want_neg: bool| -> Vec<u32> {
                scaled_mantissas
                    .iter()
                    .zip(&negative)
                    .map(|(&s, &neg)| if neg == want_neg { s } else { 0 })
                    .collect()
            };
            let mode = cfg.significand_mode;
            let charge_pos = pulse_and_integrate(
                &lane(false),
                &w_man,
                mode,
                &sim.analog,
                v.sigma_mantissa,
                v.rng,
            )?;
            let charge_neg = pulse_and_integrate(
                &lane(true),
                &w_man,
                mode,
                &sim.analog,
                v.sigma_mantissa,
                v.rng,
            )?;
            (
                Some(demap_charge(charge_pos, mode, &sim.analog)),
                Some(demap_charge(charge_neg, mode, &sim.analog)),
            )
        }
        _ => (None, None),
    };

    // Step 5.
    let net = match (analog_psum_pos, analog_psum_neg) {
        (Some(pos), Some(neg)) => pos - neg,
        _ => psum_pos as f64 - psum_neg as f64,
    };
    let (output, raw_value) = digitize_net(net, e_max, cfg);

    Ok(MacTrace {
        exponent_sums,
        e_max,
        e_max_id,
        shifts,
        scaled_mantissas,
        psum_pos,
        psum_neg,
        analog_psum_pos,
        analog_psum_neg,
        raw_value,
        output,
        step_energies,
    })
}
