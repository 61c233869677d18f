//! Property tests of the datapath invariants, checked against independent
//! oracles: the wide fixed-point dot product against a naive f64 sum (both
//! are exact on this format, so they must agree bit for bit), exactness and
//! one-sided truncation of the pipeline, scale covariance, permutation
//! invariance, zeroing sparsity, and the small-sigma stability plateau of
//! the perturbed exponent path.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use timefloats::fp8::{pow2, MANTISSA_BITS};
use timefloats::pipeline::{mac, Variability};
use timefloats::{oracle_dot, Fp8, Rounding, SimConfig};

fn fp(sign: bool, e: u8, m: u8) -> Fp8 {
    Fp8 { sign, exponent_code: e, mantissa_code: m }
}

prop_compose! {
    fn arb_fp8()(sign in any::<bool>(), e in 0u8..=15, m in 0u8..=15) -> Fp8 {
        fp(sign, e, m)
    }
}

prop_compose! {
    fn arb_pair(max_len: usize)
        (len in 1..=max_len)
        (x in prop::collection::vec(arb_fp8(), len), w in prop::collection::vec(arb_fp8(), len))
        -> (Vec<Fp8>, Vec<Fp8>)
    {
        (x, w)
    }
}

// Positive nonzero operands only.
prop_compose! {
    fn arb_positive_pair(max_len: usize)
        (len in 1..=max_len)
        (codes in prop::collection::vec((0u8..=15, 0u8..=15, 0u8..=15, 0u8..=15), len))
        -> (Vec<Fp8>, Vec<Fp8>)
    {
        let fix = |e: u8, m: u8| if e == 0 && m == 0 { fp(false, 0, 1) } else { fp(false, e, m) };
        codes.iter().map(|&(xe, xm, we, wm)| (fix(xe, xm), fix(we, wm))).unzip()
    }
}

// Operand pairs whose element-wise exponent sums all equal `target`.
prop_compose! {
    fn arb_no_shift_pair(max_len: usize)
        (len in 1..=max_len, target in 0u32..=30)
        (
            target in Just(target),
            elems in prop::collection::vec(
                (0u32..=1000, 0u8..=15, 0u8..=15, any::<bool>(), any::<bool>()),
                len,
            ),
        )
        -> (Vec<Fp8>, Vec<Fp8>)
    {
        let lo = target.saturating_sub(15);
        let hi = target.min(15);
        elems
            .iter()
            .map(|&(pick, xm, wm, xs, ws)| {
                let xe = lo + pick % (hi - lo + 1);
                let we = target - xe;
                (fp(xs, xe as u8, xm), fp(ws, we as u8, wm))
            })
            .unzip()
    }
}

proptest! {
    /// The wide fixed-point oracle agrees bit for bit with a naive f64 sum
    /// of decoded products; every step of both routes is exact here.
    #[test]
    fn oracle_matches_brute_force((x, w) in arb_pair(64)) {
        let oracle = oracle_dot(&x, &w).unwrap();
        let brute: f64 = x.iter().zip(&w).map(|(a, b)| a.decode() * b.decode()).sum();
        prop_assert_eq!(oracle.to_bits(), brute.to_bits());
    }

    /// Truncation encoding never increases the magnitude.
    #[test]
    fn encode_truncate_is_one_sided(v in -600.0f64..600.0) {
        let enc = Fp8::encode(v, Rounding::Truncate).unwrap();
        prop_assert!(enc.decode().abs() <= v.abs());
        prop_assert!(v == 0.0 || enc.decode() == 0.0 || (enc.decode() < 0.0) == (v < 0.0));
    }

    /// With all exponent sums equal, no digitization loss and sigma = 0, the
    /// pipeline reproduces the exact dot product bit for bit.
    #[test]
    fn no_shift_case_is_exact((x, w) in arb_no_shift_pair(64)) {
        let sim = SimConfig::default();
        let trace = mac(&x, &w, &sim, None).unwrap();
        let oracle = oracle_dot(&x, &w).unwrap();
        prop_assert_eq!(trace.raw_value.to_bits(), oracle.to_bits());
        let requantized = Fp8::encode(oracle, Rounding::Truncate).unwrap();
        prop_assert_eq!(trace.output_value(), requantized.decode());
    }

    /// For all-positive operands the datapath only ever loses value, and
    /// each term loses strictly less than `2^threshold` units at the common
    /// scale (one shifted-out significand, or one fully zeroed term).
    #[test]
    fn truncation_is_one_sided_and_bounded((x, w) in arb_positive_pair(64)) {
        let sim = SimConfig::default();
        let trace = mac(&x, &w, &sim, None).unwrap();
        let oracle = oracle_dot(&x, &w).unwrap();
        let diff = oracle - trace.raw_value;
        prop_assert!(diff >= 0.0, "raw exceeded oracle by {}", -diff);
        let unit = pow2(trace.e_max as i32 - 2 * (7 + MANTISSA_BITS as i32));
        let per_term = pow2(sim.pipeline.zeroing_threshold as i32) * unit;
        prop_assert!(diff < x.len() as f64 * per_term, "diff {diff} vs bound");
    }

    /// Adding a constant to every input exponent code multiplies the raw
    /// value by exactly that power of two.
    #[test]
    fn scale_covariance((x, w) in arb_pair(64), k in 1u8..=4) {
        let sim = SimConfig::default();
        // Cap the exponents so no code saturates after the shift.
        let x: Vec<Fp8> = x
            .iter()
            .map(|a| fp(a.sign, a.exponent_code.min(15 - k), a.mantissa_code))
            .collect();
        let shifted: Vec<Fp8> = x
            .iter()
            .map(|a| if a.is_zero() { *a } else { fp(a.sign, a.exponent_code + k, a.mantissa_code) })
            .collect();
        let base = mac(&x, &w, &sim, None).unwrap();
        let scaled = mac(&shifted, &w, &sim, None).unwrap();
        let expect = base.raw_value * pow2(k as i32);
        prop_assert_eq!(scaled.raw_value.to_bits(), expect.to_bits());
    }

    /// Jointly permuting the operand pairs leaves the raw value unchanged.
    #[test]
    fn permutation_invariance((x, w) in arb_pair(64), rot in 0usize..64) {
        let sim = SimConfig::default();
        let rot = rot % x.len();
        let mut xp = x.clone();
        let mut wp = w.clone();
        xp.rotate_left(rot);
        wp.rotate_left(rot);
        let a = mac(&x, &w, &sim, None).unwrap();
        let b = mac(&xp, &wp, &sim, None).unwrap();
        prop_assert_eq!(a.raw_value.to_bits(), b.raw_value.to_bits());
    }

    /// A term whose shift reaches the threshold contributes exactly nothing:
    /// its scaled mantissa is zero and flipping its stored mantissa cannot
    /// change either lane sum.
    #[test]
    fn zeroed_terms_are_inert((x, w) in arb_pair(64), probe_m in 0u8..=15) {
        let sim = SimConfig::default();
        let trace = mac(&x, &w, &sim, None).unwrap();
        let threshold = sim.pipeline.zeroing_threshold;
        for (i, (&shift, &scaled)) in trace.shifts.iter().zip(&trace.scaled_mantissas).enumerate() {
            if shift >= threshold {
                prop_assert_eq!(scaled, 0);
                if !x[i].is_zero() {
                    let mut mutated = x.clone();
                    mutated[i].mantissa_code = probe_m;
                    let again = mac(&mutated, &w, &sim, None).unwrap();
                    prop_assert_eq!(again.psum_pos, trace.psum_pos);
                    prop_assert_eq!(again.psum_neg, trace.psum_neg);
                }
            }
        }
    }

    /// A perturbation far too small to flip any comparator re-quantization
    /// leaves the pipeline output identical to the unperturbed run.
    #[test]
    fn exponent_plateau_at_tiny_sigma((x, w) in arb_pair(64), seed in any::<u64>()) {
        let sim = SimConfig::default();
        let ideal = mac(&x, &w, &sim, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let var = Variability { sigma_exponent: 1e-9, sigma_mantissa: 0.0, rng: &mut rng };
        let perturbed = mac(&x, &w, &sim, Some(var)).unwrap();
        prop_assert_eq!(perturbed.raw_value.to_bits(), ideal.raw_value.to_bits());
        prop_assert_eq!(perturbed.output, ideal.output);
    }
}
