//! Layered run configuration: built-in defaults, then an optional JSON
//! config file, then command-line flags. Every report opens with a
//! reproducibility header carrying the resolved config and its hash, so a
//! report can be regenerated byte for byte from its own header.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use timefloats::{
    AnalogConfig, DigitizeMode, EnergyTable, PipelineConfig, SignificandMode, SimConfig,
    VariabilityModel,
};

/// Configuration flags shared by every subcommand.
#[derive(Debug, Default, clap::Args)]
pub struct ConfigArgs {
    /// JSON config file (sections: pipeline, analog, energy, variability).
    /// Flags override the file; the file overrides built-in defaults.
    #[arg(long, env = "TIMEFLOATS_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Crossbar rows (max operand length)
    #[arg(long, help_heading = "Pipeline")]
    pub rows: Option<usize>,
    /// Crossbar columns
    #[arg(long, help_heading = "Pipeline")]
    pub cols: Option<usize>,
    /// Significand interpretation: hidden_bit | stored_4bit
    #[arg(long, value_name = "MODE", help_heading = "Pipeline")]
    pub significand_mode: Option<SignificandMode>,
    /// Digitization: ideal_normalize | adc4
    #[arg(long, value_name = "MODE", help_heading = "Pipeline")]
    pub digitize_mode: Option<DigitizeMode>,
    /// Shift amount at or above which a term is zeroed
    #[arg(long, help_heading = "Pipeline")]
    pub zeroing_threshold: Option<u32>,
    /// Product-sum mapped to ADC code 15 (adc4 mode)
    #[arg(long, help_heading = "Pipeline")]
    pub adc_full_scale: Option<u64>,

    /// Pulse width per scaled-mantissa unit, seconds
    #[arg(long, help_heading = "Analog")]
    pub t_lsb: Option<f64>,
    /// Low end of the device resistance range, ohms
    #[arg(long, help_heading = "Analog")]
    pub r_min: Option<f64>,
    /// High end of the device resistance range, ohms
    #[arg(long, help_heading = "Analog")]
    pub r_max: Option<f64>,
    /// Column integration capacitance, farads
    #[arg(long, help_heading = "Analog")]
    pub c_int: Option<f64>,
    /// Supply voltage
    #[arg(long, help_heading = "Analog")]
    pub v_dd: Option<f64>,
    /// Comparator trip point as a fraction of v_dd
    #[arg(long, help_heading = "Analog")]
    pub comparator_threshold: Option<f64>,
    /// Proportional significand-to-conductance map (true) or reciprocal
    /// resistance ladder (false)
    #[arg(long, value_name = "BOOL", help_heading = "Analog")]
    pub linear_conductance: Option<bool>,

    /// Energy preset: table1 | prose-variant
    #[arg(long = "preset", value_name = "NAME", help_heading = "Energy")]
    pub energy_preset: Option<String>,
    /// Step-1 exponent-adder energy, joules
    #[arg(long, help_heading = "Energy")]
    pub e_exponent_add: Option<f64>,
    /// Step-2 max-search energy, joules
    #[arg(long, help_heading = "Energy")]
    pub e_max_search: Option<f64>,
    /// Step-3 mantissa-scaling energy, joules
    #[arg(long, help_heading = "Energy")]
    pub e_mantissa_scale: Option<f64>,
    /// Step-4 crossbar energy, joules
    #[arg(long, help_heading = "Energy")]
    pub e_crossbar_mac: Option<f64>,
    /// Step-5 digitization energy, joules
    #[arg(long, help_heading = "Energy")]
    pub e_digitize: Option<f64>,

    /// Monte Carlo trials per sweep cell
    #[arg(long, help_heading = "Variability")]
    pub trials: Option<u32>,
    /// Master seed for all randomness
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Per-stage sigma flags for the commands where a single perturbation level
/// applies (the sweep command carries its own sigma list instead).
#[derive(Debug, Default, clap::Args)]
pub struct SigmaArgs {
    /// Process-variability sigma for both analog stages
    #[arg(long, help_heading = "Variability")]
    pub sigma: Option<f64>,
    /// Sigma for the exponent-adder stage only
    #[arg(long, help_heading = "Variability")]
    pub sigma_exponent: Option<f64>,
    /// Sigma for the crossbar charge stage only
    #[arg(long, help_heading = "Variability")]
    pub sigma_mantissa: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelinePatch {
    rows: Option<usize>,
    cols: Option<usize>,
    significand_mode: Option<SignificandMode>,
    digitize_mode: Option<DigitizeMode>,
    zeroing_threshold: Option<u32>,
    adc_full_scale: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalogPatch {
    t_lsb: Option<f64>,
    r_min: Option<f64>,
    r_max: Option<f64>,
    c_int: Option<f64>,
    v_dd: Option<f64>,
    comparator_threshold: Option<f64>,
    linear_conductance: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnergyPatch {
    preset: Option<String>,
    e_exponent_add: Option<f64>,
    e_max_search: Option<f64>,
    e_mantissa_scale: Option<f64>,
    e_crossbar_mac: Option<f64>,
    e_digitize: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VariabilityPatch {
    sigma_exponent: Option<f64>,
    sigma_mantissa: Option<f64>,
    seed: Option<u64>,
    trials: Option<u32>,
}

/// The on-disk config file: four optional flat sections.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    pipeline: PipelinePatch,
    analog: AnalogPatch,
    energy: EnergyPatch,
    variability: VariabilityPatch,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub pipeline: PipelineConfig,
    pub analog: AnalogConfig,
    pub energy: EnergyTable,
    pub variability: VariabilityModel,
}

impl Resolved {
    pub fn sim(&self) -> SimConfig {
        SimConfig {
            pipeline: self.pipeline.clone(),
            analog: self.analog.clone(),
            energy: self.energy.clone(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.variability.seed
    }

    /// Hash of the canonical JSON form; the reproducibility fingerprint.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The `#`-comment header prepended to text and CSV reports.
    pub fn text_header(&self) -> String {
        format!(
            "# timefloats {} seed={} config=sha256:{}",
            env!("CARGO_PKG_VERSION"),
            self.seed(),
            self.hash()
        )
    }

    /// The header object embedded in JSON reports.
    pub fn json_header(&self) -> serde_json::Value {
        serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed(),
            "config_hash": format!("sha256:{}", self.hash()),
            "config": self,
        })
    }
}

pub fn resolve(args: &ConfigArgs) -> Result<Resolved> {
    resolve_with_sigma(args, &SigmaArgs::default())
}

pub fn resolve_with_sigma(args: &ConfigArgs, sigma: &SigmaArgs) -> Result<Resolved> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config file {}", path.display()))?
        }
        None => FileConfig::default(),
    };

    let significand_mode = args
        .significand_mode
        .or(file.pipeline.significand_mode)
        .unwrap_or(SignificandMode::HiddenBit);
    let rows = args.rows.or(file.pipeline.rows).unwrap_or(PipelineConfig::DEFAULT_ROWS);
    let pipeline = PipelineConfig {
        rows,
        cols: args.cols.or(file.pipeline.cols).unwrap_or(PipelineConfig::DEFAULT_COLS),
        significand_mode,
        digitize_mode: args.digitize_mode.or(file.pipeline.digitize_mode).unwrap_or_default(),
        zeroing_threshold: args
            .zeroing_threshold
            .or(file.pipeline.zeroing_threshold)
            .unwrap_or_else(|| significand_mode.significand_bits()),
        adc_full_scale: args
            .adc_full_scale
            .or(file.pipeline.adc_full_scale)
            .unwrap_or_else(|| PipelineConfig::default_adc_full_scale(rows, significand_mode)),
    };

    let defaults = AnalogConfig::default();
    let analog = AnalogConfig {
        t_lsb: args.t_lsb.or(file.analog.t_lsb).unwrap_or(defaults.t_lsb),
        r_min: args.r_min.or(file.analog.r_min).unwrap_or(defaults.r_min),
        r_max: args.r_max.or(file.analog.r_max).unwrap_or(defaults.r_max),
        c_int: args.c_int.or(file.analog.c_int).unwrap_or(defaults.c_int),
        v_dd: args.v_dd.or(file.analog.v_dd).unwrap_or(defaults.v_dd),
        comparator_threshold: args
            .comparator_threshold
            .or(file.analog.comparator_threshold)
            .unwrap_or(defaults.comparator_threshold),
        linear_conductance: args
            .linear_conductance
            .or(file.analog.linear_conductance)
            .unwrap_or(defaults.linear_conductance),
    };

    let preset = args.energy_preset.as_deref().or(file.energy.preset.as_deref());
    let base = match preset {
        Some(name) => EnergyTable::preset(name)?,
        None => EnergyTable::table1(),
    };
    let energy = EnergyTable {
        e_exponent_add: args
            .e_exponent_add
            .or(file.energy.e_exponent_add)
            .unwrap_or(base.e_exponent_add),
        e_max_search: args.e_max_search.or(file.energy.e_max_search).unwrap_or(base.e_max_search),
        e_mantissa_scale: args
            .e_mantissa_scale
            .or(file.energy.e_mantissa_scale)
            .unwrap_or(base.e_mantissa_scale),
        e_crossbar_mac: args
            .e_crossbar_mac
            .or(file.energy.e_crossbar_mac)
            .unwrap_or(base.e_crossbar_mac),
        e_digitize: args.e_digitize.or(file.energy.e_digitize).unwrap_or(base.e_digitize),
    };

    let variability = VariabilityModel {
        sigma_exponent: args
            .sigma_exponent
            .or(args.sigma)
            .or(file.variability.sigma_exponent)
            .unwrap_or(0.0),
        sigma_mantissa: args
            .sigma_mantissa
            .or(args.sigma)
            .or(file.variability.sigma_mantissa)
            .unwrap_or(0.0),
        seed: args.seed.or(file.variability.seed).unwrap_or(0),
        trials: args.trials.or(file.variability.trials).unwrap_or(100),
    };

    let resolved = Resolved { pipeline, analog, energy, variability };
    validate(&resolved)?;
    Ok(resolved)
}

fn validate(r: &Resolved) -> Result<()> {
    if r.pipeline.rows == 0 || r.pipeline.cols == 0 {
        bail!("crossbar geometry must have at least one row and one column");
    }
    if r.pipeline.zeroing_threshold == 0 {
        bail!("zeroing threshold must be at least 1");
    }
    if r.pipeline.adc_full_scale == 0 {
        bail!("adc full scale must be positive");
    }
    if !(r.analog.t_lsb > 0.0) {
        bail!("t_lsb must be positive");
    }
    if !(r.analog.r_min > 0.0 && r.analog.r_min < r.analog.r_max) {
        bail!("resistance range requires 0 < r_min < r_max");
    }
    if !(r.analog.c_int > 0.0) {
        bail!("c_int must be positive");
    }
    if !(r.analog.comparator_threshold > 0.0 && r.analog.comparator_threshold < 1.0) {
        bail!("comparator threshold must lie strictly between 0 and 1");
    }
    for (name, sigma) in [
        ("sigma_exponent", r.variability.sigma_exponent),
        ("sigma_mantissa", r.variability.sigma_mantissa),
    ] {
        if !(sigma >= 0.0) {
            bail!("invalid sigma: {name} must be nonnegative, got {sigma}");
        }
    }
    if r.variability.trials == 0 {
        bail!("trials must be at least 1");
    }
    let entries = [
        r.energy.e_exponent_add,
        r.energy.e_max_search,
        r.energy.e_mantissa_scale,
        r.energy.e_crossbar_mac,
        r.energy.e_digitize,
    ];
    if entries.iter().any(|e| !(*e >= 0.0)) {
        bail!("energy table entries must be nonnegative");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Harness {
        #[command(flatten)]
        cfg: ConfigArgs,
    }

    fn parse(args: &[&str]) -> ConfigArgs {
        Harness::parse_from(std::iter::once(&"test").chain(args)).cfg
    }

    #[test]
    fn defaults_resolve() {
        let r = resolve(&parse(&[])).unwrap();
        assert_eq!(r.pipeline, PipelineConfig::default());
        assert_eq!(r.analog, AnalogConfig::default());
        assert_eq!(r.energy, EnergyTable::table1());
        assert_eq!(r.seed(), 0);
    }

    #[test]
    fn flags_override_defaults() {
        let r = resolve(&parse(&[
            "--rows",
            "32",
            "--significand-mode",
            "stored_4bit",
            "--sigma",
            "0.1",
            "--seed",
            "9",
        ]))
        .unwrap();
        assert_eq!(r.pipeline.rows, 32);
        assert_eq!(r.pipeline.significand_mode, SignificandMode::Stored4Bit);
        // Derived defaults follow the overridden mode and rows.
        assert_eq!(r.pipeline.zeroing_threshold, 4);
        assert_eq!(r.pipeline.adc_full_scale, 32 * 15 * 15);
        assert_eq!(r.variability.sigma_exponent, 0.1);
        assert_eq!(r.variability.sigma_mantissa, 0.1);
        assert_eq!(r.seed(), 9);
    }

    #[test]
    fn file_sits_between_defaults_and_flags() {
        let dir = std::env::temp_dir().join("timefloats-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.json");
        std::fs::write(
            &path,
            r#"{"pipeline": {"rows": 16}, "variability": {"seed": 4, "trials": 7}}"#,
        )
        .unwrap();
        let r = resolve(&parse(&["--config", path.to_str().unwrap()])).unwrap();
        assert_eq!(r.pipeline.rows, 16);
        assert_eq!(r.variability.trials, 7);
        assert_eq!(r.seed(), 4);
        let r = resolve(&parse(&["--config", path.to_str().unwrap(), "--seed", "5"])).unwrap();
        assert_eq!(r.seed(), 5);
        assert_eq!(r.pipeline.rows, 16);
    }

    #[test]
    fn sigma_specific_flags_beat_the_shared_one() {
        let r = resolve(&parse(&["--sigma", "0.2", "--sigma-mantissa", "0.01"])).unwrap();
        assert_eq!(r.variability.sigma_exponent, 0.2);
        assert_eq!(r.variability.sigma_mantissa, 0.01);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(resolve(&parse(&["--sigma", "-0.5"])).is_err());
        assert!(resolve(&parse(&["--rows", "0"])).is_err());
        assert!(resolve(&parse(&["--comparator-threshold", "1.5"])).is_err());
        assert!(resolve(&parse(&["--preset", "bogus"])).is_err());
    }

    #[test]
    fn hash_tracks_config_content() {
        let a = resolve(&parse(&[])).unwrap();
        let b = resolve(&parse(&["--rows", "32"])).unwrap();
        assert_eq!(a.hash(), resolve(&parse(&[])).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
        assert!(a.text_header().contains("config=sha256:"));
    }
}
