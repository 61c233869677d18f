//! The five subcommands. Every command builds its whole report as a string
//! and emits it once, so a run with the same resolved config and seed is
//! byte-identical.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use timefloats::analog::{monte_carlo_error, random_workload};
use timefloats::energy::{efficiency_tops_per_watt, mac_energy, step_energy};
use timefloats::pipeline::{mac, Variability};
use timefloats::training::demo_train;
use timefloats::{
    oracle_dot, DemoConfig, Engine, ErrorStats, Fp8, PerturbationMode, PipelineStep, Rounding,
    TrainRecord, VariabilityModel,
};

use crate::config::{resolve, ConfigArgs};

fn emit(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn parse_operand(token: &str, rounding: Rounding) -> Result<Fp8> {
    if token.contains(':') {
        Ok(token.parse::<Fp8>()?)
    } else {
        let value: f64 = token.parse().context("not a decimal number or s:e:m code")?;
        Ok(Fp8::encode(value, rounding)?)
    }
}

fn parse_operands(tokens: &[String], flag: &str, rounding: Rounding) -> Result<Vec<Fp8>> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, token)| {
            parse_operand(token, rounding)
                .with_context(|| format!("operand {} of {flag} ({token:?})", i + 1))
        })
        .collect()
}

fn relative_error(out: f64, oracle: f64) -> f64 {
    if oracle == 0.0 {
        out.abs()
    } else {
        (out - oracle).abs() / oracle.abs()
    }
}

/// `1.28e-12 -> "1.28 pJ"`, `23e-15 -> "23 fJ"`; trailing zeros trimmed.
fn format_energy(joules: f64) -> String {
    let trim = |s: String| s.trim_end_matches('0').trim_end_matches('.').to_string();
    let pj = joules * 1e12;
    if pj == 0.0 || pj >= 0.1 {
        format!("{} pJ", trim(format!("{pj:.3}")))
    } else {
        format!("{} fJ", trim(format!("{:.3}", joules * 1e15)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Text,
}

// ---------------------------------------------------------------------------
// mac

#[derive(Debug, clap::Args)]
pub struct MacArgs {
    /// Input operands: decimal literals or s:e:m codes, comma separated
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    x: Vec<String>,
    /// Weight operands, same forms as --x
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    w: Vec<String>,
    /// Rounding for decimal operands: truncate | nearest
    #[arg(long, default_value = "truncate")]
    rounding: Rounding,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn cmd_mac(args: &MacArgs) -> Result<String> {
    let resolved = resolve(&args.cfg)?;
    let x = parse_operands(&args.x, "--x", args.rounding)?;
    let w = parse_operands(&args.w, "--w", args.rounding)?;
    let sim = resolved.sim();
    let vm = resolved.variability;
    let mut rng = ChaCha8Rng::seed_from_u64(vm.seed);
    let var = (vm.sigma_exponent > 0.0 || vm.sigma_mantissa > 0.0).then(|| Variability {
        sigma_exponent: vm.sigma_exponent,
        sigma_mantissa: vm.sigma_mantissa,
        rng: &mut rng,
    });
    let trace = mac(&x, &w, &sim, var)?;
    let oracle = oracle_dot(&x, &w)?;
    let output_value = trace.output_value();
    let rel_err = relative_error(output_value, oracle);

    let report = match args.format {
        Format::Json => {
            let doc = serde_json::json!({
                "header": resolved.json_header(),
                "x": x,
                "w": w,
                "trace": trace,
                "oracle": oracle,
                "output_value": output_value,
                "relative_error": rel_err,
            });
            format!("{}\n", serde_json::to_string_pretty(&doc)?)
        }
        Format::Text => {
            let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
            let mut s = String::new();
            writeln!(s, "{}", resolved.text_header())?;
            writeln!(s, "x:              {}", join(&mut x.iter().map(|a| a.to_string())))?;
            writeln!(s, "w:              {}", join(&mut w.iter().map(|b| b.to_string())))?;
            writeln!(
                s,
                "exponent sums:  {}",
                join(&mut trace.exponent_sums.sums.iter().map(|v| v.to_string()))
            )?;
            writeln!(
                s,
                "valid:          {}",
                join(&mut trace.exponent_sums.valid_mask.iter().map(|v| (*v as u8).to_string()))
            )?;
            writeln!(s, "e_max:          {} (element {})", trace.e_max, trace.e_max_id)?;
            writeln!(s, "shifts:         {}", join(&mut trace.shifts.iter().map(|v| v.to_string())))?;
            writeln!(
                s,
                "scaled:         {}",
                join(&mut trace.scaled_mantissas.iter().map(|v| v.to_string()))
            )?;
            writeln!(s, "psum:           +{} -{}", trace.psum_pos, trace.psum_neg)?;
            if let (Some(p), Some(n)) = (trace.analog_psum_pos, trace.analog_psum_neg) {
                writeln!(s, "analog psum:    +{p} -{n}")?;
            }
            writeln!(s, "raw value:      {}", trace.raw_value)?;
            writeln!(s, "output:         {} ({})", trace.output, output_value)?;
            writeln!(s, "oracle:         {oracle}")?;
            writeln!(s, "relative error: {rel_err}")?;
            writeln!(s, "energy:         {}", format_energy(trace.total_energy()))?;
            s
        }
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// Sigma levels, comma separated
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    sigma: Vec<f64>,
    /// Perturbation modes: exponent_only | mantissa_only | both
    #[arg(long, value_delimiter = ',', default_value = "both")]
    mode: Vec<PerturbationMode>,
    /// Workload pairs per cell
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    /// Operand length (defaults to the crossbar row count)
    #[arg(long)]
    vec_len: Option<usize>,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also write a gnuplot-ready whitespace-separated data file
    #[arg(long, value_name = "PATH")]
    gnuplot: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    let resolved = resolve(&args.cfg)?;
    if args.sigma.is_empty() {
        bail!("at least one sigma is required");
    }
    for &sigma in &args.sigma {
        if !(sigma >= 0.0) {
            bail!("invalid sigma {sigma}: must be nonnegative");
        }
    }
    if args.pairs == 0 {
        bail!("workload needs at least one pair");
    }
    let len = args.vec_len.unwrap_or(resolved.pipeline.rows);
    if len == 0 || len > resolved.pipeline.rows {
        bail!("vec_len must lie in 1..={} (crossbar rows)", resolved.pipeline.rows);
    }

    let sim = resolved.sim();
    let seed = resolved.seed();
    let trials = resolved.variability.trials;
    // Same seed for every cell: common random numbers across sigma levels.
    let workload = random_workload(args.pairs, len, seed);
    let mut rows = Vec::new();
    for &sigma in &args.sigma {
        for &mode in &args.mode {
            let vm = VariabilityModel {
                sigma_exponent: sigma,
                sigma_mantissa: sigma,
                seed,
                trials,
            };
            rows.push(monte_carlo_error(&workload, &vm, mode, &sim)?.csv_row());
        }
    }

    let mut csv = format!("{}\n{}\n", resolved.text_header(), ErrorStats::CSV_HEADER);
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    if let Some(path) = &args.gnuplot {
        let mut data = format!("# {}\n", ErrorStats::CSV_HEADER.replace(',', " "));
        for row in &rows {
            data.push_str(&row.replace(',', " "));
            data.push('\n');
        }
        std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(csv)
}

// ---------------------------------------------------------------------------
// energy

#[derive(Debug, clap::Args)]
pub struct EnergyArgs {
    /// Element count of the scalar product
    #[arg(long = "n", value_name = "N", default_value_t = 64)]
    n_elements: usize,
    /// Report only this step's contribution, zeroing the others:
    /// exponent-add | max-search | mantissa-scale | crossbar | digitize
    #[arg(long, value_name = "STEP")]
    zero_all_but: Option<PipelineStep>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn cmd_energy(args: &EnergyArgs) -> Result<String> {
    let resolved = resolve(&args.cfg)?;
    if args.n_elements == 0 {
        bail!("n must be at least 1");
    }
    let table = match args.zero_all_but {
        Some(step) => resolved.energy.zero_all_but(step),
        None => resolved.energy.clone(),
    };
    let n = args.n_elements;
    let total = mac_energy(n, &table);
    let tops = efficiency_tops_per_watt(n, &table);
    let extrapolated = n != 64;

    let report = match args.format {
        Format::Json => {
            let rows: Vec<_> = PipelineStep::ALL
                .iter()
                .map(|&step| {
                    serde_json::json!({
                        "step": step.id(),
                        "description": step.description(),
                        "module": step.module(),
                        "energy_j": step_energy(step, n, &table),
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "header": resolved.json_header(),
                "n_elements": n,
                "extrapolated": extrapolated,
                "steps": rows,
                "total_j": total,
                "ops": 2 * n,
                "tops_per_watt": tops,
            });
            format!("{}\n", serde_json::to_string_pretty(&doc)?)
        }
        Format::Text => {
            let mut s = String::new();
            writeln!(s, "{}", resolved.text_header())?;
            writeln!(
                s,
                "{:<5} {:<48} {:<41} {:>10}",
                "step", "description", "module", "energy"
            )?;
            for step in PipelineStep::ALL {
                writeln!(
                    s,
                    "{:<5} {:<48} {:<41} {:>10}",
                    step.id(),
                    step.description(),
                    step.module(),
                    format_energy(step_energy(step, n, &table)),
                )?;
            }
            writeln!(s)?;
            writeln!(
                s,
                "total: {} for one {n}-element scalar product ({} ops)",
                format_energy(total),
                2 * n
            )?;
            writeln!(s, "efficiency: {tops:.2} TOPS/W")?;
            if extrapolated {
                writeln!(s, "note: extrapolated from the 64-element reference point")?;
            }
            s
        }
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Arithmetic engine: timefloats | float_ref
    #[arg(long, default_value = "timefloats")]
    engine: Engine,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// SGD learning rate
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Hidden layer width
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    /// Synthetic dataset size
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Dataset jitter
    #[arg(long, default_value_t = 0.12)]
    noise: f64,
    /// Write the CSV curves here instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Dump the final quantized weights as JSON
    #[arg(long, value_name = "PATH")]
    dump_weights: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let resolved = resolve(&args.cfg)?;
    if args.epochs == 0 {
        bail!("epochs must be at least 1");
    }
    if args.points < 2 {
        bail!("dataset needs at least 2 points");
    }
    if args.hidden == 0 {
        bail!("hidden width must be at least 1");
    }
    if !(args.lr >= 0.0) {
        bail!("learning rate must be nonnegative");
    }
    let demo = DemoConfig {
        engine: args.engine,
        epochs: args.epochs,
        learning_rate: args.lr,
        hidden: args.hidden,
        points: args.points,
        noise: args.noise,
        sigma_exponent: resolved.variability.sigma_exponent,
        sigma_mantissa: resolved.variability.sigma_mantissa,
        seed: resolved.seed(),
    };
    let sim = resolved.sim();
    let (records, net) = demo_train(&demo, &sim)?;
    if let Some(path) = &args.dump_weights {
        std::fs::write(path, net.weights_json())
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let mut s = format!("{}\n", resolved.text_header());
    writeln!(s, "# engine={} epochs={} lr={}", demo.engine, demo.epochs, demo.learning_rate)?;
    writeln!(s, "{}", TrainRecord::CSV_HEADER)?;
    for record in &records {
        writeln!(s, "{}", record.csv_row())?;
    }
    let last = records.last().expect("at least one epoch");
    writeln!(s, "# final_accuracy={}", last.accuracy)?;
    writeln!(s, "# final_loss={}", last.loss)?;
    writeln!(s, "# total_energy_j={}", last.total_energy)?;
    writeln!(s, "# mac_count={}", last.mac_count)?;
    Ok(s)
}

// ---------------------------------------------------------------------------
// encode

#[derive(Debug, clap::Args)]
pub struct EncodeArgs {
    /// Decimal literals to encode or s:e:m codes to decode
    #[arg(required = true, allow_negative_numbers = true)]
    values: Vec<String>,
    /// Rounding for decimal inputs: truncate | nearest
    #[arg(long, default_value = "truncate")]
    rounding: Rounding,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<String> {
    let resolved = resolve(&args.cfg)?;
    let mut s = format!("{}\n", resolved.text_header());
    for (i, token) in args.values.iter().enumerate() {
        if token.contains(':') {
            let code: Fp8 = token
                .parse()
                .with_context(|| format!("value {} ({token:?})", i + 1))?;
            writeln!(s, "{code} = {}", code.decode())?;
        } else {
            let value: f64 = token
                .parse()
                .with_context(|| format!("value {} ({token:?}): not a number or s:e:m code", i + 1))?;
            let code = Fp8::encode(value, args.rounding)?;
            writeln!(
                s,
                "{value} -> {code} (decodes to {}, rel err {})",
                code.decode(),
                relative_error(code.decode(), value)
            )?;
        }
    }
    Ok(s)
}

/// Build and emit the report of one parsed subcommand.
pub fn run(command: &crate::Command) -> Result<()> {
    use crate::Command;
    match command {
        Command::Mac(args) => emit(None, &cmd_mac(args)?),
        Command::Sweep(args) => emit(args.out.as_ref(), &cmd_sweep(args)?),
        Command::Energy(args) => emit(None, &cmd_energy(args)?),
        Command::Train(args) => emit(args.out.as_ref(), &cmd_train(args)?),
        Command::Encode(args) => emit(None, &cmd_encode(args)?),
    }
}
