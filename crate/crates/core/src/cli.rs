//! Command implementations behind the `atomlink` binary.
//!
//! Every command loads one scenario document, runs a module and writes CSV
//! (prefixed by `# ` lines echoing the full scenario) or a JSON object with
//! the scenario under `"config"`. Output goes to `--out` or stdout.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{compose_error_budget, fidelity_lower_bound, fit_coherence_scan, Composition, ErrorBudget};
use crate::config::{load_preset, ScenarioConfig, CONFIG_DIR_ENV};
use crate::decoherence::synthetic_coherence_scan;
use crate::error::{Error, Result};
use crate::link::SnrRow;
use crate::qstate::{AtomOutcome, PhotonPort};
use crate::raman::{delta_four_level, delta_three_level, transfer_spectrum, SpectrumPoint};
use crate::rate::{rate_sweep, RateResult};
use crate::seqsim::{DetectionRecord, RunReport, RunSummary, SettingTally, Simulator, StopCondition, GENERATOR};
use crate::zeeman::QubitBasis;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "atomlink",
    version,
    about = "Atom-photon entanglement link budgets and sequence simulation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Scenario file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped scenario name, looked up in $ATOMLINK_CONFIG_DIR or the bundled presets.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Overrides `sequence.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; a directory for `simulate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Initial,
    Memory,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attempt period, repetition rate, link efficiency and event rate versus length.
    Rate {
        /// `start:stop:step` or a comma-separated list, in km.
        #[arg(long, default_value = "0:101:1")]
        lengths: String,
        /// Overrides `sequence.duty_cycle`.
        #[arg(long)]
        duty_cycle: Option<f64>,
    },
    /// Signal and noise click probabilities and SNR versus length.
    Snr {
        #[arg(long, default_value = "0:101:1")]
        lengths: String,
        /// Per-detector dark-count rate (cps) replacing `link.dark_count_rate_cps`.
        #[arg(long)]
        dark_counts: Option<f64>,
    },
    /// Transfer probability of the target and blocked Zeeman states versus two-photon detuning.
    Raman {
        #[arg(long, default_value_t = -0.6, allow_hyphen_values = true)]
        delta_min_mhz: f64,
        #[arg(long, default_value_t = 0.6, allow_hyphen_values = true)]
        delta_max_mhz: f64,
        #[arg(long, default_value_t = 601)]
        points: usize,
        /// Overrides `raman.bias_field_gauss`.
        #[arg(long)]
        field_gauss: Option<f64>,
    },
    /// Monte-Carlo campaign; writes records.csv and report.json under --out.
    Simulate {
        /// Heralded events to collect.
        #[arg(long, conflicts_with = "hours")]
        events: Option<u64>,
        /// Simulated wall-clock hours.
        #[arg(long)]
        hours: Option<f64>,
    },
    /// Synthetic delayed-readout scan and T2 fit.
    Coherence {
        #[arg(long, value_enum, default_value_t = BasisArg::Memory)]
        basis: BasisArg,
        /// Storage times in µs; defaults to ten points over three T2.
        #[arg(long)]
        delays_us: Option<String>,
        /// Shots per analysis angle.
        #[arg(long, default_value_t = 2000)]
        shots: u64,
        /// Analysis angles per delay, spread over half a turn.
        #[arg(long, default_value_t = 8)]
        angles: usize,
    },
    /// Reduces a record log against the scenario's measurement schedule.
    Analyze { records: PathBuf },
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn usage(path: &str, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

pub fn load_scenario(global: &GlobalOpts) -> Result<ScenarioConfig> {
    let mut cfg = match (&global.config, &global.preset) {
        (Some(path), _) => ScenarioConfig::from_path(path)?,
        (None, Some(name)) => load_preset(name)?,
        (None, None) => {
            log::info!("no --config or --preset given; using built-in defaults (see ${CONFIG_DIR_ENV} for presets)");
            ScenarioConfig::default()
        }
    };
    if let Some(seed) = global.seed {
        cfg.sequence.seed = seed;
    }
    Ok(cfg)
}

/// Parses `a:b:step`, a comma list, or a single value. Values must be
/// finite, non-negative and non-decreasing.
pub fn parse_grid(name: &str, text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| usage(name, format!("`{s}` is not a number")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(usage(name, format!("{v} must be finite and >= 0")));
        }
        Ok(v)
    };
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(usage(name, "range must be start:stop:step"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if stop < start {
            return Err(usage(name, format!("descending range {start}:{stop}")));
        }
        if step <= 0.0 && stop > start {
            return Err(usage(name, "step must be > 0"));
        }
        let n = if stop == start {
            0
        } else {
            ((stop - start) / step + 1e-9).floor() as usize
        };
        (0..=n).map(|i| start + i as f64 * step).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.windows(2).any(|w| w[1] < w[0]) {
        return Err(usage(name, "values must be non-decreasing"));
    }
    Ok(values)
}

fn echo_lines(cfg: &ScenarioConfig, command: &str) -> Vec<String> {
    let mut lines = vec![format!("atomlink {} {command}", env!("CARGO_PKG_VERSION"))];
    lines.extend(cfg.to_toml_string().lines().map(str::to_string));
    lines
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(io::Error::other(e))
}

/// CSV with `# ` echo lines, a fixed header and one serialized row each.
fn write_csv<T: Serialize>(
    w: &mut dyn Write,
    echo: &[String],
    header: &[&str],
    rows: &[T],
    footer: &[String],
) -> Result<()> {
    for line in echo {
        writeln!(w, "{}", format!("# {line}").trim_end())?;
    }
    {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(&mut *w);
        writer.write_record(header).map_err(csv_error)?;
        for row in rows {
            writer.serialize(row).map_err(csv_error)?;
        }
        writer.flush()?;
    }
    for line in footer {
        writeln!(w, "{}", format!("# {line}").trim_end())?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(w: &mut dyn Write, cfg: &ScenarioConfig, body: serde_json::Value) -> Result<()> {
    let mut doc = serde_json::json!({ "config": cfg });
    if let (Some(doc), serde_json::Value::Object(body)) = (doc.as_object_mut(), body) {
        doc.extend(body);
    }
    serde_json::to_writer_pretty(&mut *w, &doc).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn to_json(v: impl Serialize) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.into()))
}

const RATE_HEADER: [&str; 5] = [
    "length_km",
    "attempt_period_us",
    "repetition_rate_hz",
    "eta",
    "rate_per_s",
];
const SNR_HEADER: [&str; 5] = ["length_km", "p_signal", "p_qfc", "p_dc", "snr"];
const RAMAN_HEADER: [&str; 3] = ["delta_mhz", "p_target", "p_blocked"];
const RECORD_HEADER: [&str; 6] = [
    "time_us",
    "attempt_idx",
    "setting",
    "photon_port",
    "atom_outcome",
    "truth_tag",
];
const COHERENCE_HEADER: [&str; 3] = ["delay_us", "visibility", "visibility_err"];
const TALLY_HEADER: [&str; 8] = [
    "setting",
    "plus_plus",
    "plus_minus",
    "plus_leak",
    "minus_plus",
    "minus_minus",
    "minus_leak",
    "correlator",
];

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_scenario(&cli.global)?;
    let g = &cli.global;
    match &cli.command {
        Command::Rate { lengths, duty_cycle } => {
            let lengths = parse_grid("lengths", lengths)?;
            let rows = rate_rows(&cfg, &lengths, duty_cycle.unwrap_or(cfg.sequence.duty_cycle))?;
            let mut w = open_out(g.out.as_deref())?;
            match g.format {
                Format::Csv => write_csv(&mut *w, &echo_lines(&cfg, "rate"), &RATE_HEADER, &rows, &[]),
                Format::Json => write_json(&mut *w, &cfg, serde_json::json!({ "rows": to_json(&rows)? })),
            }
        }
        Command::Snr { lengths, dark_counts } => {
            let lengths = parse_grid("lengths", lengths)?;
            let mut cfg = cfg;
            if let Some(rate) = dark_counts {
                cfg.link.dark_count_rate_cps = *rate;
                cfg.link.validate().map_err(|e| usage("dark_counts", e.to_string()))?;
            }
            let rows: Vec<SnrRow> = cfg.link.snr_sweep(&lengths)?;
            let crossover = cfg.link.noise_crossover_km()?;
            let mut w = open_out(g.out.as_deref())?;
            match g.format {
                Format::Csv => {
                    let footer = vec![format!(
                        "noise_crossover_km = {}",
                        crossover.map_or("none".into(), |c| c.to_string())
                    )];
                    write_csv(&mut *w, &echo_lines(&cfg, "snr"), &SNR_HEADER, &rows, &footer)
                }
                Format::Json => write_json(
                    &mut *w,
                    &cfg,
                    serde_json::json!({ "rows": to_json(&rows)?, "noise_crossover_km": crossover }),
                ),
            }
        }
        Command::Raman {
            delta_min_mhz,
            delta_max_mhz,
            points,
            field_gauss,
        } => {
            let mut cfg = cfg;
            if let Some(b) = field_gauss {
                cfg.raman.bias_field_gauss = *b;
                cfg.raman.validate().map_err(|e| usage("field_gauss", e.to_string()))?;
            }
            let rows: Vec<SpectrumPoint> =
                transfer_spectrum(&cfg.atomic, &cfg.raman, *delta_min_mhz, *delta_max_mhz, *points)
                    .map_err(|e| usage("raman", e.to_string()))?;
            let d3 = delta_three_level(&cfg.atomic, &cfg.raman)? / (2.0 * PI);
            let d4 = delta_four_level(&cfg.atomic, &cfg.raman)? / (2.0 * PI);
            let mut w = open_out(g.out.as_deref())?;
            match g.format {
                Format::Csv => {
                    let footer = vec![
                        format!("delta_three_level_mhz = {d3}"),
                        format!("delta_four_level_mhz = {d4}"),
                    ];
                    write_csv(&mut *w, &echo_lines(&cfg, "raman"), &RAMAN_HEADER, &rows, &footer)
                }
                Format::Json => write_json(
                    &mut *w,
                    &cfg,
                    serde_json::json!({ "rows": to_json(&rows)?, "delta_three_level_mhz": d3, "delta_four_level_mhz": d4 }),
                ),
            }
        }
        Command::Simulate { events, hours } => {
            let stop = match (events, hours) {
                (Some(n), _) => StopCondition::Events(*n),
                (None, Some(h)) if h.is_finite() && *h >= 0.0 => StopCondition::WallHours(*h),
                (None, Some(h)) => return Err(usage("hours", format!("{h} must be finite and >= 0"))),
                (None, None) => return Err(usage("simulate", "give --events or --hours")),
            };
            simulate(&cfg, stop, g.out.as_deref())
        }
        Command::Coherence {
            basis,
            delays_us,
            shots,
            angles,
        } => coherence(&cfg, g, *basis, delays_us.as_deref(), *shots, *angles),
        Command::Analyze { records } => analyze(&cfg, g, records),
    }
}

fn rate_rows(cfg: &ScenarioConfig, lengths: &[f64], duty_cycle: f64) -> Result<Vec<RateResult>> {
    rate_sweep(&cfg.timing, &cfg.link, duty_cycle, lengths).map_err(|e| match e {
        Error::Parameter { name: "duty_cycle", .. } => usage("duty_cycle", e.to_string()),
        other => other,
    })
}

/// Everything `simulate` writes to report.json.
#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub summary: RunSummary,
    pub report: RunReport,
    pub predicted_error_budget: ErrorBudget,
    pub predicted_mean_visibility: f64,
}

pub fn simulate(cfg: &ScenarioConfig, stop: StopCondition, out: Option<&Path>) -> Result<()> {
    let seq = cfg.sequence_config()?;
    let sim = Simulator::new(&seq)?;
    let (summary, records) = sim.run_campaign(stop)?;
    log::info!(
        "{} events ({} signal) in {} attempts, {:.2} h wall time",
        summary.events,
        summary.signal_events,
        summary.total_attempts,
        summary.wall_time_hours
    );
    let report = RunReport::from_tallies(&cfg.sequence.settings, &summary.tallies, cfg.sequence.chsh.as_ref())?;
    let full = SimulationReport {
        predicted_error_budget: seq.error_budget()?,
        predicted_mean_visibility: seq.expected_mean_visibility(crate::seqsim::Channels::ALL)?,
        summary,
        report,
    };
    let echo = echo_lines(cfg, "simulate");
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = open_out(Some(&dir.join("records.csv")))?;
            write_csv(&mut *w, &echo, &RECORD_HEADER, &records, &[])?;
            let mut w = open_out(Some(&dir.join("report.json")))?;
            write_json(&mut *w, cfg, to_json(&full)?)
        }
        None => {
            let mut w = open_out(None)?;
            write_json(&mut *w, cfg, to_json(&full)?)
        }
    }
}

fn coherence(
    cfg: &ScenarioConfig,
    g: &GlobalOpts,
    basis: BasisArg,
    delays: Option<&str>,
    shots: u64,
    angles: usize,
) -> Result<()> {
    let model = match basis {
        BasisArg::Initial => cfg.initial_model()?,
        BasisArg::Memory => cfg.memory_model()?,
    };
    let delays = match delays {
        Some(text) => parse_grid("delays_us", text)?,
        None => (0..10).map(|i| i as f64 * model.t2_us * 3.0 / 9.0).collect(),
    };
    if shots == 0 {
        return Err(usage("shots", "must be >= 1"));
    }
    if angles < 4 {
        return Err(usage("angles", "need at least 4 analysis angles"));
    }
    let grid: Vec<f64> = (0..angles).map(|i| PI * i as f64 / angles as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sequence.seed);
    let samples = synthetic_coherence_scan(&model, &delays, &grid, shots, &mut rng)?;
    let fit = fit_coherence_scan(&samples)?;
    let mut w = open_out(g.out.as_deref())?;
    let name = match model.basis {
        QubitBasis::Initial => "initial",
        QubitBasis::Memory => "memory",
    };
    match g.format {
        Format::Csv => {
            let footer = vec![
                format!("basis = {name}"),
                format!("t2_us = {}", fit.decay.t2_us),
                format!("t2_err_us = {}", fit.decay.t2_err),
                format!("v0 = {}", fit.decay.v0),
                format!("v0_err = {}", fit.decay.v0_err),
            ];
            write_csv(
                &mut *w,
                &echo_lines(cfg, "coherence"),
                &COHERENCE_HEADER,
                &fit.points,
                &footer,
            )
        }
        Format::Json => write_json(
            &mut *w,
            cfg,
            serde_json::json!({ "basis": name, "generator": GENERATOR, "points": to_json(&fit.points)?, "fit": to_json(fit.decay)? }),
        ),
    }
}

/// Reads a record log written by `simulate`; `#` lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = File::open(path).map_err(|e| usage(&path.display().to_string(), e.to_string()))?;
    let body: String = BufReader::new(file)
        .lines()
        .filter(|l| !l.as_ref().is_ok_and(|l| l.starts_with('#')))
        .map(|l| l.map(|l| l + "\n"))
        .collect::<io::Result<_>>()?;
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<DetectionRecord>, _>>()
        .map_err(|e| usage(&path.display().to_string(), e.to_string()))
}

/// Per-setting tallies of a record log, in schedule order.
pub fn tally_records(cfg: &ScenarioConfig, records: &[DetectionRecord]) -> Result<Vec<SettingTally>> {
    let settings = &cfg.sequence.settings;
    let mut tallies: Vec<SettingTally> = settings.iter().map(|s| SettingTally::new(&s.label)).collect();
    for r in records {
        let Some(i) = settings.iter().position(|s| s.label == r.setting) else {
            return Err(usage(
                "records",
                format!("setting `{}` is not in the scenario schedule", r.setting),
            ));
        };
        let names = settings[i].photon.port_names();
        let port = match names.iter().position(|n| *n == r.photon_port) {
            Some(0) => PhotonPort::Plus,
            Some(_) => PhotonPort::Minus,
            None => {
                return Err(usage(
                    "records",
                    format!("port `{}` does not belong to setting `{}`", r.photon_port, r.setting),
                ))
            }
        };
        tallies[i].add(port, AtomOutcome::from(r.atom_outcome));
    }
    Ok(tallies)
}

#[derive(Debug, Serialize)]
struct TallyRow {
    setting: String,
    plus_plus: u64,
    plus_minus: u64,
    plus_leak: u64,
    minus_plus: u64,
    minus_minus: u64,
    minus_leak: u64,
    correlator: Option<f64>,
}

fn analyze(cfg: &ScenarioConfig, g: &GlobalOpts, path: &Path) -> Result<()> {
    let records = read_records(path)?;
    let tallies = tally_records(cfg, &records)?;
    let report = RunReport::from_tallies(&cfg.sequence.settings, &tallies, cfg.sequence.chsh.as_ref())?;
    let budget = cfg.sequence_config()?.error_budget()?;
    let multiplicative = compose_error_budget(&budget, Composition::Multiplicative)?;
    let additive = compose_error_budget(&budget, Composition::Additive)?;
    let mut w = open_out(g.out.as_deref())?;
    match g.format {
        Format::Csv => {
            let rows: Vec<TallyRow> = tallies
                .iter()
                .map(|t| TallyRow {
                    setting: t.label.clone(),
                    plus_plus: t.counts[0][0],
                    plus_minus: t.counts[0][1],
                    plus_leak: t.counts[0][2],
                    minus_plus: t.counts[1][0],
                    minus_minus: t.counts[1][1],
                    minus_leak: t.counts[1][2],
                    correlator: t.same_different().correlator().ok().map(|c| c.0),
                })
                .collect();
            let mut footer = vec![format!("events = {}", records.len())];
            for f in &report.fringes {
                footer.push(format!(
                    "fringe_visibility_{} = {} +- {}",
                    f.port, f.fit.visibility, f.fit.visibility_err
                ));
            }
            if let (Some(v), Some(e)) = (report.mean_visibility, report.mean_visibility_err) {
                footer.push(format!("mean_visibility = {v} +- {e}"));
            }
            if let (Some(f), Some(e)) = (report.fidelity_bound, report.fidelity_bound_err) {
                footer.push(format!("fidelity_bound = {f} +- {e}"));
            }
            if let Some(c) = &report.chsh {
                footer.push(format!("chsh_s = {} +- {}", c.s, c.sigma));
            }
            for (name, value) in budget.terms() {
                footer.push(format!("budget_{name} = {value}"));
            }
            footer.push(format!("budget_fidelity_multiplicative = {multiplicative}"));
            footer.push(format!("budget_fidelity_additive = {additive}"));
            write_csv(&mut *w, &echo_lines(cfg, "analyze"), &TALLY_HEADER, &rows, &footer)
        }
        Format::Json => write_json(
            &mut *w,
            cfg,
            serde_json::json!({
                "events": records.len(),
                "tallies": to_json(&tallies)?,
                "report": to_json(&report)?,
                "error_budget": to_json(budget)?,
                "budget_fidelity_multiplicative": multiplicative,
                "budget_fidelity_additive": additive,
                "budget_fidelity_from_mean_visibility": report.mean_visibility.map(fidelity_lower_bound),
            }),
        ),
    }
}
