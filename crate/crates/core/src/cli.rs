//! The `oea` command-line front end.
//!
//! Every command is a function of its flags, optional config file, seed and
//! input files. Outputs carry a `format` tag and `version`, and JSON outputs
//! echo the effective configuration. Flags override config-file values,
//! which override built-in defaults.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{OeaError, Result};
use crate::latency::{expected_active_experts, fit_linear, read_observations_csv, LatencyParams};
use crate::moe::{LayerDims, MoeLayerParams};
use crate::routing::{route, CapSemantics, RoutingConfig};
use crate::sim::scores::read_score_records;
use crate::sim::{
    default_grid, gen_scores, padding_experiment, pareto_frontier, read_sweep_csv, simplified_grid,
    simulate_decode, sweep, write_score_records, write_sweep_csv, write_trace_csv, GenKind,
    ReplayTrace, Rounding, ScoreGenConfig, ScoreRecord, SimOptions,
};

pub const OUTPUT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Vanilla,
    Pruned,
    Oea,
    Simplified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CapArg {
    Exact,
    Pseudocode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GenArg {
    Dirichlet,
    Clustered,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridArg {
    /// The full ablation grid, scaled to the expert count.
    Full,
    /// Pruned and simplified runs for every k0 up to k.
    Simplified,
}

/// Settings shared by all commands. Every field may also come from the
/// `--config` JSON file under the same kebab-case name.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// Router.
    #[arg(long, alias = "routing", value_enum)]
    pub mode: Option<ModeArg>,
    /// Model's default experts per token.
    #[arg(long)]
    pub k: Option<usize>,
    /// Baseline experts per token.
    #[arg(long)]
    pub k0: Option<usize>,
    /// Cumulative score mass for the adaptive baseline.
    #[arg(long)]
    pub p: Option<f64>,
    /// Per-token expert cap after piggybacking.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Deepest preference rank considered for piggybacking.
    #[arg(long)]
    pub maxp: Option<usize>,
    #[arg(long, value_enum)]
    pub cap: Option<CapArg>,
    #[arg(long)]
    pub n_experts: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score generator.
    #[arg(long, value_enum)]
    pub gen: Option<GenArg>,
    /// Dirichlet concentration.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Token groups for the clustered generator.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Scale of the shared per-group logit template.
    #[arg(long)]
    pub concentration: Option<f64>,
    /// Scale of the per-token logit noise.
    #[arg(long)]
    pub spread: Option<f64>,
    /// Score trace to replay with `--gen replay`.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Per token-expert compute cost (µs).
    #[arg(long)]
    pub a_us: Option<f64>,
    /// Per expert weight-fetch cost (µs).
    #[arg(long)]
    pub b_us: Option<f64>,
    /// Toy layer file; enables divergence measurement.
    #[arg(long)]
    pub toy_layer: Option<PathBuf>,
    /// Generate a random toy layer from the seed instead of loading one.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub toy: Option<bool>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Settings {
    /// Fills unset fields from `base`.
    pub fn over(mut self, base: &Settings) -> Settings {
        overlay!(self, base; mode, k, k0, p, kmax, maxp, cap, n_experts, batch, steps, layers,
            seed, gen, alpha, groups, concentration, spread, replay, a_us, b_us, toy_layer, toy,
            d_model, d_hidden);
        self
    }
}

/// Settings after defaults are applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Effective {
    pub mode: ModeArg,
    pub k: usize,
    pub k0: usize,
    pub p: f64,
    pub kmax: usize,
    pub maxp: usize,
    pub cap: CapArg,
    pub n_experts: usize,
    pub batch: usize,
    pub steps: usize,
    pub layers: usize,
    pub seed: Option<u64>,
    pub gen: GenArg,
    pub alpha: f64,
    pub groups: usize,
    pub concentration: f64,
    pub spread: f64,
    pub replay: Option<PathBuf>,
    pub a_us: f64,
    pub b_us: f64,
    pub toy_layer: Option<PathBuf>,
    pub toy: bool,
    pub d_model: usize,
    pub d_hidden: usize,
}

impl Effective {
    fn resolve(s: &Settings, n_experts_hint: Option<usize>) -> Effective {
        let k = s.k.unwrap_or(8);
        let n_experts = n_experts_hint.or(s.n_experts).unwrap_or(128);
        Effective {
            mode: s.mode.unwrap_or(ModeArg::Vanilla),
            k,
            k0: s.k0.unwrap_or(k),
            p: s.p.unwrap_or(1.0),
            kmax: s.kmax.unwrap_or(k),
            maxp: s.maxp.unwrap_or(n_experts),
            cap: s.cap.unwrap_or(CapArg::Exact),
            n_experts,
            batch: s.batch.unwrap_or(16),
            steps: s.steps.unwrap_or(200),
            layers: s.layers.unwrap_or(1),
            seed: s.seed,
            gen: s.gen.unwrap_or(GenArg::Dirichlet),
            alpha: s.alpha.unwrap_or(1.0),
            groups: s.groups.unwrap_or(4),
            concentration: s.concentration.unwrap_or(2.0),
            spread: s.spread.unwrap_or(1.0),
            replay: s.replay.clone(),
            a_us: s.a_us.unwrap_or(0.05),
            b_us: s.b_us.unwrap_or(2.0),
            toy_layer: s.toy_layer.clone(),
            toy: s.toy.unwrap_or(false),
            d_model: s.d_model.unwrap_or(64),
            d_hidden: s.d_hidden.unwrap_or(96),
        }
    }

    fn routing(&self) -> Result<RoutingConfig> {
        let cap = match self.cap {
            CapArg::Exact => CapSemantics::ExactCap,
            CapArg::Pseudocode => CapSemantics::PseudocodeStrict,
        };
        let cfg = match self.mode {
            ModeArg::Vanilla => RoutingConfig::vanilla(self.k),
            ModeArg::Pruned => RoutingConfig::pruned(self.k0, self.p),
            ModeArg::Oea => RoutingConfig::oea(self.k0, self.p, self.kmax, self.maxp).with_cap(cap),
            ModeArg::Simplified => {
                RoutingConfig::simplified(self.k0, self.k, self.n_experts).with_cap(cap)
            }
        };
        cfg.validate(self.n_experts)?;
        Ok(cfg)
    }

    fn latency(&self) -> Result<LatencyParams> {
        LatencyParams::new(self.a_us, self.b_us)
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| OeaError::InvalidInput("--seed is required for this command".into()))
    }

    fn generator(&self) -> Result<ScoreGenConfig> {
        let kind = match self.gen {
            GenArg::Dirichlet => GenKind::Dirichlet { alpha: self.alpha },
            GenArg::Clustered => GenKind::Clustered {
                groups: self.groups,
                concentration: self.concentration,
                spread: self.spread,
            },
            GenArg::Replay => {
                let path = self.replay.as_ref().ok_or_else(|| {
                    OeaError::InvalidInput("--gen replay needs --replay <file>".into())
                })?;
                let reader = BufReader::new(open(path)?);
                GenKind::Replay(ReplayTrace::from_reader(
                    &path.display().to_string(),
                    reader,
                )?)
            }
        };
        let cfg = ScoreGenConfig {
            kind,
            n_experts: self.n_experts,
            batch: self.batch,
            steps: self.steps,
            layers: self.layers,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn toy_layer(&self) -> Result<Option<MoeLayerParams>> {
        if let Some(path) = &self.toy_layer {
            let layer = MoeLayerParams::read_json(BufReader::new(open(path)?))?;
            if layer.dims.n_experts != self.n_experts {
                return Err(OeaError::InvalidInput(format!(
                    "toy layer has {} experts, run uses {}",
                    layer.dims.n_experts, self.n_experts
                )));
            }
            return Ok(Some(layer));
        }
        if self.toy {
            let dims = LayerDims {
                d_model: self.d_model,
                d_hidden: self.d_hidden,
                n_experts: self.n_experts,
            };
            return Ok(Some(MoeLayerParams::random(dims, self.seed()?)?));
        }
        Ok(None)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "oea",
    version,
    about = "Batch-aware MoE expert routing and decode simulation"
)]
pub struct Cli {
    /// JSON file of default settings (kebab-case keys, same names as flags).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for internal parallelism; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Route every record of a score trace and write the plans as JSON.
    Route {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Simulate decode steps; writes trace.csv and summary.json into --out.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run a hyperparameter grid; writes sweep.csv, frontier.csv, summary.json.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "simplified")]
        grid: GridArg,
        /// Skip snapping points to plotting bins.
        #[arg(long)]
        no_rounding: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Extract the Pareto frontier from a sweep CSV.
    Pareto {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare unpadded, naively padded and mask-padded batches.
    Padding {
        #[arg(long)]
        pad_to: usize,
        /// Report the masked variant's delta instead of the naive one.
        #[arg(long)]
        masked: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Fit latency against activated experts from a CSV of observations.
    FitLatency {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic score trace (ndjson) for later replay or routing.
    GenScores {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Write a random toy MoE layer as JSON.
    InitLayer {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &OeaError) -> i32 {
    match e {
        OeaError::Io(_) => 1,
        _ => 2,
    }
}

/// Runs a parsed command, honoring `--threads`.
pub fn execute(cli: Cli) -> Result<()> {
    let file_settings = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| OeaError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Settings>(&text)
                .map_err(|e| OeaError::Format(format!("{}: {e}", path.display())))?
        }
        None => Settings::default(),
    };
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| OeaError::InvalidInput(e.to_string()))?;
            pool.install(|| dispatch(cli.command, &file_settings))
        }
        None => dispatch(cli.command, &file_settings),
    }
}

fn dispatch(command: Command, file: &Settings) -> Result<()> {
    match command {
        Command::Route {
            scores,
            out,
            settings,
        } => cmd_route(&scores, out.as_deref(), &settings.over(file)),
        Command::Simulate { out, settings } => cmd_simulate(&out, &settings.over(file)),
        Command::Sweep {
            out,
            grid,
            no_rounding,
            settings,
        } => cmd_sweep(&out, grid, !no_rounding, &settings.over(file)),
        Command::Pareto { input, out } => cmd_pareto(&input, out.as_deref()),
        Command::Padding {
            pad_to,
            masked,
            out,
            settings,
        } => cmd_padding(pad_to, masked, out.as_deref(), &settings.over(file)),
        Command::FitLatency { input, out } => cmd_fit_latency(&input, out.as_deref()),
        Command::GenScores { out, settings } => {
            cmd_gen_scores(out.as_deref(), &settings.over(file))
        }
        Command::InitLayer { out, settings } => {
            cmd_init_layer(out.as_deref(), &settings.over(file))
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| OeaError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| OeaError::Io(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to `out`, or to standard output when `out` is `None`.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(bytes)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(bytes)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn envelope(format: &str, body: serde_json::Value) -> serde_json::Value {
    let mut v = json!({"format": format, "version": OUTPUT_VERSION});
    if let (Some(obj), serde_json::Value::Object(extra)) = (v.as_object_mut(), body) {
        obj.extend(extra);
    }
    v
}

pub fn cmd_route(scores_path: &Path, out: Option<&Path>, s: &Settings) -> Result<()> {
    let records = read_score_records(BufReader::new(open(scores_path)?))?;
    let n = records[0].1.n_experts();
    let eff = Effective::resolve(s, Some(n));
    let cfg = eff.routing()?;
    let mut plans = Vec::with_capacity(records.len());
    for (i, (rec, scores)) in records.iter().enumerate() {
        if scores.n_experts() != n {
            return Err(OeaError::Format(format!(
                "record {i}: {} experts, first record has {n}",
                scores.n_experts()
            )));
        }
        let plan = route(scores, &cfg).map_err(|e| OeaError::Format(format!("record {i}: {e}")))?;
        let tokens: Vec<_> = plan
            .sets
            .iter()
            .zip(&plan.weights)
            .map(|(s, w)| json!({"experts": s, "weights": w}))
            .collect();
        plans.push(json!({
            "step": rec.step,
            "layer": rec.layer,
            "n_experts": plan.n_experts,
            "T": plan.active_count,
            "total_load": plan.total_load(),
            "active_union": plan.active_union,
            "loads": plan.loads,
            "tokens": tokens,
        }));
    }
    let doc = envelope(
        "oea.plan",
        json!({
            "config": eff,
            "routing": cfg,
            "scores": scores_path.display().to_string(),
            "plans": plans,
        }),
    );
    emit(out, &json_bytes(&doc)?)
}

pub fn cmd_simulate(out_dir: &Path, s: &Settings) -> Result<()> {
    let eff = Effective::resolve(s, None);
    let gen = eff.generator()?;
    let cfg = eff.routing()?;
    let latency = eff.latency()?;
    let layer = eff.toy_layer()?;
    let mut opts = SimOptions::new(eff.k);
    if let Some(l) = &layer {
        opts = opts.with_toy_layer(l);
    }
    let trace = simulate_decode(&gen, &cfg, &latency, &opts)?;
    let sm = trace.summary;

    fs::create_dir_all(out_dir)?;
    let mut csv_bytes = Vec::new();
    write_trace_csv(&mut csv_bytes, &trace.records)?;
    emit(Some(&out_dir.join("trace.csv")), &csv_bytes)?;

    let half = 1.96 * sm.std_err_active_experts;
    let doc = envelope(
        "oea.summary",
        json!({
            "command": "simulate",
            "config": eff,
            "routing": cfg,
            "generator": gen.describe(),
            "latency": latency,
            "quality_metric": layer.as_ref().map(|_| "toy_layer_relative_output_error"),
            "summary": sm,
            "mean_active_experts_ci95": [sm.mean_active_experts - half, sm.mean_active_experts + half],
            "expected_active_experts_uniform": expected_active_experts(eff.n_experts, eff.k, eff.batch),
            "normalized_average": {
                "active_experts": sm.normalized_active_experts,
                "latency": sm.normalized_latency,
            },
        }),
    );
    emit(Some(&out_dir.join("summary.json")), &json_bytes(&doc)?)
}

pub fn cmd_sweep(out_dir: &Path, grid: GridArg, round: bool, s: &Settings) -> Result<()> {
    let eff = Effective::resolve(s, None);
    let gen = eff.generator()?;
    let latency = eff.latency()?;
    let layer = eff.toy_layer()?;
    let mut opts = SimOptions::new(eff.k);
    if let Some(l) = &layer {
        opts = opts.with_toy_layer(l);
    }
    let configs = match grid {
        GridArg::Full => default_grid(eff.n_experts, eff.k),
        GridArg::Simplified => simplified_grid(eff.n_experts, eff.k),
    };
    let rounding = round.then(Rounding::default);
    let points = sweep(&gen, &configs, &latency, &opts, rounding.as_ref())?;
    let frontier = pareto_frontier(&points);

    fs::create_dir_all(out_dir)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &points)?;
    emit(Some(&out_dir.join("sweep.csv")), &buf)?;
    buf.clear();
    write_sweep_csv(&mut buf, &frontier)?;
    emit(Some(&out_dir.join("frontier.csv")), &buf)?;
    let doc = envelope(
        "oea.sweep_summary",
        json!({
            "command": "sweep",
            "config": eff,
            "grid": grid,
            "generator": gen.describe(),
            "latency": latency,
            "rounding": rounding,
            "quality_metric": layer.as_ref().map(|_| "toy_layer_relative_output_error"),
            "points": points.len(),
            "frontier_points": frontier.len(),
        }),
    );
    emit(Some(&out_dir.join("summary.json")), &json_bytes(&doc)?)
}

pub fn cmd_pareto(input: &Path, out: Option<&Path>) -> Result<()> {
    let points = read_sweep_csv(open(input)?)
        .map_err(|e| OeaError::Format(format!("{}: {e}", input.display())))?;
    if points.is_empty() {
        return Err(OeaError::InvalidInput(format!(
            "{} has no sweep points",
            input.display()
        )));
    }
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &pareto_frontier(&points))?;
    emit(out, &buf)
}

pub fn cmd_padding(pad_to: usize, masked: bool, out: Option<&Path>, s: &Settings) -> Result<()> {
    let eff = Effective::resolve(s, None);
    let gen = eff.generator()?;
    let cfg = eff.routing()?;
    let latency = eff.latency()?;
    let report = padding_experiment(&gen, &cfg, pad_to, &latency)?;
    let chosen = if masked {
        &report.masked
    } else {
        &report.naive
    };
    let doc = envelope(
        "oea.padding",
        json!({
            "command": "padding",
            "config": eff,
            "routing": cfg,
            "generator": gen.describe(),
            "latency": latency,
            "selected_variant": chosen.name,
            "delta_active_experts_vs_no_padding":
                chosen.mean_active_experts - report.no_padding.mean_active_experts,
            "delta_latency_us_vs_no_padding":
                chosen.mean_latency_us - report.no_padding.mean_latency_us,
            "report": report,
        }),
    );
    emit(out, &json_bytes(&doc)?)
}

pub fn cmd_fit_latency(input: &Path, out: Option<&Path>) -> Result<()> {
    let obs = read_observations_csv(open(input)?)
        .map_err(|e| OeaError::Format(format!("{}: {e}", input.display())))?;
    let fit = fit_linear(&obs)?;
    let doc = envelope(
        "oea.fit",
        json!({
            "input": input.display().to_string(),
            "model": "latency_us = slope * T + intercept",
            "fit": fit,
        }),
    );
    emit(out, &json_bytes(&doc)?)
}

pub fn cmd_gen_scores(out: Option<&Path>, s: &Settings) -> Result<()> {
    let eff = Effective::resolve(s, None);
    let gen = eff.generator()?;
    let mut records = Vec::with_capacity(gen.steps * gen.layers);
    for step in 0..gen.steps {
        for layer in 0..gen.layers {
            records.push(ScoreRecord::from_matrix(
                step,
                layer,
                &gen_scores(&gen, step, layer)?,
            ));
        }
    }
    let mut buf = Vec::new();
    write_score_records(&mut buf, &records)?;
    emit(out, &buf)
}

pub fn cmd_init_layer(out: Option<&Path>, s: &Settings) -> Result<()> {
    let mut eff = Effective::resolve(s, None);
    if s.n_experts.is_none() {
        eff.n_experts = LayerDims::default().n_experts;
    }
    let dims = LayerDims {
        d_model: eff.d_model,
        d_hidden: eff.d_hidden,
        n_experts: eff.n_experts,
    };
    let layer = MoeLayerParams::random(dims, eff.seed()?)?;
    let mut buf = Vec::new();
    layer.write_json(&mut buf)?;
    buf.push(b'\n');
    emit(out, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = Settings {
            k0: Some(3),
            seed: Some(9),
            batch: Some(4),
            ..Settings::default()
        };
        let flags = Settings {
            k0: Some(5),
            ..Settings::default()
        };
        let eff = Effective::resolve(&flags.over(&file), None);
        assert_eq!(eff.k0, 5);
        assert_eq!(eff.seed, Some(9));
        assert_eq!(eff.batch, 4);
        assert_eq!(eff.steps, 200);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        assert!(serde_json::from_str::<Settings>(r#"{"k0": 2, "bogus": 1}"#).is_err());
        let s: Settings = serde_json::from_str(r#"{"n-experts": 32, "mode": "oea"}"#).unwrap();
        assert_eq!(s.n_experts, Some(32));
        assert_eq!(s.mode, Some(ModeArg::Oea));
    }

    #[test]
    fn seed_is_required_for_generators() {
        let eff = Effective::resolve(&Settings::default(), None);
        assert!(eff.generator().is_err());
    }

    #[test]
    fn invalid_routing_is_reported() {
        let s = Settings {
            mode: Some(ModeArg::Oea),
            k0: Some(9),
            kmax: Some(4),
            ..Settings::default()
        };
        assert!(matches!(
            Effective::resolve(&s, None).routing(),
            Err(OeaError::InvalidConfig(_))
        ));
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_ne!(run(["oea", "simulate"]), 0);
        assert_ne!(
            run(["oea", "route", "--scores", "/nonexistent/file.ndjson"]),
            0
        );
    }
}
