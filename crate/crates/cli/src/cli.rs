//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use selex::bssk::bssk;
use selex::eval::{cluster_accuracy, k2_residual, s_bound, u_bounds, BoundsInput};
use selex::hssk::{build_hierarchy_with, Hierarchy};
use selex::loss::{evaluate, ExpertiseTargets};
use selex::targets::{smooth_target, unsup_target_from_hierarchy, unsup_target_from_radii};
use selex::train::{generate_synthetic, make_split, run_selex, EpochRecord, StepRecord, SyntheticSpec};
use selex::{EmbeddingMatrix, LabelInfo, Matrix};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{self, AccuracyBody, HierarchyFile, Report};

#[derive(Debug, Parser)]
#[command(name = "selex", version, about = "Hierarchical semi-supervised clustering and self-expertise training")]
struct Cli {
    /// JSON run configuration; defaults apply to anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "SELEX_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Embeddings (.selx or .csv).
    #[arg(long)]
    embeddings: PathBuf,
    /// Labels CSV.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate hierarchical Gaussian data with a known/novel split.
    Synth {
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        per_leaf: usize,
        #[arg(long)]
        dims: usize,
        #[arg(long, default_value_t = 8.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        known_fraction: f64,
        #[arg(long, default_value_t = 0.5)]
        labeled_fraction: f64,
        /// Output directory; receives embeddings.<ext> and labels.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Balanced semi-supervised k-means.
    Cluster {
        #[command(flatten)]
        inputs: Inputs,
        /// Cluster count; defaults to the number of categories in the labels.
        #[arg(long)]
        k: Option<usize>,
        /// Cluster size; overrides the config.
        #[arg(long)]
        c: Option<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a row,cluster CSV.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Build the pseudo-label hierarchy.
    Hierarchy {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the pairwise target matrix as CSV.
    Targets {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long, value_enum, default_value_t = TargetChoice::Smoothed)]
        kind: TargetChoice,
        /// Needed for the radius target.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the loss terms.
    Loss {
        #[command(flatten)]
        inputs: Inputs,
        /// Use this hierarchy instead of building one.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
    },
    /// Run the alternating training loop.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// Per-epoch metrics CSV.
        #[arg(long)]
        metrics: PathBuf,
        /// Full JSON report with per-step losses.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Final embeddings.
        #[arg(long)]
        out_embeddings: Option<PathBuf>,
    },
    /// Score predicted clusters against the labels.
    Eval {
        /// CSV with header row,cluster.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form bound diagnostics for each (n, k) pair.
    Bounds {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<u64>,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetChoice {
    Raw,
    Smoothed,
    Radii,
}

struct Ctx<'a> {
    config: RunConfig,
    seed: u64,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn report<T: Serialize>(&self, body: T) -> Report<T> {
        Report { body, config_echo: self.config.clone(), seed: self.seed }
    }

    fn emit(&mut self, bytes: &[u8]) -> Result<(), CliError> {
        self.out.write_all(bytes).map_err(|e| CliError::Runtime(format!("stdout: {e}")))
    }

    fn emit_or_write<T: Serialize>(&mut self, path: Option<&Path>, value: &T) -> Result<(), CliError> {
        match path {
            Some(p) => io::write_json(p, value),
            None => self.emit(&io::to_json(value)),
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let result = RunConfig::load(cli.config.as_deref()).and_then(|config| {
        let mut ctx = Ctx { config, seed: cli.seed, out };
        dispatch(cli.command, &mut ctx)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_inputs(inputs: &Inputs) -> Result<(EmbeddingMatrix, LabelInfo), CliError> {
    let e = io::read_embeddings(&inputs.embeddings)?;
    let l = io::read_labels(&inputs.labels)?;
    if e.n() != l.len() {
        return Err(CliError::Validation(format!(
            "{} has {} rows but {} has {}",
            inputs.embeddings.display(),
            e.n(),
            inputs.labels.display(),
            l.len()
        )));
    }
    Ok((e, l))
}

fn hierarchy_for(e: &EmbeddingMatrix, l: &LabelInfo, ctx: &Ctx) -> Result<Hierarchy, CliError> {
    let cfg = ctx.config.bssk_config(l.k_total(), ctx.seed);
    Ok(build_hierarchy_with(e, l, &cfg, &ctx.config.hssk_config())?)
}

#[derive(Serialize)]
struct ClusterBody {
    k: usize,
    cluster_size: usize,
    assignment: Vec<usize>,
    sizes: Vec<usize>,
    known_cluster_count: usize,
    centers: Matrix,
    radii: Vec<f64>,
}

#[derive(Serialize)]
struct TrainBody<'a> {
    epochs: &'a [EpochRecord],
    steps: &'a [StepRecord],
}

fn dispatch(command: Command, ctx: &mut Ctx) -> Result<(), CliError> {
    match command {
        Command::Synth { depth, per_leaf, dims, separation, sigma, known_fraction, labeled_fraction, out } => {
            let spec = SyntheticSpec {
                depth,
                samples_per_leaf: per_leaf,
                dims,
                separation,
                noise_sigma: sigma,
                seed: ctx.seed,
            };
            let (e, all) = generate_synthetic(&spec)?;
            let l = make_split(&all, known_fraction, labeled_fraction, ctx.seed)?;
            std::fs::create_dir_all(&out).map_err(|err| CliError::Runtime(format!("{}: {err}", out.display())))?;
            let emb_path = out.join(format!("embeddings.{}", ctx.config.io.embedding_format.extension()));
            io::write_embeddings(&emb_path, &e)?;
            io::write_labels(&out.join("labels.csv"), &l)?;
            let line = format!(
                "wrote {} rows x {} dims, {} categories ({} known)\n",
                e.n(),
                e.d(),
                l.k_total(),
                l.known_count()
            );
            ctx.emit(line.as_bytes())
        }
        Command::Cluster { inputs, k, c, out, pred } => {
            let (e, l) = load_inputs(&inputs)?;
            let mut cfg = ctx.config.bssk_config(k.unwrap_or(l.k_total()), ctx.seed);
            if c.is_some() {
                cfg.cluster_size = c;
            }
            let model = bssk(&e, &l, &cfg)?;
            if let Some(p) = pred {
                io::write_bytes(&p, &io::predictions_csv(&model.assignment))?;
            }
            let body = ClusterBody {
                k: cfg.k,
                cluster_size: cfg.effective_cluster_size(e.n()),
                sizes: model.sizes.clone(),
                known_cluster_count: model.known_cluster_count,
                radii: model.radii.clone(),
                centers: model.centers.clone(),
                assignment: model.assignment,
            };
            let report = ctx.report(body);
            ctx.emit_or_write(out.as_deref(), &report)
        }
        Command::Hierarchy { inputs, out } => {
            let (e, l) = load_inputs(&inputs)?;
            let h = hierarchy_for(&e, &l, ctx)?;
            io::write_json(&out, &HierarchyFile::new(&h, &ctx.config, ctx.seed))?;
            let counts: Vec<String> = h.levels.iter().map(|lvl| lvl.label_count.to_string()).collect();
            ctx.emit(format!("levels: {}\n", counts.join(",")).as_bytes())
        }
        Command::Targets { hierarchy, kind, embeddings, out } => {
            let h = io::read_hierarchy(&hierarchy)?.hierarchy();
            let raw = unsup_target_from_hierarchy(&h, ctx.config.smoothing.normalization);
            let y = match kind {
                TargetChoice::Raw => raw,
                TargetChoice::Smoothed => smooth_target(&raw, &ctx.config.smoothing_config())?,
                TargetChoice::Radii => {
                    let path =
                        embeddings.ok_or_else(|| CliError::Validation("--kind radii needs --embeddings".into()))?;
                    unsup_target_from_radii(&io::read_embeddings(&path)?, &h, ctx.config.loss.symmetrize)?
                }
            };
            io::write_matrix_csv(&out, &y.values)
        }
        Command::Loss { inputs, hierarchy } => {
            let (e, l) = load_inputs(&inputs)?;
            let h = match hierarchy {
                Some(p) => io::read_hierarchy(&p)?.hierarchy(),
                None => hierarchy_for(&e, &l, ctx)?,
            };
            let cfg = ctx.config.loss_config();
            let targets = ExpertiseTargets::build(&e, &h, &l, &cfg)?;
            let report = ctx.report(evaluate(&e, &targets, &cfg, false)?);
            ctx.emit_or_write(None, &report)
        }
        Command::Train { inputs, metrics, report, out_embeddings } => {
            let (e, l) = load_inputs(&inputs)?;
            let tc = ctx.config.train_config(l.k_total(), ctx.seed);
            let outcome = run_selex(&e, &l, &tc)?;
            io::write_bytes(&metrics, &io::metrics_csv(&outcome.epochs))?;
            if let Some(p) = report {
                io::write_json(&p, &ctx.report(TrainBody { epochs: &outcome.epochs, steps: &outcome.steps }))?;
            }
            if let Some(p) = out_embeddings {
                io::write_embeddings(&p, &outcome.embeddings)?;
            }
            let last = outcome.epochs.last().expect("baseline record");
            let line = format!("epoch {}: l_se {} acc_all {}\n", last.epoch, last.l_se, last.accuracy.acc_all);
            ctx.emit(line.as_bytes())
        }
        Command::Eval { pred, labels, out } => {
            let predictions = io::read_predictions(&pred)?;
            let l = io::read_labels(&labels)?;
            if let Some(&row) = predictions.keys().find(|&&r| r >= l.len()) {
                return Err(CliError::Validation(format!("prediction for row {row}, labels have {} rows", l.len())));
            }
            let rows: Vec<usize> =
                predictions.keys().copied().filter(|&r| !ctx.config.eval.unlabeled_only || !l.is_labeled(r)).collect();
            if rows.is_empty() {
                return Err(CliError::Validation("no rows to score".into()));
            }
            let p: Vec<usize> = rows.iter().map(|r| predictions[r]).collect();
            let t: Vec<usize> = rows.iter().map(|&r| l.labels()[r]).collect();
            let accuracy = cluster_accuracy(&p, &t, |c| l.is_known(c))?;
            let report = ctx.report(AccuracyBody { accuracy, rows_scored: rows.len() });
            ctx.emit_or_write(out.as_deref(), &report)
        }
        Command::Bounds { n, k } => {
            let mut table = String::from("n\tk\ts_bound\tu_full\tu_restricted\tk2_residual\n");
            for &nn in &n {
                for &kk in &k {
                    let b = BoundsInput::new(nn, kk)?;
                    let (full, restricted) = u_bounds(b);
                    let residual = match k2_residual(b) {
                        Ok(r) => fixed(r),
                        Err(_) => "-".into(),
                    };
                    table.push_str(&format!(
                        "{nn}\t{kk}\t{}\t{}\t{}\t{residual}\n",
                        fixed(s_bound(b)),
                        fixed(full),
                        fixed(restricted)
                    ));
                }
            }
            ctx.emit(table.as_bytes())
        }
    }
}

/// Nine decimals, without a sign on values that round to zero.
fn fixed(v: f64) -> String {
    let s = format!("{v:.9}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_formatting() {
        assert_eq!(fixed(-1e-15), "0.000000000");
        assert_eq!(fixed(5.545177444479562), "5.545177444");
        assert_eq!(fixed(-2.5), "-2.500000000");
    }

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
