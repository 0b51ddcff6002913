use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use lcx_core::earlystop::{self, SelectionRun, Simulator, TerminationPolicy, TRAJECTORY_HEADER};
use lcx_core::eval::{self, EvalRecord, McmcProvider, PfnProvider, PpdProvider, CUTOFF_FRACTIONS};
use lcx_core::normalize::{NormalizationSpec, Normalizer};
use lcx_core::pfn::{self, BinGrid, Pfn};
use lcx_core::prior::{PriorSampler, DEFAULT_CURVE_LENGTH};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::curves::CurveFile;
use crate::error::{CliError, Result};

/// Stream of the seed's generator used for bin construction in `train`.
const BINS_STREAM: u64 = 3;

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub config: RunConfig,
}

impl Context {
    fn out_path(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::Config("--out is required".into()))
    }

    /// `--out` file, or stdout when absent.
    fn output(&self) -> Result<Box<dyn Write>> {
        match &self.out {
            Some(p) => Ok(Box::new(BufWriter::new(create(p)?))),
            None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        }
    }

    fn model_length(&self) -> Result<usize> {
        self.config.get_or("m", DEFAULT_CURVE_LENGTH)
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn read_edges(path: &Path) -> Result<BinGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let edges = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|e| CliError::Io(format!("{}: bad edge `{l}`: {e}", path.display()))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BinGrid::from_edges(edges)?)
}

pub fn write_edges<W: Write>(mut w: W, grid: &BinGrid) -> Result<()> {
    for e in grid.edges() {
        writeln!(w, "{e}")?;
    }
    w.flush()?;
    Ok(())
}

/// The `curves` file, with per-curve `u_soft` when `u_soft_from_first` is set.
fn load_curves(ctx: &Context) -> Result<CurveFile> {
    let mut file = CurveFile::load(&ctx.config.path("curves")?)?;
    if ctx.config.get_or("u_soft_from_first", false)? {
        file.first_value_as_u_soft()?;
    }
    Ok(file)
}

fn load_pfn(ctx: &Context) -> Result<Pfn> {
    let (pfn, meta) = pfn::load_checkpoint(&ctx.config.path("checkpoint")?)?;
    info!("loaded checkpoint trained with seed {}", meta.seed);
    Ok(pfn)
}

/// Writes `n` noisy prior curves of length `m` under task `prior`.
pub fn sample_prior(ctx: &Context) -> Result<()> {
    let n: usize = ctx.config.require("n")?;
    let m = ctx.model_length()?;
    if m < 2 {
        return Err(CliError::Config("m must be >= 2".into()));
    }
    let sampler = PriorSampler::new(m);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut curves = CurveFile::new(None);
    let mut means = CurveFile::new(None);
    for i in 0..n {
        let sample = sampler.sample(&mut rng)?;
        let run = i.to_string();
        means.push("prior", &run, sample.config.curve(m))?;
        curves.push("prior", &run, sample.y)?;
    }
    curves.meta.insert("source".into(), "prior".into());
    curves.meta.insert("seed".into(), ctx.seed.to_string());
    curves.write(ctx.output()?)?;
    if let Some(path) = ctx.config.get::<String>("means_out")? {
        means.meta.insert("source".into(), "prior-mean".into());
        means.meta.insert("seed".into(), ctx.seed.to_string());
        means.save(Path::new(&path))?;
    }
    Ok(())
}

fn bins_from_prior(ctx: &Context, rng: &mut ChaCha8Rng) -> Result<BinGrid> {
    let nbins: usize = ctx.config.get_or("nbins", pfn::ModelConfig::default().nbins)?;
    let n_draws: usize = ctx.config.get_or("n_draws", 100 * nbins)?;
    let sampler = PriorSampler::new(ctx.model_length()?);
    Ok(pfn::build_bins(&sampler, rng, n_draws, nbins)?)
}

/// Writes prior-equiprobable bin edges, one per line.
pub fn build_bins(ctx: &Context) -> Result<()> {
    let grid = bins_from_prior(ctx, &mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
    write_edges(ctx.output()?, &grid)
}

/// Trains a network and writes the checkpoint to `--out` and per-step
/// losses to `<out>.losses.csv`.
pub fn train(ctx: &Context) -> Result<()> {
    let out = ctx.out_path()?;
    let model = ctx.config.model_config()?;
    let train = ctx.config.train_config(ctx.seed)?;
    let grid = match ctx.config.get::<String>("bins")? {
        Some(path) => read_edges(Path::new(&path))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            rng.set_stream(BINS_STREAM);
            bins_from_prior(ctx, &mut rng)?
        }
    };
    let sampler = PriorSampler::new(model.m);
    let outcome = pfn::train(&sampler, &grid, model, train)?;
    let pfn = Pfn::new(outcome.params, grid)?;
    pfn::save_checkpoint(out, &pfn, ctx.seed)?;
    let mut w = BufWriter::new(create(&with_suffix(out, ".losses.csv"))?);
    writeln!(w, "step,loss")?;
    for (i, l) in outcome.losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Maps normalized quantiles `(q05, q50, q95)` to raw space. A minimized
/// metric is reflected, so its raw lower quantile comes from the upper one.
fn raw_quantiles(spec: Option<&NormalizationSpec>, norm: [f64; 3]) -> Result<[f64; 3]> {
    let Some(spec) = spec else { return Ok(norm) };
    let normalizer = Normalizer::new(*spec)?;
    let to_raw = |v: f64| {
        let v = v.clamp(0.0, 1.0);
        normalizer.inverse(v).unwrap_or(if (v == 0.0) != spec.minimize { spec.l_hard } else { spec.u_hard })
    };
    let raw = norm.map(to_raw);
    Ok(if spec.minimize { [raw[2], raw[1], raw[0]] } else { raw })
}

/// Median and 90% interval of the PPD at every step after the cutoff.
pub fn infer(ctx: &Context) -> Result<()> {
    let pfn = load_pfn(ctx)?;
    let file = load_curves(ctx)?;
    let cutoff: f64 = ctx.config.require("cutoff")?;
    let wanted: Option<Vec<usize>> = ctx.config.list("queries")?;
    let m = pfn.config().m;
    let mut w = csv::Writer::from_writer(ctx.output()?);
    w.write_record(["curve_id", "step", "q05", "q50", "q95"])?;
    for curve in &file.curves {
        let values = eval::subsample(&curve.normalized()?, m);
        let stride = if curve.len() > m { curve.len().div_ceil(m) } else { 1 };
        let t = eval::cutoff_index(cutoff, values.len())?;
        let steps: Vec<usize> = (t + 1..=values.len()).collect();
        let queries: Vec<usize> = match &wanted {
            None => steps,
            Some(raw_steps) => raw_steps
                .iter()
                .map(|&s| {
                    steps.iter().copied().find(|&q| (q - 1) * stride + 1 == s).ok_or_else(|| {
                        CliError::Config(format!("{}: step {s} is not a retained step after the cutoff", curve.id()))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let observed: Vec<(usize, f64)> = values[..t].iter().enumerate().map(|(i, &y)| (i + 1, y)).collect();
        let ppds = pfn.predict(&observed, &queries)?;
        for (q, ppd) in queries.iter().zip(&ppds) {
            let raw = raw_quantiles(curve.spec.as_ref(), [ppd.quantile(0.05), ppd.quantile(0.5), ppd.quantile(0.95)])?;
            let step = (q - 1) * stride + 1;
            w.write_record([curve.id(), step.to_string(), raw[0].to_string(), raw[1].to_string(), raw[2].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-curve LL and MSE records to `--out` (or stdout) and mean ranks to
/// `<out>.ranks.csv` (or stdout after the records).
pub fn evaluate(ctx: &Context) -> Result<()> {
    let file = load_curves(ctx)?;
    let cutoffs = ctx.config.list::<f64>("cutoffs")?.unwrap_or_else(|| CUTOFF_FRACTIONS.to_vec());
    let methods = ctx.config.list::<String>("methods")?.unwrap_or_else(|| vec!["pfn".into()]);
    let pfn = if methods.iter().any(|m| m == "pfn") { Some(load_pfn(ctx)?) } else { None };
    let mut records: Vec<EvalRecord> = Vec::new();
    for method in &methods {
        let provider: Box<dyn PpdProvider + '_> = match method.as_str() {
            "pfn" => Box::new(PfnProvider::new(pfn.as_ref().expect("loaded above"))),
            "mcmc" => Box::new(McmcProvider::new(ctx.config.chain_config(ctx.seed)?, ctx.model_length()?)),
            other => return Err(CliError::Config(format!("unknown method `{other}`"))),
        };
        info!("evaluating {method} on {} curves", file.curves.len());
        records.extend(eval::evaluate_all(provider.as_ref(), &file.curves, &cutoffs, ctx.threads)?);
    }
    let ranks = eval::rank_aggregate(&records)?;
    let mut w = ctx.output()?;
    eval::write_records_csv(&mut w, &records)?;
    match &ctx.out {
        Some(out) => {
            w.flush()?;
            let mut r = BufWriter::new(create(&with_suffix(out, ".ranks.csv"))?);
            eval::write_ranks_csv(&mut r, &ranks)?;
            r.flush()?;
        }
        None => {
            writeln!(w)?;
            eval::write_ranks_csv(&mut w, &ranks)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Normalized, subsampled candidates of each task in file order.
pub fn selection_runs(file: &CurveFile, m: usize) -> Result<Vec<SelectionRun>> {
    file.tasks()
        .into_iter()
        .map(|(task, curves)| {
            let curves = curves.iter().map(|c| Ok(eval::subsample(&c.normalized()?, m))).collect::<Result<Vec<_>>>()?;
            Ok(SelectionRun::new(&task, curves, m)?)
        })
        .collect()
}

/// Regret trajectories of every task under every candidate ordering.
pub fn early_stop(ctx: &Context) -> Result<()> {
    let policy = ctx.config.policy()?;
    let file = load_curves(ctx)?;
    let needs_model = matches!(policy, TerminationPolicy::Predictive { .. });
    let pfn = if needs_model { Some(load_pfn(ctx)?) } else { None };
    let provider = pfn.as_ref().map(PfnProvider::new);
    let m = match &pfn {
        Some(p) => p.config().m,
        None => ctx.model_length()?,
    };
    let runs = selection_runs(&file, m)?;
    let count: usize = ctx.config.get_or("orderings", 0)?;

    let jobs: Vec<(usize, usize, Vec<usize>)> = runs
        .iter()
        .enumerate()
        .flat_map(|(task_idx, run)| {
            let orders = if count == 0 {
                vec![(0..run.curves.len()).collect()]
            } else {
                earlystop::random_orderings(run.curves.len(), count, ctx.seed.wrapping_add(task_idx as u64))
            };
            orders.into_iter().enumerate().map(move |(k, o)| (task_idx, k, o))
        })
        .collect();
    let threads = ctx.threads.max(1).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<earlystop::RegretTrajectory>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                let provider = provider.as_ref().map(|p| p as &dyn PpdProvider);
                let runs = &runs;
                scope.spawn(move || {
                    let mut sim = Simulator::new(provider);
                    part.iter().map(|(t, _, order)| Ok(sim.simulate(&runs[*t].reordered(order), policy)?)).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation worker panicked")).collect()
    });
    let mut w = ctx.output()?;
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten();
    for ((task_idx, k, _), traj) in jobs.iter().zip(trajectories) {
        earlystop::write_trajectory_csv(&mut w, &policy, &runs[*task_idx].task, *k, &traj)?;
    }
    w.flush()?;
    Ok(())
}
