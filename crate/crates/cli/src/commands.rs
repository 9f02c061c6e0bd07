//! One function per subcommand.

use std::path::{Path, PathBuf};

use multistep::config::ExperimentConfig;
use multistep::data::{self, Dataset, SplitName, WindowBatch};
use multistep::env::OBS_DIM;
use multistep::nn::{DynamicsModel, ModelSpec};
use multistep::objective::{
    multistep_fd_error, resolve_weights, scalar_oracle, GroundTruthModel, LossKind, StepModel, WeightProfile,
    ANALYTIC_TOLERANCE, FD_TOLERANCE,
};
use multistep::planner::{
    dataset_label, evaluate_policy, iterated_batch_run, pure_batch_run, GROUND_TRUTH_VARIANT, RANDOM_VARIANT,
};
use multistep::train::{compare_profiles, fit_normalizer, r2_curve, train, Predictor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifest::{load_config, write_text, CliError, CliResult, Manifest};
use crate::{Command, Common};

struct Run<'a> {
    name: &'static str,
    common: &'a Common,
    cfg: ExperimentConfig,
}

impl<'a> Run<'a> {
    fn start(name: &'static str, common: &'a Common) -> CliResult<Self> {
        let cfg = load_config(common.config.as_deref(), common.seed)?;
        std::fs::create_dir_all(&common.out_dir).map_err(|source| CliError::Io {
            path: common.out_dir.clone(),
            source,
        })?;
        Ok(Self { name, common, cfg })
    }

    fn out(&self, file: &str) -> PathBuf {
        self.common.out_dir.join(file)
    }

    fn write(&self, file: &str, text: &str) -> CliResult<()> {
        write_text(&self.out(file), text)
    }

    fn finish(&self, inputs: &[&Path], outputs: &[&str]) -> CliResult<()> {
        Manifest::new(self.name, &self.cfg, inputs, outputs)?.write(&self.common.out_dir)
    }
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    data::load(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn load_model(path: &Path) -> CliResult<Predictor> {
    Predictor::load(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn model_label(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::GenData { common } => gen_data(common),
        Command::Train { common, data } => train_cmd(common, data),
        Command::EvalR2 { common, data, model, split } => eval_r2(common, data, model, (*split).into()),
        Command::CompareProfiles { common, data, split } => compare(common, data, (*split).into()),
        Command::Gradcheck { common, data } => gradcheck(common, data.as_deref()),
        Command::PlanEval {
            common,
            model,
            ground_truth,
            episodes,
        } => plan_eval(common, model.as_deref(), *ground_truth, *episodes),
        Command::PureBatch {
            common,
            data,
            ground_truth,
        } => pure_batch(common, data, *ground_truth),
        Command::IteratedBatch { common } => iterated(common),
    }
}

fn gen_data(common: &Common) -> CliResult<()> {
    let run = Run::start("gen-data", common)?;
    let ds = run.cfg.generate_dataset()?;
    data::save(&ds, run.out("dataset.json"))?;
    let mut csv = String::from("episode,split,steps,return\n");
    for (i, ep) in ds.episodes.iter().enumerate() {
        let split = [SplitName::Train, SplitName::Valid, SplitName::Test]
            .into_iter()
            .find(|&s| ds.split.get(s).contains(&i))
            .map_or("none", split_name);
        csv += &format!("{i},{split},{},{}\n", ep.len(), ep.meta.ret);
    }
    run.write("episodes.csv", &csv)?;
    println!(
        "{} episodes of {} ({} train transitions)",
        ds.episodes.len(),
        dataset_label(&ds),
        ds.n_transitions(SplitName::Train)
    );
    run.finish(&[], &["dataset.json", "episodes.csv"])
}

fn split_name(s: SplitName) -> &'static str {
    match s {
        SplitName::Train => "train",
        SplitName::Valid => "valid",
        SplitName::Test => "test",
    }
}

fn train_cmd(common: &Common, data_path: &Path) -> CliResult<()> {
    let run = Run::start("train", common)?;
    let ds = load_dataset(data_path)?;
    let out = train(&ds, &run.cfg.train)?;
    out.model.save(run.out("model.json"))?;
    run.write("train_log.csv", &out.log.to_csv())?;
    match out.log.diverged_at {
        Some(e) => println!("training diverged at epoch {e}; kept the best earlier model"),
        None => println!("trained {} epochs, best epoch {:?}", out.log.epochs.len(), out.log.best_epoch),
    }
    run.finish(&[data_path], &["model.json", "train_log.csv"])
}

fn eval_r2(common: &Common, data_path: &Path, model_path: &Path, split: SplitName) -> CliResult<()> {
    let run = Run::start("eval-r2", common)?;
    let ds = load_dataset(data_path)?;
    let model = load_model(model_path)?;
    let report = r2_curve(&model, &ds, split, &run.cfg.horizons, &model_label(model_path))?;
    run.write("r2.csv", &report.to_csv())?;
    for row in &report.rows {
        println!("horizon {:>3}: mean R2 {:.4}", row.horizon, row.mean);
    }
    run.finish(&[data_path, model_path], &["r2.csv"])
}

fn compare(common: &Common, data_path: &Path, split: SplitName) -> CliResult<()> {
    let run = Run::start("compare-profiles", common)?;
    let ds = load_dataset(data_path)?;
    let cmp = compare_profiles(&ds, &run.cfg.train, &run.cfg.profiles, &run.cfg.horizons, &run.cfg.seeds, split)?;
    run.write("compare.csv", &cmp.to_csv())?;
    for cell in cmp.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("{} seed {} failed: {}", cell.profile, cell.seed, cell.error.as_deref().unwrap_or(""));
    }
    println!("{} profiles x {} seeds", cmp.rows.len() / run.cfg.horizons.len(), run.cfg.seeds.len());
    run.finish(&[data_path], &["compare.csv"])
}

fn gradcheck(common: &Common, data_path: Option<&Path>) -> CliResult<()> {
    let run = Run::start("gradcheck", common)?;
    let g = &run.cfg.gradcheck;
    let base = run.cfg.train.seed;
    let mut csv = String::from("check,seed,horizon,loss,analytic_vs_tape,analytic_vs_fd,tape_vs_fd\n");
    let (mut a_t, mut a_fd, mut t_fd) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..g.scalar_models {
        let h = g.scalar_horizons[i % g.scalar_horizons.len()];
        let r = scalar_oracle(base + i as u64, h, g.scalar_hidden, g.scalar_fd_step)?;
        a_t = a_t.max(r.analytic_vs_tape);
        a_fd = a_fd.max(r.analytic_vs_fd);
        t_fd = t_fd.max(r.tape_vs_fd);
        csv += &format!(
            "scalar,{},{h},mse,{},{},{}\n",
            r.seed, r.analytic_vs_tape, r.analytic_vs_fd, r.tape_vs_fd
        );
    }
    let mut multi = None;
    let mut inputs = Vec::new();
    if let Some(p) = data_path {
        let ds = load_dataset(p)?;
        inputs.push(p);
        let h_max = *g.multi_horizons.iter().max().unwrap_or(&1);
        let norm = fit_normalizer(&ds, 1, true)?;
        let mut worst = 0.0f64;
        for k in 0..g.multi_seeds as u64 {
            let seed = base + k;
            let mut model = DynamicsModel::new(ModelSpec::one_step(OBS_DIM, 1, g.multi_hidden, 2), seed)?;
            model.set_normalizer(norm.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let windows = ds.sample_windows(SplitName::Train, h_max, g.multi_batch, &mut rng)?;
            for &h in &g.multi_horizons {
                let short: Vec<_> = windows.iter().map(|w| w.truncated(h)).collect();
                let batch = WindowBatch::from_windows(&short)?;
                let alpha = resolve_weights(&WeightProfile::Uniform, h)?;
                for kind in [LossKind::Mse, LossKind::Nll] {
                    let e = multistep_fd_error(&model, &batch, &alpha, kind, g.multi_fd_step)?;
                    worst = worst.max(e);
                    let name = if kind == LossKind::Mse { "mse" } else { "nll" };
                    csv += &format!("multi,{seed},{h},{name},,,{e}\n");
                }
            }
        }
        multi = Some(worst);
    }
    run.write("gradcheck.csv", &csv)?;
    println!("analytic vs tape: {a_t:.3e} (tolerance {ANALYTIC_TOLERANCE:e})");
    println!("analytic vs finite differences: {a_fd:.3e} (tolerance {FD_TOLERANCE:e})");
    println!("tape vs finite differences: {t_fd:.3e} (tolerance {FD_TOLERANCE:e})");
    if let Some(m) = multi {
        println!("5-dim tape vs finite differences: {m:.3e} (tolerance {FD_TOLERANCE:e})");
    }
    run.finish(&inputs, &["gradcheck.csv"])?;
    let ok = a_t < ANALYTIC_TOLERANCE && a_fd < FD_TOLERANCE && t_fd < FD_TOLERANCE && multi.is_none_or(|m| m < FD_TOLERANCE);
    if ok {
        Ok(())
    } else {
        Err(CliError::Check("gradient check exceeded tolerance".into()))
    }
}

fn plan_eval(common: &Common, model_path: Option<&Path>, ground_truth: bool, episodes: usize) -> CliResult<()> {
    let run = Run::start("plan-eval", common)?;
    let truth = GroundTruthModel::new(run.cfg.env.clone());
    let learned;
    let (model, variant): (&dyn StepModel, String) = match model_path {
        Some(p) if !ground_truth => match load_model(p)? {
            Predictor::OneStep(m) => {
                learned = m;
                (&learned, model_label(p))
            }
            Predictor::Fixed(_) => {
                return Err(CliError::Core(multistep::Error::InvalidArgument(
                    "planning needs a one-step model".into(),
                )))
            }
        },
        _ => (&truth, GROUND_TRUTH_VARIANT.to_string()),
    };
    let report = evaluate_policy(model, &run.cfg.env, &run.cfg.cem, episodes, run.cfg.train.seed)?;
    let env_label = if run.cfg.env.noise_fraction > 0.0 { "cartpole_noisy" } else { "cartpole" };
    let mut csv = String::from("variant,dataset,seed,return\n");
    for (seed, ret) in report.seeds.iter().zip(&report.returns) {
        csv += &format!("{variant},{env_label},{seed},{ret}\n");
    }
    for (seed, ret) in report.seeds.iter().zip(&report.random_returns) {
        csv += &format!("{RANDOM_VARIANT},{env_label},{seed},{ret}\n");
    }
    run.write("plan_returns.csv", &csv)?;
    match report.ci90 {
        Some(ci) => println!("{variant}: {:.2} +- {ci:.2}", report.mean),
        None => println!("{variant}: {:.2}", report.mean),
    }
    println!("random: {:.2}; planner fallbacks: {}", report.random_mean, report.fallbacks);
    let inputs: Vec<&Path> = model_path.filter(|_| !ground_truth).into_iter().collect();
    run.finish(&inputs, &["plan_returns.csv"])
}

fn pure_batch(common: &Common, data_paths: &[PathBuf], ground_truth: bool) -> CliResult<()> {
    let run = Run::start("pure-batch", common)?;
    let datasets = if data_paths.is_empty() {
        vec![run.cfg.generate_dataset()?]
    } else {
        data_paths.iter().map(|p| load_dataset(p)).collect::<CliResult<Vec<_>>>()?
    };
    let c = &run.cfg;
    let report = pure_batch_run(
        &datasets,
        &c.profiles,
        &c.train,
        &c.cem,
        &c.seeds,
        c.loop_cfg.eval_episodes,
        ground_truth,
    )?;
    run.write("returns.csv", &report.returns_csv())?;
    let table = report.table_csv();
    run.write("table.csv", &table)?;
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} on {} seed {} failed: {}", row.variant, row.dataset, row.seed, row.error.as_deref().unwrap_or(""));
    }
    print!("{table}");
    let inputs: Vec<&Path> = data_paths.iter().map(PathBuf::as_path).collect();
    run.finish(&inputs, &["returns.csv", "table.csv"])
}

fn iterated(common: &Common) -> CliResult<()> {
    let run = Run::start("iterated-batch", common)?;
    let c = &run.cfg;
    let curve = iterated_batch_run(&c.loop_cfg, &c.train, &c.cem, &c.env)?;
    run.write("curve.csv", &curve.to_csv())?;
    let reused = curve.rows.iter().filter(|r| r.reused_model).count();
    println!("{} curve points, {reused} with a reused model", curve.rows.len());
    run.finish(&[], &["curve.csv"])
}
