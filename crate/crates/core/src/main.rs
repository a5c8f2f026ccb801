use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use poselift::data::{
    compute_stats, generate_synthetic, import_h36m, load_dataset, save_dataset, save_stats, stats_sidecar_path,
    GeneratorConfig, SampleRecord,
};
use poselift::error::{Error, Result};
use poselift::eval::{evaluate, mpjpe};
use poselift::geometry::chain_candidates;
use poselift::losses::DirectionNorm;
use poselift::model::{InputVariant, LiftingNetwork};
use poselift::skeleton::{bone_lengths, root_center, SkeletonTopology};
use poselift::train::{
    gradcheck_lifting, run_ablation, summarize_ablation, train, write_csv, write_json, write_metrics_csv,
    GradCheckSetup, TrainConfig,
};

#[derive(Parser)]
#[command(name = "poselift", version, about = "Lift 2D human keypoints to 3D poses with bone-length and camera priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset pair.
    GenData(GenDataArgs),
    /// Train a lifting network.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train and evaluate every input-variant / loss combination.
    Ablate(AblateArgs),
    /// Enumerate depth-ambiguity candidates for dataset samples.
    DepthAnalyze(DepthArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Convert Human3.6M-style frames to a dataset.
    ImportH36m(ImportArgs),
}

#[derive(Args)]
struct Common {
    /// JSON file with settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<timestamp>-seed<seed>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<InputVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_switch(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected on/off, got {s:?}")),
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    train_subjects: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    test_subjects: Option<Vec<u32>>,
    #[arg(long)]
    train_samples_per_subject: Option<usize>,
    #[arg(long)]
    test_samples_per_subject: Option<usize>,
    /// Standard deviation of Gaussian 2D noise, pixels.
    #[arg(long)]
    noise_px: Option<f64>,
    /// Generator ranges (JSON); defaults to the bundled configuration.
    #[arg(long)]
    generator: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataSettings {
    seed: u64,
    train_subjects: Vec<u32>,
    test_subjects: Vec<u32>,
    train_samples_per_subject: usize,
    test_samples_per_subject: usize,
    noise_px: f64,
    generator: Option<PathBuf>,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        GenDataSettings {
            seed: 0,
            train_subjects: vec![1, 5, 6, 7, 8],
            test_subjects: vec![9, 11],
            train_samples_per_subject: 4000,
            test_samples_per_subject: 2000,
            noise_px: 2.0,
            generator: None,
        }
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_decay_every: Option<usize>,
    #[arg(long)]
    w_mse: Option<f64>,
    #[arg(long)]
    w_dir: Option<f64>,
    /// per-component or per-bone
    #[arg(long)]
    direction_norm: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<InputVariant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    residual_blocks: Option<usize>,
    #[arg(long)]
    keep_prob: Option<f64>,
    /// Half-width of the per-sample body scale resampling (0 disables).
    #[arg(long)]
    scale_augmentation: Option<f64>,
    /// Half-width of the per-bone length resampling (0 disables).
    #[arg(long)]
    bone_augmentation: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) -> Result<()> {
        if let Some(v) = &self.train {
            c.train_path = Some(v.clone());
        }
        if let Some(v) = &self.test {
            c.test_path = Some(v.clone());
        }
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.learning_rate, self.learning_rate);
        set(&mut c.lr_decay, self.lr_decay);
        set(&mut c.lr_decay_every, self.lr_decay_every);
        set(&mut c.loss_weights.w_mse, self.w_mse);
        set(&mut c.loss_weights.w_dir, self.w_dir);
        if let Some(n) = &self.direction_norm {
            c.direction_norm = match n.as_str() {
                "per-component" | "per_component" => DirectionNorm::PerComponent,
                "per-bone" | "per_bone" => DirectionNorm::PerBone,
                other => return Err(Error::InvalidInput(format!("unknown direction norm {other:?}"))),
            };
        }
        set(&mut c.variant, self.variant);
        set(&mut c.seed, self.seed);
        set(&mut c.hidden_dim, self.hidden_dim);
        set(&mut c.residual_blocks, self.residual_blocks);
        set(&mut c.keep_prob, self.keep_prob);
        set(&mut c.scale_augmentation, self.scale_augmentation);
        set(&mut c.bone_augmentation, self.bone_augmentation);
        c.train_path = c.train_path.as_deref().map(absolute).transpose()?;
        c.test_path = c.test_path.as_deref().map(absolute).transpose()?;
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Variant the caller expects; evaluation refuses a checkpoint of another variant.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<InputVariant>,
    /// Also write the report here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Option<Vec<InputVariant>>,
    /// Comma-separated on/off list.
    #[arg(long, value_delimiter = ',', value_parser = parse_switch)]
    direction_loss: Option<Vec<bool>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AblateSettings {
    base: TrainConfig,
    variants: Vec<InputVariant>,
    direction_loss: Vec<bool>,
    seeds: Vec<u64>,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            base: TrainConfig::default(),
            variants: InputVariant::ALL.to_vec(),
            direction_loss: vec![false, true],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Args)]
struct DepthArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of leading samples to analyze.
    #[arg(long, default_value_t = 10)]
    limit: usize,
    /// Maximum number of candidates per sample.
    #[arg(long, default_value_t = 1 << 15)]
    cap: i64,
    /// Also write the report here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<InputVariant>,
    #[arg(long)]
    entries_per_tensor: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// JSON Lines file of frames with 32 world joints and camera calibration.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

fn load_settings<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("config {}: {e}", p.display())))
        }
    }
}

/// `YYYYmmddTHHMMSSZ` from the system clock.
fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0) as i64;
    let (days, rem) = (secs.div_euclid(86_400), secs.rem_euclid(86_400));
    // Civil date from days since 1970-01-01 (proleptic Gregorian).
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!("{year:04}{month:02}{day:02}T{:02}{:02}{:02}Z", rem / 3600, rem / 60 % 60, rem % 60)
}

fn run_dir(out_dir: Option<&Path>, seed: u64) -> Result<PathBuf> {
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from("runs").join(format!("{}-seed{seed}", timestamp())),
    };
    std::fs::create_dir_all(&dir)?;
    absolute(&dir)
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    out_dir: &'a Path,
    settings: &'a T,
}

fn write_run_config<T: Serialize>(dir: &Path, command: &str, settings: &T) -> Result<()> {
    write_json(&RunRecord { command, out_dir: dir, settings }, &dir.join("run_config.json"))
}

fn save_with_stats(records: &[SampleRecord], path: &Path, topo: &SkeletonTopology) -> Result<()> {
    save_dataset(records, path)?;
    save_stats(&compute_stats(records, topo)?, &stats_sidecar_path(path))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let mut s: GenDataSettings = load_settings(a.common.config.as_deref())?;
    set(&mut s.seed, a.seed);
    set(&mut s.train_subjects, a.train_subjects);
    set(&mut s.test_subjects, a.test_subjects);
    set(&mut s.train_samples_per_subject, a.train_samples_per_subject);
    set(&mut s.test_samples_per_subject, a.test_samples_per_subject);
    set(&mut s.noise_px, a.noise_px);
    if a.generator.is_some() {
        s.generator = a.generator;
    }
    s.generator = s.generator.as_deref().map(absolute).transpose()?;
    if let Some(x) = s.train_subjects.iter().find(|x| s.test_subjects.contains(x)) {
        return Err(Error::InvalidInput(format!("subject {x} is in both splits")));
    }
    let gen: GeneratorConfig = match &s.generator {
        Some(p) => load_settings(Some(p))?,
        None => GeneratorConfig::default(),
    };
    let topo = SkeletonTopology::default();
    let train = generate_synthetic(&gen, &topo, &s.train_subjects, s.train_samples_per_subject, s.noise_px, s.seed)?;
    let test = generate_synthetic(&gen, &topo, &s.test_subjects, s.test_samples_per_subject, s.noise_px, s.seed)?;
    let dir = run_dir(a.common.out_dir.as_deref(), s.seed)?;
    save_with_stats(&train, &dir.join("train.jsonl"), &topo)?;
    save_with_stats(&test, &dir.join("test.jsonl"), &topo)?;
    write_json(&gen, &dir.join("generator.json"))?;
    write_run_config(&dir, "gen-data", &s)?;
    println!("{}", dir.display());
    Ok(())
}

fn load_split(path: &Option<PathBuf>, name: &str) -> Result<Vec<SampleRecord>> {
    let p = path.as_ref().ok_or_else(|| Error::InvalidInput(format!("no {name} dataset given (--{name})")))?;
    load_dataset(p)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_settings(a.common.config.as_deref())?;
    a.flags.apply(&mut cfg)?;
    cfg.validate()?;
    let train_set = load_split(&cfg.train_path, "train")?;
    let test_set = load_split(&cfg.test_path, "test")?;
    let topo = SkeletonTopology::default();
    let out = train(&cfg, &train_set, &test_set, &topo)?;
    let dir = run_dir(a.common.out_dir.as_deref(), cfg.seed)?;
    write_run_config(&dir, "train", &cfg)?;
    out.final_model.save(&dir.join("final.ckpt.json"))?;
    out.best_model.save(&dir.join("best.ckpt.json"))?;
    write_metrics_csv(&out.log, &dir.join("metrics.csv"))?;
    write_json(&out.summary(&cfg), &dir.join("summary.json"))?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = LiftingNetwork::load(&a.checkpoint)?;
    if let Some(v) = a.variant {
        if v != model.variant {
            return Err(Error::Mismatch(format!(
                "checkpoint was trained with input variant {} but {v} was requested",
                model.variant
            )));
        }
    }
    let records = load_dataset(&a.data)?;
    if let Some(r) = records.iter().find(|r| r.joints_3d.len() != model.topology.joint_count()) {
        return Err(Error::Mismatch(format!(
            "dataset records have {} joints but the checkpoint expects {}",
            r.joints_3d.len(),
            model.topology.joint_count()
        )));
    }
    let report = evaluate(&model, &records)?;
    if let Some(d) = &a.out_dir {
        std::fs::create_dir_all(d)?;
        write_json(&report, &d.join("eval.json"))?;
    }
    print_json(&report)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut s: AblateSettings = load_settings(a.common.config.as_deref())?;
    a.flags.apply(&mut s.base)?;
    set(&mut s.variants, a.variants);
    set(&mut s.direction_loss, a.direction_loss);
    set(&mut s.seeds, a.seeds);
    s.base.validate()?;
    let train_set = load_split(&s.base.train_path, "train")?;
    let test_set = load_split(&s.base.test_path, "test")?;
    let topo = SkeletonTopology::default();
    let rows = run_ablation(&s.base, &s.variants, &s.direction_loss, &s.seeds, &train_set, &test_set, &topo)?;
    let summary = summarize_ablation(&rows);
    let dir = run_dir(a.common.out_dir.as_deref(), s.seeds[0])?;
    write_run_config(&dir, "ablate", &s)?;
    write_csv(&rows, &dir.join("ablation.csv"))?;
    write_csv(&summary, &dir.join("ablation_summary.csv"))?;
    write_json(&summary, &dir.join("ablation.json"))?;
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct DepthSample {
    index: usize,
    subject_id: String,
    action_id: String,
    candidates: usize,
    truncated: bool,
    branch_count_per_joint: Vec<u8>,
    /// MPJPE of the candidate closest to the ground truth.
    closest_candidate_mpjpe_mm: Option<f64>,
}

fn cmd_depth(a: DepthArgs) -> Result<()> {
    let records = load_dataset(&a.data)?;
    let topo = SkeletonTopology::default();
    let mut out = Vec::new();
    for (index, r) in records.iter().take(a.limit).enumerate() {
        let lengths = bone_lengths(&r.joints_3d, &topo)?;
        let root_depth = r.joints_3d.0[topo.root_index()][2];
        let set = chain_candidates(&r.joints_2d, &lengths, &r.camera, &topo, root_depth, a.cap)?;
        let gt = root_center(&r.joints_3d, &topo);
        let closest = set
            .poses
            .iter()
            .map(|p| mpjpe(&root_center(p, &topo), &gt))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .reduce(f64::min);
        out.push(DepthSample {
            index,
            subject_id: r.subject_id.clone(),
            action_id: r.action_id.clone(),
            candidates: set.poses.len(),
            truncated: set.truncated,
            branch_count_per_joint: set.branch_count_per_joint,
            closest_candidate_mpjpe_mm: closest,
        });
    }
    if let Some(d) = &a.out_dir {
        std::fs::create_dir_all(d)?;
        write_json(&out, &d.join("depth_report.json"))?;
    }
    print_json(&out)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let mut s: GradCheckSetup = load_settings(a.config.as_deref())?;
    set(&mut s.seed, a.seed);
    set(&mut s.batch_size, a.batch_size);
    set(&mut s.hidden_dim, a.hidden_dim);
    set(&mut s.variant, a.variant);
    set(&mut s.entries_per_tensor, a.entries_per_tensor);
    set(&mut s.epsilon, a.epsilon);
    set(&mut s.tolerance, a.tolerance);
    if s.batch_size < 2 {
        return Err(Error::InvalidInput("gradcheck batch size must be at least 2".into()));
    }
    let report = gradcheck_lifting(&s, &SkeletonTopology::default())?;
    if let Some(d) = &a.out_dir {
        std::fs::create_dir_all(d)?;
        write_json(&report, &d.join("gradcheck.json"))?;
        write_run_config(&absolute(d)?, "gradcheck", &s)?;
    }
    print_json(&report)?;
    Ok(report.passed)
}

fn cmd_import(a: ImportArgs) -> Result<()> {
    let records = import_h36m(&a.input)?;
    let dir = run_dir(a.out_dir.as_deref(), 0)?;
    save_with_stats(&records, &dir.join("dataset.jsonl"), &SkeletonTopology::default())?;
    write_run_config(&dir, "import-h36m", &absolute(&a.input)?)?;
    println!("{}", dir.display());
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let one_line = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} message={}", serde_json::to_string(&one_line).unwrap_or_default());
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            fail("usage", &first);
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::DepthAnalyze(a) => cmd_depth(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return fail("gradcheck-failed", "analytic gradients disagree with finite differences"),
            Err(e) => Err(e),
        },
        Command::ImportH36m(a) => cmd_import(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

