use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use proxplain::audit::{
    chi_square_2x2, collect_pairs, kendall_tau, pearson_r, sign_table, spearman_rho, ChiSquare, FilterMode,
    DEFAULT_THRESHOLD,
};
use proxplain::contribution::{explain, misclassification_diff, ContributionReport, ExplainOptions};
use proxplain::dataset::{fit_binarizer, BinarizationSpec, BinarizerConfig};
use proxplain::forest::{train, FeatureSubset, Forest, TrainConfig};
use proxplain::proximity::{build_store, outlier_scores, Membership, OutlierRule, ProximityStore};
use proxplain::report::{
    export_distance_matrix_csv, export_heatmap_pgm, export_report_csv, export_report_json, fixed6, GridShape,
    HeatmapScale,
};

use crate::input::{self, DataArgs, Instance, InstanceArgs, ModelContext, Part};
use crate::manifest::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MembershipArg {
    Predicted,
    True,
}

impl From<MembershipArg> for Membership {
    fn from(m: MembershipArg) -> Self {
        match m {
            MembershipArg::Predicted => Membership::Predicted,
            MembershipArg::True => Membership::True,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    Symmetric,
    Minmax,
}

impl From<ScaleArg> for HeatmapScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Symmetric => HeatmapScale::Symmetric,
            ScaleArg::Minmax => HeatmapScale::MinMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterArg {
    Both,
    Either,
}

impl From<FilterArg> for FilterMode {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Both => FilterMode::Both,
            FilterArg::Either => FilterMode::Either,
        }
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn parse_grid(grid: &Option<String>) -> Result<Option<GridShape>> {
    Ok(match grid {
        Some(s) => Some(s.parse::<GridShape>()?),
        None => None,
    })
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 100)]
    pub trees: usize,

    #[arg(long)]
    pub max_depth: Option<usize>,

    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,

    /// Features considered per split (default: floor(sqrt F))
    #[arg(long)]
    pub features_per_split: Option<usize>,

    /// Most threshold cuts learned for one continuous CSV column
    #[arg(long, default_value_t = 4)]
    pub max_splits_per_feature: usize,

    /// Average holdout accuracy over R seeded splits (seeds S, S+1, ...)
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TrainRun {
    seed: u64,
    train_size: usize,
    test_size: usize,
    train_accuracy: f64,
    holdout_accuracy: Option<f64>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let rec = Recorder::start("train");
    ensure!(args.repeat >= 1, "--repeat must be at least 1");
    ensure!(
        args.repeat == 1 || args.data.holdout.is_some(),
        "--repeat needs --holdout"
    );
    create_out(&args.out)?;
    let loaded = input::load(&args.data)?;
    let binarizer = BinarizerConfig {
        max_splits_per_feature: args.max_splits_per_feature,
        ..BinarizerConfig::default()
    };

    let mut runs = Vec::with_capacity(args.repeat);
    let mut first: Option<Forest> = None;
    for r in 0..args.repeat {
        let seed = args.data.seed.wrapping_add(r as u64);
        let parts = input::split(loaded.raw.len(), args.data.holdout, seed)?;
        let train_raw = input::select(&loaded.raw, &parts.train)?;
        let spec = match loaded.grid {
            Some((rows, cols)) => BinarizationSpec::pixels(rows, cols, args.data.pixel_threshold),
            None => fit_binarizer(&train_raw, &binarizer)?,
        };
        let train_data = spec.apply_dataset(&train_raw)?;
        let config = TrainConfig {
            tree_count: args.trees,
            feature_subset: args
                .features_per_split
                .map_or(FeatureSubset::Sqrt, FeatureSubset::Count),
            max_depth: args.max_depth,
            min_leaf_size: args.min_leaf,
            seed,
        };
        let forest = train(&train_data, &config)?;
        let train_accuracy = forest.accuracy(&train_data)?;
        let holdout_accuracy = if parts.test.is_empty() {
            None
        } else {
            let test = spec.apply_dataset(&input::select(&loaded.raw, &parts.test)?)?;
            Some(forest.accuracy(&test)?)
        };
        log::info!("run {r}: train {train_accuracy:.4}, holdout {holdout_accuracy:?}");
        runs.push(TrainRun {
            seed,
            train_size: parts.train.len(),
            test_size: parts.test.len(),
            train_accuracy,
            holdout_accuracy,
        });
        if first.is_none() {
            first = Some(forest);
        }
    }

    let forest = first.expect("at least one run");
    forest.save(&args.out.join("model.json"))?;
    let holdout: Vec<f64> = runs.iter().filter_map(|r| r.holdout_accuracy).collect();
    let mean_holdout = (!holdout.is_empty()).then(|| holdout.iter().sum::<f64>() / holdout.len() as f64);

    println!(
        "model {}: {} trees, {} features, {} training instances",
        forest.model_id(),
        forest.tree_count(),
        forest.feature_count(),
        forest.train_size
    );
    println!("train accuracy {:.4}", runs[0].train_accuracy);
    if let Some(mean) = mean_holdout {
        if args.repeat > 1 {
            println!("holdout accuracy {mean:.4} (mean of {} splits)", args.repeat);
        } else {
            println!("holdout accuracy {mean:.4}");
        }
    }
    rec.finish(
        &args.out,
        args,
        args.data.seed,
        &args.data.input_paths(),
        &["model.json"],
        json!({
            "model_id": forest.model_id(),
            "train_accuracy": runs[0].train_accuracy,
            "holdout_accuracy": runs[0].holdout_accuracy,
            "mean_holdout_accuracy": mean_holdout,
            "runs": runs,
        }),
    )
}

// -------------------------------------------------------------- explain

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExplainFlags {
    /// Divide contributions by the training-set size
    #[arg(long)]
    pub normalize: bool,

    /// Whether group membership follows the forest's predictions or the true labels
    #[arg(long, value_enum, default_value_t = MembershipArg::Predicted)]
    pub membership: MembershipArg,

    /// Leave a training instance out of its own group sums
    #[arg(long)]
    pub exclude_self: bool,
}

impl ExplainFlags {
    fn options(&self, instance: Option<&Instance>) -> ExplainOptions {
        ExplainOptions {
            normalize: self.normalize,
            membership: self.membership.into(),
            exclude_index: if self.exclude_self {
                instance.and_then(|i| i.train_index)
            } else {
                None
            },
            ..ExplainOptions::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub instance: InstanceArgs,

    /// Class to explain against (default: the predicted class)
    #[arg(long)]
    pub target_class: Option<usize>,

    #[command(flatten)]
    pub flags: ExplainFlags,

    /// Also render the contributions as an RxC grayscale heatmap, e.g. 28x28
    #[arg(long)]
    pub grid: Option<String>,

    #[arg(long, value_enum, default_value_t = ScaleArg::Symmetric)]
    pub scale: ScaleArg,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn explain_instance(
    ctx: &ModelContext,
    inst: &Instance,
    target: Option<usize>,
    flags: &ExplainFlags,
) -> Result<ContributionReport> {
    if let Some(c) = target {
        ctx.forest.check_class(c)?;
    }
    let report = explain(
        &ctx.forest,
        &ctx.store,
        &inst.vector,
        target,
        &flags.options(Some(inst)),
    )?;
    Ok(report.with_ids(ctx.forest.model_id(), inst.id.clone()))
}

/// Writes report.json, report.csv and, with a grid, heatmap.pgm into `dir`.
fn write_report(
    report: &ContributionReport,
    dir: &Path,
    grid: Option<GridShape>,
    scale: HeatmapScale,
) -> Result<Vec<&'static str>> {
    create_out(dir)?;
    export_report_json(report, &dir.join("report.json"))?;
    export_report_csv(report, &dir.join("report.csv"))?;
    let mut written = vec!["report.json", "report.csv"];
    if let Some(shape) = grid {
        export_heatmap_pgm(&report.contributions(), shape, scale, &dir.join("heatmap.pgm"))?;
        written.push("heatmap.pgm");
    }
    Ok(written)
}

fn top_features(report: &ContributionReport, n: usize) -> String {
    let mut order: Vec<_> = report.features.iter().collect();
    order.sort_by(|a, b| b.contribution.abs().total_cmp(&a.contribution.abs()));
    let mut s = String::new();
    for f in order.into_iter().take(n).filter(|f| f.contribution != 0.0) {
        let _ = writeln!(s, "  {:>6} {:<16} {}", f.feature_index, f.name, fixed6(f.contribution));
    }
    s
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let rec = Recorder::start("explain");
    let grid = parse_grid(&args.grid)?;
    create_out(&args.out)?;
    let ctx = input::open(&args.model, &args.data)?;
    let inst = input::instance(&ctx, &args.instance)?;
    let report = explain_instance(&ctx, &inst, args.target_class, &args.flags)?;
    let written = write_report(&report, &args.out, grid, args.scale.into())?;

    println!(
        "{}: predicted class {} (votes {:?}), target class {}",
        inst.id, report.predicted_class, report.votes, report.target_class
    );
    print!("{}", top_features(&report, 10));

    let mut inputs = vec![args.model.clone()];
    inputs.extend(args.data.input_paths());
    inputs.extend(args.instance.vector_file.clone());
    rec.finish(
        &args.out,
        args,
        args.data.seed,
        &inputs,
        &written,
        json!({
            "instance_id": inst.id,
            "predicted_class": report.predicted_class,
            "target_class": report.target_class,
        }),
    )
}

// ----------------------------------------------------------------- diff

#[derive(Args, Debug, Clone, Serialize)]
pub struct DiffArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub instance: InstanceArgs,

    /// Wrongly decided class (default: the predicted class)
    #[arg(long)]
    pub wrong_class: Option<usize>,

    /// Correct class (default: the instance's label)
    #[arg(long)]
    pub right_class: Option<usize>,

    #[command(flatten)]
    pub flags: ExplainFlags,

    #[arg(long)]
    pub grid: Option<String>,

    /// Scale for the two contribution maps; the squared-difference map is min-max scaled
    #[arg(long, value_enum, default_value_t = ScaleArg::Symmetric)]
    pub scale: ScaleArg,

    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_diff(args: &DiffArgs) -> Result<()> {
    let rec = Recorder::start("diff");
    let grid = parse_grid(&args.grid)?;
    create_out(&args.out)?;
    let ctx = input::open(&args.model, &args.data)?;
    let inst = input::instance(&ctx, &args.instance)?;
    let predicted = ctx.forest.predict(&inst.vector)?.class;
    let wrong = args.wrong_class.unwrap_or(predicted);
    let right = match (args.right_class, inst.label) {
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => bail!("--right-class is required for a vector file"),
    };
    if args.wrong_class.is_none() && args.right_class.is_none() && wrong == right {
        bail!(
            "{} is classified correctly as {right}; pass --wrong-class and --right-class",
            inst.id
        );
    }

    let wrong_report = explain_instance(&ctx, &inst, Some(wrong), &args.flags)?;
    let right_report = explain_instance(&ctx, &inst, Some(right), &args.flags)?;
    let diff = misclassification_diff(&wrong_report, &right_report)?;

    write_report(&wrong_report, &args.out.join("wrong"), grid, args.scale.into())?;
    write_report(&right_report, &args.out.join("right"), grid, args.scale.into())?;
    let mut csv = String::from("feature_index,name,squared_diff\n");
    for (f, d) in wrong_report.features.iter().zip(&diff) {
        let _ = writeln!(csv, "{},{},{}", f.feature_index, f.name, fixed6(*d));
    }
    let csv_path = args.out.join("diff.csv");
    std::fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let mut written = vec!["wrong/", "right/", "diff.csv"];
    if let Some(shape) = grid {
        export_heatmap_pgm(&diff, shape, HeatmapScale::MinMax, &args.out.join("diff.pgm"))?;
        written.push("diff.pgm");
    }

    let peak = diff
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k);
    println!(
        "{}: wrong class {wrong}, right class {right}, largest difference at feature {peak:?}",
        inst.id
    );

    let mut inputs = vec![args.model.clone()];
    inputs.extend(args.data.input_paths());
    inputs.extend(args.instance.vector_file.clone());
    rec.finish(
        &args.out,
        args,
        args.data.seed,
        &inputs,
        &written,
        json!({ "instance_id": inst.id, "wrong_class": wrong, "right_class": right, "peak_feature": peak }),
    )
}

// ---------------------------------------------------------------- audit

#[derive(Args, Debug, Clone, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub model_a: PathBuf,

    #[arg(long)]
    pub model_b: PathBuf,

    /// Training data shared by both models
    #[command(flatten)]
    pub data: DataArgs,

    /// Instances to explain
    #[arg(long, value_enum, default_value_t = Part::Train)]
    pub part: Part,

    /// Explain only the first N instances of the part
    #[arg(long)]
    pub max_instances: Option<usize>,

    /// Class whose decision model A's contributions are measured toward
    #[arg(long)]
    pub high_class_a: usize,

    #[arg(long)]
    pub high_class_b: usize,

    /// Contributions with |c| at or below this are ignored
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,

    #[arg(long, value_enum, default_value_t = FilterArg::Both)]
    pub filter_mode: FilterArg,

    #[command(flatten)]
    pub flags: ExplainFlags,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
pub struct AuditDocument {
    pub model_a: String,
    pub model_b: String,
    pub high_class_a: usize,
    pub high_class_b: usize,
    pub threshold: f64,
    pub filter_mode: FilterMode,
    pub instance_count: usize,
    pub pair_count: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    /// Rows: sign in model A (negative, positive); columns: sign in model B.
    pub sign_table: [[u64; 2]; 2],
    pub chi_square: Option<ChiSquare>,
    /// Statistics that could not be computed, with reasons.
    pub undefined: Vec<String>,
}

fn reports_for(
    forest: &Forest,
    store: &ProximityStore,
    data: &proxplain::dataset::BinaryDataset,
    part: Part,
    count: usize,
    high_class: usize,
    flags: &ExplainFlags,
) -> Result<Vec<ContributionReport>> {
    (0..count)
        .map(|i| {
            let exclude = flags.exclude_self && part == Part::Train;
            let opts = ExplainOptions {
                exclude_index: exclude.then_some(i),
                ..flags.options(None)
            };
            Ok(explain(forest, store, &data.vectors[i], Some(high_class), &opts)?
                .with_ids(forest.model_id(), input::instance_id(part, i)))
        })
        .collect()
}

pub fn cmd_audit(args: &AuditArgs) -> Result<()> {
    let rec = Recorder::start("audit");
    create_out(&args.out)?;
    let ctx = input::open(&args.model_a, &args.data)?;
    let forest_b = Forest::load(&args.model_b)?;
    ensure!(
        forest_b.spec == ctx.forest.spec,
        "the two models use different binarizations; an audit needs a shared feature space"
    );
    let store_b = build_store(&forest_b, &ctx.train).context("model B was trained on a different training part")?;
    ctx.forest.check_class(args.high_class_a)?;
    forest_b.check_class(args.high_class_b)?;

    let data = input::part(&ctx, args.part)?;
    let count = args.max_instances.map_or(data.len(), |m| m.min(data.len()));
    let reports_a = reports_for(
        &ctx.forest,
        &ctx.store,
        data,
        args.part,
        count,
        args.high_class_a,
        &args.flags,
    )?;
    let reports_b = reports_for(
        &forest_b,
        &store_b,
        data,
        args.part,
        count,
        args.high_class_b,
        &args.flags,
    )?;
    let sample = collect_pairs(
        &reports_a,
        &reports_b,
        args.high_class_a,
        args.high_class_b,
        args.threshold,
        args.filter_mode.into(),
    )?;

    let mut undefined = Vec::new();
    let mut keep = |name: &str, r: proxplain::Result<f64>| match r {
        Ok(x) => Some(x),
        Err(e) => {
            undefined.push(format!("{name}: {e}"));
            None
        }
    };
    let pearson = keep("pearson", pearson_r(&sample));
    let spearman = keep("spearman", spearman_rho(&sample));
    let kendall = keep("kendall", kendall_tau(&sample));
    let table = sign_table(&sample);
    let chi_square = match chi_square_2x2(&table) {
        Ok(c) => Some(c),
        Err(e) => {
            undefined.push(format!("chi_square: {e}"));
            None
        }
    };
    let doc = AuditDocument {
        model_a: ctx.forest.model_id(),
        model_b: forest_b.model_id(),
        high_class_a: args.high_class_a,
        high_class_b: args.high_class_b,
        threshold: args.threshold,
        filter_mode: args.filter_mode.into(),
        instance_count: count,
        pair_count: sample.len(),
        pearson,
        spearman,
        kendall,
        sign_table: table.counts,
        chi_square,
        undefined,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    let path = args.out.join("audit.json");
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;

    let show = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} pairs from {count} instances: pearson {}, spearman {}, kendall {}",
        doc.pair_count,
        show(doc.pearson),
        show(doc.spearman),
        show(doc.kendall)
    );
    if let Some(c) = &doc.chi_square {
        println!(
            "sign table {:?}, chi-square {:.2} (df {})",
            doc.sign_table, c.statistic, c.df
        );
    }

    let mut inputs = vec![args.model_a.clone(), args.model_b.clone()];
    inputs.extend(args.data.input_paths());
    rec.finish(
        &args.out,
        args,
        args.data.seed,
        &inputs,
        &["audit.json"],
        json!({ "pair_count": doc.pair_count }),
    )
}

// ------------------------------------------------- outliers, export-prox

#[derive(Args, Debug, Clone, Serialize)]
pub struct OutlierArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Flag scores above class mean + K standard deviations
    #[arg(long, default_value_t = 2.0)]
    pub sd_multiplier: f64,

    #[arg(long, value_enum, default_value_t = MembershipArg::Predicted)]
    pub membership: MembershipArg,

    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_outliers(args: &OutlierArgs) -> Result<()> {
    let rec = Recorder::start("outliers");
    create_out(&args.out)?;
    let ctx = input::open(&args.model, &args.data)?;
    let rule = OutlierRule {
        sd_multiplier: args.sd_multiplier,
        membership: args.membership.into(),
    };
    let scores = outlier_scores(&ctx.store, &rule)?;
    let mut csv = String::from("index,class,score,flagged\n");
    for s in &scores {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            s.index,
            s.class,
            fixed6(s.score),
            u8::from(s.flagged)
        );
    }
    let path = args.out.join("outliers.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    let flagged: Vec<usize> = scores.iter().filter(|s| s.flagged).map(|s| s.index).collect();
    println!("{} of {} training instances flagged", flagged.len(), scores.len());

    let mut inputs = vec![args.model.clone()];
    inputs.extend(args.data.input_paths());
    rec.finish(
        &args.out,
        args,
        args.data.seed,
        &inputs,
        &["outliers.csv"],
        json!({ "flagged": flagged }),
    )
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExportProxArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export_prox(args: &ExportProxArgs) -> Result<()> {
    let rec = Recorder::start("export-prox");
    create_out(&args.out)?;
    let ctx = input::open(&args.model, &args.data)?;
    export_distance_matrix_csv(&ctx.store.distance_matrix(), &args.out.join("proximity.csv"))?;
    println!("wrote {0}x{0} proximity distance matrix", ctx.store.len());
    let mut inputs = vec![args.model.clone()];
    inputs.extend(args.data.input_paths());
    rec.finish(
        &args.out,
        args,
        args.data.seed,
        &inputs,
        &["proximity.csv"],
        json!({ "size": ctx.store.len() }),
    )
}
