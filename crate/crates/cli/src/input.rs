//! Loading datasets, re-deriving train/test parts, and addressing instances.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use proxplain::dataset::{
    holdout_indices, load_csv, load_idx_raw, BinaryDataset, BinaryVector, LabelColumn, RawDataset,
};
use proxplain::forest::Forest;
use proxplain::proximity::{build_store, ProximityStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Test,
}

impl Part {
    fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Test => "test",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// CSV file, or IDX image file with `--format idx`
    #[arg(long)]
    pub data: PathBuf,

    /// IDX label file (required with `--format idx`)
    #[arg(long)]
    pub labels: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    pub format: DataFormat,

    /// CSV label column: zero-based index, header name, or "last"
    #[arg(long, default_value = "last")]
    pub label_col: String,

    /// The CSV file has no header row
    #[arg(long)]
    pub no_header: bool,

    /// IDX pixels at or above this value become 1
    #[arg(long, default_value_t = 128)]
    pub pixel_threshold: u8,

    /// Keep only the first N rows
    #[arg(long)]
    pub limit: Option<usize>,

    /// Fraction of rows held out for testing; the rest form the training part
    #[arg(long)]
    pub holdout: Option<f64>,

    /// Seed for the holdout split (train also seeds the forest with it)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DataArgs {
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let mut paths = vec![self.data.clone()];
        paths.extend(self.labels.clone());
        paths
    }
}

pub struct Loaded {
    pub raw: RawDataset,
    /// Image dimensions for IDX data.
    pub grid: Option<(usize, usize)>,
}

pub fn load(args: &DataArgs) -> Result<Loaded> {
    let (mut raw, grid) = match args.format {
        DataFormat::Csv => {
            let column: LabelColumn = args.label_col.parse().expect("label column parse is infallible");
            (load_csv(&args.data, &column, !args.no_header)?, None)
        }
        DataFormat::Idx => {
            let Some(labels) = &args.labels else {
                bail!("--format idx needs --labels");
            };
            let (raw, grid) = load_idx_raw(&args.data, labels)?;
            (raw, Some(grid))
        }
    };
    if let Some(n) = args.limit {
        if n == 0 {
            bail!("--limit must be positive");
        }
        raw.truncate(n);
    }
    log::info!("loaded {} rows with {} columns", raw.len(), raw.feature_count());
    Ok(Loaded { raw, grid })
}

pub struct Parts {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n: usize, holdout: Option<f64>, seed: u64) -> Result<Parts> {
    Ok(match holdout {
        Some(fraction) => {
            let (train, test) = holdout_indices(n, fraction, seed)?;
            Parts { train, test }
        }
        None => Parts {
            train: (0..n).collect(),
            test: Vec::new(),
        },
    })
}

pub fn select(raw: &RawDataset, indices: &[usize]) -> Result<RawDataset> {
    Ok(RawDataset::new(
        indices.iter().map(|&i| raw.rows[i].clone()).collect(),
        indices.iter().map(|&i| raw.labels[i]).collect(),
        raw.feature_names.clone(),
        raw.class_names.clone(),
    )?)
}

/// A trained model together with its re-derived training part.
pub struct ModelContext {
    pub forest: Forest,
    pub store: ProximityStore,
    pub train: BinaryDataset,
    pub test: Option<BinaryDataset>,
}

pub fn open(model: &Path, args: &DataArgs) -> Result<ModelContext> {
    let forest = Forest::load(model)?;
    let loaded = load(args)?;
    let parts = split(loaded.raw.len(), args.holdout, args.seed)?;
    let spec = &forest.spec;
    let train = spec.apply_dataset(&select(&loaded.raw, &parts.train)?)?;
    let test = if parts.test.is_empty() {
        None
    } else {
        Some(spec.apply_dataset(&select(&loaded.raw, &parts.test)?)?)
    };
    let store = build_store(&forest, &train).with_context(|| {
        format!(
            "training part does not match {}; pass the --limit/--holdout/--seed used for training",
            model.display()
        )
    })?;
    Ok(ModelContext {
        forest,
        store,
        train,
        test,
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InstanceArgs {
    /// Row of the chosen part to explain
    #[arg(long, required_unless_present = "vector_file", conflicts_with = "vector_file")]
    pub index: Option<usize>,

    /// Part of the data `--index` refers to
    #[arg(long, value_enum, default_value_t = Part::Train)]
    pub part: Part,

    /// File holding one line of space-separated 0/1 values
    #[arg(long)]
    pub vector_file: Option<PathBuf>,
}

pub struct Instance {
    pub id: String,
    pub vector: BinaryVector,
    /// Known class label, when the instance comes from the data.
    pub label: Option<usize>,
    /// Position in the training part.
    pub train_index: Option<usize>,
}

pub fn instance(ctx: &ModelContext, args: &InstanceArgs) -> Result<Instance> {
    if let Some(path) = &args.vector_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let vector: BinaryVector = line.parse().with_context(|| format!("parsing {}", path.display()))?;
        let name = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        return Ok(Instance {
            id: format!("file:{name}"),
            vector,
            label: None,
            train_index: None,
        });
    }
    let index = args.index.expect("clap enforces --index or --vector-file");
    let data = part(ctx, args.part)?;
    if index >= data.len() {
        return Err(proxplain::Error::OutOfRange {
            what: "data part",
            index,
            len: data.len(),
        }
        .into());
    }
    Ok(Instance {
        id: instance_id(args.part, index),
        vector: data.vectors[index].clone(),
        label: Some(data.labels[index]),
        train_index: (args.part == Part::Train).then_some(index),
    })
}

pub fn part(ctx: &ModelContext, part: Part) -> Result<&BinaryDataset> {
    match part {
        Part::Train => Ok(&ctx.train),
        Part::Test => ctx.test.as_ref().context("--part test needs --holdout"),
    }
}

pub fn instance_id(part: Part, index: usize) -> String {
    format!("{}:{index}", part.as_str())
}
