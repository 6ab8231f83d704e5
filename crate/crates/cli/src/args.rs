use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::report::Format;

#[derive(Debug, Parser)]
#[command(
    name = "fairlens",
    version,
    about = "Gender-bias and object-hallucination metrics for vision-language outputs"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// TOML file of defaults, keyed by flag name; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Root seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Render bias metrics multiplied by 100 in table output.
    #[arg(long, global = true)]
    pub paper_scale: bool,

    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Timestamp stored in the report. Falls back to SOURCE_DATE_EPOCH,
    /// otherwise left empty so reruns stay byte-identical.
    #[arg(long, global = true)]
    pub timestamp: Option<String>,

    /// Gender word list replacing the bundled one.
    #[arg(long, global = true, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,

    /// Also match plural forms (word+s, word+es) of gender words.
    #[arg(long, global = true)]
    pub plurals: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replace gender words with [GENDER] and summarize.
    Mask(MaskArgs),
    /// Gold gender label per image from its reference captions.
    Label(LabelArgs),
    /// Gender misclassification rate of generated captions.
    Error(ErrorArgs),
    /// Leakage of gender through caption context.
    Lic(LicArgs),
    /// Bias amplification from training captions to predictions.
    Biasamp(BiasAmpArgs),
    /// CHAIRi and CHAIRs object hallucination.
    Chair(ChairArgs),
    /// Share of hallucinations among top co-occurring objects.
    Hitratio(HitRatioArgs),
    /// Bias@K, MaxSkew@K, NDKL and Recall@K of ranked retrievals.
    Retrieval(RetrievalArgs),
    /// Pronoun-resolution accuracy and its gender gap.
    Resolution(ResolutionArgs),
    /// Counterfactual vision-language bias from probability dumps.
    Vlbias(VlBiasArgs),
    /// Error, gender mention, LIC, CHAIR and optionally BiasAmp in one pass.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Mask(_) => "mask",
            Command::Label(_) => "label",
            Command::Error(_) => "error",
            Command::Lic(_) => "lic",
            Command::Biasamp(_) => "biasamp",
            Command::Chair(_) => "chair",
            Command::Hitratio(_) => "hitratio",
            Command::Retrieval(_) => "retrieval",
            Command::Resolution(_) => "resolution",
            Command::Vlbias(_) => "vlbias",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GoldArgs {
    /// Gold labels as JSONL `{"image_id", "gender"}`; otherwise derived from --refs.
    #[arg(long, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ObjectArgs {
    /// Object annotations JSONL.
    #[arg(long, value_name = "PATH")]
    pub annotations: Option<PathBuf>,

    /// Synonym hierarchy JSON replacing the bundled MSCOCO one.
    #[arg(long, value_name = "PATH")]
    pub hierarchy: Option<PathBuf>,

    /// Accept a sub-category when only its super-category is annotated.
    #[arg(long)]
    pub relax_sub: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LicOptions {
    #[arg(long, default_value_t = fairlens_core::lic::DEFAULT_EVAL_FRACTION)]
    pub eval_fraction: f64,

    #[arg(long, default_value_t = fairlens_core::lic::DEFAULT_SMOOTHING)]
    pub smoothing: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WordListArgs {
    /// Words to measure, one per line.
    #[arg(long, value_name = "PATH", conflicts_with = "top_n")]
    pub words: Option<PathBuf>,

    /// Derive the word list from the N most frequent training tokens.
    #[arg(long, value_name = "N")]
    pub top_n: Option<usize>,

    /// Tokens dropped from a derived word list, one per line.
    #[arg(long, value_name = "PATH", requires = "top_n")]
    pub stoplist: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskArgs {
    #[arg(long, value_name = "PATH", required_unless_present = "refs")]
    pub pred: Option<PathBuf>,

    #[arg(long, value_name = "PATH")]
    pub refs: Option<PathBuf>,

    /// Write every masked caption as JSONL.
    #[arg(long, value_name = "PATH")]
    pub masked_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LabelArgs {
    #[arg(long, value_name = "PATH")]
    pub refs: PathBuf,

    /// Write the derived labels as catalog JSONL.
    #[arg(long, value_name = "PATH")]
    pub catalog_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ErrorArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,

    #[arg(long, value_name = "PATH", required_unless_present = "catalog")]
    pub refs: Option<PathBuf>,

    #[command(flatten)]
    #[serde(flatten)]
    pub gold: GoldArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LicArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub refs: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub gold: GoldArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub lic: LicOptions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BiasAmpArgs {
    /// Training captions JSONL.
    #[arg(long, value_name = "PATH")]
    pub train: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub words: WordListArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ChairArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,

    #[arg(long, value_name = "PATH", required_unless_present = "annotations")]
    pub refs: Option<PathBuf>,

    #[command(flatten)]
    #[serde(flatten)]
    pub objects: ObjectArgs,

    /// Write mentioned and hallucinated objects per image as JSONL.
    #[arg(long, value_name = "PATH")]
    pub per_image_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HitRatioArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,

    #[arg(long, value_name = "PATH", required_unless_present = "annotations")]
    pub refs: Option<PathBuf>,

    #[command(flatten)]
    #[serde(flatten)]
    pub objects: ObjectArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub gold: GoldArgs,

    /// Training captions the co-occurrence sets come from.
    #[arg(long, value_name = "PATH")]
    pub train: PathBuf,

    /// Probing objects (canonical names).
    #[arg(long, value_delimiter = ',')]
    pub anchor: Vec<String>,

    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5])]
    pub k: Vec<usize>,

    /// Count images without hallucinations as ratio 0 instead of skipping them.
    #[arg(long)]
    pub empty_as_zero: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrievalArgs {
    #[arg(long, value_name = "PATH")]
    pub rankings: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub catalog: PathBuf,

    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
    pub k: Vec<usize>,

    #[arg(long, default_value_t = fairlens_core::retrieval::DEFAULT_EPSILON)]
    pub epsilon: f64,

    /// `uniform`, `from-candidates`, or a JSON file `{"male": p, "female": q}`.
    #[arg(long, default_value = "uniform")]
    pub desired: String,

    /// Treat neutral images as a third category in Skew and NDKL.
    #[arg(long)]
    pub neutral_as_mass: bool,

    /// Write per-query metrics as JSONL.
    #[arg(long, value_name = "PATH")]
    pub per_query_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ResolutionArgs {
    #[arg(long, value_name = "PATH")]
    pub instances: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VlBiasArgs {
    /// Probability dump JSONL.
    #[arg(long, value_name = "PATH")]
    pub dump: PathBuf,

    /// Pairs whose gender probability moves less than this are skipped.
    #[arg(long, default_value_t = fairlens_core::vlbias::DEFAULT_DELTA)]
    pub delta: f64,

    /// Write per-target scores as JSONL.
    #[arg(long, value_name = "PATH")]
    pub per_target_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub refs: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub gold: GoldArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub objects: ObjectArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub lic: LicOptions,

    /// Training captions; enables BiasAmp.
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,

    #[command(flatten)]
    #[serde(flatten)]
    pub words: WordListArgs,
}
