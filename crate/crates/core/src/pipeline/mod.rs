//! End-to-end workflow: semantic query function, private semantic
//! distribution, selection, pretraining, calibrated DP fine-tuning,
//! synthesis and evaluation.
//!
//! Only [`stage_query`] and [`stage_finetune`] receive the sensitive
//! training records.

mod artifacts;
mod config;
mod report;

pub use artifacts::{description_from_text, description_to_text, write_run, RunFiles};
pub use config::PipelineConfig;
pub use report::Report;

use std::collections::BTreeMap;
use std::fmt;

use crate::accountant::{calibrate_sigma1, default_orders, gaussian_query_curve, rdp_to_dp, Calibration, PrivacyBudget};
use crate::data::{load_dataset, make_toy_world, read_csv, EmbeddingTable, LabeledDataset, Split};
use crate::dpcore::PrivacyMode;
use crate::error::{invalid, Error, Result};
use crate::generative::{
    balanced_labels, finetune_dp, pretrain, synthesize, FineTuneConfig, GenerativeModel, ModelSpec, PretrainConfig,
};
use crate::ledger::BudgetLedger;
use crate::metrics::{classification_accuracy, frechet_between, sds, WeightedSemantics};
use crate::nn::{ClassifierConfig, DenseNet};
use crate::noise::{streams, NoiseSource};
use crate::semantics::{
    build_distribution, category_partition, conditional_distributions, release_conditional, release_distribution,
    select_conditional, select_description, select_pretraining_data, train_sqf, SemanticDescription,
    SemanticDistribution, SemanticVocabulary, Selection, SensitiveData,
};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Calibrate,
    TrainSqf,
    QuerySd,
    Select,
    Pretrain,
    Finetune,
    Synth,
    Eval,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Calibrate => "calibrate",
            Stage::TrainSqf => "train-sqf",
            Stage::QuerySd => "query-sd",
            Stage::Select => "select",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Synth => "synth",
            Stage::Eval => "eval",
            Stage::Output => "output",
        }
    }

    /// Process exit code when this stage fails (2 is left to usage errors).
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 3,
            Stage::Data => 4,
            Stage::Calibrate => 5,
            Stage::TrainSqf => 6,
            Stage::QuerySd => 7,
            Stage::Select => 8,
            Stage::Pretrain => 9,
            Stage::Finetune => 10,
            Stage::Synth => 11,
            Stage::Eval => 12,
            Stage::Output => 13,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

pub struct Inputs {
    pub public: LabeledDataset,
    pub sensitive: SensitiveData,
    /// Held-out sensitive records used only for evaluation.
    pub sensitive_test: Option<LabeledDataset>,
    pub vocab: SemanticVocabulary,
}

fn load_any(path: &std::path::Path) -> Result<LabeledDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => load_dataset(path),
    }
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    match (&cfg.public, &cfg.sensitive_train) {
        (Some(p), Some(s)) => {
            let public = load_any(p)?;
            let sensitive = load_any(s)?;
            let sensitive_test = cfg.sensitive_test.as_deref().map(load_any).transpose()?;
            let vocab = match &cfg.vocabulary {
                Some(v) => SemanticVocabulary::new(v.clone())?,
                None => SemanticVocabulary::numbered(public.num_semantics())?,
            };
            if vocab.len() != public.num_semantics() {
                return Err(invalid(format!(
                    "vocabulary has {} names, public data {} semantics",
                    vocab.len(),
                    public.num_semantics()
                )));
            }
            if sensitive.dim() != public.dim() {
                return Err(Error::DimensionMismatch {
                    expected: public.dim(),
                    actual: sensitive.dim(),
                });
            }
            Ok(Inputs {
                public,
                sensitive: SensitiveData::new(sensitive),
                sensitive_test,
                vocab,
            })
        }
        _ => {
            let world = make_toy_world(cfg.seed, &cfg.toy)?;
            Ok(Inputs {
                public: world.public,
                sensitive: SensitiveData::new(world.sensitive_train),
                sensitive_test: Some(world.sensitive_test),
                vocab: SemanticVocabulary::new(cfg.toy.names.clone())?,
            })
        }
    }
}

/// Noise multiplier charged for the semantic query; a zero-noise testing
/// release is free and modelled as σ2 = ∞.
fn query_sigma(cfg: &PipelineConfig) -> f64 {
    if cfg.mode == PrivacyMode::Testing && cfg.sigma2 == 0.0 {
        f64::INFINITY
    } else {
        cfg.sigma2
    }
}

pub fn budget(cfg: &PipelineConfig) -> Result<PrivacyBudget> {
    PrivacyBudget::new(cfg.epsilon, cfg.delta)
}

pub fn new_ledger(cfg: &PipelineConfig) -> Result<BudgetLedger> {
    BudgetLedger::with_budget(&default_orders(), &budget(cfg)?)
}

/// Privacy plan fixed before any training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub sample_rate: f64,
    pub sigma1: Option<f64>,
    pub calibration: Option<Calibration>,
}

pub fn plan(cfg: &PipelineConfig, sensitive_len: usize) -> Result<Plan> {
    if sensitive_len == 0 {
        return Err(Error::Empty("sensitive dataset"));
    }
    let sample_rate = cfg.batch_size / sensitive_len as f64;
    if sample_rate > 1.0 {
        return Err(invalid(format!(
            "batch_size {} exceeds the {sensitive_len} sensitive records",
            cfg.batch_size
        )));
    }
    let orders = default_orders();
    let sigma2 = query_sigma(cfg);
    let query_eps = rdp_to_dp(&gaussian_query_curve(&orders, sigma2)?, cfg.delta)?.epsilon;
    if query_eps >= cfg.epsilon {
        return Err(Error::InfeasibleBudget {
            query_epsilon: query_eps,
            target: cfg.epsilon,
        });
    }
    if cfg.steps == 0 {
        return Ok(Plan {
            sample_rate,
            sigma1: None,
            calibration: None,
        });
    }
    match cfg.sigma1 {
        Some(s) => Ok(Plan {
            sample_rate,
            sigma1: Some(s),
            calibration: None,
        }),
        None => {
            let c = calibrate_sigma1(&budget(cfg)?, cfg.steps as u64, sample_rate, sigma2, &orders)?;
            Ok(Plan {
                sample_rate,
                sigma1: Some(c.sigma1),
                calibration: Some(c),
            })
        }
    }
}

fn noise(cfg: &PipelineConfig, stream: u64) -> NoiseSource {
    NoiseSource::new(cfg.seed, stream)
}

pub fn stage_train_sqf(cfg: &PipelineConfig, public: &LabeledDataset, vocab: &SemanticVocabulary) -> Result<DenseNet> {
    let sqf_cfg = ClassifierConfig {
        hidden: (cfg.sqf_hidden > 0).then_some(cfg.sqf_hidden),
        epochs: cfg.sqf_epochs,
        lr: cfg.sqf_lr,
    };
    let mut init = noise(cfg, streams::SQF_INIT);
    Ok(train_sqf(public, vocab, &sqf_cfg, &mut init)?.net)
}

/// The released semantic distribution(s).
#[derive(Debug, Clone)]
pub struct Query {
    /// Noisy SD over the whole sensitive set (the per-category vectors
    /// summed, in the per-category variant).
    pub noisy: SemanticDistribution,
    pub per_category: Option<BTreeMap<usize, SemanticDistribution>>,
}

pub fn stage_query(
    cfg: &PipelineConfig,
    q: &DenseNet,
    sensitive: &SensitiveData,
    ledger: &mut BudgetLedger,
) -> Result<Query> {
    let mut rng = noise(cfg, streams::HISTOGRAM);
    let k1 = cfg.k1();
    let use_categories = cfg.per_category && sensitive.num_classes() > 0;
    if use_categories {
        let partition = category_partition(sensitive)?;
        let mut raws = conditional_distributions(q, sensitive, &partition, k1)?;
        let noisy = release_conditional(&mut raws, cfg.sigma2, cfg.mode, &mut rng, ledger)?;
        let ns = q.output_dim();
        let mut sum = vec![0.0; ns];
        for sd in noisy.values() {
            for (s, c) in sum.iter_mut().zip(sd.counts()) {
                *s += c;
            }
        }
        Ok(Query {
            noisy: SemanticDistribution::noisy(sum, k1)?,
            per_category: Some(noisy),
        })
    } else {
        let mut raw = build_distribution(q, sensitive, k1)?;
        let noisy = release_distribution(&mut raw, cfg.sigma2, cfg.mode, &mut rng, ledger)?;
        Ok(Query {
            noisy,
            per_category: None,
        })
    }
}

pub fn stage_select(
    cfg: &PipelineConfig,
    query: &Query,
    public: &LabeledDataset,
) -> Result<(SemanticDescription, Selection)> {
    let desc = match &query.per_category {
        Some(map) => select_conditional(map, cfg.k2(), cfg.mode)?,
        None => select_description(&query.noisy, cfg.k2(), cfg.mode)?,
    };
    let selection = select_pretraining_data(public, &desc)?;
    Ok((desc, selection))
}

pub fn model_spec(cfg: &PipelineConfig, data_dim: usize, num_classes: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(cfg.model, data_dim, if cfg.conditional { num_classes } else { 0 });
    spec.hidden = cfg.hidden.clone();
    spec.activation = cfg.activation;
    spec.diffusion_steps = cfg.diffusion_steps;
    spec.beta_start = cfg.beta_start;
    spec.beta_end = cfg.beta_end;
    spec.latent_dim = cfg.latent_dim;
    spec
}

pub fn stage_pretrain(cfg: &PipelineConfig, selected: &LabeledDataset, spec: &ModelSpec) -> Result<GenerativeModel> {
    let model = GenerativeModel::init(spec, &mut noise(cfg, streams::MODEL_INIT))?;
    let pcfg = PretrainConfig {
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.pretrain_batch,
        lr: cfg.pretrain_lr,
        update_ratio: cfg.update_ratio,
    };
    // per-category labels only make sense for a model conditioned on the
    // same categories
    let data = if model.num_classes() == 0 && selected.labels().is_some() {
        selected.clone().with_labels(None, 0)?
    } else {
        selected.clone()
    };
    Ok(pretrain(&model, &data, &pcfg, &mut noise(cfg, streams::PRETRAIN))?.model)
}

pub fn stage_finetune(
    cfg: &PipelineConfig,
    model: &GenerativeModel,
    sensitive: &SensitiveData,
    plan: &Plan,
    ledger: &mut BudgetLedger,
) -> Result<GenerativeModel> {
    let Some(sigma1) = plan.sigma1 else {
        return Ok(model.clone());
    };
    let mut ft = FineTuneConfig {
        clip_norm: cfg.clip_norm,
        batch_size: cfg.batch_size,
        eta: cfg.eta,
        sigma1,
        max_steps: cfg.steps,
        sample_rate: plan.sample_rate,
        update_ratio: cfg.update_ratio,
        mode: cfg.mode,
    };
    ft.validate()?;
    ft.max_steps = cfg.steps;
    let mut rng = noise(cfg, streams::FINETUNE_NOISE);
    Ok(finetune_dp(model, sensitive, &ft, ledger, &mut rng)?.model)
}

pub fn stage_synth(cfg: &PipelineConfig, model: &GenerativeModel, default_count: usize) -> Result<LabeledDataset> {
    let n = cfg.synth_count.unwrap_or(default_count);
    let labels = (model.num_classes() > 0).then(|| balanced_labels(n, model.num_classes()));
    synthesize(model, n, labels.as_deref(), cfg.sampler_steps, &mut noise(cfg, streams::SYNTH))
}

/// Semantic weights of a dataset: the frequencies of its semantic labels.
pub fn semantic_frequencies(data: &LabeledDataset) -> Option<Vec<f64>> {
    let labels = data.semantic_labels()?;
    let mut f = vec![0.0; data.num_semantics()];
    for &l in labels {
        f[l] += 1.0;
    }
    Some(f)
}

/// SDS between the pretraining subset and the released sensitive SD (noisy
/// counts clamped at 0). `None` when a side has no mass or the vocabulary is
/// not covered by the embedding table.
pub fn selection_sds(selected: &LabeledDataset, noisy: &SemanticDistribution, vocab: &SemanticVocabulary) -> Option<f64> {
    let table = EmbeddingTable::bundled();
    let names: Vec<&str> = vocab.names().iter().map(String::as_str).collect();
    if names.iter().any(|n| table.get(n).is_none()) {
        return None;
    }
    let a = semantic_frequencies(selected)?;
    let b: Vec<f64> = noisy.counts().iter().map(|c| c.max(0.0)).collect();
    if a.len() != names.len() || b.len() != names.len() {
        return None;
    }
    sds(&WeightedSemantics::new(&names, &a), &WeightedSemantics::new(&names, &b), &table).ok()
}

/// Fréchet distance and (when labels line up) downstream accuracy.
pub fn stage_eval(
    cfg: &PipelineConfig,
    synthetic: &LabeledDataset,
    test: Option<&LabeledDataset>,
) -> Result<(Option<f64>, Option<f64>)> {
    let Some(test) = test else {
        return Ok((None, None));
    };
    let frechet = if synthetic.len() >= 2 && test.len() >= 2 {
        Some(frechet_between(synthetic.features(), test.features())?)
    } else {
        None
    };
    let accuracy = match (synthetic.labels(), test.labels()) {
        (Some(_), Some(_)) if synthetic.num_classes() == test.num_classes() && !synthetic.is_empty() => Some(
            classification_accuracy(synthetic, test, cfg.eval_classifier, &mut noise(cfg, streams::EVAL))?,
        ),
        _ => None,
    };
    Ok((frechet, accuracy))
}

/// Semantics that admitted public records: the per-category union when
/// present, else the flat selection.
pub fn used_semantics(desc: &SemanticDescription) -> Vec<usize> {
    match &desc.per_category {
        Some(map) => {
            let mut ids: Vec<usize> = map.values().flatten().copied().collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
        None => desc.selected.clone(),
    }
}

/// Assembles the run report from the ledger and the stage outputs.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    cfg: &PipelineConfig,
    plan: &Plan,
    ledger: &BudgetLedger,
    vocab: &SemanticVocabulary,
    description: &SemanticDescription,
    selected: &LabeledDataset,
    public_len: usize,
    query: &Query,
    synthetic: &LabeledDataset,
    test: Option<&LabeledDataset>,
) -> Result<Report> {
    let (frechet, accuracy) = stage_eval(cfg, synthetic, test)?;
    let mut report = Report::from_ledger(ledger)?;
    report.sigma1 = plan.sigma1;
    report.sigma2 = cfg.sigma2;
    report.steps = cfg.steps;
    report.sample_rate = Some(plan.sample_rate);
    report.k1 = cfg.k1();
    report.k2 = cfg.k2();
    report.selected = used_semantics(description)
        .into_iter()
        .map(|i| vocab.name(i).unwrap_or("?").to_string())
        .collect();
    report.selected_records = selected.len();
    report.public_records = public_len;
    report.selection_ratio = if public_len == 0 {
        0.0
    } else {
        selected.len() as f64 / public_len as f64
    };
    report.synthetic_records = synthetic.len();
    report.sds = selection_sds(selected, &query.noisy, vocab);
    report.frechet = frechet;
    report.accuracy = accuracy;
    Ok(report)
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub vocab: SemanticVocabulary,
    pub plan: Plan,
    pub sqf: DenseNet,
    pub query: Query,
    pub description: SemanticDescription,
    pub selected: LabeledDataset,
    pub pretrained: GenerativeModel,
    pub finetuned: GenerativeModel,
    pub synthetic: LabeledDataset,
    pub ledger: BudgetLedger,
    pub report: Report,
}

/// What `--dry-run` reports: the privacy plan and the selection, with no
/// generative training.
#[derive(Debug, Clone)]
pub struct DryRun {
    pub plan: Plan,
    pub description: SemanticDescription,
    pub selection_ratio: f64,
    pub text: String,
}

type StageResult<T> = std::result::Result<T, PipelineError>;

fn front_half(
    cfg: &PipelineConfig,
) -> StageResult<(Inputs, Plan, DenseNet, Query, SemanticDescription, Selection, BudgetLedger)> {
    cfg.validate().at(Stage::Config)?;
    let inputs = load_inputs(cfg).at(Stage::Data)?;
    let plan = plan(cfg, inputs.sensitive.len()).at(Stage::Calibrate)?;
    let mut ledger = new_ledger(cfg).at(Stage::Calibrate)?;
    let sqf = stage_train_sqf(cfg, &inputs.public, &inputs.vocab).at(Stage::TrainSqf)?;
    let query = stage_query(cfg, &sqf, &inputs.sensitive, &mut ledger).at(Stage::QuerySd)?;
    let (description, selection) = stage_select(cfg, &query, &inputs.public).at(Stage::Select)?;
    Ok((inputs, plan, sqf, query, description, selection, ledger))
}

/// Plan, query and selection only. The release draws from the same noise
/// stream as a full run with this seed, so it reproduces that run's release
/// rather than making a new one.
pub fn dry_run(cfg: &PipelineConfig) -> StageResult<DryRun> {
    let (inputs, plan, _, _, description, selection, ledger) = front_half(cfg)?;
    let ratio = selection.ratio(inputs.public.len());
    let names: Vec<&str> = used_semantics(&description)
        .into_iter()
        .map(|i| inputs.vocab.name(i).unwrap_or("?"))
        .collect();
    let mut text = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(text, "plan:");
    let _ = writeln!(
        text,
        "  stages: calibrate -> train-sqf -> query-sd -> select -> pretrain -> finetune -> synth -> eval"
    );
    let _ = writeln!(text, "  budget: epsilon={} delta={:e}", cfg.epsilon, cfg.delta);
    let _ = writeln!(text, "  semantic query: k1={} k2={} sigma2={}", cfg.k1(), cfg.k2(), cfg.sigma2);
    let _ = writeln!(
        text,
        "  fine-tuning: steps={} batch={} q={:.6} sigma1={}",
        cfg.steps,
        cfg.batch_size,
        plan.sample_rate,
        plan.sigma1.map_or("n/a".into(), |s| format!("{s:.6}"))
    );
    if let Some(c) = plan.calibration {
        let _ = writeln!(text, "  calibrated epsilon={:.6} at order {}", c.epsilon, c.order);
    }
    let _ = writeln!(text, "  selected semantics: {}", names.join(", "));
    let _ = writeln!(
        text,
        "  selection ratio: {:.4} ({} of {} public records)",
        ratio,
        selection.data.len(),
        inputs.public.len()
    );
    let _ = writeln!(text, "  ledger charges so far: {}", ledger.len());
    Ok(DryRun {
        plan,
        description,
        selection_ratio: ratio,
        text,
    })
}

pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<PipelineOutput> {
    let (inputs, plan, sqf, query, description, selection, mut ledger) = front_half(cfg)?;
    let num_classes = inputs.sensitive.num_classes();
    let spec = model_spec(cfg, inputs.public.dim(), num_classes);
    let pretrained = stage_pretrain(cfg, &selection.data, &spec).at(Stage::Pretrain)?;
    let finetuned = stage_finetune(cfg, &pretrained, &inputs.sensitive, &plan, &mut ledger).at(Stage::Finetune)?;
    let synthetic = stage_synth(cfg, &finetuned, inputs.sensitive.len()).at(Stage::Synth)?;

    let report = build_report(
        cfg,
        &plan,
        &ledger,
        &inputs.vocab,
        &description,
        &selection.data,
        inputs.public.len(),
        &query,
        &synthetic,
        inputs.sensitive_test.as_ref(),
    )
    .at(Stage::Eval)?;

    Ok(PipelineOutput {
        config: cfg.clone(),
        vocab: inputs.vocab,
        plan,
        sqf,
        query,
        description,
        selected: selection.data,
        pretrained,
        finetuned,
        synthetic: synthetic.with_split(Split::Train),
        ledger,
        report,
    })
}
