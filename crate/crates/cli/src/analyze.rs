use std::path::PathBuf;

use clap::ValueEnum;
use swada_core::estimators::{
    estimate_ad, estimate_da, fit_centered_collapsible, fit_prevalence_adjusted, fit_vhas,
    fit_within_trial_with, SigmaStructure, Stage2,
};
use swada_core::io::{forest_payload, read_csv_file, results_csv, AnalysisReport, InputSummary};
use swada_core::model::{AnalysisResult, MetaDataset};
use swada_core::swada::{
    compute_weights, pool_swada_with_policy, restrict_to_two_arm, weights_min_iv_re,
    SingleSubgroupPolicy,
};
use swada_core::{Error, Model, Pooling, Result, WeightScheme};

use crate::{emit, pooling, ModelArg, OutputFormat, TauArg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Da,
    Ad,
    Vhas,
    WithinTrial,
    PrevAdjusted,
    Centered,
    Swada,
}

#[derive(clap::Args)]
pub struct Args {
    /// Study CSV: study_id,n_a,n_b,y_a,se_a,y_b,se_b.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "swada")]
    method: MethodArg,
    /// Weight scheme for `swada` and `centered` (equal, interaction_re,
    /// study_size, smaller_subgroup, min_iv, min_total_variance).
    #[arg(long, default_value = "interaction_re")]
    scheme: String,
    #[arg(long, value_enum, default_value = "re")]
    model: ModelArg,
    #[arg(long = "tau-estimator", value_enum, default_value = "reml")]
    tau_estimator: TauArg,
    /// Drop studies that report only one subgroup before any analysis.
    #[arg(long)]
    exclude_single_subgroup: bool,
    #[arg(long, value_enum, default_value = "json")]
    output: OutputFormat,
    /// Run the full comparison table instead of a single method.
    #[arg(long)]
    all_methods: bool,
    /// Within-trial stage 2 with independent observations.
    #[arg(long)]
    naive_stage2: bool,
    /// SWADA: weight each subgroup mean over the studies reporting it.
    #[arg(long)]
    subgroup_only_weights: bool,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn scheme(name: &str) -> Result<WeightScheme> {
    WeightScheme::parse(name)
        .filter(|s| WeightScheme::COMMON.contains(s))
        .ok_or_else(|| Error::Config(format!("unknown weight scheme `{name}`")))
}

fn swada(
    data: &MetaDataset<f64>,
    s: WeightScheme,
    pool: Pooling,
    policy: SingleSubgroupPolicy,
) -> Result<AnalysisResult<f64>> {
    pool_swada_with_policy(data, &compute_weights(data, s, None)?, pool, policy)
}

/// Common weights from the smallest of the three random-effects precisions.
fn swada_min_iv_re(
    data: &MetaDataset<f64>,
    pool: Pooling,
    policy: SingleSubgroupPolicy,
) -> Result<AnalysisResult<f64>> {
    let mut r = pool_swada_with_policy(data, &weights_min_iv_re(data, pool)?, pool, policy)?;
    r.variant = "min_iv_re".into();
    Ok(r)
}

fn centered(
    data: &MetaDataset<f64>,
    s: WeightScheme,
    pool: Pooling,
) -> Result<AnalysisResult<f64>> {
    let w = restrict_to_two_arm(data, &compute_weights(data, s, None)?)?;
    fit_centered_collapsible(data, &w, pool)
}

fn single(
    args: &Args,
    data: &MetaDataset<f64>,
    pool: Pooling,
    policy: SingleSubgroupPolicy,
) -> Result<AnalysisResult<f64>> {
    let stage2 = if args.naive_stage2 {
        Stage2::Naive
    } else {
        Stage2::Propagated
    };
    match args.method {
        MethodArg::Da => estimate_da(data, pool),
        MethodArg::Ad => estimate_ad(data, pool),
        MethodArg::Vhas => fit_vhas(data, SigmaStructure::Full)?.to_result(),
        MethodArg::WithinTrial => fit_within_trial_with(data, pool, stage2),
        MethodArg::PrevAdjusted => Ok(fit_prevalence_adjusted(data)?.to_result()),
        MethodArg::Centered => centered(data, scheme(&args.scheme)?, pool),
        MethodArg::Swada => swada(data, scheme(&args.scheme)?, pool, policy),
    }
}

type Job<'a> = Box<dyn Fn() -> Result<AnalysisResult<f64>> + 'a>;

/// The comparison table. Methods that fail are reported and skipped.
fn all_methods(
    data: &MetaDataset<f64>,
    pool: Pooling,
    policy: SingleSubgroupPolicy,
) -> Vec<AnalysisResult<f64>> {
    let mut jobs: Vec<(String, Job)> = vec![
        ("da ce".into(), Box::new(|| estimate_da(data, Pooling::CE))),
        ("da re".into(), Box::new(move || estimate_da(data, pool))),
        ("ad ce".into(), Box::new(|| estimate_ad(data, Pooling::CE))),
        ("ad re".into(), Box::new(move || estimate_ad(data, pool))),
        (
            "vhas".into(),
            Box::new(|| fit_vhas(data, SigmaStructure::Full)?.to_result()),
        ),
        (
            "within_trial".into(),
            Box::new(move || fit_within_trial_with(data, pool, Stage2::Propagated)),
        ),
        (
            "prev_adjusted".into(),
            Box::new(|| Ok(fit_prevalence_adjusted(data)?.to_result())),
        ),
        (
            "centered".into(),
            Box::new(move || centered(data, WeightScheme::InteractionRe, pool)),
        ),
    ];
    for s in WeightScheme::COMMON {
        jobs.push((
            format!("swada {}", s.name()),
            Box::new(move || swada(data, s, pool, policy)),
        ));
    }
    jobs.push((
        "swada min_iv_re".into(),
        Box::new(move || swada_min_iv_re(data, pool, policy)),
    ));
    let mut out = Vec::new();
    for (name, job) in jobs {
        match job() {
            Ok(r) => out.push(r),
            Err(e) => eprintln!("warning: {name} skipped: {e}"),
        }
    }
    out
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let parsed = read_csv_file(&args.input)?;
    let data = if args.exclude_single_subgroup {
        parsed.data.two_arm_only()
    } else {
        parsed.data
    };
    let pool = pooling(args.model, args.tau_estimator);
    let policy = if args.subgroup_only_weights {
        SingleSubgroupPolicy::SubgroupOnlyWeights
    } else {
        SingleSubgroupPolicy::ExcludeAndRenormalize
    };
    let results = if args.all_methods {
        all_methods(&data, Pooling::new(Model::RandomEffects, pool.tau), policy)
    } else {
        vec![single(&args, &data, pool, policy)?]
    };
    let text = match args.output {
        OutputFormat::Csv => results_csv(&results),
        OutputFormat::Json => {
            let input = InputSummary {
                studies: data.k(),
                two_arm_studies: data.two_arm_count(),
                label_a: data.label_a.clone(),
                label_b: data.label_b.clone(),
                excluded_single_subgroup: args.exclude_single_subgroup,
            };
            let forest = forest_payload(&data, &results);
            serde_json::to_string_pretty(&AnalysisReport::new(input, results, forest))?
        }
    };
    emit(args.out.as_ref(), &text)
}
